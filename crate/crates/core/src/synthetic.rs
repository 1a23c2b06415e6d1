//! Teacher-student synthetic regression and classification tasks.

use crate::error::{Error, Result};
use crate::network::{DataSet, LossKind, NetworkSpec};
use crate::numerics::{gaussian_fill, Matrix, RandomSource};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub teacher: NetworkSpec,
    pub noise: f64,
    pub n: usize,
}

impl SyntheticTask {
    pub fn new(teacher: NetworkSpec, noise: f64, n: usize) -> Result<Self> {
        let task = Self { teacher, noise, n };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise", "must be finite and >= 0"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be positive"));
        }
        Ok(())
    }
}

/// Plain forward pass `σ_N(W_N ⋯ σ_1(W_1 X))`.
pub fn forward(spec: &NetworkSpec, weights: &[Matrix], inputs: &Matrix) -> Matrix {
    let mut v = inputs.clone();
    for (i, w) in weights.iter().enumerate() {
        v = spec.activation(i + 1).apply(&w.dot(&v));
    }
    v
}

/// Draws teacher weights (`N(0, 1/d_{i−1})`), inputs (`N(0, 1)`) and noisy
/// labels, in that order. Logistic tasks take the sign of the noisy output.
pub fn generate_synthetic_with_teacher(
    task: &SyntheticTask,
    rng: &mut RandomSource,
) -> Result<(DataSet, Vec<Matrix>)> {
    task.validate()?;
    let spec = &task.teacher;
    let weights: Vec<Matrix> = (1..=spec.depth())
        .map(|i| {
            let fan_in = spec.dim(i - 1);
            gaussian_fill(rng, spec.dim(i), fan_in, 1.0 / (fan_in as f64).sqrt())
        })
        .collect();
    let inputs = gaussian_fill(rng, spec.dim(0), task.n, 1.0);
    let mut labels = forward(spec, &weights, &inputs);
    if task.noise > 0.0 {
        let noise = gaussian_fill(rng, labels.rows(), labels.cols(), task.noise);
        labels.axpy(1.0, &noise);
    }
    if spec.loss == LossKind::Logistic {
        labels = labels.map(|y| if y >= 0.0 { 1.0 } else { -1.0 });
    }
    Ok((DataSet::new(inputs, labels)?, weights))
}

pub fn generate_synthetic(task: &SyntheticTask, rng: &mut RandomSource) -> Result<DataSet> {
    generate_synthetic_with_teacher(task, rng).map(|(data, _)| data)
}
