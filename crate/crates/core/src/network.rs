//! Activations, losses and regularizers, plus the network and dataset
//! descriptions shared by every splitting form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Tanh,
    Sigmoid,
    Relu,
}

impl ActivationKind {
    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            ActivationKind::Identity => z,
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::Sigmoid => sigmoid(z),
            ActivationKind::Relu => z.max(0.0),
        }
    }

    /// Derivative; relu uses the convention σ'(0) = 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            ActivationKind::Identity => 1.0,
            ActivationKind::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            ActivationKind::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, ActivationKind::Relu)
    }

    pub fn apply(self, z: &Matrix) -> Matrix {
        if self == ActivationKind::Identity {
            return z.clone();
        }
        z.map(|x| self.value(x))
    }

    pub fn apply_derivative(self, z: &Matrix) -> Matrix {
        z.map(|x| self.derivative(x))
    }

    /// Closed interval of pre-activations `v` with `value(v)` in `[lo, hi]`.
    /// Returns `None` when the interval is empty.
    pub fn preimage(self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        if self == ActivationKind::Relu {
            if hi < 0.0 || lo > hi {
                return None;
            }
            return Some((if lo <= 0.0 { f64::NEG_INFINITY } else { lo }, hi));
        }
        let (range_lo, range_hi) = match self {
            ActivationKind::Identity => (f64::NEG_INFINITY, f64::INFINITY),
            ActivationKind::Tanh => (-1.0, 1.0),
            ActivationKind::Sigmoid => (0.0, 1.0),
            _ => (0.0, f64::INFINITY),
        };
        if hi <= range_lo || lo >= range_hi || lo > hi {
            return None;
        }
        let inv = |y: f64| match self {
            ActivationKind::Identity => y,
            ActivationKind::Tanh => y.atanh(),
            ActivationKind::Sigmoid => (y / (1.0 - y)).ln(),
            ActivationKind::Relu => y,
        };
        let a = if lo <= range_lo {
            f64::NEG_INFINITY
        } else {
            inv(lo)
        };
        let b = if hi >= range_hi {
            f64::INFINITY
        } else {
            inv(hi)
        };
        Some((a, b))
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    HalfSquared,
    Logistic,
}

impl LossKind {
    /// Summed loss over all entries (no averaging; callers apply 1/n where
    /// the objective calls for it).
    pub fn eval(self, v: &Matrix, y: &Matrix) -> Result<f64> {
        check_same_shape("loss", v, y)?;
        match self {
            LossKind::HalfSquared => Ok(0.5 * (v - y).frob_sq()),
            LossKind::Logistic => {
                check_labels(y)?;
                Ok(v.data()
                    .iter()
                    .zip(y.data())
                    .map(|(&vi, &yi)| softplus(-yi * vi))
                    .sum())
            }
        }
    }

    pub fn grad(self, v: &Matrix, y: &Matrix) -> Result<Matrix> {
        check_same_shape("loss", v, y)?;
        match self {
            LossKind::HalfSquared => Ok(v - y),
            LossKind::Logistic => {
                check_labels(y)?;
                Ok(v.zip_map(y, |vi, yi| -yi * sigmoid(-yi * vi)))
            }
        }
    }
}

fn check_same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn check_labels(y: &Matrix) -> Result<()> {
    match y.data().iter().find(|&&l| l != 1.0 && l != -1.0) {
        Some(&value) => Err(Error::InvalidLabel { value }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerKind {
    #[default]
    None,
    SquaredFrobenius {
        lambda: f64,
    },
    Ell1 {
        lambda: f64,
    },
}

impl RegularizerKind {
    pub fn lambda(self) -> f64 {
        match self {
            RegularizerKind::None => 0.0,
            RegularizerKind::SquaredFrobenius { lambda } | RegularizerKind::Ell1 { lambda } => {
                lambda
            }
        }
    }

    pub fn is_smooth(self) -> bool {
        !matches!(self, RegularizerKind::Ell1 { .. })
    }

    /// Coefficient of the quadratic part: `value = ½·q·‖w‖²` for smooth kinds.
    pub fn quadratic_coeff(self) -> f64 {
        match self {
            RegularizerKind::SquaredFrobenius { lambda } => lambda,
            _ => 0.0,
        }
    }

    pub fn eval(self, w: &Matrix) -> f64 {
        match self {
            RegularizerKind::None => 0.0,
            RegularizerKind::SquaredFrobenius { lambda } => 0.5 * lambda * w.frob_sq(),
            RegularizerKind::Ell1 { lambda } => lambda * w.l1_norm(),
        }
    }

    /// Gradient of the smooth part (zero for ell1 and none).
    pub fn smooth_grad(self, w: &Matrix) -> Option<Matrix> {
        match self {
            RegularizerKind::SquaredFrobenius { lambda } => Some(w.scale(lambda)),
            _ => None,
        }
    }

    /// `argmin_p t·r(p) + ½‖p − w‖²`.
    pub fn prox(self, w: &Matrix, t: f64) -> Matrix {
        match self {
            RegularizerKind::None => w.clone(),
            RegularizerKind::SquaredFrobenius { lambda } => w.scale(1.0 / (1.0 + lambda * t)),
            RegularizerKind::Ell1 { lambda } => w.map(|x| soft_threshold(x, lambda * t)),
        }
    }

    /// `min_{s ∈ ∂r(w)} ‖g_smooth + s‖`, where `g_smooth` excludes `r`.
    pub fn min_norm_dist(self, w: &Matrix, g_smooth: &Matrix) -> f64 {
        assert_eq!(w.shape(), g_smooth.shape());
        match self {
            RegularizerKind::None => g_smooth.frob_norm(),
            RegularizerKind::SquaredFrobenius { lambda } => {
                let mut g = g_smooth.clone();
                g.axpy(lambda, w);
                g.frob_norm()
            }
            RegularizerKind::Ell1 { lambda } => w
                .data()
                .iter()
                .zip(g_smooth.data())
                .map(|(&wi, &gi)| {
                    let e = ell1_entry_dist(wi, gi, lambda);
                    e * e
                })
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// Distance from zero to `g + λ·∂|w|` for a scalar entry.
pub(crate) fn ell1_entry_dist(w: f64, g: f64, lambda: f64) -> f64 {
    if w == 0.0 {
        (g.abs() - lambda).max(0.0)
    } else {
        (g + lambda * w.signum()).abs()
    }
}

#[inline]
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Layer structure: `dims = [d_0, …, d_N]` with one activation and one
/// weight/state regularizer per layer `1..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub dims: Vec<usize>,
    pub activations: Vec<ActivationKind>,
    pub loss: LossKind,
    pub weight_reg: Vec<RegularizerKind>,
    pub state_reg: Vec<RegularizerKind>,
}

impl NetworkSpec {
    /// `hidden` activation on layers `1..N`, `output` on layer `N`, no
    /// regularizers.
    pub fn new(
        dims: Vec<usize>,
        hidden: ActivationKind,
        output: ActivationKind,
        loss: LossKind,
    ) -> Result<Self> {
        let n = dims.len().saturating_sub(1);
        let mut activations = vec![hidden; n];
        if let Some(last) = activations.last_mut() {
            *last = output;
        }
        let spec = Self {
            dims,
            activations,
            loss,
            weight_reg: vec![RegularizerKind::None; n],
            state_reg: vec![RegularizerKind::None; n],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_weight_reg(mut self, reg: RegularizerKind) -> Self {
        self.weight_reg = vec![reg; self.depth()];
        self
    }

    pub fn with_state_reg(mut self, reg: RegularizerKind) -> Self {
        self.state_reg = vec![reg; self.depth()];
        self
    }

    pub fn depth(&self) -> usize {
        self.dims.len().saturating_sub(1)
    }

    /// Width of layer `i` (`0..=N`).
    pub fn dim(&self, i: usize) -> usize {
        self.dims[i]
    }

    /// Activation of layer `i` (`1..=N`).
    pub fn activation(&self, i: usize) -> ActivationKind {
        self.activations[i - 1]
    }

    pub fn weight_reg(&self, i: usize) -> RegularizerKind {
        self.weight_reg[i - 1]
    }

    pub fn state_reg(&self, i: usize) -> RegularizerKind {
        self.state_reg[i - 1]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.depth();
        if n == 0 {
            return Err(Error::config(
                "dims",
                "need at least two entries (d_0 and d_N)",
            ));
        }
        if self.dims.contains(&0) {
            return Err(Error::config("dims", "every width must be positive"));
        }
        if self.activations.len() != n {
            return Err(Error::config(
                "activation",
                format!("expected {n} activations"),
            ));
        }
        for (field, regs) in [
            ("weight_reg", &self.weight_reg),
            ("state_reg", &self.state_reg),
        ] {
            if regs.len() != n {
                return Err(Error::config(field, format!("expected {n} entries")));
            }
            if regs
                .iter()
                .any(|r| !(r.lambda() >= 0.0) || !r.lambda().is_finite())
            {
                return Err(Error::config(field, "lambda must be finite and >= 0"));
            }
        }
        Ok(())
    }
}

/// Inputs `V_0` (`d_0 × n`) and labels `Y` (`d_N × n`); samples are columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub inputs: Matrix,
    pub labels: Matrix,
}

impl DataSet {
    pub fn new(inputs: Matrix, labels: Matrix) -> Result<Self> {
        if inputs.cols() != labels.cols() {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                left: inputs.shape(),
                right: labels.shape(),
            });
        }
        Ok(Self { inputs, labels })
    }

    pub fn n(&self) -> usize {
        self.inputs.cols()
    }

    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        if self.inputs.rows() != spec.dim(0) || self.labels.rows() != spec.dim(spec.depth()) {
            return Err(Error::config(
                "dims",
                format!(
                    "data has {} features and {} labels, network expects {} and {}",
                    self.inputs.rows(),
                    self.labels.rows(),
                    spec.dim(0),
                    spec.dim(spec.depth())
                ),
            ));
        }
        Ok(())
    }

    pub fn permute_samples(&self, perm: &[usize]) -> DataSet {
        DataSet {
            inputs: self.inputs.permute_cols(perm),
            labels: self.labels.permute_cols(perm),
        }
    }
}
