#![allow(dead_code)]

use amkl::synthetic::{generate_synthetic, SyntheticTask};
use amkl::{
    gaussian_fill, ActivationKind, DataSet, Hyperparams, LossKind, Matrix, NetworkSpec, ParamState,
    Problem, RandomSource, RegularizerKind, SplitForm,
};

pub fn spec(dims: &[usize]) -> NetworkSpec {
    NetworkSpec::new(
        dims.to_vec(),
        ActivationKind::Tanh,
        ActivationKind::Identity,
        LossKind::HalfSquared,
    )
    .unwrap()
}

pub fn data(spec: &NetworkSpec, n: usize, noise: f64, rng: &mut RandomSource) -> DataSet {
    generate_synthetic(&SyntheticTask::new(spec.clone(), noise, n).unwrap(), rng).unwrap()
}

/// Random state off the forward-pass manifold; box-relaxed `u` stays
/// strictly inside its box by `epsilon / 2`.
pub fn random_state(
    form: SplitForm,
    spec: &NetworkSpec,
    data: &DataSet,
    hyper: &Hyperparams,
    rng: &mut RandomSource,
) -> ParamState {
    let weights = (1..=spec.depth())
        .map(|i| gaussian_fill(rng, spec.dim(i), spec.dim(i - 1), 0.7))
        .collect();
    let mut s = ParamState::from_forward(form, spec, data, weights).unwrap();
    let jitter = |m: &mut Matrix, rng: &mut RandomSource| {
        let noise = gaussian_fill(rng, m.rows(), m.cols(), 0.3);
        m.axpy(1.0, &noise);
    };
    for m in
        s.v.iter_mut()
            .chain(s.lambda.iter_mut())
            .chain(s.vbar.iter_mut())
    {
        jitter(m, rng);
    }
    if form == SplitForm::Mdlam {
        for (i, u) in s.u.iter_mut().enumerate() {
            let act = spec.activation(i + 1);
            let centre = act.apply(&s.v[i]);
            for r in 0..u.rows() {
                for c in 0..u.cols() {
                    let shift = (rng.uniform() - 0.5) * hyper.epsilon;
                    u.set(r, c, centre.get(r, c) + shift);
                }
            }
        }
    } else {
        for m in s.u.iter_mut() {
            jitter(m, rng);
        }
    }
    s
}

/// Central differences of `eval` in every entry of every block. Returns the
/// worst relative error `‖g_fd − g‖ / ‖g‖` over blocks.
pub fn worst_gradient_error(problem: &Problem, state: &ParamState, h: f64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for id in problem.blocks() {
        let g = problem.grad(state, id).unwrap();
        let mut fd = Matrix::zeros(g.rows(), g.cols());
        let mut s = state.clone();
        for r in 0..g.rows() {
            for c in 0..g.cols() {
                let x = state.get(id).unwrap().get(r, c);
                s.get_mut(id).unwrap().set(r, c, x + h);
                let up = problem.eval(&s).unwrap();
                s.get_mut(id).unwrap().set(r, c, x - h);
                let down = problem.eval(&s).unwrap();
                s.get_mut(id).unwrap().set(r, c, x);
                fd.set(r, c, (up - down) / (2.0 * h));
            }
        }
        let err = (&fd - &g).frob_sq().sqrt() / g.frob_sq().sqrt().max(1e-12);
        if err > worst.0 {
            worst = (err, id.to_string());
        }
    }
    worst
}

/// `2-4-1`, `n = 8` instance with a small weight penalty.
pub fn gradient_instance(seed: u64) -> (NetworkSpec, DataSet, Hyperparams) {
    let spec = spec(&[2, 4, 1]).with_weight_reg(RegularizerKind::SquaredFrobenius { lambda: 0.01 });
    let mut rng = RandomSource::new(seed);
    let data = data(&spec, 8, 0.1, &mut rng);
    let hyper = Hyperparams {
        gamma: 1.5,
        lambda: 0.2,
        beta: vec![0.8, 1.3],
        xi: vec![0.5],
        epsilon: 0.1,
    };
    (spec, data, hyper)
}
