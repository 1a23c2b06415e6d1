//! One-dimensional power functions `f(x) = |x|^p` with exactly known KL
//! constants, and simple iterations on them.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{Bound, KLParams};
use crate::error::{Error, Result};
use crate::solvers::{IterTrace, TraceMeta, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyProblem {
    p: f64,
}

impl ToyProblem {
    pub fn new(p: f64) -> Result<Self> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "p = {p} must be finite and >= 1"
            )));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn theta_analytic(&self) -> f64 {
        1.0 - 1.0 / self.p
    }

    pub fn fstar(&self) -> f64 {
        0.0
    }

    pub fn f(&self, x: f64) -> f64 {
        if self.p == 2.0 {
            x * x
        } else {
            x.abs().powf(self.p)
        }
    }

    /// `|f'(x)|`; at `x = 0` this is 0, including for `p = 1`.
    pub fn dist(&self, x: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else if self.p == 1.0 {
            1.0
        } else if self.p == 2.0 {
            2.0 * x.abs()
        } else {
            self.p * x.abs().powf(self.p - 1.0)
        }
    }

    fn grad(&self, x: f64) -> f64 {
        x.signum() * self.dist(x)
    }

    /// `argmin_y |y|^p + (y − x)²/(2t)`.
    pub fn prox(&self, x: f64, t: f64) -> f64 {
        let a = x.abs();
        let y = if self.p == 1.0 {
            (a - t).max(0.0)
        } else if self.p == 2.0 {
            a / (1.0 + 2.0 * t)
        } else {
            // y + t·p·y^{p−1} = a has a unique root in [0, a].
            let (mut lo, mut hi) = (0.0f64, a);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if mid + t * self.p * mid.powf(self.p - 1.0) > a {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            lo
        };
        x.signum() * y
    }
}

/// Analytic constants: `θ = 1 − 1/p`, `c = 1/p`, `f* = 0`.
pub fn analytic_kl_params(problem: &ToyProblem) -> KLParams {
    KLParams {
        theta: problem.theta_analytic(),
        c: 1.0 / problem.p,
        tau: Bound::Unbounded,
        fstar: Some(0.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToyIterator {
    GradientDescent {
        t: f64,
    },
    ProximalPoint {
        t: f64,
    },
    /// `x ← (1+δ)x` on odd steps, two gradient steps on even steps.
    TwoPhase {
        t: f64,
        delta: f64,
    },
}

impl ToyIterator {
    pub fn name(&self) -> &'static str {
        match self {
            ToyIterator::GradientDescent { .. } => "gradient_descent",
            ToyIterator::ProximalPoint { .. } => "proximal_point",
            ToyIterator::TwoPhase { .. } => "two_phase",
        }
    }

    fn step(&self) -> f64 {
        match *self {
            ToyIterator::GradientDescent { t }
            | ToyIterator::ProximalPoint { t }
            | ToyIterator::TwoPhase { t, .. } => t,
        }
    }

    /// Rejects combinations whose iterates would not contract.
    pub fn check_stability(&self, problem: &ToyProblem, x0: f64) -> Result<()> {
        let t = self.step();
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Stability(format!("step t = {t} must be > 0")));
        }
        if !x0.is_finite() {
            return Err(Error::Stability(format!("x0 = {x0} is not finite")));
        }
        let p = problem.p;
        let gd_ok = |x0: f64| -> Result<()> {
            if p < 2.0 {
                return Err(Error::Stability(format!(
                    "p = {p} < 2 has no Lipschitz gradient near 0; use proximal_point"
                )));
            }
            let curvature = if p == 2.0 {
                2.0
            } else {
                p * x0.abs().powf(p - 2.0)
            };
            if t * curvature >= 1.0 {
                return Err(Error::Stability(format!(
                    "t·p·|x0|^(p−2) = {} must be < 1",
                    t * curvature
                )));
            }
            Ok(())
        };
        match *self {
            ToyIterator::GradientDescent { .. } => gd_ok(x0),
            ToyIterator::ProximalPoint { .. } => Ok(()),
            ToyIterator::TwoPhase { delta, .. } => {
                if p != 2.0 {
                    return Err(Error::Stability(
                        "two_phase is defined for p = 2 only".into(),
                    ));
                }
                if !(delta >= 0.0 && delta.is_finite()) {
                    return Err(Error::Stability(format!("bump δ = {delta} must be >= 0")));
                }
                gd_ok(x0)?;
                let factor = (1.0 + delta) * (1.0 - 2.0 * t).powi(2);
                if factor >= 1.0 {
                    return Err(Error::Stability(format!(
                        "(1+δ)(1−2t)² = {factor} must be < 1"
                    )));
                }
                Ok(())
            }
        }
    }
}

/// Iterates from `x0` for `steps` steps, recording `f(x_k)` and `|f'(x_k)|`.
pub fn run_toy(
    problem: &ToyProblem,
    iterator: &ToyIterator,
    x0: f64,
    steps: usize,
) -> Result<IterTrace> {
    iterator.check_stability(problem, x0)?;
    let gd = |x: f64, t: f64| x - t * problem.grad(x);
    let mut x = x0;
    let mut records = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        if k > 0 {
            x = match *iterator {
                ToyIterator::GradientDescent { t } => gd(x, t),
                ToyIterator::ProximalPoint { t } => problem.prox(x, t),
                ToyIterator::TwoPhase { delta, .. } if k % 2 == 1 => x * (1.0 + delta),
                ToyIterator::TwoPhase { t, .. } => gd(gd(x, t), t),
            };
        }
        records.push(TraceRecord {
            k,
            f: problem.f(x),
            dist: problem.dist(x),
            block_diffs: Default::default(),
            wall_nanos: 0,
        });
    }
    Ok(IterTrace {
        meta: TraceMeta {
            source: "toy".into(),
            p: Some(problem.p),
            iterator: Some(iterator.name().into()),
            theta_analytic: Some(problem.theta_analytic()),
            fstar: Some(problem.fstar()),
            ..TraceMeta::default()
        },
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gd_halves_x() {
        let toy = ToyProblem::new(2.0).unwrap();
        let tr = run_toy(&toy, &ToyIterator::GradientDescent { t: 0.25 }, 1.0, 20).unwrap();
        for (k, r) in tr.records.iter().enumerate() {
            assert_eq!(r.f, 0.25f64.powi(k as i32));
        }
    }

    #[test]
    fn ell1_prox_terminates_in_four_steps() {
        let toy = ToyProblem::new(1.0).unwrap();
        let tr = run_toy(&toy, &ToyIterator::ProximalPoint { t: 0.3 }, 1.0, 10).unwrap();
        let f = tr.f_values();
        assert!(f[3] > 0.0);
        assert!(f[4..].iter().all(|&v| v == 0.0));
        assert!(tr.records[4..].iter().all(|r| r.dist == 0.0));
    }

    #[test]
    fn zero_start_stays_zero() {
        let toy = ToyProblem::new(4.0).unwrap();
        let tr = run_toy(&toy, &ToyIterator::GradientDescent { t: 0.1 }, 0.0, 5).unwrap();
        assert!(tr.records.iter().all(|r| r.f == 0.0 && r.dist == 0.0));
    }

    #[test]
    fn analytic_params() {
        for (p, theta, c) in [(2.0, 0.5, 0.5), (1.0, 0.0, 1.0), (4.0, 0.75, 0.25)] {
            let kl = analytic_kl_params(&ToyProblem::new(p).unwrap());
            assert_eq!((kl.theta, kl.c, kl.fstar), (theta, c, Some(0.0)));
        }
    }

    #[test]
    fn unstable_configurations_are_rejected() {
        let quad = ToyProblem::new(2.0).unwrap();
        let gd = ToyIterator::GradientDescent { t: 0.5 };
        assert!(matches!(
            run_toy(&quad, &gd, 1.0, 3),
            Err(Error::Stability(_))
        ));
        let lin = ToyProblem::new(1.0).unwrap();
        let gd = ToyIterator::GradientDescent { t: 0.1 };
        assert!(matches!(
            run_toy(&lin, &gd, 1.0, 3),
            Err(Error::Stability(_))
        ));
        let tp = ToyIterator::TwoPhase {
            t: 0.05,
            delta: 0.5,
        };
        assert!(matches!(
            run_toy(&quad, &tp, 1.0, 3),
            Err(Error::Stability(_))
        ));
        assert!(ToyProblem::new(0.5).is_err());
    }

    #[test]
    fn prox_solves_optimality_condition() {
        let toy = ToyProblem::new(3.0).unwrap();
        for &x in &[2.0, -0.7, 0.01] {
            let y = toy.prox(x, 0.2);
            let resid = y + 0.2 * 3.0 * y.abs().powi(2) * y.signum() - x;
            assert!(resid.abs() < 1e-12, "x = {x}, residual {resid}");
        }
    }
}
