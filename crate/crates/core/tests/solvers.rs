mod common;

use amkl::diagnostics::check_a1;
use amkl::solvers::{default_init, run};
use amkl::{
    Hyperparams, NetworkSpec, ParamState, RandomSource, RegularizerKind, SolverConfig, SolverKind,
    SolverResult, Termination,
};

fn solve(
    kind: SolverKind,
    spec: &NetworkSpec,
    hyper: &Hyperparams,
    n: usize,
    seed: u64,
    max_iter: usize,
) -> SolverResult {
    let mut rng = RandomSource::new(seed);
    let data = common::data(spec, n, 0.0, &mut rng);
    let init = default_init(kind.form(), spec, &data, &mut rng.clone(), 0.1).unwrap();
    let cfg = SolverConfig::new(kind).with_max_iter(max_iter);
    run(kind, spec, &data, hyper, &cfg, init, &mut rng.clone()).unwrap()
}

fn small() -> NetworkSpec {
    common::spec(&[2, 4, 1])
}

fn deep() -> NetworkSpec {
    common::spec(&[3, 6, 5, 2]).with_weight_reg(RegularizerKind::SquaredFrobenius { lambda: 1e-3 })
}

fn admm_hyper() -> Hyperparams {
    Hyperparams {
        beta: vec![3.0],
        lambda: 0.1,
        ..Hyperparams::default()
    }
}

#[test]
fn single_step_families_never_increase_f() {
    for kind in [SolverKind::Bcd2, SolverKind::Bcd3, SolverKind::Bcd3Resnet] {
        for (spec, seed) in [(small(), 0), (small(), 3), (deep(), 1)] {
            let res = solve(kind, &spec, &Hyperparams::default(), 16, seed, 300);
            for w in res.trace.records.windows(2) {
                assert!(
                    w[1].f <= w[0].f + 1e-12,
                    "{kind} seed {seed}: f rose at k = {}: {} -> {}",
                    w[1].k,
                    w[0].f,
                    w[1].f
                );
            }
        }
    }
}

#[test]
fn runs_are_bit_identical() {
    for kind in SolverKind::ALL {
        let hyper = if kind == SolverKind::Admm {
            admm_hyper()
        } else {
            Hyperparams::default()
        };
        let a = solve(kind, &deep(), &hyper, 12, 7, 60);
        let b = solve(kind, &deep(), &hyper, 12, 7, 60);
        assert_eq!(a.trace, b.trace, "{kind}");
        assert_eq!(a.state, b.state, "{kind}");
    }
}

fn max_box_violation(spec: &NetworkSpec, eps: f64, s: &ParamState) -> f64 {
    let mut worst = 0.0f64;
    for (i, u) in s.u.iter().enumerate() {
        let act = spec.activation(i + 1);
        for (&x, &v) in u.data().iter().zip(s.v[i].data()) {
            let c = act.value(v);
            worst = worst.max((c - eps - x).max(x - c - eps));
        }
    }
    worst
}

#[test]
fn box_relaxed_states_stay_feasible() {
    for eps in [0.1, 0.02] {
        let hyper = Hyperparams {
            epsilon: eps,
            ..Hyperparams::default()
        };
        for max_iter in [1, 2, 3, 10, 40, 150] {
            let res = solve(SolverKind::Mdlam, &deep(), &hyper, 16, 0, max_iter);
            let viol = max_box_violation(&deep(), eps, &res.state);
            assert!(
                viol <= 1e-12,
                "eps {eps}, after {max_iter} cycles: violation {viol:e}"
            );
        }
    }
}

#[test]
fn admm_anchor_matches_state_after_each_cycle() {
    let hyper = admm_hyper();
    for max_iter in [1, 5, 25] {
        let res = solve(SolverKind::Admm, &deep(), &hyper, 16, 2, max_iter);
        for (i, (v, vbar)) in res.state.v.iter().zip(&res.state.vbar).enumerate() {
            assert_eq!(hyper.xi(i + 1) * (v - vbar).frob_sq(), 0.0);
        }
    }
}

#[test]
fn nominal_decrease_condition_holds_on_small_instance() {
    for kind in SolverKind::ALL {
        let hyper = if kind == SolverKind::Admm {
            admm_hyper()
        } else {
            Hyperparams::default()
        };
        let res = solve(kind, &small(), &hyper, 8, 0, 400);
        let cert = check_a1(&res.trace, kind.nominal_j()).unwrap();
        assert!(cert.conclusive(res.trace.len()), "{kind}: {cert:?}");
    }
}

#[test]
fn trace_length_and_termination_agree() {
    let mut rng = RandomSource::new(0);
    let data = common::data(&small(), 8, 0.0, &mut rng);
    let init = default_init(
        SolverKind::Bcd2.form(),
        &small(),
        &data,
        &mut rng.clone(),
        0.1,
    )
    .unwrap();
    let cfg = SolverConfig::new(SolverKind::Bcd2)
        .with_max_iter(5000)
        .with_stop_dist_tol(1e-4);
    let hyper = Hyperparams::default();
    let res = run(
        SolverKind::Bcd2,
        &small(),
        &data,
        &hyper,
        &cfg,
        init,
        &mut rng,
    )
    .unwrap();
    assert_eq!(res.termination, Termination::DistTol);
    let last = res.trace.records.last().unwrap();
    assert!(last.dist <= 1e-4);
    assert!(res.trace.records[..res.trace.len() - 1]
        .iter()
        .all(|r| r.dist > 1e-4));
    let capped = solve(
        SolverKind::Bcd2,
        &small(),
        &Hyperparams::default(),
        8,
        0,
        10,
    );
    assert_eq!(capped.termination, Termination::MaxIter);
    assert_eq!(capped.trace.len(), 11);
    for (k, r) in capped.trace.records.iter().enumerate() {
        assert_eq!(r.k, k);
        assert_eq!(r.block_diffs.contains_key("W1"), k > 0);
    }
}
