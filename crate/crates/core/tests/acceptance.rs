//! Acceptance suite: one PASS/FAIL line per criterion.

mod common;

use std::process::ExitCode;

use amkl::diagnostics::{
    check_a1, check_a2, check_lemma1, diagnose, estimate_kl_exponent, fit_rate, verify_envelope,
    DiagnoseOptions, Regime,
};
use amkl::io::{read_trace, write_trace};
use amkl::solvers::{default_init, run};
use amkl::toys::{analytic_kl_params, run_toy, ToyIterator, ToyProblem};
use amkl::{
    Hyperparams, IterTrace, NetworkSpec, Problem, RandomSource, RegularizerKind, SolverConfig,
    SolverKind, SolverResult, SplitForm,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn toy(p: f64, it: ToyIterator, steps: usize) -> IterTrace {
    run_toy(&ToyProblem::new(p).unwrap(), &it, 1.0, steps).unwrap()
}

fn gaps(trace: &IterTrace) -> Vec<f64> {
    trace.gaps(0.0)
}

fn solve(
    kind: SolverKind,
    spec: &NetworkSpec,
    hyper: &Hyperparams,
    n: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> SolverResult {
    let mut rng = RandomSource::new(seed);
    let data = common::data(spec, n, 0.0, &mut rng);
    let init = default_init(kind.form(), spec, &data, &mut rng.clone(), 0.1).unwrap();
    let cfg = SolverConfig::new(kind)
        .with_max_iter(max_iter)
        .with_stop_dist_tol(tol);
    run(kind, spec, &data, hyper, &cfg, init, &mut rng.clone()).unwrap()
}

fn gradient_correctness() -> Outcome {
    let (spec, data, hyper) = common::gradient_instance(11);
    let mut rng = RandomSource::new(2024);
    let mut worst = (0.0, String::new());
    for form in SplitForm::ALL {
        let problem = Problem::new(form, &spec, &data, &hyper).unwrap();
        for _ in 0..10 {
            let state = common::random_state(form, &spec, &data, &hyper, &mut rng);
            let (err, block) = common::worst_gradient_error(&problem, &state, 1e-5);
            if err > worst.0 {
                worst = (err, format!("{} {block}", form.name()));
            }
        }
    }
    let msg = format!("worst relative error {:.2e} ({})", worst.0, worst.1);
    ensure(worst.0 <= 1e-6, &msg)?;
    Ok(msg)
}

fn finite_termination() -> Outcome {
    let t = toy(1.0, ToyIterator::ProximalPoint { t: 0.3 }, 20);
    let f = t.f_values();
    let first_zero = f.iter().position(|&x| x == 0.0);
    ensure(
        first_zero == Some(4),
        format!("first exact zero at {first_zero:?}"),
    )?;
    ensure(f[4..].iter().all(|&x| x == 0.0), "gap left zero")?;
    let rate = fit_rate(&gaps(&t), 1).unwrap();
    ensure(
        rate.regime == Regime::Finite,
        format!("regime {}", rate.regime.name()),
    )?;
    Ok("gap exactly 0 from step 4, regime finite".into())
}

fn r_linear() -> Outcome {
    let t = toy(2.0, ToyIterator::GradientDescent { t: 0.25 }, 200);
    let g = gaps(&t);
    let rate = fit_rate(&g, 1).unwrap();
    ensure(
        rate.regime == Regime::RLinear,
        format!("regime {}", rate.regime.name()),
    )?;
    let eta = rate.eta_hat.unwrap();
    ensure((eta - 0.25).abs() <= 1e-6, format!("eta_hat {eta}"))?;
    let env = verify_envelope(&g, 1, 0.5, rate.k1_hat.unwrap_or(0)).unwrap();
    ensure(
        env.holds && env.c_min <= 1.0 + 1e-9,
        format!("envelope {env:?}"),
    )?;
    Ok(format!(
        "eta_hat {eta:.12}, envelope C_min {:.12}",
        env.c_min
    ))
}

fn r_sublinear() -> Outcome {
    let t = toy(4.0, ToyIterator::GradientDescent { t: 0.1 }, 100_000);
    let rate = fit_rate(&gaps(&t), 1).unwrap();
    ensure(
        rate.regime == Regime::RSublinear,
        format!("regime {}", rate.regime.name()),
    )?;
    let e = rate.sublinear_exponent_hat.unwrap();
    let theta = rate.theta_implied.unwrap();
    let kl = estimate_kl_exponent(&t, 0.0).theta_hat.unwrap();
    ensure((e - 2.0).abs() <= 0.2, format!("exponent {e}"))?;
    ensure(
        (theta - 0.75).abs() <= 0.05,
        format!("theta_implied {theta}"),
    )?;
    ensure((kl - 0.75).abs() <= 1e-3, format!("theta_hat {kl}"))?;
    Ok(format!(
        "exponent {e:.4}, theta_implied {theta:.4}, theta_hat {kl:.6}"
    ))
}

fn key_inequality() -> Outcome {
    let mut total = 0;
    for (p, t, steps) in [(2.0, 0.25, 200), (4.0, 0.1, 5000)] {
        let trace = toy(p, ToyIterator::GradientDescent { t }, steps);
        let cert = check_a1(&trace, 1).unwrap();
        let kl = analytic_kl_params(&ToyProblem::new(p).unwrap());
        let rep = check_lemma1(&trace, &kl, &cert, 1).unwrap();
        ensure(
            !rep.checks.is_empty(),
            format!("p = {p}: no eligible iterations"),
        )?;
        let failed = rep.checks.iter().filter(|c| !c.holds).count();
        ensure(
            failed == 0,
            format!("p = {p}: {failed} of {} fail", rep.checks.len()),
        )?;
        total += rep.checks.len();
    }
    Ok(format!("{total} eligible iterations, all hold"))
}

fn suite_spec() -> NetworkSpec {
    common::spec(&[4, 8, 8, 2]).with_weight_reg(RegularizerKind::SquaredFrobenius { lambda: 1e-3 })
}

fn solver_certificates() -> Outcome {
    let spec = suite_spec();
    let mut parts = Vec::new();
    for kind in SolverKind::ALL {
        let hyper = match kind {
            SolverKind::Admm => Hyperparams {
                beta: vec![3.0],
                lambda: 0.1,
                xi: vec![1.0],
                ..Hyperparams::default()
            },
            _ => Hyperparams::default(),
        };
        let res = solve(kind, &spec, &hyper, 32, 0, 3000, 1e-8);
        let j = kind.nominal_j();
        let cert = check_a1(&res.trace, j).unwrap();
        let c1 = cert.c1_hat.finite();
        ensure(
            cert.holds_after_k0 && c1.is_some_and(|c| c > 0.0) && cert.conclusive(res.trace.len()),
            format!(
                "{kind} j = {j}: {} violations, k0 {}, c1 {}",
                cert.violations.len(),
                cert.k0_hat,
                cert.c1_hat
            ),
        )?;
        let mut part = format!("{kind} j={j} c1 {:.3e} k0 {}", c1.unwrap(), cert.k0_hat);
        if kind == SolverKind::Mdlam {
            let rises = res
                .trace
                .records
                .windows(2)
                .filter(|w| w[1].f > w[0].f)
                .count();
            ensure(rises > 0, "mdlam showed no per-step increase")?;
            part.push_str(&format!(" with {rises} per-step increases"));
        }
        parts.push(part);
    }
    Ok(parts.join("; "))
}

fn approximate_criticality() -> Outcome {
    let spec = common::spec(&[2, 4, 1]);
    let mut parts = Vec::new();
    for kind in [
        SolverKind::Bcd2,
        SolverKind::Bcd3,
        SolverKind::Bcd3Resnet,
        SolverKind::Admm,
    ] {
        let hyper = match kind {
            SolverKind::Admm => Hyperparams {
                beta: vec![1.0],
                lambda: 0.01,
                xi: vec![0.0],
                ..Hyperparams::default()
            },
            _ => Hyperparams::default(),
        };
        let res = solve(kind, &spec, &hyper, 8, 0, 5000, 1e-4);
        let hit = res
            .trace
            .records
            .iter()
            .find(|r| r.dist < 1e-4)
            .map(|r| r.k);
        ensure(
            hit.is_some_and(|k| k <= 5000),
            format!(
                "{kind}: min dist {:e}",
                res.trace.dists().into_iter().fold(f64::INFINITY, f64::min)
            ),
        )?;
        parts.push(format!("{kind} at cycle {}", hit.unwrap()));
    }
    Ok(format!("dist < 1e-4 reached: {}", parts.join(", ")))
}

fn a2_toy() -> Outcome {
    let t = toy(2.0, ToyIterator::GradientDescent { t: 0.25 }, 200);
    let a2 = check_a2(&t, 1, 0.5).unwrap();
    let c2 = a2.c2_hat.finite().ok_or("vacuous A2 certificate")?;
    ensure(
        (c2 - 0.75).abs() <= 1e-9 && a2.holds_after_k0,
        format!("c2_hat {c2}"),
    )?;
    let rate = fit_rate(&gaps(&t), 1).unwrap();
    ensure(
        rate.regime == Regime::RLinear,
        format!("regime {}", rate.regime.name()),
    )?;
    Ok(format!("c2_hat {c2:.15}, regime r_linear"))
}

fn determinism_round_trip() -> Outcome {
    let spec = suite_spec();
    let mut bytes = Vec::new();
    for _ in 0..2 {
        let res = solve(
            SolverKind::Bcd3,
            &spec,
            &Hyperparams::default(),
            32,
            5,
            200,
            1e-8,
        );
        let mut buf = Vec::new();
        write_trace(&mut buf, &res.trace).unwrap();
        bytes.push((buf, res.trace));
    }
    ensure(
        bytes[0].0 == bytes[1].0,
        "trace bytes differ between identical runs",
    )?;
    let (buf, trace) = &bytes[0];
    let back = read_trace(buf.as_slice()).unwrap();
    let bit_exact = back
        .records
        .iter()
        .zip(&trace.records)
        .all(|(a, b)| a.f.to_bits() == b.f.to_bits() && a.dist.to_bits() == b.dist.to_bits());
    ensure(
        bit_exact && back.len() == trace.len(),
        "f or dist changed on re-read",
    )?;
    let opts = DiagnoseOptions {
        j: 1,
        alpha: Some(0.5),
        ..DiagnoseOptions::default()
    };
    ensure(
        diagnose(&back, &opts).unwrap() == diagnose(trace, &opts).unwrap(),
        "diagnosis of the re-read trace differs",
    )?;
    Ok(format!(
        "{} bytes identical, diagnosis reproduced exactly",
        buf.len()
    ))
}

fn a2_equals_a1() -> Outcome {
    let mut rng = RandomSource::new(31);
    for case in 0..20 {
        let len = 5 + (rng.uniform() * 200.0) as usize;
        let mut f = Vec::with_capacity(len);
        let mut cur = 1.0 + 10.0 * rng.uniform();
        for _ in 0..len {
            f.push(cur);
            cur -= (rng.uniform() - 0.15) * 0.1 * cur.abs().max(1e-3);
        }
        let d: Vec<f64> = (0..len)
            .map(|_| {
                if rng.uniform() < 0.05 {
                    0.0
                } else {
                    rng.uniform() * 3.0
                }
            })
            .collect();
        let t = IterTrace::from_values(&f, &d);
        for j in [1, 2] {
            let a1 = check_a1(&t, j).unwrap();
            let a2 = check_a2(&t, j, 0.5).unwrap();
            let bounds = match (a1.c1_hat.finite(), a2.c2_hat.finite()) {
                (Some(x), Some(y)) => (x - y).abs() <= 1e-12 * x.abs().max(1.0),
                (None, None) => true,
                _ => false,
            };
            ensure(
                bounds
                    && a1.j == a2.j
                    && a1.k0_hat == a2.k0_hat
                    && a1.violations == a2.violations
                    && a1.holds_after_k0 == a2.holds_after_k0,
                format!("case {case}, j = {j}: {a1:?} vs {a2:?}"),
            )?;
        }
    }
    Ok("20 traces, j in {1, 2}, all fields equal".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient correctness", gradient_correctness),
        ("finite termination", finite_termination),
        ("R-linear regime", r_linear),
        ("R-sublinear regime", r_sublinear),
        ("key KL inequality", key_inequality),
        ("A1 certificates for solvers", solver_certificates),
        ("approximate criticality", approximate_criticality),
        ("A2 on the quadratic toy", a2_toy),
        ("determinism and round-trip", determinism_round_trip),
        ("A2 equals A1 at alpha 1/2", a2_equals_a1),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
