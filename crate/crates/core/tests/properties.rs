use amkl::diagnostics::{
    check_a1, check_a2, check_chi_ratio, estimate_kl_exponent, fit_rate, verify_envelope, Regime,
};
use amkl::io::{parse_trace, state_from_text, state_to_text, write_trace};
use amkl::network::soft_threshold;
use amkl::toys::{run_toy, ToyIterator, ToyProblem};
use amkl::{
    matmul, solve_spd, ActivationKind, IterTrace, Matrix, ParamState, RegularizerKind, TraceMeta,
};
use proptest::collection::vec;
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6..1e6f64,
        -1e-300..1e-300f64,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(5e-324),
        Just(f64::MAX),
    ]
}

/// Mostly decreasing objective values with occasional rises, and
/// non-negative dists with occasional exact zeros.
fn trace_values() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..60).prop_flat_map(|n| {
        (
            vec(-0.2..1.0f64, n),
            vec(prop_oneof![9 => 1e-6..10.0f64, 1 => Just(0.0)], n),
            0.0..10.0f64,
        )
            .prop_map(|(steps, dist, start)| {
                let mut f = Vec::with_capacity(steps.len());
                let mut cur = start;
                for s in steps {
                    f.push(cur);
                    cur -= s * (0.1 + cur.abs()) * 0.1;
                }
                (f, dist)
            })
    })
}

fn matrix() -> impl Strategy<Value = Matrix> {
    (1usize..5, 1usize..5).prop_flat_map(|(r, c)| {
        vec(finite(), r * c).prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn a2_at_half_agrees_with_a1((f, d) in trace_values(), j in 1usize..3) {
        let t = IterTrace::from_values(&f, &d);
        prop_assume!(t.len() > j);
        let a1 = check_a1(&t, j).unwrap();
        let a2 = check_a2(&t, j, 0.5).unwrap();
        prop_assert_eq!(a1.j, a2.j);
        prop_assert_eq!(a1.k0_hat, a2.k0_hat);
        prop_assert_eq!(&a1.violations, &a2.violations);
        prop_assert_eq!(a1.holds_after_k0, a2.holds_after_k0);
        match (a1.c1_hat.finite(), a2.c2_hat.finite()) {
            (Some(c1), Some(c2)) => prop_assert!((c1 - c2).abs() <= 1e-12 * c1.abs().max(1.0)),
            (None, None) => {}
            other => prop_assert!(false, "bounds differ: {:?}", other),
        }
    }

    #[test]
    fn a1_certificate_is_self_consistent((f, d) in trace_values(), j in 1usize..3) {
        let t = IterTrace::from_values(&f, &d);
        prop_assume!(t.len() > j);
        let cert = check_a1(&t, j).unwrap();
        prop_assert_eq!(
            cert.holds_after_k0,
            cert.violations.iter().all(|&k| k < cert.k0_hat)
        );
        if let (true, Some(c1)) = (cert.holds_after_k0, cert.c1_hat.finite()) {
            prop_assert!(c1 > 0.0);
            for k in cert.k0_hat..t.len() - j {
                let dec = f[k] - f[k + j];
                let need = c1 * d[k + j] * d[k + j];
                prop_assert!(dec >= need * (1.0 - 1e-12), "k = {}: {} < {}", k, dec, need);
            }
        }
    }

    #[test]
    fn theta_hat_is_invariant_under_joint_scaling(
        p in prop_oneof![Just(3.0), Just(4.0), Just(8.0)],
        s in 1e-3..1e3f64,
    ) {
        let prob = ToyProblem::new(p).unwrap();
        let t = run_toy(&prob, &ToyIterator::GradientDescent { t: 0.05 }, 1.0, 400).unwrap();
        let mut scaled = t.clone();
        for r in &mut scaled.records {
            r.f *= s;
            r.dist *= s;
        }
        let a = estimate_kl_exponent(&t, 0.0).theta_hat.unwrap();
        let b = estimate_kl_exponent(&scaled, 0.0).theta_hat.unwrap();
        prop_assert!((a - b).abs() <= 1e-9, "{} vs {}", a, b);
    }

    #[test]
    fn sublinear_fits_pass_their_own_envelope(a in 0.5..4.0f64, len in 200usize..600) {
        let gaps: Vec<f64> = (0..len).map(|k| ((k + 1) as f64).powf(-a)).collect();
        let rate = fit_rate(&gaps, 1).unwrap();
        if rate.regime == Regime::RSublinear && rate.fit_residual.unwrap_or(1.0) < 0.1 {
            // Exponents of at most 1 correspond to no θ below 1.
            let Some(theta) = rate.theta_implied else {
                prop_assert!(rate.sublinear_exponent_hat.unwrap() <= 1.0);
                return Ok(());
            };
            let env = verify_envelope(&gaps, 1, theta, rate.k1_hat.unwrap_or(0)).unwrap();
            prop_assert!(env.holds, "exponent {}: {:?}", a, env);
        }
    }

    #[test]
    fn chi_ratio_bounds_the_tail(diffs in vec(prop_oneof![5 => 1e-8..10.0f64, 1 => Just(0.0)], 3..80)) {
        let rep = check_chi_ratio(&diffs).unwrap();
        for &k in &rep.skipped {
            prop_assert_eq!(diffs[k], 0.0);
        }
        match rep.chi_hat {
            Some(chi) => {
                for k in rep.k0.max(1)..diffs.len() {
                    if diffs[k] > 0.0 {
                        prop_assert!(diffs[k - 1] / diffs[k] <= chi);
                    }
                }
            }
            None => prop_assert!(diffs[1..].iter().all(|&x| x == 0.0)),
        }
    }

    #[test]
    fn trace_files_round_trip_bit_exactly(
        f in vec(finite(), 1..40),
        seed in any::<u64>(),
    ) {
        let d: Vec<f64> = f.iter().map(|x| x.abs()).collect();
        let mut t = IterTrace::from_values(&f, &d);
        t.meta = TraceMeta { source: "solver".into(), seed: Some(seed), ..TraceMeta::default() };
        for (k, r) in t.records.iter_mut().enumerate() {
            r.block_diffs.insert("V1".into(), d[k]);
        }
        let mut buf = Vec::new();
        write_trace(&mut buf, &t).unwrap();
        let back = parse_trace(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.len(), t.len());
        for (a, b) in back.records.iter().zip(&t.records) {
            prop_assert_eq!(a.f.to_bits(), b.f.to_bits());
            prop_assert_eq!(a.dist.to_bits(), b.dist.to_bits());
        }
        prop_assert_eq!(back, t);
    }

    #[test]
    fn matrix_text_round_trips(m in matrix()) {
        let back = Matrix::from_text(&m.to_text()).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (a, b) in back.data().iter().zip(m.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn state_text_round_trips(w in vec(matrix(), 1..4), v in vec(matrix(), 0..3)) {
        let state = ParamState { w, v, ..ParamState::default() };
        prop_assert_eq!(state_from_text(&state_to_text(&state)).unwrap(), state);
    }

    #[test]
    fn toy_records_are_exact(
        p in prop_oneof![Just(2.0), Just(3.0), Just(4.0), Just(8.0)],
        x0 in prop_oneof![-1.0..-0.2f64, 0.2..1.0f64],
        t in 0.01..0.2f64,
    ) {
        prop_assume!(t * p * x0.abs().powf(p - 2.0) < 1.0);
        let prob = ToyProblem::new(p).unwrap();
        let trace = run_toy(&prob, &ToyIterator::GradientDescent { t }, x0, 50).unwrap();
        let mut x = x0;
        for r in &trace.records {
            prop_assert_eq!(r.f, prob.f(x));
            prop_assert_eq!(r.dist, prob.dist(x));
            prop_assert_eq!(r.dist, p * x.abs().powf(p - 1.0));
            x -= t * x.signum() * prob.dist(x);
        }
        let cert = check_a1(&trace, 1).unwrap();
        prop_assert!(cert.holds_after_k0);
        prop_assert!(cert.c1_hat.finite().is_none_or(|c| c > 0.0));
    }

    #[test]
    fn two_phase_toys_satisfy_two_step_decrease(t in 0.1..0.4f64, delta in 0.0..0.5f64) {
        prop_assume!((1.0 + delta) * (1.0 - 2.0 * t).powi(2) < 0.99);
        let prob = ToyProblem::new(2.0).unwrap();
        let trace = run_toy(&prob, &ToyIterator::TwoPhase { t, delta }, 1.0, 40).unwrap();
        let cert = check_a1(&trace, 2).unwrap();
        prop_assert!(cert.conclusive(trace.len()), "{:?}", cert);
    }

    #[test]
    fn prox_point_on_abs_is_soft_threshold(x in -5.0..5.0f64, t in 0.0..2.0f64) {
        let prob = ToyProblem::new(1.0).unwrap();
        prop_assert_eq!(prob.prox(x, t), soft_threshold(x, t));
    }

    #[test]
    fn regularizer_prox_minimizes_its_model(
        w in matrix().prop_filter("moderate", |m| m.data().iter().all(|x| x.abs() < 1e3)),
        lambda in 0.0..3.0f64,
        t in 0.01..2.0f64,
        ell1 in any::<bool>(),
        probe in -1.0..1.0f64,
    ) {
        let reg = if ell1 {
            RegularizerKind::Ell1 { lambda }
        } else {
            RegularizerKind::SquaredFrobenius { lambda }
        };
        let model = |p: &Matrix| t * reg.eval(p) + 0.5 * (p - &w).frob_sq();
        let p = reg.prox(&w, t);
        let best = model(&p);
        for idx in 0..p.data().len() {
            let mut q = p.clone();
            q.data_mut()[idx] += probe * 1e-3;
            prop_assert!(model(&q) >= best - 1e-9 * best.abs().max(1.0));
        }
    }

    #[test]
    fn preimage_maps_into_the_box(
        kind in prop_oneof![
            Just(ActivationKind::Identity),
            Just(ActivationKind::Tanh),
            Just(ActivationKind::Sigmoid),
            Just(ActivationKind::Relu),
        ],
        centre in -3.0..3.0f64,
        eps in 0.0..0.5f64,
        z in -10.0..10.0f64,
    ) {
        let s = kind.value(centre);
        let (lo, hi) = (s - eps, s + eps);
        let (a, b) = kind.preimage(lo, hi).expect("the box contains value(centre)");
        let y = kind.value(z.clamp(a, b));
        prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12, "{:?}: {} outside [{}, {}]", kind, y, lo, hi);
    }

    #[test]
    fn spd_solves_have_small_residuals(
        n in 1usize..6,
        seed in vec(-1.0..1.0f64, 36),
        rhs in vec(-5.0..5.0f64, 12),
    ) {
        let b = Matrix::from_vec(n, n, seed[..n * n].to_vec()).unwrap();
        let mut a = matmul(&b.transpose(), &b).unwrap();
        a.add_diag(0.1);
        let r = Matrix::from_vec(n, 2, rhs[..2 * n].to_vec()).unwrap();
        let x = solve_spd(&a, &r).unwrap();
        let resid = (&matmul(&a, &x).unwrap() - &r).frob_norm();
        prop_assert!(resid <= 1e-9 * r.frob_norm().max(1.0));
    }
}
