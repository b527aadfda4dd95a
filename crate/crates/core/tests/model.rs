use driftbound::model::*;
use driftbound::numerics::{mean_se, QuadratureSpec, RngStream};
use proptest::prelude::*;

fn cfg() -> ModelConfig {
    ModelConfig::default()
}

fn synth(n: usize, center: f64, seed: u64) -> DataSet {
    synthesize(n, center, 1.0, true, &mut RngStream::new(seed, 0)).unwrap()
}

#[test]
fn data_statistics() {
    let ds = DataSet::new(vec![0.0; 4]).unwrap();
    assert_eq!((ds.y_bar, ds.delta), (0.0, 0.0));
    let ds = DataSet::new(vec![1.0, -1.0]).unwrap();
    assert_eq!((ds.y_bar, ds.delta), (0.0, 2.0));
    assert!(DataSet::new(vec![1.0]).is_err());
    assert!(DataSet::new(vec![1.0, f64::NAN]).is_err());

    let mut rng = RngStream::new(21, 0);
    let ds = DataSet::new((0..10_000).map(|_| rng.std_normal()).collect()).unwrap();
    let spread = ds.delta / 9_999.0;
    assert!((spread - 1.0).abs() < 4.0 * (2.0f64 / 9_999.0).sqrt());
}

#[test]
fn data_assumption() {
    // Delta/(n-1) = 3
    assert!(check_data_assumption(&DataSet::new(vec![0.0, 0.0, 3.0]).unwrap(), &cfg()));
    // Delta/(n-1) = 4/3
    assert!(!check_data_assumption(&DataSet::new(vec![-1.0, 1.0, -1.0, 1.0]).unwrap(), &cfg()));
    // Boundary Delta/(n-1) = V + delta = 2.
    let edge = DataSet::new(vec![-1.0, 1.0]).unwrap();
    assert!(check_data_assumption(&edge, &cfg()));
    assert!(require_data_assumption(&DataSet::new(vec![0.0, 0.1]).unwrap(), &cfg()).is_err());
}

#[test]
fn initial_state_and_mode() {
    let ds = DataSet::new(vec![0.0, 0.0, 3.0]).unwrap();
    let x = initial_state(&ds, &cfg());
    assert_eq!(x.a, 2.0);
    assert_eq!(x.theta_bar, ds.y_bar);
    assert_eq!(drift_value(&ds, &cfg(), x.theta_bar, x.a), 0.0);

    // Delta/(n-1) = 0.5 < V: fall back to A = Delta/(n-1).
    let ds = DataSet::new(vec![-0.5, 0.5]).unwrap();
    assert_eq!(initial_state(&ds, &cfg()).a, 0.5);
}

#[test]
fn drift_function_values() {
    let ds = DataSet::new(vec![-1.5, -1.5, 1.5, 1.5]).unwrap();
    assert_eq!(ds.a_hat(1.0), 2.0);
    assert_eq!(drift_value(&ds, &cfg(), 1.0, 3.0), 8.0);
    // theta_i = Y_i, A = Delta/(n-1): f = n V^2.
    let ds = synth(50, 2.0, 4);
    let spread = ds.delta / 49.0;
    assert!((drift_value(&ds, &cfg(), ds.y_bar, spread) - 50.0).abs() < 1e-9);
}

#[test]
fn lambda_values() {
    assert_eq!(lambda_factor(0.0, 1.0).unwrap(), 1.0);
    assert_eq!(lambda_factor(1.0, 1.0).unwrap(), 0.5625);
    assert!(lambda_factor(-1.0, 1.0).is_err());
    let ds = synth(20, 2.0, 1);
    assert_eq!(LargeSetSpec::new(&ds, &cfg(), 1.0).unwrap().lambda_t(1.0), 0.5625);
    let l2 = LargeSetSpec::new(&ds, &cfg(), 1.5).unwrap().lambda_t(1.0);
    assert!((l2 - (4.0f64 / 6.25).powi(2)).abs() < 1e-15);
    let spec = LargeSetSpec { t: 2.0, center: 3.0 };
    assert!((spec.lambda_t(1.0) - 0.308_641_975_308_641_97).abs() < 1e-15);
}

#[test]
fn large_set_membership() {
    let ds = synth(30, 2.0, 2);
    let spec = LargeSetSpec::new(&ds, &cfg(), 1.0).unwrap();
    assert!(spec.contains(spec.t));
    assert!(spec.contains(spec.center));
    assert!(!spec.contains(2.0 * spec.center - spec.t + 1e-9));
    assert!(LargeSetSpec::new(&ds, &cfg(), 0.0).is_err());
    assert!(LargeSetSpec::new(&ds, &cfg(), spec.center).is_err());
    assert_eq!(LargeSetSpec::with_default_t(&ds, &cfg()).unwrap().t, 1.0);
}

#[test]
fn s_moment_examples() {
    // A = 1, V = 1, Delta/(n-1) = 3.
    let ds = DataSet::new(vec![0.0, 0.0, 3.0]).unwrap();
    let (m, _, _) = conditional_s_moments(&ds, &cfg(), 1.0).unwrap();
    assert!((m - 1.25).abs() < 1e-15);
    assert!(conditional_s_moments(&ds, &cfg(), 0.0).is_err());
    assert!(conditional_s_moments(&ds, &cfg(), 1e-12).unwrap().0 < 1e-11);

    // n = 5, A = 1, V = 1, Delta = 12: variance 0.5, checked by sampling S' from the full sweep.
    let ds = DataSet::new(vec![-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap();
    assert_eq!(ds.delta, 10.0);
    let ds = DataSet::new(ds.y.iter().map(|y| y * (1.2f64).sqrt()).collect()).unwrap();
    assert!((ds.delta - 12.0).abs() < 1e-12);
    let (m, var, _) = conditional_s_moments(&ds, &cfg(), 1.0).unwrap();
    assert!((var - 0.5).abs() < 1e-12);
    let x = ChainState::new(0.0, vec![0.0; 5], 1.0).unwrap();
    let mut rng = RngStream::new(8, 0);
    let s: Vec<f64> = (0..1_000_000).map(|_| gibbs_step(&x, &ds, &cfg(), &mut rng).unwrap().s).collect();
    let (ms, se_m) = mean_se(&s);
    assert!((ms - m).abs() < 4.0 * se_m);
    let dev: Vec<f64> = s.iter().map(|v| (v - m) * (v - m)).collect();
    let (vs, se_v) = mean_se(&dev);
    assert!((vs - 0.5).abs() < 4.0 * se_v, "{vs} vs 0.5 (se {se_v})");
}

#[test]
fn second_moment_of_a_must_exist() {
    let ds = DataSet::new(vec![0.0, 1.0, 5.0, 9.0]).unwrap();
    let c = ModelConfig {
        prior_shape_a: 0.5,
        ..cfg()
    };
    assert!(expected_a_deviation_sq(&ds, &c, 1.0).is_err());
    assert!(expected_drift(&ds, &c, 0.0, 1.0).is_err());
}

#[test]
fn expected_drift_matches_full_sweep() {
    let ds = synth(20, 2.0, 3);
    let c = cfg();
    for (i, (dt, a)) in [(0.0, 2.0), (0.5, 1.2), (-1.0, 3.1), (0.2, 0.4), (2.0, 5.0)].into_iter().enumerate() {
        let x = ChainState::new(0.0, vec![ds.y_bar + dt; 20], a).unwrap();
        let mut s = RngStream::new(10, i as u64);
        let fs: Vec<f64> = (0..200_000)
            .map(|_| {
                let y = gibbs_step(&x, &ds, &c, &mut s).unwrap();
                drift_value(&ds, &c, y.theta_bar, y.a)
            })
            .collect();
        let (m, se) = mean_se(&fs);
        let exact = expected_drift(&ds, &c, ds.y_bar + dt, a).unwrap();
        assert!((m - exact).abs() < 4.0 * se, "state {i}: {m} vs {exact} (se {se})");
    }
}

#[test]
fn sufficient_kernel_matches_full_sweep() {
    let ds = synth(12, 2.0, 5);
    let c = cfg();
    let k = SufficientKernel::new(&ds, &c).unwrap();
    let x = ChainState::new(0.0, vec![ds.y_bar + 0.3; 12], 1.5).unwrap();
    let (mut r1, mut r2) = (RngStream::new(1, 0), RngStream::new(1, 1));
    let m = 400_000;
    let full: Vec<(f64, f64)> = (0..m)
        .map(|_| {
            let y = gibbs_step(&x, &ds, &c, &mut r1).unwrap();
            (y.theta_bar, y.a)
        })
        .collect();
    let red: Vec<(f64, f64)> = (0..m)
        .map(|_| {
            let y = k.step(SuffState::from(&x), &mut r2);
            (y.theta_bar, y.a)
        })
        .collect();
    for (name, proj) in [
        ("theta_bar", (|p: &(f64, f64)| p.0) as fn(&(f64, f64)) -> f64),
        ("A", |p| p.1),
        ("theta_bar^2", |p| p.0 * p.0),
        ("A^2", |p| p.1 * p.1),
        ("theta_bar A", |p| p.0 * p.1),
    ] {
        let a: Vec<f64> = full.iter().map(proj).collect();
        let b: Vec<f64> = red.iter().map(proj).collect();
        let (ma, sa) = mean_se(&a);
        let (mb, sb) = mean_se(&b);
        assert!((ma - mb).abs() < 4.5 * (sa * sa + sb * sb).sqrt(), "{name}: {ma} vs {mb}");
    }
}

#[test]
fn tail_bound_examples() {
    let spec = LargeSetSpec { t: 1.0, center: 2.0 };
    let v = tail_probability_bound(1.0, &spec, 1.0, 1.0, 100, 5).unwrap();
    assert!((v - 1.65).abs() < 1e-14);
    assert_eq!(tail_probability_bound(1.0, &spec, 1.0, 1.0, 100, 0).unwrap(), 0.0);
    let flat = LargeSetSpec { t: 2.0, center: 2.0 };
    assert!(tail_probability_bound(1.0, &flat, 1.0, 1.0, 100, 5).is_err());
}

#[test]
fn drift_offset_is_positive_and_attained_inside() {
    let ds = synth(100, 2.0, 6);
    let spec = LargeSetSpec::with_default_t(&ds, &cfg()).unwrap();
    let off = drift_offset_b(&ds, &cfg(), &spec).unwrap();
    assert!(off.b > 0.0 && off.b == B_INFLATION * off.raw_sup);
    assert!(spec.contains(off.argmax_a));
    assert_eq!(off.lambda_t, 0.5625);
}

#[test]
fn posterior_functional_limits() {
    let q = QuadratureSpec::default();
    let h = posterior_functional_h(400, 399.0 * 2.0, &cfg(), &q).unwrap();
    assert!((h.value - 1.0).abs() < 0.15, "{}", h.value);
    for n in [100usize, 400, 1600, 6400] {
        let h = posterior_functional_h(n, (n - 1) as f64 * 3.0, &cfg(), &q).unwrap();
        assert!(h.value <= 2.0, "n = {n}: {}", h.value);
        assert!(h.error_estimate < 1e-6 * h.value);
    }
    assert!(posterior_functional_h(1, 1.0, &cfg(), &q).is_err());
}

#[test]
fn synthesized_spread_near_model_variance() {
    let ds = synthesize(100, 2.0, 1.0, false, &mut RngStream::new(77, 0)).unwrap();
    assert_eq!(ds.n(), 100);
    let spread = ds.delta / 99.0;
    assert!((spread - 3.0).abs() < 4.0 * 3.0 * (2.0f64 / 99.0).sqrt());
    assert!(synthesize(1, 2.0, 1.0, true, &mut RngStream::new(1, 0)).is_err());
    let a = synthesize(50, 2.0, 1.0, false, &mut RngStream::new(5, 5)).unwrap();
    let b = synthesize(50, 2.0, 1.0, false, &mut RngStream::new(5, 5)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn drift_inequality_holds_on_large_set(seed in 0u64..1000, n in 10usize..400, u in 0.0f64..1.0, dt in -5.0f64..5.0) {
        let ds = synth(n, 2.0, seed);
        let spec = LargeSetSpec::with_default_t(&ds, &cfg()).unwrap();
        let off = drift_offset_b(&ds, &cfg(), &spec).unwrap();
        let a = spec.t + u * (spec.upper() - spec.t);
        let theta_bar = ds.y_bar + dt / (n as f64).sqrt();
        let f = drift_value(&ds, &cfg(), theta_bar, a);
        let e = expected_drift(&ds, &cfg(), theta_bar, a).unwrap();
        prop_assert!(e <= lambda_of_a(1.0, a) * f + off.b);
        prop_assert!(e <= off.lambda_t * f + off.b);
    }

    #[test]
    fn lambda_dominates_theta_coefficient(a in 0.0f64..100.0, v in 0.01f64..10.0) {
        let l = lambda_of_a(v, a);
        prop_assert!(l > 0.0 && l <= 1.0);
        prop_assert!((v / (v + a)).powi(2) <= l);
    }

    #[test]
    fn drift_nonnegative_and_kernel_drift_agrees(seed in 0u64..100, tb in -3.0f64..3.0, a in 0.01f64..10.0) {
        let ds = synth(25, 2.0, seed);
        let f = drift_value(&ds, &cfg(), tb, a);
        prop_assert!(f >= 0.0);
        let k = SufficientKernel::new(&ds, &cfg()).unwrap();
        let kd = k.drift(SuffState { theta_bar: tb, a });
        prop_assert!((kd - f).abs() <= 1e-10 * (1.0 + f));
    }

    #[test]
    fn restricted_step_stays_inside(seed in 0u64..1000, u in 0.0f64..1.0) {
        let ds = synth(20, 2.0, 11);
        let spec = LargeSetSpec::with_default_t(&ds, &cfg()).unwrap();
        let k = SufficientKernel::new(&ds, &cfg()).unwrap();
        let mut rng = RngStream::new(seed, 0);
        let mut x = SuffState { theta_bar: ds.y_bar, a: spec.t + u * (spec.upper() - spec.t) };
        for _ in 0..50 {
            x = k.step_restricted(x, &spec, &mut rng);
            prop_assert!(spec.contains(x.a));
        }
    }
}
