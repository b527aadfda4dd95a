use driftbound::model::*;
use driftbound::numerics::{norm_cdf, RngStream};
use driftbound::report::{assemble_gibbs_bound, AssembleOptions};
use driftbound::simulation::*;
use proptest::prelude::*;

fn cfg() -> ModelConfig {
    ModelConfig::default()
}

fn synth(n: usize, seed: u64) -> DataSet {
    synthesize(n, 2.0, 1.0, true, &mut RngStream::new(seed, 0)).unwrap()
}

fn plan(n_chains: usize, n_steps: u64, seed: u64) -> SimulationPlan {
    SimulationPlan {
        n_chains,
        n_steps,
        burn_in: 0,
        seed,
        record_stride: 1,
    }
}

#[test]
fn plan_validation() {
    assert!(plan(0, 5, 1).validate().is_err());
    assert!(SimulationPlan { burn_in: 5, ..plan(1, 5, 1) }.validate().is_err());
    assert!(SimulationPlan { record_stride: 0, ..plan(1, 5, 1) }.validate().is_err());
    assert!(plan(1, 5, 1).validate().is_ok());
}

#[test]
fn ensemble_is_reproducible_across_pools() {
    let ds = synth(40, 1);
    let spec = LargeSetSpec::with_default_t(&ds, &cfg()).unwrap();
    let x0 = initial_state(&ds, &cfg());
    for mode in [KernelMode::Sufficient, KernelMode::Full] {
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_ensemble(&plan(16, 30, 9), &ds, &cfg(), &spec, &x0, mode).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
        assert!(String::from_utf8(ca).unwrap().starts_with("chain,step,theta_bar,a,f,in_large_set\n"));
    }
}

#[test]
fn records_carry_consistent_drift() {
    let ds = synth(40, 2);
    let spec = LargeSetSpec::with_default_t(&ds, &cfg()).unwrap();
    let x0 = initial_state(&ds, &cfg());
    let p = SimulationPlan {
        burn_in: 3,
        record_stride: 4,
        ..plan(8, 40, 3)
    };
    let e = run_ensemble(&p, &ds, &cfg(), &spec, &x0, KernelMode::Sufficient).unwrap();
    for chain in &e.records {
        assert_eq!(chain.iter().map(|r| r.step).collect::<Vec<_>>(), vec![3, 7, 11, 15, 19, 23, 27, 31, 35, 39]);
        for r in chain {
            let f = drift_value(&ds, &cfg(), r.theta_bar, r.a);
            assert!((r.f - f).abs() <= 1e-10 * (1.0 + f));
            assert_eq!(r.in_large_set, spec.contains(r.a));
        }
    }
}

#[test]
fn resource_limit_is_an_error() {
    let ds = synth(10, 2);
    let spec = LargeSetSpec::with_default_t(&ds, &cfg()).unwrap();
    let x0 = initial_state(&ds, &cfg());
    let huge = plan(1_000_000, 100, 1);
    assert!(matches!(
        run_ensemble(&huge, &ds, &cfg(), &spec, &x0, KernelMode::Sufficient),
        Err(driftbound::Error::ResourceLimit(_))
    ));
}

#[test]
fn one_step_mean_drift_matches_exact_moment() {
    let ds = synth(100, 3);
    let spec = LargeSetSpec::with_default_t(&ds, &cfg()).unwrap();
    let x0 = initial_state(&ds, &cfg());
    let e = run_ensemble(&plan(100_000, 1, 4), &ds, &cfg(), &spec, &x0, KernelMode::Sufficient).unwrap();
    let agg = e.aggregates[1];
    let exact = expected_drift(&ds, &cfg(), x0.theta_bar, x0.a).unwrap();
    assert!((agg.mean_f - exact).abs() < 3.0 * agg.se_f, "{} vs {exact}", agg.mean_f);
}

#[test]
fn large_set_occupancy_respects_tail_bound() {
    let ds = synth(100, 4);
    let c = cfg();
    let rep = assemble_gibbs_bound(&ds, &c, &AssembleOptions::default()).unwrap();
    let spec = rep.large_set();
    let x0 = initial_state(&ds, &c);
    let e = run_ensemble(&plan(20_000, 10, 5), &ds, &c, &spec, &x0, KernelMode::Sufficient).unwrap();
    for agg in &e.aggregates[1..] {
        let tail = tail_probability_bound(rep.constants.b_drift, &spec, c.delta_margin, c.v, ds.n(), agg.step).unwrap();
        assert!(agg.frac_in_large_set >= 1.0 - tail);
    }
}

#[test]
fn trace_transform_examples() {
    let spec = LargeSetSpec { t: 1.0, center: 2.0 };
    let rec = |step: u64, a: f64| TraceRecord {
        step,
        theta_bar: 0.0,
        a,
        f: 0.0,
        in_large_set: spec.contains(a),
    };
    let inside: Vec<TraceRecord> = (0..6).map(|i| rec(i, 2.0)).collect();
    assert_eq!(trace_chain_transform(&inside, &spec).unwrap(), inside);

    let mut excursion = inside.clone();
    for r in &mut excursion[2..5] {
        r.a = 0.5;
        r.in_large_set = false;
    }
    let out = trace_chain_transform(&excursion, &spec).unwrap();
    assert_eq!(out.len(), excursion.len() - 3);
    assert_eq!(out.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1, 2]);

    let never: Vec<TraceRecord> = (0..4).map(|i| rec(i, 10.0)).collect();
    assert!(trace_chain_transform(&never, &spec).is_err());
}

#[test]
fn restricted_step_matches_gibbs_under_shared_randomness() {
    let ds = synth(30, 6);
    let c = cfg();
    let wide = LargeSetSpec::new(&ds, &c, 1e-6).unwrap();
    let x0 = initial_state(&ds, &c);
    let mut r1 = RngStream::new(3, 3);
    let mut r2 = r1.clone();
    let g = gibbs_step(&x0, &ds, &c, &mut r1).unwrap();
    let r = restricted_kernel_step(&x0, &ds, &c, &wide, &mut r2).unwrap();
    assert!(wide.contains(g.a));
    assert_eq!(g, r);

    let narrow = LargeSetSpec::new(&ds, &c, x0.a - 1e-6).unwrap();
    let mut rejected = 0;
    for seed in 0..20 {
        let mut r1 = RngStream::new(seed, 0);
        let mut r2 = r1.clone();
        let g = gibbs_step(&x0, &ds, &c, &mut r1).unwrap();
        let r = restricted_kernel_step(&x0, &ds, &c, &narrow, &mut r2).unwrap();
        assert_eq!((g.mu, &g.theta), (r.mu, &r.theta));
        if narrow.contains(g.a) {
            assert_eq!(g.a, r.a);
        } else {
            assert_eq!(r.a, x0.a);
            rejected += 1;
        }
    }
    assert!(rejected > 0);

    let mut out = x0.clone();
    out.a = 1e-7;
    assert!(restricted_kernel_step(&out, &ds, &c, &wide, &mut RngStream::new(1, 1)).is_err());
}

fn line(xs: &[f64]) -> Vec<SuffState> {
    xs.iter().map(|&x| SuffState { theta_bar: x, a: 1.0 }).collect()
}

fn normals(n: usize, shift: f64, seed: u64) -> Vec<f64> {
    let mut r = RngStream::new(seed, 0);
    (0..n).map(|_| shift + r.std_normal()).collect()
}

#[test]
fn tv_estimate_examples() {
    let a = line(&normals(10_000, 0.0, 1));
    let grid = BinGrid::equal_mass(&a, 20, 1).unwrap();
    assert_eq!(tv_lower_bound_estimate(&a, &a, &grid).unwrap().tv, 0.0);
    let b = line(&normals(10_000, 100.0, 2));
    let mut both = a.clone();
    both.extend_from_slice(&b);
    let grid = BinGrid::equal_mass(&both, 20, 1).unwrap();
    assert_eq!(tv_lower_bound_estimate(&a, &b, &grid).unwrap().tv, 1.0);
    assert!(tv_lower_bound_estimate(&a, &[], &grid).is_err());

    let a = line(&normals(1_000_000, 0.0, 3));
    let b = line(&normals(1_000_000, 1.0, 4));
    let mut both = a.clone();
    both.extend_from_slice(&b);
    let grid = BinGrid::equal_mass(&both, 400, 1).unwrap();
    let est = tv_lower_bound_estimate(&a, &b, &grid).unwrap();
    let exact = 2.0 * norm_cdf(0.5) - 1.0;
    assert!((exact - 0.382_924_922_548_026).abs() < 1e-12);
    assert!(est.tv <= exact + 3.0 * est.se);
    assert!(est.tv > exact - 0.01);
}

#[test]
fn tv_estimates_never_exceed_known_tv() {
    for i in 0..10 {
        let shift = 0.1 * (i + 1) as f64;
        let a = line(&normals(100_000, 0.0, 10 + i));
        let b = line(&normals(100_000, shift, 20 + i));
        let grid = BinGrid::equal_mass(&a, 64, 1).unwrap();
        let est = tv_lower_bound_estimate(&a, &b, &grid).unwrap();
        let exact = 2.0 * norm_cdf(shift / 2.0) - 1.0;
        assert!(est.tv <= exact + 3.0 * est.se, "shift {shift}: {} vs {exact}", est.tv);
    }
}

#[test]
fn equal_mass_grid_shape() {
    let mut r = RngStream::new(5, 5);
    let xs: Vec<SuffState> = (0..64_000)
        .map(|_| SuffState { theta_bar: r.std_normal(), a: 1.0 + r.uniform() })
        .collect();
    let grid = BinGrid::equal_mass(&xs, 8, 8).unwrap();
    assert_eq!(grid.n_bins(), 64);
    let h = grid.histogram(&xs);
    assert_eq!(h.iter().sum::<u64>(), 64_000);
    assert!(h.iter().all(|&c| (c as i64 - 1000).abs() <= 8));
    let s = split_half_tv(&xs, &grid).unwrap();
    assert!(s.tv < 0.05);
}

#[test]
fn tv_curve_starts_near_one_and_is_reproducible() {
    let ds = synth(100, 7);
    let c = cfg();
    let x0 = SuffState::from(&initial_state(&ds, &c));
    let reference = reference_chain(&ds, &c, x0, 1, 0, 1000, 20_000, 5, None).unwrap();
    let grid = BinGrid::equal_mass(&reference, 16, 16).unwrap();
    let curve = tv_curve(&ds, &c, x0, 2000, 5, 3, &reference, &grid).unwrap();
    assert_eq!(curve.len(), 6);
    assert!(curve[0].tv > 0.9);
    let again = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| tv_curve(&ds, &c, x0, 2000, 5, 3, &reference, &grid).unwrap());
    assert_eq!(curve, again);
}

#[test]
fn exit_frequencies() {
    let ds = synth(100, 8);
    let c = cfg();
    let spec = LargeSetSpec::with_default_t(&ds, &c).unwrap();
    let x0 = initial_state(&ds, &c);
    let ex = exit_probability_estimate(&plan(5000, 10, 2), &ds, &c, &spec, &x0).unwrap();
    let mut running = 0.0;
    for e in &ex {
        assert!((0.0..=1.0).contains(&e.p_hat));
        assert!((e.se - (e.p_hat * (1.0 - e.p_hat) / 5000.0).sqrt()).abs() < 1e-15);
        running += e.p_hat;
        assert!((e.cumulative - running).abs() < 1e-9);
    }
    let wide = LargeSetSpec::new(&ds, &c, 1e-9).unwrap();
    let ex = exit_probability_estimate(&plan(5000, 10, 2), &ds, &c, &wide, &x0).unwrap();
    assert!(ex.iter().all(|e| e.p_hat <= 1e-3));
}

#[test]
fn hitting_times_and_return_bound() {
    let ds = synth(50, 9);
    let c = cfg();
    let rep = assemble_gibbs_bound(&ds, &c, &AssembleOptions::default()).unwrap();
    let spec = rep.large_set();
    let x0 = initial_state(&ds, &c);
    let k_grid: Vec<u64> = (5..=50).collect();
    let pp = PairPlan {
        n_pairs: 2000,
        n_steps: 60,
        stationary_burn_in: 0,
        seed: 4,
        j_max: 5,
    };
    let h = hitting_time_stats(&pp, rep.constants.d_small, rep.constants.alpha, &ds, &c, &spec, &x0, &k_grid).unwrap();
    for t in &h.returns {
        assert_eq!(t.first(), Some(&0));
    }
    for (k, n_k) in h.mean_n_k.iter().enumerate().skip(1) {
        assert!(*n_k >= 1.0, "N_{k} = {n_k}");
    }
    for w in h.mean_n_k.windows(2) {
        assert!(w[1] >= w[0]);
    }
    assert!(h.gaps.iter().flatten().all(|&g| g >= 1));

    let pp = PairPlan {
        stationary_burn_in: 500,
        seed: 5,
        ..pp
    };
    let h = hitting_time_stats(&pp, rep.constants.d_small, rep.constants.alpha, &ds, &c, &spec, &x0, &k_grid).unwrap();
    for chk in h.checks.iter().filter(|c| c.censored == 0.0) {
        assert!(chk.p_hat <= chk.bound + 3.0 * chk.se, "{chk:?}");
    }
}

#[test]
fn reference_chain_restriction() {
    let ds = synth(20, 10);
    let c = cfg();
    let spec = LargeSetSpec::with_default_t(&ds, &c).unwrap();
    let x0 = SuffState::from(&initial_state(&ds, &c));
    let r = reference_chain(&ds, &c, x0, 1, 0, 100, 5000, 2, Some(&spec)).unwrap();
    assert!(r.iter().all(|x| spec.contains(x.a)));
    let outside = SuffState { a: 0.1, ..x0 };
    assert!(reference_chain(&ds, &c, outside, 1, 0, 0, 10, 1, Some(&spec)).is_err());
    let (p, se) = stationary_exit_fraction(&r, &spec);
    assert_eq!((p, se), (0.0, 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tv_in_unit_interval(sa in 0u64..1000, sb in 0u64..1000, shift in -3.0f64..3.0) {
        let a = line(&normals(500, 0.0, sa));
        let b = line(&normals(700, shift, sb + 5000));
        let grid = BinGrid::equal_mass(&a, 10, 1).unwrap();
        let t = tv_lower_bound_estimate(&a, &b, &grid).unwrap();
        prop_assert!((0.0..=1.0).contains(&t.tv));
        prop_assert!(t.se >= 0.0);
    }

    #[test]
    fn same_plan_same_summary(seed in any::<u64>()) {
        let ds = synth(15, 11);
        let spec = LargeSetSpec::with_default_t(&ds, &cfg()).unwrap();
        let x0 = initial_state(&ds, &cfg());
        let a = run_ensemble(&plan(3, 10, seed), &ds, &cfg(), &spec, &x0, KernelMode::Sufficient).unwrap();
        let b = run_ensemble(&plan(3, 10, seed), &ds, &cfg(), &spec, &x0, KernelMode::Sufficient).unwrap();
        prop_assert_eq!(a, b);
    }
}
