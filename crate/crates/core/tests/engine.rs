use mvpp_core::diagnostics::chi_square_gof;
use mvpp_core::engine::{sa_diagnostic, FnObserver, RecordObserver};
use mvpp_core::format::f17;
use mvpp_core::models::{
    finite_polya_urn, finite_signed_urn, mm_infty_urn, protected_nodes_urn, rrf_urn, rrt_outdegree_urn,
};
use mvpp_core::{ColorPoint, Error, MvppState, RngStream, WeightedMeasure};
use proptest::prelude::*;

fn disc(x: u64) -> ColorPoint {
    ColorPoint::Discrete(x)
}

#[test]
fn init_examples() {
    let rrt = rrt_outdegree_urn().unwrap();
    let s = rrt.init(0).unwrap();
    assert_eq!(s.mp().atoms().map(|(p, w)| (p.clone(), w)).collect::<Vec<_>>(), vec![(disc(0), 1.0)]);

    let prot = protected_nodes_urn().unwrap();
    let s = prot.init(0).unwrap();
    assert_eq!(s.mp().weight(1), 2.0);
    assert_eq!(s.mp().total_mass(), 2.0);

    let empty = WeightedMeasure::dirac(disc(0), 0.0).unwrap();
    assert!(matches!(MvppState::init(empty, rrt.kernel.clone(), 0), Err(Error::EmptyMeasure)));
}

#[test]
fn balanced_mass_bookkeeping() {
    let rrt = rrt_outdegree_urn().unwrap();
    let mut s = rrt.init(4).unwrap();
    for n in 1..=10_000u64 {
        let rec = s.step().unwrap();
        assert_eq!(rec.n, n);
        assert!((rec.m_mass - (n as f64 + 1.0)).abs() < 1e-6);
    }
    let views = s.normalized_views().unwrap();
    assert!((views.m_over_n.total_mass() - (1.0 + 1.0 / 10_000.0)).abs() < 1e-9);
    assert!((views.eta_tilde.total_mass() - 1.0).abs() < 1e-12);
    assert!((views.m_tilde.total_mass() - 1.0).abs() < 1e-12);
}

#[test]
fn one_rrt_step_from_root() {
    let rrt = rrt_outdegree_urn().unwrap();
    let mut s = rrt.init(1).unwrap();
    s.step().unwrap();
    assert_eq!(s.m().weight(0), 1.0);
    assert_eq!(s.m().weight(1), 1.0);
    let v = s.normalized_views().unwrap();
    assert_eq!(v.m_tilde.weight(0), 0.5);
    assert_eq!(v.m_tilde.weight(1), 0.5);
    assert!(rrt.init(1).unwrap().normalized_views().is_err());
}

#[test]
fn run_strides_and_zero_steps() {
    let mm = mm_infty_urn(1.0, 2.0).unwrap();
    let mut s = mm.init(3).unwrap();
    let before = s.m().to_json();
    let trace = s.run(0, &mut [&mut RecordObserver { stride: 1 }]).unwrap();
    assert!(trace.is_empty());
    assert_eq!(s.step_count(), 0);
    assert_eq!(s.m().to_json(), before);

    let mut every = RecordObserver { stride: 1000 };
    let mut mass = FnObserver { stride: 25_000, f: |st: &MvppState, _: &_| Ok(vec![st.m().total_mass()]) };
    let trace = s.run(100_000, &mut [&mut every, &mut mass]).unwrap();
    assert_eq!(trace.rows[0].len(), 100);
    assert_eq!(trace.rows[1].len(), 4);
    assert!((trace.rows[1][3].values[0] - 100_001.0).abs() < 1e-6);
    assert_eq!(trace.rows[0][0].record.n, 1000);
}

fn serialized_run(seed: u64, steps: u64) -> String {
    let prot = protected_nodes_urn().unwrap();
    let mut s = prot.init(seed).unwrap();
    let mut out = String::new();
    let trace = s.run(steps, &mut [&mut RecordObserver { stride: 1 }]).unwrap();
    for row in &trace.rows[0] {
        let r = &row.record;
        out += &format!(
            "{},{},{},{},{}\n",
            r.n,
            r.drawn_color.csv_field(),
            f17(r.delta_mass),
            f17(r.m_mass),
            f17(r.mp_mass)
        );
    }
    out + &s.m().to_json()
}

#[test]
fn runs_are_deterministic_per_seed() {
    assert_eq!(serialized_run(12, 5000), serialized_run(12, 5000));
    assert_ne!(serialized_run(12, 5000), serialized_run(13, 5000));
    let a = rrt_outdegree_urn().unwrap().init_replica(7, 0).unwrap();
    let b = rrt_outdegree_urn().unwrap().init_replica(7, 1).unwrap();
    let (mut a, mut b) = (a, b);
    let ra: Vec<_> = (0..50).map(|_| a.step().unwrap().drawn_color).collect();
    let rb: Vec<_> = (0..50).map(|_| b.step().unwrap().drawn_color).collect();
    assert_ne!(ra, rb);
}

#[test]
fn failed_step_leaves_state_untouched() {
    // Drawing color 1 removes a full ball of color 2, of which only half exists.
    let spec = finite_signed_urn(&vec![vec![1.0, -1.0], vec![0.0, 1.0]], &[1.0, 1.0], None).unwrap();
    let m0 = WeightedMeasure::from_atoms(mvpp_core::Space::Discrete, [(disc(1), 10.0), (disc(2), 0.5)]).unwrap();
    let mut s = MvppState::init(m0, spec.kernel.clone(), 0).unwrap();
    let mut failures = 0;
    for _ in 0..200 {
        let before = (s.m().to_json(), s.eta().to_json(), s.step_count(), s.delta_mass_sum());
        match s.step() {
            Ok(_) => {}
            Err(Error::TenabilityViolation { .. }) => {
                failures += 1;
                assert_eq!(before, (s.m().to_json(), s.eta().to_json(), s.step_count(), s.delta_mass_sum()));
                break;
            }
            Err(e) => panic!("unexpected {e}"),
        }
    }
    assert_eq!(failures, 1);
    // The RNG is rolled back too: retrying fails identically.
    assert!(matches!(s.step(), Err(Error::TenabilityViolation { .. })));
}

#[test]
fn paranoid_mode_agrees_with_incremental_mp() {
    let prot = protected_nodes_urn().unwrap();
    let mut s = prot.init(8).unwrap().with_paranoid(true);
    for _ in 0..50_000 {
        s.step().unwrap();
    }
    assert!(s.mp_discrepancy().unwrap() < 1e-12);
    // m_n P(E) = number of nodes.
    assert_eq!(s.mp().total_mass(), 50_002.0);
}

#[test]
fn drawing_follows_mp() {
    // Freeze a weighted state and sample colors from m_n P directly.
    let prot = protected_nodes_urn().unwrap();
    let mut s = prot.init(21).unwrap();
    for _ in 0..2000 {
        s.step().unwrap();
    }
    let mp = s.mp();
    let max = mp.max_label().unwrap();
    let probs: Vec<f64> = (0..=max).map(|x| mp.weight(x) / mp.total_mass()).collect();
    let mut counts = vec![0u64; max as usize + 1];
    let mut rng = RngStream::new(99);
    for _ in 0..100_000 {
        counts[mp.sample_atom(&mut rng).unwrap().as_discrete().unwrap() as usize] += 1;
    }
    let keep: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] > 0.0).collect();
    let chi = chi_square_gof(
        &keep.iter().map(|&i| counts[i]).collect::<Vec<_>>(),
        &keep.iter().map(|&i| probs[i]).collect::<Vec<_>>(),
    )
    .unwrap();
    assert!(chi.p_value > 1e-3, "{chi:?}");
}

#[test]
fn sa_terms_on_balanced_kernel() {
    let rrt = rrt_outdegree_urn().unwrap();
    let mut s = rrt.init(2).unwrap();
    s.step().unwrap();
    let one = |_: &ColorPoint| 1.0;
    let f = |x: &ColorPoint| (x.as_discrete().unwrap() as f64).sin();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let before = s.clone();
        s.step().unwrap();
        let n = before.step_count() as f64;
        let t1 = sa_diagnostic(&before, &s, &one).unwrap();
        assert!((t1.gamma - 1.0 / (n + 1.0)).abs() < 1e-15 * (1.0 / n));
        assert_eq!((t1.f_dot, t1.u_dot), (0.0, 0.0));
        worst = worst.max(sa_diagnostic(&before, &s, &f).unwrap().residual.abs());
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn sa_needs_adjacent_states() {
    let rrt = rrt_outdegree_urn().unwrap();
    let s0 = rrt.init(2).unwrap();
    let mut s = s0.clone();
    s.step().unwrap();
    assert!(sa_diagnostic(&s0, &s, &|_| 1.0).is_err());
    let before = s.clone();
    s.step().unwrap();
    s.step().unwrap();
    assert!(sa_diagnostic(&before, &s, &|_| 1.0).is_err());
}

#[test]
fn weighted_finite_urn_draws_by_weight() {
    // Identity replacement with weights (1, 3): every step adds one ball of
    // the drawn color; m_n P(E) grows by the drawn weight.
    let spec = finite_polya_urn(&vec![vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 3.0], None).unwrap();
    let mut s = spec.init(5).unwrap();
    for _ in 0..1000 {
        let before = s.mp().total_mass();
        let rec = s.step().unwrap();
        let w = if rec.drawn_color == disc(1) { 1.0 } else { 3.0 };
        assert_eq!(rec.mp_mass - before, w);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bookkeeping_identities_hold(
        seed in any::<u64>(),
        steps in 1u64..3000,
        cut in 0.0f64..0.6,
        big in 0.0f64..0.4,
    ) {
        let grow = 1.0 - cut - big;
        prop_assume!(grow > 0.05);
        let spec = rrf_urn(&[(-1, cut), (1, grow), (3, big)], &[(1, 0.5), (2, 0.5)]).unwrap();
        let mut s = spec.init(seed).unwrap();
        for n in 1..=steps {
            let rec = s.step().unwrap();
            prop_assert_eq!(s.eta().total_mass(), n as f64);
            prop_assert!(rec.m_mass >= 0.0);
        }
        let expected = s.initial_mass() + s.delta_mass_sum();
        prop_assert!((s.m().total_mass() - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        prop_assert!((s.m().exact_mass() - expected).abs() <= 1e-9 * expected.abs().max(1.0));
        prop_assert!(s.m().is_nonnegative());
    }

    #[test]
    fn protected_mass_grows_by_zero_or_one(seed in any::<u64>()) {
        let spec = protected_nodes_urn().unwrap();
        let mut s = spec.init(seed).unwrap();
        for n in 1..=2000u64 {
            let rec = s.step().unwrap();
            let x = rec.drawn_color.as_discrete().unwrap();
            prop_assert!(rec.delta_mass == 0.0 || rec.delta_mass == 1.0);
            if x == 0 {
                prop_assert_eq!(rec.delta_mass, 0.0);
            }
            prop_assert_eq!(rec.mp_mass, n as f64 + 2.0);
        }
        prop_assert_eq!(s.m().total_mass(), 1.0 + s.delta_mass_sum());
    }
}
