use oracle_ql::calibrate::{crn_seeds, estimate_satisfaction, FnModel};
use oracle_ql::es::{evolve, EsConfig};
use oracle_ql::eval::percentile_nearest_rank;
use oracle_ql::memory::{discounted_returns, extract_oracle_targets, OracleAlignment, RingBuffer};
use oracle_ql::nnet::{huber_loss, MlpNetwork};
use oracle_ql::sim::{Trajectory, UncertainParams};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn trajectory(g: Vec<f64>) -> Trajectory {
    let horizon = g.len() - 1;
    Trajectory {
        states: vec![vec![0.0]; horizon + 1],
        controls: vec![vec![0.0]; horizon],
        rewards: vec![0.0; horizon],
        constraint_values: g.into_iter().map(|v| vec![v]).collect(),
        params: UncertainParams::default(),
    }
}

proptest! {
    #[test]
    fn ring_buffer_keeps_the_newest(cap in 1usize..20, items in prop::collection::vec(any::<i32>(), 0..60)) {
        let mut buf = RingBuffer::new(cap);
        buf.extend(items.iter().copied());
        let kept: Vec<i32> = buf.iter().copied().collect();
        prop_assert_eq!(&kept[..], &items[items.len().saturating_sub(cap)..]);
    }

    #[test]
    fn minibatch_indices_distinct_when_possible(len in 1usize..50, k in 1usize..50, seed in any::<u64>()) {
        let mut buf = RingBuffer::new(64);
        buf.extend(0..len);
        let idx = buf.sample_indices(k, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(idx.len(), k);
        prop_assert!(idx.iter().all(|i| *i < len));
        if len >= k {
            let mut sorted = idx.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), k);
        }
    }

    #[test]
    fn undiscounted_returns_are_suffix_sums(r in prop::collection::vec(-10.0f64..10.0, 1..30)) {
        let ret = discounted_returns(&r, 1.0);
        for t in 0..r.len() {
            let tail: f64 = r[t..].iter().sum();
            prop_assert!((ret[t] - tail).abs() <= 1e-9 * (1.0 + tail.abs()));
        }
    }

    #[test]
    fn oracle_targets_are_nonincreasing_upper_bounds(g in prop::collection::vec(-5.0f64..5.0, 2..25)) {
        let pts = extract_oracle_targets(&trajectory(g.clone()), OracleAlignment::Future);
        for (t, p) in pts.iter().enumerate() {
            prop_assert!(g[t + 1..].iter().all(|v| *v <= p.targets[0]));
            prop_assert!(g[t + 1..].contains(&p.targets[0]));
        }
        prop_assert!(pts.windows(2).all(|w| w[0].targets[0] >= w[1].targets[0]));
    }

    #[test]
    fn huber_is_symmetric_with_bounded_slope(e in -50.0f64..50.0, delta in 0.01f64..5.0) {
        let (l1, d1) = huber_loss(e, 0.0, delta);
        let (l2, d2) = huber_loss(-e, 0.0, delta);
        prop_assert!((l1 - l2).abs() < 1e-12 && (d1 + d2).abs() < 1e-12);
        prop_assert!(l1 >= 0.0 && d1.abs() <= delta + 1e-12);
    }

    #[test]
    fn es_stays_in_the_box(lo in -10.0f64..0.0, width in 0.1f64..10.0, seed in any::<u64>()) {
        let hi = lo + width;
        let cfg = EsConfig { population: 10, parents: 3, generations: 5, ..EsConfig::default() };
        let res = evolve(&cfg, &[lo, lo], &[hi, hi], &[], &mut ChaCha8Rng::seed_from_u64(seed), |c| {
            Ok(c.iter().map(|x| x[0] * 1e3 + x[1]).collect())
        }).unwrap();
        prop_assert!(res.best.iter().all(|x| (lo..=hi).contains(x)));
        prop_assert!(res.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn satisfaction_grows_with_backoff(b1 in -2.0f64..2.0, db in 0.0f64..2.0, base in any::<u64>()) {
        use rand_distr::{Distribution, StandardNormal};
        // Worst value xi - b with xi ~ N(0, 1) drawn from the episode seed.
        let model = FnModel {
            scales: vec![1.0],
            f: |b: &[f64], seed: u64| {
                let xi: f64 = StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(seed));
                Ok(vec![xi - b[0]])
            },
        };
        let seeds = crn_seeds(base, 64);
        let lo = estimate_satisfaction(&model, &[b1], &seeds, None).unwrap();
        let hi = estimate_satisfaction(&model, &[b1 + db], &seeds, None).unwrap();
        prop_assert!(hi.marginals[0] >= lo.marginals[0]);
        prop_assert!(hi.joint >= lo.joint);
    }

    #[test]
    fn network_text_round_trip(hidden in prop::collection::vec(1usize..6, 0..3), input in 1usize..5, seed in any::<u64>()) {
        let net = MlpNetwork::new(input, &hidden, &mut ChaCha8Rng::seed_from_u64(seed));
        let back = MlpNetwork::from_text(&net.to_text(), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(net, back);
    }

    #[test]
    fn percentiles_are_monotone(mut v in prop::collection::vec(-1e3f64..1e3, 1..40), p in 0.0f64..100.0, dp in 0.0f64..50.0) {
        v.sort_by(f64::total_cmp);
        prop_assert!(percentile_nearest_rank(&v, p) <= percentile_nearest_rank(&v, (p + dp).min(100.0)));
    }
}
