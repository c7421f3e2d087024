use proptest::prelude::*;

use fluctlab::analysis::{
    detect_inactive, histogram, series_deltas, spread, spread_of_spread, Half, NeuronId,
    NeuronSpread,
};
use fluctlab::runstore::{standardize_channel, Channel};
use fluctlab::shapegen::{self, ShapeKind};

fn cfg() -> ProptestConfig {
    ProptestConfig {
        cases: 1000,
        ..ProptestConfig::default()
    }
}

/// Multiples of 2^-10 in about ±1000: sums and differences stay exact.
fn dyadic() -> impl Strategy<Value = f64> {
    (-(1i64 << 20)..(1i64 << 20)).prop_map(|k| k as f64 / 1024.0)
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 2..64)
}

fn spreads_of(v: &[f64]) -> Vec<NeuronSpread> {
    v.iter()
        .enumerate()
        .map(|(i, &s)| NeuronSpread {
            neuron: NeuronId {
                layer: i / 8,
                index: i % 8,
                half: Half::Encoder,
            },
            channel: Channel::Weights,
            spread: s,
        })
        .collect()
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn delta_spread_is_translation_invariant(
        rows in prop::collection::vec(prop::collection::vec(dyadic(), 3), 2..12),
        c in dyadic(),
    ) {
        let shifted: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x + c).collect()).collect();
        let a = spread(&series_deltas(&rows).unwrap()).unwrap();
        let b = spread(&series_deltas(&shifted).unwrap()).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn spread_is_scale_equivariant(v in values(), k in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0]) {
        let scaled: Vec<f64> = v.iter().map(|x| k * x).collect();
        let a = spread(&v).unwrap() * k.abs();
        let b = spread(&scaled).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()), "{} vs {}", a, b);
    }

    #[test]
    fn frozen_series_has_zero_spread(
        row in prop::collection::vec(-1e3f64..1e3, 1..20),
        epochs in 2usize..20,
    ) {
        let rows = vec![row; epochs];
        let d = series_deltas(&rows).unwrap();
        prop_assert!(d.iter().all(|&x| x == 0.0));
        prop_assert_eq!(spread(&d).unwrap(), 0.0);
    }

    #[test]
    fn spread_of_spread_ignores_order(v in prop::collection::vec(0.0f64..10.0, 1..64), seed in any::<u64>()) {
        let s = spreads_of(&v);
        let mut p = s.clone();
        let mut state = seed;
        for i in (1..p.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            p.swap(i, (state >> 33) as usize % (i + 1));
        }
        prop_assert_eq!(
            spread_of_spread(&s).unwrap().to_bits(),
            spread_of_spread(&p).unwrap().to_bits()
        );
    }

    #[test]
    fn inactive_set_grows_with_epsilon(
        v in prop::collection::vec(0.0f64..1e-3, 1..64),
        e1 in 1e-7f64..1e-3,
        e2 in 1e-7f64..1e-3,
    ) {
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let s = spreads_of(&v);
        let a = detect_inactive(&s, lo);
        let b = detect_inactive(&s, hi);
        prop_assert!(a.len() <= b.len());
        prop_assert!(a.iter().all(|n| b.contains(n)));
    }

    #[test]
    fn histogram_counts_everything(v in prop::collection::vec(0.0f64..5.0, 1..200), bins in 1usize..40) {
        let h = histogram(&v, bins).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<usize>(), v.len());
        prop_assert_eq!(h.edges.len(), h.counts.len() + 1);
        prop_assert!(h.edges.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn standardized_channel_moments(v in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let z = standardize_channel(&v).unwrap();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let std = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(z.iter().all(|&x| x == 0.0) || ((mean.abs() <= 1e-9) && (std - 1.0).abs() <= 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn generated_points_lie_in_unit_box(kind_ix in 0usize..8, count in 2usize..300, seed in any::<u64>()) {
        let kind = ShapeKind::ALL[kind_ix];
        let ds = shapegen::generate(kind, count, seed).unwrap();
        prop_assert_eq!(ds.points.len(), count);
        prop_assert!(ds.points.iter().flatten().all(|c| (-1.0..=1.0).contains(c)));
    }

    #[test]
    fn csv_round_trip(kind_ix in 0usize..8, count in 1usize..100, seed in any::<u64>()) {
        let ds = shapegen::generate(ShapeKind::ALL[kind_ix], count, seed).unwrap();
        let mut buf = Vec::new();
        shapegen::export_csv(&ds, &mut buf).unwrap();
        let back = shapegen::read_csv(&buf[..]).unwrap();
        prop_assert_eq!(back.len(), count);
        for (a, b) in ds.points.iter().zip(&back) {
            prop_assert!((a[0] - b[0]).abs() <= 1e-8 && (a[1] - b[1]).abs() <= 1e-8);
        }
    }
}
