use holo_core::analytics::{departure_time_sections, fit_fundamental_diagram, lorenz_curve, nearest_rank};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model(k: f64) -> f64 {
    15.0 * (1.0 - (k / 0.19f64).powf(0.05))
}

#[test]
fn noisy_fit_keeps_jam_density_within_ten_percent() {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<(f64, f64)> = (0..60)
            .map(|_| {
                let k = rng.random_range(0.002..0.185);
                (k, model(k) * (1.0 + rng.random_range(-0.05..0.05)))
            })
            .collect();
        let fit = fit_fundamental_diagram(&samples, 1.0, 0.05).unwrap();
        assert!((fit.k_j_hat / 0.19 - 1.0).abs() <= 0.1, "seed {seed}: {fit:?}");
    }
}

/// Well-separated groups of minutes around the given centers.
fn planted(centers: &[u32], per: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    centers
        .iter()
        .flat_map(|&c| (0..per).map(move |_| c))
        .map(|c| (f64::from(c) + rng.random_range(-10.0..10.0)).rem_euclid(1440.0))
        .collect()
}

proptest! {
    #[test]
    fn sections_ignore_order_and_inner_duplicates(seed in any::<u64>(), groups in 1usize..5, shift in 0u32..1440) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<u32> = (0..groups as u32).map(|g| (shift + g * 300) % 1440).collect();
        let mut pts = planted(&centers, 6, &mut rng);
        let base = departure_time_sections(&pts, 45.0, 3);
        prop_assert_eq!(base, groups);
        let mut shuffled = pts.clone();
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        prop_assert_eq!(departure_time_sections(&shuffled, 45.0, 3), base);
        let dup = pts[rng.random_range(0..pts.len())];
        pts.push(dup);
        prop_assert_eq!(departure_time_sections(&pts, 45.0, 3), base);
    }

    #[test]
    fn lorenz_is_monotone_concave_with_fixed_ends(d in prop::collection::vec(0.0f64..1e4, 1..200)) {
        prop_assume!(d.iter().sum::<f64>() > 0.0);
        let c = lorenz_curve(&d).unwrap();
        prop_assert_eq!(c.points[0], (0.0, 0.0));
        prop_assert_eq!(*c.points.last().unwrap(), (1.0, 1.0));
        for w in c.points.windows(2) {
            prop_assert!(w[1].0 > w[0].0 && w[1].1 >= w[0].1);
        }
        for w in c.points.windows(3) {
            let (s0, s1) = (w[1].1 - w[0].1, w[2].1 - w[1].1);
            prop_assert!(s1 <= s0 + 1e-12);
        }
    }

    #[test]
    fn nearest_rank_matches_sorted_index(v in prop::collection::vec(0u32..50, 1..60), pct in 1u32..=100) {
        let mut s = v.clone();
        s.sort_unstable();
        let rank = ((f64::from(pct) / 100.0) * s.len() as f64 - 1e-9).ceil().max(1.0) as usize;
        prop_assert_eq!(nearest_rank(&v, pct), Some(s[rank - 1]));
    }
}
