use maskeval_core::background::{CountSums, MapEstimator, RatePrior};
use maskeval_core::fusion::{
    extract_detection, log_mean_exp, wc_aggregate, Estimates, FusionGeometry, FusionMethod, ObsStats,
    ScoreMap, ScoreSeries, SeriesEntry, SpatialGrid,
};
use maskeval_core::harness::roc::{compute_roc, pd_at_fpr};
use maskeval_core::spectra::{BinLookup, BinningScheme};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn prior_and_counts() -> impl Strategy<Value = (RatePrior, CountSums)> {
    (2usize..7).prop_flat_map(|n| {
        (
            prop::collection::vec(1.0f64..200.0, n),
            prop::collection::vec(-0.5f64..0.5, n * n),
            prop::collection::vec(0.5f64..50.0, n),
            prop::collection::vec(0u32..4000, n),
            1usize..30,
        )
            .prop_map(move |(mean, mix, sd, counts, t)| {
                // Covariance = D (I + small symmetric) D, kept positive definite.
                let m = DMatrix::from_row_slice(n, n, &mix);
                let sym = (&m + m.transpose()) * (0.2 / n as f64) + DMatrix::identity(n, n);
                let d = DMatrix::from_diagonal(&DVector::from_vec(sd));
                let covariance = &d * sym * &d;
                let prior = RatePrior {
                    mean: DVector::from_vec(mean),
                    covariance,
                };
                let sums = CountSums {
                    counts: counts.into_iter().map(f64::from).collect(),
                    live_time: t as f64,
                };
                (prior, sums)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(64)
    })]

    #[test]
    fn map_beats_prior_mean_and_clipped_mle((prior, sums) in prior_and_counts()) {
        let est = MapEstimator::new(&prior).unwrap();
        let sol = est.solve(&sums).unwrap();
        prop_assert!(sol.iter().all(|&l| l > 0.0));
        let f = est.objective(&sums, &sol);
        let tol = 1e-9 * f.abs().max(1.0);
        prop_assert!(f >= est.objective(&sums, &prior.mean) - tol);
        let mle = DVector::from_iterator(
            sums.counts.len(),
            sums.counts.iter().map(|&x| (x / sums.live_time).max(1e-3)),
        );
        prop_assert!(f >= est.objective(&sums, &mle) - tol);
    }

    #[test]
    fn gradient_matches_finite_differences((prior, sums) in prior_and_counts(), scale in 0.5f64..2.0) {
        let est = MapEstimator::new(&prior).unwrap();
        let at = prior.mean.map(|m| m * scale);
        let g = est.gradient(&sums, &at);
        for k in 0..at.len() {
            let h = 1e-5 * at[k];
            let mut up = at.clone();
            let mut dn = at.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (est.objective(&sums, &up) - est.objective(&sums, &dn)) / (2.0 * h);
            let scale = g[k].abs().max(fd.abs()).max(1e-3);
            prop_assert!((fd - g[k]).abs() / scale < 1e-4, "bin {}: fd {} vs {}", k, fd, g[k]);
        }
    }

    #[test]
    fn wc_is_invariant_to_exposure_scale(
        obs in prop::collection::vec((0.0f64..200.0, -20.0f64..60.0, 0.5f64..900.0), 1..25),
        gamma in 1e-3f64..1e3,
    ) {
        let series = ScoreSeries {
            entries: obs
                .iter()
                .map(|&(position, s_hat, b_hat)| SeriesEntry {
                    position,
                    estimates: Estimates::Single(ObsStats { s_hat, b_hat, var: b_hat }),
                })
                .collect(),
            angles: None,
        };
        let grid = SpatialGrid::new((90.0, 110.0), (1.0, 40.0), 3.0).unwrap();
        let geom = FusionGeometry { array_area: 0.25, live_time: 1.0, efficiency: 0.5, window_coverage: 0.9 };
        let scaled = FusionGeometry { array_area: 0.25 * gamma, ..geom };
        let a = wc_aggregate(&series, &grid, &geom).unwrap();
        let b = wc_aggregate(&series, &grid, &scaled).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300), "{} vs {}", x, y);
        }
        if obs.len() == 1 {
            let (_, s, b) = obs[0];
            for x in &a.values {
                prop_assert!((x - s / b.sqrt()).abs() <= 1e-12 * x.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn widening_the_neighborhood_never_lowers_the_max(
        values in prop::collection::vec(-100.0f64..100.0, 21 * 5),
        center in 0.0f64..20.0,
        h in 0.0f64..10.0,
        extra in 0.0f64..10.0,
    ) {
        let grid = SpatialGrid::new((0.0, 20.0), (1.0, 5.0), 1.0).unwrap();
        let map = ScoreMap { grid, values, method: FusionMethod::Bayesian, degenerate: false };
        // A narrow window may hold no cells; one that does must stay covered when widened.
        if let Ok(n) = extract_detection(&map, center, h) {
            let wide = extract_detection(&map, center, h + extra).unwrap();
            prop_assert!(wide.score >= n.score);
            prop_assert!((n.along - center).abs() <= h);
        }
    }

    #[test]
    fn roc_is_monotone_with_fixed_endpoints(
        h1 in prop::collection::vec(-5i32..5, 1..60),
        h0 in prop::collection::vec(-5i32..5, 1..60),
    ) {
        let h1: Vec<f64> = h1.into_iter().map(f64::from).collect();
        let h0: Vec<f64> = h0.into_iter().map(f64::from).collect();
        let roc = compute_roc(&h1, &h0).unwrap();
        let first = roc.points.first().unwrap();
        let last = roc.points.last().unwrap();
        prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in roc.points.windows(2) {
            prop_assert!(w[1].threshold < w[0].threshold);
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
        }
        let auc = roc.auc();
        prop_assert!((0.0..=1.0).contains(&auc));
        let pd = pd_at_fpr(&roc, 0.1);
        prop_assert!(pd.fpr <= 0.1 && (0.0..=1.0).contains(&pd.pd));
    }

    #[test]
    fn bin_lookup_agrees_with_edges(e in 0.0f64..3500.0, n in 2usize..200) {
        let b = BinningScheme::quadratic(30.0, 3000.0, n).unwrap();
        let edges = b.edges();
        match b.bin_of(e) {
            BinLookup::Below => prop_assert!(e < edges[0]),
            BinLookup::Above => prop_assert!(e >= edges[n]),
            BinLookup::Bin(k) => prop_assert!(edges[k] <= e && e < edges[k + 1]),
        }
    }

    #[test]
    fn log_mean_exp_is_bounded(xs in prop::collection::vec(-800.0f64..800.0, 1..20)) {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let l = log_mean_exp(&xs);
        prop_assert!(l <= m + 1e-9 && l >= m - (xs.len() as f64).ln() - 1e-9);
    }
}
