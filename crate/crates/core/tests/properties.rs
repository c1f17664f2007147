mod common;

use std::collections::BTreeSet;

use basisrisk::evaluation::insurance::{build_scheme, certainty_equivalent};
use basisrisk::evaluation::quantile::quantile_fit;
use basisrisk::*;
use common::*;
use proptest::prelude::*;

fn panel_strategy() -> impl Strategy<Value = YieldPanel> {
    (2usize..7, 3usize..9).prop_flat_map(|(n, t)| {
        prop::collection::vec(0.0f64..20.0, n * t)
            .prop_map(move |v| YieldPanel::from_rows(&v.chunks(t).map(<[f64]>::to_vec).collect::<Vec<_>>()).unwrap())
    })
}

fn labelled_panel() -> impl Strategy<Value = YieldPanel> {
    (2usize..25, 2usize..6).prop_flat_map(|(n, t)| {
        (
            prop::collection::vec(0.0f64..10.0, n * t),
            prop::collection::vec((0u8..3, 0u8..2), n),
            prop::collection::vec((-0.01f64..0.01, -0.01f64..0.01), n),
        )
            .prop_map(move |(v, labels, coords)| {
                let fields = labels
                    .iter()
                    .zip(&coords)
                    .enumerate()
                    .map(|(i, (&(l1, l2), &(dx, dy)))| {
                        FieldMeta::new(format!("f{i}"))
                            .with_coords(36.0 + dx, 0.5 + dy)
                            .with_zone(ZoneLevel::L1, format!("c{l1}"))
                            .with_zone(ZoneLevel::L2, format!("c{l1}s{l2}"))
                    })
                    .collect();
                let periods = (0..t).map(|k| format!("{}", 2000 + k)).collect();
                YieldPanel::new(fields, periods, v).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zones_partition_the_panel(panel in labelled_panel()) {
        for level in [ZoneLevel::L0, ZoneLevel::L1, ZoneLevel::L2] {
            let zones = panel.zones(level).unwrap();
            let mut seen = BTreeSet::new();
            for (zone, idx) in &zones {
                let sub = panel.subset_by_zone(level, zone).unwrap();
                prop_assert_eq!(sub.n_fields(), idx.len());
                for f in sub.fields() {
                    prop_assert!(seen.insert(f.field_id.clone()), "overlap at {}", f.field_id);
                }
            }
            prop_assert_eq!(seen.len(), panel.n_fields());
        }
    }

    #[test]
    fn neighborhoods_grow_with_radius(
        panel in labelled_panel(),
        r1 in 0.0f64..2000.0,
        dr in 0.0f64..2000.0,
        excl in 0.0f64..300.0,
    ) {
        let center = panel.fields()[0].field_id.clone();
        let small = panel.neighborhood(&center, r1 + excl, excl).unwrap();
        let large = panel.neighborhood(&center, r1 + dr + excl, excl).unwrap();
        let big: BTreeSet<_> = large.fields().iter().map(|f| f.field_id.clone()).collect();
        prop_assert!(small.fields().iter().all(|f| big.contains(&f.field_id)));
        prop_assert!(small.fields().iter().any(|f| f.field_id == center));
    }

    #[test]
    fn csv_round_trip_is_bit_identical(panel in labelled_panel()) {
        let mut buf = Vec::new();
        write_panel(&panel, &mut buf).unwrap();
        let (back, report) = read_panel(&buf[..], &Schema::default(), FilterPolicy::Reject).unwrap();
        prop_assert_eq!(report.dropped_fields.len(), 0);
        prop_assert_eq!(back.values(), panel.values());
        prop_assert_eq!(back.fields(), panel.fields());
    }

    #[test]
    fn optimum_bounds_every_index(panel in panel_strategy(), seed in any::<u64>()) {
        let Ok(bound) = zone_bound(&panel, Metric::Avg, Denominator::Unbiased) else {
            return Ok(());
        };
        let mut r = rng(seed);
        for _ in 0..50 {
            let w = unit_vector(panel.n_fields(), &mut r);
            let spec = IndexWeights::custom(w).into();
            match decompose(&panel, &spec, Metric::Avg, Denominator::Unbiased) {
                Ok(d) => {
                    prop_assert!(d.r2_bar <= bound + 1e-9);
                    prop_assert!(d.design_risk >= -1e-9);
                    prop_assert_eq!(d.total_risk, d.zonal_risk + d.design_risk);
                }
                Err(Error::DegenerateIndex(_)) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }

    #[test]
    fn weight_scale_invariance(panel in panel_strategy(), k in -6i32..6, neg in any::<bool>()) {
        let w: Vec<f64> = (0..panel.n_fields()).map(|i| 1.0 + i as f64 * 0.37).collect();
        let c = if neg { -(2f64.powi(k)) } else { 2f64.powi(k) };
        let scaled: Vec<f64> = w.iter().map(|x| c * x).collect();
        let a = decompose(&panel, &IndexWeights::custom(w).into(), Metric::Avg, Denominator::Unbiased);
        let b = decompose(&panel, &IndexWeights::custom(scaled).into(), Metric::Avg, Denominator::Unbiased);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.r2_bar, b.r2_bar);
                prop_assert_eq!(a.design_risk, b.design_risk);
                prop_assert_eq!(a.per_field_r2, b.per_field_r2);
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
        }
    }

    #[test]
    fn per_field_affine_invariance(panel in panel_strategy(), scale in 0.1f64..10.0, shift in 0.0f64..50.0) {
        let f = IndexSeries::new(
            (0..panel.n_periods()).map(|k| (k as f64).sin()).collect(),
            "probe",
            IndexSource::InputBased,
        );
        let base = regress_fields(&panel, &f).unwrap();
        let rows: Vec<Vec<f64>> = (0..panel.n_fields())
            .map(|i| {
                let s = if i == 0 { scale } else { 1.0 };
                panel.series(i).iter().map(|y| s * y + shift).collect()
            })
            .collect();
        let moved = regress_fields(&YieldPanel::from_rows(&rows).unwrap(), &f).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            prop_assert!((a.r2 - b.r2).abs() < 1e-9);
        }
    }

    #[test]
    fn correlation_share_ignores_field_scale(panel in panel_strategy(), scale in 0.1f64..10.0) {
        let Ok(a) = zone_bound(&panel, Metric::Avg, Denominator::Unbiased) else {
            return Ok(());
        };
        let rows: Vec<Vec<f64>> = (0..panel.n_fields())
            .map(|i| panel.series(i).iter().map(|y| if i == 1 { y * scale } else { *y }).collect())
            .collect();
        let b = zone_bound(&YieldPanel::from_rows(&rows).unwrap(), Metric::Avg, Denominator::Unbiased).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        let m = compute_moments(&panel, Denominator::Unbiased).unwrap();
        let n_eff = m.n_effective() as f64;
        prop_assert!(a >= 1.0 / n_eff - 1e-9);
    }

    #[test]
    fn eigenvalues_sum_to_trace(panel in panel_strategy()) {
        let m = compute_moments(&panel, Denominator::Unbiased).unwrap();
        if let Ok(e) = m.eigen(Target::Covariance) {
            let sum: f64 = e.eigenvalues.iter().sum();
            prop_assert!((sum - e.trace).abs() <= 1e-9 * e.trace);
            prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        }
        prop_assert!(m.corr.iter().all(|c| c.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn quantile_model_nests_null(
        y in prop::collection::vec(0.0f64..10.0, 4..30),
        tau in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let f = unit_vector(y.len(), &mut r);
        let q = quantile_fit(&y, &f, tau).unwrap();
        prop_assert!(q.v_model <= q.v_null);
        if q.v_null > 0.0 {
            prop_assert!((0.0..=1.0).contains(&q.pseudo_r2));
        }
    }

    #[test]
    fn fair_premium_and_jensen(zone in prop::collection::vec(1.0f64..10.0, 2..20), trigger in 0.5f64..1.0) {
        let s = build_scheme(&zone, trigger).unwrap();
        prop_assert!(s.indemnities.iter().all(|i| *i >= 0.0));
        prop_assert!((s.premium - mean(&s.indemnities)).abs() <= 1e-12 * (1.0 + s.premium));
        let insured = s.insured(&zone);
        prop_assert!((mean(&insured) - mean(&zone)).abs() <= 1e-12 * mean(&zone));
        let ce = certainty_equivalent(&zone, 1.5).unwrap();
        prop_assert!(ce <= mean(&zone) * (1.0 + 1e-12));
    }
}
