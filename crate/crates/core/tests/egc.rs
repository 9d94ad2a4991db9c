use chrono::NaiveDate;
use fcixnet::egc::{
    bootstrap_p, egc_heatmaps, egc_measure, egc_network, network_heatmaps, BootstrapOptions, BootstrapScheme,
    CausalNetwork, EgcKind,
};
use fcixnet::panel::{daily_dates, SeriesTable};
use fcixnet::varmodel::VarSpec;
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn table(values: Array2<f64>) -> SeriesTable {
    let (k, t) = values.dim();
    let start = NaiveDate::from_ymd_opt(2010, 1, 1).unwrap();
    SeriesTable::new((0..k).map(|i| format!("s{i}")).collect(), daily_dates(start, t), values).unwrap()
}

fn noise(rng: &mut ChaCha8Rng, k: usize, t: usize) -> Array2<f64> {
    Array2::from_shape_fn((k, t), |_| rng.sample(StandardNormal))
}

/// Row 0 = x (white noise), row 1 = y with `y_t = b x_{t-1} + e_t`.
fn lagged_pair(rng: &mut ChaCha8Rng, b: f64, t: usize) -> Array2<f64> {
    let mut v = noise(rng, 2, t);
    for s in (1..t).rev() {
        v[[1, s]] += b * v[[0, s - 1]];
    }
    v
}

fn lstsq_rss(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let coef = x.clone().svd(true, true).solve(y, 1e-14).unwrap();
    (y - x * coef).norm_squared()
}

#[test]
fn analytic_lagged_measure() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tb = table(lagged_pair(&mut rng, 0.9, 100_000));
    let r = egc_measure(&tb, 0, 1, &VarSpec::new(1), EgcKind::Lagged).unwrap();
    assert!((r.measure - 1.81f64.ln()).abs() <= 0.02, "{}", r.measure);
    assert!((r.measure - (r.restricted_variance / r.unrestricted_variance).ln()).abs() < 1e-12);
}

#[test]
fn classical_granger_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..20 {
        let t = rng.random_range(60..400);
        let p = rng.random_range(1..4);
        let b = rng.random_range(-0.5..0.5);
        let tb = table(lagged_pair(&mut rng, b, t));
        let spec = VarSpec {
            p,
            include_instantaneous: false,
            include_intercept: true,
        };
        let got = egc_measure(&tb, 0, 1, &spec, EgcKind::Lagged).unwrap().measure;

        // y on (1, y lags) versus (1, y lags, x lags), written out by hand
        let v = tb.values();
        let n = t - p;
        let y = DVector::from_fn(n, |r, _| v[[1, p + r]]);
        let restricted = DMatrix::from_fn(n, 1 + p, |r, c| if c == 0 { 1.0 } else { v[[1, p + r - c]] });
        let full = DMatrix::from_fn(n, 1 + 2 * p, |r, c| match c {
            0 => 1.0,
            c if c <= p => v[[1, p + r - c]],
            c => v[[0, p + r - (c - p)]],
        });
        let want = (lstsq_rss(&restricted, &y) / lstsq_rss(&full, &y)).ln();
        assert!((got - want).abs() < 1e-10, "case {case}: {got} vs {want}");
    }
}

#[test]
fn measures_are_nonnegative_and_nested() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let k = rng.random_range(2..5);
        let p = rng.random_range(1..3);
        let t = rng.random_range(40..120);
        let tb = table(noise(&mut rng, k, t));
        let spec = VarSpec::new(p);
        let target = rng.random_range(0..k);
        let source = (target + 1 + rng.random_range(0..k - 1)) % k;
        let lagged = egc_measure(&tb, source, target, &spec, EgcKind::Lagged).unwrap().measure;
        let inst = egc_measure(&tb, source, target, &spec, EgcKind::Instantaneous).unwrap().measure;
        let total = egc_measure(&tb, source, target, &spec, EgcKind::Total).unwrap().measure;
        let own = egc_measure(&tb, target, target, &spec, EgcKind::SelfDependence).unwrap().measure;
        for m in [lagged, inst, total, own] {
            assert!(m >= 0.0 && m.is_finite());
        }
        assert!(total >= lagged.max(inst) - 1e-10);
    }
}

#[test]
fn independent_noise_gives_small_measures() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tb = table(noise(&mut rng, 2, 5000));
    let spec = VarSpec::new(1);
    for kind in [EgcKind::Lagged, EgcKind::Instantaneous, EgcKind::Total] {
        assert!(egc_measure(&tb, 0, 1, &spec, kind).unwrap().measure <= 0.01);
    }
    assert!(egc_measure(&tb, 1, 1, &spec, EgcKind::SelfDependence).unwrap().measure <= 0.01);
}

#[test]
fn invalid_kind_combinations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tb = table(noise(&mut rng, 2, 100));
    let off = VarSpec {
        p: 1,
        include_instantaneous: false,
        include_intercept: true,
    };
    assert!(egc_measure(&tb, 0, 1, &off, EgcKind::Instantaneous).is_err());
    assert!(egc_measure(&tb, 0, 0, &VarSpec::new(1), EgcKind::Lagged).is_err());
    assert!(egc_measure(&tb, 0, 1, &VarSpec::new(1), EgcKind::SelfDependence).is_err());
    assert!(bootstrap_p(&tb, 0, 1, &VarSpec::new(1), EgcKind::Lagged, &BootstrapOptions::new(0, 1)).is_err());
}

#[test]
fn strong_link_has_minimal_p() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tb = table(lagged_pair(&mut rng, 0.9, 2000));
    let r = bootstrap_p(&tb, 0, 1, &VarSpec::new(1), EgcKind::Lagged, &BootstrapOptions::new(500, 3)).unwrap();
    assert_eq!(r.p_value, Some(1.0 / 501.0));
    assert_eq!(r.bootstrap_count, 500);
}

#[test]
fn single_replication_p_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tb = table(noise(&mut rng, 2, 200));
    for seed in 0..10 {
        for scheme in [BootstrapScheme::Residual, BootstrapScheme::Permutation] {
            let opts = BootstrapOptions {
                replications: 1,
                seed,
                scheme,
            };
            let p = bootstrap_p(&tb, 0, 1, &VarSpec::new(1), EgcKind::Lagged, &opts).unwrap().p_value.unwrap();
            assert!(p == 0.5 || p == 1.0);
        }
    }
}

#[test]
fn bootstrap_is_seeded_and_thread_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tb = table(noise(&mut rng, 3, 300));
    let spec = VarSpec::new(2);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| egc_network(&tb, &spec, 0.2, &BootstrapOptions::new(50, 11)).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.results, b.results);
    assert_eq!(a.network, b.network);
    let c = egc_network(&tb, &spec, 0.2, &BootstrapOptions::new(50, 12)).unwrap();
    assert_ne!(a.results, c.results);
}

#[test]
fn relabelling_permutes_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tb = table(noise(&mut rng, 3, 200));
    let spec = VarSpec::new(1);
    let perm = [2, 0, 1];
    let permuted = tb.reorder(&perm).unwrap();
    for t in 0..3 {
        for s in 0..3 {
            let kinds: &[EgcKind] = if s == t {
                &[EgcKind::SelfDependence]
            } else {
                &[EgcKind::Lagged, EgcKind::Instantaneous, EgcKind::Total]
            };
            for &kind in kinds {
                let a = egc_measure(&permuted, s, t, &spec, kind).unwrap().measure;
                let b = egc_measure(&tb, perm[s], perm[t], &spec, kind).unwrap().measure;
                assert!((a - b).abs() < 1e-10, "{s}->{t} {kind:?}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn network_recovers_a_single_link_and_heatmaps_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut v = noise(&mut rng, 3, 1500);
    for s in (1..1500).rev() {
        v[[2, s]] += 0.6 * v[[0, s - 1]];
    }
    let tb = table(v);
    let run = egc_network(&tb, &VarSpec::new(1), 0.01, &BootstrapOptions::new(200, 5)).unwrap();
    let lagged: Vec<(usize, usize)> = run.network.edges_of_kind(EgcKind::Lagged).map(|e| (e.source, e.target)).collect();
    assert!(lagged.contains(&(0, 2)));
    assert_eq!(run.results.len(), 3 * 2 * 2 + 3);

    let h = egc_heatmaps(&run.results, 3, EgcKind::Lagged);
    for r in &run.results {
        let diag = r.source == r.target;
        if diag || r.kind == EgcKind::Lagged {
            assert_eq!(h.measure[[r.target, r.source]], r.measure);
            assert_eq!(h.probability[[r.target, r.source]], 1.0 - r.p_value.unwrap());
        }
    }
    let nh = network_heatmaps(&run.network, EgcKind::Lagged);
    assert_eq!(nh.measure[[2, 0]], h.measure[[2, 0]]);
    for e in run.network.edges_of_kind(EgcKind::Lagged) {
        assert!(e.p_value <= 0.01);
    }
}

#[test]
fn empty_network_heatmaps_are_zero_off_diagonal() {
    let net = CausalNetwork::new(vec!["a".into(), "b".into()], 0.01, vec![], vec![]).unwrap();
    let h = network_heatmaps(&net, EgcKind::Lagged);
    assert!(h.measure.iter().all(|v| *v == 0.0));
}

#[test]
fn network_json_schema_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tb = table(lagged_pair(&mut rng, 0.8, 600));
    let run = egc_network(&tb, &VarSpec::new(1), 0.05, &BootstrapOptions::new(100, 2)).unwrap();
    let text = serde_json::to_string(&run.network).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["nodes"], serde_json::json!(["s0", "s1"]));
    assert_eq!(v["alpha"], serde_json::json!(0.05));
    let e = &v["edges"][0];
    for key in ["src", "dst", "kind", "measure", "p"] {
        assert!(e.get(key).is_some(), "missing {key}");
    }
    assert!(v["self"].is_array());
    let back: CausalNetwork = serde_json::from_str(&text).unwrap();
    assert_eq!(back, run.network);

    let bad = r#"{"nodes":["a","b"],"alpha":0.01,"edges":[{"src":"a","dst":"c","kind":"lagged","measure":0.1,"p":0.001}]}"#;
    assert!(serde_json::from_str::<CausalNetwork>(bad).is_err());
    let over = r#"{"nodes":["a","b"],"alpha":0.01,"edges":[{"src":"a","dst":"b","kind":"lagged","measure":0.1,"p":0.5}]}"#;
    assert!(serde_json::from_str::<CausalNetwork>(over).is_err());
}
