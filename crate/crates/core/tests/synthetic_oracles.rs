use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};
use zegnn::diagnostics::pearson;
use zegnn::graph::{build_knn_graph, morans_i};
use zegnn::synthetic::{
    assign_regimes, compute_potentials, export_scenario, generate_covariates, generate_lattice, generate_outcome,
    generate_scenario, load_metadata, scenario_schema, true_gradients, voronoi_sites, ScenarioKind, ScenarioSpec,
};
use zegnn::tabular::load_dataset;

/// Realized corr(y, F_true) for the nonlinear scenario at seed 1, recorded
/// from the seeded generator as a regression value.
const GOLDEN_CORR_Y_F: f64 = 0.9959518668332288;

fn spec(kind: ScenarioKind, seed: u64) -> ScenarioSpec {
    ScenarioSpec::new(kind, seed)
}

#[test]
fn jittered_lattice_has_distinct_points() {
    let c = generate_lattice(&spec(ScenarioKind::Nonlinear, 5));
    let n = c.nrows();
    assert_eq!(n, 2500);
    let mut min_d = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let d = (c[[i, 0]] - c[[j, 0]]).hypot(c[[i, 1]] - c[[j, 1]]);
            min_d = min_d.min(d);
        }
    }
    assert!(min_d > 0.0);
    assert_eq!(c, generate_lattice(&spec(ScenarioKind::Nonlinear, 5)));
}

#[test]
fn covariates_are_standardized_and_autocorrelated() {
    let s = spec(ScenarioKind::Nonlinear, 2);
    let coords = generate_lattice(&s);
    let x = generate_covariates(coords.view(), &s);
    let g = build_knn_graph(coords.view(), 8).unwrap();
    for j in 0..5 {
        let col = x.column(j);
        let mean = col.mean().unwrap();
        let sd = (col.mapv(|v| (v - mean).powi(2)).sum() / col.len() as f64).sqrt();
        assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        let i = morans_i(col, &g).unwrap();
        println!("covariate x{} Moran's I (k=8) = {i:.4}", j + 1);
        assert!(i > 0.3, "x{} Moran's I {i}", j + 1);
    }
}

#[test]
fn self_only_smoothing_is_white_noise() {
    let mut draws = Vec::new();
    for seed in 0..40u64 {
        let mut s = spec(ScenarioKind::Nonlinear, seed);
        s.lattice_side = 12;
        s.smoothing_k = 1;
        let coords = generate_lattice(&s);
        let x = generate_covariates(coords.view(), &s);
        let g = build_knn_graph(coords.view(), 8).unwrap();
        for j in 0..5 {
            draws.push(morans_i(x.column(j), &g).unwrap());
        }
    }
    let m = draws.iter().sum::<f64>() / draws.len() as f64;
    let sd = (draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
    let se = sd / (draws.len() as f64).sqrt();
    let expected = -1.0 / 143.0;
    assert!((m - expected).abs() < 3.0 * se, "mean {m}, expected {expected}, se {se}");
}

#[test]
fn voronoi_labels_match_nearest_site_scan() {
    for seed in 0..5u64 {
        let s = spec(ScenarioKind::Nonlinear, seed);
        let coords = generate_lattice(&s);
        let labels = assign_regimes(coords.view(), &s);
        let sites = voronoi_sites(coords.view(), &s);
        for (i, r) in coords.rows().into_iter().enumerate() {
            let d: Vec<f64> = sites.iter().map(|p| (r[0] - p[0]).powi(2) + (r[1] - p[1]).powi(2)).collect();
            let nearest = (0..3).min_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
            assert_eq!(labels[i], nearest as i64 + 1);
        }
        for k in 1..=3 {
            let share = labels.iter().filter(|&&l| l == k).count() as f64 / labels.len() as f64;
            assert!(share >= 0.05, "seed {seed} regime {k} share {share}");
        }
    }
    let gl = spec(ScenarioKind::GlobalLinear, 0);
    assert!(assign_regimes(generate_lattice(&gl).view(), &gl).iter().all(|&l| l == 1));
}

/// Second implementation of the laws, written from exponentials only.
fn reference_potentials(x: ArrayView1<f64>, label: i64) -> (f64, f64) {
    let th = |v: f64| {
        let e = (2.0 * v).exp();
        (e - 1.0) / (e + 1.0)
    };
    let sig = |v: f64| 0.5 * (1.0 + th(v / 2.0));
    let s_shared = 0.8 * (3.0 * x[3]).sin() + 0.9 * (sig(2.0 * x[4]) - 0.5);
    match label {
        1 => (2.6 * x[0] + 2.2 * th(2.0 * x[1]) + 1.8 * th(2.2 * x[2]), s_shared),
        2 => (-2.6 * x[0] + 2.0 * x[1] * x[1] - 2.0 + 1.8 * th(2.2 * x[2]), s_shared),
        3 => (0.9 * x[0] + 2.6 * x[1] * x[2], 1.7 * (3.2 * x[3]).sin() + 1.5 * x[4] * x[4] - 1.5),
        _ => unreachable!(),
    }
}

#[test]
fn potentials_match_independent_evaluation() {
    let ds = generate_scenario(&spec(ScenarioKind::Nonlinear, 1)).unwrap();
    let x = ds.covariates();
    let labels = ds.regime_labels.clone().unwrap();
    let (e, s) = compute_potentials(x.view(), &labels, ScenarioKind::Nonlinear).unwrap();
    for i in 0..x.nrows() {
        let (re, rs) = reference_potentials(x.row(i), labels[i]);
        assert!((e[i] - re).abs() < 1e-12 && (s[i] - rs).abs() < 1e-12, "node {i}");
    }
}

#[test]
fn gradients_match_central_differences() {
    for kind in ScenarioKind::ALL {
        let ds = generate_scenario(&spec(kind, 3)).unwrap();
        let x = ds.covariates();
        let labels = ds.regime_labels.clone().unwrap();
        let (gf, ge, gs) = true_gradients(x.view(), &labels, kind).unwrap();
        let h = 1e-5;
        for j in 0..5 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.column_mut(j).mapv_inplace(|v| v + h);
            xm.column_mut(j).mapv_inplace(|v| v - h);
            let (ep, sp) = compute_potentials(xp.view(), &labels, kind).unwrap();
            let (em, sm) = compute_potentials(xm.view(), &labels, kind).unwrap();
            for i in 0..x.nrows() {
                let de = (ep[i] - em[i]) / (2.0 * h);
                let dsv = (sp[i] - sm[i]) / (2.0 * h);
                assert!((de - ge[[i, j]]).abs() < 1e-6, "{kind:?} dE node {i} col {j}");
                assert!((dsv - gs[[i, j]]).abs() < 1e-6, "{kind:?} dS node {i} col {j}");
                assert!(((de - dsv) - gf[[i, j]]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn noise_variance_matches_configured_scale() {
    let mut s = spec(ScenarioKind::GlobalLinear, 9);
    s.lattice_side = 100;
    s.rho = 0.0;
    s.eta_scale = 0.0;
    let coords = generate_lattice(&s);
    let zeros = Array1::<f64>::zeros(coords.nrows());
    let y = generate_outcome(zeros.view(), zeros.view(), coords.view(), &s).unwrap();
    let m = y.mean().unwrap();
    let var = y.mapv(|v| (v - m).powi(2)).sum() / (y.len() - 1) as f64;
    assert!((var / 0.0144 - 1.0).abs() < 0.05, "variance {var}");
}

#[test]
fn outcome_tracks_true_field_golden_value() {
    let ds = generate_scenario(&spec(ScenarioKind::Nonlinear, 1)).unwrap();
    let f = ds.truth.as_ref().unwrap().f_true.clone();
    let c = pearson(ds.y.view(), f.view()).unwrap();
    println!("corr(y, F_true) = {c:?}");
    assert!((c - GOLDEN_CORR_Y_F).abs() < 1e-12, "corr {c:?}");
}

#[test]
fn nonlinear_x1_gradient_is_a_three_level_step() {
    let ds = generate_scenario(&spec(ScenarioKind::Nonlinear, 7)).unwrap();
    let t = ds.truth.unwrap();
    let levels: BTreeSet<u64> = t.grad_f.column(0).iter().map(|v| v.to_bits()).collect();
    let expected: BTreeSet<u64> = [2.6f64, -2.6, 0.9].iter().map(|v| v.to_bits()).collect();
    assert_eq!(levels, expected);
}

#[test]
fn export_then_reload_is_bit_exact() {
    let s = spec(ScenarioKind::Nonlinear, 4);
    let ds = generate_scenario(&s).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (csv, json) = export_scenario(&ds, &s, dir.path(), "nl").unwrap();
    let back = load_dataset::<f64>(&csv, &scenario_schema()).unwrap();
    let bits = |a: &Array1<f64>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let bits2 = |a: &Array2<f64>| a.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.y), bits(&ds.y));
    assert_eq!(bits2(&back.coords), bits2(&ds.coords));
    assert_eq!(bits2(&back.covariates()), bits2(&ds.covariates()));
    assert_eq!(back.regime_labels, ds.regime_labels);
    let meta = load_metadata(&json).unwrap();
    assert_eq!(&meta.truth, ds.truth.as_ref().unwrap());
}

#[test]
fn generation_is_deterministic() {
    for kind in ScenarioKind::ALL {
        let a = generate_scenario(&spec(kind, 11)).unwrap();
        let b = generate_scenario(&spec(kind, 11)).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.covariates(), b.covariates());
    }
}
