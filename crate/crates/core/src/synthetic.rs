//! Simulation scenarios with known regimes, potentials and gradients.
//!
//! Three scenarios share one jittered 50 × 50 lattice on the unit square and
//! five spatially smoothed covariates; they differ only in how the burden
//! potential `E` and capacity potential `S` depend on the covariates. The
//! ground-truth temperature is 1, so `F = E − S`.
//!
//! Regime laws (label → law):
//!
//! * `1` (positive-slope regime):
//!   `E = 2.6x₁ + 2.2·tanh(2x₂) + 1.8·tanh(2.2x₃)`,
//!   `S = 0.8·sin(3x₄) + 0.9·(σ(2x₅) − 0.5)`.
//!   This law is a reconstruction: only its gradients (`+2.6` in `x₁`,
//!   `4.4·sech²(2x₂)` in `x₂`) are pinned down; the `x₃…x₅` terms are taken
//!   from regime 2.
//! * `2` (sign-flip regime):
//!   `E = −2.6x₁ + 2(x₂² − 1) + 1.8·tanh(2.2x₃)`, `S` as regime 1.
//! * `3` (interaction regime):
//!   `E = 0.9x₁ + 2.6·x₂x₃`, `S = 1.7·sin(3.2x₄) + 1.5·(x₅² − 1)`.
//! * Global linear (single regime, label 1):
//!   `E = 2.6x₁ + 1.0x₂ + 0.8x₃`, `S = 0.6x₄ + 0.5x₅`.
//!
//! `x₁…x₃` form the burden block and `x₄, x₅` the capacity block.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, nearest_neighbors};
use crate::tabular::{standardize, write_atomic, write_dataset, RoleSchema, SpatialDataset};

const STREAM_JITTER: u64 = 1;
const STREAM_COVARIATE: u64 = 10;
const STREAM_ETA: u64 = 20;
const STREAM_NOISE: u64 = 21;
const STREAM_VORONOI: u64 = 22;

/// Smallest share of nodes each Voronoi regime must hold.
pub const MIN_REGIME_SHARE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    GlobalLinear,
    LocalLinear,
    Nonlinear,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [
        ScenarioKind::GlobalLinear,
        ScenarioKind::LocalLinear,
        ScenarioKind::Nonlinear,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::GlobalLinear => "global-linear",
            ScenarioKind::LocalLinear => "local-linear",
            ScenarioKind::Nonlinear => "nonlinear",
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global-linear" | "global_linear" => Ok(ScenarioKind::GlobalLinear),
            "local-linear" | "local_linear" => Ok(ScenarioKind::LocalLinear),
            "nonlinear" | "non-linear" => Ok(ScenarioKind::Nonlinear),
            other => Err(Error::Parameter(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub lattice_side: usize,
    pub p: usize,
    /// Half-width of the uniform coordinate jitter.
    pub jitter_scale: f64,
    pub smoothing_k: usize,
    /// Neighbourhood size of the graph carrying the spillover term.
    pub spillover_k: usize,
    pub rho: f64,
    pub noise_sd: f64,
    pub eta_scale: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, seed: u64) -> Self {
        let side = 50;
        ScenarioSpec {
            kind,
            lattice_side: side,
            p: 5,
            jitter_scale: 0.2 / (side - 1) as f64,
            smoothing_k: 15,
            spillover_k: 8,
            rho: 0.1,
            noise_sd: 0.12,
            eta_scale: 0.3,
            seed,
        }
    }

    pub fn n(&self) -> usize {
        self.lattice_side * self.lattice_side
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Parameter(format!("rho = {} outside [0, 1)", self.rho)));
        }
        if self.noise_sd < 0.0 || !self.noise_sd.is_finite() {
            return Err(Error::Parameter("noise_sd must be a finite non-negative value".into()));
        }
        if self.p != 5 {
            return Err(Error::Parameter("the regime laws are defined for p = 5".into()));
        }
        if self.lattice_side < 2 {
            return Err(Error::Parameter("lattice_side must be at least 2".into()));
        }
        if self.smoothing_k == 0 || self.smoothing_k > self.n() {
            return Err(Error::Parameter("smoothing_k outside 1..=N".into()));
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Closed-form truth attached to a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFields {
    pub e_true: Array1<f64>,
    pub s_true: Array1<f64>,
    pub f_true: Array1<f64>,
    pub regime: Vec<i64>,
    pub grad_f: Array2<f64>,
    pub grad_e: Array2<f64>,
    pub grad_s: Array2<f64>,
}

impl GroundTruthFields {
    pub fn subset(&self, rows: &[usize]) -> Self {
        GroundTruthFields {
            e_true: self.e_true.select(Axis(0), rows),
            s_true: self.s_true.select(Axis(0), rows),
            f_true: self.f_true.select(Axis(0), rows),
            regime: rows.iter().map(|&r| self.regime[r]).collect(),
            grad_f: self.grad_f.select(Axis(0), rows),
            grad_e: self.grad_e.select(Axis(0), rows),
            grad_s: self.grad_s.select(Axis(0), rows),
        }
    }
}

/// `side × side` lattice over `[0,1]²` with uniform jitter in `±jitter_scale`.
/// Row-major: node `r·side + c` sits at `(c, r)/(side − 1)`.
pub fn generate_lattice(spec: &ScenarioSpec) -> Array2<f64> {
    let side = spec.lattice_side;
    let span = (side - 1) as f64;
    let mut rng = spec.rng(STREAM_JITTER);
    let mut coords = Array2::zeros((side * side, 2));
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            let (jx, jy) = if spec.jitter_scale > 0.0 {
                (
                    rng.gen_range(-spec.jitter_scale..=spec.jitter_scale),
                    rng.gen_range(-spec.jitter_scale..=spec.jitter_scale),
                )
            } else {
                (0.0, 0.0)
            };
            coords[[i, 0]] = c as f64 / span + jx;
            coords[[i, 1]] = r as f64 / span + jy;
        }
    }
    coords
}

/// Standard-normal field averaged over each node's `k` nearest nodes
/// (itself included), then z-scored.
fn smoothed_field(neighbors: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Array1<f64> {
    let n = neighbors.len();
    let raw: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let smooth = Array1::from_iter(
        neighbors
            .iter()
            .map(|nb| nb.iter().map(|&j| raw[j]).sum::<f64>() / nb.len() as f64),
    );
    standardize(smooth.view())
        .map(|(z, _, _)| z)
        .expect("smoothed Gaussian field has positive variance")
}

/// Five spatially correlated covariates, one independent random stream each.
pub fn generate_covariates(coords: ArrayView2<f64>, spec: &ScenarioSpec) -> Array2<f64> {
    let nb = nearest_neighbors(coords, spec.smoothing_k, true);
    let mut x = Array2::zeros((coords.nrows(), spec.p));
    for j in 0..spec.p {
        let mut rng = spec.rng(STREAM_COVARIATE + j as u64);
        x.column_mut(j).assign(&smoothed_field(&nb, &mut rng));
    }
    x
}

/// Regime label per node: all `1` for global linear; for local linear `1` in
/// the upper half (`y ≥ 0.5`) and `2`/`3` in the lower-left/lower-right; for
/// nonlinear the index (+1) of the nearest of three seeded Voronoi sites.
pub fn assign_regimes(coords: ArrayView2<f64>, spec: &ScenarioSpec) -> Vec<i64> {
    match spec.kind {
        ScenarioKind::GlobalLinear => vec![1; coords.nrows()],
        ScenarioKind::LocalLinear => coords
            .rows()
            .into_iter()
            .map(|r| {
                if r[1] >= 0.5 {
                    1
                } else if r[0] < 0.5 {
                    2
                } else {
                    3
                }
            })
            .collect(),
        ScenarioKind::Nonlinear => {
            let sites = voronoi_sites(coords, spec);
            voronoi_labels(coords, &sites)
        }
    }
}

/// Three Voronoi sites in `[0,1]²`; redrawn from the same stream until every
/// cell holds at least [`MIN_REGIME_SHARE`] of the nodes.
pub fn voronoi_sites(coords: ArrayView2<f64>, spec: &ScenarioSpec) -> [[f64; 2]; 3] {
    let mut rng = spec.rng(STREAM_VORONOI);
    let n = coords.nrows() as f64;
    loop {
        let sites = [
            [rng.gen::<f64>(), rng.gen::<f64>()],
            [rng.gen::<f64>(), rng.gen::<f64>()],
            [rng.gen::<f64>(), rng.gen::<f64>()],
        ];
        let labels = voronoi_labels(coords, &sites);
        let ok = (1..=3).all(|k| {
            labels.iter().filter(|&&l| l == k).count() as f64 >= MIN_REGIME_SHARE * n
        });
        if ok {
            return sites;
        }
    }
}

fn voronoi_labels(coords: ArrayView2<f64>, sites: &[[f64; 2]; 3]) -> Vec<i64> {
    coords
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (k, s) in sites.iter().enumerate() {
                let d = (r[0] - s[0]).powi(2) + (r[1] - s[1]).powi(2);
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            best as i64 + 1
        })
        .collect()
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn sech2(v: f64) -> f64 {
    let c = v.cosh();
    1.0 / (c * c)
}

/// The burden/capacity law in force at one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Law {
    Global,
    PositiveSlope,
    SignFlip,
    Interaction,
}

fn law(kind: ScenarioKind, label: i64) -> Result<Law> {
    match (kind, label) {
        (ScenarioKind::GlobalLinear, 1) => Ok(Law::Global),
        (ScenarioKind::GlobalLinear, l) => Err(Error::Parameter(format!(
            "global-linear scenario has a single regime, got label {l}"
        ))),
        (_, 1) => Ok(Law::PositiveSlope),
        (_, 2) => Ok(Law::SignFlip),
        (_, 3) => Ok(Law::Interaction),
        (_, l) => Err(Error::Parameter(format!("unknown regime label {l}"))),
    }
}

fn potentials_at(law: Law, x: ArrayView1<f64>) -> (f64, f64) {
    let (x1, x2, x3, x4, x5) = (x[0], x[1], x[2], x[3], x[4]);
    match law {
        Law::Global => (2.6 * x1 + 1.0 * x2 + 0.8 * x3, 0.6 * x4 + 0.5 * x5),
        Law::PositiveSlope => (
            2.6 * x1 + 2.2 * (2.0 * x2).tanh() + 1.8 * (2.2 * x3).tanh(),
            0.8 * (3.0 * x4).sin() + 0.9 * (logistic(2.0 * x5) - 0.5),
        ),
        Law::SignFlip => (
            -2.6 * x1 + 2.0 * (x2 * x2 - 1.0) + 1.8 * (2.2 * x3).tanh(),
            0.8 * (3.0 * x4).sin() + 0.9 * (logistic(2.0 * x5) - 0.5),
        ),
        Law::Interaction => (
            0.9 * x1 + 2.6 * (x2 * x3),
            1.7 * (3.2 * x4).sin() + 1.5 * (x5 * x5 - 1.0),
        ),
    }
}

fn gradients_at(law: Law, x: ArrayView1<f64>) -> ([f64; 5], [f64; 5]) {
    let (x2, x3, x4, x5) = (x[1], x[2], x[3], x[4]);
    let shared_s = || {
        let s = logistic(2.0 * x5);
        [0.0, 0.0, 0.0, 2.4 * (3.0 * x4).cos(), 1.8 * s * (1.0 - s)]
    };
    match law {
        Law::Global => ([2.6, 1.0, 0.8, 0.0, 0.0], [0.0, 0.0, 0.0, 0.6, 0.5]),
        Law::PositiveSlope => (
            [2.6, 4.4 * sech2(2.0 * x2), 3.96 * sech2(2.2 * x3), 0.0, 0.0],
            shared_s(),
        ),
        Law::SignFlip => (
            [-2.6, 4.0 * x2, 3.96 * sech2(2.2 * x3), 0.0, 0.0],
            shared_s(),
        ),
        Law::Interaction => (
            [0.9, 2.6 * x3, 2.6 * x2, 0.0, 0.0],
            [0.0, 0.0, 0.0, 5.44 * (3.2 * x4).cos(), 3.0 * x5],
        ),
    }
}

fn check_shape(x: &ArrayView2<f64>, labels: &[i64]) -> Result<()> {
    if x.ncols() != 5 {
        return Err(Error::Dimension(format!("expected 5 covariates, got {}", x.ncols())));
    }
    if x.nrows() != labels.len() {
        return Err(Error::Dimension("label count differs from covariate rows".into()));
    }
    Ok(())
}

/// `(E_true, S_true)` at every node.
pub fn compute_potentials(
    x: ArrayView2<f64>,
    labels: &[i64],
    kind: ScenarioKind,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_shape(&x, labels)?;
    let n = x.nrows();
    let mut e = Array1::zeros(n);
    let mut s = Array1::zeros(n);
    for i in 0..n {
        let (ei, si) = potentials_at(law(kind, labels[i])?, x.row(i));
        e[i] = ei;
        s[i] = si;
    }
    Ok((e, s))
}

/// Analytical `(∂F/∂x, ∂E/∂x, ∂S/∂x)`, each `N × 5`, with `∂F = ∂E − ∂S`.
pub fn true_gradients(
    x: ArrayView2<f64>,
    labels: &[i64],
    kind: ScenarioKind,
) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    check_shape(&x, labels)?;
    let n = x.nrows();
    let mut ge = Array2::zeros((n, 5));
    let mut gs = Array2::zeros((n, 5));
    for i in 0..n {
        let (de, ds) = gradients_at(law(kind, labels[i])?, x.row(i));
        for j in 0..5 {
            ge[[i, j]] = de[j];
            gs[[i, j]] = ds[j];
        }
    }
    let gf = &ge - &gs;
    Ok((gf, ge, gs))
}

/// Observed outcome `y = (E − S) + ρ·(ÃF) + η + ε` with `F = E − S`, a
/// smoothed spatial error field `η` scaled by `eta_scale` and white noise
/// `ε ~ N(0, noise_sd²)`.
pub fn generate_outcome(
    e_true: ArrayView1<f64>,
    s_true: ArrayView1<f64>,
    coords: ArrayView2<f64>,
    spec: &ScenarioSpec,
) -> Result<Array1<f64>> {
    let n = e_true.len();
    let f = &e_true - &s_true;
    let graph = build_knn_graph(coords, spec.spillover_k)?;
    let spill = graph.diffuse(f.view().insert_axis(Axis(1)))?.remove_axis(Axis(1));
    let eta = if spec.eta_scale != 0.0 {
        let nb = nearest_neighbors(coords, spec.smoothing_k, true);
        smoothed_field(&nb, &mut spec.rng(STREAM_ETA)) * spec.eta_scale
    } else {
        Array1::zeros(n)
    };
    let mut rng = spec.rng(STREAM_NOISE);
    let noise = Normal::new(0.0, spec.noise_sd)
        .map_err(|e| Error::Parameter(format!("noise_sd: {e}")))?;
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let eps = if spec.noise_sd > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        y[i] = f[i] + spec.rho * spill[i] + eta[i] + eps;
    }
    Ok(y)
}

pub const COVARIATE_NAMES: [&str; 5] = ["x1", "x2", "x3", "x4", "x5"];

/// Column schema of exported scenarios.
pub fn scenario_schema() -> RoleSchema {
    RoleSchema {
        outcome: "y".into(),
        coord_x: "cx".into(),
        coord_y: "cy".into(),
        burden_cols: vec!["x1".into(), "x2".into(), "x3".into()],
        capacity_cols: vec!["x4".into(), "x5".into()],
        regime_col: Some("regime".into()),
    }
}

/// Full scenario: lattice, covariates, regimes, truth and outcome.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<SpatialDataset<f64>> {
    spec.validate()?;
    let coords = generate_lattice(spec);
    let x = generate_covariates(coords.view(), spec);
    let labels = assign_regimes(coords.view(), spec);
    let (e, s) = compute_potentials(x.view(), &labels, spec.kind)?;
    let (gf, ge, gs) = true_gradients(x.view(), &labels, spec.kind)?;
    let y = generate_outcome(e.view(), s.view(), coords.view(), spec)?;
    let f = &e - &s;
    let n = y.len();
    let schema = scenario_schema();
    Ok(SpatialDataset {
        coords,
        x_burden: x.slice(ndarray::s![.., 0..3]).to_owned(),
        x_capacity: x.slice(ndarray::s![.., 3..5]).to_owned(),
        y,
        regime_labels: Some(labels.clone()),
        truth: Some(GroundTruthFields {
            e_true: e,
            s_true: s,
            f_true: f,
            regime: labels,
            grad_f: gf,
            grad_e: ge,
            grad_s: gs,
        }),
        node_ids: (0..n).collect(),
        burden_names: schema.burden_cols.clone(),
        capacity_names: schema.capacity_cols.clone(),
    })
}

/// Sidecar written next to an exported scenario so the truth survives a CSV round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub format_version: u32,
    pub spec: ScenarioSpec,
    pub laws: Vec<String>,
    pub voronoi_sites: Option<Vec<[f64; 2]>>,
    pub regime_labels: Vec<i64>,
    pub truth: GroundTruthFields,
}

impl ScenarioMetadata {
    pub fn laws_for(kind: ScenarioKind) -> Vec<String> {
        let shared_s = "S = 0.8 sin(3 x4) + 0.9 (logistic(2 x5) - 0.5)";
        match kind {
            ScenarioKind::GlobalLinear => vec![
                "regime 1: E = 2.6 x1 + 1.0 x2 + 0.8 x3; S = 0.6 x4 + 0.5 x5".into(),
            ],
            _ => vec![
                format!("regime 1: E = 2.6 x1 + 2.2 tanh(2 x2) + 1.8 tanh(2.2 x3); {shared_s} (reconstructed)"),
                format!("regime 2: E = -2.6 x1 + 2 (x2^2 - 1) + 1.8 tanh(2.2 x3); {shared_s}"),
                "regime 3: E = 0.9 x1 + 2.6 x2 x3; S = 1.7 sin(3.2 x4) + 1.5 (x5^2 - 1)".into(),
            ],
        }
    }
}

/// Writes `<stem>.csv` and `<stem>.truth.json` into `dir`.
pub fn export_scenario(
    ds: &SpatialDataset<f64>,
    spec: &ScenarioSpec,
    dir: &Path,
    stem: &str,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let truth = ds.truth.clone().ok_or(Error::TruthUnavailable)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.truth.json"));
    write_dataset(&csv_path, ds, &scenario_schema())?;
    let sites = match spec.kind {
        ScenarioKind::Nonlinear => Some(voronoi_sites(ds.coords.view(), spec).to_vec()),
        _ => None,
    };
    let meta = ScenarioMetadata {
        format_version: 1,
        spec: spec.clone(),
        laws: ScenarioMetadata::laws_for(spec.kind),
        voronoi_sites: sites,
        regime_labels: ds.regime_labels.clone().unwrap_or_default(),
        truth,
    };
    let bytes = serde_json::to_vec_pretty(&meta)?;
    write_atomic(&json_path, &bytes)?;
    Ok((csv_path, json_path))
}

pub fn load_metadata(path: impl AsRef<Path>) -> Result<ScenarioMetadata> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn interaction_regime_at_unit_point() {
        let x = array![[1.0, 1.0, 1.0, 0.0, 0.0]];
        let (e, s) = compute_potentials(x.view(), &[3], ScenarioKind::Nonlinear).unwrap();
        assert_abs_diff_eq!(e[0], 3.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0], -1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(e[0] - s[0], 5.0, epsilon = 1e-15);
    }

    #[test]
    fn sign_flip_regime_at_origin() {
        let x = Array2::zeros((1, 5));
        let (e, s) = compute_potentials(x.view(), &[2], ScenarioKind::Nonlinear).unwrap();
        assert_abs_diff_eq!(e[0], -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn gradient_step_levels() {
        let x = array![[0.3, 0.5, 0.1, 0.2, 0.4], [0.3, 0.0, 0.1, 0.2, 0.4]];
        let (gf, ge, _) = true_gradients(x.view(), &[2, 1], ScenarioKind::Nonlinear).unwrap();
        assert_abs_diff_eq!(ge[[0, 1]], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gf[[1, 1]], 4.4, epsilon = 1e-15);
        assert_abs_diff_eq!(gf[[0, 0]], -2.6, epsilon = 0.0);
        assert_abs_diff_eq!(gf[[1, 0]], 2.6, epsilon = 0.0);
    }

    #[test]
    fn unknown_labels_are_rejected() {
        let x = Array2::zeros((1, 5));
        assert!(compute_potentials(x.view(), &[4], ScenarioKind::Nonlinear).is_err());
        assert!(compute_potentials(x.view(), &[2], ScenarioKind::GlobalLinear).is_err());
    }

    #[test]
    fn zero_jitter_gives_exact_lattice() {
        let mut spec = ScenarioSpec::new(ScenarioKind::Nonlinear, 1);
        spec.jitter_scale = 0.0;
        let c = generate_lattice(&spec);
        assert_eq!(c.row(0).to_vec(), vec![0.0, 0.0]);
        assert_abs_diff_eq!(c[[1, 0]], 1.0 / 49.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c[[50, 1]], 1.0 / 49.0, epsilon = 1e-15);
        assert_eq!(c.row(2499).to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn local_linear_rule() {
        let spec = ScenarioSpec::new(ScenarioKind::LocalLinear, 0);
        let c = array![[0.25, 0.25], [0.75, 0.25], [0.1, 0.5], [0.5, 0.1]];
        assert_eq!(assign_regimes(c.view(), &spec), vec![2, 3, 1, 3]);
        let g = ScenarioSpec::new(ScenarioKind::GlobalLinear, 0);
        assert!(assign_regimes(c.view(), &g).iter().all(|&l| l == 1));
    }

    #[test]
    fn degenerate_outcome_parameters() {
        let mut spec = ScenarioSpec::new(ScenarioKind::Nonlinear, 3);
        spec.lattice_side = 12;
        spec.rho = 0.0;
        spec.eta_scale = 0.0;
        spec.noise_sd = 0.0;
        let ds = generate_scenario(&spec).unwrap();
        let t = ds.truth.unwrap();
        for i in 0..ds.y.len() {
            assert_abs_diff_eq!(ds.y[i], t.e_true[i] - t.s_true[i], epsilon = 0.0);
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = ScenarioSpec::new(ScenarioKind::Nonlinear, 3);
        spec.rho = 1.0;
        assert!(spec.validate().is_err());
        spec.rho = 0.1;
        spec.p = 4;
        assert!(spec.validate().is_err());
    }
}
