//! Cross-validation protocols, held-out metrics, residual autocorrelation,
//! hyperparameter search and regime-usage summaries.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::{Array1, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_baseline, BaselineKind, NetConfig};
use crate::error::{Error, Result};
use crate::graph::{block_partition, build_knn_graph, members, morans_i, random_folds, training_subgraph, SpatialGraph};
use crate::model::ModelKind;
use crate::scalar::Scalar;
use crate::tabular::{fmt_f64, SpatialDataset};
use crate::training::{fit, forward_dataset, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Random,
    SpatialBlock,
    InSample,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Random => "random",
            Protocol::SpatialBlock => "spatial_block",
            Protocol::InSample => "in_sample",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "random" => Ok(Protocol::Random),
            "spatial" | "spatial_block" | "block" => Ok(Protocol::SpatialBlock),
            "in_sample" | "insample" => Ok(Protocol::InSample),
            other => Err(Error::Parameter(format!("unknown protocol `{other}`"))),
        }
    }
}

/// One configuration of the searched hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub graph_k: usize,
    pub k_upper: usize,
    pub lambda_sparse: f64,
    pub lambda_mag: f64,
}

impl GridPoint {
    pub fn new(graph_k: usize, k_upper: usize, lambda_sparse: f64, lambda_mag: f64) -> Self {
        GridPoint {
            graph_k,
            k_upper,
            lambda_sparse,
            lambda_mag,
        }
    }

    /// Training configuration for this point on top of `base`.
    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.model.k_upper = self.k_upper;
        cfg.lambda_sparse = self.lambda_sparse;
        cfg.lambda_mag = self.lambda_mag;
        cfg
    }
}

/// Settings shared by every fold of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub folds: usize,
    /// Blocks per axis for the spatial protocol.
    pub grid: usize,
    /// Neighbour count of the weights behind residual Moran's I.
    pub moran_k: usize,
    /// Optimiser and stopping settings; regime count and penalties come from the grid point.
    pub train: TrainConfig,
    pub net: NetConfig,
    /// Also refit on all rows for in-sample metrics and residual Moran's I.
    pub in_sample: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions {
            folds: 5,
            grid: 5,
            moran_k: 8,
            train: TrainConfig::new(3),
            net: NetConfig::default(),
            in_sample: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub r2: f64,
    pub rmse: f64,
    /// Held-out node ids that entered training in any way; zero when leakage-free.
    pub test_nodes_accessed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InSampleMetrics {
    pub r2: f64,
    pub rmse: f64,
    pub residual_morans_i: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeUsage {
    pub n_eff_global: f64,
    pub n_eff_local: f64,
    pub max_dominant_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub model: ModelKind,
    pub protocol: Protocol,
    pub seed: u64,
    pub point: GridPoint,
    /// Neighbour count of the graph the model was trained on (0 for graph-free models).
    pub model_graph_k: usize,
    pub folds: Vec<FoldMetrics>,
    /// Fold of every row; empty for the in-sample protocol.
    pub fold_id: Vec<usize>,
    pub mean_r2: f64,
    pub se_r2: f64,
    pub mean_rmse: f64,
    pub se_rmse: f64,
    pub in_sample: Option<InSampleMetrics>,
    pub regime: Option<RegimeUsage>,
}

/// `1 − Σ(y − ŷ)² / Σ(y − ȳ)²` with `ȳ` the mean of `y` itself.
pub fn r_squared(y: ArrayView1<f64>, pred: ArrayView1<f64>) -> f64 {
    let mean = y.mean().unwrap_or(0.0);
    let ss_res: f64 = y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - mean).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

pub fn rmse(y: ArrayView1<f64>, pred: ArrayView1<f64>) -> f64 {
    let n = y.len().max(1) as f64;
    (y.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean and standard error (sample deviation over `√n`).
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn shannon(p: impl Iterator<Item = f64>) -> f64 {
    -p.filter(|&v| v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Perplexity of the mean occupancy, mean per-row perplexity, and the largest
/// share of rows whose most probable regime (lowest index on ties) is one regime.
pub fn regime_usage<T: Scalar>(p: ArrayView2<T>) -> RegimeUsage {
    let (n, k) = p.dim();
    let nf = n.max(1) as f64;
    let mut mean = vec![0.0; k];
    let mut local = 0.0;
    let mut counts = vec![0usize; k];
    for row in p.rows() {
        let r: Vec<f64> = row.iter().map(|v| v.to_f64_lossy()).collect();
        for (m, v) in mean.iter_mut().zip(&r) {
            *m += v / nf;
        }
        local += shannon(r.iter().copied()).exp();
        let mut arg = 0;
        for (j, v) in r.iter().enumerate() {
            if *v > r[arg] {
                arg = j;
            }
        }
        counts[arg] += 1;
    }
    RegimeUsage {
        n_eff_global: shannon(mean.into_iter()).exp(),
        n_eff_local: local / nf,
        max_dominant_share: counts.iter().copied().max().unwrap_or(0) as f64 / nf,
    }
}

/// Fold of every row under `protocol`.
pub fn fold_assignment<T: Scalar>(ds: &SpatialDataset<T>, protocol: Protocol, opts: &CvOptions, seed: u64) -> Result<Vec<usize>> {
    match protocol {
        Protocol::Random => Ok(random_folds(ds.len(), opts.folds, seed)),
        Protocol::SpatialBlock => Ok(block_partition(ds.coords.view(), opts.grid, opts.folds, seed)?.fold_id),
        Protocol::InSample => Ok(Vec::new()),
    }
}

struct Holdout {
    test_pred: Array1<f64>,
    accessed: BTreeSet<usize>,
    regime: Option<RegimeUsage>,
}

/// Trains `model` on `train` rows and predicts `test` rows on the original scale.
///
/// Graph models train on the kNN graph restricted to the training rows, so
/// no held-out row or edge reaches training. Prediction runs on the full
/// graph, which only carries covariates. When `test` is empty the model
/// predicts its own training rows.
fn fit_predict<T: Scalar>(
    model: ModelKind,
    ds: &SpatialDataset<T>,
    train: &[usize],
    test: &[usize],
    point: &GridPoint,
    opts: &CvOptions,
    seed: u64,
) -> Result<Holdout> {
    let train_ds = ds.subset(train);
    let in_sample = test.is_empty();
    let eval_rows: Vec<usize> = if in_sample { train.to_vec() } else { test.to_vec() };
    let select = |pred: Array1<T>| -> Array1<f64> { eval_rows.iter().map(|&i| pred[i].to_f64_lossy()).collect() };
    let graphs = |k: usize| -> Result<(SpatialGraph, SpatialGraph)> {
        let full = build_knn_graph(ds.coords.view(), k)?;
        let train_graph = if in_sample { full.clone() } else { training_subgraph(&full, test)? };
        Ok((train_graph, full))
    };
    match model {
        ModelKind::Zegnn => {
            let (train_graph, pred_graph) = graphs(point.graph_k)?;
            let cfg = point.train_config(&opts.train).with_seed(seed);
            let fitted = fit(&train_ds, &train_graph, &cfg)?;
            let out = forward_dataset(&fitted.params, &fitted.stats, ds, &pred_graph)?;
            let regime = in_sample.then(|| regime_usage(out.p.view()));
            let pred = fitted.stats.y.invert_all(out.f.view());
            Ok(Holdout {
                test_pred: select(pred),
                accessed: fitted.report.accessed_nodes,
                regime,
            })
        }
        other => {
            let kind = BaselineKind::from_model_kind(other).expect("baseline kind");
            let net = opts.net.clone().with_seed(seed);
            let (train_graph, pred_graph) = if kind.uses_graph() {
                let (a, b) = graphs(net.graph_k)?;
                (Some(a), Some(b))
            } else {
                (None, None)
            };
            let fitted = fit_baseline(kind, &train_ds, train_graph.as_ref(), &net)?;
            let pred = fitted.predict(ds, pred_graph.as_ref())?;
            Ok(Holdout {
                test_pred: select(pred),
                accessed: fitted.accessed_nodes,
                regime: None,
            })
        }
    }
}

/// Runs `protocol` for `model` at `point`. Fold assignment and model
/// initialisation are both driven by `seed`.
pub fn run_cv<T: Scalar>(
    model: ModelKind,
    ds: &SpatialDataset<T>,
    protocol: Protocol,
    point: &GridPoint,
    opts: &CvOptions,
    seed: u64,
) -> Result<CvReport> {
    let n = ds.len();
    let y: Array1<f64> = ds.y.mapv(|v| v.to_f64_lossy());
    let fold_id = fold_assignment(ds, protocol, opts, seed)?;
    let mut folds = Vec::new();
    if protocol != Protocol::InSample {
        for f in 0..opts.folds {
            let test = members(&fold_id, f);
            if test.len() < 2 {
                return Err(Error::FoldSize { fold: f, size: test.len() });
            }
        }
        for f in 0..opts.folds {
            let test = members(&fold_id, f);
            let train: Vec<usize> = (0..n).filter(|i| fold_id[*i] != f).collect();
            let h = fit_predict(model, ds, &train, &test, point, opts, seed)?;
            let y_test: Array1<f64> = test.iter().map(|&i| y[i]).collect();
            let test_ids: BTreeSet<usize> = test.iter().map(|&i| ds.node_ids[i]).collect();
            folds.push(FoldMetrics {
                fold: f,
                n_train: train.len(),
                n_test: test.len(),
                r2: r_squared(y_test.view(), h.test_pred.view()),
                rmse: rmse(y_test.view(), h.test_pred.view()),
                test_nodes_accessed: h.accessed.intersection(&test_ids).count(),
            });
        }
    }
    let (in_sample, regime) = if opts.in_sample || protocol == Protocol::InSample {
        let all: Vec<usize> = (0..n).collect();
        let h = fit_predict(model, ds, &all, &[], point, opts, seed)?;
        let resid = &y - &h.test_pred;
        let weights = build_knn_graph(ds.coords.view(), opts.moran_k)?;
        let metrics = InSampleMetrics {
            r2: r_squared(y.view(), h.test_pred.view()),
            rmse: rmse(y.view(), h.test_pred.view()),
            residual_morans_i: morans_i(resid.view(), &weights)?,
        };
        (Some(metrics), h.regime)
    } else {
        (None, None)
    };
    let (mean_r2, se_r2) = mean_se(&folds.iter().map(|f| f.r2).collect::<Vec<_>>());
    let (mean_rmse, se_rmse) = mean_se(&folds.iter().map(|f| f.rmse).collect::<Vec<_>>());
    let (mean_r2, se_r2, mean_rmse, se_rmse) = match (&in_sample, protocol) {
        (Some(m), Protocol::InSample) => (m.r2, 0.0, m.rmse, 0.0),
        _ => (mean_r2, se_r2, mean_rmse, se_rmse),
    };
    let model_graph_k = match model {
        ModelKind::Zegnn => point.graph_k,
        ModelKind::Gnn => opts.net.graph_k,
        _ => 0,
    };
    Ok(CvReport {
        model,
        protocol,
        seed,
        point: *point,
        model_graph_k,
        folds,
        fold_id,
        mean_r2,
        se_r2,
        mean_rmse,
        se_rmse,
        in_sample,
        regime,
    })
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl CvReport {
    pub fn folds_csv(&self) -> String {
        let mut s = String::from("model,protocol,fold,n_train,n_test,r2,rmse,test_nodes_accessed\n");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                self.model.name(),
                self.protocol.name(),
                f.fold,
                f.n_train,
                f.n_test,
                fmt_f64(f.r2),
                fmt_f64(f.rmse),
                f.test_nodes_accessed
            );
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// One row per model: in-sample, random-CV and spatial-CV fit plus residual Moran's I.
pub fn comparison_table(reports: &[CvReport]) -> String {
    let mut models: Vec<ModelKind> = Vec::new();
    for r in reports {
        if !models.contains(&r.model) {
            models.push(r.model);
        }
    }
    let mut s = String::from(
        "model,in_sample_r2,in_sample_rmse,random_cv_r2,random_cv_rmse,spatial_cv_r2,spatial_cv_rmse,residual_morans_i\n",
    );
    for m in models {
        let of = |p: Protocol| reports.iter().find(|r| r.model == m && r.protocol == p);
        let ins = reports.iter().filter(|r| r.model == m).find_map(|r| r.in_sample.clone());
        let cv = |p: Protocol| (opt_f64(of(p).map(|r| r.mean_r2)), opt_f64(of(p).map(|r| r.mean_rmse)));
        let (rr2, rrm) = cv(Protocol::Random);
        let (sr2, srm) = cv(Protocol::SpatialBlock);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.name(),
            opt_f64(ins.as_ref().map(|i| i.r2)),
            opt_f64(ins.as_ref().map(|i| i.rmse)),
            rr2,
            rrm,
            sr2,
            srm,
            opt_f64(ins.as_ref().map(|i| i.residual_morans_i))
        );
    }
    s
}

/// Selected hyperparameters and regime diagnostics of every report that has them.
pub fn regime_table(reports: &[CvReport]) -> String {
    let mut s = String::from(
        "model,protocol,k,k_upper,lambda_sparse,lambda_mag,n_eff_global,n_eff_local,max_dominant_share,residual_morans_i\n",
    );
    for r in reports.iter().filter(|r| r.regime.is_some()) {
        let g = r.regime.expect("filtered");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.model.name(),
            r.protocol.name(),
            r.point.graph_k,
            r.point.k_upper,
            fmt_f64(r.point.lambda_sparse),
            fmt_f64(r.point.lambda_mag),
            fmt_f64(g.n_eff_global),
            fmt_f64(g.n_eff_local),
            fmt_f64(g.max_dominant_share),
            opt_f64(r.in_sample.as_ref().map(|i| i.residual_morans_i))
        );
    }
    s
}

/// Candidate values per hyperparameter; the grid is their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    pub graph_k: Vec<usize>,
    pub k_upper: Vec<usize>,
    pub lambda_sparse: Vec<f64>,
    pub lambda_mag: Vec<f64>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        SearchGrid {
            graph_k: vec![8, 10, 12, 14, 16],
            k_upper: vec![3],
            lambda_sparse: vec![0.0, 0.001, 0.005],
            lambda_mag: vec![0.001, 0.01],
        }
    }
}

impl SearchGrid {
    pub fn validate(&self) -> Result<()> {
        if self.graph_k.is_empty() || self.k_upper.is_empty() || self.lambda_sparse.is_empty() || self.lambda_mag.is_empty()
        {
            return Err(Error::EmptyGrid);
        }
        if self.graph_k.contains(&0) || self.k_upper.contains(&0) {
            return Err(Error::Parameter("graph_k and k_upper must be positive".into()));
        }
        if self.lambda_sparse.iter().chain(&self.lambda_mag).any(|v| !(*v >= 0.0)) {
            return Err(Error::Parameter("penalty weights must be non-negative".into()));
        }
        Ok(())
    }

    /// Points in lexicographic order of (graph_k, k_upper, lambda_sparse, lambda_mag) as listed.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &k in &self.graph_k {
            for &ku in &self.k_upper {
                for &ls in &self.lambda_sparse {
                    for &lm in &self.lambda_mag {
                        out.push(GridPoint::new(k, ku, ls, lm));
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub point: GridPoint,
    pub fold_r2: Vec<f64>,
    pub mean_r2: f64,
    pub se_r2: f64,
    pub admissible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub rows: Vec<SearchRow>,
    pub best: usize,
    pub selected: usize,
    /// `best mean − best SE`; admissible rows reach at least this.
    pub threshold: f64,
}

/// Index of the simplest row within one standard error of the best mean:
/// smallest graph k, then smallest penalty sum, then smallest regime count,
/// then earliest row. Marks `admissible` on every row.
pub fn select_one_se(rows: &mut [SearchRow]) -> Result<(usize, usize, f64)> {
    if rows.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        if r.mean_r2 > rows[best].mean_r2 {
            best = i;
        }
    }
    let threshold = rows[best].mean_r2 - rows[best].se_r2;
    for r in rows.iter_mut() {
        r.admissible = r.mean_r2 >= threshold;
    }
    let key = |r: &SearchRow| (r.point.graph_k, r.point.lambda_sparse + r.point.lambda_mag, r.point.k_upper);
    let mut selected = best;
    for (i, r) in rows.iter().enumerate() {
        if r.admissible {
            let (a, b) = (key(r), key(&rows[selected]));
            let simpler = a.0 < b.0 || (a.0 == b.0 && (a.1 < b.1 || (a.1 == b.1 && a.2 < b.2)));
            let tied = a == b && i < selected;
            if simpler || tied {
                selected = i;
            }
        }
    }
    Ok((best, selected, threshold))
}

/// Spatial-block CV of the regime mixture at every grid point, then the
/// one-standard-error choice. Grid points run in parallel; results are
/// ordered as [`SearchGrid::points`].
pub fn hyper_search<T: Scalar>(
    ds: &SpatialDataset<T>,
    grid: &SearchGrid,
    opts: &CvOptions,
    seed: u64,
) -> Result<SearchResult> {
    grid.validate()?;
    let opts = CvOptions {
        in_sample: false,
        ..opts.clone()
    };
    let reports: Vec<Result<CvReport>> = grid
        .points()
        .par_iter()
        .map(|p| run_cv(ModelKind::Zegnn, ds, Protocol::SpatialBlock, p, &opts, seed))
        .collect();
    let mut rows = Vec::new();
    for r in reports {
        let r = r?;
        rows.push(SearchRow {
            point: r.point,
            fold_r2: r.folds.iter().map(|f| f.r2).collect(),
            mean_r2: r.mean_r2,
            se_r2: r.se_r2,
            admissible: false,
        });
    }
    let (best, selected, threshold) = select_one_se(&mut rows)?;
    Ok(SearchResult {
        rows,
        best,
        selected,
        threshold,
    })
}

impl SearchResult {
    pub fn selected_point(&self) -> GridPoint {
        self.rows[self.selected].point
    }

    pub fn table_csv(&self) -> String {
        let mut s = String::from("k,k_upper,lambda_sparse,lambda_mag,mean_spatial_r2,se_spatial_r2,admissible,selected\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.point.graph_k,
                r.point.k_upper,
                fmt_f64(r.point.lambda_sparse),
                fmt_f64(r.point.lambda_mag),
                fmt_f64(r.mean_r2),
                fmt_f64(r.se_r2),
                r.admissible,
                i == self.selected
            );
        }
        s
    }
}
