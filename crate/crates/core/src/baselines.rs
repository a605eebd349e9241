//! Reference regressors: ordinary least squares, a feed-forward network and a
//! message-passing graph network. All consume standardized covariates only.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::model::{fnv1a_hex, Checkpoint, ModelKind, CHECKPOINT_VERSION};
use crate::nn::{relu, relu_backward, Dense};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tabular::{SpatialDataset, StandardInputs, TrainStats};

/// Diagonal added to `XᵀX` before the solve.
pub const OLS_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Ols,
    Dnn,
    Gnn,
}

impl BaselineKind {
    pub fn model_kind(self) -> ModelKind {
        match self {
            BaselineKind::Ols => ModelKind::Ols,
            BaselineKind::Dnn => ModelKind::Dnn,
            BaselineKind::Gnn => ModelKind::Gnn,
        }
    }

    pub fn from_model_kind(kind: ModelKind) -> Option<Self> {
        match kind {
            ModelKind::Ols => Some(BaselineKind::Ols),
            ModelKind::Dnn => Some(BaselineKind::Dnn),
            ModelKind::Gnn => Some(BaselineKind::Gnn),
            ModelKind::Zegnn => None,
        }
    }

    pub fn uses_graph(self) -> bool {
        self == BaselineKind::Gnn
    }
}

/// Optimisation settings shared by the two networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
    /// Neighbour count of the graph network's kNN graph.
    pub graph_k: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            hidden: 64,
            lr: 0.001,
            epochs: 600,
            clip_norm: 1.0,
            seed: 0,
            graph_k: 12,
        }
    }
}

impl NetConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Parameter("hidden width must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter("lr must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Parameter("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Least-squares coefficients, intercept first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsModel<T> {
    pub coef: Array1<T>,
    /// Diagonal actually used; larger than [`OLS_RIDGE`] only after a fallback.
    pub ridge: f64,
}

impl<T: Scalar> OlsModel<T> {
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        if x.ncols() + 1 != self.coef.len() {
            return Err(Error::Dimension(format!(
                "{} covariates for {} coefficients",
                x.ncols(),
                self.coef.len()
            )));
        }
        let mut out = x.dot(&self.coef.slice(ndarray::s![1..]));
        out += self.coef[0];
        Ok(out)
    }
}

/// Solves `(DᵀD + ridge·I) β = Dᵀz` for the given design `D`.
///
/// Starts at [`OLS_RIDGE`]; when the system is numerically singular the
/// diagonal grows tenfold per attempt and a warning is logged.
pub fn ols_normal_equations(design: ArrayView2<f64>, z: ArrayView1<f64>) -> Result<(Array1<f64>, f64)> {
    let (n, p) = design.dim();
    if n != z.len() {
        return Err(Error::Dimension(format!("{n} design rows, {} targets", z.len())));
    }
    if p == 0 || n == 0 {
        return Err(Error::EmptyTraining);
    }
    let d = DMatrix::from_fn(n, p, |i, j| design[[i, j]]);
    let y = DVector::from_iterator(n, z.iter().copied());
    let gram = d.transpose() * &d;
    let rhs = d.transpose() * y;
    let scale = gram.diagonal().max().max(1.0);
    let mut ridge = OLS_RIDGE;
    for attempt in 0..12 {
        let mut a = gram.clone();
        for i in 0..p {
            a[(i, i)] += ridge;
        }
        if let Some(chol) = a.cholesky() {
            let beta = chol.solve(&rhs);
            if beta.iter().all(|v| v.is_finite()) {
                if attempt > 0 {
                    log::warn!("rank-deficient design; solved with ridge {ridge:e}");
                }
                return Ok((Array1::from_iter(beta.iter().copied()), ridge));
            }
        }
        ridge = if attempt == 0 { OLS_RIDGE * scale } else { ridge * 10.0 };
    }
    Err(Error::DegenerateColumn("design matrix is singular beyond the ridge fallback".into()))
}

/// Least squares with an intercept on covariates `x`.
pub fn fit_ols<T: Scalar>(x: ArrayView2<T>, z: ArrayView1<T>) -> Result<OlsModel<T>> {
    let (n, p) = x.dim();
    let design = Array2::from_shape_fn((n, p + 1), |(i, j)| if j == 0 { 1.0 } else { x[[i, j - 1]].to_f64_lossy() });
    let zf = z.mapv(|v| v.to_f64_lossy());
    let (coef, ridge) = ols_normal_equations(design.view(), zf.view())?;
    Ok(OlsModel {
        coef: coef.mapv(T::c),
        ridge,
    })
}

/// Two hidden layers and a scalar readout. The graph network applies the
/// diffusion operator after each hidden rectifier; without edges it is the
/// feed-forward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams<T> {
    pub l1: Dense<T>,
    pub l2: Dense<T>,
    pub out: Dense<T>,
}

impl<T: Scalar> NetParams<T> {
    pub fn init(p: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        NetParams {
            l1: Dense::init(p, hidden, &mut rng),
            l2: Dense::init(hidden, hidden, &mut rng),
            out: Dense::init(hidden, 1, &mut rng),
        }
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut v = Vec::new();
        self.l1.write_flat(&mut v);
        self.l2.write_flat(&mut v);
        self.out.write_flat(&mut v);
        v
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        let n = self.l1.n_params() + self.l2.n_params() + self.out.n_params();
        if flat.len() != n {
            return Err(Error::Dimension(format!("{} weights for {n} parameters", flat.len())));
        }
        let rest = self.l1.read_flat(flat);
        let rest = self.l2.read_flat(rest);
        self.out.read_flat(rest);
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        [("l1", &self.l1), ("l2", &self.l2), ("out", &self.out)]
            .iter()
            .map(|(name, d)| (name.to_string(), vec![d.fan_in(), d.fan_out()]))
            .collect()
    }
}

struct NetCache<T> {
    z1: Array2<T>,
    h1: Array2<T>,
    z2: Array2<T>,
    h2: Array2<T>,
}

fn spread<T: Scalar>(graph: Option<&SpatialGraph>, h: Array2<T>) -> Result<Array2<T>> {
    match graph {
        Some(g) => g.diffuse(h.view()),
        None => Ok(h),
    }
}

fn spread_back<T: Scalar>(graph: Option<&SpatialGraph>, d: Array2<T>) -> Result<Array2<T>> {
    match graph {
        Some(g) => g.diffuse_transpose(d.view()),
        None => Ok(d),
    }
}

fn net_forward<T: Scalar>(
    params: &NetParams<T>,
    x: ArrayView2<T>,
    graph: Option<&SpatialGraph>,
) -> Result<(Array1<T>, NetCache<T>)> {
    if let Some(g) = graph {
        if g.n() != x.nrows() {
            return Err(Error::Dimension(format!("graph has {} nodes, input {} rows", g.n(), x.nrows())));
        }
    }
    if x.ncols() != params.l1.fan_in() {
        return Err(Error::Dimension(format!("{} covariates for a {}-input network", x.ncols(), params.l1.fan_in())));
    }
    let z1 = params.l1.forward(x);
    let h1 = spread(graph, relu(&z1))?;
    let z2 = params.l2.forward(h1.view());
    let h2 = spread(graph, relu(&z2))?;
    let y = params.out.forward(h2.view()).index_axis_move(Axis(1), 0);
    Ok((y, NetCache { z1, h1, z2, h2 }))
}

fn net_backward<T: Scalar>(
    params: &NetParams<T>,
    x: ArrayView2<T>,
    graph: Option<&SpatialGraph>,
    cache: &NetCache<T>,
    dy: &Array1<T>,
) -> Result<NetParams<T>> {
    let dy = dy.view().insert_axis(Axis(1));
    let (g_out, dh2) = params.out.backward(cache.h2.view(), dy);
    let da2 = relu_backward(&cache.z2, spread_back(graph, dh2)?);
    let (g_l2, dh1) = params.l2.backward(cache.h1.view(), da2.view());
    let da1 = relu_backward(&cache.z1, spread_back(graph, dh1)?);
    let (g_l1, _) = params.l1.backward(x, da1.view());
    Ok(NetParams {
        l1: g_l1,
        l2: g_l2,
        out: g_out,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetModel<T> {
    pub params: NetParams<T>,
    pub config: NetConfig,
}

impl<T: Scalar> NetModel<T> {
    /// Standardized predictions; pass `None` for the feed-forward network.
    pub fn predict(&self, x: ArrayView2<T>, graph: Option<&SpatialGraph>) -> Result<Array1<T>> {
        Ok(net_forward(&self.params, x, graph)?.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetReport {
    /// Training MSE of the parameters entering each epoch.
    pub losses: Vec<f64>,
    /// Largest gradient norm after clipping over all epochs.
    pub max_clipped_norm: f64,
}

/// Full-batch Adam on the mean squared error with global-norm clipping.
fn fit_net<T: Scalar>(
    x: ArrayView2<T>,
    z: ArrayView1<T>,
    graph: Option<&SpatialGraph>,
    cfg: &NetConfig,
) -> Result<(NetModel<T>, NetReport)> {
    cfg.validate()?;
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyTraining);
    }
    if z.len() != n {
        return Err(Error::Dimension(format!("{n} rows, {} targets", z.len())));
    }
    let mut params = NetParams::<T>::init(x.ncols(), cfg.hidden, cfg.seed);
    let mut flat = params.to_flat();
    let mut opt = Adam::new(
        flat.len(),
        AdamConfig {
            lr: cfg.lr,
            clip_norm: Some(cfg.clip_norm),
            ..AdamConfig::default()
        },
    );
    let nf = T::from_usize_lossy(n);
    let two = T::c(2.0);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut max_norm = 0.0f64;
    for epoch in 1..=cfg.epochs {
        let (pred, cache) = net_forward(&params, x, graph)?;
        let resid = &pred - &z;
        let mse = resid.iter().map(|r| *r * *r).sum::<T>() / nf;
        let mse64 = mse.to_f64_lossy();
        if !mse64.is_finite() {
            return Err(Error::Divergence {
                epoch,
                total: mse64,
                mse: mse64,
                sparse: 0.0,
                mag: 0.0,
            });
        }
        losses.push(mse64);
        let dy = resid.mapv(|r| two * r / nf);
        let grads = net_backward(&params, x, graph, &cache, &dy)?;
        let mut g = grads.to_flat();
        let norm = opt.step(&mut flat, &mut g).to_f64_lossy();
        max_norm = max_norm.max(norm);
        params.set_flat(&flat)?;
    }
    Ok((
        NetModel {
            params,
            config: cfg.clone(),
        },
        NetReport {
            losses,
            max_clipped_norm: max_norm,
        },
    ))
}

/// Feed-forward network on standardized covariates.
pub fn fit_dnn<T: Scalar>(x: ArrayView2<T>, z: ArrayView1<T>, cfg: &NetConfig) -> Result<(NetModel<T>, NetReport)> {
    fit_net(x, z, None, cfg)
}

/// Graph network on standardized covariates over `graph`.
pub fn fit_gnn<T: Scalar>(
    x: ArrayView2<T>,
    z: ArrayView1<T>,
    graph: &SpatialGraph,
    cfg: &NetConfig,
) -> Result<(NetModel<T>, NetReport)> {
    fit_net(x, z, Some(graph), cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BaselineModel<T> {
    Ols(OlsModel<T>),
    Net(BaselineKind, NetModel<T>),
}

/// A baseline fitted on a dataset, with the moments it was standardized by.
#[derive(Debug, Clone)]
pub struct FittedBaseline<T> {
    pub kind: BaselineKind,
    pub model: BaselineModel<T>,
    pub stats: TrainStats<T>,
    pub report: Option<NetReport>,
    /// Node ids whose rows or incident edges entered training.
    pub accessed_nodes: BTreeSet<usize>,
}

fn covariates<T: Scalar>(inputs: &StandardInputs<T>) -> Array2<T> {
    inputs.covariates()
}

/// Fits `kind` on every row of `ds`. The graph network requires `graph` over
/// exactly those rows; the other two ignore it.
pub fn fit_baseline<T: Scalar>(
    kind: BaselineKind,
    ds: &SpatialDataset<T>,
    graph: Option<&SpatialGraph>,
    cfg: &NetConfig,
) -> Result<FittedBaseline<T>> {
    let stats = TrainStats::fit(ds)?;
    let x = covariates(&stats.inputs(ds)?);
    let z = stats.target(ds);
    let mut accessed: BTreeSet<usize> = ds.node_ids.iter().copied().collect();
    let (model, report) = match kind {
        BaselineKind::Ols => (BaselineModel::Ols(fit_ols(x.view(), z.view())?), None),
        BaselineKind::Dnn => {
            let (m, r) = fit_dnn(x.view(), z.view(), cfg)?;
            (BaselineModel::Net(kind, m), Some(r))
        }
        BaselineKind::Gnn => {
            let g = graph.ok_or_else(|| Error::Parameter("the graph network needs a graph".into()))?;
            if g.n() != ds.len() {
                return Err(Error::Dimension(format!("graph has {} nodes, training set {} rows", g.n(), ds.len())));
            }
            for (a, b) in g.edges() {
                accessed.insert(ds.node_ids[a]);
                accessed.insert(ds.node_ids[b]);
            }
            let (m, r) = fit_gnn(x.view(), z.view(), g, cfg)?;
            (BaselineModel::Net(kind, m), Some(r))
        }
    };
    Ok(FittedBaseline {
        kind,
        model,
        stats,
        report,
        accessed_nodes: accessed,
    })
}

impl<T: Scalar> FittedBaseline<T> {
    /// Standardized predictions for `ds` under the training moments.
    pub fn predict_standardized(&self, ds: &SpatialDataset<T>, graph: Option<&SpatialGraph>) -> Result<Array1<T>> {
        let x = covariates(&self.stats.inputs(ds)?);
        match &self.model {
            BaselineModel::Ols(m) => m.predict(x.view()),
            BaselineModel::Net(BaselineKind::Gnn, m) => {
                let g = graph.ok_or_else(|| Error::Parameter("the graph network needs a graph".into()))?;
                m.predict(x.view(), Some(g))
            }
            BaselineModel::Net(_, m) => m.predict(x.view(), None),
        }
    }

    /// Original-scale predictions.
    pub fn predict(&self, ds: &SpatialDataset<T>, graph: Option<&SpatialGraph>) -> Result<Array1<T>> {
        let z = self.predict_standardized(ds, graph)?;
        Ok(self.stats.y.invert_all(z.view()))
    }

    pub fn checkpoint(&self, p_burden: usize, p_capacity: usize) -> Result<Checkpoint> {
        let (config, layer_shapes, weights, seed, graph_k) = match &self.model {
            BaselineModel::Ols(m) => (
                serde_json::json!({ "ridge": m.ridge }),
                vec![("coef".to_string(), vec![m.coef.len()])],
                m.coef.iter().map(|v| v.to_f64_lossy()).collect(),
                0,
                0,
            ),
            BaselineModel::Net(_, m) => (
                serde_json::to_value(&m.config)?,
                m.params.layer_shapes(),
                m.params.to_flat().iter().map(|v| v.to_f64_lossy()).collect(),
                m.config.seed,
                if self.kind.uses_graph() { m.config.graph_k } else { 0 },
            ),
        };
        let config_hash = fnv1a_hex(serde_json::to_string(&config)?.as_bytes());
        Ok(Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model_kind: self.kind.model_kind(),
            config,
            config_hash,
            seed,
            graph_k,
            p_burden,
            p_capacity,
            layer_shapes,
            weights,
            stats: self.stats.cast(),
        })
    }
}

impl Checkpoint {
    /// Restores a baseline written by [`FittedBaseline::checkpoint`].
    pub fn to_baseline<T: Scalar>(&self) -> Result<FittedBaseline<T>> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", self.format_version)));
        }
        let kind = BaselineKind::from_model_kind(self.model_kind)
            .ok_or_else(|| Error::Checkpoint("checkpoint holds a zegnn model".into()))?;
        if fnv1a_hex(serde_json::to_string(&self.config)?.as_bytes()) != self.config_hash {
            return Err(Error::Checkpoint("configuration hash mismatch".into()));
        }
        let p = self.p_burden + self.p_capacity;
        let weights: Vec<T> = self.weights.iter().map(|&v| T::c(v)).collect();
        let model = match kind {
            BaselineKind::Ols => {
                if weights.len() != p + 1 {
                    return Err(Error::Checkpoint("coefficient count does not match the covariates".into()));
                }
                let ridge = self.config.get("ridge").and_then(|v| v.as_f64()).unwrap_or(OLS_RIDGE);
                BaselineModel::Ols(OlsModel {
                    coef: Array1::from_vec(weights),
                    ridge,
                })
            }
            _ => {
                let config: NetConfig = serde_json::from_value(self.config.clone())?;
                let mut params = NetParams::<T>::init(p, config.hidden, 0);
                if params.layer_shapes() != self.layer_shapes {
                    return Err(Error::Checkpoint("layer shapes do not match the configuration".into()));
                }
                params.set_flat(&weights).map_err(|e| Error::Checkpoint(e.to_string()))?;
                BaselineModel::Net(kind, NetModel { params, config })
            }
        };
        Ok(FittedBaseline {
            kind,
            model,
            stats: self.stats.cast(),
            report: None,
            accessed_nodes: BTreeSet::new(),
        })
    }
}
