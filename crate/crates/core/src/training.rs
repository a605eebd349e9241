//! Composite loss, full-batch Adam, early stopping and prediction.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::model::{backward, forward, forward_with_cache, init_params, Checkpoint, ForwardOutputs, ModelConfig, Upstream, ZegnnParams};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::tabular::{fmt_f64, write_atomic, SpatialDataset, StandardInputs, TrainStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda_sparse: f64,
    pub lambda_mag: f64,
    pub eps_occupancy: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(k_upper: usize) -> Self {
        TrainConfig {
            model: ModelConfig::new(k_upper),
            lr: 0.005,
            max_epochs: 800,
            patience: 60,
            lambda_sparse: 0.0,
            lambda_mag: 0.0,
            eps_occupancy: 1e-8,
            val_fraction: 0.15,
            seed: 0,
        }
    }

    pub fn with_lambdas(mut self, lambda_sparse: f64, lambda_mag: f64) -> Self {
        self.lambda_sparse = lambda_sparse;
        self.lambda_mag = lambda_mag;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Parameter("lr must be positive".into()));
        }
        if self.max_epochs > 0 && self.patience >= self.max_epochs {
            return Err(Error::Parameter(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lambda_sparse >= 0.0 && self.lambda_mag >= 0.0) {
            return Err(Error::Parameter("penalty weights must be non-negative".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Parameter("val_fraction must lie in (0, 1)".into()));
        }
        if !(self.eps_occupancy > 0.0) {
            return Err(Error::Parameter("eps_occupancy must be positive".into()));
        }
        if self.model.k_upper == 0 {
            return Err(Error::Parameter("k_upper must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts<T> {
    pub total: T,
    pub mse: T,
    pub sparse: T,
    pub mag: T,
}

impl<T: Scalar> LossParts<T> {
    pub fn to_f64(&self) -> LossParts<f64> {
        LossParts {
            total: self.total.to_f64_lossy(),
            mse: self.mse.to_f64_lossy(),
            sparse: self.sparse.to_f64_lossy(),
            mag: self.mag.to_f64_lossy(),
        }
    }

    fn is_finite(&self) -> bool {
        self.total.is_finite() && self.mse.is_finite() && self.sparse.is_finite() && self.mag.is_finite()
    }
}

/// Mean occupancy `p̄_k` over `ids`.
pub fn mean_occupancy<T: Scalar>(p: &Array2<T>, ids: &[usize]) -> Array1<T> {
    let mut acc = Array1::zeros(p.ncols());
    for &i in ids {
        acc += &p.row(i);
    }
    acc / T::from_usize_lossy(ids.len().max(1))
}

/// `mse + λ_sparse·sparse + λ_mag·mag`, all restricted to `ids`.
pub fn loss<T: Scalar>(out: &ForwardOutputs<T>, z: &Array1<T>, ids: &[usize], cfg: &TrainConfig) -> LossParts<T> {
    let n = T::from_usize_lossy(ids.len().max(1));
    let mse = ids.iter().map(|&i| (out.f[i] - z[i]).powi(2)).sum::<T>() / n;
    let eps = T::c(cfg.eps_occupancy);
    let sparse = -mean_occupancy(&out.p, ids).iter().map(|&v| (v + eps).ln()).sum::<T>();
    let mag = ids
        .iter()
        .map(|&i| {
            out.e_reg.row(i).iter().map(|v| *v * *v).sum::<T>() + out.s_reg.row(i).iter().map(|v| *v * *v).sum::<T>()
        })
        .sum::<T>()
        / n;
    let total = mse + T::c(cfg.lambda_sparse) * sparse + T::c(cfg.lambda_mag) * mag;
    LossParts { total, mse, sparse, mag }
}

/// Derivatives of [`loss`] with respect to the forward outputs.
pub fn loss_upstream<T: Scalar>(out: &ForwardOutputs<T>, z: &Array1<T>, ids: &[usize], cfg: &TrainConfig) -> Upstream<T> {
    let (rows, k) = out.p.dim();
    let n = T::from_usize_lossy(ids.len().max(1));
    let two = T::c(2.0);
    let eps = T::c(cfg.eps_occupancy);
    let (ls, lm) = (T::c(cfg.lambda_sparse), T::c(cfg.lambda_mag));
    let mut d_f = Array1::zeros(rows);
    let mut d_p = Array2::zeros((rows, k));
    let mut d_e = Array2::zeros((rows, k));
    let mut d_s = Array2::zeros((rows, k));
    let occ = mean_occupancy(&out.p, ids);
    let d_occ = occ.mapv(|v| -ls / ((v + eps) * n));
    for &i in ids {
        d_f[i] = two * (out.f[i] - z[i]) / n;
        if cfg.lambda_sparse != 0.0 {
            d_p.row_mut(i).assign(&d_occ);
        }
        if cfg.lambda_mag != 0.0 {
            for kk in 0..k {
                d_e[[i, kk]] = lm * two * out.e_reg[[i, kk]] / n;
                d_s[[i, kk]] = lm * two * out.s_reg[[i, kk]] / n;
            }
        }
    }
    Upstream {
        d_f: Some(d_f),
        d_p: Some(d_p),
        d_e_reg: Some(d_e),
        d_s_reg: Some(d_s),
        ..Upstream::default()
    }
}

/// Loss on `ids` and its gradient with respect to every parameter.
pub fn loss_and_grad<T: Scalar>(
    params: &ZegnnParams<T>,
    inputs: &StandardInputs<T>,
    graph: &SpatialGraph,
    z: &Array1<T>,
    ids: &[usize],
    cfg: &TrainConfig,
) -> Result<(LossParts<T>, ZegnnParams<T>, ForwardOutputs<T>)> {
    let (out, cache) = forward_with_cache(params, inputs, graph)?;
    let parts = loss(&out, z, ids, cfg);
    let up = loss_upstream(&out, z, ids, cfg);
    let (grads, _) = backward(params, graph, &out, &cache, &up)?;
    Ok((parts, grads, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mse: f64,
    pub sparse: f64,
    pub mag: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Epoch (1-based) whose entering parameters had the lowest validation MSE.
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_loss: f64,
    /// Training-set components of the restored parameters.
    pub best_components: LossParts<f64>,
    pub trace: Vec<EpochRecord>,
    /// Node ids (dataset numbering) of the gradient and validation sets.
    pub grad_nodes: Vec<usize>,
    pub val_nodes: Vec<usize>,
    /// Every node id whose row or incident edges entered a forward pass.
    pub accessed_nodes: BTreeSet<usize>,
}

impl TrainReport {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_mse,sparse,mag,val_loss\n");
        for r in &self.trace {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.epoch,
                fmt_f64(r.train_loss),
                fmt_f64(r.train_mse),
                fmt_f64(r.sparse),
                fmt_f64(r.mag),
                fmt_f64(r.val_loss)
            );
        }
        s
    }

    pub fn write_trace(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.trace_csv().as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct FittedModel<T> {
    pub params: ZegnnParams<T>,
    pub stats: TrainStats<T>,
    pub report: TrainReport,
    pub config: TrainConfig,
}

impl<T: Scalar> FittedModel<T> {
    pub fn checkpoint(&self, graph_k: usize) -> Result<Checkpoint> {
        Checkpoint::from_zegnn(&self.params, &self.stats, self.config.seed, graph_k)
    }

    /// Original-scale predictions for `ds` on `graph`.
    pub fn predict(&self, ds: &SpatialDataset<T>, graph: &SpatialGraph) -> Result<Array1<T>> {
        predict(&self.params, &self.stats, ds, graph)
    }
}

/// Seeded inner split of `0..n` into (gradient rows, validation rows), both sorted.
pub fn inner_split(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::EmptyTraining);
    }
    let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    order.shuffle(&mut rng);
    let mut val = order[..n_val].to_vec();
    let mut grad = order[n_val..].to_vec();
    val.sort_unstable();
    grad.sort_unstable();
    Ok((grad, val))
}

fn mse_on<T: Scalar>(f: &Array1<T>, z: &Array1<T>, ids: &[usize]) -> T {
    ids.iter().map(|&i| (f[i] - z[i]).powi(2)).sum::<T>() / T::from_usize_lossy(ids.len().max(1))
}

/// Trains on every row of `ds`; `graph` must be a graph over exactly those rows.
///
/// Standardization moments come from `ds`. A seeded share of rows is held out
/// of the gradient as an inner validation set; it still sits in the graph.
/// Each epoch computes one forward pass, records the losses of the entering
/// parameters, then takes one Adam step. Training stops once the validation
/// MSE has not improved for `patience` epochs and the best parameters are
/// restored.
pub fn fit<T: Scalar>(ds: &SpatialDataset<T>, graph: &SpatialGraph, cfg: &TrainConfig) -> Result<FittedModel<T>> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::EmptyTraining);
    }
    if graph.n() != ds.len() {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, training set has {} rows",
            graph.n(),
            ds.len()
        )));
    }
    let stats = TrainStats::fit(ds)?;
    let inputs = stats.inputs(ds)?;
    let z = stats.target(ds);
    fit_standardized(ds, &inputs, &z, graph, stats, cfg)
}

fn fit_standardized<T: Scalar>(
    ds: &SpatialDataset<T>,
    inputs: &StandardInputs<T>,
    z: &Array1<T>,
    graph: &SpatialGraph,
    stats: TrainStats<T>,
    cfg: &TrainConfig,
) -> Result<FittedModel<T>> {
    let (grad_ids, val_ids) = inner_split(ds.len(), cfg.val_fraction, cfg.seed)?;
    let mut params = init_params::<T>(ds.p_burden(), ds.p_capacity(), cfg.model.clone(), cfg.seed)?;
    let mut flat = params.to_flat();
    let mut opt = Adam::new(flat.len(), AdamConfig { lr: cfg.lr, ..AdamConfig::default() });

    let mut accessed: BTreeSet<usize> = BTreeSet::new();
    let mut touch = |graph: &SpatialGraph| {
        accessed.extend(ds.node_ids.iter().copied());
        for (a, b) in graph.edges() {
            accessed.insert(ds.node_ids[a]);
            accessed.insert(ds.node_ids[b]);
        }
    };
    touch(graph);

    let mut trace = Vec::new();
    let mut best: Option<(usize, f64, Vec<T>, LossParts<f64>)> = None;
    let mut stopped = 0;
    for epoch in 1..=cfg.max_epochs {
        let (parts, grads, out) = loss_and_grad(&params, inputs, graph, z, &grad_ids, cfg)?;
        if !parts.is_finite() || out.f.iter().any(|v| !v.is_finite()) {
            let p = parts.to_f64();
            return Err(Error::Divergence {
                epoch,
                total: p.total,
                mse: p.mse,
                sparse: p.sparse,
                mag: p.mag,
            });
        }
        let val = mse_on(&out.f, z, &val_ids).to_f64_lossy();
        let p = parts.to_f64();
        trace.push(EpochRecord {
            epoch,
            train_loss: p.total,
            train_mse: p.mse,
            sparse: p.sparse,
            mag: p.mag,
            val_loss: val,
        });
        let improved = best.as_ref().map_or(true, |b| val < b.1);
        if improved {
            best = Some((epoch, val, flat.clone(), p));
        }
        stopped = epoch;
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        let mut g = grads.to_flat();
        opt.step(&mut flat, &mut g);
        params.set_flat(&flat)?;
        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }

    let (best_epoch, best_val_loss, best_components) = match best {
        Some((e, v, w, p)) => {
            params.set_flat(&w)?;
            (e, v, p)
        }
        None => {
            // Zero epochs: report the untrained parameters.
            let out = forward(&params, inputs, graph)?;
            (0, mse_on(&out.f, z, &val_ids).to_f64_lossy(), loss(&out, z, &grad_ids, cfg).to_f64())
        }
    };
    let report = TrainReport {
        best_epoch,
        stopped_epoch: stopped,
        best_val_loss,
        best_components,
        trace,
        grad_nodes: grad_ids.iter().map(|&i| ds.node_ids[i]).collect(),
        val_nodes: val_ids.iter().map(|&i| ds.node_ids[i]).collect(),
        accessed_nodes: accessed,
    };
    Ok(FittedModel {
        params,
        stats,
        report,
        config: cfg.clone(),
    })
}

/// Standardized forward pass for `ds` under training moments.
pub fn forward_dataset<T: Scalar>(
    params: &ZegnnParams<T>,
    stats: &TrainStats<T>,
    ds: &SpatialDataset<T>,
    graph: &SpatialGraph,
) -> Result<ForwardOutputs<T>> {
    let inputs = stats.inputs(ds)?;
    forward(params, &inputs, graph)
}

/// `ŷ = μ_y + σ_y·F` with training moments.
pub fn predict<T: Scalar>(
    params: &ZegnnParams<T>,
    stats: &TrainStats<T>,
    ds: &SpatialDataset<T>,
    graph: &SpatialGraph,
) -> Result<Array1<T>> {
    let out = forward_dataset(params, stats, ds, graph)?;
    Ok(stats.y.invert_all(out.f.view()))
}
