use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use zegnn::baselines::{fit_baseline, BaselineKind, NetConfig};
use zegnn::diagnostics::{finite_difference_check, gradient_matching, matching_csv, sensitivity_fields};
use zegnn::evaluation::{comparison_table, regime_table, run_cv, CvOptions, CvReport, GridPoint, Protocol, SearchGrid};
use zegnn::graph::build_knn_graph;
use zegnn::model::{Checkpoint, ModelKind};
use zegnn::synthetic::{export_scenario, generate_scenario, load_metadata, scenario_schema, ScenarioKind, ScenarioSpec};
use zegnn::tabular::{fmt_f64, load_dataset, RoleSchema, SpatialDataset};
use zegnn::training::{fit, forward_dataset, TrainConfig};
use zegnn::{evaluation, hyper_search};

use crate::config::read_config_file;
use crate::manifest::RunOutput;

const DEFAULT_GRAPH_K: usize = 10;

#[derive(Parser, Debug)]
#[command(name = "zegnn", version, about = "Regime-mixture spatial regression: data, training, validation, diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic scenario with its ground truth.
    Generate(GenerateArgs),
    /// Fit one model on a whole dataset and write a checkpoint.
    Train(TrainArgs),
    /// Cross-validate one model under one protocol.
    Cv(CvArgs),
    /// Spatial-block hyperparameter search with the one-standard-error rule.
    Search(SearchArgs),
    /// Sensitivity atlas, regime probabilities and checks for a fitted model.
    Diagnose(DiagnoseArgs),
    /// Merge cross-validation reports into comparison tables.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Seed for every random stream of the run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// key = value file merged with the flags; a manifest.json replays its run.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Role schema file; defaults to the synthetic scenario layout.
    #[arg(long)]
    pub schema: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct HyperArgs {
    /// Graph neighbour count (default 10 for zegnn, 12 for gnn).
    #[arg(long)]
    pub k: Option<usize>,
    /// Upper bound on the number of regimes.
    #[arg(long = "K-upper", default_value_t = 3)]
    pub k_upper: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lambda_sparse: f64,
    #[arg(long, default_value_t = 0.001)]
    pub lambda_mag: f64,
    #[arg(long, default_value_t = TrainConfig::new(1).max_epochs)]
    pub max_epochs: usize,
    /// Early-stopping patience; defaults to 60, capped below --max-epochs.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, default_value_t = TrainConfig::new(1).lr)]
    pub lr: f64,
    /// Epoch budget of the dnn and gnn baselines.
    #[arg(long, default_value_t = NetConfig::default().epochs)]
    pub net_epochs: usize,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_parser = ["global-linear", "local-linear", "nonlinear"])]
    pub scenario: String,
    /// Lattice side length; the dataset has side² rows.
    #[arg(long, default_value_t = 50)]
    pub lattice_side: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "zegnn", value_parser = ["zegnn", "ols", "dnn", "gnn"])]
    pub model: String,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "zegnn", value_parser = ["zegnn", "ols", "dnn", "gnn"])]
    pub model: String,
    #[arg(long, default_value = "spatial", value_parser = ["random", "spatial", "spatial_block", "in_sample"])]
    pub protocol: String,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Blocks per side of the spatial-block partition.
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
    /// Also refit on all rows for in-sample fit and residual Moran's I.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub in_sample: bool,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Grid file with comma-separated lists for k, K-upper, lambda-sparse, lambda-mag.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub k: Vec<usize>,
    #[arg(long = "K-upper", value_delimiter = ',')]
    pub k_upper: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_sparse: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_mag: Vec<f64>,
    #[arg(long, default_value_t = TrainConfig::new(1).max_epochs)]
    pub max_epochs: usize,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 5)]
    pub blocks: usize,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint written by `train --model zegnn`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Truth sidecar written by `generate`; enables gradient matching.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Covariate shift of the finite-difference check.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// cv_report.json files, comma-separated or repeated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub inputs: Vec<PathBuf>,
}

pub fn dispatch(cli: Cli, name: &str, config: BTreeMap<String, String>) -> Result<()> {
    match cli.command {
        Command::Generate(a) => cmd_generate(a, name, config),
        Command::Train(a) => cmd_train(a, name, config),
        Command::Cv(a) => cmd_cv(a, name, config),
        Command::Search(a) => cmd_search(a, name, config),
        Command::Diagnose(a) => cmd_diagnose(a, name, config),
        Command::Report(a) => cmd_report(a, name, config),
    }
}

fn load_data(args: &DataArgs, out: &mut RunOutput) -> Result<(SpatialDataset<f64>, RoleSchema)> {
    let schema = match &args.schema {
        Some(p) => {
            out.input(p)?;
            RoleSchema::from_file(p)?
        }
        None => scenario_schema(),
    };
    out.input(&args.data)?;
    let ds = load_dataset::<f64>(&args.data, &schema).with_context(|| format!("loading {}", args.data.display()))?;
    Ok((ds, schema))
}

fn train_config(h: &HyperArgs, seed: u64) -> Result<TrainConfig> {
    train_config_from(h.k_upper, h.lambda_sparse, h.lambda_mag, h.max_epochs, h.patience, h.lr, seed)
}

fn train_config_from(
    k_upper: usize,
    lambda_sparse: f64,
    lambda_mag: f64,
    max_epochs: usize,
    patience: Option<usize>,
    lr: f64,
    seed: u64,
) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::new(k_upper).with_lambdas(lambda_sparse, lambda_mag).with_seed(seed);
    cfg.lr = lr;
    cfg.max_epochs = max_epochs;
    cfg.patience = patience.unwrap_or_else(|| cfg.patience.min(max_epochs.saturating_sub(1)));
    cfg.validate()?;
    Ok(cfg)
}

fn net_config(h: &HyperArgs, seed: u64) -> Result<NetConfig> {
    let base = NetConfig::default();
    let cfg = NetConfig {
        epochs: h.net_epochs,
        graph_k: h.k.unwrap_or(base.graph_k),
        ..base
    }
    .with_seed(seed);
    cfg.validate()?;
    Ok(cfg)
}

fn model_kind(s: &str) -> Result<ModelKind> {
    Ok(s.parse::<ModelKind>()?)
}

fn predictions_csv(ds: &SpatialDataset<f64>, pred: &[f64]) -> String {
    let mut s = String::from("node_id,y,y_hat\n");
    for (i, p) in pred.iter().enumerate() {
        let _ = writeln!(s, "{},{},{}", ds.node_ids[i], fmt_f64(ds.y[i]), fmt_f64(*p));
    }
    s
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

fn cmd_generate(a: GenerateArgs, name: &str, config: BTreeMap<String, String>) -> Result<()> {
    let kind: ScenarioKind = a.scenario.parse()?;
    let mut spec = ScenarioSpec::new(kind, a.common.seed);
    if a.lattice_side < 2 {
        bail!("--lattice-side must be at least 2");
    }
    spec.jitter_scale *= (spec.lattice_side - 1) as f64 / (a.lattice_side - 1) as f64;
    spec.lattice_side = a.lattice_side;
    spec.validate()?;
    let mut out = RunOutput::create(&a.common.out, name, config, a.common.seed)?;
    let ds = generate_scenario(&spec)?;
    export_scenario(&ds, &spec, &out.dir, "dataset")?;
    out.record("dataset.csv")?;
    out.record("dataset.truth.json")?;
    out.write("schema.cfg", scenario_schema().to_config().as_bytes())?;
    out.set_details(json!({ "rows": ds.len(), "covariates": ds.n_covariates() }));
    out.finish()
}

fn cmd_train(a: TrainArgs, name: &str, config: BTreeMap<String, String>) -> Result<()> {
    let seed = a.common.seed;
    let kind = model_kind(&a.model)?;
    let mut out = RunOutput::create(&a.common.out, name, config, seed)?;
    let (ds, _) = load_data(&a.data, &mut out)?;
    let (ckpt, pred, summary) = match kind {
        ModelKind::Zegnn => {
            let k = a.hyper.k.unwrap_or(DEFAULT_GRAPH_K);
            let cfg = train_config(&a.hyper, seed)?;
            let graph = build_knn_graph(ds.coords.view(), k)?;
            let fitted = fit(&ds, &graph, &cfg)?;
            out.write("trace.csv", fitted.report.trace_csv().as_bytes())?;
            let pred = fitted.predict(&ds, &graph)?;
            let r = &fitted.report;
            let summary = json!({
                "best_epoch": r.best_epoch,
                "stopped_epoch": r.stopped_epoch,
                "best_val_loss": r.best_val_loss,
            });
            (fitted.checkpoint(k)?, pred, summary)
        }
        other => {
            let bk = BaselineKind::from_model_kind(other).expect("baseline kind");
            let net = net_config(&a.hyper, seed)?;
            let graph = match bk.uses_graph() {
                true => Some(build_knn_graph(ds.coords.view(), net.graph_k)?),
                false => None,
            };
            let fitted = fit_baseline(bk, &ds, graph.as_ref(), &net)?;
            let mut summary = json!({});
            if let Some(rep) = &fitted.report {
                let mut s = String::from("epoch,train_loss\n");
                for (e, l) in rep.losses.iter().enumerate() {
                    let _ = writeln!(s, "{},{}", e + 1, fmt_f64(*l));
                }
                out.write("trace.csv", s.as_bytes())?;
                summary = json!({ "final_loss": rep.losses.last(), "max_clipped_norm": rep.max_clipped_norm });
            }
            let pred = fitted.predict(&ds, graph.as_ref())?;
            (fitted.checkpoint(ds.p_burden(), ds.p_capacity())?, pred, summary)
        }
    };
    let mut summary = summary;
    summary["model"] = json!(kind.name());
    summary["in_sample_r2"] = json!(evaluation::r_squared(ds.y.view(), pred.view()));
    summary["in_sample_rmse"] = json!(evaluation::rmse(ds.y.view(), pred.view()));
    out.write("checkpoint.json", &json_bytes(&ckpt)?)?;
    out.write("predictions.csv", predictions_csv(&ds, pred.as_slice().expect("contiguous")).as_bytes())?;
    out.write("train_summary.json", &json_bytes(&summary)?)?;
    out.finish()
}

fn cv_options(h: &HyperArgs, folds: usize, blocks: usize, in_sample: bool, seed: u64) -> Result<CvOptions> {
    Ok(CvOptions {
        folds,
        grid: blocks,
        train: train_config(h, seed)?,
        net: net_config(h, seed)?,
        in_sample,
        ..CvOptions::default()
    })
}

fn cmd_cv(a: CvArgs, name: &str, config: BTreeMap<String, String>) -> Result<()> {
    let seed = a.common.seed;
    let kind = model_kind(&a.model)?;
    let protocol: Protocol = a.protocol.parse()?;
    let mut out = RunOutput::create(&a.common.out, name, config, seed)?;
    let (ds, _) = load_data(&a.data, &mut out)?;
    let opts = cv_options(&a.hyper, a.folds, a.blocks, a.in_sample, seed)?;
    let point = GridPoint::new(
        a.hyper.k.unwrap_or(DEFAULT_GRAPH_K),
        a.hyper.k_upper,
        a.hyper.lambda_sparse,
        a.hyper.lambda_mag,
    );
    let report = run_cv(kind, &ds, protocol, &point, &opts, seed)?;
    let leaked: usize = report.folds.iter().map(|f| f.test_nodes_accessed).sum();
    if leaked > 0 {
        log::warn!("{leaked} held-out node accesses recorded during training");
    }
    out.write("cv_report.json", &json_bytes(&report)?)?;
    out.write("cv_folds.csv", report.folds_csv().as_bytes())?;
    out.write("cv_summary.csv", comparison_table(std::slice::from_ref(&report)).as_bytes())?;
    out.set_details(json!({
        "protocol": protocol.name(),
        "folds": report.folds.len(),
        "test_nodes_accessed": leaked,
        "fold_id": report.fold_id,
    }));
    out.finish()
}

fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| anyhow::anyhow!("grid entry `{key}` has an invalid value `{v}`")))
        .collect()
}

fn search_grid(a: &SearchArgs, out: &mut RunOutput) -> Result<SearchGrid> {
    let mut grid = SearchGrid::default();
    if let Some(p) = &a.grid {
        out.input(p)?;
        for (k, v) in read_config_file(&p.to_string_lossy())? {
            match k.as_str() {
                "k" => grid.graph_k = parse_list(&k, &v)?,
                "K-upper" => grid.k_upper = parse_list(&k, &v)?,
                "lambda-sparse" => grid.lambda_sparse = parse_list(&k, &v)?,
                "lambda-mag" => grid.lambda_mag = parse_list(&k, &v)?,
                other => bail!("unknown grid key `{other}`"),
            }
        }
    }
    if !a.k.is_empty() {
        grid.graph_k = a.k.clone();
    }
    if !a.k_upper.is_empty() {
        grid.k_upper = a.k_upper.clone();
    }
    if !a.lambda_sparse.is_empty() {
        grid.lambda_sparse = a.lambda_sparse.clone();
    }
    if !a.lambda_mag.is_empty() {
        grid.lambda_mag = a.lambda_mag.clone();
    }
    grid.validate()?;
    Ok(grid)
}

fn cmd_search(a: SearchArgs, name: &str, config: BTreeMap<String, String>) -> Result<()> {
    let seed = a.common.seed;
    let mut out = RunOutput::create(&a.common.out, name, config, seed)?;
    let (ds, _) = load_data(&a.data, &mut out)?;
    let grid = search_grid(&a, &mut out)?;
    let train = train_config_from(1, 0.0, 0.0, a.max_epochs, a.patience, TrainConfig::new(1).lr, seed)?;
    let opts = CvOptions {
        folds: a.folds,
        grid: a.blocks,
        train,
        in_sample: false,
        ..CvOptions::default()
    };
    let result = hyper_search(&ds, &grid, &opts, seed)?;
    let sel = result.selected_point();
    out.write("search_table.csv", result.table_csv().as_bytes())?;

    let mut profile = String::from("k,k_upper,lambda_sparse,lambda_mag,mean_spatial_r2,se_spatial_r2\n");
    let mut ks: Vec<usize> = result.rows.iter().map(|r| r.point.graph_k).collect();
    ks.sort_unstable();
    ks.dedup();
    for k in ks {
        let best = result
            .rows
            .iter()
            .filter(|r| r.point.graph_k == k)
            .fold(None, |acc: Option<&evaluation::SearchRow>, r| match acc {
                Some(b) if b.mean_r2 >= r.mean_r2 => Some(b),
                _ => Some(r),
            })
            .expect("non-empty grid");
        let p = best.point;
        let _ = writeln!(
            profile,
            "{},{},{},{},{},{}",
            k,
            p.k_upper,
            fmt_f64(p.lambda_sparse),
            fmt_f64(p.lambda_mag),
            fmt_f64(best.mean_r2),
            fmt_f64(best.se_r2)
        );
    }
    out.write("k_profile.csv", profile.as_bytes())?;

    let mut lam = String::from("lambda_sparse,lambda_mag,mean_spatial_r2,se_spatial_r2\n");
    for r in result.rows.iter().filter(|r| r.point.graph_k == sel.graph_k && r.point.k_upper == sel.k_upper) {
        let _ = writeln!(
            lam,
            "{},{},{},{}",
            fmt_f64(r.point.lambda_sparse),
            fmt_f64(r.point.lambda_mag),
            fmt_f64(r.mean_r2),
            fmt_f64(r.se_r2)
        );
    }
    out.write("lambda_at_selected_k.csv", lam.as_bytes())?;

    let selection = json!({
        "selected": sel,
        "best": result.rows[result.best].point,
        "best_mean_r2": result.rows[result.best].mean_r2,
        "threshold": result.threshold,
        "grid_points": result.rows.len(),
    });
    out.write("selected.json", &json_bytes(&selection)?)?;
    out.set_details(json!({ "selected": sel }));
    out.finish()
}

fn attach_truth(ds: &mut SpatialDataset<f64>, path: &Path, out: &mut RunOutput) -> Result<()> {
    out.input(path)?;
    let meta = load_metadata(path)?;
    if meta.truth.f_true.len() != ds.len() || meta.truth.grad_f.ncols() != ds.n_covariates() {
        return Err(zegnn::Error::Dimension(format!(
            "truth holds {}×{} gradients, dataset is {}×{}",
            meta.truth.grad_f.nrows(),
            meta.truth.grad_f.ncols(),
            ds.len(),
            ds.n_covariates()
        ))
        .into());
    }
    ds.truth = Some(meta.truth);
    Ok(())
}

fn cmd_diagnose(a: DiagnoseArgs, name: &str, config: BTreeMap<String, String>) -> Result<()> {
    let seed = a.common.seed;
    let mut out = RunOutput::create(&a.common.out, name, config, seed)?;
    out.input(&a.checkpoint)?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    if ckpt.model_kind != ModelKind::Zegnn {
        bail!("diagnose needs a zegnn checkpoint, got {}", ckpt.model_kind.name());
    }
    let (mut ds, _) = load_data(&a.data, &mut out)?;
    if ckpt.p_burden != ds.p_burden() || ckpt.p_capacity != ds.p_capacity() {
        return Err(zegnn::Error::Dimension(format!(
            "checkpoint expects {}+{} covariates, dataset has {}+{}",
            ckpt.p_burden,
            ckpt.p_capacity,
            ds.p_burden(),
            ds.p_capacity()
        ))
        .into());
    }
    if let Some(t) = &a.truth {
        attach_truth(&mut ds, t, &mut out)?;
    }
    let (params, stats) = ckpt.to_zegnn::<f64>()?;
    let graph = build_knn_graph(ds.coords.view(), ckpt.graph_k)?;
    let atlas = sensitivity_fields(&params, &stats, &ds, &graph)?;
    let fwd = forward_dataset(&params, &stats, &ds, &graph)?;
    let fd = finite_difference_check(&params, &stats.inputs(&ds)?, &graph, a.delta)?;

    out.write("atlas.csv", atlas.atlas_csv().as_bytes())?;
    out.write("summary.csv", atlas.summary_csv().as_bytes())?;

    let mut probs = String::from("node_id,k,p\n");
    for (i, row) in fwd.p.rows().into_iter().enumerate() {
        for (k, p) in row.iter().enumerate() {
            let _ = writeln!(probs, "{},{},{}", ds.node_ids[i], k, fmt_f64(*p));
        }
    }
    out.write("regime_probabilities.csv", probs.as_bytes())?;

    let mut ent = String::from("node_id,x,y,h_norm,t_eff,f,e_mix,s_mix\n");
    for i in 0..ds.len() {
        let _ = writeln!(
            ent,
            "{},{},{},{},{},{},{},{}",
            ds.node_ids[i],
            fmt_f64(ds.coords[[i, 0]]),
            fmt_f64(ds.coords[[i, 1]]),
            fmt_f64(fwd.h_norm[i]),
            fmt_f64(fwd.t_eff[i]),
            fmt_f64(fwd.f[i]),
            fmt_f64(fwd.e_mix[i]),
            fmt_f64(fwd.s_mix[i])
        );
    }
    out.write("entropy.csv", ent.as_bytes())?;

    let mut fds = String::from("variable,delta,correlation,mean_abs_error\n");
    for (j, n) in atlas.names.iter().enumerate() {
        let corr = fd.correlation[j].map(fmt_f64).unwrap_or_default();
        let _ = writeln!(fds, "{},{},{},{}", n, fmt_f64(fd.delta), corr, fmt_f64(fd.mean_abs_error[j]));
    }
    out.write("fd_check.csv", fds.as_bytes())?;

    let mut details = json!({ "graph_k": ckpt.graph_k, "k_upper": params.k() });
    if ds.truth.is_some() {
        let rows = gradient_matching(&atlas, ds.truth.as_ref())?;
        out.write("gradient_matching.csv", matching_csv(&rows).as_bytes())?;
        details["gradient_matching_rows"] = json!(rows.len());
    }
    out.set_details(details);
    out.finish()
}

fn cmd_report(a: ReportArgs, name: &str, config: BTreeMap<String, String>) -> Result<()> {
    let mut out = RunOutput::create(&a.common.out, name, config, a.common.seed)?;
    let mut reports: Vec<CvReport> = Vec::new();
    for p in &a.inputs {
        out.input(p)?;
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        reports.push(serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?);
    }
    let mut folds = String::new();
    for (i, r) in reports.iter().enumerate() {
        let table = r.folds_csv();
        let body = if i == 0 { table.as_str() } else { table.split_once('\n').map_or("", |(_, b)| b) };
        folds.push_str(body);
    }
    out.write("comparison.csv", comparison_table(&reports).as_bytes())?;
    out.write("regime_table.csv", regime_table(&reports).as_bytes())?;
    out.write("folds.csv", folds.as_bytes())?;
    out.finish()
}
