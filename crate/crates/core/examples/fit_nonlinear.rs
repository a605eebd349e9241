//! Fits the model on the nonlinear scenario and prints fit quality, the
//! perturbation check and gradient matching against the known truth.
//!
//! Usage: `fit_nonlinear [seed] [graph_k] [lambda_sparse] [lambda_mag]`

use std::time::Instant;

use zegnn::diagnostics::{finite_difference_check, gradient_matching, sensitivity_fields};
use zegnn::evaluation::r_squared;
use zegnn::graph::build_knn_graph;
use zegnn::synthetic::{generate_scenario, ScenarioKind, ScenarioSpec};
use zegnn::training::{fit, TrainConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> zegnn::Result<()> {
    let seed: u64 = arg(1, 1);
    let k: usize = arg(2, 10);
    let (ls, lm): (f64, f64) = (arg(3, 0.001), arg(4, 0.001));
    let ds = generate_scenario(&ScenarioSpec::new(ScenarioKind::Nonlinear, seed))?;
    let graph = build_knn_graph(ds.coords.view(), k)?;
    let cfg = TrainConfig::new(3).with_lambdas(ls, lm).with_seed(seed);
    let start = Instant::now();
    let model = fit(&ds, &graph, &cfg)?;
    let secs = start.elapsed().as_secs_f64();
    let pred = model.predict(&ds, &graph)?;
    println!(
        "epochs={} best={} r2={:.4} secs={secs:.1}",
        model.report.stopped_epoch,
        model.report.best_epoch,
        r_squared(ds.y.view(), pred.view())
    );
    let inputs = model.stats.inputs(&ds)?;
    let fd = finite_difference_check(&model.params, &inputs, &graph, 0.1)?;
    println!("fd corr: {:?}", fd.correlation);
    let atlas = sensitivity_fields(&model.params, &model.stats, &ds, &graph)?;
    for m in gradient_matching(&atlas, ds.truth.as_ref())? {
        println!(
            "{} corrF={:?} corrE={:?} corrS={:?} core_sign={:?} cores={}",
            m.variable, m.corr_f, m.corr_e, m.corr_s, m.core_sign_agreement, m.core_count
        );
    }
    print!("{}", atlas.summary_csv());
    Ok(())
}
