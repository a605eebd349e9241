//! Random and spatial-block cross-validation of every model on one scenario.
//!
//! Usage: `compare_cv [scenario] [seed]`

use std::time::Instant;

use zegnn::evaluation::{comparison_table, run_cv, CvOptions, GridPoint, Protocol};
use zegnn::model::ModelKind;
use zegnn::synthetic::{generate_scenario, ScenarioSpec};

fn main() -> zegnn::Result<()> {
    let kind = std::env::args().nth(1).unwrap_or_else(|| "nonlinear".into()).parse()?;
    let seed: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let ds = generate_scenario(&ScenarioSpec::new(kind, seed))?;
    let point = GridPoint::new(10, 3, 0.001, 0.001);
    let opts = CvOptions {
        in_sample: false,
        ..CvOptions::default()
    };
    let mut reports = Vec::new();
    for model in [ModelKind::Ols, ModelKind::Dnn, ModelKind::Gnn, ModelKind::Zegnn] {
        for protocol in [Protocol::Random, Protocol::SpatialBlock] {
            let start = Instant::now();
            let r = run_cv(model, &ds, protocol, &point, &opts, seed)?;
            eprintln!(
                "{} {} r2={:.4} se={:.4} secs={:.1}",
                model.name(),
                protocol.name(),
                r.mean_r2,
                r.se_r2,
                start.elapsed().as_secs_f64()
            );
            reports.push(r);
        }
    }
    print!("{}", comparison_table(&reports));
    Ok(())
}
