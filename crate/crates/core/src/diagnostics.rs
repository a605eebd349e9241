//! Gradient diagnostics of a fitted regime mixture: per-location sensitivity
//! fields, a perturbation check, importance and dominance indices, the role
//! reversal index, entropy-weighted importance and matching against known
//! ground-truth gradients.
//!
//! All sensitivities are in standardized units: the derivative of the
//! standardized prediction with respect to a standardized covariate shifted
//! by the same amount at every location.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::model::{forward, input_sensitivities, ZegnnParams};
use crate::scalar::Scalar;
use crate::synthetic::GroundTruthFields;
use crate::tabular::{fmt_f64, SpatialDataset, StandardInputs, TrainStats};

/// Entropy below which a location counts as a regime core.
pub const CORE_ENTROPY: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityAtlas {
    /// Covariate names, burden block first.
    pub names: Vec<String>,
    pub node_ids: Vec<usize>,
    /// Original-scale coordinates.
    pub coords: Array2<f64>,
    pub g_f: Array2<f64>,
    pub g_e: Array2<f64>,
    pub g_s: Array2<f64>,
    pub h_norm: Array1<f64>,
}

/// Exact sensitivity fields at every row of `ds`.
pub fn sensitivity_fields<T: Scalar>(
    params: &ZegnnParams<T>,
    stats: &TrainStats<T>,
    ds: &SpatialDataset<T>,
    graph: &SpatialGraph,
) -> Result<SensitivityAtlas> {
    let inputs = stats.inputs(ds)?;
    let sens = input_sensitivities(params, &inputs, graph)?;
    let out = forward(params, &inputs, graph)?;
    let f = |a: &Array2<T>| a.mapv(|v| v.to_f64_lossy());
    Ok(SensitivityAtlas {
        names: ds.covariate_names(),
        node_ids: ds.node_ids.clone(),
        coords: f(&ds.coords),
        g_f: f(&sens.g_f),
        g_e: f(&sens.g_e),
        g_s: f(&sens.g_s),
        h_norm: out.h_norm.mapv(|v| v.to_f64_lossy()),
    })
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let n = a.len();
    if n != b.len() || n < 2 {
        return None;
    }
    let ma = a.mean()?;
    let mb = b.mean()?;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdCheck {
    pub delta: f64,
    /// `corr(ΔF[:, j], gF[:, j])`, missing when either field is constant.
    pub correlation: Vec<Option<f64>>,
    /// `mean_i |ΔF_ij/δ − gF_ij|`.
    pub mean_abs_error: Vec<f64>,
}

/// Shifts each covariate by `delta` at every location, reruns the full
/// forward pass and compares the change in F with the exact sensitivities.
pub fn finite_difference_check<T: Scalar>(
    params: &ZegnnParams<T>,
    inputs: &StandardInputs<T>,
    graph: &SpatialGraph,
    delta: f64,
) -> Result<FdCheck> {
    if !(delta != 0.0 && delta.is_finite()) {
        return Err(Error::Parameter("delta must be finite and non-zero".into()));
    }
    let sens = input_sensitivities(params, inputs, graph)?;
    let base = forward(params, inputs, graph)?.f;
    let p = sens.g_f.ncols();
    let mut correlation = Vec::with_capacity(p);
    let mut mean_abs_error = Vec::with_capacity(p);
    for j in 0..p {
        let moved = forward(params, &inputs.shifted(j, T::c(delta)), graph)?.f;
        let df: Array1<f64> = moved.iter().zip(&base).map(|(a, b)| (*a - *b).to_f64_lossy()).collect();
        let g: Array1<f64> = sens.g_f.column(j).mapv(|v| v.to_f64_lossy());
        correlation.push(pearson(df.view(), g.view()));
        let err = df.iter().zip(&g).map(|(d, g)| (d / delta - g).abs()).sum::<f64>() / df.len().max(1) as f64;
        mean_abs_error.push(err);
    }
    Ok(FdCheck {
        delta,
        correlation,
        mean_abs_error,
    })
}

fn mean_abs(col: ArrayView1<f64>) -> f64 {
    col.iter().map(|v| v.abs()).sum::<f64>() / col.len().max(1) as f64
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

pub fn median_abs(col: ArrayView1<f64>) -> f64 {
    median(&mut col.iter().map(|v| v.abs()).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Importance {
    pub i_f: f64,
    pub i_e: f64,
    pub i_s: f64,
    /// `I_E / (I_E + I_S)`, missing when both are zero.
    pub d_e: Option<f64>,
}

/// Mean absolute sensitivities per covariate and the burden-dominance index.
pub fn importance_summary(g_f: ArrayView2<f64>, g_e: ArrayView2<f64>, g_s: ArrayView2<f64>) -> Vec<Importance> {
    (0..g_f.ncols())
        .map(|j| {
            let (i_f, i_e, i_s) = (mean_abs(g_f.column(j)), mean_abs(g_e.column(j)), mean_abs(g_s.column(j)));
            let d_e = (i_e + i_s > 0.0).then(|| i_e / (i_e + i_s));
            Importance { i_f, i_e, i_s, d_e }
        })
        .collect()
}

/// `Σ wᵢ|gF_ij| / Σ wᵢ` with `wᵢ = 1 − H̄ᵢ`; missing when every weight is zero.
pub fn core_importance(g_f: ArrayView2<f64>, h_norm: ArrayView1<f64>) -> Vec<Option<f64>> {
    let w: Vec<f64> = h_norm.iter().map(|h| (1.0 - h).max(0.0)).collect();
    let total: f64 = w.iter().sum();
    (0..g_f.ncols())
        .map(|j| {
            (total > 0.0).then(|| g_f.column(j).iter().zip(&w).map(|(g, w)| w * g.abs()).sum::<f64>() / total)
        })
        .collect()
}

/// Default screening tolerance: one percent of the median absolute gradient.
pub fn rri_tolerance(col: ArrayView1<f64>) -> f64 {
    0.01 * median_abs(col)
}

/// `2·min(q⁺, q⁻)` over locations with `|g| > tol`; zero when none pass.
pub fn role_reversal_index(col: ArrayView1<f64>, tol: f64) -> f64 {
    let (mut pos, mut neg) = (0usize, 0usize);
    for &g in col {
        if g.abs() > tol {
            if g > 0.0 {
                pos += 1;
            } else {
                neg += 1;
            }
        }
    }
    let total = pos + neg;
    if total == 0 {
        return 0.0;
    }
    2.0 * pos.min(neg) as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSummary {
    pub variable: String,
    pub i_f: f64,
    pub i_e: f64,
    pub i_s: f64,
    pub d_e: Option<f64>,
    pub i_core: Option<f64>,
    pub rri: f64,
    pub median_abs_gf: f64,
}

impl SensitivityAtlas {
    pub fn n(&self) -> usize {
        self.g_f.nrows()
    }

    pub fn summary(&self) -> Vec<VariableSummary> {
        let imp = importance_summary(self.g_f.view(), self.g_e.view(), self.g_s.view());
        let core = core_importance(self.g_f.view(), self.h_norm.view());
        self.names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let col = self.g_f.column(j);
                VariableSummary {
                    variable: name.clone(),
                    i_f: imp[j].i_f,
                    i_e: imp[j].i_e,
                    i_s: imp[j].i_s,
                    d_e: imp[j].d_e,
                    i_core: core[j],
                    rri: role_reversal_index(col, rri_tolerance(col)),
                    median_abs_gf: median_abs(col),
                }
            })
            .collect()
    }

    /// Long form: one row per location and covariate.
    pub fn atlas_csv(&self) -> String {
        let mut s = String::from("node_id,x,y,variable,gF,gE,gS\n");
        for i in 0..self.n() {
            for (j, name) in self.names.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    self.node_ids[i],
                    fmt_f64(self.coords[[i, 0]]),
                    fmt_f64(self.coords[[i, 1]]),
                    name,
                    fmt_f64(self.g_f[[i, j]]),
                    fmt_f64(self.g_e[[i, j]]),
                    fmt_f64(self.g_s[[i, j]])
                );
            }
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mut s = String::from("variable,I_F,I_E,I_S,D_E,I_core,RRI,median_abs_gF\n");
        for v in self.summary() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                v.variable,
                fmt_f64(v.i_f),
                fmt_f64(v.i_e),
                fmt_f64(v.i_s),
                opt(v.d_e),
                opt(v.i_core),
                fmt_f64(v.rri),
                fmt_f64(v.median_abs_gf)
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientMatch {
    pub variable: String,
    pub corr_f: Option<f64>,
    pub corr_e: Option<f64>,
    pub corr_s: Option<f64>,
    /// Share of core locations where `gF` and the true `∂F` share a sign.
    pub core_sign_agreement: Option<f64>,
    pub core_count: usize,
}

/// Correlation of each learned field with the ground truth, column by
/// column, plus sign agreement of `gF` on regime cores.
pub fn gradient_matching(atlas: &SensitivityAtlas, truth: Option<&GroundTruthFields>) -> Result<Vec<GradientMatch>> {
    let truth = truth.ok_or(Error::TruthUnavailable)?;
    if truth.grad_f.dim() != atlas.g_f.dim() {
        return Err(Error::Dimension(format!(
            "truth gradients {:?}, atlas {:?}",
            truth.grad_f.dim(),
            atlas.g_f.dim()
        )));
    }
    let cores: Vec<usize> = (0..atlas.n()).filter(|&i| atlas.h_norm[i] < CORE_ENTROPY).collect();
    Ok(atlas
        .names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let agree = cores
                .iter()
                .filter(|&&i| {
                    let (a, b) = (atlas.g_f[[i, j]], truth.grad_f[[i, j]]);
                    a.signum() == b.signum() && a != 0.0 && b != 0.0
                })
                .count();
            GradientMatch {
                variable: name.clone(),
                corr_f: pearson(atlas.g_f.column(j), truth.grad_f.column(j)),
                corr_e: pearson(atlas.g_e.column(j), truth.grad_e.column(j)),
                corr_s: pearson(atlas.g_s.column(j), truth.grad_s.column(j)),
                core_sign_agreement: (!cores.is_empty()).then(|| agree as f64 / cores.len() as f64),
                core_count: cores.len(),
            }
        })
        .collect())
}

pub fn matching_csv(rows: &[GradientMatch]) -> String {
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut s = String::from("variable,corr_F,corr_E,corr_S,core_sign_agreement,core_count\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.variable,
            opt(r.corr_f),
            opt(r.corr_e),
            opt(r.corr_s),
            opt(r.core_sign_agreement),
            r.core_count
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn dominance_limits() {
        let g = array![[1.0, 2.0], [-1.0, 2.0]];
        let zero = Array2::zeros((2, 2));
        let imp = importance_summary(g.view(), zero.view(), g.view());
        assert_eq!(imp[0].d_e, Some(0.0));
        let imp = importance_summary(g.view(), g.view(), g.view());
        assert_eq!(imp[1].d_e, Some(0.5));
        let imp = importance_summary(g.view(), zero.view(), zero.view());
        assert_eq!(imp[0].d_e, None);
        assert_eq!(imp[0].i_f, 1.0);
    }

    #[test]
    fn core_importance_weights() {
        let g = array![[1.0, -4.0], [3.0, 2.0], [-5.0, 0.0]];
        let imp = importance_summary(g.view(), g.view(), g.view());
        let c = core_importance(g.view(), Array1::zeros(3).view());
        assert_eq!(c[0], Some(imp[0].i_f));
        assert_eq!(c[1], Some(imp[1].i_f));
        let c = core_importance(g.view(), array![1.0, 0.0, 1.0].view());
        assert_eq!(c, vec![Some(3.0), Some(2.0)]);
        assert_eq!(core_importance(g.view(), Array1::ones(3).view()), vec![None, None]);
    }

    #[test]
    fn role_reversal_cases() {
        assert_eq!(role_reversal_index(array![1.0, 2.0, 0.5].view(), 0.0), 0.0);
        assert_eq!(role_reversal_index(array![1.0, -2.0, 3.0, -0.5].view(), 0.0), 1.0);
        assert_eq!(role_reversal_index(array![1e-9, -1e-9].view(), 1e-6), 0.0);
        let col = array![3.0, -1.0, 2.0, 4.0];
        let r = role_reversal_index(col.view(), 0.0);
        assert_abs_diff_eq!(r, 0.5);
        assert_eq!(role_reversal_index(col.mapv(|v| -7.0 * v).view(), 0.0), r);
    }

    #[test]
    fn pearson_edge_cases() {
        let a = array![1.0, 2.0, 3.0];
        assert_abs_diff_eq!(pearson(a.view(), a.view()).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pearson(a.view(), (-&a).view()).unwrap(), -1.0, epsilon = 1e-15);
        assert_eq!(pearson(a.view(), Array1::ones(3).view()), None);
        assert_eq!(median(&mut [3.0, 1.0, 2.0, 10.0]), 2.5);
    }
}
