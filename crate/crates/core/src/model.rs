//! Regime-mixture free-energy regressor.
//!
//! For node `i` and regime `k`:
//!
//! ```text
//! F_ik  = E_ik − T_k · S_ik
//! F_i   = Σ_k p_ik F_ik + T_eff,i · H̄_i
//! H̄_i   = (log(1 + ε) − Σ_k p_ik log(p_ik + ε)) / (log(1 + ε) − log(1/K + ε))
//! T_eff,i = Σ_k p_ik T_k
//! E_i   = Σ_k p_ik E_ik,   S_i = Σ_k p_ik S_ik
//! ```
//!
//! `E_ik` and `S_ik` come from two one-hidden-layer channels over the burden
//! and capacity blocks. `p_ik` comes from a two-hidden-layer gating network
//! over `[x_E | x_S | coords]` whose logits are diffused over the spatial
//! graph before the softmax. Temperatures are `T_k = softplus(τ_k)`.
//!
//! Gradients are hand-derived for this fixed architecture: [`backward`]
//! is the reverse pass for any scalar function of the outputs, and
//! [`input_sensitivities`] gives the per-location derivatives used by the
//! diagnostics.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::nn::{relu, relu_backward, sigmoid, softmax_rows, softmax_rows_backward, softplus, softplus_inv, Dense};
use crate::scalar::Scalar;
use crate::tabular::{write_atomic, StandardInputs, TrainStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k_upper: usize,
    /// Width of the burden and capacity encoders.
    pub hidden: usize,
    /// Width of both gating hidden layers.
    pub gate_hidden: usize,
    /// Number of diffusion steps applied to the gating logits.
    pub diffusion_steps: usize,
    pub entropy_eps: f64,
}

impl ModelConfig {
    pub fn new(k_upper: usize) -> Self {
        ModelConfig {
            k_upper,
            hidden: 64,
            gate_hidden: 64,
            diffusion_steps: 1,
            entropy_eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZegnnParams<T> {
    pub config: ModelConfig,
    pub p_burden: usize,
    pub p_capacity: usize,
    pub burden_enc: Dense<T>,
    pub burden_head: Dense<T>,
    pub capacity_enc: Dense<T>,
    pub capacity_head: Dense<T>,
    pub gate1: Dense<T>,
    pub gate2: Dense<T>,
    pub gate3: Dense<T>,
    /// Unconstrained temperatures.
    pub tau_raw: Array1<T>,
}

/// Random initialisation; `T_k = 1` for every regime.
pub fn init_params<T: Scalar>(
    p_burden: usize,
    p_capacity: usize,
    config: ModelConfig,
    seed: u64,
) -> Result<ZegnnParams<T>> {
    if p_burden == 0 || p_capacity == 0 || config.k_upper == 0 || config.hidden == 0 || config.gate_hidden == 0 {
        return Err(Error::Parameter("model dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, g, k) = (config.hidden, config.gate_hidden, config.k_upper);
    let gate_in = p_burden + p_capacity + 2;
    Ok(ZegnnParams {
        p_burden,
        p_capacity,
        burden_enc: Dense::init(p_burden, h, &mut rng),
        burden_head: Dense::init(h, k, &mut rng),
        capacity_enc: Dense::init(p_capacity, h, &mut rng),
        capacity_head: Dense::init(h, k, &mut rng),
        gate1: Dense::init(gate_in, g, &mut rng),
        gate2: Dense::init(g, g, &mut rng),
        gate3: Dense::init(g, k, &mut rng),
        tau_raw: Array1::from_elem(k, softplus_inv(T::one())),
        config,
    })
}

impl<T: Scalar> ZegnnParams<T> {
    pub fn k(&self) -> usize {
        self.config.k_upper
    }

    pub fn temperatures(&self) -> Array1<T> {
        positive_transform(self.tau_raw.view())
    }

    fn layers(&self) -> [&Dense<T>; 7] {
        [
            &self.burden_enc,
            &self.burden_head,
            &self.capacity_enc,
            &self.capacity_head,
            &self.gate1,
            &self.gate2,
            &self.gate3,
        ]
    }

    fn layers_mut(&mut self) -> [&mut Dense<T>; 7] {
        [
            &mut self.burden_enc,
            &mut self.burden_head,
            &mut self.capacity_enc,
            &mut self.capacity_head,
            &mut self.gate1,
            &mut self.gate2,
            &mut self.gate3,
        ]
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for l in z.layers_mut() {
            *l = l.zeros_like();
        }
        z.tau_raw.fill(T::zero());
        z
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|l| l.n_params()).sum::<usize>() + self.tau_raw.len()
    }

    /// Layers in declaration order, then `tau_raw`.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in self.layers() {
            l.write_flat(&mut out);
        }
        out.extend(self.tau_raw.iter().copied());
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                flat.len(),
                self.n_params()
            )));
        }
        let mut rest = flat;
        for l in self.layers_mut() {
            rest = l.read_flat(rest);
        }
        for (d, s) in self.tau_raw.iter_mut().zip(rest) {
            *d = *s;
        }
        Ok(())
    }

    pub fn layer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let names = [
            "burden_enc",
            "burden_head",
            "capacity_enc",
            "capacity_head",
            "gate1",
            "gate2",
            "gate3",
        ];
        let mut v: Vec<(String, Vec<usize>)> = names
            .iter()
            .zip(self.layers())
            .flat_map(|(n, l)| {
                [
                    (format!("{n}.w"), vec![l.fan_in(), l.fan_out()]),
                    (format!("{n}.b"), vec![l.fan_out()]),
                ]
            })
            .collect();
        v.push(("tau_raw".into(), vec![self.tau_raw.len()]));
        v
    }

    pub fn cast<U: Scalar>(&self) -> ZegnnParams<U> {
        ZegnnParams {
            config: self.config.clone(),
            p_burden: self.p_burden,
            p_capacity: self.p_capacity,
            burden_enc: self.burden_enc.cast(),
            burden_head: self.burden_head.cast(),
            capacity_enc: self.capacity_enc.cast(),
            capacity_head: self.capacity_head.cast(),
            gate1: self.gate1.cast(),
            gate2: self.gate2.cast(),
            gate3: self.gate3.cast(),
            tau_raw: self.tau_raw.mapv(|v| U::c(v.to_f64_lossy())),
        }
    }
}

/// `T_k = log(1 + exp(τ_k))`.
pub fn positive_transform<T: Scalar>(tau_raw: ArrayView1<T>) -> Array1<T> {
    tau_raw.mapv(softplus)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutputs<T> {
    /// Standardized prediction.
    pub f: Array1<T>,
    pub e_mix: Array1<T>,
    pub s_mix: Array1<T>,
    /// Regime probabilities, `N × K`.
    pub p: Array2<T>,
    /// Normalized gating entropy in `[0, 1]`.
    pub h_norm: Array1<T>,
    pub e_reg: Array2<T>,
    pub s_reg: Array2<T>,
    pub f_reg: Array2<T>,
    pub t: Array1<T>,
    pub t_eff: Array1<T>,
}

impl<T: Scalar> ForwardOutputs<T> {
    pub fn n(&self) -> usize {
        self.f.len()
    }

    pub fn k(&self) -> usize {
        self.t.len()
    }

    /// Largest violation of the mixture identities; zero up to rounding.
    pub fn identity_residual(&self, eps: T) -> T {
        let mut worst = T::zero();
        let mut upd = |v: T| {
            let a = v.abs();
            if !(a <= worst) {
                worst = a;
            }
        };
        let k = self.k();
        for i in 0..self.n() {
            let row = self.p.row(i);
            upd(row.sum() - T::one());
            for &v in row.iter() {
                if v < T::zero() {
                    upd(v);
                }
            }
            let h = self.h_norm[i];
            if h < T::zero() {
                upd(h);
            }
            if h > T::one() {
                upd(h - T::one());
            }
            let mut fm = T::zero();
            let mut em = T::zero();
            let mut sm = T::zero();
            let mut te = T::zero();
            for kk in 0..k {
                upd(self.f_reg[[i, kk]] - (self.e_reg[[i, kk]] - self.t[kk] * self.s_reg[[i, kk]]));
                fm += row[kk] * self.f_reg[[i, kk]];
                em += row[kk] * self.e_reg[[i, kk]];
                sm += row[kk] * self.s_reg[[i, kk]];
                te += row[kk] * self.t[kk];
            }
            upd(self.f[i] - (fm + self.t_eff[i] * h));
            upd(self.e_mix[i] - em);
            upd(self.s_mix[i] - sm);
            upd(self.t_eff[i] - te);
            if k == 1 {
                upd(h);
                upd(self.f[i] - (self.e_reg[[i, 0]] - self.t[0] * self.s_reg[[i, 0]]));
            } else {
                upd(h - normalized_entropy(row, eps));
            }
        }
        worst
    }
}

/// Entropy scale `log(1 + ε) − log(1/K + ε)`, which is `log K` up to `O(Kε)`.
pub fn entropy_scale<T: Scalar>(k: usize, eps: T) -> T {
    let kf = T::from_usize_lossy(k);
    eps.ln_1p() - (T::one() / kf + eps).ln()
}

/// `(log(1 + ε) − Σ p log(p + ε)) / (log(1 + ε) − log(1/K + ε))`; zero when `K = 1`.
///
/// The ε-stabilized entropy shifted and scaled so that it is exactly 0 at a
/// one-hot row and exactly 1 at the uniform row. Concavity keeps it in `[0, 1]`.
pub fn normalized_entropy<T: Scalar>(p: ArrayView1<T>, eps: T) -> T {
    let k = p.len();
    if k <= 1 {
        return T::zero();
    }
    let h: T = p.iter().map(|&v| v * (v + eps).ln()).sum();
    (eps.ln_1p() - h) / entropy_scale(k, eps)
}

/// Combines per-regime channel outputs, probabilities and temperatures.
pub fn assemble<T: Scalar>(
    e_reg: Array2<T>,
    s_reg: Array2<T>,
    p: Array2<T>,
    t: Array1<T>,
    eps: T,
) -> Result<ForwardOutputs<T>> {
    let (n, k) = e_reg.dim();
    if s_reg.dim() != (n, k) || p.dim() != (n, k) || t.len() != k {
        return Err(Error::Dimension("regime outputs, probabilities and temperatures disagree".into()));
    }
    let f_reg = &e_reg - &(&s_reg * &t);
    let mut f = Array1::zeros(n);
    let mut e_mix = Array1::zeros(n);
    let mut s_mix = Array1::zeros(n);
    let mut h_norm = Array1::zeros(n);
    let mut t_eff = Array1::zeros(n);
    for i in 0..n {
        let row = p.row(i);
        let h = normalized_entropy(row, eps);
        let te: T = row.iter().zip(t.iter()).map(|(&a, &b)| a * b).sum();
        let fm: T = row.iter().zip(f_reg.row(i).iter()).map(|(&a, &b)| a * b).sum();
        e_mix[i] = row.iter().zip(e_reg.row(i).iter()).map(|(&a, &b)| a * b).sum();
        s_mix[i] = row.iter().zip(s_reg.row(i).iter()).map(|(&a, &b)| a * b).sum();
        h_norm[i] = h;
        t_eff[i] = te;
        f[i] = fm + te * h;
    }
    let out = ForwardOutputs {
        f,
        e_mix,
        s_mix,
        p,
        h_norm,
        e_reg,
        s_reg,
        f_reg,
        t,
        t_eff,
    };
    #[cfg(debug_assertions)]
    debug_check_identities(&out, eps);
    Ok(out)
}

/// Debug builds verify the mixture identities on every assembled output.
/// Non-finite outputs are left to the divergence guard.
#[cfg(debug_assertions)]
fn debug_check_identities<T: Scalar>(out: &ForwardOutputs<T>, eps: T) {
    let p_ok = out.p.iter().all(|v| v.is_finite() && *v >= T::zero());
    if !p_ok || !out.f_reg.iter().chain(out.t.iter()).all(|v| v.is_finite()) {
        return;
    }
    let scale = out.f_reg.iter().chain(out.e_reg.iter()).chain(out.s_reg.iter()).fold(T::zero(), |m, v| m.max(v.abs()));
    let tol = (T::c(1e3) * T::epsilon() * (T::one() + scale)).max(T::c(1e-9));
    let r = out.identity_residual(eps);
    assert!(r <= tol, "mixture identity residual {r:?} exceeds {tol:?}");
}

/// Intermediate activations kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    x_burden: Array2<T>,
    x_capacity: Array2<T>,
    gate_in: Array2<T>,
    zb: Array2<T>,
    hb: Array2<T>,
    zs: Array2<T>,
    hs: Array2<T>,
    zg1: Array2<T>,
    ag1: Array2<T>,
    zg2: Array2<T>,
    ag2: Array2<T>,
}

fn check_inputs<T: Scalar>(params: &ZegnnParams<T>, inputs: &StandardInputs<T>, graph: &SpatialGraph) -> Result<()> {
    let n = inputs.n();
    if inputs.x_capacity.nrows() != n || inputs.coords.nrows() != n {
        return Err(Error::Dimension("input blocks have different row counts".into()));
    }
    if graph.n() != n {
        return Err(Error::Dimension(format!("graph has {} nodes, inputs have {n} rows", graph.n())));
    }
    if inputs.x_burden.ncols() != params.p_burden
        || inputs.x_capacity.ncols() != params.p_capacity
        || inputs.coords.ncols() != 2
    {
        return Err(Error::Dimension(format!(
            "model expects {} burden and {} capacity columns plus 2 coordinates",
            params.p_burden, params.p_capacity
        )));
    }
    let finite = inputs.x_burden.iter().chain(inputs.x_capacity.iter()).chain(inputs.coords.iter()).all(|v| v.is_finite());
    if !finite {
        return Err(Error::NonFinite("model inputs".into()));
    }
    Ok(())
}

pub fn forward<T: Scalar>(params: &ZegnnParams<T>, inputs: &StandardInputs<T>, graph: &SpatialGraph) -> Result<ForwardOutputs<T>> {
    forward_with_cache(params, inputs, graph).map(|(o, _)| o)
}

pub fn forward_with_cache<T: Scalar>(
    params: &ZegnnParams<T>,
    inputs: &StandardInputs<T>,
    graph: &SpatialGraph,
) -> Result<(ForwardOutputs<T>, ForwardCache<T>)> {
    run_forward(params, inputs, graph, None)
}

/// Which rectifier units were active, per layer and row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    burden: Array2<bool>,
    capacity: Array2<bool>,
    gate1: Array2<bool>,
    gate2: Array2<bool>,
}

impl ActivationPattern {
    /// Number of rectifier units whose state differs from `other`.
    pub fn flips(&self, other: &ActivationPattern) -> usize {
        [
            (&self.burden, &other.burden),
            (&self.capacity, &other.capacity),
            (&self.gate1, &other.gate1),
            (&self.gate2, &other.gate2),
        ]
        .iter()
        .map(|(a, b)| a.iter().zip(b.iter()).filter(|(x, y)| x != y).count())
        .sum()
    }
}

impl<T: Scalar> ForwardCache<T> {
    pub fn activation_pattern(&self) -> ActivationPattern {
        let on = |z: &Array2<T>| z.mapv(|v| v > T::zero());
        ActivationPattern {
            burden: on(&self.zb),
            capacity: on(&self.zs),
            gate1: on(&self.zg1),
            gate2: on(&self.zg2),
        }
    }
}

/// Forward pass with every rectifier held at `pattern`'s on/off state.
///
/// Around the point where `pattern` was recorded this coincides with
/// [`forward`], and it stays smooth when a perturbation pushes a unit across
/// its kink, which makes it the right target for finite-difference checks.
pub fn forward_with_pattern<T: Scalar>(
    params: &ZegnnParams<T>,
    inputs: &StandardInputs<T>,
    graph: &SpatialGraph,
    pattern: &ActivationPattern,
) -> Result<ForwardOutputs<T>> {
    run_forward(params, inputs, graph, Some(pattern)).map(|(o, _)| o)
}

fn gate<T: Scalar>(z: &Array2<T>, mask: Option<&Array2<bool>>) -> Result<Array2<T>> {
    match mask {
        None => Ok(relu(z)),
        Some(m) if m.dim() == z.dim() => {
            Ok(ndarray::Zip::from(z).and(m).map_collect(|&v, &on| if on { v } else { T::zero() }))
        }
        Some(_) => Err(Error::Dimension("activation pattern has the wrong shape".into())),
    }
}

fn run_forward<T: Scalar>(
    params: &ZegnnParams<T>,
    inputs: &StandardInputs<T>,
    graph: &SpatialGraph,
    pattern: Option<&ActivationPattern>,
) -> Result<(ForwardOutputs<T>, ForwardCache<T>)> {
    check_inputs(params, inputs, graph)?;
    let zb = params.burden_enc.forward(inputs.x_burden.view());
    let hb = gate(&zb, pattern.map(|p| &p.burden))?;
    let e_reg = params.burden_head.forward(hb.view());
    let zs = params.capacity_enc.forward(inputs.x_capacity.view());
    let hs = gate(&zs, pattern.map(|p| &p.capacity))?;
    let s_reg = params.capacity_head.forward(hs.view());

    let gate_in = ndarray::concatenate(
        Axis(1),
        &[inputs.x_burden.view(), inputs.x_capacity.view(), inputs.coords.view()],
    )
    .expect("blocks share row count");
    let zg1 = params.gate1.forward(gate_in.view());
    let ag1 = gate(&zg1, pattern.map(|p| &p.gate1))?;
    let zg2 = params.gate2.forward(ag1.view());
    let ag2 = gate(&zg2, pattern.map(|p| &p.gate2))?;
    let raw_logits = params.gate3.forward(ag2.view());
    let logits = graph.diffuse_steps(raw_logits.view(), params.config.diffusion_steps)?;
    let p = if params.k() == 1 {
        Array2::ones(logits.raw_dim())
    } else {
        softmax_rows(&logits)
    };
    let out = assemble(e_reg, s_reg, p, params.temperatures(), T::c(params.config.entropy_eps))?;
    let cache = ForwardCache {
        x_burden: inputs.x_burden.clone(),
        x_capacity: inputs.x_capacity.clone(),
        gate_in,
        zb,
        hb,
        zs,
        hs,
        zg1,
        ag1,
        zg2,
        ag2,
    };
    Ok((out, cache))
}

/// Sensitivities of a scalar objective with respect to the forward outputs.
/// Absent fields are zero.
#[derive(Debug, Clone, Default)]
pub struct Upstream<T> {
    pub d_f: Option<Array1<T>>,
    pub d_e_mix: Option<Array1<T>>,
    pub d_s_mix: Option<Array1<T>>,
    pub d_p: Option<Array2<T>>,
    pub d_e_reg: Option<Array2<T>>,
    pub d_s_reg: Option<Array2<T>>,
}

/// Gradients of the objective with respect to the three input blocks.
#[derive(Debug, Clone)]
pub struct InputGrads<T> {
    pub x_burden: Array2<T>,
    pub x_capacity: Array2<T>,
    pub coords: Array2<T>,
}

/// `∂F/∂P` (without the `dF` factor): `F_ik + T_k H̄_i + T_eff,i ∂H̄_i/∂p_ik`.
fn dfree_dp<T: Scalar>(out: &ForwardOutputs<T>, eps: T) -> Array2<T> {
    let (n, k) = out.p.dim();
    let mut d = Array2::zeros((n, k));
    let inv_scale = if k > 1 { T::one() / entropy_scale(k, eps) } else { T::zero() };
    for i in 0..n {
        for kk in 0..k {
            let p = out.p[[i, kk]];
            let dh = -inv_scale * ((p + eps).ln() + p / (p + eps));
            d[[i, kk]] = out.f_reg[[i, kk]] + out.t[kk] * out.h_norm[i] + out.t_eff[i] * dh;
        }
    }
    d
}

fn col<T: Scalar>(v: &Array1<T>) -> ndarray::ArrayView2<'_, T> {
    v.view().insert_axis(Axis(1))
}

/// Reverse pass: gradients of `Σ upstream · outputs` with respect to every
/// parameter and every input.
pub fn backward<T: Scalar>(
    params: &ZegnnParams<T>,
    graph: &SpatialGraph,
    out: &ForwardOutputs<T>,
    cache: &ForwardCache<T>,
    up: &Upstream<T>,
) -> Result<(ZegnnParams<T>, InputGrads<T>)> {
    let (n, k) = out.p.dim();
    let eps = T::c(params.config.entropy_eps);
    let mut d_e_reg = up.d_e_reg.clone().unwrap_or_else(|| Array2::zeros((n, k)));
    let mut d_s_reg = up.d_s_reg.clone().unwrap_or_else(|| Array2::zeros((n, k)));
    let mut d_p = up.d_p.clone().unwrap_or_else(|| Array2::zeros((n, k)));
    let mut d_t = Array1::<T>::zeros(k);

    if let Some(df) = &up.d_f {
        let dfc = col(df);
        d_e_reg += &(&out.p * &dfc);
        d_s_reg -= &(&(&out.p * &dfc) * &out.t);
        d_p += &(&dfree_dp(out, eps) * &dfc);
        for i in 0..n {
            for kk in 0..k {
                d_t[kk] += df[i] * out.p[[i, kk]] * (out.h_norm[i] - out.s_reg[[i, kk]]);
            }
        }
    }
    if let Some(de) = &up.d_e_mix {
        d_e_reg += &(&out.p * &col(de));
        d_p += &(&out.e_reg * &col(de));
    }
    if let Some(ds) = &up.d_s_mix {
        d_s_reg += &(&out.p * &col(ds));
        d_p += &(&out.s_reg * &col(ds));
    }

    let mut grads = params.zeros_like();
    let sig = params.tau_raw.mapv(sigmoid);
    grads.tau_raw = &d_t * &sig;

    let d_zb = relu_backward(&cache.zb, {
        let (g, dh) = params.burden_head.backward(cache.hb.view(), d_e_reg.view());
        grads.burden_head = g;
        dh
    });
    let (g, dxb) = params.burden_enc.backward(cache.x_burden.view(), d_zb.view());
    grads.burden_enc = g;

    let d_zs = relu_backward(&cache.zs, {
        let (g, dh) = params.capacity_head.backward(cache.hs.view(), d_s_reg.view());
        grads.capacity_head = g;
        dh
    });
    let (g, dxs) = params.capacity_enc.backward(cache.x_capacity.view(), d_zs.view());
    grads.capacity_enc = g;

    let d_logits = if k == 1 { Array2::zeros((n, k)) } else { softmax_rows_backward(&out.p, &d_p) };
    let d_raw = graph.diffuse_transpose_steps(d_logits.view(), params.config.diffusion_steps)?;
    let (g3, d_ag2) = params.gate3.backward(cache.ag2.view(), d_raw.view());
    let d_zg2 = relu_backward(&cache.zg2, d_ag2);
    let (g2, d_ag1) = params.gate2.backward(cache.ag1.view(), d_zg2.view());
    let d_zg1 = relu_backward(&cache.zg1, d_ag1);
    let (g1, d_gate_in) = params.gate1.backward(cache.gate_in.view(), d_zg1.view());
    grads.gate1 = g1;
    grads.gate2 = g2;
    grads.gate3 = g3;

    let (pe, ps) = (params.p_burden, params.p_capacity);
    let inputs = InputGrads {
        x_burden: dxb + &d_gate_in.slice(s![.., 0..pe]),
        x_capacity: dxs + &d_gate_in.slice(s![.., pe..pe + ps]),
        coords: d_gate_in.slice(s![.., pe + ps..]).to_owned(),
    };
    Ok((grads, inputs))
}

/// Per-location derivatives of `F`, `E` (mixture) and `S` (mixture).
///
/// Entry `[i, j]` is the derivative of node `i`'s output when input column
/// `j` is shifted by the same amount at every node, so it includes the
/// contribution that reaches node `i` through its neighbours' diffused gating
/// logits. Columns follow `[burden | capacity]`; coordinate columns are kept
/// separately.
#[derive(Debug, Clone)]
pub struct InputSensitivities<T> {
    pub g_f: Array2<T>,
    pub g_e: Array2<T>,
    pub g_s: Array2<T>,
    pub g_f_coords: Array2<T>,
    pub g_e_coords: Array2<T>,
    pub g_s_coords: Array2<T>,
}

pub fn input_sensitivities<T: Scalar>(
    params: &ZegnnParams<T>,
    inputs: &StandardInputs<T>,
    graph: &SpatialGraph,
) -> Result<InputSensitivities<T>> {
    let (out, cache) = forward_with_cache(params, inputs, graph)?;
    let (n, k) = out.p.dim();
    let (pe, ps) = (params.p_burden, params.p_capacity);
    let width = pe + ps + 2;
    let eps = T::c(params.config.entropy_eps);

    // Channel rows depend only on their own inputs, so a reverse pass with
    // per-row upstream weights yields Σ_k w_ik ∂E_ik/∂x_ij row by row.
    let burden_vjp = |w: &Array2<T>| {
        let dh = params.burden_head.backward_input(w.view());
        params.burden_enc.backward_input(relu_backward(&cache.zb, dh).view())
    };
    let capacity_vjp = |w: &Array2<T>| {
        let dh = params.capacity_head.backward_input(w.view());
        params.capacity_enc.backward_input(relu_backward(&cache.zs, dh).view())
    };

    // Per-row Jacobian of each raw gating logit, then diffused like the logits.
    let mut logit_jac = Vec::with_capacity(k);
    if k > 1 {
        for kk in 0..k {
            let mut d_raw = Array2::<T>::zeros((n, k));
            d_raw.column_mut(kk).fill(T::one());
            let d_ag2 = params.gate3.backward_input(d_raw.view());
            let d_zg2 = relu_backward(&cache.zg2, d_ag2);
            let d_ag1 = params.gate2.backward_input(d_zg2.view());
            let d_zg1 = relu_backward(&cache.zg1, d_ag1);
            let j_raw = params.gate1.backward_input(d_zg1.view());
            logit_jac.push(graph.diffuse_steps(j_raw.view(), params.config.diffusion_steps)?);
        }
    }
    let gating_term = |d_out_dp: &Array2<T>| -> Array2<T> {
        let mut acc = Array2::<T>::zeros((n, width));
        if k > 1 {
            let d_logit = softmax_rows_backward(&out.p, d_out_dp);
            for (kk, jac) in logit_jac.iter().enumerate() {
                acc += &(jac * &d_logit.column(kk).insert_axis(Axis(1)));
            }
        }
        acc
    };

    let place = |burden: Option<Array2<T>>, capacity: Option<Array2<T>>, gating: Array2<T>| {
        let mut g = gating;
        if let Some(b) = burden {
            let mut v = g.slice_mut(s![.., 0..pe]);
            v += &b;
        }
        if let Some(c) = capacity {
            let mut v = g.slice_mut(s![.., pe..pe + ps]);
            v += &c;
        }
        g
    };

    let pt = &out.p * &out.t;
    let g_f = place(
        Some(burden_vjp(&out.p)),
        Some(capacity_vjp(&pt).mapv(|v| -v)),
        gating_term(&dfree_dp(&out, eps)),
    );
    let g_e = place(Some(burden_vjp(&out.p)), None, gating_term(&out.e_reg));
    let g_s = place(None, Some(capacity_vjp(&out.p)), gating_term(&out.s_reg));

    let split = |g: &Array2<T>| (g.slice(s![.., 0..pe + ps]).to_owned(), g.slice(s![.., pe + ps..]).to_owned());
    let (g_f, g_f_coords) = split(&g_f);
    let (g_e, g_e_coords) = split(&g_e);
    let (g_s, g_s_coords) = split(&g_s);
    Ok(InputSensitivities {
        g_f,
        g_e,
        g_s,
        g_f_coords,
        g_e_coords,
        g_s_coords,
    })
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Model kind tag shared by all checkpoint files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Zegnn,
    Ols,
    Dnn,
    Gnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Zegnn => "zegnn",
            ModelKind::Ols => "ols",
            ModelKind::Dnn => "dnn",
            ModelKind::Gnn => "gnn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zegnn" => Ok(ModelKind::Zegnn),
            "ols" => Ok(ModelKind::Ols),
            "dnn" => Ok(ModelKind::Dnn),
            "gnn" => Ok(ModelKind::Gnn),
            other => Err(Error::Parameter(format!("unknown model `{other}`"))),
        }
    }
}

/// Versioned on-disk form of a fitted model: layer shapes, flat `f64`
/// weights, seed, a hash of the configuration and the training moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    pub graph_k: usize,
    pub p_burden: usize,
    pub p_capacity: usize,
    pub layer_shapes: Vec<(String, Vec<usize>)>,
    pub weights: Vec<f64>,
    pub stats: TrainStats<f64>,
}

/// FNV-1a over the bytes; stable across platforms and releases.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

impl Checkpoint {
    pub fn from_zegnn<T: Scalar>(params: &ZegnnParams<T>, stats: &TrainStats<T>, seed: u64, graph_k: usize) -> Result<Self> {
        let config = serde_json::to_value(&params.config)?;
        let config_hash = fnv1a_hex(serde_json::to_string(&config)?.as_bytes());
        Ok(Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model_kind: ModelKind::Zegnn,
            config,
            config_hash,
            seed,
            graph_k,
            p_burden: params.p_burden,
            p_capacity: params.p_capacity,
            layer_shapes: params.layer_shapes(),
            weights: params.to_flat().iter().map(|v| v.to_f64_lossy()).collect(),
            stats: stats.cast(),
        })
    }

    pub fn to_zegnn<T: Scalar>(&self) -> Result<(ZegnnParams<T>, TrainStats<T>)> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", self.format_version)));
        }
        if self.model_kind != ModelKind::Zegnn {
            return Err(Error::Checkpoint(format!("checkpoint holds a {} model", self.model_kind.name())));
        }
        let config: ModelConfig = serde_json::from_value(self.config.clone())?;
        let hash = fnv1a_hex(serde_json::to_string(&self.config)?.as_bytes());
        if hash != self.config_hash {
            return Err(Error::Checkpoint("configuration hash mismatch".into()));
        }
        let mut params = init_params::<T>(self.p_burden, self.p_capacity, config, 0)?;
        if params.layer_shapes() != self.layer_shapes {
            return Err(Error::Checkpoint("layer shapes do not match the configuration".into()));
        }
        let flat: Vec<T> = self.weights.iter().map(|&v| T::c(v)).collect();
        params.set_flat(&flat).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((params, self.stats.cast()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(self)?;
        write_atomic(path.as_ref(), &bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
