//! Affine layers and rectifiers with hand-written reverse passes.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// `y = x·W + b` with `W: in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = || T::c(rng.gen_range(-bound..bound));
        let w = Array2::from_shape_simple_fn((fan_in, fan_out), &mut draw);
        let b = Array1::from_shape_simple_fn(fan_out, &mut draw);
        Dense { w, b }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.fan_in(), self.fan_out())
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Returns the parameter gradient and `∂/∂x` given the layer input and `∂/∂y`.
    pub fn backward(&self, x: ArrayView2<T>, dy: ArrayView2<T>) -> (Dense<T>, Array2<T>) {
        let grad = Dense {
            w: x.t().dot(&dy),
            b: dy.sum_axis(Axis(0)),
        };
        (grad, dy.dot(&self.w.t()))
    }

    /// `∂/∂x` only.
    pub fn backward_input(&self, dy: ArrayView2<T>) -> Array2<T> {
        dy.dot(&self.w.t())
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn write_flat(&self, out: &mut Vec<T>) {
        out.extend(self.w.iter().copied());
        out.extend(self.b.iter().copied());
    }

    /// Reads `n_params()` values (row-major `W`, then `b`); returns the remainder.
    pub fn read_flat<'a>(&mut self, flat: &'a [T]) -> &'a [T] {
        let (w, rest) = flat.split_at(self.w.len());
        let (b, rest) = rest.split_at(self.b.len());
        for (d, s) in self.w.iter_mut().zip(w) {
            *d = *s;
        }
        for (d, s) in self.b.iter_mut().zip(b) {
            *d = *s;
        }
        rest
    }

    pub fn cast<U: Scalar>(&self) -> Dense<U> {
        Dense {
            w: self.w.mapv(|v| U::c(v.to_f64_lossy())),
            b: self.b.mapv(|v| U::c(v.to_f64_lossy())),
        }
    }
}

pub fn relu<T: Scalar>(z: &Array2<T>) -> Array2<T> {
    z.mapv(|v| if v > T::zero() { v } else { T::zero() })
}

/// Multiplies `da` by the rectifier derivative at pre-activation `z`.
pub fn relu_backward<T: Scalar>(z: &Array2<T>, mut da: Array2<T>) -> Array2<T> {
    ndarray::Zip::from(&mut da).and(z).for_each(|d, &zv| {
        if zv <= T::zero() {
            *d = T::zero();
        }
    });
    da
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s: T = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Adjoint of [`softmax_rows`]: `dL = P ⊙ (dP − Σₖ Pₖ dPₖ)`.
pub fn softmax_rows_backward<T: Scalar>(p: &Array2<T>, dp: &Array2<T>) -> Array2<T> {
    let mut out = Array2::zeros(p.raw_dim());
    for ((mut o, pr), dr) in out.rows_mut().into_iter().zip(p.rows()).zip(dp.rows()) {
        let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
        for ((ov, &pv), &dv) in o.iter_mut().zip(pr.iter()).zip(dr.iter()) {
            *ov = pv * (dv - dot);
        }
    }
    out
}

/// Numerically stable `log(1 + eˣ)`.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv<T: Scalar>(y: T) -> T {
    // log(eʸ − 1) = y + log(1 − e⁻ʸ)
    y + (-(-y).exp()).ln_1p()
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
