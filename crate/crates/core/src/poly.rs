//! Meixner and Chebyshev polynomial bases over a graph operator.
//!
//! The monic Meixner polynomials satisfy
//!
//! ```text
//! M_0(x) = 1,  M_1(x) = x - b_0,
//! M_k(x) = (x - b_{k-1}) M_{k-1}(x) - c_{k-1} M_{k-2}(x)
//! b_k = (k(1+c) + βc) / (1-c),   c_k = c k (k+β-1) / (1-c)^2
//! ```
//!
//! and are orthogonal with respect to the negative-binomial weight
//! `c^x (β)_x / x!` on `x = 0, 1, 2, ...`. Evaluating them on a graph operator
//! gives the filter bank `X̄_k = M_k(L) X`, `k = 0..K-1`.
//!
//! The recurrence coefficients grow like `O(k)` and `O(k^2)`; applied to an
//! operator with spectrum in `[0, 2]` the raw bases blow up quickly. The
//! trainable layer therefore works on the half-scaled Laplacian and passes
//! every basis through its own layer normalization.

use crate::autodiff::{softplus_inv, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::CsrMatrix;
use crate::tensor::{ParamId, ParamKind, ParamStore, Tensor};

/// Floor added to softplus(β_raw); also the margin keeping c inside (0, 1).
pub const PARAM_MARGIN: f64 = 1e-4;
pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_BETA: f64 = 1.0;
pub const DEFAULT_C: f64 = 0.5;

/// Learnable Meixner shape parameters, stored unconstrained.
///
/// `β = softplus(beta_raw) + 1e-4` and `c = clamp(sigmoid(c_raw), 1e-4, 1 - 1e-4)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeixnerParams {
    pub beta_raw: ParamId,
    pub c_raw: ParamId,
}

impl MeixnerParams {
    /// Registers the pair initialized so that `β = 1`, `c = 0.5`.
    pub fn register(store: &mut ParamStore, prefix: &str) -> Self {
        Self::register_with(store, prefix, DEFAULT_BETA, DEFAULT_C)
    }

    pub fn register_with(store: &mut ParamStore, prefix: &str, beta: f64, c: f64) -> Self {
        let (b_raw, c_raw) = raw_from_effective(beta, c);
        Self {
            beta_raw: store.add(
                format!("{prefix}.beta_raw"),
                ParamKind::MeixnerRaw,
                Tensor::scalar(b_raw),
            ),
            c_raw: store.add(format!("{prefix}.c_raw"), ParamKind::MeixnerRaw, Tensor::scalar(c_raw)),
        }
    }

    /// Effective `(β, c)` from the current store values.
    pub fn effective(&self, store: &ParamStore) -> (f64, f64) {
        effective_from_raw(store.get(self.beta_raw).item(), store.get(self.c_raw).item())
    }

    /// Records the reparameterization on `tape`, returning 1x1 `(β, c)`.
    pub fn record(&self, tape: &mut Tape<'_>, store: &ParamStore) -> (Var, Var) {
        let br = tape.param(store, self.beta_raw);
        let cr = tape.param(store, self.c_raw);
        let beta = tape.softplus(br);
        let beta = tape.add_const(beta, PARAM_MARGIN);
        let c = tape.sigmoid(cr);
        let c = tape.clamp(c, PARAM_MARGIN, 1.0 - PARAM_MARGIN);
        (beta, c)
    }
}

pub fn effective_from_raw(beta_raw: f64, c_raw: f64) -> (f64, f64) {
    let beta = crate::autodiff::softplus(beta_raw) + PARAM_MARGIN;
    let c = crate::autodiff::sigmoid(c_raw).clamp(PARAM_MARGIN, 1.0 - PARAM_MARGIN);
    (beta, c)
}

/// Inverse of [`effective_from_raw`] for `β > 1e-4`, `c ∈ (0, 1)`.
pub fn raw_from_effective(beta: f64, c: f64) -> (f64, f64) {
    (softplus_inv(beta - PARAM_MARGIN), (c / (1.0 - c)).ln())
}

/// Plain-valued recurrence coefficients `b_k`, `c_k` for `k = 0..K-1`.
/// `cc[0]` is 0 and unused.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrenceCoeffs {
    pub b: Vec<f64>,
    pub cc: Vec<f64>,
}

impl RecurrenceCoeffs {
    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }
}

pub fn meixner_coeff_b(k: usize, beta: f64, c: f64) -> f64 {
    (k as f64 * (1.0 + c) + beta * c) / (1.0 - c)
}

pub fn meixner_coeff_c(k: usize, beta: f64, c: f64) -> f64 {
    let k = k as f64;
    c * k * (k + beta - 1.0) / ((1.0 - c) * (1.0 - c))
}

/// Coefficient table for fixed `(β, c)`.
pub fn meixner_coeffs_f64(beta: f64, c: f64, k: usize) -> Result<RecurrenceCoeffs> {
    if k < 1 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    Ok(RecurrenceCoeffs {
        b: (0..k).map(|i| meixner_coeff_b(i, beta, c)).collect(),
        cc: (0..k).map(|i| meixner_coeff_c(i, beta, c)).collect(),
    })
}

/// Recurrence coefficients recorded on a tape, differentiable in `(β, c)`.
#[derive(Debug, Clone)]
pub struct RecurrenceVars {
    pub b: Vec<Var>,
    pub cc: Vec<Var>,
}

impl RecurrenceVars {
    pub fn values(&self, tape: &Tape<'_>) -> RecurrenceCoeffs {
        RecurrenceCoeffs {
            b: self.b.iter().map(|&v| tape.value(v).item()).collect(),
            cc: self.cc.iter().map(|&v| tape.value(v).item()).collect(),
        }
    }

    /// Constant coefficients, for evaluating a fixed polynomial family.
    pub fn constant(tape: &mut Tape<'_>, coeffs: &RecurrenceCoeffs) -> Self {
        Self {
            b: coeffs.b.iter().map(|&v| tape.constant(Tensor::scalar(v))).collect(),
            cc: coeffs.cc.iter().map(|&v| tape.constant(Tensor::scalar(v))).collect(),
        }
    }
}

/// Records `b_k` and `c_k`, `k = 0..K-1`, as functions of the 1x1 `beta` and `c`.
pub fn meixner_coeffs(tape: &mut Tape<'_>, beta: Var, c: Var, k: usize) -> Result<RecurrenceVars> {
    if k < 1 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    // 1/(1-c) is shared by every coefficient.
    let one_minus_c = {
        let neg = tape.scale(c, -1.0);
        tape.add_const(neg, 1.0)
    };
    let one = tape.constant(Tensor::scalar(1.0));
    let inv = tape.div(one, one_minus_c)?;
    let inv_sq = tape.mul(inv, inv)?;
    let beta_c = tape.mul(beta, c)?;

    let mut b = Vec::with_capacity(k);
    let mut cc = Vec::with_capacity(k);
    for i in 0..k {
        let kf = i as f64;
        // b_k = (k(1+c) + βc) / (1-c)
        let k1c = tape.scale(c, kf);
        let k1c = tape.add_const(k1c, kf);
        let num = tape.add(k1c, beta_c)?;
        b.push(tape.mul(num, inv)?);

        // c_k = c k (k + β - 1) / (1-c)^2
        let t = tape.add_const(beta, kf - 1.0);
        let t = tape.mul(t, c)?;
        let t = tape.scale(t, kf);
        cc.push(tape.mul(t, inv_sq)?);
    }
    Ok(RecurrenceVars { b, cc })
}

/// Per-basis normalization mode.
#[derive(Debug, Clone)]
pub enum PerBasisNorm {
    /// Raw bases; diagnostic mode.
    Off,
    /// One layer normalization per basis order. Entry `k` holds that order's
    /// `(gain, bias)`, or `None` for a normalization without affine map.
    On(Vec<Option<(Var, Var)>>),
}

/// Output of [`meixner_basis`].
#[derive(Debug, Clone)]
pub struct Basis {
    pub terms: Vec<Var>,
    /// Max-abs entry of each raw (pre-normalization) basis.
    pub raw_max_abs: Vec<f64>,
    /// Non-finite raw bases encountered in diagnostic mode.
    pub warnings: Vec<String>,
}

/// `X̄_0 = X`, `X̄_1 = (L - b_0 I) X̄_0`,
/// `X̄_k = (L - b_{k-1} I) X̄_{k-1} - c_{k-1} X̄_{k-2}`, for `k < K`.
///
/// With [`PerBasisNorm::On`] every returned term is normalized and a
/// non-finite result is an error; with `Off` the raw terms are returned and
/// non-finite values are reported in [`Basis::warnings`].
pub fn meixner_basis<'g>(
    tape: &mut Tape<'g>,
    l_scaled: &'g CsrMatrix,
    x: Var,
    coeffs: &RecurrenceVars,
    k: usize,
    norm: &PerBasisNorm,
) -> Result<Basis> {
    if k < 1 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if coeffs.b.len() < k || coeffs.cc.len() < k {
        return Err(Error::InvalidArgument(format!(
            "{} coefficients supplied for K = {k}",
            coeffs.b.len().min(coeffs.cc.len())
        )));
    }
    if let PerBasisNorm::On(affine) = norm {
        if affine.len() != k {
            return Err(Error::InvalidArgument(format!(
                "{} normalizations supplied for K = {k}",
                affine.len()
            )));
        }
    }

    let neg_b: Vec<Var> = coeffs.b[..k.saturating_sub(1)]
        .iter()
        .map(|&b| tape.scale(b, -1.0))
        .collect();
    let neg_c: Vec<Var> = coeffs.cc[..k.saturating_sub(1)]
        .iter()
        .map(|&c| tape.scale(c, -1.0))
        .collect();

    let mut raw = Vec::with_capacity(k);
    raw.push(x);
    for order in 1..k {
        let prev = raw[order - 1];
        let lx = tape.spmm(l_scaled, prev)?;
        let mut next = tape.axpy_scalar(neg_b[order - 1], prev, lx)?;
        if order >= 2 {
            next = tape.axpy_scalar(neg_c[order - 1], raw[order - 2], next)?;
        }
        raw.push(next);
    }

    let raw_max_abs: Vec<f64> = raw.iter().map(|&v| tape.value(v).max_abs()).collect();
    let mut warnings = Vec::new();
    let terms = match norm {
        PerBasisNorm::Off => {
            for (order, &v) in raw.iter().enumerate() {
                if !tape.value(v).all_finite() {
                    warnings.push(format!("basis {order} has non-finite entries"));
                }
            }
            raw
        }
        PerBasisNorm::On(affine) => {
            let mut out = Vec::with_capacity(k);
            for (order, (&v, aff)) in raw.iter().zip(affine).enumerate() {
                let y = tape.layer_norm(v, *aff, LAYER_NORM_EPS)?;
                if !tape.value(y).all_finite() {
                    return Err(Error::NonFiniteActivation {
                        layer: "meixner basis".into(),
                        basis: order,
                    });
                }
                out.push(y);
            }
            out
        }
    };
    Ok(Basis {
        terms,
        raw_max_abs,
        warnings,
    })
}

/// `T_0 = X`, `T_1 = L̂X`, `T_k = 2L̂T_{k-1} - T_{k-2}`, for `k < K`.
pub fn chebyshev_basis<'g>(tape: &mut Tape<'g>, l_hat: &'g CsrMatrix, x: Var, k: usize) -> Result<Vec<Var>> {
    if k < 1 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(k);
    out.push(x);
    if k > 1 {
        out.push(tape.spmm(l_hat, x)?);
    }
    let minus_one = tape.constant(Tensor::scalar(-1.0));
    for order in 2..k {
        let lt = tape.spmm(l_hat, out[order - 1])?;
        let two_lt = tape.scale(lt, 2.0);
        out.push(tape.axpy_scalar(minus_one, out[order - 2], two_lt)?);
    }
    Ok(out)
}

/// Evaluates `M_0(x), ..., M_{K-1}(x)` at a scalar point.
pub fn meixner_eval(coeffs: &RecurrenceCoeffs, x: f64) -> Vec<f64> {
    let k = coeffs.len();
    let mut out = Vec::with_capacity(k);
    if k == 0 {
        return out;
    }
    out.push(1.0);
    if k > 1 {
        out.push(x - coeffs.b[0]);
    }
    for order in 2..k {
        let v = (x - coeffs.b[order - 1]) * out[order - 1] - coeffs.cc[order - 1] * out[order - 2];
        out.push(v);
    }
    out
}

/// Normalized discrete inner product of `M_k` and `M_j` under the Meixner
/// weight `w(x) = c^x (β)_x / x!`, summed over `x = 0..=support`:
/// `|<M_k, M_j>| / sqrt(<M_k, M_k> <M_j, M_j>)`. Returns 1 for `k == j`.
pub fn meixner_orthogonality_check(beta: f64, c: f64, k: usize, j: usize, support: usize) -> f64 {
    let coeffs = meixner_coeffs_f64(beta, c, k.max(j) + 1).expect("K >= 1");
    let (mut kj, mut kk, mut jj) = (0.0, 0.0, 0.0);
    let mut w = 1.0;
    for x in 0..=support {
        let m = meixner_eval(&coeffs, x as f64);
        kj += w * m[k] * m[j];
        kk += w * m[k] * m[k];
        jj += w * m[j] * m[j];
        // w(x+1) = w(x) · c (β + x) / (x + 1)
        w *= c * (beta + x as f64) / (x as f64 + 1.0);
    }
    kj.abs() / (kk * jj).sqrt()
}
