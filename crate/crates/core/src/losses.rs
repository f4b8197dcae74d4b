//! Consensus loss over super-point representations, the combined objective
//! and a central-difference gradient checker.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, SparseMatrix};
use crate::scalar::{CompensatedSum, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the regularization term inside the consensus loss.
    pub mu: f64,
    /// Weight of the consensus loss in the total objective.
    pub lambda: f64,
    /// Stabilizer in `sqrt(|u|^2 + eps^2)`.
    pub eps_norm: f64,
    /// Nodes with degree at or below this are left out of the smoothness sum.
    pub eps_degree: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { mu: 0.1, lambda: 0.1, eps_norm: 1e-12, eps_degree: 1e-12 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.mu) || !ok(self.lambda) {
            return Err(Error::BadParams("mu and lambda must be finite and non-negative".into()));
        }
        if !(self.eps_norm > 0.0 && self.eps_norm.is_finite())
            || !(self.eps_degree > 0.0 && self.eps_degree.is_finite())
        {
            return Err(Error::BadParams("eps values must be positive".into()));
        }
        Ok(())
    }
}

/// Scalar loss with its gradient with respect to the representations.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub grad: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport<T> {
    pub l_smt: T,
    pub l_reg: T,
    pub l_con: T,
    pub l_pred: T,
    pub l_total: T,
    /// Gradient of `l_con` with respect to the updated representations.
    pub grad: Matrix<T>,
}

impl<T: Real> LossReport<T> {
    /// `key=value` lines, one scalar per line.
    pub fn to_kv(&self) -> String {
        format!(
            "l_smt={}\nl_reg={}\nl_con={}\nl_pred={}\nl_total={}\ngrad_max_abs={}\n",
            self.l_smt,
            self.l_reg,
            self.l_con,
            self.l_pred,
            self.l_total,
            self.grad.as_slice().iter().fold(T::zero(), |m, g| m.max(g.abs()))
        )
    }
}

#[inline]
fn stable_norm<T: Real>(sq: T, eps: T) -> T {
    (sq + eps * eps).sqrt()
}

fn check_square<T: Real>(feats: &Matrix<T>, w: &SparseMatrix<T>) -> Result<()> {
    if w.dim() != feats.rows() {
        return Err(Error::ShapeMismatch(format!(
            "adjacency is {0}x{0} but there are {1} feature rows",
            w.dim(),
            feats.rows()
        )));
    }
    Ok(())
}

fn inv_sqrt_degrees<T: Real>(w: &SparseMatrix<T>, cfg: &LossConfig) -> Vec<Option<T>> {
    let eps_deg = T::of(cfg.eps_degree);
    w.row_sums()
        .into_iter()
        .map(|deg| (deg > eps_deg).then(|| T::one() / deg.sqrt()))
        .collect()
}

/// Walks the smoothness terms in a fixed order, handing each edge
/// `(i, j, W_ij, s_i, s_j, u, |u|_eps)` to `visit`.
fn for_each_smoothness_term<T: Real>(
    feats: &Matrix<T>,
    w: &SparseMatrix<T>,
    cfg: &LossConfig,
    mut visit: impl FnMut(usize, usize, T, T, T, &[T], T),
) {
    let eps = T::of(cfg.eps_norm);
    let inv_sqrt = inv_sqrt_degrees(w, cfg);
    let d = feats.cols();
    let mut u = vec![T::zero(); d];
    for i in 0..w.dim() {
        let Some(si) = inv_sqrt[i] else { continue };
        for &(j, wij) in w.row(i) {
            let Some(sj) = inv_sqrt[j] else { continue };
            let (fi, fj) = (feats.row(i), feats.row(j));
            let mut sq = T::zero();
            for c in 0..d {
                u[c] = fi[c] * si - fj[c] * sj;
                sq += u[c] * u[c];
            }
            visit(i, j, wij, si, sj, &u, stable_norm(sq, eps));
        }
    }
}

/// Individual summands of [`smoothness_loss`], in summation order.
pub fn smoothness_terms<T: Real>(
    feats: &Matrix<T>,
    w: &SparseMatrix<T>,
    cfg: &LossConfig,
) -> Result<Vec<T>> {
    check_square(feats, w)?;
    let mut terms = Vec::with_capacity(w.nnz());
    for_each_smoothness_term(feats, w, cfg, |_, _, wij, _, _, _, n| terms.push(wij * n));
    Ok(terms)
}

/// Degree-normalized graph smoothness
/// `sum_i sum_j W_ij sqrt(|f_i/sqrt(d_i) - f_j/sqrt(d_j)|^2 + eps^2)`
/// with `d_i` the row sums of `W`.
pub fn smoothness_loss<T: Real>(
    feats: &Matrix<T>,
    w: &SparseMatrix<T>,
    cfg: &LossConfig,
) -> Result<LossValue<T>> {
    check_square(feats, w)?;
    let d = feats.cols();
    let mut total = CompensatedSum::new();
    let mut grad = Matrix::zeros(feats.rows(), d);
    for_each_smoothness_term(feats, w, cfg, |i, j, wij, si, sj, u, n| {
        total.add(wij * n);
        let g = wij / n;
        for c in 0..d {
            let gc = g * u[c];
            grad.row_mut(i)[c] += gc * si;
            grad.row_mut(j)[c] -= gc * sj;
        }
    });
    Ok(LossValue { value: total.value(), grad })
}

fn check_same_shape<T: Real>(updated: &Matrix<T>, original: &Matrix<T>) -> Result<()> {
    if updated.rows() != original.rows() || updated.cols() != original.cols() {
        return Err(Error::ShapeMismatch(format!(
            "updated is {}x{} but original is {}x{}",
            updated.rows(),
            updated.cols(),
            original.rows(),
            original.cols()
        )));
    }
    Ok(())
}

fn displacement_norm<T: Real>(a: &[T], b: &[T], eps: T) -> T {
    stable_norm(a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y)), eps)
}

/// Individual summands of [`regularization_loss`], one per row.
pub fn regularization_terms<T: Real>(
    updated: &Matrix<T>,
    original: &Matrix<T>,
    cfg: &LossConfig,
) -> Result<Vec<T>> {
    check_same_shape(updated, original)?;
    let eps = T::of(cfg.eps_norm);
    Ok((0..updated.rows())
        .map(|i| displacement_norm(updated.row(i), original.row(i), eps))
        .collect())
}

/// `sum_i sqrt(|fhat_i - f_i|^2 + eps^2)`.
pub fn regularization_loss<T: Real>(
    updated: &Matrix<T>,
    original: &Matrix<T>,
    cfg: &LossConfig,
) -> Result<LossValue<T>> {
    check_same_shape(updated, original)?;
    let eps = T::of(cfg.eps_norm);
    let mut total = CompensatedSum::new();
    let mut grad = Matrix::zeros(updated.rows(), updated.cols());
    for i in 0..updated.rows() {
        let (a, b) = (updated.row(i), original.row(i));
        let n = displacement_norm(a, b, eps);
        total.add(n);
        for (g, (&x, &y)) in grad.row_mut(i).iter_mut().zip(a.iter().zip(b)) {
            *g = (x - y) / n;
        }
    }
    Ok(LossValue { value: total.value(), grad })
}

/// `l_smt + mu * l_reg` and the matching gradient. `w` should already be
/// symmetric.
pub fn consensus_loss<T: Real>(
    updated: &Matrix<T>,
    original: &Matrix<T>,
    w: &SparseMatrix<T>,
    cfg: &LossConfig,
) -> Result<LossReport<T>> {
    cfg.validate()?;
    let smt = smoothness_loss(updated, w, cfg)?;
    let reg = regularization_loss(updated, original, cfg)?;
    let mu = T::of(cfg.mu);
    let l_con = smt.value + mu * reg.value;
    let mut grad = smt.grad;
    for (g, &r) in grad.as_mut_slice().iter_mut().zip(reg.grad.as_slice()) {
        *g += mu * r;
    }
    Ok(LossReport {
        l_smt: smt.value,
        l_reg: reg.value,
        l_con,
        l_pred: T::zero(),
        l_total: total_loss(l_con, T::zero(), T::of(cfg.lambda)),
        grad,
    })
}

impl<T: Real> LossReport<T> {
    /// Replace the prediction term and recompute the total.
    pub fn with_prediction(mut self, l_pred: T, lambda: T) -> Self {
        self.l_pred = l_pred;
        self.l_total = total_loss(self.l_con, l_pred, lambda);
        self
    }
}

/// `lambda * l_con + l_pred`.
#[inline]
pub fn total_loss<T: Real>(l_con: T, l_pred: T, lambda: T) -> T {
    lambda * l_con + l_pred
}

/// Task-specific prediction loss plugged into the total objective.
pub trait PredictionLoss<T> {
    fn loss(&self) -> Result<T>;
}

/// Mean per-token cross-entropy over `tokens x vocab` logits.
#[derive(Debug, Clone)]
pub struct CrossEntropy<'a, T> {
    pub logits: &'a Matrix<T>,
    pub targets: &'a [usize],
}

impl<T: Real> PredictionLoss<T> for CrossEntropy<'_, T> {
    fn loss(&self) -> Result<T> {
        let n = self.logits.rows();
        if self.targets.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {n} logit rows",
                self.targets.len()
            )));
        }
        if n == 0 {
            return Ok(T::zero());
        }
        let v = self.logits.cols();
        let mut total = CompensatedSum::new();
        for (i, &t) in self.targets.iter().enumerate() {
            if t >= v {
                return Err(Error::ShapeMismatch(format!("target {t} outside vocabulary of {v}")));
            }
            let row = self.logits.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<T>().ln();
            total.add(lse - row[t]);
        }
        Ok(total.value() / T::of_usize(n))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub worst: Option<usize>,
    pub checked: usize,
    pub pass: bool,
}

/// Denominator floor in the relative error.
pub const REL_ERR_TINY: f64 = 1e-300;

/// Central differences against an analytic gradient, with relative error
/// `|a - n| / (|a| + |n| + tiny)`. Coordinates with `skip[i]` set are ignored.
pub fn finite_diff_check<T, F>(
    f: F,
    analytic: &Matrix<T>,
    point: &Matrix<T>,
    h: T,
    tol: f64,
    skip: Option<&[bool]>,
) -> Result<GradCheck>
where
    T: Real,
    F: Fn(&Matrix<T>) -> T,
{
    finite_diff_check_terms(|x| vec![f(x)], analytic, point, h, tol, skip)
}

/// [`finite_diff_check`] for a loss given as its list of summands.
///
/// `f(x + h e) - f(x - h e)` is accumulated term by term, so summands that do
/// not depend on the perturbed coordinate cancel exactly instead of leaving
/// rounding noise of the size of the whole loss.
pub fn finite_diff_check_terms<T, F>(
    f: F,
    analytic: &Matrix<T>,
    point: &Matrix<T>,
    h: T,
    tol: f64,
    skip: Option<&[bool]>,
) -> Result<GradCheck>
where
    T: Real,
    F: Fn(&Matrix<T>) -> Vec<T>,
{
    if !(h > T::zero()) {
        return Err(Error::BadParams("step must be positive".into()));
    }
    if analytic.rows() != point.rows() || analytic.cols() != point.cols() {
        return Err(Error::ShapeMismatch("gradient and point shapes differ".into()));
    }
    if skip.is_some_and(|s| s.len() != point.as_slice().len()) {
        return Err(Error::ShapeMismatch("skip mask length differs from point".into()));
    }
    let mut x = point.clone();
    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for idx in 0..point.as_slice().len() {
        if skip.is_some_and(|s| s[idx]) {
            continue;
        }
        let x0 = x.as_slice()[idx];
        x.as_mut_slice()[idx] = x0 + h;
        let fp = f(&x);
        x.as_mut_slice()[idx] = x0 - h;
        let fm = f(&x);
        x.as_mut_slice()[idx] = x0;
        if fp.len() != fm.len() {
            return Err(Error::ShapeMismatch("term count changed under perturbation".into()));
        }
        let mut diff = CompensatedSum::new();
        for (&p, &m) in fp.iter().zip(&fm) {
            diff.add(p - m);
        }
        let numeric = diff.value().as_f64() / (h + h).as_f64();
        let a = analytic.as_slice()[idx].as_f64();
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + REL_ERR_TINY);
        checked += 1;
        if rel > max_rel_err || rel.is_nan() {
            max_rel_err = if rel.is_nan() { f64::INFINITY } else { rel };
            worst = Some(idx);
        }
    }
    Ok(GradCheck { max_rel_err, worst, checked, pass: max_rel_err <= tol })
}

/// Coordinates of rows touching a regularization norm closer than `radius`
/// to its kink.
pub fn regularization_kinks<T: Real>(updated: &Matrix<T>, original: &Matrix<T>, radius: T) -> Vec<bool> {
    let d = updated.cols();
    let mut skip = vec![false; updated.as_slice().len()];
    for i in 0..updated.rows() {
        let sq = updated
            .row(i)
            .iter()
            .zip(original.row(i))
            .fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y));
        if sq.sqrt() < radius {
            skip[i * d..(i + 1) * d].iter_mut().for_each(|s| *s = true);
        }
    }
    skip
}

/// Same as [`regularization_kinks`] for the smoothness differences.
pub fn smoothness_kinks<T: Real>(
    feats: &Matrix<T>,
    w: &SparseMatrix<T>,
    cfg: &LossConfig,
    radius: T,
) -> Vec<bool> {
    let d = feats.cols();
    let eps_deg = T::of(cfg.eps_degree);
    let inv: Vec<Option<T>> = w
        .row_sums()
        .into_iter()
        .map(|deg| (deg > eps_deg).then(|| T::one() / deg.sqrt()))
        .collect();
    let mut skip = vec![false; feats.as_slice().len()];
    for i in 0..w.dim() {
        let Some(si) = inv[i] else { continue };
        for &(j, _) in w.row(i) {
            let Some(sj) = inv[j] else { continue };
            let sq = feats
                .row(i)
                .iter()
                .zip(feats.row(j))
                .fold(T::zero(), |s, (&a, &b)| s + (a * si - b * sj) * (a * si - b * sj));
            if sq.sqrt() < radius {
                for r in [i, j] {
                    skip[r * d..(r + 1) * d].iter_mut().for_each(|s| *s = true);
                }
            }
        }
    }
    skip
}
