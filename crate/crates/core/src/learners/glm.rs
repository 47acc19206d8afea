//! Generalized linear models on standardized features: least squares,
//! logistic regression by IRLS, and multinomial (softmax) regression by
//! block Newton updates. All accept an optional ridge penalty on the
//! non-intercept coefficients.

use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Ridge penalty used when an unpenalized fit is singular.
pub const FALLBACK_RIDGE: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;

/// Column centering and scaling. Constant columns map to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows() as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        for col in x.columns() {
            let mu = col.sum() / n;
            let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(mu);
            scale.push(if sd > 1e-12 * mu.abs().max(1.0) {
                sd
            } else {
                0.0
            });
        }
        Self { mean, scale }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Row-major design matrix with a leading intercept column.
    pub fn design(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let p = self.dim() + 1;
        let mut z = Vec::with_capacity(x.nrows() * p);
        for row in x.rows() {
            z.push(1.0);
            for (j, v) in row.iter().enumerate() {
                let s = self.scale[j];
                z.push(if s > 0.0 { (v - self.mean[j]) / s } else { 0.0 });
            }
        }
        z
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        for j in 0..self.dim() {
            let s = self.scale[j];
            out[j + 1] = if s > 0.0 {
                (row[j] - self.mean[j]) / s
            } else {
                0.0
            };
        }
    }
}

/// Solve a symmetric positive definite system; `None` when the matrix is
/// singular to working precision.
pub fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let max_diag = a.diagonal().iter().cloned().fold(0.0f64, f64::max);
    if max_diag <= 0.0 {
        return None;
    }
    let chol = a.cholesky()?;
    let l = chol.l_dirty();
    let min_pivot = (0..l.nrows())
        .map(|i| l[(i, i)] * l[(i, i)])
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-13 * max_diag) {
        return None;
    }
    Some(chol.solve(b))
}

/// Weighted Gram matrix Zᵀ diag(w) Z / n of a row-major design.
fn gram(z: &[f64], p: usize, weights: Option<&[f64]>) -> DMatrix<f64> {
    let n = z.len() / p;
    let mut g = vec![0.0; p * p];
    for i in 0..n {
        let row = &z[i * p..(i + 1) * p];
        let w = weights.map_or(1.0, |w| w[i]);
        if w == 0.0 {
            continue;
        }
        for j in 0..p {
            let wj = w * row[j];
            for l in j..p {
                g[j * p + l] += wj * row[l];
            }
        }
    }
    let mut m = DMatrix::zeros(p, p);
    for j in 0..p {
        for l in j..p {
            let v = g[j * p + l] / n as f64;
            m[(j, l)] = v;
            m[(l, j)] = v;
        }
    }
    m
}

fn add_ridge(a: &mut DMatrix<f64>, ridge: f64) {
    for j in 1..a.nrows() {
        a[(j, j)] += ridge;
    }
}

fn linear_predictor(z: &[f64], p: usize, coef: &[f64]) -> Vec<f64> {
    z.chunks_exact(p)
        .map(|row| row.iter().zip(coef).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// A fitted linear predictor on standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    standardizer: Standardizer,
    coef: Vec<f64>,
    pub ridge: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LinearModel {
    pub fn eta(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let z = self.standardizer.design(x);
        linear_predictor(&z, self.coef.len(), &self.coef)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }
}

/// Least squares with optional ridge. Returns the model and a diagnostic
/// string when the singular-design fallback was taken.
pub fn fit_linear(
    x: ArrayView2<f64>,
    y: &[f64],
    ridge: f64,
) -> Result<(LinearModel, Option<String>)> {
    let standardizer = Standardizer::fit(x);
    let p = standardizer.dim() + 1;
    let z = standardizer.design(x);
    let n = y.len() as f64;
    let mut b = DVector::zeros(p);
    for (row, yi) in z.chunks_exact(p).zip(y) {
        for j in 0..p {
            b[j] += row[j] * yi / n;
        }
    }
    let g = gram(&z, p, None);
    let attempt = |r: f64| {
        let mut a = g.clone();
        add_ridge(&mut a, r);
        solve_spd(a, &b)
    };
    let (coef, ridge, note) = match attempt(ridge) {
        Some(c) => (c, ridge, None),
        None if ridge < FALLBACK_RIDGE => {
            let c = attempt(FALLBACK_RIDGE)
                .ok_or_else(|| Error::Learner("least squares system is singular".into()))?;
            (
                c,
                FALLBACK_RIDGE,
                Some(format!(
                    "singular design; refit with ridge penalty {FALLBACK_RIDGE}"
                )),
            )
        }
        None => return Err(Error::Learner("least squares system is singular".into())),
    };
    Ok((
        LinearModel {
            standardizer,
            coef: coef.iter().cloned().collect(),
            ridge,
            iterations: 1,
            converged: true,
        },
        note,
    ))
}

fn logistic_loss(eta: &[f64], y: &[f64], coef: &[f64], ridge: f64) -> f64 {
    let n = y.len() as f64;
    let nll: f64 = eta
        .iter()
        .zip(y)
        .map(|(&e, &yi)| {
            // log(1 + exp(e)) - y e, computed stably
            let softplus = if e > 0.0 {
                e + (-e).exp().ln_1p()
            } else {
                e.exp().ln_1p()
            };
            softplus - yi * e
        })
        .sum::<f64>()
        / n;
    nll + 0.5 * ridge * coef[1..].iter().map(|c| c * c).sum::<f64>()
}

/// Logistic regression (responses in [0, 1]) by iteratively reweighted least
/// squares with step halving. Stops when the max-norm of the gradient of the
/// mean loss is at most 1e-8 or after 100 iterations.
pub fn fit_logistic(
    x: ArrayView2<f64>,
    y: &[f64],
    ridge: f64,
) -> Result<(LinearModel, Option<String>)> {
    match irls(x, y, ridge) {
        Some(m) => Ok((m, None)),
        None if ridge < FALLBACK_RIDGE => irls(x, y, FALLBACK_RIDGE)
            .map(|m| {
                (
                    m,
                    Some(format!(
                        "singular design; refit with ridge penalty {FALLBACK_RIDGE}"
                    )),
                )
            })
            .ok_or_else(|| Error::Learner("logistic regression failed".into())),
        None => Err(Error::Learner("logistic regression failed".into())),
    }
}

fn irls(x: ArrayView2<f64>, y: &[f64], ridge: f64) -> Option<LinearModel> {
    let standardizer = Standardizer::fit(x);
    let p = standardizer.dim() + 1;
    let z = standardizer.design(x);
    let n = y.len() as f64;
    let mut design_gram = gram(&z, p, None);
    add_ridge(&mut design_gram, ridge);
    solve_spd(design_gram, &DVector::zeros(p))?;
    let ybar = (y.iter().sum::<f64>() / n).clamp(1e-6, 1.0 - 1e-6);
    let mut coef = vec![0.0; p];
    coef[0] = logit(ybar);
    let mut eta = linear_predictor(&z, p, &coef);
    let mut loss = logistic_loss(&eta, y, &coef, ridge);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let mu: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let mut grad = DVector::zeros(p);
        for ((row, m), yi) in z.chunks_exact(p).zip(&mu).zip(y) {
            let r = (yi - m) / n;
            for j in 0..p {
                grad[j] += row[j] * r;
            }
        }
        for j in 1..p {
            grad[j] -= ridge * coef[j];
        }
        if grad.amax() <= GRAD_TOL {
            converged = true;
            break;
        }
        let w: Vec<f64> = mu.iter().map(|m| (m * (1.0 - m)).max(1e-12)).collect();
        let mut h = gram(&z, p, Some(&w));
        add_ridge(&mut h, ridge);
        let step = solve_spd(h, &grad)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = coef
                .iter()
                .zip(step.iter())
                .map(|(c, s)| c + t * s)
                .collect();
            let trial_eta = linear_predictor(&z, p, &trial);
            let trial_loss = logistic_loss(&trial_eta, y, &trial, ridge);
            if trial_loss <= loss + 1e-15 * loss.abs().max(1.0) {
                coef = trial;
                eta = trial_eta;
                loss = trial_loss;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Some(LinearModel {
        standardizer,
        coef,
        ridge,
        iterations,
        converged,
    })
}

/// Multinomial logistic regression with the first class as reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    standardizer: Standardizer,
    /// Coefficients for classes 1..m, each of length p.
    coef: Vec<Vec<f64>>,
    pub n_classes: usize,
    pub ridge: f64,
    pub sweeps: usize,
    pub converged: bool,
}

impl SoftmaxModel {
    /// Row-major n×m probability matrix.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let p = self.standardizer.dim() + 1;
        let z = self.standardizer.design(x);
        let m = self.n_classes;
        let mut out = Vec::with_capacity(x.nrows() * m);
        let mut logits = vec![0.0; m];
        for row in z.chunks_exact(p) {
            logits[0] = 0.0;
            for c in 1..m {
                logits[c] = row.iter().zip(&self.coef[c - 1]).map(|(a, b)| a * b).sum();
            }
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            out.extend(logits.iter().map(|l| (l - mx).exp() / s));
        }
        out
    }
}

pub fn fit_softmax(
    x: ArrayView2<f64>,
    classes: &[usize],
    m: usize,
    ridge: f64,
) -> Result<(SoftmaxModel, Option<String>)> {
    let p = x.ncols() + 1;
    let solver = if (m - 1) * p <= JOINT_NEWTON_MAX {
        joint_newton
    } else {
        block_newton
    };
    match solver(x, classes, m, ridge) {
        Some(model) => Ok((model, None)),
        None if ridge < FALLBACK_RIDGE => solver(x, classes, m, FALLBACK_RIDGE)
            .map(|model| {
                (
                    model,
                    Some(format!(
                        "singular design; refit with ridge penalty {FALLBACK_RIDGE}"
                    )),
                )
            })
            .ok_or_else(|| Error::Learner("multinomial regression failed".into())),
        None => Err(Error::Learner("multinomial regression failed".into())),
    }
}

/// Largest coefficient count solved by full Newton steps.
const JOINT_NEWTON_MAX: usize = 400;

/// Row-wise softmax of the logits, returning `(log-sum-exp, probabilities)`.
fn softmax_row(logits: &[f64], probs: &mut [f64]) -> f64 {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (p, l) in probs.iter_mut().zip(logits) {
        *p = (l - mx).exp();
        s += *p;
    }
    probs.iter_mut().for_each(|p| *p /= s);
    mx + s.ln()
}

/// Full Newton steps on all non-reference class blocks jointly, with step
/// halving on the penalized negative log-likelihood.
fn joint_newton(
    x: ArrayView2<f64>,
    classes: &[usize],
    m: usize,
    ridge: f64,
) -> Option<SoftmaxModel> {
    let standardizer = Standardizer::fit(x);
    let p = standardizer.dim() + 1;
    let z = standardizer.design(x);
    let n = classes.len();
    let nf = n as f64;
    let q = (m - 1) * p;
    let tri = p * (p + 1) / 2;
    // upper-triangular outer products of the design rows
    let mut outer = vec![0.0; n * tri];
    for i in 0..n {
        let row = &z[i * p..(i + 1) * p];
        let mut k = 0;
        for j in 0..p {
            for l in j..p {
                outer[i * tri + k] = row[j] * row[l];
                k += 1;
            }
        }
    }
    let mut freq = vec![0.0; m];
    for &a in classes {
        freq[a] += 1.0 / nf;
    }
    let mut theta = vec![0.0; q];
    for c in 1..m {
        theta[(c - 1) * p] = (freq[c].max(1e-8) / freq[0].max(1e-8)).ln();
    }
    let mut probs = vec![0.0; n * m];
    let mut logits = vec![0.0; m];
    let objective = |theta: &[f64], probs: &mut [f64], logits: &mut [f64]| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            let row = &z[i * p..(i + 1) * p];
            logits[0] = 0.0;
            for c in 1..m {
                logits[c] = row
                    .iter()
                    .zip(&theta[(c - 1) * p..c * p])
                    .map(|(a, b)| a * b)
                    .sum();
            }
            let lse = softmax_row(logits, &mut probs[i * m..(i + 1) * m]);
            total += lse - logits[classes[i]];
        }
        let pen: f64 = (0..m - 1)
            .map(|c| {
                theta[c * p + 1..(c + 1) * p]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .sum();
        total / nf + 0.5 * ridge * pen
    };
    let mut loss = objective(&theta, &mut probs, &mut logits);
    let mut converged = false;
    let mut iterations = 0;
    let mut w = vec![0.0; n];
    let mut block = vec![0.0; tri];
    for iter in 0..MAX_ITER {
        iterations = iter + 1;
        let mut grad = DVector::zeros(q);
        for i in 0..n {
            let row = &z[i * p..(i + 1) * p];
            for c in 1..m {
                let r = f64::from(u8::from(classes[i] == c)) - probs[i * m + c];
                for j in 0..p {
                    grad[(c - 1) * p + j] += row[j] * r;
                }
            }
        }
        grad /= nf;
        for c in 0..m - 1 {
            for j in 1..p {
                grad[c * p + j] -= ridge * theta[c * p + j];
            }
        }
        if grad.amax() <= GRAD_TOL {
            converged = true;
            break;
        }
        let mut h = DMatrix::zeros(q, q);
        for c in 1..m {
            for d in c..m {
                for i in 0..n {
                    let pc = probs[i * m + c];
                    w[i] = pc * (f64::from(u8::from(c == d)) - probs[i * m + d]);
                }
                block.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..n {
                    let wi = w[i];
                    for (b, o) in block.iter_mut().zip(&outer[i * tri..(i + 1) * tri]) {
                        *b += wi * o;
                    }
                }
                let (r0, c0) = ((c - 1) * p, (d - 1) * p);
                let mut k = 0;
                for j in 0..p {
                    for l in j..p {
                        let v = block[k] / nf;
                        h[(r0 + j, c0 + l)] = v;
                        h[(r0 + l, c0 + j)] = v;
                        h[(c0 + l, r0 + j)] = v;
                        h[(c0 + j, r0 + l)] = v;
                        k += 1;
                    }
                }
            }
        }
        for c in 0..m - 1 {
            for j in 1..p {
                h[(c * p + j, c * p + j)] += ridge;
            }
        }
        let step = solve_spd(h, &grad)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + t * s)
                .collect();
            let trial_loss = objective(&trial, &mut probs, &mut logits);
            if trial_loss <= loss + 1e-15 * loss.abs().max(1.0) {
                theta = trial;
                loss = trial_loss;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Some(SoftmaxModel {
        standardizer,
        coef: theta.chunks_exact(p).map(|c| c.to_vec()).collect(),
        n_classes: m,
        ridge,
        sweeps: iterations,
        converged,
    })
}

/// Cyclic Newton updates, one class block at a time. Each block update is an
/// exact Newton step on a strictly convex block with step halving, so the
/// objective decreases monotonically to the joint optimum.
fn block_newton(
    x: ArrayView2<f64>,
    classes: &[usize],
    m: usize,
    ridge: f64,
) -> Option<SoftmaxModel> {
    let standardizer = Standardizer::fit(x);
    let p = standardizer.dim() + 1;
    let z = standardizer.design(x);
    let n = classes.len();
    let nf = n as f64;
    let mut freq = vec![0.0; m];
    for &a in classes {
        freq[a] += 1.0 / nf;
    }
    let mut coef = vec![vec![0.0; p]; m - 1];
    for c in 1..m {
        coef[c - 1][0] = (freq[c].max(1e-8) / freq[0].max(1e-8)).ln();
    }
    // logits[i * m + c]; class 0 is identically zero. Within a sweep the
    // exponentials are taken relative to a fixed per-row offset.
    let mut logits = vec![0.0; n * m];
    for i in 0..n {
        for c in 1..m {
            logits[i * m + c] = coef[c - 1][0];
        }
    }
    let mut offset = vec![0.0; n];
    let mut expl = vec![0.0; n * m];
    let mut sums = vec![0.0; n];
    let penalty = |coef: &[Vec<f64>]| -> f64 {
        0.5 * ridge
            * coef
                .iter()
                .map(|b| b[1..].iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
    };
    let nll = |logits: &[f64], offset: &[f64], sums: &[f64]| -> f64 {
        (0..n)
            .map(|i| offset[i] + sums[i].ln() - logits[i * m + classes[i]])
            .sum::<f64>()
            / nf
    };
    let mut converged = false;
    let mut sweeps = 0;
    let mut weights = vec![0.0; n];
    let mut trial_eta = vec![0.0; n];
    let mut trial_exp = vec![0.0; n];
    let mut trial_sums = vec![0.0; n];
    for sweep in 0..MAX_ITER {
        sweeps = sweep + 1;
        for i in 0..n {
            let r = &logits[i * m..(i + 1) * m];
            offset[i] = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for c in 0..m {
                let e = (r[c] - offset[i]).exp();
                expl[i * m + c] = e;
                s += e;
            }
            sums[i] = s;
        }
        let mut loss = nll(&logits, &offset, &sums) + penalty(&coef);
        let mut max_grad = 0.0f64;
        for c in 1..m {
            let mut g = vec![0.0; p];
            for i in 0..n {
                let pr = expl[i * m + c] / sums[i];
                let r = (if classes[i] == c { 1.0 } else { 0.0 } - pr) / nf;
                let row = &z[i * p..(i + 1) * p];
                for j in 0..p {
                    g[j] += row[j] * r;
                }
            }
            for j in 1..p {
                g[j] -= ridge * coef[c - 1][j];
            }
            max_grad = g.iter().fold(max_grad, |acc, v| acc.max(v.abs()));
        }
        if max_grad <= GRAD_TOL {
            converged = true;
            break;
        }
        for c in 1..m {
            let mut grad = DVector::zeros(p);
            for i in 0..n {
                let pr = expl[i * m + c] / sums[i];
                weights[i] = (pr * (1.0 - pr)).max(1e-12);
                let r = (if classes[i] == c { 1.0 } else { 0.0 } - pr) / nf;
                let row = &z[i * p..(i + 1) * p];
                for j in 0..p {
                    grad[j] += row[j] * r;
                }
            }
            for j in 1..p {
                grad[j] -= ridge * coef[c - 1][j];
            }
            if grad.amax() <= 0.1 * GRAD_TOL {
                continue;
            }
            let mut h = gram(&z, p, Some(&weights));
            add_ridge(&mut h, ridge);
            let mut step = solve_spd(h, &grad)?;
            let norm = step.norm();
            if norm > 10.0 {
                step *= 10.0 / norm;
            }
            let mut t = 1.0;
            for _ in 0..40 {
                let trial: Vec<f64> = coef[c - 1]
                    .iter()
                    .zip(step.iter())
                    .map(|(b, s)| b + t * s)
                    .collect();
                let mut nll_sum = 0.0;
                for i in 0..n {
                    let eta: f64 = z[i * p..(i + 1) * p]
                        .iter()
                        .zip(&trial)
                        .map(|(a, b)| a * b)
                        .sum();
                    let e = (eta - offset[i]).exp();
                    let s = sums[i] - expl[i * m + c] + e;
                    // recompute the row sum exactly when cancellation is possible
                    let s = if s > 1e-8 * sums[i] {
                        s
                    } else {
                        (0..m)
                            .map(|d| if d == c { e } else { expl[i * m + d] })
                            .sum()
                    };
                    trial_eta[i] = eta;
                    trial_exp[i] = e;
                    trial_sums[i] = s;
                    let own = if classes[i] == c {
                        eta
                    } else {
                        logits[i * m + classes[i]]
                    };
                    nll_sum += offset[i] + s.ln() - own;
                }
                let old = std::mem::replace(&mut coef[c - 1], trial);
                let trial_loss = nll_sum / nf + penalty(&coef);
                if trial_loss <= loss + 1e-15 * loss.abs().max(1.0) {
                    for i in 0..n {
                        logits[i * m + c] = trial_eta[i];
                        expl[i * m + c] = trial_exp[i];
                        sums[i] = trial_sums[i];
                    }
                    loss = trial_loss;
                    break;
                }
                coef[c - 1] = old;
                t *= 0.5;
            }
        }
    }
    Some(SoftmaxModel {
        standardizer,
        coef,
        n_classes: m,
        ridge,
        sweeps,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn linear_interpolates_exact_data() {
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64 * 0.37);
        let y: Vec<f64> = x.column(0).iter().map(|v| 2.0 * v).collect();
        let (m, note) = fit_linear(x.view(), &y, 0.0).unwrap();
        assert!(note.is_none());
        for (p, t) in m.eta(x.view()).iter().zip(&y) {
            assert!((p - t).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_column_triggers_ridge_fallback() {
        let x = Array2::from_elem((5, 1), 0.5);
        let y = vec![1.0, 0.0, 1.0, 1.0, 0.0];
        let (m, note) = fit_linear(x.view(), &y, 0.0).unwrap();
        assert!(note.is_some());
        assert!((m.eta(x.view())[0] - 0.6).abs() < 1e-12);
        let (m, note) = fit_logistic(x.view(), &y, 0.0).unwrap();
        assert!(note.is_some());
        assert!((sigmoid(m.eta(x.view())[0]) - 0.6).abs() < 1e-8);
    }

    #[test]
    fn logistic_matches_group_frequencies_on_saturated_design() {
        // binary covariate: the MLE reproduces within-group frequencies
        let x = Array2::from_shape_vec((8, 1), vec![0., 0., 0., 0., 1., 1., 1., 1.]).unwrap();
        let y = vec![1., 0., 0., 0., 1., 1., 1., 0.];
        let (m, _) = fit_logistic(x.view(), &y, 0.0).unwrap();
        assert!(m.converged);
        let p: Vec<f64> = m.eta(x.view()).into_iter().map(sigmoid).collect();
        assert!((p[0] - 0.25).abs() < 1e-8);
        assert!((p[7] - 0.75).abs() < 1e-8);
    }

    #[test]
    fn softmax_matches_group_frequencies() {
        let x = Array2::from_shape_vec((9, 1), vec![0., 0., 0., 0., 1., 1., 1., 1., 1.]).unwrap();
        let a = vec![0, 1, 2, 2, 0, 0, 1, 1, 2];
        let (model, _) = fit_softmax(x.view(), &a, 3, 0.0).unwrap();
        assert!(model.converged);
        let p = model.predict_proba(x.view());
        assert!((p[0] - 0.25).abs() < 1e-7);
        assert!((p[2] - 0.5).abs() < 1e-7);
        assert!((p[4 * 3 + 0] - 0.4).abs() < 1e-7);
        assert!((p[4 * 3 + 1] - 0.4).abs() < 1e-7);
    }
}
