//! The two simulation designs and their ground truth.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::{Dataset, OutcomeKind};
use crate::error::{Error, Result};
use crate::learners::glm::sigmoid;
use crate::targeting::Parameter;

/// Interval ends of the piecewise-constant first design.
const SIM1_CUTS: [f64; 4] = [0.0, 0.5, 0.7, 1.0];
/// Floor applied to the second design's assignment weights.
pub const SIM2_WEIGHT_FLOOR: f64 = 0.01;
pub const SIM2_K: usize = 10;

/// True parameter values for every provider of one simulated population.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTable {
    pub beta: Vec<u8>,
    pub phi: Vec<f64>,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub er: Vec<f64>,
    pub smr: Vec<f64>,
    /// Monte Carlo standard error of the reassigned means, when integrated
    /// numerically.
    pub psi2_se: Option<Vec<f64>>,
    /// Times the provider effects were redrawn because they were all equal.
    pub regenerations: usize,
}

impl TruthTable {
    pub fn m(&self) -> usize {
        self.beta.len()
    }

    pub fn get(&self, p: Parameter, a: usize) -> f64 {
        match p {
            Parameter::Phi => self.phi[a],
            Parameter::Psi1 => self.psi1[a],
            Parameter::Psi2 => self.psi2[a],
            Parameter::Er => self.er[a],
            Parameter::Smr => self.smr[a],
        }
    }

    fn from_parts(
        beta: Vec<u8>,
        phi: Vec<f64>,
        psi1: Vec<f64>,
        psi2: Vec<f64>,
        regenerations: usize,
    ) -> Self {
        let er = psi1.iter().zip(&psi2).map(|(a, b)| a - b).collect();
        let smr = psi1.iter().zip(&psi2).map(|(a, b)| a / b).collect();
        Self {
            beta,
            phi,
            psi1,
            psi2,
            er,
            smr,
            psi2_se: None,
            regenerations,
        }
    }
}

/// Bernoulli(0.5) provider effects, redrawn while all are equal.
fn draw_effects(rng: &mut ChaCha8Rng, m: usize) -> (Vec<u8>, usize) {
    let mut regenerations = 0;
    loop {
        let beta: Vec<u8> = (0..m).map(|_| u8::from(rng.random::<bool>())).collect();
        if beta.iter().any(|&b| b != beta[0]) {
            return (beta, regenerations);
        }
        regenerations += 1;
    }
}

fn categorical(rng: &mut ChaCha8Rng, weights: &[f64], total: f64) -> usize {
    let mut u = rng.random::<f64>() * total;
    for (a, w) in weights.iter().enumerate() {
        if u < *w {
            return a;
        }
        u -= w;
    }
    weights.len() - 1
}

fn labels(m: usize) -> Vec<String> {
    (1..=m).map(|a| a.to_string()).collect()
}

fn check(n: usize, m: usize, sigma: f64) -> Result<()> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "simulations need at least two providers, got {m}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample size must be positive".into(),
        ));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise level {sigma} must be non-negative"
        )));
    }
    Ok(())
}

/// Unnormalized assignment weight of a provider with effect `beta` at `w`.
pub fn sim1_weight(beta: u8, w: f64) -> f64 {
    let high = w > 0.7;
    sigmoid(if (beta == 1) == high { 2.0 } else { -2.0 })
}

/// Mean outcome of a provider with effect `beta` at `w`.
pub fn sim1_outcome(beta: u8, w: f64) -> f64 {
    match (beta, w) {
        (1, w) if w <= 0.5 => 0.3,
        (1, w) if w <= 0.7 => 1.0,
        (1, _) => 2.0,
        (_, w) if w <= 0.5 => 0.7,
        (_, w) if w <= 0.7 => 0.5,
        _ => 0.0,
    }
}

/// Assignment probabilities at `w` for the first design.
pub fn sim1_propensities(beta: &[u8], w: f64) -> Vec<f64> {
    let weights: Vec<f64> = beta.iter().map(|&b| sim1_weight(b, w)).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|v| v / total).collect()
}

/// Closed-form truth: every function is constant on the three intervals.
pub fn sim1_truth(beta: &[u8]) -> TruthTable {
    let m = beta.len();
    let mut phi = vec![0.0; m];
    let mut mass = vec![0.0; m];
    let mut own = vec![0.0; m];
    let mut reassigned = vec![0.0; m];
    for k in 0..3 {
        let (lo, hi) = (SIM1_CUTS[k], SIM1_CUTS[k + 1]);
        let len = hi - lo;
        let mid = 0.5 * (lo + hi);
        let pi = sim1_propensities(beta, mid);
        let q: Vec<f64> = beta.iter().map(|&b| sim1_outcome(b, mid)).collect();
        let marginal: f64 = pi.iter().zip(&q).map(|(p, q)| p * q).sum();
        for a in 0..m {
            phi[a] += len * q[a];
            mass[a] += len * pi[a];
            own[a] += len * pi[a] * q[a];
            reassigned[a] += len * pi[a] * marginal;
        }
    }
    let psi1 = own.iter().zip(&mass).map(|(o, p)| o / p).collect();
    let psi2 = reassigned.iter().zip(&mass).map(|(r, p)| r / p).collect();
    TruthTable::from_parts(beta.to_vec(), phi, psi1, psi2, 0)
}

/// One dataset from the first design: a single uniform covariate, provider
/// assignment favouring effect-1 providers above 0.7, piecewise outcome.
pub fn draw_sim1(
    n: usize,
    m: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Dataset, TruthTable)> {
    check(n, m, sigma)?;
    let (beta, regenerations) = draw_effects(rng, m);
    let mut x = Array2::zeros((n, 1));
    let mut providers = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut weights = vec![0.0; m];
    for i in 0..n {
        let w: f64 = rng.random();
        for (a, b) in beta.iter().enumerate() {
            weights[a] = sim1_weight(*b, w);
        }
        let total = weights.iter().sum();
        let a = categorical(rng, &weights, total);
        let noise: f64 = StandardNormal.sample(rng);
        x[[i, 0]] = w;
        providers.push(a);
        y.push(sim1_outcome(beta[a], w) + sigma * noise);
    }
    let d = Dataset::new(x, providers, y, OutcomeKind::Continuous, labels(m))?;
    let mut truth = sim1_truth(&beta);
    truth.regenerations = regenerations;
    Ok((d, truth))
}

/// Floored assignment weight of the second design.
pub fn sim2_weight(beta: u8, w: &[f64]) -> f64 {
    (1.0 + 10.0 * f64::from(beta) * w[0] - 0.2 * w[1] - 0.5 * w[4]).max(SIM2_WEIGHT_FLOOR)
}

pub fn sim2_outcome(beta: u8, w: &[f64]) -> f64 {
    2.0 * w[0] - (w[1] - 0.5).powi(2) + f64::from(u8::from(w[2] > 0.5)) + w[4]
        - 2.0 * f64::from(beta)
}

/// Assignment probabilities at `w` for the second design.
pub fn sim2_propensities(beta: &[u8], w: &[f64]) -> Vec<f64> {
    let weights: Vec<f64> = beta.iter().map(|&b| sim2_weight(b, w)).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|v| v / total).collect()
}

pub const TRUTH_BATCHES: usize = 100;

/// Monte Carlo truth for the second design. Providers sharing an effect share
/// their parameters, so the integrator tracks the two effect groups only.
/// The direct means have the closed form `23/12 - 2 beta`.
pub fn sim2_truth(beta: &[u8], draws: usize, rng: &mut ChaCha8Rng) -> Result<TruthTable> {
    if draws < TRUTH_BATCHES {
        return Err(Error::InvalidArgument(format!(
            "need at least {TRUTH_BATCHES} truth draws"
        )));
    }
    let n1 = beta.iter().filter(|&&b| b == 1).count() as f64;
    let n0 = beta.len() as f64 - n1;
    let per_batch = draws / TRUTH_BATCHES;
    // per batch and group: E[pi], E[pi Q], E[pi mu]
    let mut batches = vec![[[0.0f64; 3]; 2]; TRUTH_BATCHES];
    let mut w = [0.0f64; SIM2_K];
    for batch in batches.iter_mut() {
        for _ in 0..per_batch {
            for v in w.iter_mut() {
                *v = rng.random();
            }
            let g = [sim2_weight(0, &w), sim2_weight(1, &w)];
            let total = n0 * g[0] + n1 * g[1];
            let pi = [g[0] / total, g[1] / total];
            let q = [sim2_outcome(0, &w), sim2_outcome(1, &w)];
            let mu = n0 * pi[0] * q[0] + n1 * pi[1] * q[1];
            for b in 0..2 {
                batch[b][0] += pi[b];
                batch[b][1] += pi[b] * q[b];
                batch[b][2] += pi[b] * mu;
            }
        }
    }
    let mut totals = [[0.0f64; 3]; 2];
    for batch in &batches {
        for b in 0..2 {
            for j in 0..3 {
                totals[b][j] += batch[b][j];
            }
        }
    }
    let mut group_psi1 = [0.0; 2];
    let mut group_psi2 = [0.0; 2];
    let mut group_se = [0.0; 2];
    for b in 0..2 {
        group_psi1[b] = totals[b][1] / totals[b][0];
        group_psi2[b] = totals[b][2] / totals[b][0];
        let ratios: Vec<f64> = batches
            .iter()
            .map(|batch| batch[b][2] / batch[b][0])
            .collect();
        let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
        let var =
            ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (ratios.len() - 1) as f64;
        group_se[b] = (var / ratios.len() as f64).sqrt();
    }
    let pick = |v: [f64; 2]| beta.iter().map(|&b| v[b as usize]).collect::<Vec<f64>>();
    let phi = beta
        .iter()
        .map(|&b| 23.0 / 12.0 - 2.0 * f64::from(b))
        .collect();
    let mut t = TruthTable::from_parts(beta.to_vec(), phi, pick(group_psi1), pick(group_psi2), 0);
    t.psi2_se = Some(pick(group_se));
    Ok(t)
}

/// One dataset from the second design with ten uniform covariates.
pub fn draw_sim2(
    n: usize,
    m: usize,
    sigma: f64,
    rng: &mut ChaCha8Rng,
    truth_draws: usize,
    truth_rng: &mut ChaCha8Rng,
) -> Result<(Dataset, TruthTable)> {
    check(n, m, sigma)?;
    let (beta, regenerations) = draw_effects(rng, m);
    let mut x = Array2::zeros((n, SIM2_K));
    let mut providers = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut weights = vec![0.0; m];
    let mut w = [0.0f64; SIM2_K];
    for i in 0..n {
        for (j, v) in w.iter_mut().enumerate() {
            *v = rng.random();
            x[[i, j]] = *v;
        }
        for (a, b) in beta.iter().enumerate() {
            weights[a] = sim2_weight(*b, &w);
        }
        let total = weights.iter().sum();
        let a = categorical(rng, &weights, total);
        let noise: f64 = StandardNormal.sample(rng);
        providers.push(a);
        y.push(sim2_outcome(beta[a], &w) + sigma * noise);
    }
    let d = Dataset::new(x, providers, y, OutcomeKind::Continuous, labels(m))?;
    let mut truth = sim2_truth(&beta, truth_draws, truth_rng)?;
    truth.regenerations = regenerations;
    Ok((d, truth))
}
