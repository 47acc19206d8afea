//! Exact computations on fully enumerated discrete laws.
//!
//! A [`DiscreteLaw`] puts mass on a grid of atoms `(w, a, y)` with `w` one of
//! finitely many covariate values, `a` a provider and `y` binary. Parameters,
//! influence functions and second-order remainders are evaluated by direct
//! summation, which makes them usable as ground truth for the estimators.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;
use crate::targeting::Parameter;

/// Minimum atom mass used by the random law generator.
pub const MASS_FLOOR: f64 = 1e-3;
pub const STEP_GRID: [f64; 3] = [1e-3, 1e-4, 1e-5];

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLaw {
    n_w: usize,
    m: usize,
    /// Mass of atom `(w, a, y)` at index `(w * m + a) * 2 + y`.
    mass: Vec<f64>,
}

impl DiscreteLaw {
    pub fn new(n_w: usize, m: usize, mass: Vec<f64>) -> Result<Self> {
        if n_w == 0 || m == 0 {
            return Err(Error::InvalidLaw("empty covariate or provider set".into()));
        }
        if mass.len() != n_w * m * 2 {
            return Err(Error::InvalidLaw(format!(
                "expected {} atom masses, got {}",
                n_w * m * 2,
                mass.len()
            )));
        }
        if let Some(bad) = mass.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidLaw(format!(
                "atom mass {bad} is not a non-negative number"
            )));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!("masses sum to {total}")));
        }
        let law = Self { n_w, m, mass };
        if let Some(a) = (0..m).find(|&a| law.provider_mass(a) <= 0.0) {
            return Err(Error::InvalidLaw(format!("provider {} has no mass", a + 1)));
        }
        Ok(law)
    }

    /// Empirical law of a sample with discrete covariate codes `w`.
    pub fn empirical(w: &[usize], a: &[usize], y: &[f64]) -> Result<Self> {
        if w.len() != a.len() || w.len() != y.len() || w.is_empty() {
            return Err(Error::InvalidLaw(
                "sample columns differ in length or are empty".into(),
            ));
        }
        let n_w = w.iter().max().unwrap() + 1;
        let m = a.iter().max().unwrap() + 1;
        let mut mass = vec![0.0; n_w * m * 2];
        for i in 0..w.len() {
            let yi = match y[i] {
                v if v == 0.0 => 0,
                v if v == 1.0 => 1,
                v => return Err(Error::InvalidLaw(format!("outcome {v} is not binary"))),
            };
            mass[(w[i] * m + a[i]) * 2 + yi] += 1.0;
        }
        let n = w.len() as f64;
        mass.iter_mut().for_each(|p| *p /= n);
        // the division can leave the total a few ulps away from one
        let total: f64 = mass.iter().sum();
        mass.iter_mut().for_each(|p| *p /= total);
        Self::new(n_w, m, mass)
    }

    pub fn n_w(&self) -> usize {
        self.n_w
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_atoms(&self) -> usize {
        self.mass.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.mass
    }

    pub fn index(&self, w: usize, a: usize, y: usize) -> usize {
        (w * self.m + a) * 2 + y
    }

    /// `(w, a, y)` of atom `idx`.
    pub fn atom(&self, idx: usize) -> (usize, usize, usize) {
        (idx / (2 * self.m), (idx / 2) % self.m, idx % 2)
    }

    pub fn mass(&self, w: usize, a: usize, y: usize) -> f64 {
        self.mass[self.index(w, a, y)]
    }

    fn cell(&self, w: usize, a: usize) -> f64 {
        self.mass(w, a, 0) + self.mass(w, a, 1)
    }

    pub fn covariate_mass(&self, w: usize) -> f64 {
        (0..self.m).map(|a| self.cell(w, a)).sum()
    }

    pub fn provider_mass(&self, a: usize) -> f64 {
        (0..self.n_w).map(|w| self.cell(w, a)).sum()
    }

    /// `P(A = a | W = w)`; zero where `w` has no mass.
    pub fn propensity(&self, a: usize, w: usize) -> f64 {
        let l = self.covariate_mass(w);
        if l > 0.0 {
            self.cell(w, a) / l
        } else {
            0.0
        }
    }

    /// `E[Y | A = a, W = w]`, undefined on empty cells.
    pub fn outcome_mean(&self, a: usize, w: usize) -> Option<f64> {
        let c = self.cell(w, a);
        (c > 0.0).then(|| self.mass(w, a, 1) / c)
    }

    /// `E[Y | W = w]`; zero where `w` has no mass.
    pub fn covariate_outcome_mean(&self, w: usize) -> f64 {
        let l = self.covariate_mass(w);
        if l > 0.0 {
            (0..self.m).map(|a| self.mass(w, a, 1)).sum::<f64>() / l
        } else {
            0.0
        }
    }

    /// Positive-mass pattern equality.
    pub fn same_support(&self, other: &Self) -> bool {
        self.n_w == other.n_w
            && self.m == other.m
            && self
                .mass
                .iter()
                .zip(&other.mass)
                .all(|(p, q)| (*p > 0.0) == (*q > 0.0))
    }

    /// `self + h * direction`.
    pub fn perturbed(&self, direction: &[f64], h: f64) -> Result<Self> {
        if direction.len() != self.mass.len() {
            return Err(Error::InvalidLaw(
                "direction length differs from the atom count".into(),
            ));
        }
        let mass: Vec<f64> = self
            .mass
            .iter()
            .zip(direction)
            .map(|(p, d)| p + h * d)
            .collect();
        if mass.iter().any(|&p| p < 0.0) {
            return Err(Error::InvalidLaw(format!(
                "step {h} leaves the probability simplex"
            )));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidLaw(format!(
                "direction does not preserve total mass ({total})"
            )));
        }
        Self::new(self.n_w, self.m, mass)
    }

    /// Expectation of per-atom values.
    pub fn expect(&self, values: &[f64]) -> f64 {
        self.mass.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

/// Exact parameter values for one provider. The direct parameter and the
/// ratio are absent when undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProviderTruth {
    pub phi: Option<f64>,
    pub psi1: f64,
    pub psi2: f64,
    pub er: f64,
    pub smr: Option<f64>,
}

impl ProviderTruth {
    pub fn get(&self, p: Parameter) -> Option<f64> {
        match p {
            Parameter::Phi => self.phi,
            Parameter::Psi1 => Some(self.psi1),
            Parameter::Psi2 => Some(self.psi2),
            Parameter::Er => Some(self.er),
            Parameter::Smr => self.smr,
        }
    }
}

fn direct_mean(law: &DiscreteLaw, a: usize) -> Option<f64> {
    let mut total = 0.0;
    for w in 0..law.n_w {
        let l = law.covariate_mass(w);
        if l > 0.0 {
            total += l * law.outcome_mean(a, w)?;
        }
    }
    Some(total)
}

pub fn exact_parameters(law: &DiscreteLaw) -> Vec<ProviderTruth> {
    (0..law.m)
        .map(|a| {
            let p = law.provider_mass(a);
            let psi1 = (0..law.n_w).map(|w| law.mass(w, a, 1)).sum::<f64>() / p;
            let psi2 = (0..law.n_w)
                .map(|w| law.cell(w, a) * law.covariate_outcome_mean(w))
                .sum::<f64>()
                / p;
            ProviderTruth {
                phi: direct_mean(law, a),
                psi1,
                psi2,
                er: psi1 - psi2,
                smr: (psi2 > 0.0).then(|| psi1 / psi2),
            }
        })
        .collect()
}

/// Per-atom influence values for one provider.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderEifs {
    pub phi: Option<Vec<f64>>,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
    pub er: Vec<f64>,
    pub smr: Option<Vec<f64>>,
}

impl ProviderEifs {
    pub fn get(&self, p: Parameter) -> Option<&[f64]> {
        match p {
            Parameter::Phi => self.phi.as_deref(),
            Parameter::Psi1 => Some(&self.psi1),
            Parameter::Psi2 => Some(&self.psi2),
            Parameter::Er => Some(&self.er),
            Parameter::Smr => self.smr.as_deref(),
        }
    }
}

/// Influence values of every parameter at every atom, evaluated at the law's
/// own parameter values. Atoms whose covariate value carries no mass get
/// zero propensity and outcome regressions.
pub fn exact_eifs(law: &DiscreteLaw) -> Vec<ProviderEifs> {
    let truth = exact_parameters(law);
    (0..law.m)
        .map(|a| {
            let t = truth[a];
            let p = law.provider_mass(a);
            let mut psi1 = Vec::with_capacity(law.n_atoms());
            let mut psi2 = Vec::with_capacity(law.n_atoms());
            let mut phi = t.phi.map(|_| Vec::with_capacity(law.n_atoms()));
            for idx in 0..law.n_atoms() {
                let (w, ai, y) = law.atom(idx);
                let y = y as f64;
                let own = ai == a;
                let pi = law.propensity(a, w);
                let mt = law.covariate_outcome_mean(w);
                psi1.push(if own { (y - t.psi1) / p } else { 0.0 });
                psi2.push((pi * (y - mt) + if own { mt - t.psi2 } else { 0.0 }) / p);
                if let (Some(v), Some(phi_a)) = (phi.as_mut(), t.phi) {
                    let mb = law.outcome_mean(a, w).unwrap_or(0.0);
                    let weight = if own && pi > 0.0 { 1.0 / pi } else { 0.0 };
                    v.push(weight * (y - mb) + mb - phi_a);
                }
            }
            let er = psi1.iter().zip(&psi2).map(|(d1, d2)| d1 - d2).collect();
            let smr = t.smr.map(|_| {
                psi1.iter()
                    .zip(&psi2)
                    .map(|(d1, d2)| d1 / t.psi2 - t.psi1 * d2 / (t.psi2 * t.psi2))
                    .collect()
            });
            ProviderEifs {
                phi,
                psi1,
                psi2,
                er,
                smr,
            }
        })
        .collect()
}

/// One von Mises identity: `lhs = psi(P) - psi(P0) + E_P0[D(P)]` against the
/// closed-form remainder `rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemainderCheck {
    pub provider: usize,
    pub parameter: Parameter,
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

/// Remainder of the direct parameter:
/// `E_0[(pi_0 / pi_P - 1)(mu_0(a, W) - mu_P(a, W))]`.
fn remainder_phi(p: &DiscreteLaw, p0: &DiscreteLaw, a: usize) -> Option<f64> {
    let mut r = 0.0;
    for w in 0..p0.n_w {
        let l0 = p0.covariate_mass(w);
        if l0 == 0.0 {
            continue;
        }
        let (pi, pi0) = (p.propensity(a, w), p0.propensity(a, w));
        let (mb, mb0) = (p.outcome_mean(a, w)?, p0.outcome_mean(a, w)?);
        r += l0 * (pi0 / pi - 1.0) * (mb0 - mb);
    }
    Some(r)
}

/// `(p_0 / p_P - 1)(psi1_0 - psi1_P)`.
fn remainder_psi1(p: &DiscreteLaw, p0: &DiscreteLaw, a: usize, psi: f64, psi0: f64) -> f64 {
    (p0.provider_mass(a) / p.provider_mass(a) - 1.0) * (psi0 - psi)
}

/// `E_0[(pi_P - pi_0)(mu_0(W) - mu_P(W))] / p_P + (1 - p_0 / p_P)(psi2_P - psi2_0)`.
fn remainder_psi2(p: &DiscreteLaw, p0: &DiscreteLaw, a: usize, psi: f64, psi0: f64) -> f64 {
    let pp = p.provider_mass(a);
    let cross: f64 = (0..p0.n_w)
        .map(|w| {
            p0.covariate_mass(w)
                * (p.propensity(a, w) - p0.propensity(a, w))
                * (p0.covariate_outcome_mean(w) - p.covariate_outcome_mean(w))
        })
        .sum();
    cross / pp + (1.0 - p0.provider_mass(a) / pp) * (psi - psi0)
}

pub fn von_mises_check(p: &DiscreteLaw, p0: &DiscreteLaw) -> Result<Vec<RemainderCheck>> {
    if !p.same_support(p0) {
        return Err(Error::SupportMismatch);
    }
    let (t, t0) = (exact_parameters(p), exact_parameters(p0));
    let eifs = exact_eifs(p);
    let mut out = Vec::new();
    for a in 0..p.m {
        let mut push = |parameter, psi: f64, psi0: f64, d: &[f64], rhs: f64| {
            let lhs = psi - psi0 + p0.expect(d);
            out.push(RemainderCheck {
                provider: a,
                parameter,
                lhs,
                rhs,
                residual: lhs - rhs,
            });
        };
        if let (Some(phi), Some(phi0), Some(d), Some(r)) =
            (t[a].phi, t0[a].phi, &eifs[a].phi, remainder_phi(p, p0, a))
        {
            push(Parameter::Phi, phi, phi0, d, r);
        }
        let r1 = remainder_psi1(p, p0, a, t[a].psi1, t0[a].psi1);
        push(Parameter::Psi1, t[a].psi1, t0[a].psi1, &eifs[a].psi1, r1);
        let r2 = remainder_psi2(p, p0, a, t[a].psi2, t0[a].psi2);
        push(Parameter::Psi2, t[a].psi2, t0[a].psi2, &eifs[a].psi2, r2);
    }
    Ok(out)
}

/// Finite-difference derivative of one parameter along a direction,
/// compared with the influence-function inner product.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeCheck {
    pub provider: usize,
    pub parameter: Parameter,
    /// Central differences at each step of the grid.
    pub central: Vec<f64>,
    /// Richardson extrapolation of the first two central differences.
    pub extrapolated: f64,
    pub eif_inner: f64,
    pub rel_error: f64,
}

/// Error relative to the exact derivative, or to the size of the direction
/// when the derivative is smaller, so identically zero derivatives are judged
/// on the scale of the perturbation.
fn relative_error(estimate: f64, exact: f64, direction_norm: f64) -> f64 {
    let diff = (estimate - exact).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / exact.abs().max(direction_norm)
    }
}

/// Compare `d psi(P0 + h dir) / dh` at zero with `sum_o dir(o) D(P0)(o)` for
/// every defined parameter. `direction` must sum to zero.
pub fn pathwise_derivative_check(
    p0: &DiscreteLaw,
    direction: &[f64],
    steps: &[f64],
) -> Result<Vec<DerivativeCheck>> {
    if steps.len() < 2 {
        return Err(Error::InvalidArgument(
            "at least two finite-difference steps are needed".into(),
        ));
    }
    let base = exact_eifs(p0);
    let mut shifted = Vec::with_capacity(steps.len());
    for &h in steps {
        let up = exact_parameters(&p0.perturbed(direction, h)?);
        let down = exact_parameters(&p0.perturbed(direction, -h)?);
        shifted.push((h, up, down));
    }
    let r2 = (steps[0] / steps[1]).powi(2);
    let norm: f64 = direction.iter().map(|d| d.abs()).sum();
    let mut out = Vec::new();
    for a in 0..p0.m {
        for parameter in Parameter::ALL {
            let Some(d) = base[a].get(parameter) else {
                continue;
            };
            let central: Option<Vec<f64>> = shifted
                .iter()
                .map(|(h, up, down)| {
                    Some((up[a].get(parameter)? - down[a].get(parameter)?) / (2.0 * h))
                })
                .collect();
            let Some(central) = central else { continue };
            let extrapolated = (r2 * central[1] - central[0]) / (r2 - 1.0);
            let eif_inner: f64 = direction.iter().zip(d).map(|(s, v)| s * v).sum();
            out.push(DerivativeCheck {
                provider: a,
                parameter,
                rel_error: relative_error(extrapolated, eif_inner, norm),
                central,
                extrapolated,
                eif_inner,
            });
        }
    }
    Ok(out)
}

/// Flat Dirichlet atom masses with a floor of [`MASS_FLOOR`].
pub fn random_law<R: Rng + ?Sized>(rng: &mut R, n_w: usize, m: usize) -> DiscreteLaw {
    let k = n_w * m * 2;
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let free = 1.0 - MASS_FLOOR * k as f64;
    let mut mass: Vec<f64> = draws
        .iter()
        .map(|d| MASS_FLOOR + free * d / total)
        .collect();
    let s: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|p| *p /= s);
    DiscreteLaw::new(n_w, m, mass).expect("generated law is valid")
}

/// Score direction `P0(o) (s(o) - E s)` with standard normal scores.
pub fn random_direction<R: Rng + ?Sized>(rng: &mut R, law: &DiscreteLaw) -> Vec<f64> {
    let s: Vec<f64> = (0..law.n_atoms())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let mean = law.expect(&s);
    let mut dir: Vec<f64> = law
        .masses()
        .iter()
        .zip(&s)
        .map(|(p, s)| p * (s - mean))
        .collect();
    // push the rounding residue onto the heaviest atom so the total is exact
    let drift: f64 = dir.iter().sum();
    let heaviest = (0..dir.len())
        .max_by(|&i, &j| law.masses()[i].total_cmp(&law.masses()[j]))
        .unwrap();
    dir[heaviest] -= drift;
    dir
}

/// Dimensions for a random oracle law: `|W|` in 1..=3 and `m` in 1..=3.
fn random_dims<R: Rng + ?Sized>(rng: &mut R) -> (usize, usize) {
    (rng.random_range(1..=3), rng.random_range(1..=3))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentitySuite {
    pub laws: usize,
    /// Largest absolute residual per parameter, in `Phi, Psi1, Psi2` order.
    pub max_residual: Vec<(Parameter, f64)>,
    pub checks: usize,
}

impl IdentitySuite {
    pub fn worst(&self) -> f64 {
        self.max_residual
            .iter()
            .map(|(_, r)| *r)
            .fold(0.0, f64::max)
    }
}

fn max_by_parameter(
    items: impl Iterator<Item = (Parameter, f64)>,
    params: &[Parameter],
) -> Vec<(Parameter, f64)> {
    let mut out: Vec<(Parameter, f64)> = params.iter().map(|&p| (p, 0.0)).collect();
    for (p, v) in items {
        if let Some(slot) = out.iter_mut().find(|(q, _)| *q == p) {
            slot.1 = slot.1.max(v);
        }
    }
    out
}

/// Von Mises identities on `laws` random law pairs sharing dimensions.
pub fn identity_suite(laws: usize, seed: u64) -> Result<IdentitySuite> {
    let checks: Vec<Vec<RemainderCheck>> = (0..laws)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[1, i as u64]);
            let (n_w, m) = random_dims(&mut r);
            let p = random_law(&mut r, n_w, m);
            let p0 = random_law(&mut r, n_w, m);
            von_mises_check(&p, &p0)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<RemainderCheck> = checks.into_iter().flatten().collect();
    Ok(IdentitySuite {
        laws,
        checks: flat.len(),
        max_residual: max_by_parameter(
            flat.iter().map(|c| (c.parameter, c.residual.abs())),
            &[Parameter::Phi, Parameter::Psi1, Parameter::Psi2],
        ),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeSuite {
    pub pairs: usize,
    pub max_rel_error: Vec<(Parameter, f64)>,
    pub checks: usize,
}

impl DerivativeSuite {
    pub fn worst(&self) -> f64 {
        self.max_rel_error
            .iter()
            .map(|(_, r)| *r)
            .fold(0.0, f64::max)
    }
}

/// Finite-difference checks of every parameter on `pairs` random
/// `(law, direction)` pairs.
pub fn derivative_suite(pairs: usize, seed: u64) -> Result<DerivativeSuite> {
    let checks: Vec<Vec<DerivativeCheck>> = (0..pairs)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[2, i as u64]);
            let (n_w, m) = random_dims(&mut r);
            let law = random_law(&mut r, n_w, m);
            let dir = random_direction(&mut r, &law);
            pathwise_derivative_check(&law, &dir, &STEP_GRID)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<DerivativeCheck> = checks.into_iter().flatten().collect();
    Ok(DerivativeSuite {
        pairs,
        checks: flat.len(),
        max_rel_error: max_by_parameter(
            flat.iter().map(|c| (c.parameter, c.rel_error)),
            &Parameter::ALL,
        ),
    })
}

/// Force `P(A = a | W = w) = target` by rescaling the cell of `(w, a)`
/// against the other providers at `w`, leaving `P(W = w)` and the outcome
/// conditionals unchanged.
pub fn with_propensity(law: &DiscreteLaw, a: usize, w: usize, target: f64) -> Result<DiscreteLaw> {
    if !(target > 0.0 && target < 1.0) || law.m < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot set propensity {target} with {} providers",
            law.m
        )));
    }
    let l = law.covariate_mass(w);
    let own = law.cell(w, a);
    let rest = l - own;
    let mut mass = law.mass.clone();
    for b in 0..law.m {
        let factor = if b == a {
            target * l / own
        } else {
            (1.0 - target) * l / rest
        };
        for y in 0..2 {
            mass[law.index(w, b, y)] *= factor;
        }
    }
    let total: f64 = mass.iter().sum();
    mass.iter_mut().for_each(|p| *p /= total);
    DiscreteLaw::new(law.n_w, law.m, mass)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyProbe {
    pub laws: usize,
    /// Laws on which the direct parameter's influence variance is larger.
    pub direct_larger: usize,
}

impl EfficiencyProbe {
    pub fn fraction(&self) -> f64 {
        self.direct_larger as f64 / self.laws as f64
    }
}

/// Compare exact influence variances of the direct and reassigned means for
/// provider 1 on random laws where its propensity in one covariate stratum is
/// log-uniform on `[0.005, 0.05]`.
pub fn efficiency_probe(laws: usize, seed: u64) -> Result<EfficiencyProbe> {
    let wins: Vec<bool> = (0..laws)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, &[3, i as u64]);
            let n_w = r.random_range(1..=3);
            let m = r.random_range(2..=3);
            let base = random_law(&mut r, n_w, m);
            let target = (0.005f64.ln() + r.random::<f64>() * (0.05f64.ln() - 0.005f64.ln())).exp();
            let law = with_propensity(&base, 0, r.random_range(0..n_w), target)?;
            let eifs = exact_eifs(&law);
            let var = |d: &[f64]| law.expect(&d.iter().map(|v| v * v).collect::<Vec<_>>());
            let direct = eifs[0].phi.as_ref().expect("propensities are positive");
            Ok(var(direct) > var(&eifs[0].psi2))
        })
        .collect::<Result<_>>()?;
    Ok(EfficiencyProbe {
        laws,
        direct_larger: wins.iter().filter(|&&w| w).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy4_law() -> DiscreteLaw {
        DiscreteLaw::empirical(&[0; 4], &[0, 0, 1, 1], &[1.0, 0.0, 1.0, 1.0]).unwrap()
    }

    fn toy6_law() -> DiscreteLaw {
        DiscreteLaw::empirical(
            &[0, 0, 1, 0, 1, 1],
            &[0, 0, 0, 1, 1, 1],
            &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0],
        )
        .unwrap()
    }

    #[test]
    fn toy_laws() {
        let t = exact_parameters(&toy4_law());
        assert!((t[0].psi2 - 0.75).abs() < 1e-15);
        assert!((t[0].smr.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let t6 = exact_parameters(&toy6_law());
        assert!((t6[0].psi2 - 5.0 / 9.0).abs() < 1e-15);
        assert!((t6[0].psi1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn independence_law() {
        let c = 0.3;
        let (n_w, m) = (2, 3);
        let wa = [0.1, 0.2, 0.15, 0.25, 0.2, 0.1];
        let mut mass = vec![0.0; n_w * m * 2];
        for (cell, &p) in wa.iter().enumerate() {
            mass[cell * 2] = p * (1.0 - c);
            mass[cell * 2 + 1] = p * c;
        }
        let law = DiscreteLaw::new(n_w, m, mass).unwrap();
        let eifs = exact_eifs(&law);
        for (a, t) in exact_parameters(&law).into_iter().enumerate() {
            for v in [t.phi.unwrap(), t.psi1, t.psi2] {
                assert!((v - c).abs() < 1e-14);
            }
            assert!((t.smr.unwrap() - 1.0).abs() < 1e-13);
            let e = &eifs[a];
            for ((s, d1), d2) in e.smr.as_ref().unwrap().iter().zip(&e.psi1).zip(&e.psi2) {
                assert!((s - (d1 - d2) / c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eifs_have_mean_zero_and_delta_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (n_w, m) = random_dims(&mut rng);
            let law = random_law(&mut rng, n_w, m);
            let truth = exact_parameters(&law);
            for (a, e) in exact_eifs(&law).iter().enumerate() {
                for p in Parameter::ALL {
                    if let Some(d) = e.get(p) {
                        assert!(law.expect(d).abs() <= 1e-12, "{p}");
                    }
                }
                let t = truth[a];
                for i in 0..law.n_atoms() {
                    assert_eq!(e.er[i], e.psi1[i] - e.psi2[i]);
                    let smr = e.psi1[i] / t.psi2 - t.psi1 * e.psi2[i] / (t.psi2 * t.psi2);
                    assert!((e.smr.as_ref().unwrap()[i] - smr).abs() <= 1e-15 * smr.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn identical_laws_have_zero_remainder() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let law = random_law(&mut rng, 3, 3);
        for c in von_mises_check(&law, &law).unwrap() {
            assert!(c.lhs.abs() < 1e-14 && c.rhs.abs() < 1e-15);
        }
    }

    #[test]
    fn outcome_only_change_kills_observed_remainder() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p0 = random_law(&mut rng, 2, 3);
        // move mass between y = 0 and y = 1 within each cell
        let mut mass = p0.masses().to_vec();
        for cell in 0..mass.len() / 2 {
            let total = mass[2 * cell] + mass[2 * cell + 1];
            mass[2 * cell + 1] = total * 0.5;
            mass[2 * cell] = total * 0.5;
        }
        let p = DiscreteLaw::new(2, 3, mass).unwrap();
        for c in von_mises_check(&p, &p0).unwrap() {
            if c.parameter == Parameter::Psi1 {
                assert_eq!(c.rhs, 0.0);
                assert!(c.lhs.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn support_mismatch_is_rejected() {
        let a = toy4_law();
        let b = DiscreteLaw::new(1, 2, vec![0.25; 4]).unwrap();
        assert!(matches!(
            von_mises_check(&a, &b),
            Err(Error::SupportMismatch)
        ));
    }

    #[test]
    fn random_identities_hold() {
        let suite = identity_suite(200, 11).unwrap();
        assert!(suite.worst() <= 1e-10, "{:?}", suite.max_residual);
    }

    #[test]
    fn zero_direction_has_zero_derivative() {
        let law = toy6_law();
        let checks =
            pathwise_derivative_check(&law, &vec![0.0; law.n_atoms()], &STEP_GRID).unwrap();
        assert!(checks
            .iter()
            .all(|c| c.extrapolated == 0.0 && c.eif_inner == 0.0));
    }

    #[test]
    fn observed_mean_ignores_other_providers_shape() {
        // shuffle mass among provider-2 atoms only: the observed mean of
        // provider 1 moves only through its share of the total mass
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let law = random_law(&mut rng, 2, 2);
        let mut dir = vec![0.0; law.n_atoms()];
        dir[law.index(0, 1, 0)] = 0.02;
        dir[law.index(1, 1, 1)] = 0.01;
        dir[law.index(0, 0, 1)] = -0.03;
        let checks = pathwise_derivative_check(&law, &dir, &STEP_GRID).unwrap();
        let c = checks
            .iter()
            .find(|c| c.provider == 0 && c.parameter == Parameter::Psi1)
            .unwrap();
        let t = exact_parameters(&law)[0];
        let p = law.provider_mass(0);
        let expect = -0.03 * (1.0 - t.psi1) / p;
        assert!((c.eif_inner - expect).abs() < 1e-14);
        assert!(c.rel_error <= 1e-6);

        // a pure provider-2 reshuffle leaves it unchanged
        let mut dir = vec![0.0; law.n_atoms()];
        dir[law.index(0, 1, 0)] = 0.02;
        dir[law.index(1, 1, 1)] = -0.02;
        let checks = pathwise_derivative_check(&law, &dir, &STEP_GRID).unwrap();
        let c = checks
            .iter()
            .find(|c| c.provider == 0 && c.parameter == Parameter::Psi1)
            .unwrap();
        assert!(c.extrapolated.abs() < 1e-12 && c.eif_inner == 0.0);
    }

    #[test]
    fn direct_parameter_derivative_on_small_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let law = random_law(&mut rng, 2, 2);
        let dir = random_direction(&mut rng, &law);
        let checks = pathwise_derivative_check(&law, &dir, &STEP_GRID).unwrap();
        for c in checks.iter().filter(|c| c.parameter == Parameter::Phi) {
            assert!(c.rel_error <= 1e-6, "{c:?}");
        }
    }

    #[test]
    fn invalid_step_is_rejected() {
        let law = toy4_law();
        let mut dir = vec![0.0; law.n_atoms()];
        dir[0] = -1000.0;
        dir[1] = 1000.0;
        assert!(matches!(
            pathwise_derivative_check(&law, &dir, &STEP_GRID),
            Err(Error::InvalidLaw(_))
        ));
    }

    #[test]
    fn forced_propensity() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let law = random_law(&mut rng, 3, 3);
        let forced = with_propensity(&law, 0, 1, 0.01).unwrap();
        assert!((forced.propensity(0, 1) - 0.01).abs() < 1e-14);
        for w in 0..3 {
            assert!((forced.covariate_mass(w) - law.covariate_mass(w)).abs() < 1e-14);
            for a in 0..3 {
                let (u, v) = (
                    forced.outcome_mean(a, w).unwrap(),
                    law.outcome_mean(a, w).unwrap(),
                );
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn generator_respects_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let law = random_law(&mut rng, 3, 3);
        assert!(law.masses().iter().all(|&p| p >= MASS_FLOOR * 0.999));
        assert!((law.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
