//! Estimated efficient influence functions and the inference built on them:
//! standard errors, Wald intervals, joint provider covariance and funnel
//! plot limits.
//!
//! All functions work on the original outcome scale; callers multiply
//! scaled-domain influence values by the outcome scale width first.

use log::warn;
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Influence values of the direct parameter for provider `a`:
/// `1[A = a] / pi(a, w) * (y - mu_bar(a, w)) + mu_bar(a, w) - phi`.
pub fn eif_phi(
    a: usize,
    providers: &[usize],
    y: &[f64],
    pi_a: &[f64],
    mu_bar_a: &[f64],
    phi: f64,
) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let resid = if providers[i] == a {
                (y[i] - mu_bar_a[i]) / pi_a[i]
            } else {
                0.0
            };
            resid + mu_bar_a[i] - phi
        })
        .collect()
}

/// Influence values of the provider mean: `1[A = a] / p(a) * (y - psi1)`.
pub fn eif_psi1(a: usize, providers: &[usize], y: &[f64], p_a: f64, psi1: f64) -> Vec<f64> {
    providers
        .iter()
        .zip(y)
        .map(|(&ai, &yi)| if ai == a { (yi - psi1) / p_a } else { 0.0 })
        .collect()
}

/// Influence values of the reassigned mean:
/// `(pi(a, w) (y - mu_tilde(w)) + 1[A = a] (mu_tilde(w) - psi2)) / p(a)`.
pub fn eif_psi2(
    a: usize,
    providers: &[usize],
    y: &[f64],
    pi_a: &[f64],
    mu_tilde: &[f64],
    p_a: f64,
    psi2: f64,
) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let own = if providers[i] == a {
                mu_tilde[i] - psi2
            } else {
                0.0
            };
            (pi_a[i] * (y[i] - mu_tilde[i]) + own) / p_a
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Contrast {
    /// Difference of the provider mean and the reassigned mean.
    Er,
    /// Ratio of the provider mean to the reassigned mean.
    Smr,
}

/// Influence values of the difference or ratio of the two indirect means.
pub fn eif_delta(d1: &[f64], d2: &[f64], psi1: f64, psi2: f64, kind: Contrast) -> Result<Vec<f64>> {
    match kind {
        Contrast::Er => Ok(d1.iter().zip(d2).map(|(u, v)| u - v).collect()),
        Contrast::Smr => {
            if psi2 == 0.0 || !psi2.is_finite() {
                return Err(Error::UndefinedRatio(psi2));
            }
            let b = psi1 / (psi2 * psi2);
            Ok(d1.iter().zip(d2).map(|(u, v)| u / psi2 - b * v).collect())
        }
    }
}

/// Standard normal quantile (Wichura's AS 241, PPND16); relative accuracy
/// about 1e-16 over (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_812_8e4) * r
            + 6.726_577_092_700_870_1e4)
            * r
            + 4.592_195_393_154_987_1e4)
            * r
            + 1.373_169_376_550_946_1e4)
            * r
            + 1.971_590_950_306_551_4e3)
            * r
            + 1.331_416_678_917_843_8e2)
            * r
            + 3.387_132_872_796_366_6)
            * q;
        let den = ((((((5.226_495_278_852_854_6e3 * r + 2.872_908_573_572_194_3e4) * r
            + 3.930_789_580_009_271e4)
            * r
            + 2.121_379_430_158_659_7e4)
            * r
            + 5.394_196_021_424_751e3)
            * r
            + 6.871_870_074_920_579e2)
            * r
            + 4.231_333_070_160_091e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_545)
            * r
            + 1.423_437_110_749_683_5;
        let den = ((((((1.050_750_071_644_416_8e-9 * r + 5.475_938_084_995_345e-4) * r
            + 1.519_866_656_361_645_7e-2)
            * r
            + 1.481_039_764_274_800_8e-1)
            * r
            + 6.897_673_349_851e-1)
            * r
            + 1.676_384_830_183_803_8)
            * r
            + 2.053_191_626_637_759)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_049e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103;
        let den = ((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
            + 1.846_318_317_510_054_8e-5)
            * r
            + 7.868_691_311_456_133e-4)
            * r
            + 1.487_536_129_085_061_5e-2)
            * r
            + 1.369_298_809_227_358e-1)
            * r
            + 5.998_322_065_558_88e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Two-sided critical value for a confidence level.
pub fn critical_value(level: f64) -> f64 {
    normal_quantile(0.5 + level / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inference {
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Wald inference from influence values: `se = sqrt(mean(D^2) / n)`.
pub fn inference(d: &[f64], estimate: f64, level: f64) -> Result<Inference> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence level {level} must lie in (0, 1)"
        )));
    }
    let n = d.len() as f64;
    let se = (d.iter().map(|v| v * v).sum::<f64>() / n / n).sqrt();
    let z = critical_value(level);
    Ok(Inference {
        se,
        ci_lo: estimate - z * se,
        ci_hi: estimate + z * se,
    })
}

/// Covariance of provider estimates: entry (a, b) is `mean(D_a * D_b) / n`.
pub fn joint_covariance(ds: &[Vec<f64>]) -> Result<Array2<f64>> {
    let m = ds.len();
    let n = ds.first().map_or(0, Vec::len);
    if ds.iter().any(|d| d.len() != n) {
        return Err(Error::InvalidArgument(
            "influence vectors differ in length".into(),
        ));
    }
    let nf = n as f64;
    let mut cov = Array2::zeros((m, m));
    for a in 0..m {
        for b in a..m {
            let v = ds[a].iter().zip(&ds[b]).map(|(u, w)| u * w).sum::<f64>() / nf / nf;
            cov[[a, b]] = v;
            cov[[b, a]] = v;
        }
    }
    Ok(cov)
}

pub const FUNNEL_LEVELS: [f64; 3] = [0.95, 0.99, 0.999];
pub const FUNNEL_GRID: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Low,
    Inside,
    High,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunnelPoint {
    pub label: String,
    pub estimate: f64,
    pub precision: f64,
    /// Position relative to the limits at each level, in level order.
    pub sides: Vec<(f64, Side)>,
}

impl FunnelPoint {
    /// The widest level whose limits the estimate falls outside, if any.
    pub fn classification(&self) -> Option<(f64, Side)> {
        self.sides
            .iter()
            .filter(|(_, s)| *s != Side::Inside)
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .copied()
    }

    pub fn describe(&self) -> String {
        match self.classification() {
            None => "inside".into(),
            Some((level, side)) => {
                let word = if side == Side::Low { "low" } else { "high" };
                format!("{word} at {}%", fmt_percent(level))
            }
        }
    }
}

fn fmt_percent(level: f64) -> String {
    let s = format!("{:.3}", level * 100.0);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunnelCurve {
    pub level: f64,
    pub precision: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunnelTable {
    pub points: Vec<FunnelPoint>,
    pub curves: Vec<FunnelCurve>,
    pub log_scale: bool,
    /// Providers left out because their variance is zero or undefined.
    pub omitted: Vec<String>,
}

/// Control limits around 1 at precision `q`.
pub fn funnel_limits(level: f64, precision: f64, log_scale: bool) -> (f64, f64) {
    let half = critical_value(level) * (1.0 / precision).sqrt();
    if log_scale {
        ((-half).exp(), half.exp())
    } else {
        (1.0 - half, 1.0 + half)
    }
}

/// Funnel plot data from `(label, ratio estimate, standard error)` triples.
/// Precision is the inverse variance of the estimate.
pub fn funnel(
    providers: &[(String, f64, f64)],
    levels: &[f64],
    log_scale: bool,
) -> Result<FunnelTable> {
    let mut levels: Vec<f64> = if levels.is_empty() {
        FUNNEL_LEVELS.to_vec()
    } else {
        levels.to_vec()
    };
    if levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::InvalidArgument(
            "funnel levels must lie in (0, 1)".into(),
        ));
    }
    levels.sort_by(|a, b| a.total_cmp(b));
    levels.dedup();
    let mut points = Vec::new();
    let mut omitted = Vec::new();
    for (label, est, se) in providers {
        let var = se * se;
        if !(var > 0.0 && var.is_finite() && est.is_finite()) {
            warn!("provider {label} omitted from the funnel: variance {var}");
            omitted.push(label.clone());
            continue;
        }
        let precision = 1.0 / var;
        let sides = levels
            .iter()
            .map(|&level| {
                let (lo, hi) = funnel_limits(level, precision, log_scale);
                let side = if *est < lo {
                    Side::Low
                } else if *est > hi {
                    Side::High
                } else {
                    Side::Inside
                };
                (level, side)
            })
            .collect();
        points.push(FunnelPoint {
            label: label.clone(),
            estimate: *est,
            precision,
            sides,
        });
    }
    let curves = if points.is_empty() {
        Vec::new()
    } else {
        let qmin = points
            .iter()
            .map(|p| p.precision)
            .fold(f64::INFINITY, f64::min);
        let qmax = points
            .iter()
            .map(|p| p.precision)
            .fold(f64::NEG_INFINITY, f64::max);
        let grid: Vec<f64> = (0..FUNNEL_GRID)
            .map(|g| {
                let t = g as f64 / (FUNNEL_GRID - 1) as f64;
                (qmin.ln() + t * (qmax.ln() - qmin.ln())).exp()
            })
            .collect();
        levels
            .iter()
            .map(|&level| {
                let (lower, upper) = grid
                    .iter()
                    .map(|&q| funnel_limits(level, q, log_scale))
                    .unzip();
                FunnelCurve {
                    level,
                    precision: grid.clone(),
                    lower,
                    upper,
                }
            })
            .collect()
    };
    Ok(FunnelTable {
        points,
        curves,
        log_scale,
        omitted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSe {
    /// Standard deviation of the bootstrap replicates.
    pub plain: f64,
    /// Control-variate estimate using the linearization from the influence
    /// values; same target, lower Monte Carlo noise.
    pub controlled: f64,
    pub draws: usize,
    pub failures: usize,
}

/// Nonparametric bootstrap standard error of `statistic`, evaluated on row
/// index resamples. `influence` are the influence values of the statistic on
/// the original sample; the linear term `mean(influence[resample])` is used as
/// a control variate whose bootstrap variance is known exactly.
pub fn bootstrap_se<F>(
    n: usize,
    draws: usize,
    seed: u64,
    influence: &[f64],
    statistic: F,
) -> Result<BootstrapSe>
where
    F: Fn(&[usize]) -> Result<f64>,
{
    if influence.len() != n || n < 2 || draws < 2 {
        return Err(Error::InvalidArgument(
            "bootstrap needs n >= 2, draws >= 2 and n influence values".into(),
        ));
    }
    let mut rng = rng::stream(seed, &[0xB007]);
    let nf = n as f64;
    let infl_mean = influence.iter().sum::<f64>() / nf;
    let mut theta = Vec::with_capacity(draws);
    let mut lin = Vec::with_capacity(draws);
    let mut failures = 0;
    let mut idx = vec![0usize; n];
    for _ in 0..draws {
        idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
        match statistic(&idx) {
            Ok(t) if t.is_finite() => {
                theta.push(t);
                lin.push(idx.iter().map(|&i| influence[i]).sum::<f64>() / nf);
            }
            _ => failures += 1,
        }
    }
    let b = theta.len() as f64;
    if theta.len() < 2 {
        return Err(Error::InvalidArgument(
            "too few successful bootstrap draws".into(),
        ));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let var = |v: &[f64]| {
        let mu = mean(v);
        v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (b - 1.0)
    };
    let plain = var(&theta).sqrt();
    // Var(theta) = Var(L) + Var(theta - L) + 2 Cov(L, theta - L), with
    // Var(L) known exactly under resampling.
    let resid: Vec<f64> = theta.iter().zip(&lin).map(|(t, l)| t - l).collect();
    let exact_lin_var = influence
        .iter()
        .map(|v| (v - infl_mean).powi(2))
        .sum::<f64>()
        / nf
        / nf;
    let (ml, mr) = (mean(&lin), mean(&resid));
    let cov = lin
        .iter()
        .zip(&resid)
        .map(|(l, r)| (l - ml) * (r - mr))
        .sum::<f64>()
        / (b - 1.0);
    let controlled = (exact_lin_var + var(&resid) + 2.0 * cov).max(0.0).sqrt();
    Ok(BootstrapSe {
        plain,
        controlled,
        draws,
        failures,
    })
}
