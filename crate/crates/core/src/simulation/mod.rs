//! Monte Carlo studies: simulated populations with known truth, repeated
//! estimation, and mean error / mean absolute error / coverage summaries.

mod dgp;

pub use dgp::{
    draw_sim1, draw_sim2, sim1_outcome, sim1_propensities, sim1_truth, sim1_weight, sim2_outcome,
    sim2_propensities, sim2_truth, sim2_weight, TruthTable, SIM2_K, SIM2_WEIGHT_FLOOR,
    TRUTH_BATCHES,
};

use std::fmt;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{make_folds, scale_outcomes, Dataset};
use crate::error::{Error, Result};
use crate::learners::{EnsembleSpec, GbtParams, LearnerSpec};
use crate::nuisance::{
    estimate_nuisances, truncate_propensities, NuisanceConfig, NuisanceEstimates,
    ProviderOutcomeMode,
};
use crate::rng;
use crate::targeting::{
    glm_benchmark, target_all, Estimator, GlmForm, Parameter, ProfileEstimates,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Study {
    Sim1,
    Sim2,
}

impl Study {
    pub fn as_str(self) -> &'static str {
        match self {
            Study::Sim1 => "sim1",
            Study::Sim2 => "sim2",
        }
    }

    /// Number of covariates the design uses.
    pub fn k(self) -> usize {
        match self {
            Study::Sim1 => 1,
            Study::Sim2 => SIM2_K,
        }
    }
}

/// Nuisance misspecification applied after estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Nuisances as estimated.
    S1,
    /// Propensities replaced by flat Dirichlet draws.
    S2,
    /// Outcome regressions replaced by 0.5 on the scaled domain.
    S3,
    /// Both replacements.
    S4,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::S1, Scenario::S2, Scenario::S3, Scenario::S4];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::S1 => "s1",
            Scenario::S2 => "s2",
            Scenario::S3 => "s3",
            Scenario::S4 => "s4",
        }
    }

    fn bad_propensity(self) -> bool {
        matches!(self, Scenario::S2 | Scenario::S4)
    }

    fn bad_outcome(self) -> bool {
        matches!(self, Scenario::S3 | Scenario::S4)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Replace nuisance estimates according to `scenario`. Propensity rows become
/// Dirichlet(1, ..., 1) draws (truncated copies are rebuilt with the same
/// bound); outcome regressions, both covariate-only and provider-specific,
/// become 0.5. Everything else is left as estimated.
pub fn apply_misspecification(
    nu: &NuisanceEstimates,
    scenario: Scenario,
    seed: u64,
) -> NuisanceEstimates {
    let mut out = nu.clone();
    if scenario.bad_propensity() {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        for mut row in out.pi_hat.rows_mut() {
            let draws: Vec<f64> = (0..row.len()).map(|_| Exp1.sample(&mut r)).collect();
            let total: f64 = draws.iter().sum();
            row.iter_mut().zip(&draws).for_each(|(v, d)| *v = d / total);
        }
        if out.pi_truncated.is_some() {
            out.pi_truncated = Some(truncate_propensities(&out.pi_hat, out.truncation));
        }
    }
    if scenario.bad_outcome() {
        out.mu_tilde.iter_mut().for_each(|v| *v = 0.5);
        if let Some(mb) = out.mu_bar.as_mut() {
            mb.fill(0.5);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub study: Study,
    pub n: usize,
    pub m: usize,
    /// Covariate count; fixed by the study when given.
    pub k: Option<usize>,
    pub sigma: f64,
    pub replicates: usize,
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
    pub estimators: Vec<Estimator>,
    pub glm_form: GlmForm,
    pub parameters: Vec<Parameter>,
    pub nuisance: NuisanceConfig,
    pub folds: usize,
    pub level: f64,
    pub delta: f64,
    /// Monte Carlo draws for the second design's truth.
    pub truth_draws: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::sim1()
    }
}

fn gbt(trees: usize) -> LearnerSpec {
    LearnerSpec::Gbt(GbtParams {
        trees,
        depth: 2,
        ..Default::default()
    })
}

impl SimConfig {
    /// First design with a two-member boosted-tree library.
    pub fn sim1() -> Self {
        let library = EnsembleSpec {
            members: vec![gbt(50), gbt(100)],
            ..EnsembleSpec::single(LearnerSpec::Mean)
        };
        Self {
            study: Study::Sim1,
            n: 2500,
            m: 10,
            k: None,
            sigma: 1.0,
            replicates: 100,
            seed: 1,
            scenarios: vec![Scenario::S1],
            estimators: vec![Estimator::Tmle, Estimator::Glm],
            glm_form: GlmForm::default(),
            parameters: Parameter::ALL.to_vec(),
            nuisance: NuisanceConfig {
                propensity: library.clone(),
                outcome: library,
                provider_outcome_mode: ProviderOutcomeMode::PerProvider,
                ..Default::default()
            },
            folds: 5,
            level: 0.95,
            delta: 0.005,
            truth_draws: 1_000_000,
        }
    }

    /// Second design at desk scale with all four scenarios.
    pub fn sim2() -> Self {
        Self {
            study: Study::Sim2,
            n: 5000,
            m: 20,
            k: None,
            sigma: 1.0,
            replicates: 100,
            seed: 2,
            scenarios: Scenario::ALL.to_vec(),
            estimators: vec![Estimator::Tmle],
            glm_form: GlmForm::default(),
            parameters: vec![Parameter::Psi2, Parameter::Er, Parameter::Smr],
            nuisance: NuisanceConfig {
                propensity: EnsembleSpec {
                    members: vec![LearnerSpec::Mean, LearnerSpec::Glm],
                    ..EnsembleSpec::single(LearnerSpec::Mean)
                },
                outcome: EnsembleSpec {
                    members: vec![LearnerSpec::Mean, LearnerSpec::Glm, gbt(100)],
                    ..EnsembleSpec::single(LearnerSpec::Mean)
                },
                ..Default::default()
            },
            folds: 5,
            level: 0.95,
            delta: 0.005,
            truth_draws: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if let Some(k) = self.k {
            if k != self.study.k() {
                return bad(format!(
                    "{} uses k = {}, got {k}",
                    self.study.as_str(),
                    self.study.k()
                ));
            }
        }
        if self.m < 2 {
            return bad(format!("need at least two providers, got {}", self.m));
        }
        if self.n < self.m {
            return bad(format!(
                "sample size {} is smaller than the provider count",
                self.n
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return bad(format!("noise level {} must be positive", self.sigma));
        }
        if self.replicates == 0 {
            return bad("at least one replicate is needed".into());
        }
        if self.scenarios.is_empty() || self.estimators.is_empty() || self.parameters.is_empty() {
            return bad("scenarios, estimators and parameters must be non-empty".into());
        }
        if self.study == Study::Sim1 && self.scenarios.iter().any(|&s| s != Scenario::S1) {
            return bad("misspecification scenarios apply to sim2 only".into());
        }
        if self.folds == 0 {
            return bad("fold count must be positive".into());
        }
        if self.study == Study::Sim2 && self.truth_draws < TRUTH_BATCHES {
            return bad(format!("need at least {TRUTH_BATCHES} truth draws"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!(
                "confidence level {} must lie in (0, 1)",
                self.level
            ));
        }
        self.nuisance.validate(self.m)
    }

    /// Population and truth for replicate `r`.
    pub fn draw(&self, r: usize) -> Result<(Dataset, TruthTable)> {
        let mut data_rng = rng::stream(self.seed, &[r as u64, 0]);
        match self.study {
            Study::Sim1 => draw_sim1(self.n, self.m, self.sigma, &mut data_rng),
            Study::Sim2 => {
                let mut truth_rng = rng::stream(self.seed, &[r as u64, 3]);
                draw_sim2(
                    self.n,
                    self.m,
                    self.sigma,
                    &mut data_rng,
                    self.truth_draws,
                    &mut truth_rng,
                )
            }
        }
    }
}

/// One provider-level error record for auditing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    /// Absent for the benchmark, which does not depend on the scenario.
    pub scenario: Option<Scenario>,
    pub estimator: Estimator,
    pub parameter: Parameter,
    pub provider: usize,
    pub estimate: f64,
    pub truth: f64,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
}

impl ReplicateRecord {
    pub fn error(&self) -> f64 {
        self.estimate - self.truth
    }

    pub fn covered(&self) -> Option<bool> {
        Some(self.ci_lo? <= self.truth && self.truth <= self.ci_hi?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub study: Study,
    pub scenario: Option<Scenario>,
    pub estimator: Estimator,
    pub parameter: Parameter,
    pub n: usize,
    pub me: f64,
    pub mae: f64,
    /// Monte Carlo standard errors of the two averages across replicates.
    pub me_se: f64,
    pub mae_se: f64,
    pub coverage: Option<f64>,
    pub replicates: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub rows: Vec<SummaryRow>,
    pub records: Vec<ReplicateRecord>,
    /// `(replicate, message)` for every replicate that was excluded.
    pub failures: Vec<(usize, String)>,
    /// Largest Monte Carlo standard error of a reassigned-mean truth.
    pub truth_se_max: Option<f64>,
}

impl SimResult {
    pub fn row(
        &self,
        scenario: Option<Scenario>,
        estimator: Estimator,
        parameter: Parameter,
    ) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| {
            r.scenario == scenario && r.estimator == estimator && r.parameter == parameter
        })
    }
}

fn records_from(
    r: usize,
    scenario: Option<Scenario>,
    est: &ProfileEstimates,
    truth: &TruthTable,
    out: &mut Vec<ReplicateRecord>,
) {
    for prov in &est.providers {
        for &p in &est.parameters {
            let Some(v) = prov.get(p) else { continue };
            out.push(ReplicateRecord {
                replicate: r,
                scenario,
                estimator: est.estimator,
                parameter: p,
                provider: prov.id,
                estimate: v.estimate,
                truth: truth.get(p, prov.id),
                ci_lo: v.ci.map(|c| c.0),
                ci_hi: v.ci.map(|c| c.1),
            });
        }
    }
}

struct ReplicateOutput {
    records: Vec<ReplicateRecord>,
    truth_se: Option<f64>,
}

fn run_replicate(cfg: &SimConfig, r: usize) -> Result<ReplicateOutput> {
    let (d, truth) = cfg.draw(r)?;
    if truth.regenerations > 0 {
        info!(
            "replicate {r}: provider effects redrawn {} times",
            truth.regenerations
        );
    }
    let mut records = Vec::new();
    for &estimator in &cfg.estimators {
        match estimator {
            Estimator::Tmle => {
                let (scaled, scale) = scale_outcomes(&d, cfg.delta)?;
                let folds = make_folds(&d, cfg.folds, rng::derive_seed(cfg.seed, &[r as u64, 1]))?;
                let mut ncfg = cfg.nuisance.clone();
                ncfg.direct = cfg.parameters.contains(&Parameter::Phi);
                let nu = estimate_nuisances(&scaled, &folds, &ncfg)?;
                for &s in &cfg.scenarios {
                    let seed = rng::derive_seed(cfg.seed, &[r as u64, 2, s as u64]);
                    let nu_s = apply_misspecification(&nu, s, seed);
                    let est = target_all(&scaled, scale, &nu_s, &cfg.parameters, cfg.level)?;
                    records_from(r, Some(s), &est, &truth, &mut records);
                }
            }
            Estimator::Glm => {
                let est = glm_benchmark(&d, &cfg.parameters, cfg.glm_form)?;
                records_from(r, None, &est, &truth, &mut records);
            }
        }
    }
    Ok(ReplicateOutput {
        records,
        truth_se: truth.psi2_se.map(|v| v.into_iter().fold(0.0, f64::max)),
    })
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summarize(
    cfg: &SimConfig,
    records: &[ReplicateRecord],
    successes: &[usize],
    failures: usize,
) -> Vec<SummaryRow> {
    let mut cells: Vec<(Option<Scenario>, Estimator)> = Vec::new();
    for &e in &cfg.estimators {
        match e {
            Estimator::Tmle => cells.extend(cfg.scenarios.iter().map(|&s| (Some(s), e))),
            Estimator::Glm => cells.push((None, e)),
        }
    }
    let mut params = cfg.parameters.clone();
    params.sort();
    params.dedup();
    let mut rows = Vec::new();
    for (scenario, estimator) in cells {
        for &parameter in &params {
            let cell: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| {
                    r.scenario == scenario && r.estimator == estimator && r.parameter == parameter
                })
                .collect();
            let mut me = Vec::new();
            let mut mae = Vec::new();
            for &rep in successes {
                let errs: Vec<f64> = cell
                    .iter()
                    .filter(|r| r.replicate == rep)
                    .map(|r| r.error())
                    .collect();
                if errs.is_empty() {
                    continue;
                }
                me.push(errs.iter().sum::<f64>() / errs.len() as f64);
                mae.push(errs.iter().map(|e| e.abs()).sum::<f64>() / errs.len() as f64);
            }
            if me.is_empty() {
                continue;
            }
            let covered: Vec<bool> = cell.iter().filter_map(|r| r.covered()).collect();
            let coverage = (!covered.is_empty())
                .then(|| covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64);
            let (me_mean, me_se) = mean_and_se(&me);
            let (mae_mean, mae_se) = mean_and_se(&mae);
            rows.push(SummaryRow {
                study: cfg.study,
                scenario,
                estimator,
                parameter,
                n: cfg.n,
                me: me_mean,
                mae: mae_mean,
                me_se,
                mae_se,
                coverage,
                replicates: me.len(),
                failures,
            });
        }
    }
    rows
}

/// Run every replicate in parallel and aggregate. Each replicate draws its
/// data, folds, truth and misspecification from seeds derived from
/// `cfg.seed` and the replicate index, so the result does not depend on
/// scheduling. Failed replicates are excluded and counted.
pub fn run_study(cfg: &SimConfig) -> Result<SimResult> {
    cfg.validate()?;
    let outputs: Vec<Result<ReplicateOutput>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, r))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut successes = Vec::new();
    let mut truth_se_max: Option<f64> = None;
    for (r, out) in outputs.into_iter().enumerate() {
        match out {
            Ok(o) => {
                successes.push(r);
                records.extend(o.records);
                if let Some(se) = o.truth_se {
                    truth_se_max = Some(truth_se_max.map_or(se, |m| m.max(se)));
                }
            }
            Err(e) => {
                warn!("replicate {r} failed: {e}");
                failures.push((r, e.to_string()));
            }
        }
    }
    if successes.is_empty() {
        return Err(Error::Empty(format!(
            "all {} replicates failed",
            cfg.replicates
        )));
    }
    let rows = summarize(cfg, &records, &successes, failures.len());
    Ok(SimResult {
        rows,
        records,
        failures,
        truth_se_max,
    })
}
