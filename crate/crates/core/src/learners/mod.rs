//! Regression and class-probability learners, plus convex stacking.
//!
//! Every learner is deterministic given its spec and the data. Tree learners
//! draw row subsamples from a spec-level seed.

pub mod gbt;
pub mod glm;
pub mod knn;
pub mod stack;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use gbt::GbtParams;
use gbt::{Binner, Booster, Loss};
use glm::{LinearModel, SoftmaxModel};
use knn::Knn;
pub use stack::{stack_classifier, stack_regressor, EnsembleSpec, WeightLoss};

/// Bounds applied to logit-link predictions so they stay strictly inside (0, 1).
const LOGIT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    Mean,
    Glm,
    GlmRidge { lambda: f64 },
    Knn { k: usize },
    Gbt(GbtParams),
}

impl LearnerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self {
            LearnerSpec::Mean | LearnerSpec::Glm => Ok(()),
            LearnerSpec::GlmRidge { lambda } if !(*lambda >= 0.0 && lambda.is_finite()) => {
                bad(format!("glm_ridge lambda must be >= 0, got {lambda}"))
            }
            LearnerSpec::Knn { k } if *k < 1 => bad("knn k must be >= 1".into()),
            LearnerSpec::Gbt(p) => {
                if p.trees < 1 || p.depth < 1 {
                    bad("gbt needs trees >= 1 and depth >= 1".into())
                } else if !(p.learning_rate > 0.0 && p.learning_rate <= 1.0) {
                    bad(format!(
                        "gbt learning_rate must lie in (0, 1], got {}",
                        p.learning_rate
                    ))
                } else if p.min_leaf < 1 || !(p.l2 >= 0.0) || p.max_bins < 2 || p.max_bins > 256 {
                    bad("gbt needs min_leaf >= 1, l2 >= 0 and 2 <= max_bins <= 256".into())
                } else if !(p.subsample > 0.0 && p.subsample <= 1.0) {
                    bad(format!(
                        "gbt subsample must lie in (0, 1], got {}",
                        p.subsample
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            LearnerSpec::Mean => "mean".into(),
            LearnerSpec::Glm => "glm".into(),
            LearnerSpec::GlmRidge { lambda } => format!("glm_ridge(lambda={lambda})"),
            LearnerSpec::Knn { k } => format!("knn(k={k})"),
            LearnerSpec::Gbt(p) => format!("gbt(trees={}, depth={})", p.trees, p.depth),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Logit,
}

#[derive(Debug, Clone, PartialEq)]
enum RegressorState {
    Mean(f64),
    Linear(LinearModel),
    Logistic(LinearModel),
    Knn {
        model: Knn,
        targets: Vec<f64>,
    },
    Gbt(Booster),
    Stack {
        members: Vec<FittedRegressor>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedRegressor {
    state: RegressorState,
    feature_dim: usize,
    link: Link,
    diagnostics: Vec<String>,
}

impl FittedRegressor {
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn link(&self) -> Link {
        self.link
    }

    /// Notes recorded during fitting, e.g. a ridge fallback.
    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    /// Stacking weights, when this is an ensemble.
    pub fn weights(&self) -> Option<&[f64]> {
        match &self.state {
            RegressorState::Stack { weights, .. } => Some(weights),
            _ => None,
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.feature_dim {
            return Err(Error::InvalidArgument(format!(
                "regressor expects {} features, got {}",
                self.feature_dim,
                x.ncols()
            )));
        }
        let raw = match &self.state {
            RegressorState::Mean(v) => vec![*v; x.nrows()],
            RegressorState::Linear(model) => model.eta(x),
            RegressorState::Logistic(model) => model.eta(x).into_iter().map(glm::sigmoid).collect(),
            RegressorState::Knn { model, targets } => model.average(x, targets),
            RegressorState::Gbt(b) => b.predict(x),
            RegressorState::Stack { members, weights } => {
                let mut out = vec![0.0; x.nrows()];
                for (member, &w) in members.iter().zip(weights) {
                    for (o, p) in out.iter_mut().zip(member.predict(x)?) {
                        *o += w * p;
                    }
                }
                out
            }
        };
        Ok(match self.link {
            Link::Identity => raw,
            Link::Logit => raw
                .into_iter()
                .map(|p| p.clamp(LOGIT_FLOOR, 1.0 - LOGIT_FLOOR))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ClassifierState {
    Frequencies(Vec<f64>),
    Softmax {
        model: SoftmaxModel,
        /// Original class id of each fitted class when some were absent.
        present: Vec<usize>,
    },
    Knn {
        model: Knn,
        classes: Vec<usize>,
    },
    OneVsRest(Vec<Booster>),
    Stack {
        members: Vec<FittedClassifier>,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedClassifier {
    state: ClassifierState,
    feature_dim: usize,
    n_classes: usize,
    diagnostics: Vec<String>,
}

impl FittedClassifier {
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn diagnostics(&self) -> &[String] {
        &self.diagnostics
    }

    pub fn weights(&self) -> Option<&[f64]> {
        match &self.state {
            ClassifierState::Stack { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// n×m matrix of class probabilities; rows sum to one.
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.feature_dim {
            return Err(Error::InvalidArgument(format!(
                "classifier expects {} features, got {}",
                self.feature_dim,
                x.ncols()
            )));
        }
        let n = x.nrows();
        let m = self.n_classes;
        let mut out = match &self.state {
            ClassifierState::Frequencies(f) => Array2::from_shape_fn((n, m), |(_, c)| f[c]),
            ClassifierState::Softmax { model, present } => {
                let p = model.predict_proba(x);
                let mut out = Array2::zeros((n, m));
                let q = present.len();
                for i in 0..n {
                    for (j, &c) in present.iter().enumerate() {
                        out[[i, c]] = p[i * q + j];
                    }
                }
                out
            }
            ClassifierState::Knn { model, classes } => {
                Array2::from_shape_vec((n, m), model.class_frequencies(x, classes, m))
                    .expect("shape")
            }
            ClassifierState::OneVsRest(boosters) => {
                let mut out = Array2::zeros((n, m));
                for (c, b) in boosters.iter().enumerate() {
                    for (i, p) in b.predict(x).into_iter().enumerate() {
                        out[[i, c]] = p;
                    }
                }
                out
            }
            ClassifierState::Stack { members, weights } => {
                let mut out = Array2::zeros((n, m));
                for (member, &w) in members.iter().zip(weights) {
                    out.scaled_add(w, &member.predict_proba(x)?);
                }
                out
            }
        };
        for mut row in out.rows_mut() {
            let s = row.sum();
            if s > 0.0 {
                row.mapv_inplace(|v| v / s);
            } else {
                row.fill(1.0 / m as f64);
            }
        }
        Ok(out)
    }
}

fn check_shapes(x: ArrayView2<f64>, len: usize) -> Result<()> {
    if x.nrows() != len {
        return Err(Error::InvalidArgument(format!(
            "feature matrix has {} rows but response has {}",
            x.nrows(),
            len
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two observations to fit".into(),
        ));
    }
    Ok(())
}

pub fn fit_regressor(
    spec: &LearnerSpec,
    x: ArrayView2<f64>,
    y: &[f64],
    link: Link,
) -> Result<FittedRegressor> {
    spec.validate()?;
    check_shapes(x, y.len())?;
    if link == Link::Logit && y.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(
            "logit link needs responses in [0, 1]".into(),
        ));
    }
    let mut diagnostics = Vec::new();
    let mut note = |d: Option<String>| diagnostics.extend(d);
    let state = match (spec, link) {
        (LearnerSpec::Mean, _) => RegressorState::Mean(y.iter().sum::<f64>() / y.len() as f64),
        (LearnerSpec::Glm, Link::Identity) | (LearnerSpec::GlmRidge { .. }, Link::Identity) => {
            let (model, d) = glm::fit_linear(x, y, ridge_of(spec))?;
            note(d);
            RegressorState::Linear(model)
        }
        (LearnerSpec::Glm, Link::Logit) | (LearnerSpec::GlmRidge { .. }, Link::Logit) => {
            let (model, d) = glm::fit_logistic(x, y, ridge_of(spec))?;
            note(d);
            if !model.converged {
                note(Some(format!(
                    "logistic fit stopped after {} iterations",
                    model.iterations
                )));
            }
            RegressorState::Logistic(model)
        }
        (LearnerSpec::Knn { k }, _) => RegressorState::Knn {
            model: Knn::fit(x, *k),
            targets: y.to_vec(),
        },
        (LearnerSpec::Gbt(p), link) => {
            let loss = match link {
                Link::Identity => Loss::Squared,
                Link::Logit => Loss::Logistic,
            };
            RegressorState::Gbt(gbt::fit(x, y, p, loss))
        }
    };
    Ok(FittedRegressor {
        state,
        feature_dim: x.ncols(),
        link,
        diagnostics,
    })
}

fn ridge_of(spec: &LearnerSpec) -> f64 {
    match spec {
        LearnerSpec::GlmRidge { lambda } => *lambda,
        _ => 0.0,
    }
}

/// Fit class probabilities for classes `0..m`. Every class must occur.
pub fn fit_classifier(
    spec: &LearnerSpec,
    x: ArrayView2<f64>,
    a: &[usize],
    m: usize,
) -> Result<FittedClassifier> {
    let counts = class_counts(a, m)?;
    if let Some(class) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass { class });
    }
    fit_classifier_inner(spec, x, a, m, &counts)
}

/// As [`fit_classifier`], but absent classes receive probability zero.
/// Used for inner cross-validation splits.
pub(crate) fn fit_classifier_lenient(
    spec: &LearnerSpec,
    x: ArrayView2<f64>,
    a: &[usize],
    m: usize,
) -> Result<FittedClassifier> {
    let counts = class_counts(a, m)?;
    fit_classifier_inner(spec, x, a, m, &counts)
}

fn class_counts(a: &[usize], m: usize) -> Result<Vec<usize>> {
    if m < 1 {
        return Err(Error::InvalidArgument("need at least one class".into()));
    }
    let mut counts = vec![0usize; m];
    for &c in a {
        if c >= m {
            return Err(Error::InvalidArgument(format!(
                "class id {c} out of range for {m} classes"
            )));
        }
        counts[c] += 1;
    }
    Ok(counts)
}

fn fit_classifier_inner(
    spec: &LearnerSpec,
    x: ArrayView2<f64>,
    a: &[usize],
    m: usize,
    counts: &[usize],
) -> Result<FittedClassifier> {
    spec.validate()?;
    check_shapes(x, a.len())?;
    let n = a.len() as f64;
    let mut diagnostics = Vec::new();
    let state = match spec {
        LearnerSpec::Mean => {
            ClassifierState::Frequencies(counts.iter().map(|&c| c as f64 / n).collect())
        }
        LearnerSpec::Glm | LearnerSpec::GlmRidge { .. } => {
            let present: Vec<usize> = (0..m).filter(|&c| counts[c] > 0).collect();
            let mut compact = vec![usize::MAX; m];
            for (j, &c) in present.iter().enumerate() {
                compact[c] = j;
            }
            if present.len() == 1 {
                ClassifierState::Frequencies(counts.iter().map(|&c| c as f64 / n).collect())
            } else {
                let remapped: Vec<usize> = a.iter().map(|&c| compact[c]).collect();
                let (model, d) = glm::fit_softmax(x, &remapped, present.len(), ridge_of(spec))?;
                diagnostics.extend(d);
                if !model.converged {
                    diagnostics.push(format!(
                        "softmax fit stopped after {} iterations",
                        model.sweeps
                    ));
                }
                ClassifierState::Softmax { model, present }
            }
        }
        LearnerSpec::Knn { k } => ClassifierState::Knn {
            model: Knn::fit(x, *k),
            classes: a.to_vec(),
        },
        LearnerSpec::Gbt(p) => {
            let binner = Binner::fit(x, p.max_bins);
            let data = binner.transform(x);
            let boosters = (0..m)
                .map(|c| {
                    let y: Vec<f64> = a.iter().map(|&ai| (ai == c) as u8 as f64).collect();
                    gbt::fit_binned(&data, &binner, &y, p, Loss::Logistic, c as u64)
                })
                .collect();
            ClassifierState::OneVsRest(boosters)
        }
    };
    Ok(FittedClassifier {
        state,
        feature_dim: x.ncols(),
        n_classes: m,
        diagnostics,
    })
}
