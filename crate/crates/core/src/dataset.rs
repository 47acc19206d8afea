//! Observational profiling data: covariates, provider labels and outcomes,
//! together with cross-fitting folds and the bounded outcome scale used by the
//! logistic fluctuations.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use log::warn;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutcomeKind {
    Binary,
    Continuous,
}

/// n observations of (W, A, Y).
///
/// Providers are stored as contiguous ids `0..m`; `provider_labels[id]` is the
/// label as it appeared in the input. Every id has at least one observation.
#[derive(Debug, Clone)]
pub struct Dataset {
    covariates: Array2<f64>,
    providers: Vec<usize>,
    outcomes: Vec<f64>,
    outcome_kind: OutcomeKind,
    provider_labels: Vec<String>,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        covariates: Array2<f64>,
        providers: Vec<usize>,
        outcomes: Vec<f64>,
        outcome_kind: OutcomeKind,
        provider_labels: Vec<String>,
    ) -> Result<Self> {
        let n = outcomes.len();
        if n == 0 {
            return Err(Error::Empty("dataset has no observations".into()));
        }
        if covariates.nrows() != n || providers.len() != n {
            return Err(Error::InvalidArgument(format!(
                "length mismatch: {} outcomes, {} providers, {} covariate rows",
                n,
                providers.len(),
                covariates.nrows()
            )));
        }
        let m = provider_labels.len();
        let mut counts = vec![0usize; m];
        for (i, &a) in providers.iter().enumerate() {
            if a >= m {
                return Err(Error::InvalidArgument(format!(
                    "row {}: provider id {a} out of range for {m} providers",
                    i + 1
                )));
            }
            counts[a] += 1;
        }
        if let Some(a) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!(
                "provider `{}` has no observations",
                provider_labels[a]
            )));
        }
        for (i, &y) in outcomes.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::MissingValue {
                    row: i + 1,
                    column: "outcome".into(),
                });
            }
            if outcome_kind == OutcomeKind::Binary && y != 0.0 && y != 1.0 {
                return Err(Error::NonBinaryOutcome {
                    row: i + 1,
                    value: y,
                });
            }
        }
        if let Some(((i, j), _)) = covariates.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::MissingValue {
                row: i + 1,
                column: format!("covariate {}", j + 1),
            });
        }
        let covariate_names = (1..=covariates.ncols()).map(|j| format!("w{j}")).collect();
        Ok(Self {
            covariates,
            providers,
            outcomes,
            outcome_kind,
            provider_labels,
            covariate_names,
        })
    }

    /// Build from arbitrary provider labels. Ids follow the sorted label order
    /// (numeric order when every label is an integer).
    pub fn from_labels<S: AsRef<str>>(
        covariates: Array2<f64>,
        labels: &[S],
        outcomes: Vec<f64>,
        outcome_kind: OutcomeKind,
    ) -> Result<Self> {
        let (providers, provider_labels) = index_labels(labels);
        Self::new(
            covariates,
            providers,
            outcomes,
            outcome_kind,
            provider_labels,
        )
    }

    pub fn with_covariate_names(mut self, names: Vec<String>) -> Self {
        assert_eq!(names.len(), self.k());
        self.covariate_names = names;
        self
    }

    pub fn n(&self) -> usize {
        self.outcomes.len()
    }

    /// Number of providers.
    pub fn m(&self) -> usize {
        self.provider_labels.len()
    }

    /// Number of covariates.
    pub fn k(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn covariates(&self) -> &Array2<f64> {
        &self.covariates
    }

    pub fn providers(&self) -> &[usize] {
        &self.providers
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn outcome_kind(&self) -> OutcomeKind {
        self.outcome_kind
    }

    pub fn provider_labels(&self) -> &[String] {
        &self.provider_labels
    }

    pub fn label(&self, a: usize) -> &str {
        &self.provider_labels[a]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn provider_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.m()];
        for &a in &self.providers {
            counts[a] += 1;
        }
        counts
    }

    pub fn rows_of(&self, a: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.providers[i] == a).collect()
    }

    /// Mean outcome among observations of provider `a`.
    pub fn provider_mean(&self, a: usize) -> f64 {
        let (s, c) = self
            .providers
            .iter()
            .zip(&self.outcomes)
            .filter(|(&p, _)| p == a)
            .fold((0.0, 0usize), |(s, c), (_, &y)| (s + y, c + 1));
        s / c as f64
    }

    pub fn with_outcomes(&self, outcomes: Vec<f64>, kind: OutcomeKind) -> Result<Self> {
        let mut d = Self::new(
            self.covariates.clone(),
            self.providers.clone(),
            outcomes,
            kind,
            self.provider_labels.clone(),
        )?;
        d.covariate_names = self.covariate_names.clone();
        Ok(d)
    }

    /// Observations `rows`, in the given order, with provider ids reindexed
    /// contiguously (label order is preserved).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let mut present = vec![false; self.m()];
        for &i in rows {
            present[self.providers[i]] = true;
        }
        let mut remap = vec![usize::MAX; self.m()];
        let mut labels = Vec::new();
        for (a, &p) in present.iter().enumerate() {
            if p {
                remap[a] = labels.len();
                labels.push(self.provider_labels[a].clone());
            }
        }
        let mut d = Self::new(
            self.covariates.select(Axis(0), rows),
            rows.iter().map(|&i| remap[self.providers[i]]).collect(),
            rows.iter().map(|&i| self.outcomes[i]).collect(),
            self.outcome_kind,
            labels,
        )?;
        d.covariate_names = self.covariate_names.clone();
        Ok(d)
    }
}

fn index_labels<S: AsRef<str>>(labels: &[S]) -> (Vec<usize>, Vec<String>) {
    let numeric: Option<Vec<i64>> = labels
        .iter()
        .map(|l| l.as_ref().trim().parse().ok())
        .collect();
    let mut ordered: Vec<String> = match &numeric {
        Some(vals) => {
            let mut v: Vec<i64> = vals.clone();
            v.sort_unstable();
            v.dedup();
            v.into_iter().map(|x| x.to_string()).collect()
        }
        None => {
            let mut v: Vec<String> = labels.iter().map(|l| l.as_ref().to_string()).collect();
            v.sort();
            v.dedup();
            v
        }
    };
    ordered.shrink_to_fit();
    let index: BTreeMap<&str, usize> = ordered
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let ids = match &numeric {
        Some(vals) => vals.iter().map(|x| index[x.to_string().as_str()]).collect(),
        None => labels.iter().map(|l| index[l.as_ref()]).collect(),
    };
    (ids, ordered)
}

/// Column names used when reading a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSchema {
    pub outcome: String,
    pub provider: String,
    /// Covariate columns; when empty, every column named `w<integer>` is used
    /// in numeric order.
    pub covariates: Vec<String>,
    /// Overrides outcome-kind inference.
    pub outcome_kind: Option<OutcomeKind>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            outcome: "y".into(),
            provider: "provider".into(),
            covariates: Vec::new(),
            outcome_kind: None,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

/// Parse a CSV stream. Rows are numbered from 1 (the header is row 0) in
/// error messages.
pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 0,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let y_col = find(&schema.outcome)?;
    let a_col = find(&schema.provider)?;
    let cov_names: Vec<String> = if schema.covariates.is_empty() {
        let mut ws: Vec<(u64, String)> = headers
            .iter()
            .filter_map(|h| {
                h.strip_prefix('w')
                    .and_then(|rest| rest.parse::<u64>().ok())
                    .map(|j| (j, h.clone()))
            })
            .collect();
        ws.sort();
        ws.into_iter().map(|(_, h)| h).collect()
    } else {
        schema.covariates.clone()
    };
    let w_cols = cov_names
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let k = w_cols.len();
    let mut w = Vec::new();
    let mut labels = Vec::new();
    let mut y = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 1;
        let rec = rec.map_err(|e| Error::MalformedRow {
            row,
            message: e.to_string(),
        })?;
        let cell = |col: usize, name: &str| -> Result<&str> {
            let v = rec.get(col).unwrap_or("");
            if v.is_empty() || v.eq_ignore_ascii_case("na") {
                Err(Error::MissingValue {
                    row,
                    column: name.to_string(),
                })
            } else {
                Ok(v)
            }
        };
        let number = |col: usize, name: &str| -> Result<f64> {
            let v = cell(col, name)?;
            match v.parse::<f64>() {
                Ok(x) if x.is_nan() => Err(Error::MissingValue {
                    row,
                    column: name.to_string(),
                }),
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(Error::NonNumeric {
                    row,
                    column: name.to_string(),
                    value: v.to_string(),
                }),
            }
        };
        y.push(number(y_col, &schema.outcome)?);
        labels.push(cell(a_col, &schema.provider)?.to_string());
        for (&c, name) in w_cols.iter().zip(&cov_names) {
            w.push(number(c, name)?);
        }
    }
    if y.is_empty() {
        return Err(Error::Empty("input file has no data rows".into()));
    }
    let kind = schema.outcome_kind.unwrap_or_else(|| {
        if y.iter().all(|&v| v == 0.0 || v == 1.0) {
            OutcomeKind::Binary
        } else {
            OutcomeKind::Continuous
        }
    });
    let n = y.len();
    let covariates =
        Array2::from_shape_vec((n, k), w).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(Dataset::from_labels(covariates, &labels, y, kind)?.with_covariate_names(cov_names))
}

/// Providers removed by [`filter_min_volume`], with their observation counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterReport {
    pub dropped: Vec<(String, usize)>,
}

/// Drop every provider with fewer than `min_n` observations.
pub fn filter_min_volume(d: &Dataset, min_n: usize) -> Result<(Dataset, FilterReport)> {
    if min_n == 0 {
        return Err(Error::InvalidArgument(
            "minimum volume must be at least 1".into(),
        ));
    }
    let counts = d.provider_counts();
    let keep: Vec<usize> = (0..d.n())
        .filter(|&i| counts[d.providers()[i]] >= min_n)
        .collect();
    let dropped: Vec<(String, usize)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c < min_n)
        .map(|(a, &c)| (d.label(a).to_string(), c))
        .collect();
    if keep.is_empty() {
        return Err(Error::Empty(format!(
            "no provider has at least {min_n} observations"
        )));
    }
    if dropped.is_empty() {
        return Ok((d.clone(), FilterReport::default()));
    }
    Ok((d.subset(&keep)?, FilterReport { dropped }))
}

/// A partition of `0..n` into validation folds V_1..V_J.
///
/// With `folds == 1` there is no cross-fitting: every model is trained and
/// evaluated on the full sample. That mode exists for debugging and exact
/// checks only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_of: Vec<usize>,
    folds: usize,
    seed: u64,
    unstratified: Vec<usize>,
}

impl FoldAssignment {
    /// The no-cross-fitting assignment.
    pub fn single(n: usize) -> Self {
        Self {
            fold_of: vec![0; n],
            folds: 1,
            seed: 0,
            unstratified: Vec::new(),
        }
    }

    pub fn from_vec(fold_of: Vec<usize>, folds: usize) -> Result<Self> {
        if folds == 0 || fold_of.iter().any(|&f| f >= folds) {
            return Err(Error::InvalidArgument("fold index out of range".into()));
        }
        Ok(Self {
            fold_of,
            folds,
            seed: 0,
            unstratified: Vec::new(),
        })
    }

    pub fn fold_of(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_cross_fitted(&self) -> bool {
        self.folds > 1
    }

    /// Providers whose rows were assigned without stratification because they
    /// have fewer observations than folds.
    pub fn unstratified_providers(&self) -> &[usize] {
        &self.unstratified
    }

    pub fn validation(&self, j: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == j)
            .collect()
    }

    pub fn training(&self, j: usize) -> Vec<usize> {
        if self.folds == 1 {
            return (0..self.fold_of.len()).collect();
        }
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != j)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Provider-stratified random partition into `folds` folds.
///
/// Rows of each provider are shuffled and dealt round-robin, with the dealing
/// position carried over between providers, so fold sizes differ by at most
/// one both overall and within each provider.
pub fn make_folds(d: &Dataset, folds: usize, seed: u64) -> Result<FoldAssignment> {
    if folds == 0 {
        return Err(Error::InvalidArgument(
            "number of folds must be positive".into(),
        ));
    }
    if folds == 1 {
        warn!("one fold requested: nuisance models are not cross-fitted (debug mode)");
        return Ok(FoldAssignment::single(d.n()));
    }
    let mut rng = rng::stream(seed, &[0xF01D]);
    let mut fold_of = vec![0; d.n()];
    let mut unstratified = Vec::new();
    let mut position = 0usize;
    for a in 0..d.m() {
        let mut rows = d.rows_of(a);
        rows.shuffle(&mut rng);
        if rows.len() < folds {
            warn!(
                "provider {} has {} observations, fewer than {} folds; assigning its rows without stratification",
                d.label(a),
                rows.len(),
                folds
            );
            unstratified.push(a);
            for &i in &rows {
                fold_of[i] = rng.random_range(0..folds);
            }
            continue;
        }
        for &i in &rows {
            fold_of[i] = position % folds;
            position += 1;
        }
    }
    Ok(FoldAssignment {
        fold_of,
        folds,
        seed,
        unstratified,
    })
}

/// Affine map between the original outcome scale and the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScale {
    pub lo: f64,
    pub hi: f64,
}

impl OutcomeScale {
    pub const UNIT: OutcomeScale = OutcomeScale { lo: 0.0, hi: 1.0 };

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn scale(&self, y: f64) -> f64 {
        (y - self.lo) / self.width()
    }

    pub fn unscale(&self, s: f64) -> f64 {
        self.lo + s * self.width()
    }
}

/// Map outcomes into `[delta, 1 - delta]`. Binary outcomes are returned
/// unchanged with the unit scale.
pub fn scale_outcomes(d: &Dataset, delta: f64) -> Result<(Dataset, OutcomeScale)> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "outcome scaling margin must lie in (0, 0.5), got {delta}"
        )));
    }
    if d.outcome_kind() == OutcomeKind::Binary {
        return Ok((d.clone(), OutcomeScale::UNIT));
    }
    let (min, max) = d
        .outcomes()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
            (lo.min(y), hi.max(y))
        });
    if !(max > min) {
        return Err(Error::DegenerateScale(min));
    }
    let pad = delta * (max - min) / (1.0 - 2.0 * delta);
    let scale = OutcomeScale {
        lo: min - pad,
        hi: max + pad,
    };
    let scaled = d.outcomes().iter().map(|&y| scale.scale(y)).collect();
    Ok((d.with_outcomes(scaled, OutcomeKind::Continuous)?, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy(labels: &[&str], counts: &[usize]) -> Dataset {
        let mut l = Vec::new();
        for (lab, &c) in labels.iter().zip(counts) {
            l.extend(std::iter::repeat_n(*lab, c));
        }
        let n = l.len();
        let w = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let y = (0..n).map(|i| (i % 2) as f64).collect();
        Dataset::from_labels(w, &l, y, OutcomeKind::Binary).unwrap()
    }

    #[test]
    fn csv_four_rows_two_providers() {
        let text = "y,provider,w1\n0,A,0.1\n1,B,0.2\n1,A,0.3\n0,B,0.4\n";
        let d = read_csv(text.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(d.m(), 2);
        assert_eq!(d.provider_labels(), &["A".to_string(), "B".to_string()]);
        assert_eq!(d.providers(), &[0, 1, 0, 1]);
        assert_eq!(d.outcome_kind(), OutcomeKind::Binary);
        assert_eq!(d.covariates()[[2, 0]], 0.3);
    }

    #[test]
    fn csv_blank_outcome_names_row_and_column() {
        let text = "y,provider,w1\n0,A,0.1\n1,B,0.2\n,A,0.3\n0,B,0.4\n";
        match read_csv(text.as_bytes(), &ColumnSchema::default()) {
            Err(Error::MissingValue { row, column }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_errors_are_distinct() {
        let s = ColumnSchema::default();
        assert!(matches!(
            read_csv("y,hospital,w1\n1,A,0\n".as_bytes(), &s),
            Err(Error::MissingColumn { .. })
        ));
        assert!(matches!(
            read_csv("y,provider,w1\n1,A,abc\n".as_bytes(), &s),
            Err(Error::NonNumeric { row: 1, .. })
        ));
        assert!(matches!(
            read_csv("y,provider,w1\n".as_bytes(), &s),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn csv_continuous_inference_and_override() {
        let text = "y,provider,w1\n0.5,1,0\n1,2,0\n";
        let d = read_csv(text.as_bytes(), &ColumnSchema::default()).unwrap();
        assert_eq!(d.outcome_kind(), OutcomeKind::Continuous);
        let text = "y,provider,w1\n0,1,0\n1,2,0\n";
        let schema = ColumnSchema {
            outcome_kind: Some(OutcomeKind::Continuous),
            ..Default::default()
        };
        let d = read_csv(text.as_bytes(), &schema).unwrap();
        assert_eq!(d.outcome_kind(), OutcomeKind::Continuous);
    }

    #[test]
    fn numeric_labels_sort_numerically() {
        let d = toy(&["10", "2", "1"], &[1, 1, 1]);
        assert_eq!(d.provider_labels(), &["1", "2", "10"]);
        assert_eq!(d.providers(), &[2, 1, 0]);
    }

    #[test]
    fn filter_keeps_large_providers() {
        let d = toy(&["1", "2"], &[150, 40]);
        let (f, report) = filter_min_volume(&d, 100).unwrap();
        assert_eq!(f.m(), 1);
        assert_eq!(f.n(), 150);
        assert_eq!(f.label(0), "1");
        assert_eq!(report.dropped, vec![("2".to_string(), 40)]);

        let (same, report) = filter_min_volume(&d, 1).unwrap();
        assert_eq!(same.providers(), d.providers());
        assert!(report.dropped.is_empty());

        let d = toy(&["1", "2"], &[99, 99]);
        assert!(matches!(filter_min_volume(&d, 100), Err(Error::Empty(_))));
    }

    #[test]
    fn folds_forced_sizes_and_determinism() {
        let d = toy(&["1"], &[10]);
        let f = make_folds(&d, 5, 3).unwrap();
        assert_eq!(f.fold_sizes(), vec![2; 5]);
        assert_eq!(f, make_folds(&d, 5, 3).unwrap());

        let d = toy(&["1"], &[101]);
        let f = make_folds(&d, 10, 11).unwrap();
        assert!(f.fold_sizes().iter().all(|&s| s == 10 || s == 11));
    }

    #[test]
    fn folds_stratified_within_provider() {
        let d = toy(&["a", "b", "c"], &[23, 7, 40]);
        let f = make_folds(&d, 5, 9).unwrap();
        for a in 0..3 {
            let mut sizes = vec![0; 5];
            for i in d.rows_of(a) {
                sizes[f.fold_of()[i]] += 1;
            }
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(hi - lo <= 1, "{sizes:?}");
        }
        let sizes = f.fold_sizes();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn small_provider_falls_back_to_unstratified() {
        let d = toy(&["a", "b"], &[30, 2]);
        let f = make_folds(&d, 5, 1).unwrap();
        assert_eq!(f.unstratified_providers(), &[1]);
    }

    #[test]
    fn scale_binary_passthrough() {
        let w = Array2::zeros((3, 1));
        let d = Dataset::from_labels(
            w,
            &["1", "1", "2"],
            vec![0.0, 1.0, 1.0],
            OutcomeKind::Binary,
        )
        .unwrap();
        let (s, scale) = scale_outcomes(&d, 0.005).unwrap();
        assert_eq!(scale, OutcomeScale::UNIT);
        assert_eq!(s.outcomes(), d.outcomes());
    }

    #[test]
    fn scale_endpoints_and_round_trip() {
        let w = Array2::zeros((2, 1));
        let d =
            Dataset::from_labels(w, &["1", "2"], vec![2.0, 4.0], OutcomeKind::Continuous).unwrap();
        let (s, _) = scale_outcomes(&d, 0.005).unwrap();
        assert!((s.outcomes()[0] - 0.005).abs() < 1e-15);
        assert!((s.outcomes()[1] - 0.995).abs() < 1e-15);

        let w = Array2::zeros((3, 1));
        let y = vec![-1.0, 0.0, 3.0];
        let d =
            Dataset::from_labels(w, &["1", "2", "2"], y.clone(), OutcomeKind::Continuous).unwrap();
        let (s, scale) = scale_outcomes(&d, 0.005).unwrap();
        for (orig, sc) in y.iter().zip(s.outcomes()) {
            assert!((scale.unscale(*sc) - orig).abs() < 1e-12);
        }
    }

    #[test]
    fn scale_rejects_constant_outcome() {
        let w = array![[0.0], [1.0]];
        let d =
            Dataset::from_labels(w, &["1", "2"], vec![3.0, 3.0], OutcomeKind::Continuous).unwrap();
        assert!(matches!(
            scale_outcomes(&d, 0.005),
            Err(Error::DegenerateScale(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn folds_partition_rows(n in 10usize..200, m in 1usize..6, j in 2usize..8, seed in any::<u64>()) {
                let labels: Vec<String> = (0..n).map(|i| (i % m).to_string()).collect();
                let d = Dataset::from_labels(Array2::zeros((n, 1)), &labels, vec![0.0; n], OutcomeKind::Binary).unwrap();
                let f = make_folds(&d, j, seed).unwrap();
                let mut seen = vec![0usize; n];
                for fold in 0..j {
                    for i in f.validation(fold) {
                        seen[i] += 1;
                    }
                }
                prop_assert!(seen.iter().all(|&c| c == 1));
            }

            #[test]
            fn scale_round_trip(y in proptest::collection::vec(-1e3f64..1e3, 2..50)) {
                prop_assume!(y.iter().any(|&v| v != y[0]));
                let n = y.len();
                let labels = vec!["1"; n];
                let d = Dataset::from_labels(Array2::zeros((n, 1)), &labels, y.clone(), OutcomeKind::Continuous).unwrap();
                let (s, scale) = scale_outcomes(&d, 0.005).unwrap();
                for (orig, sc) in y.iter().zip(s.outcomes()) {
                    prop_assert!((scale.unscale(*sc) - orig).abs() <= 1e-12 * orig.abs().max(1.0));
                    prop_assert!(*sc >= 0.005 - 1e-12 && *sc <= 0.995 + 1e-12);
                }
            }
        }
    }
}
