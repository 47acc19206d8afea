//! CSV and SVG writers. Floats are written with nine significant digits.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use provprof::eif::{FunnelTable, Side};
use provprof::nuisance::{PositivityFlag, PositivityReport};
use provprof::simulation::{ReplicateRecord, SimResult};
use provprof::targeting::{Parameter, ProfileEstimates};

use crate::CliError;

const SIG_DIGITS: usize = 9;

/// Nine significant digits, in plain notation for moderate magnitudes and
/// scientific notation otherwise. Non-finite values become empty fields.
pub fn fmt_sig(v: f64) -> String {
    if !v.is_finite() {
        return String::new();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent is always present");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if !(-5..15).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{exp}");
    }
    let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_sig).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn flag_name(f: PositivityFlag) -> &'static str {
    match f {
        PositivityFlag::Ok => "ok",
        PositivityFlag::PracticalViolation => "practical_violation",
    }
}

/// Requested parameters in canonical order, without duplicates.
pub fn canonical(params: &[Parameter]) -> Vec<Parameter> {
    Parameter::ALL
        .into_iter()
        .filter(|p| params.contains(p))
        .collect()
}

pub fn estimates_header(params: &[Parameter]) -> Vec<String> {
    let mut h = vec!["provider".to_string(), "n".to_string()];
    for p in canonical(params) {
        for suffix in ["", "_se", "_ci_lo", "_ci_hi"] {
            h.push(format!("{p}{suffix}"));
        }
    }
    h.push("positivity_flag".into());
    h.push("notes".into());
    h
}

pub fn write_estimates<W: Write>(out: W, est: &ProfileEstimates) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(estimates_header(&est.parameters))
        .map_err(csv_err)?;
    for prov in &est.providers {
        let mut row = vec![prov.label.clone(), prov.n.to_string()];
        for p in canonical(&est.parameters) {
            match prov.get(p) {
                Some(v) => {
                    row.push(fmt_sig(v.estimate));
                    row.push(opt(v.se));
                    row.push(opt(v.ci.map(|c| c.0)));
                    row.push(opt(v.ci.map(|c| c.1)));
                }
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        row.push(flag_name(prov.positivity).into());
        row.push(prov.notes.join("; "));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn write_positivity(
    path: &Path,
    report: &PositivityReport,
    labels: &[String],
) -> Result<(), CliError> {
    let mut w = writer(path)?;
    let mut header = vec!["provider".to_string(), "min".into()];
    if let Some(first) = report.providers.first() {
        header.extend(
            first
                .quantiles
                .iter()
                .map(|(q, _)| format!("q{}", fmt_sig(*q))),
        );
    }
    header.extend(["max".into(), "below_bound".into(), "flag".into()]);
    w.write_record(&header).map_err(csv_err)?;
    for p in &report.providers {
        let mut row = vec![labels[p.provider].clone(), fmt_sig(p.min)];
        row.extend(p.quantiles.iter().map(|(_, v)| fmt_sig(*v)));
        row.extend([
            fmt_sig(p.max),
            p.below_bound.to_string(),
            flag_name(p.flag).into(),
        ]);
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

/// One parsed row of an estimates file.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub provider: String,
    pub n: usize,
    /// Column name to value; empty fields are absent.
    pub values: BTreeMap<String, f64>,
    pub positivity_flag: String,
    pub notes: String,
}

pub fn read_estimates<R: Read>(input: R) -> Result<(Vec<String>, Vec<EstimateRow>), CliError> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Validation(format!("estimates file has no `{name}` column")))
    };
    let (ip, in_, iflag, inotes) = (
        col("provider")?,
        col("n")?,
        col("positivity_flag")?,
        col("notes")?,
    );
    let mut rows = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |c: &str, v: &str| {
            CliError::Validation(format!("row {}: column `{c}`: cannot parse `{v}`", k + 1))
        };
        let mut values = BTreeMap::new();
        for (j, field) in rec.iter().enumerate() {
            if [ip, in_, iflag, inotes].contains(&j) || field.is_empty() {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| bad(&header[j], field))?;
            values.insert(header[j].clone(), v);
        }
        rows.push(EstimateRow {
            provider: rec[ip].to_string(),
            n: rec[in_].parse().map_err(|_| bad("n", &rec[in_]))?,
            values,
            positivity_flag: rec[iflag].to_string(),
            notes: rec[inotes].to_string(),
        });
    }
    Ok((header, rows))
}

pub fn write_simulation(path: &Path, res: &SimResult) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record([
        "study",
        "scenario",
        "estimator",
        "parameter",
        "N",
        "ME",
        "MAE",
        "coverage",
        "replicates",
        "failures",
    ])
    .map_err(csv_err)?;
    for r in &res.rows {
        w.write_record([
            r.study.as_str().to_string(),
            r.scenario.map(|s| s.to_string()).unwrap_or_default(),
            r.estimator.as_str().to_string(),
            r.parameter.to_string(),
            r.n.to_string(),
            fmt_sig(r.me),
            fmt_sig(r.mae),
            opt(r.coverage),
            r.replicates.to_string(),
            r.failures.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

pub fn write_audit(path: &Path, records: &[ReplicateRecord]) -> Result<(), CliError> {
    let mut w = writer(path)?;
    w.write_record([
        "replicate",
        "scenario",
        "estimator",
        "parameter",
        "provider",
        "estimate",
        "truth",
        "ci_lo",
        "ci_hi",
    ])
    .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.replicate.to_string(),
            r.scenario.map(|s| s.to_string()).unwrap_or_default(),
            r.estimator.as_str().to_string(),
            r.parameter.to_string(),
            r.provider.to_string(),
            fmt_sig(r.estimate),
            fmt_sig(r.truth),
            opt(r.ci_lo),
            opt(r.ci_hi),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

fn side_name(s: Side) -> &'static str {
    match s {
        Side::Low => "low",
        Side::Inside => "inside",
        Side::High => "high",
    }
}

/// Points first (`record = point`), then limit curves (`record = limit`).
pub fn write_funnel<W: Write>(out: W, table: &FunnelTable) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "record",
        "provider",
        "level",
        "precision",
        "smr",
        "lower",
        "upper",
        "classification",
    ])
    .map_err(csv_err)?;
    for p in &table.points {
        let class = match p.classification() {
            None => "inside".to_string(),
            Some((level, side)) => format!("{}@{}", side_name(side), fmt_sig(level)),
        };
        w.write_record([
            "point".into(),
            p.label.clone(),
            String::new(),
            fmt_sig(p.precision),
            fmt_sig(p.estimate),
            String::new(),
            String::new(),
            class,
        ])
        .map_err(csv_err)?;
    }
    for c in &table.curves {
        for i in 0..c.precision.len() {
            w.write_record([
                "limit".into(),
                String::new(),
                fmt_sig(c.level),
                fmt_sig(c.precision[i]),
                String::new(),
                fmt_sig(c.lower[i]),
                fmt_sig(c.upper[i]),
                String::new(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| CliError::Io(e.to_string()))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Funnel plot: ratio against precision with one `<circle>` per provider.
pub fn funnel_svg(table: &FunnelTable) -> String {
    const W: f64 = 640.0;
    const H: f64 = 440.0;
    const PAD: f64 = 50.0;
    let xs = table.points.iter().map(|p| p.precision).chain(
        table
            .curves
            .iter()
            .flat_map(|c| c.precision.iter().copied()),
    );
    let x_max = xs.fold(0.0, f64::max).max(1e-12);
    let mut ys: Vec<f64> = table.points.iter().map(|p| p.estimate).collect();
    ys.push(1.0);
    let (mut y_lo, mut y_hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    let span = (y_hi - y_lo).max(0.5);
    y_lo -= 0.25 * span;
    y_hi += 0.25 * span;
    let px = |x: f64| PAD + (W - 2.0 * PAD) * x / x_max;
    let py = |y: f64| H - PAD - (H - 2.0 * PAD) * (y.clamp(y_lo, y_hi) - y_lo) / (y_hi - y_lo);

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<line x1=\"{PAD}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
        py(1.0),
        W - PAD,
        py(1.0)
    ));
    let dashes = ["6,3", "3,3", "1,2"];
    for (k, c) in table.curves.iter().enumerate() {
        let dash = dashes[k % dashes.len()];
        for bound in [&c.lower, &c.upper] {
            let pts: Vec<String> = c
                .precision
                .iter()
                .zip(bound.iter())
                .filter(|(_, v)| v.is_finite())
                .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
                .collect();
            s.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"grey\" stroke-dasharray=\"{dash}\" points=\"{}\"><title>{}</title></polyline>\n",
                pts.join(" "),
                fmt_sig(c.level)
            ));
        }
    }
    for p in &table.points {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"><title>{}: {}</title></circle>\n",
            px(p.precision),
            py(p.estimate),
            escape(&p.label),
            fmt_sig(p.estimate)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">precision (1 / variance)</text>\n",
        W / 2.0,
        H - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{:.2}\" font-size=\"12\" transform=\"rotate(-90 14 {:.2})\" text-anchor=\"middle\">standardized ratio</text>\n",
        H / 2.0,
        H / 2.0
    ));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(2.0 / 3.0), "0.666666667");
        assert_eq!(fmt_sig(4.0 / 3.0), "1.33333333");
        assert_eq!(fmt_sig(123456.789012), "123456.789");
        assert_eq!(fmt_sig(-0.5), "-0.5");
        assert_eq!(fmt_sig(1e-9), "1e-9");
        assert_eq!(fmt_sig(1.234567891e20), "1.23456789e20");
        assert_eq!(fmt_sig(9.9999999999), "10");
        assert_eq!(fmt_sig(f64::NAN), "");
    }

    #[test]
    fn formatting_round_trips_to_nine_digits() {
        for v in [std::f64::consts::PI, -1e-7 / 3.0, 7.0e12 / 9.0, 1.0 / 7.0] {
            let back: f64 = fmt_sig(v).parse().unwrap();
            assert!(((back - v) / v).abs() <= 5e-9, "{v} -> {back}");
        }
    }

    #[test]
    fn header_follows_requested_parameters_only() {
        let h = estimates_header(&[Parameter::Smr, Parameter::Psi1, Parameter::Smr]);
        assert_eq!(
            h,
            [
                "provider",
                "n",
                "psi1",
                "psi1_se",
                "psi1_ci_lo",
                "psi1_ci_hi",
                "smr",
                "smr_se",
                "smr_ci_lo",
                "smr_ci_hi",
                "positivity_flag",
                "notes"
            ]
        );
    }

    #[test]
    fn estimates_round_trip_to_nine_digits() {
        use provprof::dataset::{make_folds, Dataset, OutcomeKind};
        use provprof::learners::{EnsembleSpec, LearnerSpec};
        use provprof::nuisance::NuisanceConfig;
        use provprof::targeting::{compute_all, EstimationConfig};

        let n = 90;
        let x = ndarray::Array2::from_shape_fn((n, 1), |(i, _)| (i * 37 % 11) as f64 / 11.0);
        let a: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| f64::from(u8::from((i * 13 % 7) < 3 + a[i])))
            .collect();
        let labels = vec!["north".into(), "south, east".into(), "west".into()];
        let d = Dataset::new(x, a, y, OutcomeKind::Binary, labels).unwrap();
        let cfg = EstimationConfig {
            parameters: Parameter::ALL.to_vec(),
            nuisance: NuisanceConfig {
                propensity: EnsembleSpec::single(LearnerSpec::Glm),
                outcome: EnsembleSpec::single(LearnerSpec::Glm),
                ..Default::default()
            },
            ..Default::default()
        };
        let est = compute_all(&d, &make_folds(&d, 2, 4).unwrap(), &cfg).unwrap();
        let mut buf = Vec::new();
        write_estimates(&mut buf, &est).unwrap();
        let (_, rows) = read_estimates(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 3);
        let close = |a: f64, b: f64| (a - b).abs() <= 5e-9 * a.abs().max(1e-300);
        for (row, prov) in rows.iter().zip(&est.providers) {
            assert_eq!(row.provider, prov.label);
            assert_eq!(row.n, prov.n);
            for (p, v) in &prov.values {
                assert!(close(v.estimate, row.values[&p.to_string()]));
                assert!(close(v.se.unwrap(), row.values[&format!("{p}_se")]));
                assert!(close(v.ci.unwrap().0, row.values[&format!("{p}_ci_lo")]));
                assert!(close(v.ci.unwrap().1, row.values[&format!("{p}_ci_hi")]));
            }
        }
    }
}
