//! Forecast error metrics and the statistics used to compare trained models.

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::dataset::TIMESTAMP_FORMAT;
use crate::error::{Error, Result};
use crate::stats::student_t_two_sided_p;

pub const RANGE_EDGES_MW: [f64; 3] = [150.0, 300.0, 450.0];
pub const DEFAULT_BIN_WIDTH_PCT: f64 = 5.0;
pub const DEFAULT_ALPHA: f64 = 0.05;

fn check_pair(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::DimensionMismatch {
            op: "prediction pairs",
            expected: actual.len(),
            got: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::Domain("no prediction pairs".into()));
    }
    Ok(())
}

fn check_positive(actual: &[f64]) -> Result<()> {
    match actual.iter().position(|&y| !(y > 0.0)) {
        Some(i) => Err(Error::Domain(format!(
            "actual demand must be positive for percentage errors, got {} at index {i}",
            actual[i]
        ))),
        None => Ok(()),
    }
}

/// Mean absolute percentage error, in percent.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    check_positive(actual)?;
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p).abs() / y)
        .sum();
    Ok(sum / actual.len() as f64 * 100.0)
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    let ss: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    Ok((ss / actual.len() as f64).sqrt())
}

/// Maximum absolute deviation.
pub fn mad(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    Ok(actual
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p).abs())
        .fold(0.0, f64::max))
}

/// Hourly actual/predicted demand in MW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionPairs {
    pub timestamps: Vec<NaiveDateTime>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
}

impl PredictionPairs {
    pub fn new(timestamps: Vec<NaiveDateTime>, actual: Vec<f64>, predicted: Vec<f64>) -> Result<Self> {
        check_pair(&actual, &predicted)?;
        if timestamps.len() != actual.len() {
            return Err(Error::DimensionMismatch {
                op: "prediction timestamps",
                expected: actual.len(),
                got: timestamps.len(),
            });
        }
        Ok(Self {
            timestamps,
            actual,
            predicted,
        })
    }

    pub fn len(&self) -> usize {
        self.actual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actual.is_empty()
    }

    pub fn mape(&self) -> Result<f64> {
        mape(&self.actual, &self.predicted)
    }

    pub fn rmse(&self) -> Result<f64> {
        rmse(&self.actual, &self.predicted)
    }

    pub fn mad(&self) -> Result<f64> {
        mad(&self.actual, &self.predicted)
    }

    pub fn metrics(&self) -> Result<Metrics> {
        Ok(Metrics {
            count: self.len(),
            mape: self.mape()?,
            rmse: self.rmse()?,
            mad: self.mad()?,
        })
    }

    fn subset(&self, keep: impl Fn(usize) -> bool) -> Option<Self> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        if idx.is_empty() {
            return None;
        }
        Some(Self {
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            actual: idx.iter().map(|&i| self.actual[i]).collect(),
            predicted: idx.iter().map(|&i| self.predicted[i]).collect(),
        })
    }

    fn by_day(&self) -> BTreeMap<NaiveDate, Vec<usize>> {
        let mut days: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
        for (i, t) in self.timestamps.iter().enumerate() {
            days.entry(t.date()).or_default().push(i);
        }
        days
    }

    /// Pairs falling on days that have all 24 hourly predictions.
    pub fn complete_days(&self) -> Option<Self> {
        let days = self.by_day();
        self.subset(|i| days[&self.timestamps[i].date()].len() == 24)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub count: usize,
    /// Percent.
    pub mape: f64,
    pub rmse: f64,
    pub mad: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyMape {
    pub date: NaiveDate,
    pub mape: f64,
}

/// Daily MAPE; every day present must have exactly 24 predictions.
pub fn dmape(pairs: &PredictionPairs) -> Result<Vec<DailyMape>> {
    check_positive(&pairs.actual)?;
    pairs
        .by_day()
        .into_iter()
        .map(|(date, idx)| {
            if idx.len() != 24 {
                return Err(Error::PartialDay(date, idx.len()));
            }
            let sum: f64 = idx
                .iter()
                .map(|&i| (pairs.actual[i] - pairs.predicted[i]).abs() / pairs.actual[i])
                .sum();
            Ok(DailyMape {
                date,
                mape: sum / 24.0 * 100.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandRange {
    pub lower_mw: f64,
    /// `None` for the open-ended top range.
    pub upper_mw: Option<f64>,
    pub count: usize,
    /// Absent when no actual demand falls in the range.
    pub metrics: Option<Metrics>,
}

impl DemandRange {
    pub fn label(&self) -> String {
        match self.upper_mw {
            Some(u) => format!("{}-{} MW", self.lower_mw, u),
            None => format!(">{} MW", self.lower_mw),
        }
    }

    pub fn contains(&self, mw: f64) -> bool {
        mw >= self.lower_mw && self.upper_mw.is_none_or(|u| mw < u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeBreakdown {
    pub ranges: Vec<DemandRange>,
}

/// Index of the demand range containing `mw`; edges belong to the upper range.
pub fn range_index(mw: f64) -> usize {
    RANGE_EDGES_MW.iter().take_while(|&&e| mw >= e).count()
}

/// Metrics bucketed by actual demand into `[0,150)`, `[150,300)`, `[300,450)`, `[450,inf)`.
pub fn range_breakdown(pairs: &PredictionPairs) -> Result<RangeBreakdown> {
    check_pair(&pairs.actual, &pairs.predicted)?;
    let mut lowers = vec![0.0];
    lowers.extend(RANGE_EDGES_MW);
    let ranges = lowers
        .iter()
        .enumerate()
        .map(|(k, &lower_mw)| {
            let sub = pairs.subset(|i| range_index(pairs.actual[i]) == k);
            Ok(DemandRange {
                lower_mw,
                upper_mw: RANGE_EDGES_MW.get(k).copied(),
                count: sub.as_ref().map_or(0, PredictionPairs::len),
                metrics: sub.map(|s| s.metrics()).transpose()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(RangeBreakdown { ranges })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive lower edge, percent.
    pub lower_pct: f64,
    /// Exclusive upper edge, percent.
    pub upper_pct: f64,
    pub count: usize,
    pub fraction: f64,
}

/// Signed percentage error `(predicted - actual) / actual * 100`; negative
/// values are under-estimates.
pub fn signed_pct_errors(pairs: &PredictionPairs) -> Result<Vec<f64>> {
    check_positive(&pairs.actual)?;
    Ok(pairs
        .actual
        .iter()
        .zip(&pairs.predicted)
        .map(|(y, p)| (p - y) / y * 100.0)
        .collect())
}

/// Histogram of signed percentage errors in bins `[k*w, (k+1)*w)`; only
/// occupied bins are listed, in ascending order.
pub fn error_histogram(pairs: &PredictionPairs, bin_width: f64) -> Result<Vec<HistogramBin>> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(Error::Domain(format!("bin width must be positive, got {bin_width}")));
    }
    check_pair(&pairs.actual, &pairs.predicted)?;
    let errors = signed_pct_errors(pairs)?;
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for e in &errors {
        *counts.entry((e / bin_width).floor() as i64).or_default() += 1;
    }
    let n = errors.len() as f64;
    Ok(counts
        .into_iter()
        .map(|(k, count)| HistogramBin {
            lower_pct: k as f64 * bin_width,
            upper_pct: (k + 1) as f64 * bin_width,
            count,
            fraction: count as f64 / n,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub iqr: f64,
    pub midrange: f64,
}

/// Quantile of sorted data at position `(n - 1) * q`, linearly interpolated.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() {
        return Err(Error::Domain("boxplot of an empty sample".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("boxplot sample contains NaN".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0];
    let max = sorted[sorted.len() - 1];
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(BoxplotStats {
        min,
        q1,
        median: quantile_sorted(&sorted, 0.5),
        q3,
        max,
        iqr: q3 - q1,
        midrange: (min + max) / 2.0,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TTestKind {
    /// Pooled-variance Student's t-test.
    #[default]
    Student,
    /// Unequal-variance (Welch) t-test.
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub significant: bool,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sample, two-tailed pooled-variance Student's t-test.
pub fn t_test(a: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult> {
    t_test_with(a, b, alpha, TTestKind::Student)
}

pub fn t_test_with(a: &[f64], b: &[f64], alpha: f64, kind: TTestKind) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::DegenerateSamples(format!(
            "each sample needs at least 2 values, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let (se, df) = match kind {
        TTestKind::Student => {
            let pooled = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0);
            if !(pooled > 0.0) {
                return Err(Error::DegenerateSamples("pooled variance is zero".into()));
            }
            ((pooled * (1.0 / n1 + 1.0 / n2)).sqrt(), n1 + n2 - 2.0)
        }
        TTestKind::Welch => {
            let (s1, s2) = (v1 / n1, v2 / n2);
            if !(s1 + s2 > 0.0) {
                return Err(Error::DegenerateSamples("both samples are constant".into()));
            }
            let df = (s1 + s2).powi(2)
                / (s1 * s1 / (n1 - 1.0) + s2 * s2 / (n2 - 1.0));
            ((s1 + s2).sqrt(), df)
        }
    };
    let t = (m1 - m2) / se;
    let p = student_t_two_sided_p(t, df);
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: p,
        alpha,
        significant: p < alpha,
    })
}

/// Everything computed from one prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub ranges: RangeBreakdown,
    pub histogram_bin_width_pct: f64,
    pub histogram: Vec<HistogramBin>,
    /// Daily MAPE over days with all 24 hours predicted.
    pub daily_mape: Vec<DailyMape>,
    pub daily_mape_boxplot: Option<BoxplotStats>,
    /// Days skipped by the daily breakdown because hours were missing.
    pub partial_days: Vec<NaiveDate>,
}

pub fn evaluate(pairs: &PredictionPairs, bin_width: f64) -> Result<EvalReport> {
    let daily_mape = match pairs.complete_days() {
        Some(full) => dmape(&full)?,
        None => Vec::new(),
    };
    let partial_days = pairs
        .by_day()
        .into_iter()
        .filter(|(_, idx)| idx.len() != 24)
        .map(|(d, _)| d)
        .collect();
    let daily_values: Vec<f64> = daily_mape.iter().map(|d| d.mape).collect();
    Ok(EvalReport {
        metrics: pairs.metrics()?,
        ranges: range_breakdown(pairs)?,
        histogram_bin_width_pct: bin_width,
        histogram: error_histogram(pairs, bin_width)?,
        daily_mape_boxplot: if daily_values.is_empty() {
            None
        } else {
            Some(boxplot_stats(&daily_values)?)
        },
        daily_mape,
        partial_days,
    })
}

impl EvalReport {
    /// Writes `report.json`, `ranges.csv`, `histogram.csv` and `daily_mape.csv` into `dir`.
    pub fn write_outputs(&self, dir: &std::path::Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join("report.json"), json + "\n")?;
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());

        let mut w = csv::Writer::from_path(dir.join("ranges.csv")).map_err(csv_err)?;
        w.write_record(["lower_mw", "upper_mw", "count", "mape", "rmse", "mad"])
            .map_err(csv_err)?;
        for r in &self.ranges.ranges {
            w.write_record([
                r.lower_mw.to_string(),
                opt(r.upper_mw),
                r.count.to_string(),
                opt(r.metrics.map(|m| m.mape)),
                opt(r.metrics.map(|m| m.rmse)),
                opt(r.metrics.map(|m| m.mad)),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("histogram.csv")).map_err(csv_err)?;
        w.write_record(["lower_pct", "upper_pct", "count", "fraction"])
            .map_err(csv_err)?;
        for b in &self.histogram {
            w.write_record([
                b.lower_pct.to_string(),
                b.upper_pct.to_string(),
                b.count.to_string(),
                b.fraction.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("daily_mape.csv")).map_err(csv_err)?;
        w.write_record(["date", "mape"]).map_err(csv_err)?;
        for d in &self.daily_mape {
            w.write_record([d.date.to_string(), d.mape.to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const PREDICTION_HEADER: [&str; 3] = ["timestamp", "actual_mw", "predicted_mw"];

pub fn write_predictions<W: std::io::Write>(pairs: &PredictionPairs, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(PREDICTION_HEADER).map_err(csv_err)?;
    for ((t, a), p) in pairs.timestamps.iter().zip(&pairs.actual).zip(&pairs.predicted) {
        w.write_record([
            t.format(TIMESTAMP_FORMAT).to_string(),
            a.to_string(),
            p.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: std::io::Read>(reader: R) -> Result<PredictionPairs> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    let (mut timestamps, mut actual, mut predicted) = (Vec::new(), Vec::new(), Vec::new());
    let mut saw_header = false;
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if !saw_header {
            if row.iter().ne(PREDICTION_HEADER.iter().copied()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected header `{}`", PREDICTION_HEADER.join(",")),
                });
            }
            saw_header = true;
            continue;
        }
        if row.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 fields, found {}", row.len()),
            });
        }
        timestamps.push(
            NaiveDateTime::parse_from_str(&row[0], TIMESTAMP_FORMAT).map_err(|e| Error::Parse {
                line,
                msg: format!("bad timestamp `{}`: {e}", &row[0]),
            })?,
        );
        for (i, out) in [(1, &mut actual), (2, &mut predicted)] {
            let v: f64 = row[i].parse().map_err(|e| Error::Parse {
                line,
                msg: format!("bad {} `{}`: {e}", PREDICTION_HEADER[i], &row[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("{} is not finite", PREDICTION_HEADER[i]),
                });
            }
            out.push(v);
        }
    }
    if !saw_header {
        return Err(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        });
    }
    PredictionPairs::new(timestamps, actual, predicted)
}

pub fn load_predictions(path: impl AsRef<std::path::Path>) -> Result<PredictionPairs> {
    read_predictions(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration;
    use proptest::prelude::*;

    fn hours(n: usize) -> Vec<NaiveDateTime> {
        let t0 = NaiveDate::from_ymd_opt(2011, 1, 3).unwrap().and_hms_opt(0, 0, 0).unwrap();
        (0..n).map(|i| t0 + Duration::hours(i as i64)).collect()
    }

    fn pairs(actual: Vec<f64>, predicted: Vec<f64>) -> PredictionPairs {
        PredictionPairs::new(hours(actual.len()), actual, predicted).unwrap()
    }

    #[test]
    fn mape_cases() {
        assert_eq!(mape(&[100.0, 200.0], &[100.0, 200.0]).unwrap(), 0.0);
        assert!((mape(&[100.0, 200.0], &[90.0, 220.0]).unwrap() - 10.0).abs() < 1e-12);
        assert!(matches!(mape(&[0.0, 1.0], &[1.0, 1.0]), Err(Error::Domain(_))));
        assert!(mape(&[], &[]).is_err());
        assert!(mape(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rmse_and_mad_cases() {
        assert_eq!(rmse(&[5.0, 6.0], &[5.0, 6.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(mad(&[10.0, 10.0, 10.0], &[13.0, 3.0, 12.0]).unwrap(), 7.0);
        assert_eq!(mad(&[4.0], &[4.0]).unwrap(), 0.0);
    }

    #[test]
    fn dmape_cases() {
        let a = vec![100.0; 24];
        assert_eq!(dmape(&pairs(a.clone(), a.clone())).unwrap()[0].mape, 0.0);
        let p: Vec<f64> = (0..24).map(|i| if i % 2 == 0 { 105.0 } else { 95.0 }).collect();
        let d = dmape(&pairs(a, p)).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].date, NaiveDate::from_ymd_opt(2011, 1, 3).unwrap());
        assert!((d[0].mape - 5.0).abs() < 1e-12);

        let short = pairs(vec![100.0; 30], vec![100.0; 30]);
        match dmape(&short) {
            Err(Error::PartialDay(date, 6)) => {
                assert_eq!(date, NaiveDate::from_ymd_opt(2011, 1, 4).unwrap())
            }
            other => panic!("expected partial day, got {other:?}"),
        }
    }

    #[test]
    fn range_boundaries() {
        let b = range_breakdown(&pairs(vec![100.0; 5], vec![90.0; 5])).unwrap();
        assert_eq!(b.ranges[0].count, 5);
        assert!(b.ranges[1..].iter().all(|r| r.count == 0 && r.metrics.is_none()));
        let b = range_breakdown(&pairs(vec![150.0], vec![150.0])).unwrap();
        assert_eq!(b.ranges[1].count, 1);
        assert_eq!(range_index(149.999), 0);
        assert_eq!(range_index(450.0), 3);
        assert_eq!(b.ranges[3].label(), ">450 MW");
        assert!(b.ranges[0].contains(0.0) && !b.ranges[0].contains(150.0));
    }

    #[test]
    fn histogram_cases() {
        let h = error_histogram(&pairs(vec![100.0; 3], vec![100.0; 3]), 5.0).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!((h[0].lower_pct, h[0].upper_pct, h[0].fraction), (0.0, 5.0, 1.0));

        let h = error_histogram(&pairs(vec![100.0, 100.0], vec![104.0, 96.0]), 5.0).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!((h[0].lower_pct, h[0].fraction), (-5.0, 0.5));
        assert_eq!((h[1].lower_pct, h[1].fraction), (0.0, 0.5));
        assert!(error_histogram(&pairs(vec![1.0], vec![1.0]), 0.0).is_err());
    }

    #[test]
    fn boxplot_cases() {
        let b = boxplot_stats(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((b.min, b.q1, b.median, b.q3, b.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert_eq!((b.iqr, b.midrange), (2.0, 3.0));
        let s = boxplot_stats(&[7.5]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max, s.iqr), (7.5, 7.5, 7.5, 7.5, 7.5, 0.0));
        assert!(boxplot_stats(&[]).is_err());
    }

    #[test]
    fn t_test_cases() {
        let r = t_test(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0], 0.05).unwrap();
        assert_eq!(r.t_statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);

        // Precomputed with scipy.stats.ttest_ind: p = 0.34659350708733416.
        let r = t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0], 0.05).unwrap();
        assert!((r.t_statistic + 1.0).abs() < 1e-12);
        assert_eq!(r.degrees_of_freedom, 8.0);
        assert!((r.p_value - 0.346_593_507_087_334_16).abs() < 1e-9);

        let a = [0.01, -0.02, 0.0, 0.015, -0.01];
        let b = [10.0, 10.02, 9.99, 10.01, 9.98];
        let r = t_test(&a, &b, 0.05).unwrap();
        assert!(r.p_value < 1e-6 && r.significant);

        assert!(matches!(t_test(&[1.0], &[1.0, 2.0], 0.05), Err(Error::DegenerateSamples(_))));
        assert!(matches!(t_test(&[1.0, 1.0], &[2.0, 2.0], 0.05), Err(Error::DegenerateSamples(_))));
    }

    #[test]
    fn welch_equals_student_for_equal_sizes_and_variances() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        let s = t_test_with(&a, &b, 0.05, TTestKind::Student).unwrap();
        let w = t_test_with(&a, &b, 0.05, TTestKind::Welch).unwrap();
        assert!((s.t_statistic - w.t_statistic).abs() < 1e-12);
        assert!((s.p_value - w.p_value).abs() < 1e-12);
    }

    #[test]
    fn evaluate_identity_is_zero() {
        let a: Vec<f64> = (0..48).map(|i| 100.0 + i as f64 * 10.0).collect();
        let r = evaluate(&pairs(a.clone(), a), DEFAULT_BIN_WIDTH_PCT).unwrap();
        assert_eq!(r.metrics.mape, 0.0);
        assert_eq!(r.daily_mape.len(), 2);
        assert!(r.partial_days.is_empty());
    }

    fn arb_pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        proptest::collection::vec((1.0f64..600.0, -0.3f64..0.3), 1..60)
            .prop_map(|v| v.into_iter().map(|(a, e)| (a, a * (1.0 + e))).unzip())
    }

    proptest! {
        #[test]
        fn t_test_is_antisymmetric(
            a in proptest::collection::vec(-5.0f64..5.0, 2..12),
            b in proptest::collection::vec(-5.0f64..5.0, 2..12),
        ) {
            let ab = t_test(&a, &b, 0.05);
            let ba = t_test(&b, &a, 0.05);
            if let (Ok(ab), Ok(ba)) = (ab, ba) {
                prop_assert_eq!(ab.t_statistic, -ba.t_statistic);
                prop_assert_eq!(ab.p_value, ba.p_value);
                prop_assert!((0.0..=1.0).contains(&ab.p_value));
            }
        }

        #[test]
        fn overall_mape_is_weighted_mean_of_ranges((a, p) in arb_pairs()) {
            let pr = pairs(a, p);
            let total = pr.mape().unwrap();
            let b = range_breakdown(&pr).unwrap();
            let counts: usize = b.ranges.iter().map(|r| r.count).sum();
            prop_assert_eq!(counts, pr.len());
            let weighted: f64 = b.ranges.iter()
                .filter_map(|r| r.metrics.map(|m| m.mape * m.count as f64))
                .sum::<f64>() / pr.len() as f64;
            prop_assert!((weighted - total).abs() < 1e-10);
            let max_mad = b.ranges.iter().filter_map(|r| r.metrics.map(|m| m.mad)).fold(0.0, f64::max);
            prop_assert_eq!(max_mad, pr.mad().unwrap());
        }

        #[test]
        fn scale_equivariance((a, p) in arb_pairs(), c in 0.1f64..10.0) {
            let base = pairs(a.clone(), p.clone());
            let scaled = pairs(
                a.iter().map(|x| x * c).collect(),
                p.iter().map(|x| x * c).collect(),
            );
            prop_assert!((base.mape().unwrap() - scaled.mape().unwrap()).abs() < 1e-10);
            prop_assert!((base.rmse().unwrap() * c - scaled.rmse().unwrap()).abs() < 1e-12 * (1.0 + scaled.rmse().unwrap()));
            prop_assert!((base.mad().unwrap() * c - scaled.mad().unwrap()).abs() < 1e-12 * (1.0 + scaled.mad().unwrap()));
        }

        #[test]
        fn boxplot_ordering(v in proptest::collection::vec(-1e3f64..1e3, 1..50)) {
            let b = boxplot_stats(&v).unwrap();
            prop_assert!(b.min <= b.q1 && b.q1 <= b.median && b.median <= b.q3 && b.q3 <= b.max);
            prop_assert_eq!(b.iqr, b.q3 - b.q1);
        }
    }

    #[test]
    fn prediction_csv_round_trip() {
        let p = pairs(vec![100.0, 212.5, 0.1], vec![101.25, 200.0, 1e-3]);
        let mut buf = Vec::new();
        write_predictions(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("timestamp,actual_mw,predicted_mw\n2011-01-03T00:00,100,101.25\n"));
        assert_eq!(read_predictions(text.as_bytes()).unwrap(), p);
        assert!(read_predictions("a,b,c\n".as_bytes()).is_err());
        let bad = "timestamp,actual_mw,predicted_mw\n2011-01-03T00:00,1,x\n";
        assert!(matches!(read_predictions(bad.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }
}
