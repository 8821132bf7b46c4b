//! Experiment plans and the three studies: window/depth sweep, training-data
//! amount, and weather-factor comparison.
//!
//! Every (span, window, depth, variant, trial) cell trains an independent
//! model from a seed derived from the master seed, so cells can be re-run in
//! isolation and run concurrently. Reports are assembled in cell-key order and
//! contain no timing information, which makes them bitwise reproducible.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    build_supervectors, compute_stats, filter_working_days, load_csv, load_holidays, Channel,
    DatasetVariant, SuperVectorSet, TimeSeriesTable, ALLOWED_WINDOWS,
};
use crate::enn::{EnnModel, TrainConfig, DEFAULT_HIDDEN_SIZE};
use crate::error::{Error, Result};
use crate::eval::{
    self, boxplot_stats, error_histogram, range_breakdown, t_test_with, BoxplotStats,
    HistogramBin, Metrics, PredictionPairs, TTestKind, TTestResult,
};
use crate::synth::{self, SynthConfig};

pub const FACTOR_STUDY_WINDOW: usize = 4;
pub const FACTOR_STUDY_LAYERS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthConfig),
    Csv(PathBuf),
}

impl DataSource {
    pub fn load(&self) -> Result<TimeSeriesTable> {
        match self {
            DataSource::Synth(cfg) => synth::generate(cfg),
            DataSource::Csv(path) => load_csv(path),
        }
    }
}

/// Inclusive calendar-date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        Self { start, end }
    }

    /// Whole calendar years `first..=last`.
    pub fn years(first: i32, last: i32) -> Self {
        Self {
            start: NaiveDate::from_ymd_opt(first, 1, 1).expect("valid year"),
            end: NaiveDate::from_ymd_opt(last, 12, 31).expect("valid year"),
        }
    }

    pub fn select(&self, table: &TimeSeriesTable) -> TimeSeriesTable {
        table.date_range(self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub data: DataSource,
    /// Non-working dates removed in addition to weekends.
    pub holidays: Vec<NaiveDate>,
    pub holidays_file: Option<PathBuf>,
    pub train: DateRange,
    pub validation: DateRange,
    /// Training ranges for the data-amount study; empty means `[train]`.
    pub train_spans: Vec<DateRange>,
    pub windows: Vec<usize>,
    pub hidden_layers: Vec<usize>,
    pub variants: Vec<DatasetVariant>,
    pub hidden_size: usize,
    pub trials: usize,
    pub master_seed: u64,
    pub train_config: TrainConfig,
    /// Hours between training super-vectors; `None` means half the window.
    pub train_stride: Option<usize>,
    pub eval_stride: usize,
    pub alpha: f64,
    pub t_test: TTestKind,
    pub histogram_bin_width: f64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            data: DataSource::Synth(SynthConfig::default()),
            holidays: Vec::new(),
            holidays_file: None,
            train: DateRange::years(2008, 2010),
            validation: DateRange::years(2011, 2011),
            train_spans: Vec::new(),
            windows: ALLOWED_WINDOWS.to_vec(),
            hidden_layers: vec![4, 8],
            variants: DatasetVariant::ALL.to_vec(),
            hidden_size: DEFAULT_HIDDEN_SIZE,
            trials: 10,
            master_seed: 1,
            train_config: TrainConfig::default(),
            train_stride: None,
            eval_stride: 1,
            alpha: eval::DEFAULT_ALPHA,
            t_test: TTestKind::Student,
            histogram_bin_width: eval::DEFAULT_BIN_WIDTH_PCT,
        }
    }
}

impl ExperimentPlan {
    pub fn spans(&self) -> Vec<DateRange> {
        if self.train_spans.is_empty() {
            vec![self.train]
        } else {
            self.train_spans.clone()
        }
    }

    pub fn stride_for(&self, window: usize) -> usize {
        self.train_stride.unwrap_or((window / 2).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        for span in self.spans() {
            if span.start > span.end {
                return bad(format!("training range {} .. {} is reversed", span.start, span.end));
            }
            if span.end >= self.validation.start {
                return bad(format!(
                    "training range ending {} must precede validation starting {}",
                    span.end, self.validation.start
                ));
            }
        }
        if self.validation.start > self.validation.end {
            return bad("validation range is reversed".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.windows.is_empty() || self.hidden_layers.is_empty() || self.variants.is_empty() {
            return bad("windows, hidden_layers and variants must be non-empty".into());
        }
        if let Some(w) = self.windows.iter().find(|w| !ALLOWED_WINDOWS.contains(w)) {
            return bad(format!("window {w} is not one of {ALLOWED_WINDOWS:?}"));
        }
        if self.hidden_layers.contains(&0) || self.hidden_size == 0 {
            return bad("hidden layer count and size must be at least 1".into());
        }
        if self.train_stride == Some(0) || self.eval_stride == 0 {
            return bad("strides must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.histogram_bin_width > 0.0) {
            return bad("histogram_bin_width must be positive".into());
        }
        self.train_config.validate()
    }

    fn holidays_all(&self) -> Result<Vec<NaiveDate>> {
        let mut out = self.holidays.clone();
        if let Some(path) = &self.holidays_file {
            out.extend(load_holidays(path)?);
        }
        Ok(out)
    }
}

/// How trials are scheduled. Results are identical either way.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled.
    #[default]
    Parallel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    /// Index into the plan's training spans.
    pub span: usize,
    pub window: usize,
    pub hidden_layers: usize,
    pub variant: DatasetVariant,
}

impl CellKey {
    pub fn label(&self) -> String {
        format!(
            "span{}-w{}-l{}-{}",
            self.span, self.window, self.hidden_layers, self.variant
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub metrics: Metrics,
    pub ranges: Vec<Option<Metrics>>,
    pub histogram: Vec<HistogramBin>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialOutcome {
    Ok(TrialResult),
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub outcome: TrialOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub successes: usize,
    pub failures: usize,
    /// Percent.
    pub mape_mean: f64,
    /// Unbiased variance of per-trial MAPE on the fraction scale.
    pub mape_variance: f64,
    pub rmse_mean: f64,
    pub rmse_variance: f64,
    pub mad_mean: f64,
    /// Boxplot of per-trial MAPE, percent.
    pub mape_boxplot: BoxplotStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub key: CellKey,
    pub train_range: DateRange,
    pub input_size: usize,
    pub train_samples: usize,
    pub validation_samples: usize,
    pub trials: Vec<TrialRecord>,
    pub summary: Option<CellSummary>,
}

impl CellReport {
    pub fn mapes(&self) -> Vec<f64> {
        self.trials
            .iter()
            .filter_map(|t| match &t.outcome {
                TrialOutcome::Ok(r) => Some(r.metrics.mape),
                TrialOutcome::Failed { .. } => None,
            })
            .collect()
    }

    pub fn failures(&self) -> impl Iterator<Item = (&TrialRecord, &str)> {
        self.trials.iter().filter_map(|t| match &t.outcome {
            TrialOutcome::Failed { error } => Some((t, error.as_str())),
            TrialOutcome::Ok(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: CellKey,
    pub b: CellKey,
    pub result: Option<TTestResult>,
    pub note: Option<String>,
}

/// 24-hour persistence forecast scored on a cell's validation targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub window: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeRow {
    pub lower_mw: f64,
    pub upper_mw: Option<f64>,
    /// Mean over successful trials of the per-range metrics, absent when the
    /// range has no validation hours.
    pub mape: Option<f64>,
    pub rmse: Option<f64>,
    pub mad: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRow {
    pub variant: DatasetVariant,
    pub mape: f64,
    pub rmse: f64,
    pub mad: f64,
    pub ranges: Vec<RangeRow>,
    /// Signed-error histogram pooled over all successful trials.
    pub histogram: Vec<HistogramBin>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Sweep,
    DataAmount,
    Factor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: StudyKind,
    /// Resolved plan; re-running it reproduces this report.
    pub plan: ExperimentPlan,
    pub cells: Vec<CellReport>,
    pub t_tests: Vec<PairwiseTest>,
    pub persistence_baseline: Vec<BaselineReport>,
    pub factor_table: Vec<FactorRow>,
}

impl StudyReport {
    pub fn cell(&self, key: &CellKey) -> Option<&CellReport> {
        self.cells.iter().find(|c| &c.key == key)
    }

    pub fn t_test_between(&self, a: &CellKey, b: &CellKey) -> Option<&PairwiseTest> {
        self.t_tests
            .iter()
            .find(|t| (&t.a == a && &t.b == b) || (&t.a == b && &t.b == a))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn write_table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

impl StudyReport {
    /// Writes `report.json` plus flat CSV tables into `dir`, returning the paths written.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let json = dir.join("report.json");
        std::fs::write(&json, self.to_json()? + "\n")?;
        written.push(json);

        let path = dir.join("cells.csv");
        let rows = self
            .cells
            .iter()
            .map(|c| {
                let s = c.summary.as_ref();
                vec![
                    c.key.span.to_string(),
                    c.train_range.start.to_string(),
                    c.train_range.end.to_string(),
                    c.key.window.to_string(),
                    c.key.hidden_layers.to_string(),
                    c.key.variant.to_string(),
                    c.input_size.to_string(),
                    s.map_or(0, |s| s.successes).to_string(),
                    c.failures().count().to_string(),
                    fmt_opt(s.map(|s| s.mape_mean)),
                    fmt_opt(s.map(|s| s.mape_variance)),
                    fmt_opt(s.map(|s| s.rmse_mean)),
                    fmt_opt(s.map(|s| s.mad_mean)),
                    fmt_opt(s.map(|s| s.mape_boxplot.median)),
                    fmt_opt(s.map(|s| s.mape_boxplot.iqr)),
                    fmt_opt(s.map(|s| s.mape_boxplot.midrange)),
                ]
            })
            .collect();
        write_table(
            &path,
            &[
                "span", "train_start", "train_end", "window", "hidden_layers", "variant",
                "input_size", "successes", "failures", "mape_mean", "mape_variance",
                "rmse_mean", "mad_mean", "mape_median", "mape_iqr", "mape_midrange",
            ],
            rows,
        )?;
        written.push(path);

        let path = dir.join("trials.csv");
        let mut rows = Vec::new();
        for c in &self.cells {
            for t in &c.trials {
                let (mape, rmse, mad, epochs, error) = match &t.outcome {
                    TrialOutcome::Ok(r) => (
                        r.metrics.mape.to_string(),
                        r.metrics.rmse.to_string(),
                        r.metrics.mad.to_string(),
                        r.epochs_run.to_string(),
                        String::new(),
                    ),
                    TrialOutcome::Failed { error } => {
                        (String::new(), String::new(), String::new(), String::new(), error.clone())
                    }
                };
                rows.push(vec![
                    c.key.label(),
                    t.trial.to_string(),
                    t.seed.to_string(),
                    mape,
                    rmse,
                    mad,
                    epochs,
                    error,
                ]);
            }
        }
        write_table(
            &path,
            &["cell", "trial", "seed", "mape", "rmse", "mad", "epochs", "error"],
            rows,
        )?;
        written.push(path);

        let path = dir.join("t_tests.csv");
        let rows = self
            .t_tests
            .iter()
            .map(|t| {
                let r = t.result.as_ref();
                vec![
                    t.a.label(),
                    t.b.label(),
                    fmt_opt(r.map(|r| r.t_statistic)),
                    fmt_opt(r.map(|r| r.degrees_of_freedom)),
                    fmt_opt(r.map(|r| r.p_value)),
                    r.map_or(String::new(), |r| r.significant.to_string()),
                    t.note.clone().unwrap_or_default(),
                ]
            })
            .collect();
        write_table(
            &path,
            &["a", "b", "t", "df", "p_value", "significant", "note"],
            rows,
        )?;
        written.push(path);

        let path = dir.join("baseline.csv");
        let rows = self
            .persistence_baseline
            .iter()
            .map(|b| {
                vec![
                    b.window.to_string(),
                    b.metrics.mape.to_string(),
                    b.metrics.rmse.to_string(),
                    b.metrics.mad.to_string(),
                ]
            })
            .collect();
        write_table(&path, &["window", "mape", "rmse", "mad"], rows)?;
        written.push(path);

        if !self.factor_table.is_empty() {
            let path = dir.join("factor_overall.csv");
            let rows = self
                .factor_table
                .iter()
                .map(|r| {
                    vec![
                        r.variant.to_string(),
                        r.mape.to_string(),
                        r.rmse.to_string(),
                        r.mad.to_string(),
                    ]
                })
                .collect();
            write_table(&path, &["variant", "mape", "rmse", "mad"], rows)?;
            written.push(path);

            let path = dir.join("factor_ranges.csv");
            let mut rows = Vec::new();
            for r in &self.factor_table {
                for g in &r.ranges {
                    rows.push(vec![
                        r.variant.to_string(),
                        g.lower_mw.to_string(),
                        fmt_opt(g.upper_mw),
                        g.count.to_string(),
                        fmt_opt(g.mape),
                        fmt_opt(g.rmse),
                        fmt_opt(g.mad),
                    ]);
                }
            }
            write_table(
                &path,
                &["variant", "lower_mw", "upper_mw", "count", "mape", "rmse", "mad"],
                rows,
            )?;
            written.push(path);

            let path = dir.join("factor_histogram.csv");
            let mut rows = Vec::new();
            for r in &self.factor_table {
                for b in &r.histogram {
                    rows.push(vec![
                        r.variant.to_string(),
                        b.lower_pct.to_string(),
                        b.upper_pct.to_string(),
                        b.count.to_string(),
                        b.fraction.to_string(),
                    ]);
                }
            }
            write_table(
                &path,
                &["variant", "lower_pct", "upper_pct", "count", "fraction"],
                rows,
            )?;
            written.push(path);
        }
        Ok(written)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one trial, a pure function of the master seed and the cell.
pub fn derive_seed(master: u64, key: &CellKey, trial: usize) -> u64 {
    let variant = DatasetVariant::ALL
        .iter()
        .position(|v| *v == key.variant)
        .expect("known variant") as u64;
    [key.span as u64, key.window as u64, key.hidden_layers as u64, variant, trial as u64]
        .into_iter()
        .fold(splitmix64(master), |h, x| splitmix64(h ^ x))
}

struct Prepared {
    key: CellKey,
    train_range: DateRange,
    train: SuperVectorSet,
    validation: SuperVectorSet,
}

fn map_jobs<T, R, F>(items: &[T], exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        _ => items.iter().map(f).collect(),
    }
}

fn run_trial(
    prep: &Prepared,
    plan: &ExperimentPlan,
    trial: usize,
) -> TrialRecord {
    let seed = derive_seed(plan.master_seed, &prep.key, trial);
    let outcome = match train_and_score(prep, plan, seed) {
        Ok(r) => TrialOutcome::Ok(r),
        Err(e) => TrialOutcome::Failed {
            error: e.to_string(),
        },
    };
    TrialRecord {
        trial,
        seed,
        outcome,
    }
}

fn train_and_score(prep: &Prepared, plan: &ExperimentPlan, seed: u64) -> Result<TrialResult> {
    let mut model = EnnModel::init(
        prep.key.hidden_layers,
        prep.train.input_size(),
        plan.hidden_size,
        seed,
    )?;
    let cfg = TrainConfig {
        seed,
        ..plan.train_config.clone()
    };
    let trace = model.fit(&prep.train, Some(&prep.validation), &cfg)?;
    let predicted: Vec<f64> = model
        .predict_series(&prep.validation)?
        .into_iter()
        .map(|(_, y)| y)
        .collect();
    if let Some(i) = predicted.iter().position(|y| !y.is_finite()) {
        return Err(Error::Divergence { sample: i });
    }
    let pairs = PredictionPairs::new(
        prep.validation.target_hours.clone(),
        prep.validation.target_mw.clone(),
        predicted,
    )?;
    Ok(TrialResult {
        metrics: pairs.metrics()?,
        ranges: range_breakdown(&pairs)?
            .ranges
            .into_iter()
            .map(|r| r.metrics)
            .collect(),
        histogram: error_histogram(&pairs, plan.histogram_bin_width)?,
        epochs_run: trace.final_epoch,
        best_epoch: trace.best_epoch,
        stopped_early: trace.stopped_early,
        final_train_loss: trace.losses.last().copied().unwrap_or(f64::NAN),
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn unbiased_variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

fn summarize(trials: &[TrialRecord]) -> Result<Option<CellSummary>> {
    let ok: Vec<&TrialResult> = trials
        .iter()
        .filter_map(|t| match &t.outcome {
            TrialOutcome::Ok(r) => Some(r),
            TrialOutcome::Failed { .. } => None,
        })
        .collect();
    if ok.is_empty() {
        return Ok(None);
    }
    let mape: Vec<f64> = ok.iter().map(|r| r.metrics.mape).collect();
    let mape_fraction: Vec<f64> = mape.iter().map(|m| m / 100.0).collect();
    let rmse: Vec<f64> = ok.iter().map(|r| r.metrics.rmse).collect();
    let mad: Vec<f64> = ok.iter().map(|r| r.metrics.mad).collect();
    Ok(Some(CellSummary {
        successes: ok.len(),
        failures: trials.len() - ok.len(),
        mape_mean: mean(&mape),
        mape_variance: unbiased_variance(&mape_fraction),
        rmse_mean: mean(&rmse),
        rmse_variance: unbiased_variance(&rmse),
        mad_mean: mean(&mad),
        mape_boxplot: boxplot_stats(&mape)?,
    }))
}

fn pairwise_tests(cells: &[CellReport], plan: &ExperimentPlan) -> Vec<PairwiseTest> {
    let mut out = Vec::new();
    for (i, a) in cells.iter().enumerate() {
        for b in &cells[i + 1..] {
            let (ma, mb) = (a.mapes(), b.mapes());
            let (result, note) = match t_test_with(&ma, &mb, plan.alpha, plan.t_test) {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            out.push(PairwiseTest {
                a: a.key,
                b: b.key,
                result,
                note,
            });
        }
    }
    out
}

/// Demand 24 hours earlier, looked up in the unfiltered source table.
pub fn persistence_baseline(source: &TimeSeriesTable, validation: &SuperVectorSet) -> Result<Metrics> {
    let lookup: HashMap<NaiveDateTime, f64> = source
        .records()
        .map(|r| (r.timestamp, r.demand_mw))
        .collect();
    let (mut hours, mut actual, mut predicted) = (Vec::new(), Vec::new(), Vec::new());
    for (t, &y) in validation.target_hours.iter().zip(&validation.target_mw) {
        if let Some(&prev) = lookup.get(&(*t - Duration::hours(24))) {
            hours.push(*t);
            actual.push(y);
            predicted.push(prev);
        }
    }
    if actual.is_empty() {
        return Err(Error::EmptyDataset("no hour has a 24-hour-old observation".into()));
    }
    PredictionPairs::new(hours, actual, predicted)?.metrics()
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

fn factor_rows(cells: &[CellReport], bin_width: f64) -> Vec<FactorRow> {
    let mut rows = Vec::new();
    for cell in cells {
        let ok: Vec<&TrialResult> = cell
            .trials
            .iter()
            .filter_map(|t| match &t.outcome {
                TrialOutcome::Ok(r) => Some(r),
                TrialOutcome::Failed { .. } => None,
            })
            .collect();
        if ok.is_empty() {
            continue;
        }
        let mut lowers = vec![0.0];
        lowers.extend(eval::RANGE_EDGES_MW);
        let ranges = lowers
            .iter()
            .enumerate()
            .map(|(k, &lower_mw)| RangeRow {
                lower_mw,
                upper_mw: eval::RANGE_EDGES_MW.get(k).copied(),
                mape: mean_opt(ok.iter().map(|r| r.ranges[k].map(|m| m.mape))),
                rmse: mean_opt(ok.iter().map(|r| r.ranges[k].map(|m| m.rmse))),
                mad: mean_opt(ok.iter().map(|r| r.ranges[k].map(|m| m.mad))),
                count: ok[0].ranges[k].map_or(0, |m| m.count),
            })
            .collect();
        let mut pooled: BTreeMap<i64, usize> = BTreeMap::new();
        for r in &ok {
            for bin in &r.histogram {
                *pooled
                    .entry((bin.lower_pct / bin_width).round() as i64)
                    .or_default() += bin.count;
            }
        }
        let total: usize = pooled.values().sum();
        let histogram = pooled
            .into_iter()
            .map(|(k, count)| HistogramBin {
                lower_pct: k as f64 * bin_width,
                upper_pct: (k + 1) as f64 * bin_width,
                count,
                fraction: count as f64 / total as f64,
            })
            .collect();
        rows.push(FactorRow {
            variant: cell.key.variant,
            mape: mean(&ok.iter().map(|r| r.metrics.mape).collect::<Vec<_>>()),
            rmse: mean(&ok.iter().map(|r| r.metrics.rmse).collect::<Vec<_>>()),
            mad: mean(&ok.iter().map(|r| r.metrics.mad).collect::<Vec<_>>()),
            ranges,
            histogram,
        });
    }
    rows
}

fn run_plan(plan: &ExperimentPlan, study: StudyKind, exec: Execution) -> Result<StudyReport> {
    plan.validate()?;
    let source = plan.data.load()?;
    let working = filter_working_days(&source, &plan.holidays_all()?);
    let validation_table = plan.validation.select(&working);

    let mut prepared = Vec::new();
    for (span_idx, span) in plan.spans().into_iter().enumerate() {
        let train_table = span.select(&working);
        // Statistics come from the training span only and are reused for validation.
        let stats = compute_stats(&train_table, &Channel::ALL)?;
        for &window in &plan.windows {
            for &variant in &plan.variants {
                let train =
                    build_supervectors(&train_table, variant, window, plan.stride_for(window), &stats)?;
                let validation =
                    build_supervectors(&validation_table, variant, window, plan.eval_stride, &stats)?;
                for &hidden_layers in &plan.hidden_layers {
                    prepared.push(Prepared {
                        key: CellKey {
                            span: span_idx,
                            window,
                            hidden_layers,
                            variant,
                        },
                        train_range: span,
                        train: train.clone(),
                        validation: validation.clone(),
                    });
                }
            }
        }
    }
    prepared.sort_by_key(|p| p.key);

    let jobs: Vec<(usize, usize)> = (0..prepared.len())
        .flat_map(|c| (0..plan.trials).map(move |t| (c, t)))
        .collect();
    let records = map_jobs(&jobs, exec, |&(c, t)| run_trial(&prepared[c], plan, t));

    let mut per_cell: Vec<Vec<TrialRecord>> = vec![Vec::new(); prepared.len()];
    for (&(c, _), rec) in jobs.iter().zip(records) {
        per_cell[c].push(rec);
    }
    let mut cells = Vec::with_capacity(prepared.len());
    for (prep, mut trials) in prepared.iter().zip(per_cell) {
        trials.sort_by_key(|t| t.trial);
        cells.push(CellReport {
            key: prep.key,
            train_range: prep.train_range,
            input_size: prep.train.input_size(),
            train_samples: prep.train.len(),
            validation_samples: prep.validation.len(),
            summary: summarize(&trials)?,
            trials,
        });
    }

    let mut persistence = Vec::new();
    for &window in &plan.windows {
        let prep = prepared
            .iter()
            .find(|p| p.key.window == window)
            .expect("every window has cells");
        persistence.push(BaselineReport {
            window,
            metrics: persistence_baseline(&source, &prep.validation)?,
        });
    }

    let t_tests = pairwise_tests(&cells, plan);
    let factor_table = if study == StudyKind::Factor {
        factor_rows(&cells, plan.histogram_bin_width)
    } else {
        Vec::new()
    };
    Ok(StudyReport {
        study,
        plan: plan.clone(),
        cells,
        t_tests,
        persistence_baseline: persistence,
        factor_table,
    })
}

/// Trains every (window, depth, variant, trial) combination of the plan.
pub fn run_sweep(plan: &ExperimentPlan, exec: Execution) -> Result<StudyReport> {
    let mut plan = plan.clone();
    plan.train_spans.clear();
    run_plan(&plan, StudyKind::Sweep, exec)
}

/// One model family per nested training span, all scored on the same validation range.
pub fn run_data_amount_study(plan: &ExperimentPlan, exec: Execution) -> Result<StudyReport> {
    let spans = plan.spans();
    let end = spans[0].end;
    if spans.iter().any(|s| s.end != end) {
        return Err(Error::Config("training spans must all end on the same date".into()));
    }
    for pair in spans.windows(2) {
        if pair[1].start > pair[0].start {
            return Err(Error::Config(
                "training spans must be nested, each at least as long as the previous".into(),
            ));
        }
    }
    let mut plan = plan.clone();
    if plan.train_spans.is_empty() {
        plan.train_spans = vec![plan.train];
    }
    plan.train = *plan.train_spans.last().expect("non-empty");
    run_plan(&plan, StudyKind::DataAmount, exec)
}

/// Compares the four dataset variants at window 4 with 8 hidden layers.
pub fn run_factor_study(plan: &ExperimentPlan, exec: Execution) -> Result<StudyReport> {
    let mut variants = plan.variants.clone();
    variants.sort();
    variants.dedup();
    if variants != DatasetVariant::ALL {
        return Err(Error::Config("the factor study needs all four variants A-D".into()));
    }
    let mut plan = plan.clone();
    plan.train_spans.clear();
    plan.windows = vec![FACTOR_STUDY_WINDOW];
    plan.hidden_layers = vec![FACTOR_STUDY_LAYERS];
    plan.variants = variants;
    run_plan(&plan, StudyKind::Factor, exec)
}

/// Re-runs the study a report came from, using its embedded plan.
pub fn rerun(report: &StudyReport, exec: Execution) -> Result<StudyReport> {
    match report.study {
        StudyKind::Sweep => run_sweep(&report.plan, exec),
        StudyKind::DataAmount => run_data_amount_study(&report.plan, exec),
        StudyKind::Factor => run_factor_study(&report.plan, exec),
    }
}
