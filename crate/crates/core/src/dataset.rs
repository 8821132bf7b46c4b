//! Hourly series ingestion, working-day filtering, Z-score normalization and
//! sliding-window super-vector construction.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Read};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["timestamp", "demand_mw", "temp_c", "solar_wm2", "wind_ms"];
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyRecord {
    pub timestamp: NaiveDateTime,
    pub demand_mw: f64,
    pub temp_c: f64,
    pub solar_wm2: f64,
    pub wind_ms: f64,
}

impl HourlyRecord {
    pub fn value(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Demand => self.demand_mw,
            Channel::Temp => self.temp_c,
            Channel::Solar => self.solar_wm2,
            Channel::Wind => self.wind_ms,
        }
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let ts = self.timestamp;
        if ts.minute() != 0 || ts.second() != 0 || ts.nanosecond() != 0 {
            return Err(format!("timestamp {ts} is not on an exact hour"));
        }
        for (name, v) in [
            ("demand_mw", self.demand_mw),
            ("temp_c", self.temp_c),
            ("solar_wm2", self.solar_wm2),
            ("wind_ms", self.wind_ms),
        ] {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
        }
        for (name, v) in [
            ("demand_mw", self.demand_mw),
            ("solar_wm2", self.solar_wm2),
            ("wind_ms", self.wind_ms),
        ] {
            if v < 0.0 {
                return Err(format!("{name} must be non-negative, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Demand,
    Temp,
    Solar,
    Wind,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::Demand, Channel::Temp, Channel::Solar, Channel::Wind];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Demand => "demand",
            Channel::Temp => "temp",
            Channel::Solar => "solar",
            Channel::Wind => "wind",
        }
    }
}

/// Factor combinations fed to the network next to the demand window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetVariant {
    A,
    B,
    C,
    D,
}

impl DatasetVariant {
    pub const ALL: [DatasetVariant; 4] = [
        DatasetVariant::A,
        DatasetVariant::B,
        DatasetVariant::C,
        DatasetVariant::D,
    ];

    /// Factors in their fixed super-vector order (temp, solar, wind).
    pub fn factors(self) -> &'static [Channel] {
        match self {
            DatasetVariant::A => &[Channel::Temp],
            DatasetVariant::B => &[Channel::Temp, Channel::Solar],
            DatasetVariant::C => &[Channel::Temp, Channel::Wind],
            DatasetVariant::D => &[Channel::Temp, Channel::Solar, Channel::Wind],
        }
    }

    pub fn input_size(self, window: usize) -> usize {
        window + self.factors().len()
    }
}

impl fmt::Display for DatasetVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DatasetVariant::A => "A",
            DatasetVariant::B => "B",
            DatasetVariant::C => "C",
            DatasetVariant::D => "D",
        };
        f.write_str(s)
    }
}

impl FromStr for DatasetVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(DatasetVariant::A),
            "B" => Ok(DatasetVariant::B),
            "C" => Ok(DatasetVariant::C),
            "D" => Ok(DatasetVariant::D),
            other => Err(Error::Config(format!("unknown dataset variant `{other}`"))),
        }
    }
}

/// Hourly records split into runs with no missing hours.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesTable {
    segments: Vec<Vec<HourlyRecord>>,
}

impl TimeSeriesTable {
    /// Builds a table from strictly increasing records, splitting at gaps.
    pub fn from_records(records: Vec<HourlyRecord>) -> Result<Self> {
        let mut segments: Vec<Vec<HourlyRecord>> = Vec::new();
        let mut prev: Option<NaiveDateTime> = None;
        for (idx, rec) in records.into_iter().enumerate() {
            rec.validate().map_err(|msg| Error::Validation { line: idx + 1, msg })?;
            match prev {
                Some(p) if rec.timestamp == p => {
                    return Err(Error::Validation {
                        line: idx + 1,
                        msg: format!("duplicate hour {}", rec.timestamp.format(TIMESTAMP_FORMAT)),
                    })
                }
                Some(p) if rec.timestamp < p => {
                    return Err(Error::Validation {
                        line: idx + 1,
                        msg: format!(
                            "timestamp {} precedes {}",
                            rec.timestamp.format(TIMESTAMP_FORMAT),
                            p.format(TIMESTAMP_FORMAT)
                        ),
                    })
                }
                Some(p) if rec.timestamp - p == Duration::hours(1) => {
                    segments.last_mut().expect("segment open").push(rec)
                }
                _ => segments.push(vec![rec]),
            }
            prev = Some(rec.timestamp);
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Vec<HourlyRecord>] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &HourlyRecord> {
        self.segments.iter().flatten()
    }

    /// Keeps records satisfying `keep`; removed records split their segment.
    pub fn retain(&self, mut keep: impl FnMut(&HourlyRecord) -> bool) -> Self {
        let mut segments = Vec::new();
        for seg in &self.segments {
            let mut current = Vec::new();
            for rec in seg {
                if keep(rec) {
                    current.push(*rec);
                } else if !current.is_empty() {
                    segments.push(std::mem::take(&mut current));
                }
            }
            if !current.is_empty() {
                segments.push(current);
            }
        }
        Self { segments }
    }

    /// Records whose calendar date lies in `[start, end]`.
    pub fn date_range(&self, start: NaiveDate, end: NaiveDate) -> Self {
        self.retain(|r| {
            let d = r.timestamp.date();
            d >= start && d <= end
        })
    }
}

/// Parses the canonical CSV schema.
pub fn read_csv<R: Read>(reader: R) -> Result<TimeSeriesTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::None)
        .from_reader(reader);
    let mut records = Vec::new();
    let mut lines = Vec::new();
    let mut saw_header = false;
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if !saw_header {
            if row.iter().ne(CSV_HEADER.iter().copied()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected header `{}`", CSV_HEADER.join(",")),
                });
            }
            saw_header = true;
            continue;
        }
        if row.len() != CSV_HEADER.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", CSV_HEADER.len(), row.len()),
            });
        }
        let timestamp = NaiveDateTime::parse_from_str(&row[0], TIMESTAMP_FORMAT).map_err(|e| {
            Error::Parse {
                line,
                msg: format!("bad timestamp `{}`: {e}", &row[0]),
            }
        })?;
        let num = |i: usize| -> Result<f64> {
            row[i].parse::<f64>().map_err(|e| Error::Parse {
                line,
                msg: format!("bad {} `{}`: {e}", CSV_HEADER[i], &row[i]),
            })
        };
        records.push(HourlyRecord {
            timestamp,
            demand_mw: num(1)?,
            temp_c: num(2)?,
            solar_wm2: num(3)?,
            wind_ms: num(4)?,
        });
        lines.push(line);
    }
    if !saw_header {
        return Err(Error::Parse {
            line: 1,
            msg: "missing header".into(),
        });
    }
    // Re-map record indices to file line numbers in validation errors.
    TimeSeriesTable::from_records(records).map_err(|e| match e {
        Error::Validation { line, msg } => Error::Validation {
            line: lines.get(line - 1).copied().unwrap_or(line),
            msg,
        },
        other => other,
    })
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeriesTable> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file))
}

pub fn write_csv<W: std::io::Write>(table: &TimeSeriesTable, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in table.records() {
        w.write_record([
            r.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            r.demand_mw.to_string(),
            r.temp_c.to_string(),
            r.solar_wm2.to_string(),
            r.wind_ms.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One ISO date per line; blank lines and `#` comments are skipped.
pub fn read_holidays<R: BufRead>(reader: R) -> Result<Vec<NaiveDate>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let d = NaiveDate::parse_from_str(t, "%Y-%m-%d").map_err(|e| Error::Parse {
            line: idx + 1,
            msg: format!("bad holiday date `{t}`: {e}"),
        })?;
        out.push(d);
    }
    Ok(out)
}

pub fn load_holidays(path: impl AsRef<Path>) -> Result<Vec<NaiveDate>> {
    let file = std::fs::File::open(path)?;
    read_holidays(std::io::BufReader::new(file))
}

pub fn filter_working_days(table: &TimeSeriesTable, holidays: &[NaiveDate]) -> TimeSeriesTable {
    let holidays: HashSet<NaiveDate> = holidays.iter().copied().collect();
    table.retain(|r| {
        let d = r.timestamp.date();
        !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) && !holidays.contains(&d)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub channel: Channel,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
}

impl ChannelStats {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn normalize(&self, value: f64) -> f64 {
        (value - self.mean) / self.std_dev()
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        value * self.std_dev() + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub channels: Vec<ChannelStats>,
}

impl NormalizationStats {
    pub fn get(&self, channel: Channel) -> Result<&ChannelStats> {
        self.channels
            .iter()
            .find(|c| c.channel == channel)
            .ok_or_else(|| Error::Config(format!("no statistics for channel `{}`", channel.name())))
    }
}

/// Per-channel mean and unbiased variance over every record of `table`.
pub fn compute_stats(table: &TimeSeriesTable, channels: &[Channel]) -> Result<NormalizationStats> {
    let n = table.len();
    if n < 2 {
        return Err(Error::EmptyDataset(format!(
            "need at least 2 records for statistics, found {n}"
        )));
    }
    let mut out = Vec::with_capacity(channels.len());
    for &channel in channels {
        let mean = table.records().map(|r| r.value(channel)).sum::<f64>() / n as f64;
        let ss: f64 = table
            .records()
            .map(|r| {
                let d = r.value(channel) - mean;
                d * d
            })
            .sum();
        let variance = ss / (n - 1) as f64;
        if !(variance > 0.0) {
            return Err(Error::DegenerateChannel(channel.name().into()));
        }
        out.push(ChannelStats {
            channel,
            mean,
            variance,
        });
    }
    Ok(NormalizationStats { channels: out })
}

/// Network inputs with aligned one-step-ahead targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperVectorSet {
    pub window: usize,
    pub stride: usize,
    pub variant: DatasetVariant,
    pub inputs: Vec<Vec<f64>>,
    /// Normalized demand at the hour after each window.
    pub targets: Vec<f64>,
    /// Raw demand at the target hour, MW.
    pub target_mw: Vec<f64>,
    pub target_hours: Vec<NaiveDateTime>,
    /// Index of the source segment for each sample; context resets when it changes.
    pub segment_ids: Vec<usize>,
    pub stats: NormalizationStats,
}

impl SuperVectorSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_size(&self) -> usize {
        self.variant.input_size(self.window)
    }

    /// True when sample `i` opens a new segment.
    pub fn starts_segment(&self, i: usize) -> bool {
        i == 0 || self.segment_ids[i] != self.segment_ids[i - 1]
    }
}

pub const ALLOWED_WINDOWS: [usize; 3] = [2, 4, 8];

/// Window start offsets inside one segment of `len` hours.
pub fn window_starts(len: usize, window: usize, stride: usize) -> impl Iterator<Item = usize> {
    let last = len.checked_sub(window + 1);
    (0..=last.unwrap_or(0))
        .step_by(stride.max(1))
        .take_while(move |_| last.is_some())
}

pub fn build_supervectors(
    table: &TimeSeriesTable,
    variant: DatasetVariant,
    window: usize,
    stride: usize,
    stats: &NormalizationStats,
) -> Result<SuperVectorSet> {
    if !ALLOWED_WINDOWS.contains(&window) {
        return Err(Error::Config(format!(
            "window must be one of {ALLOWED_WINDOWS:?}, got {window}"
        )));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    let demand = *stats.get(Channel::Demand)?;
    let factors: Vec<ChannelStats> = variant
        .factors()
        .iter()
        .map(|&c| stats.get(c).copied())
        .collect::<Result<_>>()?;

    let mut set = SuperVectorSet {
        window,
        stride,
        variant,
        inputs: Vec::new(),
        targets: Vec::new(),
        target_mw: Vec::new(),
        target_hours: Vec::new(),
        segment_ids: Vec::new(),
        stats: stats.clone(),
    };
    for (seg_id, seg) in table.segments().iter().enumerate() {
        for k in window_starts(seg.len(), window, stride) {
            let target = &seg[k + window];
            let mut input = Vec::with_capacity(window + factors.len());
            input.extend(seg[k..k + window].iter().map(|r| demand.normalize(r.demand_mw)));
            input.extend(factors.iter().map(|s| s.normalize(target.value(s.channel))));
            set.inputs.push(input);
            set.targets.push(demand.normalize(target.demand_mw));
            set.target_mw.push(target.demand_mw);
            set.target_hours.push(target.timestamp);
            set.segment_ids.push(seg_id);
        }
    }
    if set.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no segment has the {} hours needed for window {window}",
            window + 1
        )));
    }
    Ok(set)
}
