//! Labeled multichannel time series: CSV ingestion, min-max scaling and
//! sliding windows.
//!
//! File layout: a header row, first column `Timestamp` (integer seconds or an
//! ISO-8601 date-time), one decimal column per channel, and an optional final
//! `Normal/Attack` column holding `Normal` or `Attack`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TIMESTAMP_COLUMN: &str = "Timestamp";
pub const LABEL_COLUMN: &str = "Normal/Attack";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Sensor,
    Actuator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Attack,
}

impl Label {
    pub fn is_attack(self) -> bool {
        matches!(self, Label::Attack)
    }

    pub fn token(self) -> &'static str {
        match self {
            Label::Normal => "Normal",
            Label::Attack => "Attack",
        }
    }

    pub fn parse(token: &str) -> Option<Label> {
        match token.trim() {
            "Normal" => Some(Label::Normal),
            "Attack" => Some(Label::Attack),
            _ => None,
        }
    }
}

/// Ordered channel identifiers with a sensor/actuator tag each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSchema {
    names: Vec<String>,
    kinds: Vec<ChannelKind>,
}

impl ChannelSchema {
    pub fn new(names: Vec<String>, kinds: Vec<ChannelKind>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidArgument("schema needs at least one channel".into()));
        }
        if names.len() != kinds.len() {
            return Err(Error::InvalidArgument(format!(
                "{} channel names but {} kinds",
                names.len(),
                kinds.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.trim().is_empty() {
                return Err(Error::InvalidArgument("empty channel name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate channel name {name:?}")));
            }
        }
        Ok(Self { names, kinds })
    }

    /// All channels tagged as sensors.
    pub fn sensors<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let kinds = vec![ChannelKind::Sensor; names.len()];
        Self::new(names, kinds)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[ChannelKind] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Timestamped readings, one row per second, with per-row labels.
///
/// Values are stored row-major: `values[row * channels + channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    schema: ChannelSchema,
    timestamps: Vec<i64>,
    values: Vec<f64>,
    labels: Vec<Label>,
}

impl TimeSeriesFrame {
    pub fn new(
        schema: ChannelSchema,
        timestamps: Vec<i64>,
        values: Vec<f64>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        let rows = timestamps.len();
        if labels.len() != rows {
            return Err(Error::data(format!("{} timestamps but {} labels", rows, labels.len())));
        }
        if values.len() != rows * schema.len() {
            return Err(Error::data(format!(
                "value matrix has {} entries, expected {} rows x {} channels",
                values.len(),
                rows,
                schema.len()
            )));
        }
        for (i, pair) in timestamps.windows(2).enumerate() {
            check_step(pair[0], pair[1], i + 2)?;
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::at_row(pos / schema.len() + 1, "non-finite value"));
        }
        Ok(Self {
            schema,
            timestamps,
            values,
            labels,
        })
    }

    pub fn empty(schema: ChannelSchema) -> Self {
        Self {
            schema,
            timestamps: Vec::new(),
            values: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn schema(&self) -> &ChannelSchema {
        &self.schema
    }

    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn channels(&self) -> usize {
        self.schema.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.channels();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn value(&self, row: usize, channel: usize) -> f64 {
        self.values[row * self.channels() + channel]
    }

    pub fn column(&self, channel: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.value(r, channel)).collect()
    }

    pub fn has_attacks(&self) -> bool {
        self.labels.iter().any(|l| l.is_attack())
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn labels_mut(&mut self) -> &mut [Label] {
        &mut self.labels
    }

    /// Rows `[start, end)` as a new frame.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.rows() {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{end} out of range for {} rows",
                self.rows()
            )));
        }
        let c = self.channels();
        Ok(Self {
            schema: self.schema.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            values: self.values[start * c..end * c].to_vec(),
            labels: self.labels[start..end].to_vec(),
        })
    }

    /// Writes the frame in the CSV layout accepted by [`load_csv`].
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        write!(out, "{TIMESTAMP_COLUMN}").map_err(io)?;
        for name in self.schema.names() {
            write!(out, ",{name}").map_err(io)?;
        }
        writeln!(out, ",{LABEL_COLUMN}").map_err(io)?;
        for r in 0..self.rows() {
            write!(out, "{}", self.timestamps[r]).map_err(io)?;
            for v in self.row(r) {
                // `{}` on f64 prints the shortest string that parses back exactly.
                write!(out, ",{v}").map_err(io)?;
            }
            writeln!(out, ",{}", self.labels[r].token()).map_err(io)?;
        }
        out.flush().map_err(io)
    }
}

fn check_step(prev: i64, next: i64, row: usize) -> Result<()> {
    if next <= prev {
        return Err(Error::at_row(row, format!("non-monotonic timestamp at row {row}")));
    }
    if next - prev != 1 {
        return Err(Error::at_row(
            row,
            format!("timestamp gap of {}s at row {row} (expected 1 Hz)", next - prev),
        ));
    }
    Ok(())
}

fn parse_timestamp(field: &str, row: usize) -> Result<i64> {
    let field = field.trim();
    if let Ok(secs) = field.parse::<i64>() {
        return Ok(secs);
    }
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(field) {
        return Ok(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(field, fmt) {
            return Ok(dt.and_utc().timestamp());
        }
    }
    Err(Error::at_row(row, format!("unparseable timestamp {field:?}")))
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn read_header(reader: &mut csv::Reader<File>) -> Result<Vec<String>> {
    let header = reader
        .headers()
        .map_err(|e| Error::data(format!("cannot read header: {e}")))?;
    Ok(header.iter().map(|h| h.trim().to_string()).collect())
}

/// Loads a CSV whose header must be `Timestamp`, the schema's channel names in
/// order, and optionally `Normal/Attack`. Without a label column every row is
/// labeled normal.
pub fn load_csv(path: &Path, schema: &ChannelSchema) -> Result<TimeSeriesFrame> {
    let mut reader = open_reader(path)?;
    let header = read_header(&mut reader)?;
    let has_labels = header.last().map(String::as_str) == Some(LABEL_COLUMN);
    let channel_cols = header.len().saturating_sub(1 + usize::from(has_labels));
    if header.first().map(String::as_str) != Some(TIMESTAMP_COLUMN) {
        return Err(Error::data(format!("first column must be {TIMESTAMP_COLUMN:?}")));
    }
    if channel_cols != schema.len() {
        return Err(Error::data(format!(
            "channel-count mismatch: header has {channel_cols} channels, schema has {}",
            schema.len()
        )));
    }
    for (i, (got, want)) in header[1..=channel_cols].iter().zip(schema.names()).enumerate() {
        if got != want {
            return Err(Error::data(format!(
                "header column {} is {got:?}, schema expects {want:?}",
                i + 2
            )));
        }
    }
    read_rows(&mut reader, schema.clone(), has_labels)
}

/// Loads a CSV and derives the schema from its header (all channels tagged as
/// sensors).
pub fn load_csv_inferred(path: &Path) -> Result<TimeSeriesFrame> {
    let mut reader = open_reader(path)?;
    let header = read_header(&mut reader)?;
    if header.first().map(String::as_str) != Some(TIMESTAMP_COLUMN) {
        return Err(Error::data(format!("first column must be {TIMESTAMP_COLUMN:?}")));
    }
    let has_labels = header.last().map(String::as_str) == Some(LABEL_COLUMN);
    let end = header.len() - usize::from(has_labels);
    let schema = ChannelSchema::sensors(header[1..end].iter().cloned())?;
    read_rows(&mut reader, schema, has_labels)
}

fn read_rows(
    reader: &mut csv::Reader<File>,
    schema: ChannelSchema,
    has_labels: bool,
) -> Result<TimeSeriesFrame> {
    let channels = schema.len();
    let expected = 1 + channels + usize::from(has_labels);
    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::at_row(row, format!("malformed row: {e}")))?;
        if record.len() != expected {
            return Err(Error::at_row(
                row,
                format!("channel-count mismatch: {} fields, expected {expected}", record.len()),
            ));
        }
        let ts = parse_timestamp(&record[0], row)?;
        if let Some(&prev) = timestamps.last() {
            check_step(prev, ts, row)?;
        }
        timestamps.push(ts);
        for field in record.iter().skip(1).take(channels) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::at_row(row, format!("malformed value {field:?}")))?;
            if !v.is_finite() {
                return Err(Error::at_row(row, "missing or non-finite value"));
            }
            values.push(v);
        }
        let label = if has_labels {
            let token = &record[expected - 1];
            Label::parse(token)
                .ok_or_else(|| Error::at_row(row, format!("unknown label token {token:?}")))?
        } else {
            Label::Normal
        };
        labels.push(label);
    }
    TimeSeriesFrame::new(schema, timestamps, values, labels)
}

/// Per-channel extremes observed on a fitting frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

pub fn fit_minmax(frame: &TimeSeriesFrame) -> Result<MinMaxScaler> {
    if frame.is_empty() {
        return Err(Error::InvalidArgument("cannot fit a scaler on an empty frame".into()));
    }
    let c = frame.channels();
    let mut min = vec![f64::INFINITY; c];
    let mut max = vec![f64::NEG_INFINITY; c];
    for r in 0..frame.rows() {
        for (j, &v) in frame.row(r).iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    Ok(MinMaxScaler { min, max })
}

impl MinMaxScaler {
    pub fn channels(&self) -> usize {
        self.min.len()
    }

    /// `(x - min) / (max - min)` clipped to `[0, 1]`; constant channels map
    /// to 0.5.
    pub fn scale(&self, channel: usize, x: f64) -> f64 {
        let (lo, hi) = (self.min[channel], self.max[channel]);
        if hi > lo {
            ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.5
        }
    }

    pub fn inverse(&self, channel: usize, y: f64) -> f64 {
        let (lo, hi) = (self.min[channel], self.max[channel]);
        if hi > lo {
            lo + y * (hi - lo)
        } else {
            lo
        }
    }
}

pub fn apply_minmax(scaler: &MinMaxScaler, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
    if scaler.channels() != frame.channels() {
        return Err(Error::Shape(format!(
            "scaler fitted on {} channels, frame has {}",
            scaler.channels(),
            frame.channels()
        )));
    }
    let c = frame.channels();
    let mut out = frame.clone();
    for (i, v) in out.values_mut().iter_mut().enumerate() {
        *v = scaler.scale(i % c, *v);
    }
    Ok(out)
}

/// Sliding windows of length `w`, stride 1, each paired with the next row.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    window: usize,
    channels: usize,
    /// Normalized frame values, row-major; windows index into it.
    data: Arc<[f64]>,
    target_indices: Vec<usize>,
}

impl WindowBatch {
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.target_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_indices.is_empty()
    }

    /// Window `i` as a row-major `w x C` slice.
    pub fn input(&self, i: usize) -> &[f64] {
        let start = self.target_indices[i] - self.window;
        &self.data[start * self.channels..self.target_indices[i] * self.channels]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        let t = self.target_indices[i];
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn target_indices(&self) -> &[usize] {
        &self.target_indices
    }

    /// The windows with positions in `range`, sharing the same backing data.
    pub fn subset(&self, range: std::ops::Range<usize>) -> WindowBatch {
        WindowBatch {
            window: self.window,
            channels: self.channels,
            data: Arc::clone(&self.data),
            target_indices: self.target_indices[range].to_vec(),
        }
    }
}

pub fn make_windows(frame: &TimeSeriesFrame, w: usize) -> Result<WindowBatch> {
    if w == 0 {
        return Err(Error::InvalidArgument("window length must be positive".into()));
    }
    if frame.rows() < w + 1 {
        return Err(Error::InvalidArgument(format!(
            "frame has {} rows, window {w} needs at least {}",
            frame.rows(),
            w + 1
        )));
    }
    Ok(WindowBatch {
        window: w,
        channels: frame.channels(),
        data: Arc::from(frame.values()),
        target_indices: (w..frame.rows()).collect(),
    })
}
