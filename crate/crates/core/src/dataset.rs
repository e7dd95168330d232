//! Telemetry schema, CSV ingestion, lagged feature matrices and accuracy
//! metrics.
//!
//! Feature column order for a row at step `t` is fixed:
//!
//! 1. current controls, in schema order;
//! 2. current measurements: exogenous ones only for [`DataType::A`], all of
//!    them for [`DataType::B`] and [`DataType::C`];
//! 3. for `l = 1..=lag_depth` (type C only): the full frame at `t - l`, as
//!    controls, measurements, temperatures, O₂.
//!
//! No current-step target column ever appears in a feature row.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const STEP_COLUMN: &str = "step";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSchema {
    pub controllable_names: Vec<String>,
    pub measurement_names: Vec<String>,
    /// Subset of `measurement_names` that are set outside the furnace (load
    /// demand, ambient conditions). Type-A features see only these.
    pub exogenous_names: Vec<String>,
    pub target_temperature_names: Vec<String>,
    pub target_o2_names: Vec<String>,
    /// Operating range of each controllable, aligned to `controllable_names`.
    pub control_bounds: Vec<(f64, f64)>,
    pub sample_period_s: f64,
}

impl Default for SignalSchema {
    /// Six furnace zones, two flue sides, twelve coal feeders, sixteen air
    /// throttles and thirteen other sensors: 49 signal columns sampled every
    /// 432 s.
    fn default() -> Self {
        let coal: Vec<String> = (1..=12).map(|i| format!("coal_feed_{i:02}")).collect();
        let throttles: Vec<String> = (1..=16).map(|i| format!("throttle_{i:02}")).collect();
        let exogenous = [
            "load_mw",
            "ambient_temp_c",
            "feedwater_temp_c",
            "main_steam_pressure_mpa",
            "steam_flow_tph",
        ];
        let responses = [
            "nox_side_a",
            "nox_side_b",
            "co_ppm",
            "flue_gas_temp_a_c",
            "flue_gas_temp_b_c",
            "furnace_pressure_pa",
            "exhaust_temp_c",
            "mill_outlet_temp_c",
        ];
        let mut control_bounds = vec![(0.0, 60.0); coal.len()];
        control_bounds.extend(std::iter::repeat_n((0.0, 100.0), throttles.len()));
        Self {
            controllable_names: coal.into_iter().chain(throttles).collect(),
            measurement_names: exogenous
                .iter()
                .chain(responses.iter())
                .map(|s| s.to_string())
                .collect(),
            exogenous_names: exogenous.iter().map(|s| s.to_string()).collect(),
            target_temperature_names: (1..=6).map(|i| format!("temp_zone_{i}")).collect(),
            target_o2_names: vec!["o2_side_a".into(), "o2_side_b".into()],
            control_bounds,
            sample_period_s: 432.0,
        }
    }
}

impl SignalSchema {
    pub fn n_controls(&self) -> usize {
        self.controllable_names.len()
    }

    pub fn n_measurements(&self) -> usize {
        self.measurement_names.len()
    }

    pub fn n_temperatures(&self) -> usize {
        self.target_temperature_names.len()
    }

    pub fn n_o2(&self) -> usize {
        self.target_o2_names.len()
    }

    pub fn n_targets(&self) -> usize {
        self.n_temperatures() + self.n_o2()
    }

    /// Signal columns, excluding the step index.
    pub fn column_count(&self) -> usize {
        self.n_controls() + self.n_measurements() + self.n_targets()
    }

    /// Temperatures first, then O₂ sides.
    pub fn target_names(&self) -> impl Iterator<Item = &String> {
        self.target_temperature_names
            .iter()
            .chain(&self.target_o2_names)
    }

    pub fn target_index(&self, name: &str) -> Option<usize> {
        self.target_names().position(|n| n == name)
    }

    pub fn exogenous_indices(&self) -> Vec<usize> {
        self.measurement_names
            .iter()
            .enumerate()
            .filter(|(_, n)| self.exogenous_names.contains(n))
            .map(|(i, _)| i)
            .collect()
    }

    /// All signal columns in CSV order.
    pub fn columns(&self) -> Vec<&str> {
        self.controllable_names
            .iter()
            .chain(&self.measurement_names)
            .chain(self.target_names())
            .map(String::as_str)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let lists: [(&str, &Vec<String>); 4] = [
            ("controllable", &self.controllable_names),
            ("measurement", &self.measurement_names),
            ("temperature", &self.target_temperature_names),
            ("o2", &self.target_o2_names),
        ];
        let mut seen = HashSet::new();
        for (what, list) in lists {
            if list.is_empty() {
                return Err(Error::Schema(format!("{what} name list is empty")));
            }
            for name in list {
                if name == STEP_COLUMN || !seen.insert(name.as_str()) {
                    return Err(Error::Schema(format!("duplicate column name `{name}`")));
                }
            }
        }
        for name in &self.exogenous_names {
            if !self.measurement_names.contains(name) {
                return Err(Error::Schema(format!(
                    "exogenous signal `{name}` is not a measurement"
                )));
            }
        }
        if self.control_bounds.len() != self.n_controls() {
            return Err(Error::Schema("control_bounds length".into()));
        }
        if let Some(i) = self
            .control_bounds
            .iter()
            .position(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(Error::Schema(format!(
                "bad bounds for `{}`",
                self.controllable_names[i]
            )));
        }
        if !(self.sample_period_s > 0.0) {
            return Err(Error::Schema("sample period must be positive".into()));
        }
        Ok(())
    }

    /// Stable hex digest of the column names and their roles.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (tag, list) in [
            ("c", &self.controllable_names),
            ("m", &self.measurement_names),
            ("x", &self.exogenous_names),
            ("t", &self.target_temperature_names),
            ("o", &self.target_o2_names),
        ] {
            h.update(tag.as_bytes());
            for n in list {
                h.update(n.as_bytes());
                h.update([0u8]);
            }
        }
        hex(&h.finalize()[..8])
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub timestamp: u64,
    pub controls: Vec<f64>,
    pub measurements: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub o2: Vec<f64>,
}

impl TelemetryFrame {
    /// Target value by combined index (temperatures first).
    pub fn target(&self, idx: usize) -> f64 {
        let nt = self.temperatures.len();
        if idx < nt {
            self.temperatures[idx]
        } else {
            self.o2[idx - nt]
        }
    }

    pub fn targets(&self) -> impl Iterator<Item = f64> + '_ {
        self.temperatures.iter().chain(&self.o2).copied()
    }

    fn conforms_to(&self, schema: &SignalSchema) -> bool {
        self.controls.len() == schema.n_controls()
            && self.measurements.len() == schema.n_measurements()
            && self.temperatures.len() == schema.n_temperatures()
            && self.o2.len() == schema.n_o2()
    }

    fn is_finite(&self) -> bool {
        self.controls
            .iter()
            .chain(&self.measurements)
            .chain(&self.temperatures)
            .chain(&self.o2)
            .all(|v| v.is_finite())
    }

    fn width(&self) -> usize {
        self.controls.len() + self.measurements.len() + self.temperatures.len() + self.o2.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DataType {
    /// Current controls and exogenous measurements only.
    A,
    /// Every current-step signal except the targets.
    B,
    /// Type B plus `lag_depth` past full frames.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub data_type: DataType,
    pub lag_depth: usize,
}

impl FeatureLayout {
    pub const A: Self = Self {
        data_type: DataType::A,
        lag_depth: 0,
    };
    pub const B: Self = Self {
        data_type: DataType::B,
        lag_depth: 0,
    };

    pub fn c(lag_depth: usize) -> Self {
        Self {
            data_type: DataType::C,
            lag_depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.data_type, self.lag_depth) {
            (DataType::A | DataType::B, 0) => Ok(()),
            (DataType::C, l) if l >= 1 => Ok(()),
            _ => Err(Error::Config(format!(
                "layout {:?} incompatible with lag_depth {}",
                self.data_type, self.lag_depth
            ))),
        }
    }

    pub fn width(&self, schema: &SignalSchema) -> usize {
        self.current_width(schema) + self.lag_depth * schema.column_count()
    }

    fn current_width(&self, schema: &SignalSchema) -> usize {
        schema.n_controls()
            + match self.data_type {
                DataType::A => schema.exogenous_names.len(),
                DataType::B | DataType::C => schema.n_measurements(),
            }
    }

    pub fn column_names(&self, schema: &SignalSchema) -> Vec<String> {
        let mut cols: Vec<String> = schema.controllable_names.clone();
        match self.data_type {
            DataType::A => {
                let ex = schema.exogenous_indices();
                cols.extend(ex.iter().map(|&i| schema.measurement_names[i].clone()));
            }
            DataType::B | DataType::C => cols.extend(schema.measurement_names.iter().cloned()),
        }
        for l in 1..=self.lag_depth {
            cols.extend(schema.columns().iter().map(|c| format!("{c}@t-{l}")));
        }
        cols
    }

    /// Writes the non-control part of a feature row (current measurements and
    /// lag frames). `lag(l)` must return the frame `l` steps back.
    pub fn fill_measurement_part<'a>(
        &self,
        schema: &SignalSchema,
        measurements: &[f64],
        lag: impl Fn(usize) -> &'a TelemetryFrame,
        out: &mut Vec<f64>,
    ) {
        match self.data_type {
            DataType::A => {
                for i in schema.exogenous_indices() {
                    out.push(measurements[i]);
                }
            }
            DataType::B | DataType::C => out.extend_from_slice(measurements),
        }
        for l in 1..=self.lag_depth {
            let fr = lag(l);
            out.extend_from_slice(&fr.controls);
            out.extend_from_slice(&fr.measurements);
            out.extend_from_slice(&fr.temperatures);
            out.extend_from_slice(&fr.o2);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train_end: usize,
    pub val_end: usize,
}

impl Split {
    /// Chronological split with the given fractions for training and
    /// validation; the remainder is the test range.
    pub fn chronological(n: usize, train_frac: f64, val_frac: f64) -> Result<Self> {
        let train_end = (n as f64 * train_frac).floor() as usize;
        let val_end = (n as f64 * (train_frac + val_frac)).floor() as usize;
        let s = Self { train_end, val_end };
        s.validate(n)?;
        Ok(s)
    }

    /// 70/15/15, adjusted so that short datasets still get non-empty ranges.
    pub fn default_for(n: usize) -> Result<Self> {
        Self::chronological(n, 0.70, 0.15).or_else(|_| fallback_split(n))
    }

    /// Strict `0 < train_end < val_end < n` for three or more frames; shorter
    /// datasets can only be loaded whole, as training data.
    pub fn validate(&self, n: usize) -> Result<()> {
        let ok = if n >= 3 {
            0 < self.train_end && self.train_end < self.val_end && self.val_end < n
        } else {
            n > 0 && self.train_end == n && self.val_end == n
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "split boundaries ({}, {}) invalid for {n} frames",
                self.train_end, self.val_end
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Partition {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: SignalSchema,
    pub frames: Vec<TelemetryFrame>,
    pub split: Split,
}

impl Dataset {
    /// Validates frames against the schema and applies the default 70/15/15
    /// chronological split.
    pub fn new(schema: SignalSchema, frames: Vec<TelemetryFrame>) -> Result<Self> {
        let split = Split::default_for(frames.len())?;
        Self::with_split(schema, frames, split)
    }

    pub fn with_split(
        schema: SignalSchema,
        frames: Vec<TelemetryFrame>,
        split: Split,
    ) -> Result<Self> {
        schema.validate()?;
        if frames.is_empty() {
            return Err(Error::EmptyDataset("no frames".into()));
        }
        for (i, fr) in frames.iter().enumerate() {
            if !fr.conforms_to(&schema) {
                return Err(Error::Schema(format!("frame {i} has wrong vector lengths")));
            }
            if !fr.is_finite() {
                return Err(Error::NonFinite(format!("frame {i}")));
            }
            if i > 0 && fr.timestamp <= frames[i - 1].timestamp {
                return Err(Error::Schema(format!(
                    "timestamps not strictly increasing at frame {i}"
                )));
            }
        }
        split.validate(frames.len())?;
        Ok(Self {
            schema,
            frames,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn partition(&self, pos: usize) -> Partition {
        if pos < self.split.train_end {
            Partition::Train
        } else if pos < self.split.val_end {
            Partition::Validation
        } else {
            Partition::Test
        }
    }

    /// True when frames `pos - back ..= pos` have consecutive step indices.
    /// A gap in the step index marks a restart.
    pub fn contiguous(&self, pos: usize, back: usize) -> bool {
        pos >= back && self.frames[pos].timestamp - self.frames[pos - back].timestamp == back as u64
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec![STEP_COLUMN];
        header.extend(self.schema.columns());
        wr.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for fr in &self.frames {
            rec.clear();
            rec.push(fr.timestamp.to_string());
            for v in fr
                .controls
                .iter()
                .chain(&fr.measurements)
                .chain(&fr.temperatures)
                .chain(&fr.o2)
            {
                // `{}` on f64 is the shortest representation that round-trips.
                rec.push(format!("{v}"));
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(File::create(path)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    /// `(line number, reason)` for every dropped row.
    pub dropped: Vec<(usize, String)>,
    pub split: Split,
}

/// Loads a dataset from a CSV file. See [`read_csv`].
pub fn load_csv(path: &Path, schema: &SignalSchema) -> Result<(Dataset, LoadReport)> {
    read_csv(File::open(path)?, schema)
}

/// Reads telemetry from CSV. The header must contain `step` and every schema
/// column; other columns are ignored. Rows with a non-numeric or non-finite
/// value in a schema column, or a step index that does not increase, are
/// dropped and listed in the report.
pub fn read_csv<R: Read>(reader: R, schema: &SignalSchema) -> Result<(Dataset, LoadReport)> {
    schema.validate()?;
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rd.headers()?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let step_col = find(STEP_COLUMN)?;
    let cols = schema
        .columns()
        .into_iter()
        .map(find)
        .collect::<Result<Vec<_>>>()?;

    let (nc, nm, nt) = (
        schema.n_controls(),
        schema.n_measurements(),
        schema.n_temperatures(),
    );
    let mut frames: Vec<TelemetryFrame> = Vec::new();
    let mut dropped = Vec::new();
    let mut rows_read = 0;
    let mut values = Vec::with_capacity(cols.len());
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        rows_read += 1;
        let step = match rec.get(step_col).map(|s| s.trim().parse::<u64>()) {
            Some(Ok(s)) => s,
            _ => {
                dropped.push((line, "bad step index".to_string()));
                continue;
            }
        };
        if frames.last().is_some_and(|f| f.timestamp >= step) {
            dropped.push((line, format!("step {step} out of order")));
            continue;
        }
        values.clear();
        let mut bad = None;
        for (k, &c) in cols.iter().enumerate() {
            match rec.get(c).map(|s| s.trim().parse::<f64>()) {
                Some(Ok(v)) if v.is_finite() => values.push(v),
                _ => {
                    bad = Some(schema.columns()[k].to_string());
                    break;
                }
            }
        }
        if let Some(col) = bad {
            dropped.push((line, format!("non-finite or non-numeric `{col}`")));
            continue;
        }
        frames.push(TelemetryFrame {
            timestamp: step,
            controls: values[..nc].to_vec(),
            measurements: values[nc..nc + nm].to_vec(),
            temperatures: values[nc + nm..nc + nm + nt].to_vec(),
            o2: values[nc + nm + nt..].to_vec(),
        });
    }
    if frames.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no usable rows ({} read, {} dropped)",
            rows_read,
            dropped.len()
        )));
    }
    let split = Split::default_for(frames.len())?;
    let ds = Dataset::with_split(schema.clone(), frames, split)?;
    let report = LoadReport {
        rows_read,
        rows_dropped: dropped.len(),
        dropped,
        split,
    };
    Ok((ds, report))
}

/// For very short files the 70/15/15 fractions can round to empty ranges.
fn fallback_split(n: usize) -> Result<Split> {
    if n < 3 {
        return Ok(Split {
            train_end: n,
            val_end: n,
        });
    }
    let val_end = n - 1;
    let train_end = (n as f64 * 0.70).floor().clamp(1.0, (val_end - 1) as f64) as usize;
    Ok(Split { train_end, val_end })
}

/// Design matrix for one target.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    pub x: Matrix,
    pub y: Vec<f64>,
    /// Frame position of each row.
    pub rows: Vec<usize>,
    pub columns: Vec<String>,
}

impl FeatureSet {
    /// Row subset whose frame positions fall in `part`.
    pub fn subset(&self, ds: &Dataset, part: Partition) -> (Matrix, Vec<f64>, Vec<usize>) {
        let keep: Vec<usize> = (0..self.rows.len())
            .filter(|&r| ds.partition(self.rows[r]) == part)
            .collect();
        let cols = (0..self.x.cols()).collect::<Vec<_>>();
        (
            self.x.select(&keep, &cols),
            keep.iter().map(|&r| self.y[r]).collect(),
            keep.iter().map(|&r| self.rows[r]).collect(),
        )
    }
}

/// Builds the design matrix for `target` under `layout`. Rows whose lag
/// window crosses a step-index gap are skipped; for gap-free data the row
/// count is `frames - lag_depth`.
pub fn build_features(ds: &Dataset, layout: FeatureLayout, target: &str) -> Result<FeatureSet> {
    layout.validate()?;
    let ti = ds
        .schema
        .target_index(target)
        .ok_or_else(|| Error::UnknownTarget(target.to_string()))?;
    if layout.lag_depth >= ds.len() {
        return Err(Error::Degenerate(format!(
            "lag depth {} needs more than {} frames",
            layout.lag_depth,
            ds.len()
        )));
    }
    let width = layout.width(&ds.schema);
    let mut data = Vec::with_capacity((ds.len() - layout.lag_depth) * width);
    let mut y = Vec::new();
    let mut rows = Vec::new();
    let mut row = Vec::with_capacity(width);
    for pos in layout.lag_depth..ds.len() {
        if !ds.contiguous(pos, layout.lag_depth) {
            continue;
        }
        let fr = &ds.frames[pos];
        row.clear();
        row.extend_from_slice(&fr.controls);
        layout.fill_measurement_part(&ds.schema, &fr.measurements, |l| &ds.frames[pos - l], &mut row);
        debug_assert_eq!(row.len(), width);
        data.extend_from_slice(&row);
        y.push(fr.target(ti));
        rows.push(pos);
    }
    debug_assert!(ds.frames.iter().all(|f| f.width() == ds.schema.column_count()));
    Ok(FeatureSet {
        x: Matrix::from_vec(rows.len(), width, data),
        y,
        rows,
        columns: layout.column_names(&ds.schema),
    })
}

fn check_lengths(pred: &[f64], actual: &[f64]) -> Result<()> {
    if pred.len() != actual.len() {
        return Err(Error::LengthMismatch {
            what: "prediction vs actual",
            expected: actual.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::Degenerate("empty vectors".into()));
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(pred, actual)?;
    let s: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a) * (p - a)).sum();
    Ok(s / pred.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], actual: &[f64]) -> Result<f64> {
    check_lengths(pred, actual)?;
    let mut s = 0.0;
    for (i, (p, a)) in pred.iter().zip(actual).enumerate() {
        if *a == 0.0 {
            return Err(Error::ZeroActual(i));
        }
        s += ((p - a) / a).abs();
    }
    Ok(100.0 * s / pred.len() as f64)
}
