//! Windowed error compensation: the mean of the last `S` residuals
//! (actual − raw prediction) is added to the next prediction of the same
//! target.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::svr::{predict_partition, ModelBundle};

pub const DEFAULT_WINDOW: usize = 50;

/// Ring buffer whose mean is kept as `anchor + Σ(rᵢ − anchor)/len`, so a
/// stream of identical residuals yields exactly that residual.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResidualBuffer {
    values: VecDeque<f64>,
    anchor: f64,
    dev_sum: f64,
    evictions: usize,
}

impl ResidualBuffer {
    fn new(cap: usize) -> Self {
        Self {
            values: VecDeque::with_capacity(cap),
            anchor: 0.0,
            dev_sum: 0.0,
            evictions: 0,
        }
    }

    fn push(&mut self, r: f64, cap: usize) {
        if self.values.is_empty() {
            self.anchor = r;
            self.dev_sum = 0.0;
        }
        if self.values.len() == cap {
            let old = self.values.pop_front().expect("full buffer");
            self.dev_sum -= old - self.anchor;
            self.evictions += 1;
        }
        self.values.push_back(r);
        self.dev_sum += r - self.anchor;
        // re-anchor periodically so the running sum cannot drift
        if self.evictions >= cap {
            self.evictions = 0;
            self.anchor = self.values[0];
            self.dev_sum = self.values.iter().map(|v| v - self.anchor).sum();
        }
    }

    fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.anchor + self.dev_sum / self.values.len() as f64
        }
    }

    fn clear(&mut self) {
        self.values.clear();
        self.dev_sum = 0.0;
        self.evictions = 0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationState {
    window: usize,
    targets: Vec<String>,
    buffers: Vec<ResidualBuffer>,
    last_step: Option<u64>,
}

impl CompensationState {
    pub fn new(window: usize, targets: Vec<String>) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("compensation window must be >= 1".into()));
        }
        let buffers = targets.iter().map(|_| ResidualBuffer::new(window)).collect();
        Ok(Self {
            window,
            targets,
            buffers,
            last_step: None,
        })
    }

    pub fn for_bundle(window: usize, bundle: &ModelBundle) -> Result<Self> {
        Self::new(window, bundle.models.iter().map(|m| m.target.clone()).collect())
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn index_of(&self, target: &str) -> Option<usize> {
        self.targets.iter().position(|t| t == target)
    }

    pub fn buffered(&self, target: usize) -> usize {
        self.buffers[target].values.len()
    }

    pub fn residuals(&self, target: usize) -> impl Iterator<Item = f64> + '_ {
        self.buffers[target].values.iter().copied()
    }

    /// Current additive correction; zero while the buffer is empty.
    pub fn correction(&self, target: usize) -> f64 {
        self.buffers[target].mean()
    }

    pub fn corrections(&self) -> Vec<f64> {
        (0..self.buffers.len()).map(|i| self.correction(i)).collect()
    }

    /// Records `actual − raw_prediction`, evicting the oldest residual once
    /// `window` are held. Non-finite input leaves the state untouched.
    pub fn observe(&mut self, target: usize, actual: f64, raw_prediction: f64) -> Result<()> {
        if !actual.is_finite() || !raw_prediction.is_finite() {
            return Err(Error::NonFinite("compensation observation".into()));
        }
        let buf = self
            .buffers
            .get_mut(target)
            .ok_or_else(|| Error::UnknownTarget(format!("#{target}")))?;
        buf.push(actual - raw_prediction, self.window);
        Ok(())
    }

    pub fn compensate(&self, target: usize, raw_prediction: f64) -> f64 {
        raw_prediction + self.correction(target)
    }

    /// Notes the step index of the frame about to be processed; a jump of
    /// more than one step is a restart and clears every buffer.
    pub fn mark_step(&mut self, step: u64) {
        if let Some(last) = self.last_step {
            if step != last + 1 {
                self.reset();
            }
        }
        self.last_step = Some(step);
    }

    pub fn reset(&mut self) {
        self.buffers.iter_mut().for_each(ResidualBuffer::clear);
    }
}

/// ΔMSE (uncompensated − compensated, validation split) per target for each
/// window size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub sizes: Vec<usize>,
    pub targets: Vec<String>,
    pub uncompensated_mse: Vec<f64>,
    /// `delta_mse[target][k]` for `sizes[k]`.
    pub delta_mse: Vec<Vec<f64>>,
}

impl SweepReport {
    /// Mean ΔMSE over the given target indices at each size.
    pub fn mean_delta(&self, targets: &[usize]) -> Vec<f64> {
        (0..self.sizes.len())
            .map(|k| targets.iter().map(|&t| self.delta_mse[t][k]).sum::<f64>() / targets.len() as f64)
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["window".to_string()];
        header.extend(self.targets.iter().cloned());
        wr.write_record(&header)?;
        for (k, s) in self.sizes.iter().enumerate() {
            let mut rec = vec![s.to_string()];
            rec.extend(self.delta_mse.iter().map(|d| format!("{}", d[k])));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Replays every model's residual stream in step order and scores the
/// compensated predictions on the validation split. Frames before the
/// validation range prime the buffers, so each window size starts the
/// validation range with its full history.
pub fn sweep_window(ds: &Dataset, bundle: &ModelBundle, sizes: &[usize]) -> Result<SweepReport> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Config("window sizes must be non-empty and >= 1".into()));
    }
    let mut report = SweepReport {
        sizes: sizes.to_vec(),
        targets: Vec::new(),
        uncompensated_mse: Vec::new(),
        delta_mse: Vec::new(),
    };
    for model in &bundle.models {
        let (rows, pred, actual) = predict_partition(ds, model, None)?;
        let in_val: Vec<bool> = rows
            .iter()
            .map(|&p| ds.partition(p) == Partition::Validation)
            .collect();
        let n_val = in_val.iter().filter(|v| **v).count();
        if n_val == 0 {
            return Err(Error::EmptyDataset("validation split has no rows".into()));
        }
        let raw_mse = rows
            .iter()
            .enumerate()
            .filter(|(k, _)| in_val[*k])
            .map(|(k, _)| (pred[k] - actual[k]).powi(2))
            .sum::<f64>()
            / n_val as f64;
        let mut deltas = Vec::with_capacity(sizes.len());
        for &s in sizes {
            let comp_mse = replay(ds, &rows, &pred, &actual, &in_val, s)? / n_val as f64;
            deltas.push(raw_mse - comp_mse);
        }
        report.targets.push(model.target.clone());
        report.uncompensated_mse.push(raw_mse);
        report.delta_mse.push(deltas);
    }
    Ok(report)
}

/// Sum of squared compensated errors over the scored rows.
fn replay(
    ds: &Dataset,
    rows: &[usize],
    pred: &[f64],
    actual: &[f64],
    scored: &[bool],
    window: usize,
) -> Result<f64> {
    let mut st = CompensationState::new(window, vec![String::new()])?;
    let mut sse = 0.0;
    for (k, &pos) in rows.iter().enumerate() {
        st.mark_step(ds.frames[pos].timestamp);
        if scored[k] {
            sse += (st.compensate(0, pred[k]) - actual[k]).powi(2);
        }
        st.observe(0, actual[k], pred[k])?;
    }
    Ok(sse)
}
