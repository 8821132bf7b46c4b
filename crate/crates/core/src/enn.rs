//! Multi-hidden-layer Elman network.
//!
//! Every hidden layer `i` owns a context layer holding its own activation from
//! the previous time step:
//!
//! ```text
//! x_1 = tanh(W_in u + W_c1 c_1)
//! x_i = tanh(W_i x_{i-1} + W_ci c_i)      i = 2..n
//! y   = W_out x_n
//! c_i <- x_i                               after each step
//! ```
//!
//! Training is per-sample gradient descent that treats the context inputs as
//! constants, so no error is propagated backwards through time.

use std::path::Path;

use chrono::NaiveDateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Channel, DatasetVariant, NormalizationStats, SuperVectorSet};
use crate::error::{Error, Result};
use crate::eval;
use crate::numerics::Matrix;

pub const DEFAULT_HIDDEN_SIZE: usize = 15;
pub const FORMAT_VERSION: u32 = 1;

/// Describes the super-vectors a model was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub window_length: usize,
    /// Hours between consecutive training super-vectors; one context step
    /// spans this many hours.
    pub step_hours: usize,
    pub variant: DatasetVariant,
    pub norm_stats: NormalizationStats,
}

impl DataSpec {
    pub fn of(data: &SuperVectorSet) -> Self {
        Self {
            window_length: data.window,
            step_hours: data.stride,
            variant: data.variant,
            norm_stats: data.stats.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnnModel {
    input_size: usize,
    hidden_size: usize,
    output_size: usize,
    w_in: Matrix,
    w_hidden: Vec<Matrix>,
    w_out: Matrix,
    w_context: Vec<Matrix>,
    context: Vec<Vec<f64>>,
    data_spec: Option<DataSpec>,
}

/// Per-layer outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub hidden: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Gradient of `0.5 * |y_d - y|^2` with respect to every weight, context held fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_in: Matrix,
    pub w_hidden: Vec<Matrix>,
    pub w_out: Matrix,
    pub w_context: Vec<Matrix>,
}

/// Identifies one weight matrix of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightId {
    Input,
    /// Hidden-to-hidden matrix feeding hidden layer `i + 2`.
    Hidden(usize),
    Output,
    Context(usize),
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let bound = 1.0 / (cols as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

impl EnnModel {
    /// Seeded uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero context.
    pub fn new(
        n_hidden: usize,
        input_size: usize,
        hidden_size: usize,
        output_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if n_hidden == 0 || input_size == 0 || hidden_size == 0 || output_size == 0 {
            return Err(Error::Config(
                "layer count and all layer sizes must be at least 1".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w_in = uniform_matrix(&mut rng, hidden_size, input_size);
        let w_hidden = (1..n_hidden)
            .map(|_| uniform_matrix(&mut rng, hidden_size, hidden_size))
            .collect();
        let w_out = uniform_matrix(&mut rng, output_size, hidden_size);
        let w_context = (0..n_hidden)
            .map(|_| uniform_matrix(&mut rng, hidden_size, hidden_size))
            .collect();
        Ok(Self {
            input_size,
            hidden_size,
            output_size,
            w_in,
            w_hidden,
            w_out,
            w_context,
            context: vec![vec![0.0; hidden_size]; n_hidden],
            data_spec: None,
        })
    }

    /// Single-output model, the configuration used throughout the studies.
    pub fn init(n_hidden: usize, input_size: usize, hidden_size: usize, seed: u64) -> Result<Self> {
        Self::new(n_hidden, input_size, hidden_size, 1, seed)
    }

    /// Builds a model from explicit weights with zero context.
    pub fn from_weights(
        w_in: Matrix,
        w_hidden: Vec<Matrix>,
        w_out: Matrix,
        w_context: Vec<Matrix>,
    ) -> Result<Self> {
        let s = w_in.rows();
        let n = w_context.len();
        let dim_err = |op, expected, got| Err(Error::DimensionMismatch { op, expected, got });
        if n == 0 {
            return dim_err("context layers", 1, 0);
        }
        if w_hidden.len() != n - 1 {
            return dim_err("hidden matrices", n - 1, w_hidden.len());
        }
        for m in w_hidden.iter().chain(&w_context) {
            if m.rows() != s || m.cols() != s {
                return dim_err("hidden/context matrix", s, m.rows().max(m.cols()));
            }
        }
        if w_out.cols() != s {
            return dim_err("output matrix columns", s, w_out.cols());
        }
        Ok(Self {
            input_size: w_in.cols(),
            hidden_size: s,
            output_size: w_out.rows(),
            w_in,
            w_hidden,
            w_out,
            w_context,
            context: vec![vec![0.0; s]; n],
            data_spec: None,
        })
    }

    pub fn n_hidden_layers(&self) -> usize {
        self.w_context.len()
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn output_size(&self) -> usize {
        self.output_size
    }

    pub fn w_in(&self) -> &Matrix {
        &self.w_in
    }

    pub fn w_hidden(&self) -> &[Matrix] {
        &self.w_hidden
    }

    pub fn w_out(&self) -> &Matrix {
        &self.w_out
    }

    pub fn w_context(&self) -> &[Matrix] {
        &self.w_context
    }

    pub fn context(&self) -> &[Vec<f64>] {
        &self.context
    }

    pub fn data_spec(&self) -> Option<&DataSpec> {
        self.data_spec.as_ref()
    }

    pub fn set_data_spec(&mut self, spec: DataSpec) -> Result<()> {
        if spec.step_hours == 0 {
            return Err(Error::Config("step_hours must be at least 1".into()));
        }
        let expected = spec.variant.input_size(spec.window_length);
        if expected != self.input_size {
            return Err(Error::Config(format!(
                "window {} / variant {} needs {expected} inputs, model has {}",
                spec.window_length, spec.variant, self.input_size
            )));
        }
        self.data_spec = Some(spec);
        Ok(())
    }

    pub fn set_context(&mut self, context: Vec<Vec<f64>>) -> Result<()> {
        if context.len() != self.n_hidden_layers() {
            return Err(Error::DimensionMismatch {
                op: "set_context (layers)",
                expected: self.n_hidden_layers(),
                got: context.len(),
            });
        }
        if let Some(c) = context.iter().find(|c| c.len() != self.hidden_size) {
            return Err(Error::DimensionMismatch {
                op: "set_context (width)",
                expected: self.hidden_size,
                got: c.len(),
            });
        }
        self.context = context;
        Ok(())
    }

    pub fn weight(&self, id: WeightId) -> &Matrix {
        match id {
            WeightId::Input => &self.w_in,
            WeightId::Hidden(i) => &self.w_hidden[i],
            WeightId::Output => &self.w_out,
            WeightId::Context(i) => &self.w_context[i],
        }
    }

    pub fn weight_mut(&mut self, id: WeightId) -> &mut Matrix {
        match id {
            WeightId::Input => &mut self.w_in,
            WeightId::Hidden(i) => &mut self.w_hidden[i],
            WeightId::Output => &mut self.w_out,
            WeightId::Context(i) => &mut self.w_context[i],
        }
    }

    /// All weight matrices in a fixed order.
    pub fn weight_ids(&self) -> Vec<WeightId> {
        let mut ids = vec![WeightId::Input];
        ids.extend((0..self.w_hidden.len()).map(WeightId::Hidden));
        ids.push(WeightId::Output);
        ids.extend((0..self.w_context.len()).map(WeightId::Context));
        ids
    }

    /// Evaluates the network at the current context without mutating it.
    pub fn forward(&self, u: &[f64]) -> Result<Activations> {
        if u.len() != self.input_size {
            return Err(Error::DimensionMismatch {
                op: "forward",
                expected: self.input_size,
                got: u.len(),
            });
        }
        let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(self.n_hidden_layers());
        for layer in 0..self.n_hidden_layers() {
            let mut pre = vec![0.0; self.hidden_size];
            match layer {
                0 => self.w_in.mat_vec_acc(u, &mut pre),
                _ => self.w_hidden[layer - 1].mat_vec_acc(&hidden[layer - 1], &mut pre),
            }
            self.w_context[layer].mat_vec_acc(&self.context[layer], &mut pre);
            for p in &mut pre {
                *p = p.tanh();
            }
            hidden.push(pre);
        }
        let mut output = vec![0.0; self.output_size];
        self.w_out.mat_vec_acc(hidden.last().expect("n >= 1"), &mut output);
        Ok(Activations { hidden, output })
    }

    /// Copies each hidden activation into its context layer.
    pub fn step_context(&mut self, activations: &Activations) {
        for (c, x) in self.context.iter_mut().zip(&activations.hidden) {
            c.copy_from_slice(x);
        }
    }

    pub fn reset_context(&mut self) {
        for c in &mut self.context {
            c.fill(0.0);
        }
    }

    /// Error signals `delta = -dE/d(pre-activation)` for each layer.
    fn deltas(&self, acts: &Activations, target: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        // Linear output: g' = 1.
        let out_delta: Vec<f64> = target.iter().zip(&acts.output).map(|(d, y)| d - y).collect();
        let n = self.n_hidden_layers();
        let mut hidden_deltas = vec![Vec::new(); n];
        let mut downstream = vec![0.0; self.hidden_size];
        self.w_out.tr_mat_vec_acc(&out_delta, &mut downstream);
        for layer in (0..n).rev() {
            let delta: Vec<f64> = downstream
                .iter()
                .zip(&acts.hidden[layer])
                .map(|(g, a)| g * (1.0 - a * a))
                .collect();
            if layer > 0 {
                downstream.fill(0.0);
                self.w_hidden[layer - 1].tr_mat_vec_acc(&delta, &mut downstream);
            }
            hidden_deltas[layer] = delta;
        }
        (out_delta, hidden_deltas)
    }

    /// Analytic gradient at the current context for one sample.
    pub fn gradients(&self, u: &[f64], target: &[f64]) -> Result<Gradients> {
        self.check_target(target)?;
        let acts = self.forward(u)?;
        let (out_delta, hidden_deltas) = self.deltas(&acts, target);
        let mut g = Gradients {
            w_in: Matrix::zeros(self.w_in.rows(), self.w_in.cols()),
            w_hidden: self
                .w_hidden
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
            w_out: Matrix::zeros(self.w_out.rows(), self.w_out.cols()),
            w_context: self
                .w_context
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        };
        let n = self.n_hidden_layers();
        g.w_out
            .outer_update_unchecked(-1.0, &out_delta, &acts.hidden[n - 1]);
        g.w_in.outer_update_unchecked(-1.0, &hidden_deltas[0], u);
        for p in 1..n {
            g.w_hidden[p - 1].outer_update_unchecked(-1.0, &hidden_deltas[p], &acts.hidden[p - 1]);
        }
        for p in 0..n {
            g.w_context[p].outer_update_unchecked(-1.0, &hidden_deltas[p], &self.context[p]);
        }
        Ok(g)
    }

    fn check_target(&self, target: &[f64]) -> Result<()> {
        if target.len() != self.output_size {
            return Err(Error::DimensionMismatch {
                op: "target",
                expected: self.output_size,
                got: target.len(),
            });
        }
        Ok(())
    }

    /// One gradient step on a single sample followed by a context step.
    /// Returns the squared error before the update.
    pub fn train_step(&mut self, u: &[f64], target: &[f64], rates: &LearningRates) -> Result<f64> {
        self.check_target(target)?;
        let acts = self.forward(u)?;
        let (out_delta, hidden_deltas) = self.deltas(&acts, target);
        let sq_err: f64 = out_delta.iter().map(|d| d * d).sum();
        let n = self.n_hidden_layers();
        self.w_out
            .outer_update_unchecked(rates.output, &out_delta, &acts.hidden[n - 1]);
        for p in 1..n {
            self.w_hidden[p - 1].outer_update_unchecked(
                rates.hidden,
                &hidden_deltas[p],
                &acts.hidden[p - 1],
            );
        }
        self.w_in
            .outer_update_unchecked(rates.input, &hidden_deltas[0], u);
        // Context updates use the context seen by this forward pass.
        for p in 0..n {
            let (w, c) = (&mut self.w_context[p], &self.context[p]);
            w.outer_update_unchecked(rates.context, &hidden_deltas[p], c);
        }
        self.step_context(&acts);
        Ok(sq_err)
    }

    /// One pass over `data` in temporal order. Returns the mean squared error
    /// on normalized targets.
    pub fn train_epoch(&mut self, data: &SuperVectorSet, cfg: &TrainConfig) -> Result<f64> {
        self.check_input_size(data)?;
        let mut total = 0.0;
        for (i, (u, &t)) in data.inputs.iter().zip(&data.targets).enumerate() {
            if data.starts_segment(i) {
                self.reset_context();
            }
            let err = self.train_step(u, &[t], &cfg.learning_rates)?;
            if !err.is_finite() || self.w_out.as_slice().iter().any(|w| !w.is_finite()) {
                return Err(Error::Divergence { sample: i });
            }
            total += err;
        }
        self.reset_context();
        Ok(total / data.len() as f64)
    }

    fn check_input_size(&self, data: &SuperVectorSet) -> Result<()> {
        if data.input_size() != self.input_size {
            return Err(Error::DimensionMismatch {
                op: "super-vector width",
                expected: self.input_size,
                got: data.input_size(),
            });
        }
        Ok(())
    }

    /// Number of interleaved context chains used when predicting `data`.
    ///
    /// A model trained on super-vectors `k` hours apart carries a context that
    /// is `k` hours old. Denser data is split into `k / stride` chains so every
    /// chain steps its context by the same number of hours as in training.
    pub fn context_chains(&self, data: &SuperVectorSet) -> usize {
        match &self.data_spec {
            Some(spec) if spec.step_hours > data.stride && spec.step_hours % data.stride == 0 => {
                spec.step_hours / data.stride
            }
            _ => 1,
        }
    }

    /// Normalized one-step predictions, context reset at every segment start.
    pub fn predict_normalized(&mut self, data: &SuperVectorSet) -> Result<Vec<f64>> {
        self.check_input_size(data)?;
        let chains = self.context_chains(data);
        let mut saved = vec![self.context.clone(); chains];
        let mut phase = 0;
        let mut out = Vec::with_capacity(data.len());
        for (i, u) in data.inputs.iter().enumerate() {
            if data.starts_segment(i) {
                self.reset_context();
                for c in &mut saved {
                    c.clone_from(&self.context);
                }
                phase = 0;
            }
            let chain = phase % chains;
            std::mem::swap(&mut self.context, &mut saved[chain]);
            let acts = self.forward(u)?;
            out.push(acts.output[0]);
            self.step_context(&acts);
            std::mem::swap(&mut self.context, &mut saved[chain]);
            phase += 1;
        }
        self.reset_context();
        Ok(out)
    }

    /// Predictions in MW paired with their target hours.
    pub fn predict_series(&mut self, data: &SuperVectorSet) -> Result<Vec<(NaiveDateTime, f64)>> {
        let spec = self
            .data_spec
            .as_ref()
            .ok_or_else(|| Error::Config("model has no normalization statistics".into()))?;
        if spec.norm_stats != data.stats {
            return Err(Error::Config(
                "data was normalized with different statistics than the model".into(),
            ));
        }
        if spec.window_length != data.window || spec.variant != data.variant {
            return Err(Error::Config(format!(
                "model expects window {} / variant {}, data has window {} / variant {}",
                spec.window_length, spec.variant, data.window, data.variant
            )));
        }
        let demand = *spec.norm_stats.get(Channel::Demand)?;
        let normalized = self.predict_normalized(data)?;
        Ok(data
            .target_hours
            .iter()
            .zip(normalized)
            .map(|(&t, y)| (t, demand.denormalize(y)))
            .collect())
    }

    /// Runs up to `cfg.epochs` epochs, optionally early-stopping on
    /// validation MAPE and restoring the best weights.
    pub fn fit(
        &mut self,
        train: &SuperVectorSet,
        validation: Option<&SuperVectorSet>,
        cfg: &TrainConfig,
    ) -> Result<TrainTrace> {
        cfg.validate()?;
        self.set_data_spec(DataSpec::of(train))?;
        if let Some(v) = validation {
            self.check_input_size(v)?;
        }
        let mut trace = TrainTrace::default();
        let mut best: Option<(f64, EnnModel)> = None;
        let mut since_best = 0;
        for epoch in 1..=cfg.epochs {
            let loss = self.train_epoch(train, cfg)?;
            trace.losses.push(loss);
            trace.final_epoch = epoch;
            if let Some(v) = validation {
                let vmape = self.validation_mape(v)?;
                trace.validation_mape.push(vmape);
                if best.as_ref().is_none_or(|(b, _)| vmape < *b) {
                    best = Some((vmape, self.clone()));
                    trace.best_epoch = epoch;
                    since_best = 0;
                } else {
                    since_best += 1;
                }
                if cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience {
                    trace.stopped_early = epoch < cfg.epochs;
                    break;
                }
            } else {
                trace.best_epoch = epoch;
            }
        }
        if cfg.early_stop_patience > 0 {
            if let Some((_, model)) = best {
                *self = model;
            }
        }
        self.reset_context();
        Ok(trace)
    }

    fn validation_mape(&mut self, data: &SuperVectorSet) -> Result<f64> {
        let demand = *data.stats.get(Channel::Demand)?;
        let pred: Vec<f64> = self
            .predict_normalized(data)?
            .into_iter()
            .map(|y| demand.denormalize(y))
            .collect();
        let v = eval::mape(&data.target_mw, &pred)?;
        Ok(if v.is_finite() { v } else { f64::INFINITY })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(&ModelFile::from(self))
            .map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&ModelFile::from(self)).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        file.into_model()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRates {
    pub input: f64,
    pub hidden: f64,
    pub output: f64,
    pub context: f64,
}

impl LearningRates {
    pub fn uniform(rate: f64) -> Self {
        Self {
            input: rate,
            hidden: rate,
            output: rate,
            context: rate,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            input: self.input * factor,
            hidden: self.hidden * factor,
            output: self.output * factor,
            context: self.context * factor,
        }
    }
}

pub const DEFAULT_LEARNING_RATE: f64 = 0.0005;

impl Default for LearningRates {
    fn default() -> Self {
        Self::uniform(DEFAULT_LEARNING_RATE)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rates: LearningRates,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rates: LearningRates::default(),
            epochs: 200,
            seed: 0,
            early_stop_patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let r = &self.learning_rates;
        let weight_rates = [r.input, r.hidden, r.output];
        if weight_rates.iter().any(|&v| !(v >= 0.0) || !v.is_finite())
            || !(r.context >= 0.0)
            || !r.context.is_finite()
        {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub losses: Vec<f64>,
    /// Validation MAPE (%) per epoch, empty without validation data.
    pub validation_mape: Vec<f64>,
    pub final_epoch: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Dims {
    n: usize,
    r: usize,
    s: usize,
    m: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Weights {
    w_in: Vec<Vec<f64>>,
    w_hidden: Vec<Vec<Vec<f64>>>,
    w_out: Vec<Vec<f64>>,
    w_context: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format_version: u32,
    dims: Dims,
    weights: Weights,
    norm_stats: Option<NormalizationStats>,
    factor_order: Option<Vec<Channel>>,
    window_length: Option<usize>,
    step_hours: Option<usize>,
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn matrix_of(rows: Vec<Vec<f64>>, shape: (usize, usize), name: &str) -> Result<Matrix> {
    if rows.len() != shape.0 || rows.iter().any(|r| r.len() != shape.1) {
        return Err(Error::Format(format!(
            "{name} does not have shape {}x{}",
            shape.0, shape.1
        )));
    }
    Matrix::from_vec(shape.0, shape.1, rows.into_iter().flatten().collect())
        .map_err(|e| Error::Format(e.to_string()))
}

fn variant_for(factors: &[Channel]) -> Option<DatasetVariant> {
    DatasetVariant::ALL.into_iter().find(|v| v.factors() == factors)
}

impl From<&EnnModel> for ModelFile {
    fn from(m: &EnnModel) -> Self {
        let spec = m.data_spec.as_ref();
        ModelFile {
            format_version: FORMAT_VERSION,
            dims: Dims {
                n: m.n_hidden_layers(),
                r: m.input_size,
                s: m.hidden_size,
                m: m.output_size,
            },
            weights: Weights {
                w_in: rows_of(&m.w_in),
                w_hidden: m.w_hidden.iter().map(rows_of).collect(),
                w_out: rows_of(&m.w_out),
                w_context: m.w_context.iter().map(rows_of).collect(),
            },
            norm_stats: spec.map(|s| s.norm_stats.clone()),
            factor_order: spec.map(|s| s.variant.factors().to_vec()),
            window_length: spec.map(|s| s.window_length),
            step_hours: spec.map(|s| s.step_hours),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<EnnModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported format_version {}, expected {FORMAT_VERSION}",
                self.format_version
            )));
        }
        let Dims { n, r, s, m } = self.dims;
        if n == 0 || r == 0 || s == 0 || m == 0 {
            return Err(Error::Format("dims must all be at least 1".into()));
        }
        let w = self.weights;
        if w.w_hidden.len() != n - 1 || w.w_context.len() != n {
            return Err(Error::Format(format!(
                "expected {} hidden and {n} context matrices, found {} and {}",
                n - 1,
                w.w_hidden.len(),
                w.w_context.len()
            )));
        }
        let w_in = matrix_of(w.w_in, (s, r), "w_in")?;
        let w_hidden = w
            .w_hidden
            .into_iter()
            .map(|x| matrix_of(x, (s, s), "w_hidden"))
            .collect::<Result<_>>()?;
        let w_out = matrix_of(w.w_out, (m, s), "w_out")?;
        let w_context = w
            .w_context
            .into_iter()
            .map(|x| matrix_of(x, (s, s), "w_context"))
            .collect::<Result<_>>()?;
        let mut model = EnnModel::from_weights(w_in, w_hidden, w_out, w_context)
            .map_err(|e| Error::Format(e.to_string()))?;
        match (self.norm_stats, self.factor_order, self.window_length, self.step_hours) {
            (Some(norm_stats), Some(factors), Some(window_length), Some(step_hours)) => {
                let variant = variant_for(&factors).ok_or_else(|| {
                    Error::Format(format!("factor_order {factors:?} is not a known variant"))
                })?;
                model
                    .set_data_spec(DataSpec {
                        window_length,
                        step_hours,
                        variant,
                        norm_stats,
                    })
                    .map_err(|e| Error::Format(e.to_string()))?;
            }
            (None, None, None, None) => {}
            _ => {
                return Err(Error::Format(
                    "norm_stats, factor_order, window_length and step_hours must be given together"
                        .into(),
                ))
            }
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_supervectors, compute_stats, HourlyRecord, TimeSeriesTable};
    use chrono::{Duration, NaiveDate};

    fn toy_table(hours: usize, demand: impl Fn(usize) -> f64) -> TimeSeriesTable {
        let t0 = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let recs = (0..hours)
            .map(|i| HourlyRecord {
                timestamp: t0 + Duration::hours(i as i64),
                demand_mw: demand(i),
                temp_c: 5.0 * (i as f64 * 0.3).sin(),
                solar_wm2: 100.0 + 50.0 * (i as f64 * 0.7).cos(),
                wind_ms: 3.0 + (i as f64 * 0.2).sin(),
            })
            .collect();
        TimeSeriesTable::from_records(recs).unwrap()
    }

    fn toy_set(hours: usize, stride: usize) -> SuperVectorSet {
        let t = toy_table(hours, |i| 200.0 + 40.0 * (i as f64 * 0.3).sin() + (i % 3) as f64);
        let stats = compute_stats(&t, &Channel::ALL).unwrap();
        build_supervectors(&t, DatasetVariant::A, 4, stride, &stats).unwrap()
    }

    #[test]
    fn init_shapes() {
        let m = EnnModel::init(8, 7, 15, 1).unwrap();
        assert_eq!((m.w_in().rows(), m.w_in().cols()), (15, 7));
        assert_eq!((m.w_out().rows(), m.w_out().cols()), (1, 15));
        assert_eq!(m.w_hidden().len(), 7);
        assert_eq!(m.w_context().len(), 8);
        assert!(m.w_context().iter().all(|c| c.rows() == 15 && c.cols() == 15));
        assert!(m.context().iter().all(|c| c.len() == 15 && c.iter().all(|&v| v == 0.0)));

        let shallow = EnnModel::init(1, 3, 4, 1).unwrap();
        assert!(shallow.w_hidden().is_empty());
        assert_eq!(shallow.context().len(), 1);
        assert!(EnnModel::init(0, 3, 4, 1).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = EnnModel::init(2, 5, 6, 42).unwrap();
        let b = EnnModel::init(2, 5, 6, 42).unwrap();
        let c = EnnModel::init(2, 5, 6, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / 5f64.sqrt();
        assert!(a.w_in().as_slice().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut m = EnnModel::from_weights(
            Matrix::zeros(3, 2),
            vec![Matrix::zeros(3, 3)],
            Matrix::zeros(1, 3),
            vec![Matrix::zeros(3, 3), Matrix::zeros(3, 3)],
        )
        .unwrap();
        let acts = m.forward(&[1.0, -2.0]).unwrap();
        assert_eq!(acts.output, vec![0.0]);
        m.step_context(&acts);
        assert!(m.context().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_network_by_hand() {
        // r = 1, s = 2, n = 1: y = W2 tanh(W1 u).
        let w1 = Matrix::from_vec(2, 1, vec![0.5, -0.25]).unwrap();
        let w2 = Matrix::from_vec(1, 2, vec![2.0, 4.0]).unwrap();
        let wc = Matrix::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let m = EnnModel::from_weights(w1, vec![], w2, vec![wc]).unwrap();
        let u = 0.8;
        let y = m.forward(&[u]).unwrap().output[0];
        let expected = 2.0 * (0.5 * u).tanh() + 4.0 * (-0.25 * u).tanh();
        assert!((y - expected).abs() < 1e-15);
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn forward_is_pure_and_context_engages() {
        let mut m = EnnModel::init(2, 3, 5, 9).unwrap();
        let u = [0.4, -0.1, 0.9];
        let a1 = m.forward(&u).unwrap();
        assert_eq!(a1, m.forward(&u).unwrap());
        m.step_context(&a1);
        assert_eq!(m.context(), a1.hidden.as_slice());
        let a2 = m.forward(&u).unwrap();
        assert_ne!(a1.output, a2.output);
    }

    #[test]
    fn reset_context_semantics() {
        let set = toy_set(60, 1);
        let mut trained = EnnModel::init(2, set.input_size(), 5, 3).unwrap();
        trained.train_epoch(&set, &TrainConfig::default()).unwrap();
        let acts = trained.forward(&set.inputs[0]).unwrap();
        trained.step_context(&acts);
        let weights_before: Vec<Matrix> =
            trained.weight_ids().into_iter().map(|id| trained.weight(id).clone()).collect();
        trained.reset_context();
        let once = trained.clone();
        trained.reset_context();
        assert_eq!(once, trained);
        let weights_after: Vec<Matrix> =
            trained.weight_ids().into_iter().map(|id| trained.weight(id).clone()).collect();
        assert_eq!(weights_before, weights_after);

        let fresh = EnnModel::from_weights(
            trained.w_in().clone(),
            trained.w_hidden().to_vec(),
            trained.w_out().clone(),
            trained.w_context().to_vec(),
        )
        .unwrap();
        assert_eq!(trained.forward(&set.inputs[3]).unwrap(), fresh.forward(&set.inputs[3]).unwrap());

        trained.reset_context();
        let acts = trained.forward(&set.inputs[1]).unwrap();
        trained.step_context(&acts);
        assert_eq!(trained.context(), acts.hidden.as_slice());
    }

    fn half_sq_error(m: &EnnModel, u: &[f64], target: f64) -> f64 {
        let y = m.forward(u).unwrap().output[0];
        0.5 * (target - y) * (target - y)
    }

    #[test]
    fn gradient_matches_finite_differences_single_layer() {
        let mut m = EnnModel::init(1, 3, 4, 17).unwrap();
        m.set_context(vec![vec![0.3, -0.2, 0.5, 0.1]]).unwrap();
        let u = [0.7, -0.4, 1.1];
        let target = 0.9;
        let g = m.gradients(&u, &[target]).unwrap();
        let h = 1e-5;
        for id in m.weight_ids() {
            let analytic = match id {
                WeightId::Input => &g.w_in,
                WeightId::Hidden(i) => &g.w_hidden[i],
                WeightId::Output => &g.w_out,
                WeightId::Context(i) => &g.w_context[i],
            };
            for k in 0..analytic.as_slice().len() {
                let mut plus = m.clone();
                plus.weight_mut(id).as_mut_slice()[k] += h;
                let mut minus = m.clone();
                minus.weight_mut(id).as_mut_slice()[k] -= h;
                let fd = (half_sq_error(&plus, &u, target) - half_sq_error(&minus, &u, target))
                    / (2.0 * h);
                let a = analytic.as_slice()[k];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                assert!(rel < 1e-4, "{id:?}[{k}]: analytic {a} vs fd {fd}");
            }
        }
    }

    #[test]
    fn zero_learning_rate_leaves_weights() {
        let set = toy_set(40, 2);
        let mut m = EnnModel::init(2, set.input_size(), 5, 8).unwrap();
        let before = m.clone();
        let cfg = TrainConfig {
            learning_rates: LearningRates::uniform(0.0),
            ..TrainConfig::default()
        };
        let loss = m.train_epoch(&set, &cfg).unwrap();
        assert_eq!(m, before);
        let pred = m.predict_normalized(&set).unwrap();
        let pure: f64 = pred
            .iter()
            .zip(&set.targets)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / set.len() as f64;
        assert!((loss - pure).abs() < 1e-15);
    }

    #[test]
    fn training_reduces_loss() {
        let set = toy_set(300, 2);
        let mut m = EnnModel::init(1, set.input_size(), 6, 5).unwrap();
        let cfg = TrainConfig {
            learning_rates: LearningRates::uniform(0.01),
            ..TrainConfig::default()
        };
        let losses: Vec<f64> = (0..10).map(|_| m.train_epoch(&set, &cfg).unwrap()).collect();
        assert!(losses[9] < losses[0], "{losses:?}");
    }

    #[test]
    fn divergence_is_reported() {
        let set = toy_set(60, 1);
        let mut m = EnnModel::init(1, set.input_size(), 5, 1).unwrap();
        let cfg = TrainConfig {
            learning_rates: LearningRates::uniform(1e200),
            ..TrainConfig::default()
        };
        assert!(matches!(m.train_epoch(&set, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn fit_epoch_counts() {
        let set = toy_set(80, 2);
        let mut m = EnnModel::init(1, set.input_size(), 5, 2).unwrap();
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        assert_eq!(m.fit(&set, Some(&set), &cfg).unwrap().losses.len(), 1);

        let mut m = EnnModel::init(1, set.input_size(), 5, 2).unwrap();
        let cfg = TrainConfig { epochs: 7, early_stop_patience: 0, ..TrainConfig::default() };
        let trace = m.fit(&set, Some(&set), &cfg).unwrap();
        assert_eq!(trace.losses.len(), 7);
        assert!(!trace.stopped_early);
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
    }

    #[test]
    fn early_stopping_restores_best_weights() {
        // Small noisy training set, validation on a different stretch.
        let noisy = |i: usize| 200.0 + 30.0 * (i as f64 * 0.4).sin() + ((i * 7919) % 13) as f64 * 4.0;
        let train_t = toy_table(40, noisy);
        let stats = compute_stats(&train_t, &Channel::ALL).unwrap();
        let train = build_supervectors(&train_t, DatasetVariant::A, 4, 1, &stats).unwrap();
        let val_t = toy_table(200, |i| 200.0 + 30.0 * (i as f64 * 0.4).sin());
        let val = build_supervectors(&val_t, DatasetVariant::A, 4, 1, &stats).unwrap();

        let mut m = EnnModel::init(2, train.input_size(), 15, 4).unwrap();
        let cfg = TrainConfig {
            learning_rates: LearningRates::uniform(0.05),
            epochs: 500,
            early_stop_patience: 5,
            ..TrainConfig::default()
        };
        let trace = m.fit(&train, Some(&val), &cfg).unwrap();
        assert!(trace.stopped_early && trace.final_epoch < 500);
        // Replay: the best epoch is the argmin of the recorded validation MAPEs.
        let (best_idx, best) = trace
            .validation_mape
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert_eq!(trace.best_epoch, best_idx + 1);
        let restored = m.validation_mape(&val).unwrap();
        assert_eq!(restored, *best);
    }

    #[test]
    fn predict_series_checks_and_is_pure() {
        let set = toy_set(100, 1);
        let mut m = EnnModel::init(1, set.input_size(), 5, 2).unwrap();
        assert!(matches!(m.predict_series(&set), Err(Error::Config(_))));
        let cfg = TrainConfig { epochs: 3, early_stop_patience: 0, ..TrainConfig::default() };
        m.fit(&set, None, &cfg).unwrap();
        let a = m.predict_series(&set).unwrap();
        let b = m.predict_series(&set).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), set.len());
        assert_eq!(a[0].0, set.target_hours[0]);

        let mut other = set.clone();
        other.stats.channels[0].mean += 1.0;
        assert!(matches!(m.predict_series(&other), Err(Error::Config(_))));
    }

    #[test]
    fn dense_prediction_uses_training_step_chains() {
        let t = toy_table(120, |i| 200.0 + 40.0 * (i as f64 * 0.3).sin());
        let stats = compute_stats(&t, &Channel::ALL).unwrap();
        let sparse = build_supervectors(&t, DatasetVariant::A, 4, 2, &stats).unwrap();
        let dense = build_supervectors(&t, DatasetVariant::A, 4, 1, &stats).unwrap();
        let mut m = EnnModel::init(2, sparse.input_size(), 5, 6).unwrap();
        m.fit(&sparse, None, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap();
        assert_eq!(m.context_chains(&dense), 2);
        assert_eq!(m.context_chains(&sparse), 1);
        let p_sparse = m.predict_normalized(&sparse).unwrap();
        let p_dense = m.predict_normalized(&dense).unwrap();
        assert_eq!(p_dense.len(), dense.len());
        // Even-offset dense samples form exactly the sparse chain.
        let even: Vec<f64> = p_dense.iter().step_by(2).copied().collect();
        assert_eq!(&even[..p_sparse.len()], p_sparse.as_slice());
    }

    #[test]
    fn save_load_round_trip() {
        let t = toy_table(100, |i| 200.0 + i as f64);
        let stats = compute_stats(&t, &Channel::ALL).unwrap();
        let d = build_supervectors(&t, DatasetVariant::D, 4, 2, &stats).unwrap();
        let mut m = EnnModel::init(2, d.input_size(), 5, 12).unwrap();
        m.fit(&d, None, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back = EnnModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.input_size(), 7);
        assert_eq!(back.data_spec().unwrap().variant, DatasetVariant::D);
        let u = &d.inputs[5];
        assert_eq!(m.forward(u).unwrap(), back.forward(u).unwrap());

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(matches!(EnnModel::from_json(&text[..text.len() / 2]), Err(Error::Format(_))));
        let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 2", 1);
        assert!(matches!(EnnModel::from_json(&bumped), Err(Error::Format(_))));
    }
}
