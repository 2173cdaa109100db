//! Window construction and a single-hidden-layer feed-forward forecaster
//! trained with mini-batch Adam.
//!
//! The network maps `L` context values normalized by their mean, plus a
//! one-hot weekday of the first target day, to `H` normalized forecasts:
//!
//! ```text
//! hidden = relu(W1 · input + b1)     W1: hidden_width × (L + 7), row-major
//! out    = W2 · hidden + b2          W2: H × hidden_width, row-major
//! ```

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{Assignment, ClusterModel};
use crate::domain::{day_of_week, Dataset, WindowSpec};
use crate::error::{Error, Result};
use crate::features::LAYOUT_VERSION;
use crate::rng::{derive_seed, fnv1a, Xoshiro256};

/// Added to the context mean before normalizing, so all-zero contexts are safe.
pub const EPSILON_SCALE: f64 = 1e-6;
pub const N_WEEKDAYS: usize = 7;
pub const ACTIVATION: &str = "relu";

/// One training or evaluation window cut from a site series.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub site_id: String,
    pub context: Vec<f64>,
    pub target: Vec<f64>,
    /// Weekday (0 = Monday) of the first target day.
    pub first_target_dow: usize,
}

/// Enumerates every stride-1 window of each site; sites with more than
/// `max_per_site` windows are subsampled uniformly without replacement.
///
/// The subsample for a site depends only on `seed` and the site id, so the
/// same site yields the same windows whichever subset of sites is passed.
pub fn build_windows(d: &Dataset, w: &WindowSpec, max_per_site: usize, seed: u64) -> Vec<WindowSample> {
    let span = w.total();
    let mut out = Vec::new();
    for site in d.sites() {
        if site.len() < span {
            continue;
        }
        let n = site.len() - span + 1;
        let starts: Vec<usize> = if n > max_per_site {
            let site_seed = derive_seed(seed, &[fnv1a(site.site_id.as_bytes())]);
            Xoshiro256::seed_from_u64(site_seed).sample_indices(n, max_per_site)
        } else {
            (0..n).collect()
        };
        for s in starts {
            let first_target = s + w.context_len;
            out.push(WindowSample {
                site_id: site.site_id.clone(),
                context: site.values[s..first_target].to_vec(),
                target: site.values[first_target..s + span].to_vec(),
                first_target_dow: day_of_week(site.start_day + first_target as i64),
            });
        }
    }
    out
}

fn context_scale(context: &[f64]) -> f64 {
    context.iter().sum::<f64>() / context.len() as f64 + EPSILON_SCALE
}

/// Normalized network input and the scale used to normalize it.
pub fn encode_context(context: &[f64], first_target_dow: usize) -> (Vec<f64>, f64) {
    let scale = context_scale(context);
    let mut input: Vec<f64> = context.iter().map(|v| v / scale).collect();
    let mut one_hot = [0.0; N_WEEKDAYS];
    one_hot[first_target_dow % N_WEEKDAYS] = 1.0;
    input.extend_from_slice(&one_hot);
    (input, scale)
}

/// Input vector of length `L + 7` for a sample.
pub fn encode_input(s: &WindowSample) -> Vec<f64> {
    encode_context(&s.context, s.first_target_dow).0
}

/// Targets divided by the same scale as the context.
pub fn encode_target(s: &WindowSample) -> Vec<f64> {
    let scale = context_scale(&s.context);
    s.target.iter().map(|v| v / scale).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_width: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub max_windows_per_site: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 128,
            hidden_width: 64,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            max_windows_per_site: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate < 1.0
            && self.batch_size > 0
            && self.hidden_width > 0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.adam_epsilon > 0.0
            && self.max_windows_per_site > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid training config {self:?}")))
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Weights and biases of both layers; also used for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layers {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Layers {
    pub fn zeros(input_dim: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; output * hidden],
            b2: vec![0.0; output],
        }
    }

    fn parts(&self) -> [&Vec<f64>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn parts_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn len(&self) -> usize {
        self.parts().iter().map(|p| p.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn locate(&self, mut idx: usize) -> (usize, usize) {
        for (i, p) in self.parts().iter().enumerate() {
            if idx < p.len() {
                return (i, idx);
            }
            idx -= p.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter by flat index in `w1, b1, w2, b2` order.
    pub fn get(&self, idx: usize) -> f64 {
        let (p, i) = self.locate(idx);
        self.parts()[p][i]
    }

    pub fn set(&mut self, idx: usize, value: f64) {
        let (p, i) = self.locate(idx);
        self.parts_mut()[p][i] = value;
    }

    fn fill(&mut self, value: f64) {
        for p in self.parts_mut() {
            p.iter_mut().for_each(|x| *x = value);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.parts().iter().all(|p| p.iter().all(|x| x.is_finite()))
    }
}

/// A trained (or initialized) forecaster and its encoding parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub layout_version: String,
    pub context_len: usize,
    pub horizon: usize,
    pub input_dim: usize,
    pub hidden_width: usize,
    pub activation: String,
    pub epsilon_scale: f64,
    pub params: Layers,
    pub train_config: Option<TrainConfig>,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
    pub final_loss: Option<f64>,
}

impl ForecastModel {
    /// All-zero parameters.
    pub fn zeros(w: &WindowSpec, hidden_width: usize) -> Self {
        let input_dim = w.context_len + N_WEEKDAYS;
        Self {
            layout_version: LAYOUT_VERSION.to_string(),
            context_len: w.context_len,
            horizon: w.horizon,
            input_dim,
            hidden_width,
            activation: ACTIVATION.to_string(),
            epsilon_scale: EPSILON_SCALE,
            params: Layers::zeros(input_dim, hidden_width, w.horizon),
            train_config: None,
            loss_history: Vec::new(),
            final_loss: None,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(w: &WindowSpec, hidden_width: usize, rng: &mut Xoshiro256) -> Self {
        let mut m = Self::zeros(w, hidden_width);
        let a1 = (6.0 / (m.input_dim + hidden_width) as f64).sqrt();
        let a2 = (6.0 / (hidden_width + m.horizon) as f64).sqrt();
        m.params.w1.iter_mut().for_each(|x| *x = rng.uniform(-a1, a1));
        m.params.w2.iter_mut().for_each(|x| *x = rng.uniform(-a2, a2));
        m
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            context_len: self.context_len,
            horizon: self.horizon,
        }
    }

    /// Checks the version tag and that all array lengths agree with the dims.
    pub fn validate(&self) -> Result<()> {
        if self.layout_version != LAYOUT_VERSION {
            return Err(Error::LayoutVersion {
                found: self.layout_version.clone(),
                expected: LAYOUT_VERSION.to_string(),
            });
        }
        let p = &self.params;
        let shapes_ok = self.input_dim == self.context_len + N_WEEKDAYS
            && p.w1.len() == self.hidden_width * self.input_dim
            && p.b1.len() == self.hidden_width
            && p.w2.len() == self.horizon * self.hidden_width
            && p.b2.len() == self.horizon
            && self.activation == ACTIVATION;
        if !shapes_ok {
            return Err(Error::Validation("forecast model arrays do not match its dims".into()));
        }
        if !p.all_finite() {
            return Err(Error::ModelCorrupt);
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite network input".into()));
        }
        Ok(())
    }

    /// Writes hidden activations into `hidden` and outputs into `out`.
    fn forward_into(&self, input: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let p = &self.params;
        for (j, h) in hidden.iter_mut().enumerate() {
            let row = &p.w1[j * self.input_dim..(j + 1) * self.input_dim];
            let z = p.b1[j] + dot(row, input);
            *h = z.max(0.0);
        }
        for (o, y) in out.iter_mut().enumerate() {
            let row = &p.w2[o * self.hidden_width..(o + 1) * self.hidden_width];
            *y = p.b2[o] + dot(row, hidden);
        }
    }

    fn forward_raw(&self, input: &[f64]) -> Vec<f64> {
        let mut hidden = vec![0.0; self.hidden_width];
        let mut out = vec![0.0; self.horizon];
        self.forward_into(input, &mut hidden, &mut out);
        out
    }

    /// Squared-error loss (mean over outputs) of one encoded sample, with
    /// its gradient accumulated into `grad` scaled by `weight`. The last three
    /// arguments are scratch buffers reused across a batch.
    #[allow(clippy::too_many_arguments)]
    fn accumulate_grad(
        &self,
        input: &[f64],
        target: &[f64],
        weight: f64,
        grad: &mut Layers,
        hidden: &mut [f64],
        out: &mut [f64],
        g_hidden: &mut [f64],
    ) -> f64 {
        self.forward_into(input, hidden, out);
        let h_out = self.horizon as f64;
        let mut loss = 0.0;
        g_hidden.iter_mut().for_each(|g| *g = 0.0);
        for o in 0..self.horizon {
            let err = out[o] - target[o];
            loss += err * err;
            let g = 2.0 * err / h_out * weight;
            grad.b2[o] += g;
            let row = o * self.hidden_width;
            let w2_row = &self.params.w2[row..row + self.hidden_width];
            let gw2_row = &mut grad.w2[row..row + self.hidden_width];
            for j in 0..self.hidden_width {
                gw2_row[j] += g * hidden[j];
                g_hidden[j] += g * w2_row[j];
            }
        }
        for j in 0..self.hidden_width {
            // relu'(z) = 1 iff z > 0, equivalently hidden > 0.
            if hidden[j] <= 0.0 {
                continue;
            }
            let g = g_hidden[j];
            grad.b1[j] += g;
            let row = &mut grad.w1[j * self.input_dim..(j + 1) * self.input_dim];
            for (gw, x) in row.iter_mut().zip(input) {
                *gw += g * x;
            }
        }
        loss / h_out
    }

    /// Loss of one sample in normalized space and its full gradient.
    pub fn loss_and_grad(&self, s: &WindowSample) -> (f64, Layers) {
        let mut grad = Layers::zeros(self.input_dim, self.hidden_width, self.horizon);
        let mut hidden = vec![0.0; self.hidden_width];
        let mut out = vec![0.0; self.horizon];
        let mut g_hidden = vec![0.0; self.hidden_width];
        let loss = self.accumulate_grad(
            &encode_input(s),
            &encode_target(s),
            1.0,
            &mut grad,
            &mut hidden,
            &mut out,
            &mut g_hidden,
        );
        (loss, grad)
    }

    /// Loss of one sample in normalized space.
    pub fn sample_loss(&self, s: &WindowSample) -> f64 {
        let out = self.forward_raw(&encode_input(s));
        squared_error(&out, &encode_target(s))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn squared_error(out: &[f64], target: &[f64]) -> f64 {
    out.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / out.len() as f64
}

/// Network output for an already-encoded input.
pub fn forward(m: &ForecastModel, input: &[f64]) -> Result<Vec<f64>> {
    if !m.params.all_finite() {
        return Err(Error::ModelCorrupt);
    }
    m.check_input(input)?;
    Ok(m.forward_raw(input))
}

/// Mean normalized squared error over a set of windows.
pub fn mean_loss(m: &ForecastModel, windows: &[WindowSample]) -> f64 {
    if windows.is_empty() {
        return 0.0;
    }
    windows.iter().map(|s| m.sample_loss(s)).sum::<f64>() / windows.len() as f64
}

/// Trains a forecaster on `windows` with mini-batch Adam.
///
/// Initialization and per-epoch shuffles draw from `cfg.seed`, so the result
/// is a pure function of its inputs. With `epochs = 0` the initialization is
/// returned unchanged.
pub fn train(windows: &[WindowSample], w: &WindowSpec, cfg: &TrainConfig) -> Result<ForecastModel> {
    cfg.validate()?;
    w.validate()?;
    if windows.is_empty() {
        return Err(Error::Parameter("no training windows".into()));
    }
    if let Some(s) = windows
        .iter()
        .find(|s| s.context.len() != w.context_len || s.target.len() != w.horizon)
    {
        return Err(Error::Validation(format!(
            "window from site {} does not match context {} / horizon {}",
            s.site_id, w.context_len, w.horizon
        )));
    }

    let mut rng = Xoshiro256::seed_from_u64(cfg.seed);
    let mut model = ForecastModel::init(w, cfg.hidden_width, &mut rng);
    model.train_config = Some(cfg.clone());

    let inputs: Vec<Vec<f64>> = windows.iter().map(encode_input).collect();
    let targets: Vec<Vec<f64>> = windows.iter().map(encode_target).collect();
    let n = windows.len();

    let (in_dim, hid, out_dim) = (model.input_dim, model.hidden_width, model.horizon);
    let mut grad = Layers::zeros(in_dim, hid, out_dim);
    let mut m1 = Layers::zeros(in_dim, hid, out_dim);
    let mut m2 = Layers::zeros(in_dim, hid, out_dim);
    let mut hidden = vec![0.0; hid];
    let mut out = vec![0.0; out_dim];
    let mut g_hidden = vec![0.0; hid];
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0usize;

    for _epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let weight = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                batch_loss += model.accumulate_grad(
                    &inputs[i],
                    &targets[i],
                    weight,
                    &mut grad,
                    &mut hidden,
                    &mut out,
                    &mut g_hidden,
                );
            }
            step += 1;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { step });
            }
            epoch_loss += batch_loss;
            adam_step(&mut model.params, &grad, &mut m1, &mut m2, cfg, step);
        }
        if !model.params.all_finite() {
            return Err(Error::Diverged { step });
        }
        model.loss_history.push(epoch_loss / n as f64);
    }
    model.final_loss = model.loss_history.last().copied();
    Ok(model)
}

fn adam_step(params: &mut Layers, grad: &Layers, m1: &mut Layers, m2: &mut Layers, cfg: &TrainConfig, step: usize) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let lr = cfg.learning_rate;
    for (((p, g), a), b) in params
        .parts_mut()
        .into_iter()
        .zip(grad.parts())
        .zip(m1.parts_mut())
        .zip(m2.parts_mut())
    {
        for i in 0..p.len() {
            a[i] = cfg.beta1 * a[i] + (1.0 - cfg.beta1) * g[i];
            b[i] = cfg.beta2 * b[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = a[i] / bc1;
            let v_hat = b[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_epsilon);
        }
    }
}

/// Finite-difference step used by [`gradient_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-4;

/// Largest relative error between backprop gradients and central finite
/// differences of the sample loss. See [`gradient_check_with`].
pub fn gradient_check(m: &ForecastModel, s: &WindowSample) -> f64 {
    gradient_check_with(m, s, 0, |_| {})
}

/// As [`gradient_check`], but the analytic gradient passes through `tamper`
/// first. Models with at most 200 parameters are checked exhaustively,
/// larger ones on 100 parameters sampled with `seed`.
pub fn gradient_check_with(m: &ForecastModel, s: &WindowSample, seed: u64, tamper: impl FnOnce(&mut Layers)) -> f64 {
    let (_, mut analytic) = m.loss_and_grad(s);
    tamper(&mut analytic);
    let n = m.params.len();
    let indices = if n <= 200 {
        (0..n).collect()
    } else {
        Xoshiro256::seed_from_u64(seed).sample_indices(n, 100)
    };
    let mut probe = m.clone();
    let mut worst = 0.0f64;
    for idx in indices {
        let orig = m.params.get(idx);
        probe.params.set(idx, orig + GRAD_CHECK_STEP);
        let up = probe.sample_loss(s);
        probe.params.set(idx, orig - GRAD_CHECK_STEP);
        let down = probe.sample_loss(s);
        probe.params.set(idx, orig);
        let numeric = (up - down) / (2.0 * GRAD_CHECK_STEP);
        let a = analytic.get(idx);
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

/// Seven-day forecast in kWh, clamped at zero.
pub fn predict(m: &ForecastModel, context: &[f64], first_target_dow: usize) -> Result<Vec<f64>> {
    if context.len() != m.context_len {
        return Err(Error::InsufficientData {
            needed: m.context_len,
            got: context.len(),
        });
    }
    if first_target_dow >= N_WEEKDAYS {
        return Err(Error::Parameter(format!("weekday {first_target_dow} out of range")));
    }
    let (input, scale) = encode_context(context, first_target_dow);
    let out = forward(m, &input)?;
    Ok(out.into_iter().map(|y| (y * scale).max(0.0)).collect())
}

/// One forecaster per cluster, plus the cluster model that routes sites.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertSet {
    pub cluster_model: ClusterModel,
    pub models: Vec<ForecastModel>,
    /// Clusters whose members produced no windows and reuse the global model.
    pub fallback_clusters: Vec<usize>,
}

impl ExpertSet {
    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn model(&self, cluster: usize) -> Result<&ForecastModel> {
        self.models
            .get(cluster)
            .ok_or_else(|| Error::Parameter(format!("no expert for cluster {cluster}")))
    }
}

/// Seed used to train the expert for `cluster`.
pub fn expert_seed(base: u64, cluster: usize) -> u64 {
    derive_seed(base, &[0x6578_7065_7274, cluster as u64])
}

/// Trains one forecaster per cluster on the windows of its member sites.
///
/// With `k = 1` the single expert is the global model. Clusters whose
/// members yield no windows fall back to a copy of `global`.
pub fn train_expert_set(
    train_set: &Dataset,
    cm: &ClusterModel,
    a: &Assignment,
    w: &WindowSpec,
    cfg: &TrainConfig,
    global: &ForecastModel,
) -> Result<ExpertSet> {
    if let Some(s) = train_set.sites().iter().find(|s| a.get(&s.site_id).is_none()) {
        return Err(Error::Validation(format!("training site {} has no cluster", s.site_id)));
    }
    if cm.k == 1 {
        return Ok(ExpertSet {
            cluster_model: cm.clone(),
            models: vec![global.clone()],
            fallback_clusters: Vec::new(),
        });
    }
    let trained: Vec<Result<Option<ForecastModel>>> = (0..cm.k)
        .into_par_iter()
        .map(|c| {
            let members = Dataset::new(
                train_set
                    .sites()
                    .iter()
                    .filter(|s| a.get(&s.site_id) == Some(c))
                    .cloned()
                    .collect(),
            )?;
            let windows = build_windows(&members, w, cfg.max_windows_per_site, cfg.seed);
            if windows.is_empty() {
                return Ok(None);
            }
            train(&windows, w, &cfg.with_seed(expert_seed(cfg.seed, c))).map(Some)
        })
        .collect();
    let mut models = Vec::with_capacity(cm.k);
    let mut fallback_clusters = Vec::new();
    for (c, r) in trained.into_iter().enumerate() {
        match r? {
            Some(m) => models.push(m),
            None => {
                fallback_clusters.push(c);
                models.push(global.clone());
            }
        }
    }
    Ok(ExpertSet {
        cluster_model: cm.clone(),
        models,
        fallback_clusters,
    })
}

/// Writes `cluster_model.json`, `expert_<c>.json` and `global.json` into `dir`.
pub fn save_model_dir(dir: &Path, es: &ExpertSet, global: &ForecastModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    crate::io::write_atomic(
        &dir.join("cluster_model.json"),
        serde_json::to_string_pretty(&es.cluster_model)?.as_bytes(),
    )?;
    for (c, m) in es.models.iter().enumerate() {
        crate::io::write_atomic(
            &dir.join(format!("expert_{c}.json")),
            serde_json::to_string(m)?.as_bytes(),
        )?;
    }
    crate::io::write_atomic(&dir.join("global.json"), serde_json::to_string(global)?.as_bytes())?;
    Ok(())
}

/// Loads what [`save_model_dir`] wrote, rejecting mismatched layout versions.
pub fn load_model_dir(dir: &Path) -> Result<(ExpertSet, ForecastModel)> {
    let cluster_model: ClusterModel = crate::io::read_json(&dir.join("cluster_model.json"))?;
    cluster_model.check_layout()?;
    let global: ForecastModel = crate::io::read_json(&dir.join("global.json"))?;
    global.validate()?;
    let mut models = Vec::with_capacity(cluster_model.k);
    for c in 0..cluster_model.k {
        let m: ForecastModel = crate::io::read_json(&dir.join(format!("expert_{c}.json")))?;
        m.validate()?;
        if m.window_spec() != global.window_spec() {
            return Err(Error::Validation(format!("expert {c} has a different window spec")));
        }
        models.push(m);
    }
    Ok((
        ExpertSet {
            cluster_model,
            models,
            fallback_clusters: Vec::new(),
        },
        global,
    ))
}
