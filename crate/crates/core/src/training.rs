//! Synthetic tasks, MSE, Adam and the training loops.

use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::{backward, forward, Gradients, Init, LayerParams, LayerShape};
use crate::numerics::{sigmoid_scalar, Matrix, SeededRng};
use crate::orderedness::{orderedness_with_scope, MassScope, OrderednessResult};
use crate::pruning::{apply_pruning, Progress, PruneSpec};

/// Sub-stream roles; a run's stream for a role is seeded with `seed ^ role`.
pub mod role {
    pub const WEIGHTS: u64 = 0x9E37_79B9_7F4A_7C15;
    pub const VALUES: u64 = 0xBF58_476D_1CE4_E5B9;
    pub const DATA: u64 = 0x94D0_49BB_1331_11EB;
    pub const PRUNE: u64 = 0xD6E8_FEB8_6659_FD93;
    pub const BASELINE: u64 = 0xA076_1D64_78BD_642F;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Xor,
    Sine,
    /// XOR-shaped layer whose pruning logic runs without gradient updates.
    Untrained,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "xor" => Ok(Task::Xor),
            "sine" => Ok(Task::Sine),
            "untrained" => Ok(Task::Untrained),
            other => Err(Error::Config(format!(
                "unknown task {other:?} (expected xor, sine or untrained)"
            ))),
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Xor => "xor",
            Task::Sine => "sine",
            Task::Untrained => "untrained",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskBatch {
    pub x: Matrix,
    pub y: Matrix,
}

/// The full XOR truth table.
pub fn xor_batch() -> TaskBatch {
    let x = Matrix::from_rows(&[
        vec![0.0, 0.0],
        vec![0.0, 1.0],
        vec![1.0, 0.0],
        vec![1.0, 1.0],
    ])
    .expect("static table");
    let y = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![1.0], vec![0.0]]).expect("static table");
    TaskBatch { x, y }
}

pub fn sine_target(a: f64, b: f64) -> f64 {
    (a.sin() + b.sin()) / 2.0
}

/// `B` fresh pairs `a, b ~ U[0, 3)` with target `(sin a + sin b) / 2`.
pub fn sine_batch(rng: &mut SeededRng, batch: usize) -> Result<TaskBatch> {
    if batch == 0 {
        return Err(Error::Config("sine batch size must be >= 1".into()));
    }
    let mut x = Matrix::zeros(batch, 2);
    let mut y = Matrix::zeros(batch, 1);
    for r in 0..batch {
        let a = rng.uniform_range(0.0, 3.0);
        let b = rng.uniform_range(0.0, 3.0);
        x[(r, 0)] = a;
        x[(r, 1)] = b;
        y[(r, 0)] = sine_target(a, b);
    }
    Ok(TaskBatch { x, y })
}

/// Fixed 11×11 grid over `[0, 3]²` used to score a sine model.
pub fn sine_eval_grid() -> TaskBatch {
    let pts: Vec<f64> = (0..=10).map(|k| 0.3 * k as f64).collect();
    let mut x = Matrix::zeros(pts.len() * pts.len(), 2);
    let mut y = Matrix::zeros(pts.len() * pts.len(), 1);
    let mut r = 0;
    for &a in &pts {
        for &b in &pts {
            x[(r, 0)] = a;
            x[(r, 1)] = b;
            y[(r, 0)] = sine_target(a, b);
            r += 1;
        }
    }
    TaskBatch { x, y }
}

/// Mean squared error over all entries and its gradient `2(p − t)/(B·o)`.
pub fn mse(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "mse: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let diff = pred.sub(target)?;
    let loss = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

/// Bias-corrected Adam moments for one flat parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// One Adam per layer tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    weights: Adam,
    values: Adam,
    bias: Option<Adam>,
    freeze_values: bool,
}

impl AdamState {
    pub fn new(params: &LayerParams, lr: f64, freeze_values: bool) -> Self {
        Self {
            weights: Adam::new(params.weights.len(), lr),
            values: Adam::new(params.values.len(), lr),
            bias: params.bias.as_ref().map(|b| Adam::new(b.len(), lr)),
            freeze_values,
        }
    }
}

/// Applies one Adam update and re-zeroes masked weights.
pub fn adam_step(state: &mut AdamState, params: &mut LayerParams, grads: &Gradients) -> Result<()> {
    state
        .weights
        .update(params.weights.as_mut_slice(), grads.weights.as_slice())?;
    if !state.freeze_values {
        state.values.update(&mut params.values, &grads.values)?;
    }
    match (&mut state.bias, &mut params.bias, &grads.bias) {
        (Some(opt), Some(b), Some(g)) => opt.update(b, g)?,
        (None, None, _) => {}
        _ => return Err(Error::Contract("bias present in only some of state/params/grads".into())),
    }
    params.apply_mask();
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub shape: LayerShape,
    pub init_w: Init,
    pub init_v: Init,
    pub bias: bool,
    pub freeze_values: bool,
    pub prune: PruneSpec,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    pub scope: MassScope,
}

impl TrainConfig {
    /// Defaults per task: XOR has 5 hidden units, batch 4, 1000 steps; Sine 10
    /// hidden units, batch 10, 600 steps; the untrained control uses the XOR
    /// layer and evolves the pruning logic for 10 steps. All use 3 iterations.
    pub fn defaults(task: Task) -> Self {
        let (hidden, batch, steps) = match task {
            Task::Xor => (5, 4, 1000),
            Task::Sine => (10, 10, 600),
            Task::Untrained => (5, 4, 10),
        };
        Self {
            task,
            shape: LayerShape {
                outputs: 1,
                hidden,
                inputs: 2,
                iters: 3,
            },
            init_w: Init::Normal,
            init_v: Init::Normal,
            bias: false,
            freeze_values: false,
            prune: PruneSpec::None,
            steps,
            batch,
            lr: 0.01,
            seed: 0,
            scope: MassScope::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        self.prune.validate()?;
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be > 0", self.lr)));
        }
        if self.shape.outputs != 1 || self.shape.inputs != 2 {
            return Err(Error::Config(
                "the synthetic tasks need 1 output and 2 inputs".into(),
            ));
        }
        if self.init_w == Init::Zeros {
            return Err(Error::Config("weights cannot be zero-initialised".into()));
        }
        Ok(())
    }

    fn batch_source(&self) -> BatchSource {
        match self.task {
            Task::Xor | Task::Untrained => BatchSource::Xor(xor_batch()),
            Task::Sine => BatchSource::Sine(self.batch),
        }
    }

    fn eval_batch(&self) -> TaskBatch {
        match self.task {
            Task::Xor | Task::Untrained => xor_batch(),
            Task::Sine => sine_eval_grid(),
        }
    }
}

enum BatchSource {
    Xor(TaskBatch),
    Sine(usize),
}

impl BatchSource {
    fn next(&self, rng: &mut SeededRng) -> Result<TaskBatch> {
        match self {
            BatchSource::Xor(b) => Ok(b.clone()),
            BatchSource::Sine(n) => sine_batch(rng, *n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    /// Training loss at each step, measured before that step's update.
    pub losses: Vec<f64>,
    /// Loss of the final (pruned) parameters on the task's evaluation set:
    /// the XOR truth table or an 11×11 sine grid.
    pub final_loss: Option<f64>,
    pub o_pre: OrderednessResult,
    pub o_post: Option<OrderednessResult>,
    pub delta_o: Option<f64>,
    pub diverged: bool,
    pub masked_fraction: f64,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl RunRecord {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }
}

pub fn init_params(cfg: &TrainConfig) -> Result<LayerParams> {
    LayerParams::init(
        &cfg.shape,
        cfg.init_w,
        cfg.init_v,
        cfg.bias,
        &mut SeededRng::derive(cfg.seed, role::WEIGHTS),
        &mut SeededRng::derive(cfg.seed, role::VALUES),
    )
}

/// Loss of `params` on `batch`.
pub fn evaluate(shape: &LayerShape, params: &LayerParams, batch: &TaskBatch) -> Result<f64> {
    let (y, _) = forward(shape, params, &batch.x, false)?;
    Ok(mse(&y, &batch.y)?.0)
}

/// Trains a complete perceptron layer and returns the run record together with
/// the final parameters.
pub fn run_clp(cfg: &TrainConfig) -> Result<(RunRecord, LayerParams)> {
    cfg.validate()?;
    let started = Instant::now();
    let shape = cfg.shape;
    let mut params = init_params(cfg)?;
    let mut data_rng = SeededRng::derive(cfg.seed, role::DATA);
    let mut prune_rng = SeededRng::derive(cfg.seed, role::PRUNE);
    let mut adam = AdamState::new(&params, cfg.lr, cfg.freeze_values);
    let source = cfg.batch_source();
    let learn = cfg.task != Task::Untrained;

    let o_pre = orderedness_with_scope(&params.effective_weights(), &shape, cfg.scope)?;
    apply_pruning(&cfg.prune, &mut params, Progress::at(0, cfg.steps), &mut prune_rng)?;

    let mut losses = Vec::with_capacity(cfg.steps);
    let mut diverged = false;
    for step in 1..=cfg.steps {
        let batch = source.next(&mut data_rng)?;
        let (y, trace) = forward(&shape, &params, &batch.x, learn)?;
        let (loss, grad) = mse(&y, &batch.y)?;
        if !loss.is_finite() {
            diverged = true;
            break;
        }
        losses.push(loss);
        if learn {
            let trace = trace.expect("trace requested");
            let grads = backward(&shape, &params, &trace, &grad)?;
            adam_step(&mut adam, &mut params, &grads)?;
            if !params.weights.is_finite() || params.values.iter().any(|v| !v.is_finite()) {
                diverged = true;
                break;
            }
        }
        apply_pruning(&cfg.prune, &mut params, Progress::at(step, cfg.steps), &mut prune_rng)?;
    }

    let (final_loss, o_post) = if diverged {
        (None, None)
    } else {
        let loss = evaluate(&shape, &params, &cfg.eval_batch())?;
        let o = orderedness_with_scope(&params.effective_weights(), &shape, cfg.scope)?;
        (Some(loss), Some(o))
    };
    let delta_o = o_post.as_ref().map(|o| o.orderedness - o_pre.orderedness);
    let masked_fraction = params.masked_count() as f64 / params.mask.len() as f64;
    let record = RunRecord {
        config: cfg.clone(),
        losses,
        final_loss,
        o_pre,
        o_post,
        delta_o,
        diverged,
        masked_fraction,
        wall_time: started.elapsed(),
    };
    Ok((record, params))
}

pub fn train_clp(cfg: &TrainConfig) -> Result<RunRecord> {
    Ok(run_clp(cfg)?.0)
}

/// Early-stopping threshold for the MLP baseline.
pub const BASELINE_STOP_LOSS: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub task: Task,
    pub seed: u64,
    pub hidden: usize,
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub stopped_early: bool,
}

/// One-hidden-layer sigmoid MLP with biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    inputs: usize,
    hidden: usize,
    /// `[w1 (hidden×inputs) | b1 | w2 (hidden) | b2]`
    params: Vec<f64>,
}

impl Mlp {
    /// Uniform `±1/√fan_in` initialisation for each layer.
    pub fn new(inputs: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let mut params = Vec::with_capacity(hidden * inputs + 2 * hidden + 1);
        let a1 = 1.0 / (inputs as f64).sqrt();
        for _ in 0..hidden * inputs + hidden {
            params.push(rng.uniform_range(-a1, a1));
        }
        let a2 = 1.0 / (hidden as f64).sqrt();
        for _ in 0..hidden + 1 {
            params.push(rng.uniform_range(-a2, a2));
        }
        Self {
            inputs,
            hidden,
            params,
        }
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], f64) {
        let (w1, rest) = self.params.split_at(self.hidden * self.inputs);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.hidden);
        (w1, b1, w2, b2[0])
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let (w1, b1, w2, b2) = self.split();
        let mut z = b2;
        for j in 0..self.hidden {
            let a = b1[j]
                + (0..self.inputs)
                    .map(|k| w1[j * self.inputs + k] * x[k])
                    .sum::<f64>();
            z += w2[j] * sigmoid_scalar(a);
        }
        sigmoid_scalar(z)
    }

    /// Batch MSE and its gradient with respect to the flat parameter vector.
    pub fn loss_and_grad(&self, batch: &TaskBatch) -> (f64, Vec<f64>) {
        let (w1, b1, w2, b2) = self.split();
        let (h, n) = (self.hidden, self.inputs);
        let rows = batch.x.rows();
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let mut act = vec![0.0; h];
        for r in 0..rows {
            let x = batch.x.row(r);
            let mut z = b2;
            for j in 0..h {
                let a = b1[j] + (0..n).map(|k| w1[j * n + k] * x[k]).sum::<f64>();
                act[j] = sigmoid_scalar(a);
                z += w2[j] * act[j];
            }
            let y = sigmoid_scalar(z);
            let diff = y - batch.y[(r, 0)];
            loss += diff * diff;
            let gz = 2.0 * diff / rows as f64 * y * (1.0 - y);
            let (g_w1, rest) = grad.split_at_mut(h * n);
            let (g_b1, rest) = rest.split_at_mut(h);
            let (g_w2, g_b2) = rest.split_at_mut(h);
            g_b2[0] += gz;
            for j in 0..h {
                g_w2[j] += gz * act[j];
                let ga = gz * w2[j] * act[j] * (1.0 - act[j]);
                g_b1[j] += ga;
                for k in 0..n {
                    g_w1[j * n + k] += ga * x[k];
                }
            }
        }
        (loss / rows as f64, grad)
    }
}

/// Sigmoid MLP baseline: 2 hidden units for XOR, 10 for Sine, same batch size,
/// optimiser and learning rate as the default layer, stopping once the
/// training loss falls below [`BASELINE_STOP_LOSS`].
pub fn train_mlp_baseline(task: Task, seed: u64) -> Result<BaselineRecord> {
    let cfg = TrainConfig::defaults(task);
    let hidden = match task {
        Task::Xor => 2,
        Task::Sine => 10,
        Task::Untrained => {
            return Err(Error::Config("the MLP baseline needs a trainable task".into()))
        }
    };
    let mut init_rng = SeededRng::derive(seed, role::BASELINE);
    let mut data_rng = SeededRng::derive(seed, role::DATA);
    let mut mlp = Mlp::new(2, hidden, &mut init_rng);
    let mut adam = Adam::new(mlp.params.len(), cfg.lr);
    let source = cfg.batch_source();
    let mut losses = Vec::new();
    let mut stopped_early = false;
    for _ in 0..cfg.steps {
        let batch = source.next(&mut data_rng)?;
        let (loss, grad) = mlp.loss_and_grad(&batch);
        losses.push(loss);
        if loss < BASELINE_STOP_LOSS {
            stopped_early = true;
            break;
        }
        adam.update(&mut mlp.params, &grad)?;
    }
    let final_loss = *losses.last().expect("at least one step");
    Ok(BaselineRecord {
        task,
        seed,
        hidden,
        losses,
        final_loss,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_truth_table() {
        let b = xor_batch();
        let rows: Vec<(f64, f64, f64)> = (0..4).map(|r| (b.x[(r, 0)], b.x[(r, 1)], b.y[(r, 0)])).collect();
        assert!(rows.contains(&(0.0, 0.0, 0.0)));
        assert!(rows.contains(&(1.0, 0.0, 1.0)));
        assert!(rows.contains(&(0.0, 1.0, 1.0)));
        assert!(rows.contains(&(1.0, 1.0, 0.0)));
    }

    #[test]
    fn sine_targets() {
        assert_eq!(sine_target(0.0, 0.0), 0.0);
        let half_pi = std::f64::consts::FRAC_PI_2;
        assert!((sine_target(half_pi, half_pi) - 1.0).abs() < 1e-15);
        // sin(3)/2 to 30 digits: 0.0705600040299336110503724014041
        assert!((sine_target(3.0, 0.0) - 0.070_560_004_029_933_6).abs() < 1e-16);
        let b = sine_batch(&mut SeededRng::new(1), 50).unwrap();
        for r in 0..50 {
            let (a, c) = (b.x[(r, 0)], b.x[(r, 1)]);
            assert!((0.0..3.0).contains(&a) && (0.0..3.0).contains(&c));
            assert!(b.y[(r, 0)] >= 0.0 && b.y[(r, 0)] <= 1.0);
            assert_eq!(b.y[(r, 0)], sine_target(a, c));
        }
        assert!(sine_batch(&mut SeededRng::new(1), 0).is_err());
    }

    #[test]
    fn mse_by_hand() {
        let p = Matrix::from_rows(&[vec![0.5]]).unwrap();
        let t = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let (l, g) = mse(&p, &t).unwrap();
        assert_eq!(l, 0.25);
        assert_eq!(g[(0, 0)], -1.0);
        let (l, g) = mse(&t, &t).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
        let a = Matrix::filled(3, 2, 2.0);
        let (l, _) = mse(&a, &Matrix::filled(3, 2, 1.0)).unwrap();
        assert_eq!(l, 1.0);
        assert!(mse(&a, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn adam_behaviour() {
        let mut opt = Adam::new(3, 0.01);
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..50 {
            opt.update(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);

        // First step: m̂ = g, v̂ = g², update = lr · g / (|g| + ε).
        let mut opt = Adam::new(2, 0.01);
        let mut p = vec![0.0, 0.0];
        opt.update(&mut p, &[3.0, -0.2]).unwrap();
        assert!((p[0] + 0.01 * 3.0 / (3.0 + 1e-8)).abs() < 1e-15);
        assert!((p[1] - 0.01 * 0.2 / (0.2 + 1e-8)).abs() < 1e-15);

        // Scalar simulation of the update rule under a constant gradient.
        let mut opt = Adam::new(1, 0.01);
        let mut p = vec![0.0];
        let (mut m, mut v, mut q) = (0.0f64, 0.0f64, 0.0f64);
        let mut prev = 0.0;
        for t in 1..=100 {
            opt.update(&mut p, &[0.7]).unwrap();
            m = 0.9 * m + 0.1 * 0.7;
            v = 0.999 * v + 0.001 * 0.49;
            q -= 0.01 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
            assert!(p[0] < prev);
            prev = p[0];
        }
        assert!((p[0] - q).abs() < 1e-12);
        assert!(opt.update(&mut p, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn single_step_gradient_matches_finite_differences() {
        let cfg = TrainConfig {
            bias: true,
            ..TrainConfig::defaults(Task::Xor)
        };
        let mut params = init_params(&cfg).unwrap();
        params.bias = Some(vec![0.3, -0.1, 0.2, 0.0, -0.4, 0.1]);
        let batch = xor_batch();
        let (y, trace) = forward(&cfg.shape, &params, &batch.x, true).unwrap();
        let (_, g) = mse(&y, &batch.y).unwrap();
        let grads = backward(&cfg.shape, &params, &trace.unwrap(), &g).unwrap();
        let loss_at = |p: &LayerParams| evaluate(&cfg.shape, p, &batch).unwrap();
        let eps = 1e-5;
        for idx in 0..params.weights.len() {
            let mut plus = params.clone();
            plus.weights.as_mut_slice()[idx] += eps;
            let mut minus = params.clone();
            minus.weights.as_mut_slice()[idx] -= eps;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
            let an = grads.weights.as_slice()[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-5, "w[{idx}] fd={fd} an={an}");
        }
        for k in 0..6 {
            let mut plus = params.clone();
            plus.bias.as_mut().unwrap()[k] += eps;
            let mut minus = params.clone();
            minus.bias.as_mut().unwrap()[k] -= eps;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
            let an = grads.bias.as_ref().unwrap()[k];
            assert!((fd - an).abs() / fd.abs().max(an.abs()).max(1e-8) < 1e-5);
        }
    }

    #[test]
    fn run_bookkeeping_and_determinism() {
        let cfg = TrainConfig {
            steps: 1,
            seed: 3,
            ..TrainConfig::defaults(Task::Xor)
        };
        let r = train_clp(&cfg).unwrap();
        assert_eq!(r.losses.len(), 1);
        assert!(train_clp(&TrainConfig { steps: 0, ..cfg.clone() }).is_err());

        let cfg = TrainConfig {
            steps: 200,
            prune: PruneSpec::DynTopK(0.5),
            seed: 9,
            ..TrainConfig::defaults(Task::Sine)
        };
        let a = train_clp(&cfg).unwrap();
        let b = train_clp(&cfg).unwrap();
        assert_eq!(a.to_json_line().unwrap(), b.to_json_line().unwrap());
        let mut back = RunRecord::from_json_line(&a.to_json_line().unwrap()).unwrap();
        back.wall_time = a.wall_time;
        assert_eq!(a, back);
    }

    #[test]
    fn masked_weights_stay_zero_through_training() {
        for prune in [PruneSpec::Random(0.5), PruneSpec::TopK(0.5), PruneSpec::DynTopK(0.3)] {
            let cfg = TrainConfig {
                prune,
                seed: 1,
                ..TrainConfig::defaults(Task::Xor)
            };
            let mut check = cfg.clone();
            for steps in (100..=1000).step_by(100) {
                check.steps = steps;
                let (_, p) = run_clp(&check).unwrap();
                for (w, m) in p.weights.as_slice().iter().zip(p.mask.as_slice()) {
                    if *m == 0.0 {
                        assert_eq!(*w, 0.0, "{prune} at {steps}");
                    }
                }
            }
        }
    }

    #[test]
    fn untrained_control_only_prunes() {
        let cfg = TrainConfig {
            prune: PruneSpec::None,
            seed: 4,
            ..TrainConfig::defaults(Task::Untrained)
        };
        let (r, p) = run_clp(&cfg).unwrap();
        assert_eq!(p, init_params(&cfg).unwrap());
        assert_eq!(r.delta_o, Some(0.0));
        assert_eq!(r.losses.len(), 10);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mlp = Mlp::new(2, 3, &mut SeededRng::new(2));
        let batch = sine_batch(&mut SeededRng::new(3), 7).unwrap();
        let (_, grad) = mlp.loss_and_grad(&batch);
        let eps = 1e-6;
        for (k, &g) in grad.iter().enumerate() {
            let mut plus = mlp.clone();
            plus.params[k] += eps;
            let mut minus = mlp.clone();
            minus.params[k] -= eps;
            let fd = (plus.loss_and_grad(&batch).0 - minus.loss_and_grad(&batch).0) / (2.0 * eps);
            assert!((fd - g).abs() < 1e-8, "param {k}: {fd} vs {g}");
        }
        let x = [0.4, 1.3];
        assert!(mlp.predict(&x) > 0.0 && mlp.predict(&x) < 1.0);
    }

    #[test]
    fn baseline_is_deterministic() {
        let a = train_mlp_baseline(Task::Sine, 5).unwrap();
        let b = train_mlp_baseline(Task::Sine, 5).unwrap();
        assert_eq!(a, b);
        assert!(train_mlp_baseline(Task::Untrained, 0).is_err());
    }
}
