//! The complete perceptron layer.
//!
//! Neurons are indexed outputs first, then hidden units, then inputs. Row `r`
//! of the weight matrix holds the incoming weights of neuron `r`, so
//! `W[(r, c)]` is the connection from neuron `c` into neuron `r`. Only the
//! `o + h` non-input neurons have rows; inputs are clamped.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{parse_csv_row, randn, randu, sigmoid, Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub outputs: usize,
    pub hidden: usize,
    pub inputs: usize,
    pub iters: usize,
}

impl LayerShape {
    pub fn new(outputs: usize, hidden: usize, inputs: usize, iters: usize) -> Result<Self> {
        let shape = Self {
            outputs,
            hidden,
            inputs,
            iters,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.outputs == 0 || self.inputs == 0 || self.iters == 0 {
            return Err(Error::Config(format!(
                "layer shape needs outputs, inputs and iters >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Number of evolving neurons, `o + h`.
    pub fn state_size(&self) -> usize {
        self.outputs + self.hidden
    }

    /// Columns of the weight matrix, `o + h + i`.
    pub fn fan_in(&self) -> usize {
        self.state_size() + self.inputs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Normal,
    Uniform,
    Zeros,
}

impl Init {
    fn sample(self, rng: &mut SeededRng, rows: usize, cols: usize) -> Result<Matrix> {
        match self {
            Init::Normal => randn(rng, rows, cols),
            Init::Uniform => randu(rng, rows, cols),
            Init::Zeros => Ok(Matrix::zeros(rows, cols)),
        }
    }
}

impl FromStr for Init {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Init::Normal),
            "uniform" => Ok(Init::Uniform),
            "zeros" => Ok(Init::Zeros),
            other => Err(Error::Config(format!(
                "unknown initialiser {other:?} (expected normal, uniform or zeros)"
            ))),
        }
    }
}

impl std::fmt::Display for Init {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Init::Normal => "normal",
            Init::Uniform => "uniform",
            Init::Zeros => "zeros",
        })
    }
}

/// Trainable state of one layer. The mask is binary and `weights` is kept
/// exactly zero wherever the mask is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Matrix,
    pub values: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub mask: Matrix,
}

impl LayerParams {
    /// All-zero parameters with a full mask.
    pub fn zeros(shape: &LayerShape, bias: bool) -> Self {
        let n = shape.state_size();
        Self {
            weights: Matrix::zeros(n, shape.fan_in()),
            values: vec![0.0; n],
            bias: bias.then(|| vec![0.0; n]),
            mask: Matrix::filled(n, shape.fan_in(), 1.0),
        }
    }

    /// Weights and values drawn from separate streams; bias starts at zero.
    pub fn init(
        shape: &LayerShape,
        init_w: Init,
        init_v: Init,
        bias: bool,
        w_rng: &mut SeededRng,
        v_rng: &mut SeededRng,
    ) -> Result<Self> {
        shape.validate()?;
        let n = shape.state_size();
        let weights = init_w.sample(w_rng, n, shape.fan_in())?;
        let values = init_v.sample(v_rng, 1, n)?.into_vec();
        Ok(Self {
            mask: Matrix::filled(n, shape.fan_in(), 1.0),
            weights,
            values,
            bias: bias.then(|| vec![0.0; n]),
        })
    }

    pub fn check(&self, shape: &LayerShape) -> Result<()> {
        let n = shape.state_size();
        let expect = (n, shape.fan_in());
        if self.weights.shape() != expect {
            return Err(Error::Dimension(format!(
                "weights are {:?}, shape {shape:?} needs {expect:?}",
                self.weights.shape()
            )));
        }
        if self.mask.shape() != expect {
            return Err(Error::Dimension(format!(
                "mask is {:?}, expected {expect:?}",
                self.mask.shape()
            )));
        }
        if self.values.len() != n {
            return Err(Error::Dimension(format!(
                "values vector has {} entries, expected {n}",
                self.values.len()
            )));
        }
        if let Some(b) = &self.bias {
            if b.len() != n {
                return Err(Error::Dimension(format!(
                    "bias vector has {} entries, expected {n}",
                    b.len()
                )));
            }
        }
        Ok(())
    }

    /// `W ⊙ mask`.
    pub fn effective_weights(&self) -> Matrix {
        self.weights
            .hadamard(&self.mask)
            .expect("mask shape checked on construction")
    }

    /// Re-zeroes weights under a zero mask entry.
    pub fn apply_mask(&mut self) {
        for (w, m) in self
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(self.mask.as_slice())
        {
            if *m == 0.0 {
                *w = 0.0;
            }
        }
    }

    pub fn masked_count(&self) -> usize {
        self.mask.as_slice().iter().filter(|&&m| m == 0.0).count()
    }

    fn bias_row(&self) -> Option<&[f64]> {
        self.bias.as_deref()
    }
}

/// States `s(0) ..= s(T)` of one forward pass and the clamped input.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    pub states: Vec<Matrix>,
    pub input: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Matrix,
    pub values: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

fn check_input(shape: &LayerShape, params: &LayerParams, x: &Matrix) -> Result<()> {
    shape.validate()?;
    params.check(shape)?;
    if x.cols() != shape.inputs {
        return Err(Error::Dimension(format!(
            "input has {} columns, layer expects {}",
            x.cols(),
            shape.inputs
        )));
    }
    if x.rows() == 0 {
        return Err(Error::Dimension("empty batch".into()));
    }
    Ok(())
}

/// Evolves the layer `T` times from `s(0) = v` with `x` clamped and returns
/// the first `o` columns of the final state.
pub fn forward(
    shape: &LayerShape,
    params: &LayerParams,
    x: &Matrix,
    trace: bool,
) -> Result<(Matrix, Option<StateTrace>)> {
    check_input(shape, params, x)?;
    let w = params.effective_weights();
    let mut s = Matrix::repeat_row(&params.values, x.rows());
    let mut states = Vec::with_capacity(if trace { shape.iters + 1 } else { 0 });
    for _ in 0..shape.iters {
        let h = s.concat_cols(x)?;
        let mut z = h.matmul_transposed(&w)?;
        if let Some(b) = params.bias_row() {
            z = z.add_row(b)?;
        }
        let next = sigmoid(&z);
        if trace {
            states.push(std::mem::replace(&mut s, next));
        } else {
            s = next;
        }
    }
    let out = s.slice_cols(0, shape.outputs)?;
    let trace = trace.then(|| {
        states.push(s);
        StateTrace {
            states,
            input: x.clone(),
        }
    });
    Ok((out, trace))
}

/// Same evolution written as a weight-tied RNN with constant input:
/// `s ← σ(s·W_sᵀ + x·W_xᵀ + b)`, `W = [W_s | W_x]`.
pub fn forward_rnn_form(shape: &LayerShape, params: &LayerParams, x: &Matrix) -> Result<Matrix> {
    check_input(shape, params, x)?;
    let n = shape.state_size();
    let w = params.effective_weights();
    let w_state = w.slice_cols(0, n)?;
    let w_input = w.slice_cols(n, shape.fan_in())?;
    let mut drive = x.matmul_transposed(&w_input)?;
    if let Some(b) = params.bias_row() {
        drive = drive.add_row(b)?;
    }
    let mut s = Matrix::repeat_row(&params.values, x.rows());
    for _ in 0..shape.iters {
        s = sigmoid(&s.matmul_transposed(&w_state)?.add(&drive)?);
    }
    s.slice_cols(0, shape.outputs)
}

/// Reverse-mode gradients of `Σ grad_output ⊙ output` through all `T` steps,
/// including the path into the initial values. Masked weight gradients are 0.
pub fn backward(
    shape: &LayerShape,
    params: &LayerParams,
    trace: &StateTrace,
    grad_output: &Matrix,
) -> Result<Gradients> {
    params.check(shape)?;
    let n = shape.state_size();
    let batch = trace.input.rows();
    if trace.states.len() != shape.iters + 1
        || trace.input.cols() != shape.inputs
        || trace
            .states
            .iter()
            .any(|s| s.shape() != (batch, n))
    {
        return Err(Error::Contract(
            "state trace does not belong to this layer shape".into(),
        ));
    }
    if grad_output.shape() != (batch, shape.outputs) {
        return Err(Error::Contract(format!(
            "output gradient is {:?}, expected {:?}",
            grad_output.shape(),
            (batch, shape.outputs)
        )));
    }

    let w = params.effective_weights();
    let w_state = w.slice_cols(0, n)?;
    let mut dw = Matrix::zeros(n, shape.fan_in());
    let mut db = vec![0.0; n];

    let mut gs = Matrix::zeros(batch, n);
    for r in 0..batch {
        gs.row_mut(r)[..shape.outputs].copy_from_slice(grad_output.row(r));
    }

    for t in (1..=shape.iters).rev() {
        let s = &trace.states[t];
        // Through the sigmoid: σ' = s (1 - s).
        let mut gz = gs;
        for (g, &y) in gz.as_mut_slice().iter_mut().zip(s.as_slice()) {
            *g *= y * (1.0 - y);
        }
        let h = trace.states[t - 1].concat_cols(&trace.input)?;
        let step_dw = gz.transpose().matmul(&h)?;
        for (a, b) in dw.as_mut_slice().iter_mut().zip(step_dw.as_slice()) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(gz.col_sums()) {
            *a += b;
        }
        gs = gz.matmul(&w_state)?;
    }

    let dv = gs.col_sums();
    let dw = dw.hadamard(&params.mask)?;
    Ok(Gradients {
        weights: dw,
        values: dv,
        bias: params.bias.as_ref().map(|_| db),
    })
}

const CHECKPOINT_HEADER: &str = "orderlab-checkpoint v1";

/// Text checkpoint: a versioned header, the shape line, then `[weights]`,
/// `[values]`, `[bias]` (or `[bias] none`) and `[mask]` CSV blocks.
pub fn checkpoint_to_string(shape: &LayerShape, params: &LayerParams) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{CHECKPOINT_HEADER}");
    let _ = writeln!(
        s,
        "shape outputs={} hidden={} inputs={} iters={}",
        shape.outputs, shape.hidden, shape.inputs, shape.iters
    );
    s.push_str("[weights]\n");
    s.push_str(&params.weights.to_csv());
    s.push_str("[values]\n");
    s.push_str(&Matrix::row_vector(&params.values).to_csv());
    match &params.bias {
        Some(b) => {
            s.push_str("[bias]\n");
            s.push_str(&Matrix::row_vector(b).to_csv());
        }
        None => s.push_str("[bias] none\n"),
    }
    s.push_str("[mask]\n");
    s.push_str(&params.mask.to_csv());
    s
}

pub fn checkpoint_from_str(text: &str) -> Result<(LayerShape, LayerParams)> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CHECKPOINT_HEADER) {
        return Err(Error::Parse(format!(
            "missing checkpoint header {CHECKPOINT_HEADER:?}"
        )));
    }
    let shape_line = lines
        .next()
        .ok_or_else(|| Error::Parse("missing shape line".into()))?;
    let shape = parse_shape_line(shape_line)?;

    let mut section: Option<&str> = None;
    let mut blocks: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    let mut bias_none = false;
    for line in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let (name, tail) = rest
                .split_once(']')
                .ok_or_else(|| Error::Parse(format!("bad section line {line:?}")))?;
            if name == "bias" && tail.trim() == "none" {
                bias_none = true;
                section = None;
                continue;
            }
            section = Some(match name {
                "weights" => "weights",
                "values" => "values",
                "bias" => "bias",
                "mask" => "mask",
                other => return Err(Error::Parse(format!("unknown section [{other}]"))),
            });
            blocks.push((name.to_string(), Vec::new()));
            continue;
        }
        if section.is_none() {
            return Err(Error::Parse(format!("data outside a section: {line:?}")));
        }
        let row = parse_csv_row(line)?;
        blocks.last_mut().expect("section pushed").1.push(row);
    }

    let take = |name: &str| -> Result<Matrix> {
        let rows = blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, rows)| rows)
            .ok_or_else(|| Error::Parse(format!("missing [{name}] block")))?;
        Matrix::from_rows(rows)
    };
    let weights = take("weights")?;
    let values = take("values")?.into_vec();
    let mask = take("mask")?;
    let bias = if bias_none {
        None
    } else {
        Some(take("bias")?.into_vec())
    };
    if mask.as_slice().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::Parse("mask entries must be 0 or 1".into()));
    }
    let params = LayerParams {
        weights,
        values,
        bias,
        mask,
    };
    params.check(&shape)?;
    Ok((shape, params))
}

fn parse_shape_line(line: &str) -> Result<LayerShape> {
    let mut fields = line.split_whitespace();
    if fields.next() != Some("shape") {
        return Err(Error::Parse(format!("bad shape line {line:?}")));
    }
    let (mut o, mut h, mut i, mut t) = (None, None, None, None);
    for kv in fields {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad shape field {kv:?}")))?;
        let v: usize = v
            .parse()
            .map_err(|_| Error::Parse(format!("bad shape value {kv:?}")))?;
        match k {
            "outputs" => o = Some(v),
            "hidden" => h = Some(v),
            "inputs" => i = Some(v),
            "iters" => t = Some(v),
            _ => return Err(Error::Parse(format!("unknown shape field {k:?}"))),
        }
    }
    match (o, h, i, t) {
        (Some(o), Some(h), Some(i), Some(t)) => LayerShape::new(o, h, i, t),
        _ => Err(Error::Parse(format!("incomplete shape line {line:?}"))),
    }
}

pub fn save_checkpoint(path: &Path, shape: &LayerShape, params: &LayerParams) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(shape, params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(LayerShape, LayerParams)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}
