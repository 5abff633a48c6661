//! Pruning operators acting on the weight matrix during training.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::LayerParams;
use crate::numerics::{Matrix, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PruneSpec {
    None,
    /// One-shot random mask, each weight dropped with probability `p`.
    Random(f64),
    /// Keep the top `k` fraction by magnitude from the start.
    TopK(f64),
    /// Top-k with the kept fraction eased from 1 down to `k`.
    DynTopK(f64),
    /// Shrink the strict lower triangle by `f` on every application.
    TrilDamp(f64),
    /// Tril-damping with the factor eased from 0 up to `f`.
    DynTrilDamp(f64),
}

impl PruneSpec {
    pub fn coefficient(&self) -> Option<f64> {
        match *self {
            PruneSpec::None => None,
            PruneSpec::Random(c)
            | PruneSpec::TopK(c)
            | PruneSpec::DynTopK(c)
            | PruneSpec::TrilDamp(c)
            | PruneSpec::DynTrilDamp(c) => Some(c),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PruneSpec::None => "none",
            PruneSpec::Random(_) => "random",
            PruneSpec::TopK(_) => "topk",
            PruneSpec::DynTopK(_) => "dyntopk",
            PruneSpec::TrilDamp(_) => "trildamp",
            PruneSpec::DynTrilDamp(_) => "dyntrildamp",
        }
    }

    /// Same operator with a different coefficient.
    pub fn with_coefficient(&self, c: f64) -> Result<Self> {
        let spec = match self {
            PruneSpec::None => PruneSpec::None,
            PruneSpec::Random(_) => PruneSpec::Random(c),
            PruneSpec::TopK(_) => PruneSpec::TopK(c),
            PruneSpec::DynTopK(_) => PruneSpec::DynTopK(c),
            PruneSpec::TrilDamp(_) => PruneSpec::TrilDamp(c),
            PruneSpec::DynTrilDamp(_) => PruneSpec::DynTrilDamp(c),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.coefficient() {
            Some(c) if !(0.0..=1.0).contains(&c) => Err(Error::Config(format!(
                "{} coefficient {c} outside [0, 1]",
                self.name()
            ))),
            _ => Ok(()),
        }
    }
}

impl FromStr for PruneSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "none" {
            return Ok(PruneSpec::None);
        }
        let (kind, coef) = s.split_once(':').ok_or_else(|| {
            Error::Config(format!(
                "prune spec {s:?} must be `none` or `<kind>:<coefficient>`"
            ))
        })?;
        let c: f64 = coef
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("bad prune coefficient {coef:?}")))?;
        let spec = match kind.trim() {
            "random" => PruneSpec::Random(c),
            "topk" => PruneSpec::TopK(c),
            "dyntopk" => PruneSpec::DynTopK(c),
            "trildamp" => PruneSpec::TrilDamp(c),
            "dyntrildamp" => PruneSpec::DynTrilDamp(c),
            other => {
                return Err(Error::Config(format!(
                    "unknown pruning operator {other:?} \
                     (expected none, random, topk, dyntopk, trildamp, dyntrildamp)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for PruneSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.coefficient() {
            None => f.write_str("none"),
            Some(c) => write!(f, "{}:{}", self.name(), c),
        }
    }
}

impl TryFrom<String> for PruneSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PruneSpec> for String {
    fn from(p: PruneSpec) -> String {
        p.to_string()
    }
}

/// Training progress in `[0, 1]`: completed steps over total steps.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Progress(f64);

impl Progress {
    pub fn new(x: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&x) {
            Ok(Self(x))
        } else {
            Err(Error::Contract(format!("progress {x} outside [0, 1]")))
        }
    }

    pub fn at(step: usize, total: usize) -> Self {
        if total == 0 {
            return Self(1.0);
        }
        Self((step.min(total)) as f64 / total as f64)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} = {v} outside [0, 1]")))
    }
}

fn sin4_ramp(x: f64) -> f64 {
    // The endpoints are pinned so the schedules hit their targets exactly.
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        (FRAC_PI_2 * x).sin().powi(4)
    }
}

/// Kept fraction `1 - (1 - k) sin⁴(πx/2)`, written as `k + (1 - k)(1 - sin⁴)`
/// so that `x = 1` returns `k` bit for bit.
pub fn dyn_topk_fraction(k: f64, x: Progress) -> f64 {
    let ramp = sin4_ramp(x.value());
    if ramp == 0.0 {
        1.0
    } else {
        k + (1.0 - k) * (1.0 - ramp)
    }
}

/// Damping factor `f sin⁴(πx/2)`.
pub fn dyn_tril_fraction(f: f64, x: Progress) -> f64 {
    f * sin4_ramp(x.value())
}

/// Drops each currently unmasked entry with probability `p`.
pub fn random_prune(mask: &mut Matrix, p: f64, rng: &mut SeededRng) -> Result<()> {
    check_unit("random prune probability", p)?;
    for m in mask.as_mut_slice() {
        // One draw per entry keeps the stream aligned regardless of mask state.
        let drop = rng.bernoulli(p);
        if *m != 0.0 && drop {
            *m = 0.0;
        }
    }
    Ok(())
}

/// Mask keeping the `ceil(k_eff · numel)` entries of largest `|W|`; ties go to
/// the lower flat index.
pub fn topk_mask(weights: &Matrix, k_eff: f64) -> Result<Matrix> {
    check_unit("top-k fraction", k_eff)?;
    let n = weights.len();
    let keep = ((k_eff * n as f64).ceil() as usize).min(n);
    let vals = weights.as_slice();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()).then(a.cmp(&b)));
    let mut mask = Matrix::zeros(weights.rows(), weights.cols());
    for &idx in &order[..keep] {
        mask.as_mut_slice()[idx] = 1.0;
    }
    Ok(mask)
}

/// `W ← W − f·tril(W, −1)` on the leading square block. Row `r` only has
/// strictly-lower entries in columns `< r`, so input columns are never touched.
pub fn tril_damp(weights: &mut Matrix, f_eff: f64) -> Result<()> {
    check_unit("tril-damp factor", f_eff)?;
    let keep = 1.0 - f_eff;
    for r in 0..weights.rows() {
        let row = weights.row_mut(r);
        let end = r.min(row.len());
        for v in &mut row[..end] {
            *v *= keep;
        }
    }
    Ok(())
}

/// Applies one pruning event. Called at progress 0 before any update and then
/// after every optimiser step.
pub fn apply_pruning(
    spec: &PruneSpec,
    params: &mut LayerParams,
    x: Progress,
    rng: &mut SeededRng,
) -> Result<()> {
    spec.validate()?;
    match *spec {
        PruneSpec::None => {}
        PruneSpec::Random(p) => {
            if x.value() == 0.0 {
                random_prune(&mut params.mask, p, rng)?;
                params.apply_mask();
            }
        }
        PruneSpec::TopK(k) => {
            params.mask = topk_mask(&params.effective_weights(), k)?;
            params.apply_mask();
        }
        PruneSpec::DynTopK(k) => {
            params.mask = topk_mask(&params.effective_weights(), dyn_topk_fraction(k, x))?;
            params.apply_mask();
        }
        PruneSpec::TrilDamp(f) => tril_damp(&mut params.weights, f)?,
        PruneSpec::DynTrilDamp(f) => tril_damp(&mut params.weights, dyn_tril_fraction(f, x))?,
    }
    Ok(())
}
