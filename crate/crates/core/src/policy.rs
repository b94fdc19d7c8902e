//! The read/write policy head: a scaled bilinear energy between the current
//! decoder state and the latest encoder state, squashed by a sigmoid and
//! thresholded by a calibration value `delta`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::Action;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateVec(pub Vec<f64>);

impl StateVec {
    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for StateVec {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Parameters of the bilinear policy head. `w` is `d x d`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub d: usize,
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub bias: f64,
    pub scale: f64,
}

impl PolicyParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            w: vec![0.0; d * d],
            bias: 0.0,
            scale: 1.0,
        }
    }

    pub fn identity(d: usize) -> Self {
        let mut p = Self::zeros(d);
        for k in 0..d {
            p.w[k * d + k] = 1.0;
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.w.len() != self.d * self.d {
            return Err(Error::Dimension(format!(
                "W has {} entries, expected {}",
                self.w.len(),
                self.d * self.d
            )));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Config(format!("scale must be > 0, got {}", self.scale)));
        }
        if !self.bias.is_finite() || self.w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("policy parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        p.validate()?;
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// sᵀ W h without scaling.
    fn bilinear(&self, s: &[f64], h: &[f64]) -> f64 {
        s.iter()
            .zip(self.w.chunks(self.d))
            .map(|(&sk, row)| sk * row.iter().zip(h).map(|(w, hl)| w * hl).sum::<f64>())
            .sum()
    }
}

fn check_dims(s: &StateVec, h: &StateVec, p: &PolicyParams) -> Result<()> {
    if s.dim() != p.d || h.dim() != p.d {
        return Err(Error::Dimension(format!(
            "state dims ({}, {}) do not match policy dim {}",
            s.dim(),
            h.dim(),
            p.d
        )));
    }
    Ok(())
}

/// `scale · sᵀWh / √d + bias`.
pub fn monotonic_energy(s: &StateVec, h: &StateVec, p: &PolicyParams) -> Result<f64> {
    check_dims(s, h, p)?;
    Ok(energy_unchecked(s.as_slice(), h.as_slice(), p))
}

fn energy_unchecked(s: &[f64], h: &[f64], p: &PolicyParams) -> f64 {
    p.scale * p.bilinear(s, h) / (p.d as f64).sqrt() + p.bias
}

/// Logistic function, clamped so the result is strictly inside (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    let p = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub fn policy_probability(s: &StateVec, h: &StateVec, p: &PolicyParams) -> Result<f64> {
    Ok(sigmoid(monotonic_energy(s, h, p)?))
}

pub fn validate_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Config(format!("delta must be in (0, 1], got {delta}")));
    }
    Ok(())
}

/// WRITE iff `prob >= delta`.
pub fn decide(prob: f64, delta: f64) -> Result<Action> {
    validate_delta(delta)?;
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Config(format!("probability must be in (0, 1), got {prob}")));
    }
    Ok((prob >= delta).into())
}

/// Bernoulli draw instead of thresholding. Experimental; not used by default.
pub fn sample_decision<R: Rng + ?Sized>(prob: f64, rng: &mut R) -> Action {
    (rng.random::<f64>() < prob).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 20.0,
            epochs: 2000,
            seed: 0,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config("l2 must be >= 0".into()));
        }
        Ok(())
    }
}

/// A policy training example: decoder state, encoder state, target action.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub s: StateVec,
    pub h: StateVec,
    pub label: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainStatus {
    Ok,
    /// Every label had the same class; the fit just drives the bias.
    SingleClass,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: PolicyParams,
    pub final_loss: f64,
    /// Loss before each epoch, plus the final loss.
    pub loss_history: Vec<f64>,
    pub status: TrainStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w: Vec<f64>,
    pub bias: f64,
}

fn target(label: Action) -> f64 {
    if label.is_write() {
        1.0
    } else {
        0.0
    }
}

/// Mean binary cross-entropy plus `l2 · ‖W‖²`.
pub fn loss(cells: &[LabeledPair], p: &PolicyParams, l2: f64) -> f64 {
    let n = cells.len() as f64;
    let bce: f64 = cells
        .iter()
        .map(|c| {
            let z = energy_unchecked(c.s.as_slice(), c.h.as_slice(), p);
            // log(1 + e^z) - y·z, written to stay finite for large |z|
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - target(c.label) * z
        })
        .sum::<f64>()
        / n;
    bce + l2 * p.w.iter().map(|w| w * w).sum::<f64>()
}

/// Analytic gradient of [`loss`] with respect to `W` and `bias`.
pub fn gradient(cells: &[LabeledPair], p: &PolicyParams, l2: f64) -> Gradient {
    let d = p.d;
    let n = cells.len() as f64;
    let coef = p.scale / (d as f64).sqrt();
    let mut gw = vec![0.0; d * d];
    let mut gb = 0.0;
    for c in cells {
        let (s, h) = (c.s.as_slice(), c.h.as_slice());
        let err = sigmoid(energy_unchecked(s, h, p)) - target(c.label);
        gb += err;
        for (k, &sk) in s.iter().enumerate() {
            let a = err * coef * sk;
            if a == 0.0 {
                continue;
            }
            for (g, &hl) in gw[k * d..(k + 1) * d].iter_mut().zip(h) {
                *g += a * hl;
            }
        }
    }
    for (g, w) in gw.iter_mut().zip(&p.w) {
        *g = *g / n + 2.0 * l2 * w;
    }
    Gradient { w: gw, bias: gb / n }
}

/// Full-batch gradient descent on mean BCE, starting from `W = 0, bias = 0,
/// scale = 1`.
pub fn train_policy(cells: &[LabeledPair], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = cells.first().ok_or(Error::Empty("training cells"))?;
    let d = first.s.dim();
    for c in cells {
        if c.s.dim() != d || c.h.dim() != d {
            return Err(Error::Dimension(format!(
                "cell states must all have dimension {d}"
            )));
        }
    }
    let writes = cells.iter().filter(|c| c.label.is_write()).count();
    let status = if writes == 0 || writes == cells.len() {
        TrainStatus::SingleClass
    } else {
        TrainStatus::Ok
    };

    let mut params = PolicyParams::zeros(d);
    let mut loss_history = Vec::with_capacity(cfg.epochs + 1);
    for _ in 0..cfg.epochs {
        loss_history.push(loss(cells, &params, cfg.l2));
        let g = gradient(cells, &params, cfg.l2);
        for (w, gw) in params.w.iter_mut().zip(&g.w) {
            *w -= cfg.learning_rate * gw;
        }
        params.bias -= cfg.learning_rate * g.bias;
    }
    let final_loss = loss(cells, &params, cfg.l2);
    loss_history.push(final_loss);
    Ok(TrainOutcome {
        params,
        final_loss,
        loss_history,
        status,
    })
}

pub const FD_STEP: f64 = 1e-5;

/// Largest relative disagreement between the analytic BCE gradient and
/// central finite differences over every entry of `W` and the bias.
pub fn gradient_check(cells: &[LabeledPair], p: &PolicyParams) -> f64 {
    let analytic = gradient(cells, p, 0.0);
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-8);

    let mut probe = p.clone();
    let mut worst = 0.0f64;
    for k in 0..p.w.len() {
        let orig = probe.w[k];
        probe.w[k] = orig + FD_STEP;
        let up = loss(cells, &probe, 0.0);
        probe.w[k] = orig - FD_STEP;
        let down = loss(cells, &probe, 0.0);
        probe.w[k] = orig;
        worst = worst.max(rel(analytic.w[k], (up - down) / (2.0 * FD_STEP)));
    }
    let orig = probe.bias;
    probe.bias = orig + FD_STEP;
    let up = loss(cells, &probe, 0.0);
    probe.bias = orig - FD_STEP;
    let down = loss(cells, &probe, 0.0);
    worst.max(rel(analytic.bias, (up - down) / (2.0 * FD_STEP)))
}

/// Fraction of cells whose thresholded decision matches the label.
pub fn accuracy(cells: &[LabeledPair], p: &PolicyParams, delta: f64) -> Result<f64> {
    let mut hits = 0;
    for c in cells {
        let prob = policy_probability(&c.s, &c.h, p)?;
        if decide(prob, delta)? == c.label {
            hits += 1;
        }
    }
    Ok(hits as f64 / cells.len().max(1) as f64)
}
