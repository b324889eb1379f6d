//! Discrete-time hazard head and the censoring-aware survival losses.
//!
//! Hazards `h_j` are per-interval conditional event probabilities and the
//! survival curve is `S_j = Π_{k≤j} (1 − h_k)`. Uncensored patients contribute
//! the likelihood of dying in their interval; censored patients contribute
//! survival through their censoring interval plus, once warmed up, an expected
//! uncensored likelihood under a soft label over the later intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{clamped_ln, clamped_ln_grad, lookup, sigmoid, softmax, Affine, ParamStore, SeededRng};

pub const HEAD_HIDDEN: usize = 128;

/// Affine, ReLU, affine, per-interval sigmoid.
#[derive(Clone, Copy, Debug)]
pub struct HazardHead {
    pub first: Affine,
    pub second: Affine,
}

#[derive(Clone, Debug)]
pub struct HeadPass {
    pub hidden: Vec<f64>,
    pub hazards: Vec<f64>,
}

impl HazardHead {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        k: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            first: Affine::register(store, &format!("{prefix}.0"), in_dim, HEAD_HIDDEN, rng)?,
            second: Affine::register(store, &format!("{prefix}.1"), HEAD_HIDDEN, k, rng)?,
        })
    }

    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        lookup(store, &format!("{prefix}.1.weight"))?;
        Ok(Self {
            first: Affine::bind(store, &format!("{prefix}.0"))?,
            second: Affine::bind(store, &format!("{prefix}.1"))?,
        })
    }

    pub fn n_intervals(&self) -> usize {
        self.second.out_dim()
    }

    pub fn forward(&self, store: &ParamStore, z: &[f64]) -> Result<HeadPass> {
        let mut hidden = self.first.forward(store, z)?;
        hidden.iter_mut().for_each(|x| *x = x.max(0.0));
        let hazards = self
            .second
            .forward(store, &hidden)?
            .into_iter()
            .map(sigmoid)
            .collect();
        Ok(HeadPass { hidden, hazards })
    }

    pub fn backward(&self, store: &mut ParamStore, z: &[f64], pass: &HeadPass, d_hazards: &[f64]) -> Vec<f64> {
        let d_logits: Vec<f64> = d_hazards
            .iter()
            .zip(&pass.hazards)
            .map(|(d, h)| d * h * (1.0 - h))
            .collect();
        let mut d_hidden = self.second.backward(store, &pass.hidden, &d_logits);
        for (d, &h) in d_hidden.iter_mut().zip(&pass.hidden) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        self.first.backward(store, z, &d_hidden)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalPrediction {
    pub hazards: Vec<f64>,
    pub survival: Vec<f64>,
    pub risk: f64,
}

impl SurvivalPrediction {
    pub fn from_hazards(hazards: Vec<f64>) -> Self {
        let survival = cumulative_survival(&hazards);
        let risk = risk_score(&survival);
        Self {
            hazards,
            survival,
            risk,
        }
    }
}

pub(crate) fn cumulative_survival(h: &[f64]) -> Vec<f64> {
    let mut s = 1.0;
    h.iter()
        .map(|hj| {
            s *= 1.0 - hj;
            s
        })
        .collect()
}

pub fn survival_from_hazards(h: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = h.iter().find(|&&x| !(x > 0.0 && x < 1.0)) {
        return Err(Error::HazardOutOfRange(bad));
    }
    Ok(cumulative_survival(h))
}

fn check_interval(index: usize, k: usize) -> Result<()> {
    if index >= k {
        return Err(Error::InvalidInterval { index, k });
    }
    Ok(())
}

/// `S_{j−1}` with `S_{−1} = 1`.
fn survival_before(s: &[f64], j: usize) -> f64 {
    if j == 0 {
        1.0
    } else {
        s[j - 1]
    }
}

pub fn nll_uncensored(h: &[f64], s: &[f64], j: usize) -> Result<f64> {
    check_interval(j, h.len())?;
    Ok(-(clamped_ln(survival_before(s, j)) + clamped_ln(h[j])))
}

pub fn nll_censored(h: &[f64], s: &[f64], c: usize) -> Result<f64> {
    check_interval(c, h.len())?;
    Ok(-clamped_ln(s[c]))
}

/// Soft label over the intervals strictly after `c`: the softmax of the
/// predicted hazards there, zero elsewhere. `None` when `c` is the last
/// interval.
pub fn pseudo_soft_label(h: &[f64], c: usize) -> Result<Option<Vec<f64>>> {
    check_interval(c, h.len())?;
    if c + 1 == h.len() {
        return Ok(None);
    }
    let tail = softmax(&h[c + 1..])?;
    let mut q = vec![0.0; c + 1];
    q.extend(tail);
    Ok(Some(q))
}

fn check_soft_label(q: &[f64], k: usize) -> Result<()> {
    if q.len() != k {
        return Err(Error::Shape(format!("soft label of length {} for {k} intervals", q.len())));
    }
    let sum: f64 = q.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || q.iter().any(|&x| x < 0.0) {
        return Err(Error::SoftLabelNotNormalized(sum));
    }
    Ok(())
}

/// Expected uncensored NLL under the soft label `q`.
pub fn nll_pseudo(h: &[f64], s: &[f64], q: &[f64]) -> Result<f64> {
    check_soft_label(q, h.len())?;
    let mut loss = 0.0;
    for (j, &qj) in q.iter().enumerate() {
        if qj != 0.0 {
            loss += qj * nll_uncensored(h, s, j)?;
        }
    }
    Ok(loss)
}

/// Adds `scale · ∂(−ln S_{m})/∂h` for `m = upto − 1`, honouring the clamp.
fn add_survival_grad(h: &[f64], s: &[f64], upto: usize, scale: f64, dh: &mut [f64]) {
    if upto == 0 || s[upto - 1] <= crate::numerics::LOG_EPS {
        return;
    }
    for k in 0..upto {
        dh[k] += scale / (1.0 - h[k]);
    }
}

fn add_uncensored_grad(h: &[f64], s: &[f64], j: usize, scale: f64, dh: &mut [f64]) {
    add_survival_grad(h, s, j, scale, dh);
    dh[j] -= scale * clamped_ln_grad(h[j]);
}

pub fn nll_uncensored_grad(h: &[f64], j: usize) -> Result<(f64, Vec<f64>)> {
    let s = cumulative_survival(h);
    let loss = nll_uncensored(h, &s, j)?;
    let mut dh = vec![0.0; h.len()];
    add_uncensored_grad(h, &s, j, 1.0, &mut dh);
    Ok((loss, dh))
}

pub fn nll_censored_grad(h: &[f64], c: usize) -> Result<(f64, Vec<f64>)> {
    let s = cumulative_survival(h);
    let loss = nll_censored(h, &s, c)?;
    let mut dh = vec![0.0; h.len()];
    add_survival_grad(h, &s, c + 1, 1.0, &mut dh);
    Ok((loss, dh))
}

/// Gradient with `q` held fixed.
pub fn nll_pseudo_grad(h: &[f64], q: &[f64]) -> Result<(f64, Vec<f64>)> {
    let s = cumulative_survival(h);
    let loss = nll_pseudo(h, &s, q)?;
    let mut dh = vec![0.0; h.len()];
    for (j, &qj) in q.iter().enumerate() {
        if qj != 0.0 {
            add_uncensored_grad(h, &s, j, qj, &mut dh);
        }
    }
    Ok((loss, dh))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupSchedule {
    pub t_total: u64,
}

/// `0.1 · exp(−5 (1 − t/t_total)²)`, with `t` clamped to `t_total`.
pub fn warmup_weight(t: u64, sched: &WarmupSchedule) -> f64 {
    let total = sched.t_total.max(1);
    let frac = t.min(total) as f64 / total as f64;
    0.1 * (-5.0 * (1.0 - frac).powi(2)).exp()
}

/// Negative expected discrete survival, `−Σ_j S_j`.
pub fn risk_score(s: &[f64]) -> f64 {
    -s.iter().sum::<f64>()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalTarget {
    pub event: bool,
    pub interval: usize,
    /// Detached soft label for censored patients with a later interval.
    pub soft_label: Option<Vec<f64>>,
}

impl SurvivalTarget {
    /// Builds the target, deriving the soft label from `hazards` for
    /// censored patients when `with_pseudo` is set.
    pub fn new(event: bool, interval: usize, hazards: &[f64], with_pseudo: bool) -> Result<Self> {
        let soft_label = if !event && with_pseudo {
            pseudo_soft_label(hazards, interval)?
        } else {
            None
        };
        Ok(Self {
            event,
            interval,
            soft_label,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLossConfig {
    pub lambda_cen: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SurvivalLossBreakdown {
    pub l_uncen: f64,
    pub l_cen: f64,
    pub l_cen_p: f64,
    pub lambda_pro: f64,
    pub total: f64,
    pub n_uncen: usize,
    pub n_cen: usize,
    pub n_pseudo: usize,
}

/// Combined survival loss over a batch and its gradient with respect to each
/// patient's hazards. Each term is averaged over its own subset; empty
/// subsets contribute zero.
pub fn survival_loss(
    batch: &[(&[f64], &SurvivalTarget)],
    t: u64,
    sched: &WarmupSchedule,
    cfg: &SurvivalLossConfig,
) -> Result<(SurvivalLossBreakdown, Vec<Vec<f64>>)> {
    let lambda_pro = warmup_weight(t, sched);
    let n_uncen = batch.iter().filter(|(_, y)| y.event).count();
    let n_cen = batch.len() - n_uncen;
    let n_pseudo = batch
        .iter()
        .filter(|(_, y)| !y.event && y.soft_label.is_some())
        .count();

    let mut out = SurvivalLossBreakdown {
        lambda_pro,
        n_uncen,
        n_cen,
        n_pseudo,
        ..Default::default()
    };
    let mut grads = Vec::with_capacity(batch.len());
    for (h, target) in batch {
        let mut dh = vec![0.0; h.len()];
        if target.event {
            let w = 1.0 / n_uncen as f64;
            let (l, g) = nll_uncensored_grad(h, target.interval)?;
            out.l_uncen += w * l;
            g.iter().zip(dh.iter_mut()).for_each(|(g, d)| *d += w * g);
        } else {
            let w = cfg.lambda_cen / n_cen as f64;
            let (l, g) = nll_censored_grad(h, target.interval)?;
            out.l_cen += l / n_cen as f64;
            g.iter().zip(dh.iter_mut()).for_each(|(g, d)| *d += w * g);
            if let Some(q) = &target.soft_label {
                let wp = cfg.lambda_cen * lambda_pro / n_pseudo as f64;
                let (l, g) = nll_pseudo_grad(h, q)?;
                out.l_cen_p += l / n_pseudo as f64;
                g.iter().zip(dh.iter_mut()).for_each(|(g, d)| *d += wp * g);
            }
        }
        grads.push(dh);
    }
    out.total = out.l_uncen + cfg.lambda_cen * (out.l_cen + lambda_pro * out.l_cen_p);
    Ok((out, grads))
}
