//! Contrastive alignment of radiology and clinical-note embeddings onto the
//! pathology hub (WSI for images, pathology report for text).
//!
//! Each side keeps a FIFO [`MemoryQueue`] of detached `(hub, other)` pairs
//! from earlier patients which supply the negatives for a symmetric InfoNCE
//! loss on the current patient's pair.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, ModalityKind};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, norm, Affine, ParamStore, SeededRng};

/// Hub embedding width shared by both pathology encoders.
pub const HUB_DIM: usize = 512;
pub const ADAPTER_HIDDEN: usize = 256;

/// Two-layer fully connected adapter: affine, ReLU, affine.
#[derive(Clone, Copy, Debug)]
pub struct Adapter {
    pub first: Affine,
    pub second: Affine,
}

#[derive(Clone, Debug)]
pub struct AdapterPass {
    /// Post-ReLU hidden activations.
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

impl Adapter {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        Ok(Self {
            first: Affine::register(store, &format!("{prefix}.0"), in_dim, ADAPTER_HIDDEN, rng)?,
            second: Affine::register(store, &format!("{prefix}.1"), ADAPTER_HIDDEN, HUB_DIM, rng)?,
        })
    }

    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            first: Affine::bind(store, &format!("{prefix}.0"))?,
            second: Affine::bind(store, &format!("{prefix}.1"))?,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.first.in_dim()
    }

    pub fn forward(&self, store: &ParamStore, z: &[f64]) -> Result<AdapterPass> {
        let mut hidden = self.first.forward(store, z)?;
        hidden.iter_mut().for_each(|x| *x = x.max(0.0));
        let out = self.second.forward(store, &hidden)?;
        Ok(AdapterPass { hidden, out })
    }

    pub fn backward(
        &self,
        store: &mut ParamStore,
        z: &[f64],
        pass: &AdapterPass,
        d_out: &[f64],
    ) -> Vec<f64> {
        let mut d_hidden = self.second.backward(store, &pass.hidden, d_out);
        for (d, &h) in d_hidden.iter_mut().zip(&pass.hidden) {
            if h <= 0.0 {
                *d = 0.0;
            }
        }
        self.first.backward(store, z, &d_hidden)
    }
}

pub fn adapter_forward(adapter: &Adapter, store: &ParamStore, z: &[f64]) -> Result<Vec<f64>> {
    adapter.forward(store, z).map(|p| p.out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub patient_id: String,
    pub hub: Vec<f64>,
    pub other: Vec<f64>,
}

/// Fixed-capacity FIFO of detached embedding pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryQueue {
    capacity: usize,
    entries: VecDeque<QueueEntry>,
}

impl MemoryQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &QueueEntry> {
        self.entries.iter()
    }

    /// Appends `entry`, evicting and returning the oldest entry when full.
    /// Repeated patient ids are kept as separate entries.
    pub fn push(&mut self, entry: QueueEntry) -> Option<QueueEntry> {
        self.entries.push_back(entry);
        if self.entries.len() > self.capacity {
            self.entries.pop_front()
        } else {
            None
        }
    }

    /// Entries that survive the next push, i.e. the negatives for the pair
    /// about to be enqueued.
    fn survivors_of_next_push(&self) -> impl Iterator<Item = &QueueEntry> {
        let skip = usize::from(self.is_full());
        self.entries.iter().skip(skip)
    }
}

fn cosine_with_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    let s = dot(a, b) / (na * nb);
    // ds/da = b/(|a||b|) − s·a/|a|²
    let mut da: Vec<f64> = b.iter().map(|x| x / (na * nb)).collect();
    axpy(-s / (na * na), a, &mut da);
    let mut db: Vec<f64> = a.iter().map(|x| x / (na * nb)).collect();
    axpy(-s / (nb * nb), b, &mut db);
    Ok((s, da, db))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InfoNceGrad {
    pub loss: f64,
    pub d_anchor: Vec<f64>,
    pub d_positive: Vec<f64>,
}

/// InfoNCE with cosine similarity; negatives are treated as constants.
pub fn info_nce_grad(
    anchor: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    tau: f64,
) -> Result<InfoNceGrad> {
    if negatives.is_empty() {
        return Err(Error::EmptyVector);
    }
    if !(tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let (sp, dsp_da, dsp_dp) = cosine_with_grad(anchor, positive)?;
    let mut logits = Vec::with_capacity(negatives.len() + 1);
    let mut d_sims_da = Vec::with_capacity(negatives.len());
    logits.push(sp / tau);
    for neg in negatives {
        let (s, da, _) = cosine_with_grad(anchor, neg)?;
        logits.push(s / tau);
        d_sims_da.push(da);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let lse = max + sum.ln();
    let probs: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    let loss = lse - logits[0];

    let g0 = (probs[0] - 1.0) / tau;
    let mut d_anchor: Vec<f64> = dsp_da.iter().map(|x| g0 * x).collect();
    for (p, da) in probs[1..].iter().zip(&d_sims_da) {
        axpy(p / tau, da, &mut d_anchor);
    }
    let d_positive = dsp_dp.iter().map(|x| g0 * x).collect();
    Ok(InfoNceGrad {
        loss,
        d_anchor,
        d_positive,
    })
}

pub fn info_nce(anchor: &[f64], positive: &[f64], negatives: &[&[f64]], tau: f64) -> Result<f64> {
    info_nce_grad(anchor, positive, negatives, tau).map(|g| g.loss)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SideLoss {
    pub loss: f64,
    pub d_hub: Vec<f64>,
    pub d_other: Vec<f64>,
}

/// Symmetric InfoNCE for the current `(hub, other)` pair against the queue
/// contents that remain once the pair is enqueued, excluding the pair itself.
/// Does not mutate the queue.
pub fn side_loss(queue: &MemoryQueue, hub: &[f64], other: &[f64], tau: f64) -> Result<SideLoss> {
    let survivors: Vec<&QueueEntry> = queue.survivors_of_next_push().collect();
    if survivors.is_empty() {
        return Err(Error::Config("memory queue provides no negatives".into()));
    }
    let neg_other: Vec<&[f64]> = survivors.iter().map(|e| e.other.as_slice()).collect();
    let neg_hub: Vec<&[f64]> = survivors.iter().map(|e| e.hub.as_slice()).collect();

    let hub_anchored = info_nce_grad(hub, other, &neg_other, tau)?;
    let other_anchored = info_nce_grad(other, hub, &neg_hub, tau)?;

    let mut d_hub = hub_anchored.d_anchor;
    axpy(1.0, &other_anchored.d_positive, &mut d_hub);
    d_hub.iter_mut().for_each(|x| *x *= 0.5);
    let mut d_other = hub_anchored.d_positive;
    axpy(1.0, &other_anchored.d_anchor, &mut d_other);
    d_other.iter_mut().for_each(|x| *x *= 0.5);

    Ok(SideLoss {
        loss: 0.5 * (hub_anchored.loss + other_anchored.loss),
        d_hub,
        d_other,
    })
}

/// Enqueues the detached current pair, then scores it against the other
/// queue entries.
pub fn contrastive_side_loss(
    queue: &mut MemoryQueue,
    patient_id: &str,
    hub: &[f64],
    other: &[f64],
    tau: f64,
) -> Result<SideLoss> {
    let loss = side_loss(queue, hub, other, tau)?;
    queue.push(QueueEntry {
        patient_id: patient_id.to_string(),
        hub: hub.to_vec(),
        other: other.to_vec(),
    });
    Ok(loss)
}

/// Weight of the text side relative to the image side.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveWeights {
    pub lambda_con: f64,
    pub image_side_enabled: bool,
    /// Patients with a complete (WSI, radiology) pair.
    pub n_image_pairs: usize,
    /// Patients with a complete (pathology report, clinical notes) pair.
    pub n_text_pairs: usize,
}

pub fn compute_lambda_con(cohort: &Cohort) -> Result<ContrastiveWeights> {
    if cohort.is_empty() {
        return Err(Error::Config("cannot weight contrastive sides of an empty cohort".into()));
    }
    let n_image_pairs = cohort
        .patients
        .iter()
        .filter(|p| p.has(ModalityKind::Wsi) && p.has(ModalityKind::Radiology))
        .count();
    let n_text_pairs = cohort
        .patients
        .iter()
        .filter(|p| p.has(ModalityKind::PathReport) && p.has(ModalityKind::ClinicalNotes))
        .count();
    Ok(if n_image_pairs == 0 {
        ContrastiveWeights {
            lambda_con: 1.0,
            image_side_enabled: false,
            n_image_pairs,
            n_text_pairs,
        }
    } else {
        ContrastiveWeights {
            lambda_con: n_text_pairs as f64 / n_image_pairs as f64,
            image_side_enabled: true,
            n_image_pairs,
            n_text_pairs,
        }
    })
}

pub fn contrastive_loss(image_side: f64, text_side: f64, lambda_con: f64) -> f64 {
    image_side + lambda_con * text_side
}
