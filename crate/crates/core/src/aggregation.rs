//! Attention-based multiple-instance pooling.
//!
//! A single [`AttentionNet`] scores each instance row `x` as `wᵀ tanh(V x)`,
//! normalizes the scores with a softmax and returns the weighted sum of the
//! rows. The same construction pools instances within a modality and pooled
//! modality vectors within a patient.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::cohort::{FeatureSet, ModalityKind};
use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, lookup, softmax, Affine, Matrix, ParamId, ParamStore, SeededRng};

pub const ATTENTION_HIDDEN: usize = 128;
/// Width of the fused patient embedding.
pub const FUSED_DIM: usize = 256;

#[derive(Clone, Copy, Debug)]
pub struct AttentionNet {
    /// `h × D`
    pub v: ParamId,
    /// `h × 1`
    pub w: ParamId,
    input_dim: usize,
    hidden: usize,
}

/// Forward activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct AttentionPass {
    /// `tanh(V xⱼ)` per instance, `N × h`.
    pub hidden: Matrix,
    pub scores: Vec<f64>,
    pub pooled: Vec<f64>,
}

impl AttentionNet {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let v = Matrix::uniform(hidden, input_dim, 1.0 / (input_dim as f64).sqrt(), rng);
        let w = Matrix::uniform(hidden, 1, 1.0 / (hidden as f64).sqrt(), rng);
        Self::from_weights(store, prefix, v, w)
    }

    pub fn from_weights(store: &mut ParamStore, prefix: &str, v: Matrix, w: Matrix) -> Result<Self> {
        if w.shape() != (v.rows(), 1) {
            return Err(Error::Shape(format!(
                "attention w must be {}x1, got {:?}",
                v.rows(),
                w.shape()
            )));
        }
        let (hidden, input_dim) = v.shape();
        let v = store.add(format!("{prefix}.V"), v)?;
        let w = store.add(format!("{prefix}.w"), w)?;
        Ok(Self {
            v,
            w,
            input_dim,
            hidden,
        })
    }

    pub fn bind(store: &ParamStore, prefix: &str) -> Result<Self> {
        let v = lookup(store, &format!("{prefix}.V"))?;
        let w = lookup(store, &format!("{prefix}.w"))?;
        let (hidden, input_dim) = store.value(v).shape();
        if store.value(w).shape() != (hidden, 1) {
            return Err(Error::Shape(format!("{prefix}.w")));
        }
        Ok(Self {
            v,
            w,
            input_dim,
            hidden,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn forward(&self, store: &ParamStore, instances: &Matrix) -> Result<AttentionPass> {
        if instances.rows() == 0 {
            return Err(Error::EmptyVector);
        }
        if instances.cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "attention expects width {}, got {}",
                self.input_dim,
                instances.cols()
            )));
        }
        let v = store.value(self.v);
        let w = store.value(self.w).data();
        let n = instances.rows();
        let mut hidden = Matrix::zeros(n, self.hidden);
        // row-outer order keeps each row of V in cache across instances
        for r in 0..self.hidden {
            let vr = v.row(r);
            for j in 0..n {
                hidden.set(j, r, dot(vr, instances.row(j)).tanh());
            }
        }
        let logits: Vec<f64> = (0..n).map(|j| dot(w, hidden.row(j))).collect();
        let scores = softmax(&logits)?;
        let mut pooled = vec![0.0; self.input_dim];
        for (j, &a) in scores.iter().enumerate() {
            axpy(a, instances.row(j), &mut pooled);
        }
        Ok(AttentionPass {
            hidden,
            scores,
            pooled,
        })
    }

    /// Accumulates `dV`, `dw` from `d_pooled`; returns the gradient with
    /// respect to the instance rows when `want_input_grad` is set.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        instances: &Matrix,
        pass: &AttentionPass,
        d_pooled: &[f64],
        want_input_grad: bool,
    ) -> Option<Matrix> {
        let n = instances.rows();
        let a = &pass.scores;
        let d_scores: Vec<f64> = (0..n).map(|j| dot(d_pooled, instances.row(j))).collect();
        let mean = dot(a, &d_scores);
        let d_logits: Vec<f64> = (0..n).map(|j| a[j] * (d_scores[j] - mean)).collect();

        let w = store.value(self.w).data().to_vec();
        {
            let gw = store.grad_mut(self.w).data_mut();
            for (j, &dl) in d_logits.iter().enumerate() {
                axpy(dl, pass.hidden.row(j), gw);
            }
        }

        // d_pre[r][j]: gradient at the pre-tanh activation of unit r, instance j
        let mut d_pre = Matrix::zeros(self.hidden, n);
        for j in 0..n {
            let hj = pass.hidden.row(j);
            for r in 0..self.hidden {
                d_pre.set(r, j, d_logits[j] * w[r] * (1.0 - hj[r] * hj[r]));
            }
        }
        let mut d_input = want_input_grad.then(|| Matrix::zeros(n, self.input_dim));
        let (v, gv) = store.value_and_grad_mut(self.v);
        for r in 0..self.hidden {
            let coeffs = d_pre.row(r);
            let gv_r = gv.row_mut(r);
            for (j, &c) in coeffs.iter().enumerate() {
                if c != 0.0 {
                    axpy(c, instances.row(j), gv_r);
                }
            }
            if let Some(dx) = d_input.as_mut() {
                for (j, &c) in coeffs.iter().enumerate() {
                    if c != 0.0 {
                        axpy(c, v.row(r), dx.row_mut(j));
                    }
                }
            }
        }
        if let Some(dx) = d_input.as_mut() {
            for (j, &aj) in a.iter().enumerate() {
                axpy(aj, d_pooled, dx.row_mut(j));
            }
        }
        d_input
    }
}

pub fn attention_scores(net: &AttentionNet, store: &ParamStore, instances: &Matrix) -> Result<Vec<f64>> {
    net.forward(store, instances).map(|p| p.scores)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModalityEmbedding {
    pub modality: ModalityKind,
    pub vector: Vec<f64>,
    pub attention: Vec<f64>,
}

pub fn intra_aggregate(net: &AttentionNet, store: &ParamStore, fs: &FeatureSet) -> Result<ModalityEmbedding> {
    let pass = net.forward(store, fs.features())?;
    Ok(ModalityEmbedding {
        modality: fs.modality(),
        vector: pass.pooled,
        attention: pass.scores,
    })
}

/// Affine map of a 512-dim modality vector into the fused space.
pub fn project_modality(proj: &Affine, store: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
    proj.forward(store, input)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PatientEmbedding {
    pub vector: Vec<f64>,
    pub modality_attention: BTreeMap<ModalityKind, f64>,
}

pub fn inter_aggregate(
    net: &AttentionNet,
    store: &ParamStore,
    present: &[(ModalityKind, Vec<f64>)],
) -> Result<PatientEmbedding> {
    if present.is_empty() {
        return Err(Error::NoModalities);
    }
    let rows: Vec<&[f64]> = present.iter().map(|(_, v)| v.as_slice()).collect();
    let stacked = Matrix::from_rows(&rows)?;
    let pass = net.forward(store, &stacked)?;
    Ok(PatientEmbedding {
        vector: pass.pooled,
        modality_attention: present
            .iter()
            .map(|(k, _)| *k)
            .zip(pass.scores)
            .collect(),
    })
}
