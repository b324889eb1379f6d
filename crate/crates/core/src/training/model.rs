//! The composed network: per-modality attention pooling, adapters into the
//! pathology hub space, projections, inter-modality fusion and the hazard
//! head.

use std::collections::BTreeMap;

use crate::aggregation::{AttentionNet, AttentionPass, ATTENTION_HIDDEN, FUSED_DIM};
use crate::alignment::{side_loss, Adapter, AdapterPass, MemoryQueue, HUB_DIM};
use crate::cohort::{ModalityKind, PatientRecord};
use crate::error::{Error, Result};
use crate::numerics::{axpy, Affine, Matrix, ParamStore, SeededRng};
use crate::survival::{survival_loss, HazardHead, HeadPass, SurvivalLossBreakdown, SurvivalLossConfig, SurvivalTarget, WarmupSchedule};

/// Parameter handles of the full model. Handles are positions in a
/// [`ParamStore`], so one architecture serves any store with the same layout.
#[derive(Clone, Debug)]
pub struct Architecture {
    intra: BTreeMap<ModalityKind, AttentionNet>,
    adapters: BTreeMap<ModalityKind, Adapter>,
    proj: BTreeMap<ModalityKind, Affine>,
    inter: AttentionNet,
    head: HazardHead,
}

fn needs_adapter(kind: ModalityKind) -> bool {
    kind.is_optional()
}

impl Architecture {
    /// Registers freshly initialised parameters in a fixed order.
    pub fn register(store: &mut ParamStore, k: usize, rng: &mut SeededRng) -> Result<Self> {
        if k < 2 {
            return Err(Error::Config(format!("need at least 2 intervals, got {k}")));
        }
        let mut intra = BTreeMap::new();
        let mut adapters = BTreeMap::new();
        let mut proj = BTreeMap::new();
        for kind in ModalityKind::ALL {
            intra.insert(
                kind,
                AttentionNet::register(store, &format!("attn.{kind}"), kind.dim(), ATTENTION_HIDDEN, rng)?,
            );
            if needs_adapter(kind) {
                adapters.insert(kind, Adapter::register(store, &format!("adapter.{kind}"), kind.dim(), rng)?);
            }
            proj.insert(kind, Affine::register(store, &format!("proj.{kind}"), HUB_DIM, FUSED_DIM, rng)?);
        }
        let inter = AttentionNet::register(store, "inter", FUSED_DIM, ATTENTION_HIDDEN, rng)?;
        let head = HazardHead::register(store, "head", FUSED_DIM, k, rng)?;
        Ok(Self {
            intra,
            adapters,
            proj,
            inter,
            head,
        })
    }

    /// Rebinds to a store loaded from disk, checking every shape.
    pub fn bind(store: &ParamStore) -> Result<Self> {
        let mut intra = BTreeMap::new();
        let mut adapters = BTreeMap::new();
        let mut proj = BTreeMap::new();
        for kind in ModalityKind::ALL {
            let net = AttentionNet::bind(store, &format!("attn.{kind}"))?;
            if net.input_dim() != kind.dim() {
                return Err(Error::Checkpoint(format!("attn.{kind}.V has width {}", net.input_dim())));
            }
            intra.insert(kind, net);
            if needs_adapter(kind) {
                let a = Adapter::bind(store, &format!("adapter.{kind}"))?;
                if a.in_dim() != kind.dim() || a.second.out_dim() != HUB_DIM {
                    return Err(Error::Checkpoint(format!("adapter.{kind} has wrong shape")));
                }
                adapters.insert(kind, a);
            }
            let p = Affine::bind(store, &format!("proj.{kind}"))?;
            if p.in_dim() != HUB_DIM || p.out_dim() != FUSED_DIM {
                return Err(Error::Checkpoint(format!("proj.{kind} has wrong shape")));
            }
            proj.insert(kind, p);
        }
        let inter = AttentionNet::bind(store, "inter")?;
        let head = HazardHead::bind(store, "head")?;
        if inter.input_dim() != FUSED_DIM || head.first.in_dim() != FUSED_DIM || head.n_intervals() < 2 {
            return Err(Error::Checkpoint("fusion or head has wrong shape".into()));
        }
        let arch = Self {
            intra,
            adapters,
            proj,
            inter,
            head,
        };
        let expected = 4 * 2 + 2 * 4 + 4 * 2 + 2 + 4;
        if store.len() != expected {
            return Err(Error::Checkpoint(format!(
                "expected {expected} parameter matrices, found {}",
                store.len()
            )));
        }
        Ok(arch)
    }

    pub fn n_intervals(&self) -> usize {
        self.head.n_intervals()
    }

    pub fn forward(&self, store: &ParamStore, patient: &PatientRecord) -> Result<Forward> {
        for kind in [ModalityKind::Wsi, ModalityKind::PathReport] {
            if !patient.has(kind) {
                return Err(Error::MissingModality {
                    patient: patient.id.clone(),
                    modality: kind.to_string(),
                });
            }
        }
        let mut modalities = Vec::with_capacity(patient.feature_sets.len());
        for (&kind, fs) in &patient.feature_sets {
            if fs.features().cols() != kind.dim() {
                return Err(Error::DimMismatch(patient.id.clone()));
            }
            let attention = self.intra[&kind].forward(store, fs.features())?;
            let adapter = match self.adapters.get(&kind) {
                Some(a) => Some(a.forward(store, &attention.pooled)?),
                None => None,
            };
            let hub = match &adapter {
                Some(pass) => pass.out.clone(),
                None => attention.pooled.clone(),
            };
            let projected = self.proj[&kind].forward(store, &hub)?;
            modalities.push(ModalityPass {
                kind,
                attention,
                adapter,
                hub,
                projected,
            });
        }
        let rows: Vec<&[f64]> = modalities.iter().map(|m| m.projected.as_slice()).collect();
        let inter_input = Matrix::from_rows(&rows)?;
        let inter = self.inter.forward(store, &inter_input)?;
        let head = self.head.forward(store, &inter.pooled)?;
        Ok(Forward {
            modalities,
            inter_input,
            inter,
            head,
        })
    }

    /// Accumulates parameter gradients given `dL/dh` and extra gradients on
    /// the 512-dimensional hub vectors (from the contrastive terms).
    pub fn backward(
        &self,
        store: &mut ParamStore,
        patient: &PatientRecord,
        fwd: &Forward,
        d_hazards: &[f64],
        d_hubs: &BTreeMap<ModalityKind, Vec<f64>>,
    ) {
        let d_fused = self.head.backward(store, &fwd.inter.pooled, &fwd.head, d_hazards);
        let d_rows = self
            .inter
            .backward(store, &fwd.inter_input, &fwd.inter, &d_fused, true)
            .expect("input gradient requested");
        for (row, m) in fwd.modalities.iter().enumerate() {
            let mut d_hub = self.proj[&m.kind].backward(store, &m.hub, d_rows.row(row));
            if let Some(extra) = d_hubs.get(&m.kind) {
                axpy(1.0, extra, &mut d_hub);
            }
            let d_pooled = match (&m.adapter, self.adapters.get(&m.kind)) {
                (Some(pass), Some(a)) => a.backward(store, &m.attention.pooled, pass, &d_hub),
                _ => d_hub,
            };
            let instances = patient.feature_sets[&m.kind].features();
            self.intra[&m.kind].backward(store, instances, &m.attention, &d_pooled, false);
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModalityPass {
    pub kind: ModalityKind,
    pub attention: AttentionPass,
    pub adapter: Option<AdapterPass>,
    /// Pooled vector in the 512-dimensional hub space (post-adapter for
    /// radiology and clinical notes).
    pub hub: Vec<f64>,
    pub projected: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub modalities: Vec<ModalityPass>,
    inter_input: Matrix,
    pub inter: AttentionPass,
    pub head: HeadPass,
}

impl Forward {
    pub fn hazards(&self) -> &[f64] {
        &self.head.hazards
    }

    pub fn hub(&self, kind: ModalityKind) -> Option<&[f64]> {
        self.modalities
            .iter()
            .find(|m| m.kind == kind)
            .map(|m| m.hub.as_slice())
    }

    pub fn modality_attention(&self) -> BTreeMap<ModalityKind, f64> {
        self.modalities
            .iter()
            .map(|m| m.kind)
            .zip(self.inter.scores.iter().copied())
            .collect()
    }

    pub fn instance_attention(&self) -> BTreeMap<ModalityKind, Vec<f64>> {
        self.modalities
            .iter()
            .map(|m| (m.kind, m.attention.scores.clone()))
            .collect()
    }
}

/// Everything the per-patient objective needs besides parameters and data.
#[derive(Clone, Copy, Debug)]
pub struct LossSettings<'a> {
    pub lambda: f64,
    pub lambda_cen: f64,
    pub lambda_con: f64,
    pub tau: f64,
    /// `None` disables that contrastive side.
    pub image_queue: Option<&'a MemoryQueue>,
    pub text_queue: Option<&'a MemoryQueue>,
    pub t: u64,
    pub schedule: WarmupSchedule,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatientLoss {
    pub total: f64,
    pub l_con: f64,
    pub l_wr: Option<f64>,
    pub l_pb: Option<f64>,
    pub survival: SurvivalLossBreakdown,
}

/// Loss gradients with respect to the model outputs.
#[derive(Clone, Debug)]
pub struct OutputGrads {
    pub d_hazards: Vec<f64>,
    pub d_hubs: BTreeMap<ModalityKind, Vec<f64>>,
}

/// `L = λ·(L_WR + λ_con·L_PB) + L_surv` for one patient, with its gradient
/// with respect to the hazards and hub vectors. Queues are read, not pushed.
pub fn patient_objective(
    fwd: &Forward,
    target: &SurvivalTarget,
    s: &LossSettings<'_>,
) -> Result<(PatientLoss, OutputGrads)> {
    let mut d_hubs: BTreeMap<ModalityKind, Vec<f64>> = BTreeMap::new();
    let mut add_hub = |kind: ModalityKind, weight: f64, g: &[f64]| {
        let slot = d_hubs.entry(kind).or_insert_with(|| vec![0.0; g.len()]);
        axpy(weight, g, slot);
    };

    let mut side = |queue: Option<&MemoryQueue>, hub: ModalityKind, other: ModalityKind, weight: f64| -> Result<Option<f64>> {
        let (Some(q), Some(h), Some(o)) = (queue, fwd.hub(hub), fwd.hub(other)) else {
            return Ok(None);
        };
        let sl = side_loss(q, h, o, s.tau)?;
        if s.lambda != 0.0 && weight != 0.0 {
            add_hub(hub, s.lambda * weight, &sl.d_hub);
            add_hub(other, s.lambda * weight, &sl.d_other);
        }
        Ok(Some(sl.loss))
    };
    let l_wr = side(s.image_queue, ModalityKind::Wsi, ModalityKind::Radiology, 1.0)?;
    let l_pb = side(s.text_queue, ModalityKind::PathReport, ModalityKind::ClinicalNotes, s.lambda_con)?;
    let l_con = l_wr.unwrap_or(0.0) + s.lambda_con * l_pb.unwrap_or(0.0);

    let cfg = SurvivalLossConfig {
        lambda_cen: s.lambda_cen,
    };
    let (survival, mut dh) = survival_loss(&[(fwd.hazards(), target)], s.t, &s.schedule, &cfg)?;
    let loss = PatientLoss {
        total: s.lambda * l_con + survival.total,
        l_con,
        l_wr,
        l_pb,
        survival,
    };
    Ok((
        loss,
        OutputGrads {
            d_hazards: dh.pop().expect("one patient"),
            d_hubs,
        },
    ))
}

/// Forward pass and objective without touching gradients.
pub fn patient_loss(
    arch: &Architecture,
    store: &ParamStore,
    patient: &PatientRecord,
    target: &SurvivalTarget,
    s: &LossSettings<'_>,
) -> Result<f64> {
    let fwd = arch.forward(store, patient)?;
    patient_objective(&fwd, target, s).map(|(l, _)| l.total)
}

/// Survival target for `patient` with the soft label taken from `hazards`.
pub fn target_for(patient: &PatientRecord, hazards: &[f64], with_pseudo: bool) -> Result<SurvivalTarget> {
    let interval = patient.interval.ok_or(Error::NotBinned)?;
    if interval >= hazards.len() {
        return Err(Error::InvalidInterval {
            index: interval,
            k: hazards.len(),
        });
    }
    SurvivalTarget::new(patient.event, interval, hazards, with_pseudo)
}
