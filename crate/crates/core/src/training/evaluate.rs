use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::Checkpoint;
use crate::cohort::{assign_intervals, Cohort, ModalityKind};
use crate::error::{Error, Result};
use crate::metrics::{metrics_bundle, MetricsBundle, SurvivalOutcome};
use crate::survival::SurvivalPrediction;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PatientPrediction {
    pub patient_id: String,
    pub time: f64,
    pub event: bool,
    pub interval: usize,
    pub prediction: SurvivalPrediction,
    pub modality_attention: BTreeMap<ModalityKind, f64>,
    pub instance_attention: BTreeMap<ModalityKind, Vec<f64>>,
}

impl PatientPrediction {
    pub fn outcome(&self) -> SurvivalOutcome {
        SurvivalOutcome {
            time: self.time,
            event: self.event,
            risk: self.prediction.risk,
            interval: Some(self.interval),
            survival: Some(self.prediction.survival.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluation {
    pub predictions: Vec<PatientPrediction>,
    pub metrics: MetricsBundle,
}

/// Labels `cohort` against the checkpoint's edges. A cohort that already
/// carries different edges is rejected.
fn align_edges(ckpt: &Checkpoint, cohort: &Cohort) -> Result<Cohort> {
    if !cohort.interval_edges.is_empty() && cohort.interval_edges != ckpt.interval_edges {
        return Err(Error::EdgeMismatch);
    }
    Ok(assign_intervals(cohort, &ckpt.interval_edges))
}

/// Pure inference: no queue or parameter is touched.
pub fn predict(ckpt: &Checkpoint, cohort: &Cohort) -> Result<Vec<PatientPrediction>> {
    let arch = ckpt.architecture()?;
    let cohort = align_edges(ckpt, cohort)?;
    cohort
        .patients
        .iter()
        .map(|p| {
            let fwd = arch.forward(&ckpt.params, p)?;
            Ok(PatientPrediction {
                patient_id: p.id.clone(),
                time: p.time,
                event: p.event,
                interval: p.interval.expect("assigned above"),
                prediction: SurvivalPrediction::from_hazards(fwd.hazards().to_vec()),
                modality_attention: fwd.modality_attention(),
                instance_attention: fwd.instance_attention(),
            })
        })
        .collect()
}

pub fn evaluate(ckpt: &Checkpoint, cohort: &Cohort) -> Result<Evaluation> {
    let predictions = predict(ckpt, cohort)?;
    let outcomes: Vec<SurvivalOutcome> = predictions.iter().map(PatientPrediction::outcome).collect();
    Ok(Evaluation {
        metrics: metrics_bundle(&outcomes)?,
        predictions,
    })
}

/// `patient_id,time,event,interval,risk,h_0..,S_0..` rows.
pub fn predictions_csv(predictions: &[PatientPrediction]) -> String {
    let k = predictions.first().map_or(0, |p| p.prediction.hazards.len());
    let mut out = String::from("patient_id,time,event,interval,risk");
    for j in 0..k {
        let _ = write!(out, ",h_{j}");
    }
    for j in 0..k {
        let _ = write!(out, ",S_{j}");
    }
    out.push('\n');
    for p in predictions {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            p.patient_id,
            p.time,
            u8::from(p.event),
            p.interval,
            p.prediction.risk
        );
        for x in p.prediction.hazards.iter().chain(&p.prediction.survival) {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

/// `patient_id,modality,instance_index,score` rows.
pub fn intra_attention_csv(predictions: &[PatientPrediction]) -> String {
    let mut out = String::from("patient_id,modality,instance_index,score\n");
    for p in predictions {
        for (kind, scores) in &p.instance_attention {
            for (i, s) in scores.iter().enumerate() {
                let _ = writeln!(out, "{},{kind},{i},{s}", p.patient_id);
            }
        }
    }
    out
}

/// `patient_id,modality,score` rows.
pub fn inter_attention_csv(predictions: &[PatientPrediction]) -> String {
    let mut out = String::from("patient_id,modality,score\n");
    for p in predictions {
        for (kind, s) in &p.modality_attention {
            let _ = writeln!(out, "{},{kind},{s}", p.patient_id);
        }
    }
    out
}
