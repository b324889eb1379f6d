//! Finite-difference check of the full per-patient objective.

use std::collections::BTreeMap;

use serde::Serialize;

use super::model::{patient_loss, patient_objective, target_for, Architecture, LossSettings};
use crate::alignment::{MemoryQueue, QueueEntry, HUB_DIM};
use crate::cohort::{generate_synthetic, Cohort, GenConfig, InstanceRange, ModalityKind};
use crate::error::Result;
use crate::numerics::{finite_diff_check_with, GradCheckOptions, GradCheckReport, ParamStore, SeededRng};
use crate::survival::{SurvivalTarget, WarmupSchedule};

const GRADCHECK_K: usize = 4;

/// Three patients covering every loss branch: an event, a censored patient
/// with a pseudo-label, and a censored patient in the last interval without
/// radiology.
pub fn gradcheck_cohort(seed: u64) -> Result<Cohort> {
    let cfg = GenConfig {
        n_patients: 3,
        missing_prob: BTreeMap::new(),
        instances: ModalityKind::ALL
            .into_iter()
            .map(|k| (k, InstanceRange { min: 2, max: 3 }))
            .collect(),
        seed,
        ..GenConfig::default()
    };
    let mut cohort = generate_synthetic(&cfg)?;
    let labels = [(true, 1), (false, 0), (false, GRADCHECK_K - 1)];
    for (p, (event, interval)) in cohort.patients.iter_mut().zip(labels) {
        p.event = event;
        p.interval = Some(interval);
    }
    cohort.patients[2].feature_sets.remove(&ModalityKind::Radiology);
    cohort.interval_edges = vec![10.0, 20.0, 30.0];
    Ok(cohort)
}

fn random_queue(rng: &mut SeededRng, capacity: usize) -> MemoryQueue {
    let mut q = MemoryQueue::new(capacity);
    for i in 0..capacity {
        q.push(QueueEntry {
            patient_id: format!("Q{i}"),
            hub: (0..HUB_DIM).map(|_| rng.normal()).collect(),
            other: (0..HUB_DIM).map(|_| rng.normal()).collect(),
        });
    }
    q
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelGradCheck {
    pub points: Vec<GradCheckReport>,
}

impl ModelGradCheck {
    pub fn passed(&self) -> bool {
        self.points.iter().all(GradCheckReport::passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.points
            .iter()
            .map(GradCheckReport::max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn entries_checked(&self) -> usize {
        self.points.iter().map(GradCheckReport::entries_checked).sum()
    }
}

/// Checks the gradient of `Σ_patients L` at `points` seeded initialisations.
/// Soft labels and queue contents are frozen at their base values so the
/// objective is a fixed function of the parameters.
pub fn model_gradcheck(seed: u64, points: usize, opts: &GradCheckOptions) -> Result<ModelGradCheck> {
    let cohort = gradcheck_cohort(seed)?;
    let mut reports = Vec::with_capacity(points);
    for point in 0..points {
        let mut rng = SeededRng::substream(seed, 1000 + point as u64);
        let mut store = ParamStore::new();
        let arch = Architecture::register(&mut store, GRADCHECK_K, &mut rng)?;
        let image_queue = random_queue(&mut rng, 4);
        let text_queue = random_queue(&mut rng, 4);
        let settings = LossSettings {
            lambda: 1.0,
            lambda_cen: 1.0,
            lambda_con: 0.5,
            tau: 0.07,
            image_queue: Some(&image_queue),
            text_queue: Some(&text_queue),
            t: 50,
            schedule: WarmupSchedule { t_total: 100 },
        };

        let mut targets: Vec<SurvivalTarget> = Vec::with_capacity(cohort.len());
        for p in &cohort.patients {
            let fwd = arch.forward(&store, p)?;
            let target = target_for(p, fwd.hazards(), true)?;
            let (_, grads) = patient_objective(&fwd, &target, &settings)?;
            arch.backward(&mut store, p, &fwd, &grads.d_hazards, &grads.d_hubs);
            targets.push(target);
        }
        let objective = |s: &ParamStore| -> Result<f64> {
            let mut total = 0.0;
            for (p, target) in cohort.patients.iter().zip(&targets) {
                total += patient_loss(&arch, s, p, target, &settings)?;
            }
            Ok(total)
        };
        let point_opts = GradCheckOptions {
            seed: opts.seed.wrapping_add(point as u64),
            ..opts.clone()
        };
        reports.push(finite_diff_check_with(objective, &store, &point_opts)?);
    }
    Ok(ModelGradCheck { points: reports })
}
