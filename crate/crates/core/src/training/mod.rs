//! Training loop (one patient per step), checkpoints, evaluation and
//! cross-validation.

mod checkpoint;
mod cv;
mod evaluate;
mod gradcheck;
pub mod model;
mod optim;

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use cv::{cross_validate, fold_assignment, CvReport, FoldResult};
pub use evaluate::{
    evaluate, inter_attention_csv, intra_attention_csv, predict, predictions_csv, Evaluation, PatientPrediction,
};
pub use gradcheck::{gradcheck_cohort, model_gradcheck, ModelGradCheck};
pub use model::{Architecture, Forward, LossSettings, PatientLoss};
pub use optim::Adam;

use crate::alignment::{compute_lambda_con, ContrastiveWeights, MemoryQueue, QueueEntry};
use crate::cohort::{bin_intervals, Cohort, ModalityKind};
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, SeededRng};
use crate::survival::WarmupSchedule;
use model::{patient_objective, target_for};

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_QUEUE: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the contrastive term in the total loss.
    pub lambda: f64,
    pub lambda_cen: f64,
    pub tau: f64,
    pub queue_size: usize,
    pub intervals: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Warm-up horizon in iterations; defaults to `epochs × n_train`.
    pub warmup_total: Option<u64>,
    pub grad_clip: f64,
    /// Overrides the text-side weight derived from pair counts.
    pub lambda_con: Option<f64>,
    /// Enables the contrastive alignment term.
    pub contrastive: bool,
    /// Enables soft pseudo-labels for censored patients.
    pub pseudo_labels: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lambda_cen: 1.0,
            tau: 0.07,
            queue_size: 64,
            intervals: 4,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: DEFAULT_EPOCHS,
            seed: 0,
            warmup_total: None,
            grad_clip: 5.0,
            lambda_con: None,
            contrastive: true,
            pseudo_labels: true,
        }
    }
}

/// Held-out concordance on the synthetic benchmark peaks around here; much
/// longer runs let the contrastive term start memorising training pairs.
pub const DEFAULT_EPOCHS: usize = 12;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("{field}: {why}")));
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !finite_nonneg(self.lambda) {
            return bad("lambda", "must be finite and nonnegative");
        }
        if !finite_nonneg(self.lambda_cen) {
            return bad("lambda_cen", "must be finite and nonnegative");
        }
        if !finite_pos(self.tau) {
            return bad("tau", "must be positive");
        }
        if self.queue_size < 2 {
            return bad("queue_size", "must be at least 2");
        }
        if self.intervals < 2 {
            return bad("intervals", "must be at least 2");
        }
        if !finite_pos(self.learning_rate) {
            return bad("learning_rate", "must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "must lie in [0, 1)");
        }
        if !finite_pos(self.eps) {
            return bad("eps", "must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1");
        }
        if self.warmup_total == Some(0) {
            return bad("warmup_total", "must be positive");
        }
        if !finite_pos(self.grad_clip) {
            return bad("grad_clip", "must be positive");
        }
        if let Some(l) = self.lambda_con {
            if !finite_nonneg(l) {
                return bad("lambda_con", "must be finite and nonnegative");
            }
        }
        Ok(())
    }
}

/// Per-epoch means. Each component is averaged over the steps where it was
/// defined (zero when it never was); `lambda_pro` is the last value used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l: f64,
    pub l_con: f64,
    pub l_wr: f64,
    pub l_pb: f64,
    pub l_uncen: f64,
    pub l_cen: f64,
    pub l_cen_p: f64,
    pub lambda_pro: f64,
    pub l_surv: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct EpochAccumulator {
    steps: usize,
    l: f64,
    l_con: f64,
    l_surv: f64,
    wr: (f64, usize),
    pb: (f64, usize),
    uncen: (f64, usize),
    cen: (f64, usize),
    cen_p: (f64, usize),
    lambda_pro: f64,
}

impl EpochAccumulator {
    fn add(&mut self, loss: &PatientLoss) {
        let bump = |slot: &mut (f64, usize), v: f64| {
            slot.0 += v;
            slot.1 += 1;
        };
        self.steps += 1;
        self.l += loss.total;
        self.l_con += loss.l_con;
        self.l_surv += loss.survival.total;
        if let Some(v) = loss.l_wr {
            bump(&mut self.wr, v);
        }
        if let Some(v) = loss.l_pb {
            bump(&mut self.pb, v);
        }
        let s = &loss.survival;
        if s.n_uncen > 0 {
            bump(&mut self.uncen, s.l_uncen);
        }
        if s.n_cen > 0 {
            bump(&mut self.cen, s.l_cen);
        }
        if s.n_pseudo > 0 {
            bump(&mut self.cen_p, s.l_cen_p);
        }
        self.lambda_pro = s.lambda_pro;
    }

    fn finish(&self, epoch: usize) -> EpochLoss {
        let mean = |(sum, n): (f64, usize)| if n == 0 { 0.0 } else { sum / n as f64 };
        let steps = self.steps.max(1) as f64;
        EpochLoss {
            epoch,
            l: self.l / steps,
            l_con: self.l_con / steps,
            l_wr: mean(self.wr),
            l_pb: mean(self.pb),
            l_uncen: mean(self.uncen),
            l_cen: mean(self.cen),
            l_cen_p: mean(self.cen_p),
            lambda_pro: self.lambda_pro,
            l_surv: self.l_surv / steps,
        }
    }
}

/// `epoch,L,L_con,L_WR,L_PB,L_uncen,L_cen,L_cen_p,lambda_pro` rows.
pub fn loss_log_csv(log: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,L,L_con,L_WR,L_PB,L_uncen,L_cen,L_cen_p,lambda_pro\n");
    for e in log {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.epoch, e.l, e.l_con, e.l_wr, e.l_pb, e.l_uncen, e.l_cen, e.l_cen_p, e.lambda_pro
        );
    }
    out
}

/// Bins `cohort` with `k` intervals unless it already carries edges for `k`.
fn ensure_binned(cohort: &Cohort, k: usize) -> Result<Cohort> {
    match cohort.n_intervals() {
        Some(existing) if existing == k => Ok(cohort.clone()),
        Some(existing) => Err(Error::Config(format!(
            "cohort is binned into {existing} intervals but the config asks for {k}"
        ))),
        None => bin_intervals(cohort, k),
    }
}

/// Resumable training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    cfg: TrainConfig,
    cohort: Cohort,
    arch: Architecture,
    params: ParamStore,
    adam: Adam,
    image_queue: Option<MemoryQueue>,
    text_queue: Option<MemoryQueue>,
    weights: ContrastiveWeights,
    lambda_con: f64,
    schedule: WarmupSchedule,
    rng: SeededRng,
    iteration: u64,
    epoch: usize,
    order: Vec<usize>,
    position: usize,
    accum: EpochAccumulator,
    log: Vec<EpochLoss>,
    seen: BTreeSet<String>,
}

impl Trainer {
    pub fn new(cohort: &Cohort, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if cohort.is_empty() {
            return Err(Error::Config("training cohort is empty".into()));
        }
        let cohort = ensure_binned(cohort, cfg.intervals)?;
        cohort.validate()?;

        let mut params = ParamStore::new();
        let arch = Architecture::register(
            &mut params,
            cfg.intervals,
            &mut SeededRng::substream(cfg.seed, STREAM_INIT),
        )?;
        let adam = Adam::new(&params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
        let weights = compute_lambda_con(&cohort)?;
        let lambda_con = cfg.lambda_con.unwrap_or(weights.lambda_con);
        let t_total = cfg
            .warmup_total
            .unwrap_or((cfg.epochs as u64) * cohort.len() as u64);
        let mut seen: BTreeSet<String> = cohort.patients.iter().map(|p| p.id.clone()).collect();

        let (image_queue, text_queue) = if cfg.contrastive {
            init_queues(&arch, &params, &cohort, &cfg, &weights, &mut seen)?
        } else {
            (None, None)
        };

        Ok(Self {
            rng: SeededRng::substream(cfg.seed, STREAM_SHUFFLE),
            cfg,
            cohort,
            arch,
            params,
            adam,
            image_queue,
            text_queue,
            weights,
            lambda_con,
            schedule: WarmupSchedule { t_total },
            iteration: 0,
            epoch: 0,
            order: Vec::new(),
            position: 0,
            accum: EpochAccumulator::default(),
            log: Vec::new(),
            seen,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn cohort(&self) -> &Cohort {
        &self.cohort
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn epochs_completed(&self) -> usize {
        self.epoch
    }

    pub fn loss_log(&self) -> &[EpochLoss] {
        &self.log
    }

    pub fn contrastive_weights(&self) -> ContrastiveWeights {
        self.weights
    }

    pub fn lambda_con(&self) -> f64 {
        self.lambda_con
    }

    pub fn image_queue(&self) -> Option<&MemoryQueue> {
        self.image_queue.as_ref()
    }

    pub fn text_queue(&self) -> Option<&MemoryQueue> {
        self.text_queue.as_ref()
    }

    /// Ids of every patient that influenced binning, queue contents or a
    /// parameter update.
    pub fn influencing_ids(&self) -> &BTreeSet<String> {
        &self.seen
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    fn settings(&self) -> LossSettings<'_> {
        LossSettings {
            lambda: self.cfg.lambda,
            lambda_cen: self.cfg.lambda_cen,
            lambda_con: self.lambda_con,
            tau: self.cfg.tau,
            image_queue: self.image_queue.as_ref(),
            text_queue: self.text_queue.as_ref(),
            t: self.iteration,
            schedule: self.schedule,
        }
    }

    /// One patient step: forward, loss, backward, clipped Adam update, then
    /// the detached pairs enter their queues.
    pub fn step(&mut self) -> Result<PatientLoss> {
        if self.position == 0 {
            self.order = (0..self.cohort.len()).collect();
            self.rng.shuffle(&mut self.order);
        }
        let idx = self.order[self.position];
        let patient = &self.cohort.patients[idx];
        let attempt = self.arch.forward(&self.params, patient).and_then(|fwd| {
            let target = target_for(patient, fwd.hazards(), self.cfg.pseudo_labels)?;
            let (loss, grads) = patient_objective(&fwd, &target, &self.settings())?;
            Ok((fwd, loss, grads))
        });
        // a diverged parameter surfaces as a numeric error before any gradient exists
        let (fwd, loss, grads) = match attempt {
            Ok(x) => x,
            Err(e) => match self.params.first_non_finite_value() {
                Some(name) => {
                    return Err(Error::NonFiniteLoss {
                        iteration: self.iteration,
                        param: name.to_string(),
                    })
                }
                None => return Err(e),
            },
        };
        self.arch
            .backward(&mut self.params, patient, &fwd, &grads.d_hazards, &grads.d_hubs);

        let norm = self.params.grad_norm();
        if !loss.total.is_finite() || !norm.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
                param: self
                    .params
                    .first_non_finite_grad()
                    .unwrap_or("none")
                    .to_string(),
            });
        }
        if norm > self.cfg.grad_clip {
            self.params.scale_grads(self.cfg.grad_clip / norm);
        }
        self.adam.step_and_zero(&mut self.params);

        let pairs = [
            (&mut self.image_queue, loss.l_wr.is_some(), ModalityKind::Wsi, ModalityKind::Radiology),
            (&mut self.text_queue, loss.l_pb.is_some(), ModalityKind::PathReport, ModalityKind::ClinicalNotes),
        ];
        for (queue, used, hub, other) in pairs {
            if let (Some(q), true) = (queue.as_mut(), used) {
                q.push(QueueEntry {
                    patient_id: patient.id.clone(),
                    hub: fwd.hub(hub).expect("side used").to_vec(),
                    other: fwd.hub(other).expect("side used").to_vec(),
                });
            }
        }
        self.seen.insert(patient.id.clone());

        self.accum.add(&loss);
        self.iteration += 1;
        self.position += 1;
        if self.position == self.cohort.len() {
            self.epoch += 1;
            self.log.push(self.accum.finish(self.epoch));
            self.accum = EpochAccumulator::default();
            self.position = 0;
        }
        Ok(loss)
    }

    pub fn run_epoch(&mut self) -> Result<&EpochLoss> {
        let target = self.epoch + 1;
        while self.epoch < target {
            self.step()?;
        }
        Ok(self.log.last().expect("epoch finished"))
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }
}

/// Fills each queue side from the first `M` eligible patients of a seeded
/// shuffle, using the initial parameters. A side with fewer than `M`
/// eligible patients is disabled.
fn init_queues(
    arch: &Architecture,
    params: &ParamStore,
    cohort: &Cohort,
    cfg: &TrainConfig,
    weights: &ContrastiveWeights,
    seen: &mut BTreeSet<String>,
) -> Result<(Option<MemoryQueue>, Option<MemoryQueue>)> {
    let mut order: Vec<usize> = (0..cohort.len()).collect();
    SeededRng::substream(cfg.seed, STREAM_QUEUE).shuffle(&mut order);
    let m = cfg.queue_size;

    let fill = |enabled: bool, hub: ModalityKind, other: ModalityKind, seen: &mut BTreeSet<String>| -> Result<Option<MemoryQueue>> {
        let eligible: Vec<usize> = order
            .iter()
            .copied()
            .filter(|&i| cohort.patients[i].has(hub) && cohort.patients[i].has(other))
            .take(m)
            .collect();
        if !enabled || eligible.len() < m {
            return Ok(None);
        }
        let mut q = MemoryQueue::new(m);
        for i in eligible {
            let p = &cohort.patients[i];
            let fwd = arch.forward(params, p)?;
            q.push(QueueEntry {
                patient_id: p.id.clone(),
                hub: fwd.hub(hub).expect("eligible").to_vec(),
                other: fwd.hub(other).expect("eligible").to_vec(),
            });
            seen.insert(p.id.clone());
        }
        Ok(Some(q))
    };
    let image = fill(weights.image_side_enabled, ModalityKind::Wsi, ModalityKind::Radiology, seen)?;
    let text = fill(true, ModalityKind::PathReport, ModalityKind::ClinicalNotes, seen)?;
    Ok((image, text))
}

/// Trains for `cfg.epochs` and returns the final checkpoint and loss log.
pub fn train(cohort: &Cohort, cfg: &TrainConfig) -> Result<(Checkpoint, Vec<EpochLoss>)> {
    let mut trainer = Trainer::new(cohort, cfg.clone())?;
    trainer.run()?;
    let log = trainer.loss_log().to_vec();
    Ok((trainer.checkpoint(), log))
}
