use serde::Serialize;

use super::{evaluate::predict, PatientPrediction, TrainConfig, Trainer};
use crate::cohort::{assign_intervals, bin_intervals, Cohort};
use crate::error::{Error, Result};
use crate::metrics::{metrics_bundle, stratified_logrank, MetricsBundle, SurvivalOutcome};
use crate::numerics::SeededRng;

const STREAM_FOLDS: u64 = 11;
const STREAM_FOLD_SEEDS: u64 = 12;

/// Fold index per patient: a seeded shuffle dealt round-robin, so fold sizes
/// differ by at most one.
pub fn fold_assignment(n: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::Config(format!("folds must be at least 2, got {folds}")));
    }
    if folds > n {
        return Err(Error::Config(format!("{folds} folds for a cohort of {n} patients")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::substream(seed, STREAM_FOLDS).shuffle(&mut order);
    let mut assignment = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(assignment)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Ids that influenced binning, queues or updates in this fold.
    #[serde(skip)]
    pub influencing_ids: Vec<String>,
    pub interval_edges: Vec<f64>,
    pub metrics: MetricsBundle,
    pub final_train_surv_loss: f64,
    #[serde(skip)]
    pub predictions: Vec<PatientPrediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvReport {
    pub folds: Vec<FoldResult>,
    pub mean_ci: f64,
    /// Sample standard deviation across folds.
    pub std_ci: f64,
    pub mean_brier: f64,
    pub std_brier: f64,
    /// Median-split logrank over the pooled test predictions.
    pub pooled_logrank_chi2: f64,
    pub pooled_logrank_p: f64,
    pub pooled_ci: f64,
}

impl CvReport {
    pub fn pooled_predictions(&self) -> impl Iterator<Item = &PatientPrediction> {
        self.folds.iter().flat_map(|f| f.predictions.iter())
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Trains one model per fold on the other folds and scores it on the held-out
/// fold. Interval edges are refit on each training split; the held-out
/// patients are labelled with those edges.
pub fn cross_validate(cohort: &Cohort, cfg: &TrainConfig, folds: usize) -> Result<CvReport> {
    cfg.validate()?;
    let assignment = fold_assignment(cohort.len(), folds, cfg.seed)?;
    let unbinned = Cohort {
        patients: cohort
            .patients
            .iter()
            .cloned()
            .map(|mut p| {
                p.interval = None;
                p
            })
            .collect(),
        interval_edges: Vec::new(),
    };
    let mut seeds = SeededRng::substream(cfg.seed, STREAM_FOLD_SEEDS);

    let mut results = Vec::with_capacity(folds);
    for fold in 0..folds {
        let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
            (0..cohort.len()).partition(|&i| assignment[i] == fold);
        let train_set = bin_intervals(&unbinned.subset(&train_idx), cfg.intervals)?;
        let test_set = assign_intervals(&unbinned.subset(&test_idx), &train_set.interval_edges);

        let fold_cfg = TrainConfig {
            seed: seeds.next_u64(),
            ..cfg.clone()
        };
        let mut trainer = Trainer::new(&train_set, fold_cfg.clone())?;
        trainer.run()?;
        let ckpt = trainer.checkpoint();
        let predictions = predict(&ckpt, &test_set)?;
        let outcomes: Vec<SurvivalOutcome> = predictions.iter().map(PatientPrediction::outcome).collect();

        results.push(FoldResult {
            fold,
            seed: fold_cfg.seed,
            train_ids: train_set.patients.iter().map(|p| p.id.clone()).collect(),
            test_ids: test_set.patients.iter().map(|p| p.id.clone()).collect(),
            influencing_ids: trainer.influencing_ids().iter().cloned().collect(),
            interval_edges: train_set.interval_edges.clone(),
            metrics: metrics_bundle(&outcomes)?,
            final_train_surv_loss: trainer.loss_log().last().map_or(f64::NAN, |e| e.l_surv),
            predictions,
        });
    }

    let cis: Vec<f64> = results.iter().map(|f| f.metrics.ci).collect();
    let briers: Vec<f64> = results.iter().map(|f| f.metrics.brier).collect();
    let (mean_ci, std_ci) = mean_std(&cis);
    let (mean_brier, std_brier) = mean_std(&briers);
    let pooled: Vec<SurvivalOutcome> = results
        .iter()
        .flat_map(|f| f.predictions.iter().map(PatientPrediction::outcome))
        .collect();
    let (_, lr) = stratified_logrank(&pooled)?;
    Ok(CvReport {
        pooled_ci: crate::metrics::concordance_index(&pooled)?,
        folds: results,
        mean_ci,
        std_ci,
        mean_brier,
        std_brier,
        pooled_logrank_chi2: lr.chi2,
        pooled_logrank_p: lr.p,
    })
}
