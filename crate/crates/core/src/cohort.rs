//! Patient records, interval binning, JSON Lines cohort files and the
//! synthetic censored multi-modal cohort generator.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, SeededRng};

pub const COHORT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModalityKind {
    /// Whole-slide image patch embeddings.
    #[serde(rename = "WSI")]
    Wsi,
    PathReport,
    Radiology,
    /// Radiology reports, history and colonoscopy notes pooled into one set.
    ClinicalNotes,
}

impl ModalityKind {
    pub const ALL: [ModalityKind; 4] = [
        ModalityKind::Wsi,
        ModalityKind::PathReport,
        ModalityKind::Radiology,
        ModalityKind::ClinicalNotes,
    ];

    pub const OPTIONAL: [ModalityKind; 2] = [ModalityKind::Radiology, ModalityKind::ClinicalNotes];

    pub fn dim(self) -> usize {
        match self {
            ModalityKind::ClinicalNotes => 1024,
            _ => 512,
        }
    }

    pub fn is_optional(self) -> bool {
        matches!(self, ModalityKind::Radiology | ModalityKind::ClinicalNotes)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModalityKind::Wsi => "WSI",
            ModalityKind::PathReport => "PathReport",
            ModalityKind::Radiology => "Radiology",
            ModalityKind::ClinicalNotes => "ClinicalNotes",
        }
    }

    fn index(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ModalityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModalityKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModalityKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality {s}")))
    }
}

/// One patient's instance embeddings for one modality, `N × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    modality: ModalityKind,
    features: Matrix,
}

impl FeatureSet {
    pub fn new(modality: ModalityKind, features: Matrix) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Shape(format!("{modality} feature set has no instances")));
        }
        if features.cols() != modality.dim() {
            return Err(Error::Shape(format!(
                "{modality} expects width {}, got {}",
                modality.dim(),
                features.cols()
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self { modality, features })
    }

    pub fn modality(&self) -> ModalityKind {
        self.modality
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn n_instances(&self) -> usize {
        self.features.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub feature_sets: BTreeMap<ModalityKind, FeatureSet>,
    /// Months to event or censoring.
    pub time: f64,
    /// `true` when the event was observed (uncensored).
    pub event: bool,
    /// Discrete interval label; `None` until binned.
    pub interval: Option<usize>,
}

impl PatientRecord {
    pub fn has(&self, kind: ModalityKind) -> bool {
        self.feature_sets.contains_key(&kind)
    }

    pub fn get(&self, kind: ModalityKind) -> Option<&FeatureSet> {
        self.feature_sets.get(&kind)
    }

    pub fn present_modalities(&self) -> impl Iterator<Item = ModalityKind> + '_ {
        self.feature_sets.keys().copied()
    }

    /// Drops every optional modality.
    pub fn strip_optional(&mut self) {
        self.feature_sets.retain(|k, _| !k.is_optional());
    }

    pub fn validate(&self) -> Result<()> {
        for kind in [ModalityKind::Wsi, ModalityKind::PathReport] {
            if !self.has(kind) {
                return Err(Error::MissingModality {
                    patient: self.id.clone(),
                    modality: kind.to_string(),
                });
            }
        }
        for (kind, fs) in &self.feature_sets {
            if fs.modality() != *kind || fs.features().cols() != kind.dim() {
                return Err(Error::DimMismatch(self.id.clone()));
            }
        }
        if !(self.time.is_finite() && self.time > 0.0) {
            return Err(Error::Config(format!(
                "patient {}: time must be positive, got {}",
                self.id, self.time
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
    /// `K − 1` strictly increasing cut points; empty when unbinned.
    pub interval_edges: Vec<f64>,
}

impl Cohort {
    pub fn new(patients: Vec<PatientRecord>) -> Result<Self> {
        let c = Self {
            patients,
            interval_edges: Vec::new(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// Number of intervals when binned.
    pub fn n_intervals(&self) -> Option<usize> {
        let binned = !self.interval_edges.is_empty()
            && self.patients.iter().all(|p| p.interval.is_some());
        binned.then(|| self.interval_edges.len() + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for p in &self.patients {
            if !seen.insert(p.id.as_str()) {
                return Err(Error::DuplicatePatient(p.id.clone()));
            }
            p.validate()?;
        }
        if self.interval_edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("interval edges must be strictly increasing".into()));
        }
        if let Some(k) = (!self.interval_edges.is_empty()).then(|| self.interval_edges.len() + 1) {
            for p in &self.patients {
                if let Some(i) = p.interval {
                    if i >= k {
                        return Err(Error::InvalidInterval { index: i, k });
                    }
                }
            }
        }
        Ok(())
    }

    /// Patients at `indices`, keeping the edge structure.
    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort {
            patients: indices.iter().map(|&i| self.patients[i].clone()).collect(),
            interval_edges: self.interval_edges.clone(),
        }
    }

    pub fn count_with(&self, kind: ModalityKind) -> usize {
        self.patients.iter().filter(|p| p.has(kind)).count()
    }

    pub fn n_events(&self) -> usize {
        self.patients.iter().filter(|p| p.event).count()
    }
}

// ---------------------------------------------------------------------------
// Interval binning

/// Cut points at the `j/k` quantiles (nearest rank) of the uncensored times.
pub fn interval_edges(cohort: &Cohort, k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 intervals, got {k}")));
    }
    let mut times: Vec<f64> = cohort
        .patients
        .iter()
        .filter(|p| p.event)
        .map(|p| p.time)
        .collect();
    if times.len() < k {
        return Err(Error::InsufficientEvents);
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let edges: Vec<f64> = (1..k)
        .map(|j| {
            let rank = (j * n).div_ceil(k); // 1-based
            times[rank - 1]
        })
        .collect();
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InsufficientEvents);
    }
    Ok(edges)
}

/// Index of the interval containing `time`; a time equal to an edge belongs
/// to the lower interval.
pub fn interval_of(time: f64, edges: &[f64]) -> usize {
    edges.partition_point(|&e| e < time)
}

/// Labels every patient against the given edges.
pub fn assign_intervals(cohort: &Cohort, edges: &[f64]) -> Cohort {
    let mut out = cohort.clone();
    out.interval_edges = edges.to_vec();
    for p in &mut out.patients {
        p.interval = Some(interval_of(p.time, edges));
    }
    out
}

pub fn bin_intervals(cohort: &Cohort, k: usize) -> Result<Cohort> {
    let edges = interval_edges(cohort, k)?;
    Ok(assign_intervals(cohort, &edges))
}

// ---------------------------------------------------------------------------
// Synthetic generation

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRange {
    pub min: usize,
    pub max: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n_patients: usize,
    /// Drop probability for each optional modality.
    pub missing_prob: BTreeMap<ModalityKind, f64>,
    pub censor_rate: f64,
    pub instances: BTreeMap<ModalityKind, InstanceRange>,
    /// Weibull scale in months at zero latent risk.
    pub baseline_scale: f64,
    pub weibull_shape: f64,
    pub signal: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    /// Dataset-1-like structure: 367 patients, 180 with radiology and 303
    /// with clinical notes.
    fn default() -> Self {
        let missing_prob = BTreeMap::from([
            (ModalityKind::Radiology, 1.0 - 180.0 / 367.0),
            (ModalityKind::ClinicalNotes, 1.0 - 303.0 / 367.0),
        ]);
        let instances = ModalityKind::ALL
            .into_iter()
            .map(|k| (k, InstanceRange { min: 3, max: 10 }))
            .collect();
        Self {
            n_patients: 367,
            missing_prob,
            censor_rate: 0.5,
            instances,
            baseline_scale: 36.0,
            weibull_shape: 2.0,
            signal: 1.0,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        for (kind, p) in &self.missing_prob {
            if !kind.is_optional() {
                return Err(Error::Config(format!("{kind} is mandatory and cannot be missing")));
            }
            if !(0.0..=1.0).contains(p) {
                return Err(Error::Config(format!("missing_prob for {kind} outside [0,1]")));
            }
        }
        if !(self.censor_rate > 0.0 && self.censor_rate < 1.0) {
            return Err(Error::Config("censor_rate must lie in (0,1)".into()));
        }
        for kind in ModalityKind::ALL {
            let r = self.range(kind);
            if r.min == 0 || r.min > r.max {
                return Err(Error::Config(format!("invalid instance range for {kind}")));
            }
        }
        if !(self.baseline_scale > 0.0 && self.weibull_shape > 0.0) {
            return Err(Error::Config("baseline_scale and weibull_shape must be positive".into()));
        }
        if !self.signal.is_finite() {
            return Err(Error::Config("signal must be finite".into()));
        }
        Ok(())
    }

    fn range(&self, kind: ModalityKind) -> InstanceRange {
        self.instances
            .get(&kind)
            .copied()
            .unwrap_or(InstanceRange { min: 3, max: 10 })
    }
}

const STREAM_MAPS: u64 = 1;
const STREAM_PATIENTS: u64 = 1 << 32;

struct LatentDraw {
    risk: f64,
    event_time: f64,
    censor_uniform: f64,
}

/// Generated cohort together with each patient's latent risk.
pub fn generate_synthetic_with_latent(cfg: &GenConfig) -> Result<(Cohort, Vec<f64>)> {
    cfg.validate()?;

    let maps: BTreeMap<ModalityKind, Vec<f64>> = ModalityKind::ALL
        .into_iter()
        .map(|kind| {
            let mut rng = SeededRng::substream(cfg.seed, STREAM_MAPS + kind.index());
            (kind, (0..kind.dim()).map(|_| rng.normal()).collect())
        })
        .collect();

    let mut rngs: Vec<SeededRng> = (0..cfg.n_patients)
        .map(|i| SeededRng::substream(cfg.seed, STREAM_PATIENTS + i as u64))
        .collect();

    let draws: Vec<LatentDraw> = rngs
        .iter_mut()
        .map(|rng| {
            let risk = rng.normal();
            let scale = cfg.baseline_scale * (-cfg.signal * risk).exp();
            let event_time = scale * (-rng.open01().ln()).powf(1.0 / cfg.weibull_shape);
            LatentDraw {
                risk,
                event_time,
                censor_uniform: rng.open01(),
            }
        })
        .collect();

    let event_times: Vec<f64> = draws.iter().map(|d| d.event_time).collect();
    let censor_hazard = calibrate_censoring(&event_times, cfg.censor_rate);

    let mut patients = Vec::with_capacity(cfg.n_patients);
    for (i, (draw, rng)) in draws.iter().zip(rngs.iter_mut()).enumerate() {
        let censor_time = -draw.censor_uniform.ln() / censor_hazard;
        let event = draw.event_time <= censor_time;
        let time = draw.event_time.min(censor_time).max(f64::MIN_POSITIVE);

        let mut feature_sets = BTreeMap::new();
        for kind in ModalityKind::ALL {
            let p_missing = cfg.missing_prob.get(&kind).copied().unwrap_or(0.0);
            if kind.is_optional() && rng.bernoulli(p_missing) {
                continue;
            }
            let range = cfg.range(kind);
            let n = rng.int_inclusive(range.min, range.max);
            let map = &maps[&kind];
            let data: Vec<f64> = (0..n)
                .flat_map(|_| map.iter().map(|a| a * draw.risk).collect::<Vec<_>>())
                .map(|x| x + rng.normal())
                .collect();
            let features = Matrix::from_vec(n, kind.dim(), data)?;
            feature_sets.insert(kind, FeatureSet::new(kind, features)?);
        }
        patients.push(PatientRecord {
            id: format!("P{i:05}"),
            feature_sets,
            time,
            event,
            interval: None,
        });
    }
    let latent = draws.iter().map(|d| d.risk).collect();
    Ok((Cohort::new(patients)?, latent))
}

pub fn generate_synthetic(cfg: &GenConfig) -> Result<Cohort> {
    generate_synthetic_with_latent(cfg).map(|(c, _)| c)
}

/// Exponential censoring hazard whose expected censored fraction over the
/// drawn event times equals `target`.
fn calibrate_censoring(event_times: &[f64], target: f64) -> f64 {
    if event_times.is_empty() {
        return 1.0;
    }
    let censored_fraction = |rate: f64| {
        event_times
            .iter()
            .map(|t| -(-rate * t).exp_m1())
            .sum::<f64>()
            / event_times.len() as f64
    };
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if censored_fraction(mid.exp()) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

// ---------------------------------------------------------------------------
// JSON Lines I/O

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    format_version: u32,
    interval_edges: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureSetLine {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatientLine {
    id: String,
    time: f64,
    event: bool,
    interval: Option<usize>,
    modalities: BTreeMap<ModalityKind, FeatureSetLine>,
}

pub fn write_cohort<W: Write>(cohort: &Cohort, mut out: W) -> Result<()> {
    let header = HeaderLine {
        format_version: COHORT_FORMAT_VERSION,
        interval_edges: cohort.interval_edges.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for p in &cohort.patients {
        let line = PatientLine {
            id: p.id.clone(),
            time: p.time,
            event: p.event,
            interval: p.interval,
            modalities: p
                .feature_sets
                .iter()
                .map(|(k, fs)| {
                    let m = fs.features();
                    (
                        *k,
                        FeatureSetLine {
                            n: m.rows(),
                            d: m.cols(),
                            data: m.data().to_vec(),
                        },
                    )
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cohort<R: BufRead>(input: R) -> Result<Cohort> {
    let mut lines = input.lines().enumerate();
    let header: HeaderLine = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?,
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing header record".into(),
            })
        }
    };
    if header.format_version != COHORT_FORMAT_VERSION {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unsupported format_version {}", header.format_version),
        });
    }
    let mut patients = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PatientLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        let mut feature_sets = BTreeMap::new();
        for (kind, fs) in rec.modalities {
            if fs.d != kind.dim() {
                return Err(Error::DimMismatch(rec.id));
            }
            let features = Matrix::from_vec(fs.n, fs.d, fs.data).map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("{kind}: {e}"),
            })?;
            let set = FeatureSet::new(kind, features).map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("patient {} {kind}: {e}", rec.id),
            })?;
            feature_sets.insert(kind, set);
        }
        patients.push(PatientRecord {
            id: rec.id,
            feature_sets,
            time: rec.time,
            event: rec.event,
            interval: rec.interval,
        });
    }
    let cohort = Cohort {
        patients,
        interval_edges: header.interval_edges,
    };
    cohort.validate()?;
    Ok(cohort)
}

pub fn save_cohort(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_cohort(cohort, BufWriter::new(file))
}

pub fn load_cohort(path: impl AsRef<Path>) -> Result<Cohort> {
    let file = File::open(path)?;
    read_cohort(BufReader::new(file))
}
