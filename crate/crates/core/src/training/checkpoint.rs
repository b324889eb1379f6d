//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "MSURVCKP"
//! version  u32
//! hlen     u64      length of the JSON header in bytes
//! header   hlen bytes of UTF-8 JSON
//! values   f64 LE, every parameter matrix row-major in header order
//! adam_m   f64 LE, same layout
//! adam_v   f64 LE, same layout
//! ```
//!
//! The header holds the config, interval edges, iteration counter, RNG
//! position, parameter names and shapes, memory queues and the remaining
//! loop state needed to resume exactly.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, Architecture, EpochAccumulator, EpochLoss, TrainConfig, Trainer};
use crate::alignment::{ContrastiveWeights, MemoryQueue};
use crate::cohort::{assign_intervals, Cohort};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamStore, RngState, SeededRng};
use crate::survival::WarmupSchedule;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"MSURVCKP";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ParamShape {
    name: String,
    rows: usize,
    cols: usize,
}

/// Loop state beyond parameters, edges and RNG.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct LoopState {
    epoch: usize,
    order: Vec<usize>,
    position: usize,
    accum: EpochAccumulator,
    adam_step: u64,
    image_queue: Option<MemoryQueue>,
    text_queue: Option<MemoryQueue>,
    weights: ContrastiveWeights,
    lambda_con: f64,
    warmup_total: u64,
    train_ids: Vec<String>,
    seen: Vec<String>,
    log: Vec<EpochLoss>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    interval_edges: Vec<f64>,
    iteration: u64,
    rng: RngState,
    params: Vec<ParamShape>,
    state: LoopState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ParamStore,
    pub interval_edges: Vec<f64>,
    pub iteration: u64,
    pub rng: RngState,
    pub(crate) state: LoopState,
    pub(crate) adam_m: Vec<Vec<f64>>,
    pub(crate) adam_v: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn n_intervals(&self) -> usize {
        self.interval_edges.len() + 1
    }

    pub fn epochs_completed(&self) -> usize {
        self.state.epoch
    }

    pub fn loss_log(&self) -> &[EpochLoss] {
        &self.state.log
    }

    pub fn train_ids(&self) -> &[String] {
        &self.state.train_ids
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let arch = Architecture::bind(&self.params)?;
        if arch.n_intervals() != self.n_intervals() {
            return Err(Error::Checkpoint(format!(
                "head predicts {} intervals but {} edges are stored",
                arch.n_intervals(),
                self.interval_edges.len()
            )));
        }
        Ok(arch)
    }
}

impl Trainer {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            params: self.params.clone(),
            interval_edges: self.cohort.interval_edges.clone(),
            iteration: self.iteration,
            rng: self.rng.state(),
            state: LoopState {
                epoch: self.epoch,
                order: self.order.clone(),
                position: self.position,
                accum: self.accum.clone(),
                adam_step: self.adam.step,
                image_queue: self.image_queue.clone(),
                text_queue: self.text_queue.clone(),
                weights: self.weights,
                lambda_con: self.lambda_con,
                warmup_total: self.schedule.t_total,
                train_ids: self.cohort.patients.iter().map(|p| p.id.clone()).collect(),
                seen: self.seen.iter().cloned().collect(),
                log: self.log.clone(),
            },
            adam_m: self.adam.m.clone(),
            adam_v: self.adam.v.clone(),
        }
    }

    /// Continues training from `ckpt` on the cohort it was trained on.
    pub fn resume(ckpt: Checkpoint, cohort: &Cohort) -> Result<Self> {
        let Checkpoint {
            config,
            params,
            interval_edges,
            iteration,
            rng,
            state,
            adam_m,
            adam_v,
        } = ckpt;
        config.validate()?;
        let ids: Vec<&str> = cohort.patients.iter().map(|p| p.id.as_str()).collect();
        if ids != state.train_ids.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Checkpoint(
                "cohort does not match the patients the checkpoint was trained on".into(),
            ));
        }
        if !cohort.interval_edges.is_empty() && cohort.interval_edges != interval_edges {
            return Err(Error::EdgeMismatch);
        }
        let cohort = assign_intervals(cohort, &interval_edges);
        let arch = Architecture::bind(&params)?;
        let adam = Adam {
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            step: state.adam_step,
            m: adam_m,
            v: adam_v,
        };
        adam.check_layout(&params)?;
        if state.position > 0 && (state.order.len() != cohort.len() || state.position >= cohort.len()) {
            return Err(Error::Checkpoint("epoch order does not match cohort".into()));
        }
        Ok(Self {
            cfg: config,
            cohort,
            arch,
            params,
            adam,
            image_queue: state.image_queue,
            text_queue: state.text_queue,
            weights: state.weights,
            lambda_con: state.lambda_con,
            schedule: WarmupSchedule {
                t_total: state.warmup_total,
            },
            rng: SeededRng::from_state(&rng),
            iteration,
            epoch: state.epoch,
            order: state.order,
            position: state.position,
            accum: state.accum,
            log: state.log,
            seen: state.seen.into_iter().collect::<BTreeSet<_>>(),
        })
    }
}

fn write_f64s<W: Write>(out: &mut W, data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(data.len() * 8);
    for x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_f64s<R: Read>(input: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated payload: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    let params: Vec<ParamShape> = ckpt
        .params
        .ids()
        .map(|id| {
            let (rows, cols) = ckpt.params.value(id).shape();
            ParamShape {
                name: ckpt.params.name(id).to_string(),
                rows,
                cols,
            }
        })
        .collect();
    let header = Header {
        config: ckpt.config.clone(),
        interval_edges: ckpt.interval_edges.clone(),
        iteration: ckpt.iteration,
        rng: ckpt.rng,
        params,
        state: ckpt.state.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for id in ckpt.params.ids() {
        write_f64s(&mut out, ckpt.params.value(id).data())?;
    }
    for block in [&ckpt.adam_m, &ckpt.adam_v] {
        for m in block {
            write_f64s(&mut out, m)?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input
        .read_exact(&mut json)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&json)?;

    let mut params = ParamStore::new();
    for shape in &header.params {
        let data = read_f64s(&mut input, shape.rows * shape.cols)?;
        params.add(shape.name.clone(), Matrix::from_vec(shape.rows, shape.cols, data)?)?;
    }
    let mut moments = [Vec::new(), Vec::new()];
    for block in &mut moments {
        for shape in &header.params {
            block.push(read_f64s(&mut input, shape.rows * shape.cols)?);
        }
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    let [adam_m, adam_v] = moments;
    let ckpt = Checkpoint {
        config: header.config,
        params,
        interval_edges: header.interval_edges,
        iteration: header.iteration,
        rng: header.rng,
        state: header.state,
        adam_m,
        adam_v,
    };
    ckpt.architecture()?;
    Ok(ckpt)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(ckpt, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
