//! Command-line front end.
//!
//! Every subcommand writes its artifacts next to `--out`, deriving sibling
//! names by replacing the extension (`metrics.json` gives
//! `metrics.predictions.csv` and so on). No output carries a timestamp, so a
//! repeated command with the same inputs and seed rewrites identical bytes.
//!
//! Exit codes: 0 on success, 1 when arguments, config or input files are
//! invalid, 2 when a valid run fails (divergence, failed gradient check).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::cohort::{generate_synthetic, load_cohort, save_cohort, GenConfig};
use crate::error::{Error, Result};
use crate::metrics::{km_csv, kaplan_meier, median_split, stratified_logrank, SurvivalOutcome};
use crate::numerics::GradCheckOptions;
use crate::training::{
    cross_validate, evaluate, inter_attention_csv, intra_attention_csv, load_checkpoint, loss_log_csv, model_gradcheck,
    predictions_csv, save_checkpoint, train, PatientPrediction, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "msurv", version, about = "Multimodal survival modelling on precomputed embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic cohort (JSONL).
    Gen(GenArgs),
    /// Train a model; writes a checkpoint and `<out>.loss.csv`.
    Train(TrainArgs),
    /// Score a checkpoint on a cohort; writes metrics JSON plus prediction,
    /// attention and Kaplan-Meier CSVs.
    Eval(EvalArgs),
    /// K-fold cross-validation; writes fold and summary metrics JSON plus
    /// pooled test predictions.
    Cv(CvArgs),
    /// Finite-difference check of the composed loss gradient.
    Gradcheck(GradcheckArgs),
    /// Median-risk Kaplan-Meier curves and logrank test from a predictions CSV.
    Km(KmArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 367)]
    patients: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Strength of the latent risk factor in the hazard (0 = no information).
    #[arg(long, default_value_t = 1.0)]
    signal: f64,
    #[arg(long, default_value_t = 0.5)]
    censor_rate: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Training config overrides. Precedence is flag, then `--config`, then the
/// built-in default.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// JSON file with any subset of the training config fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_cen: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    queue_size: Option<usize>,
    #[arg(long)]
    intervals: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    warmup_total: Option<u64>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    lambda_con: Option<f64>,
    #[arg(long)]
    contrastive: Option<bool>,
    #[arg(long)]
    pseudo_labels: Option<bool>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)?;
                serde_json::from_str::<TrainConfig>(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => TrainConfig::default(),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(
            seed, epochs, lambda, lambda_cen, tau, queue_size, intervals, learning_rate, beta1, beta2, eps, grad_clip,
            contrastive, pseudo_labels
        );
        if let Some(v) = self.warmup_total {
            cfg.warmup_total = Some(v);
        }
        if let Some(v) = self.lambda_con {
            cfg.lambda_con = Some(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of seeded parameter initialisations.
    #[arg(long, default_value_t = 20)]
    points: usize,
    /// Entries sampled per parameter matrix at each point.
    #[arg(long, default_value_t = 6)]
    entries: usize,
    /// Central-difference step. Smaller steps let round-off dominate on
    /// entries whose gradient is below about 1e-7.
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Optional JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct KmArgs {
    /// CSV with at least `patient_id,time,event,risk` columns.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => gen(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Cv(a) => cv_cmd(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Km(a) => km_cmd(a),
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    out.with_extension(suffix)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let cfg = GenConfig {
        n_patients: a.patients,
        seed: a.seed,
        signal: a.signal,
        censor_rate: a.censor_rate,
        ..GenConfig::default()
    };
    let cohort = generate_synthetic(&cfg)?;
    save_cohort(&cohort, &a.out)?;
    println!("wrote {} patients to {}", cohort.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let cohort = load_cohort(&a.cohort)?;
    let (ckpt, log) = train(&cohort, &cfg)?;
    save_checkpoint(&ckpt, &a.out)?;
    let log_path = sibling(&a.out, "loss.csv");
    fs::write(&log_path, loss_log_csv(&log))?;
    if let Some(last) = log.last() {
        println!("epoch {} L={} L_surv={}", last.epoch, last.l, last.l_surv);
    }
    println!("wrote {} and {}", a.out.display(), log_path.display());
    Ok(())
}

fn km_for(outcomes: &[SurvivalOutcome]) -> Result<String> {
    let split = median_split(outcomes)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| outcomes[i].clone()).collect::<Vec<_>>();
    let (high, low) = (pick(&split.high), pick(&split.low));
    let mut curves = Vec::new();
    if !high.is_empty() {
        curves.push(("high", kaplan_meier(&high)));
    }
    if !low.is_empty() {
        curves.push(("low", kaplan_meier(&low)));
    }
    let named: Vec<(&str, &_)> = curves.iter().map(|(n, c)| (*n, c)).collect();
    Ok(km_csv(&named))
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.model)?;
    let cohort = load_cohort(&a.cohort)?;
    let eval = evaluate(&ckpt, &cohort)?;
    write_json(&a.out, &eval.metrics)?;
    fs::write(sibling(&a.out, "predictions.csv"), predictions_csv(&eval.predictions))?;
    fs::write(sibling(&a.out, "intra_attention.csv"), intra_attention_csv(&eval.predictions))?;
    fs::write(sibling(&a.out, "inter_attention.csv"), inter_attention_csv(&eval.predictions))?;
    let outcomes: Vec<SurvivalOutcome> = eval.predictions.iter().map(PatientPrediction::outcome).collect();
    fs::write(sibling(&a.out, "km.csv"), km_for(&outcomes)?)?;
    println!(
        "ci={} brier={} logrank_p={}",
        eval.metrics.ci, eval.metrics.brier, eval.metrics.logrank_p
    );
    Ok(())
}

fn cv_cmd(a: CvArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let cohort = load_cohort(&a.cohort)?;
    let report = cross_validate(&cohort, &cfg, a.folds)?;
    write_json(&a.out, &report)?;
    let pooled: Vec<PatientPrediction> = report.pooled_predictions().cloned().collect();
    fs::write(sibling(&a.out, "predictions.csv"), predictions_csv(&pooled))?;
    println!(
        "mean_ci={} std_ci={} mean_brier={} pooled_logrank_p={}",
        report.mean_ci, report.std_ci, report.mean_brier, report.pooled_logrank_p
    );
    Ok(())
}

#[derive(Serialize)]
struct GradcheckSummary {
    passed: bool,
    seed: u64,
    points: usize,
    tol: f64,
    max_rel_error: f64,
    entries_checked: usize,
    /// Worst relative error per parameter over all points.
    per_param: BTreeMap<String, f64>,
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<()> {
    if a.points == 0 || a.entries == 0 {
        return Err(Error::Config("points and entries must be at least 1".into()));
    }
    let opts = GradCheckOptions {
        max_entries_per_param: Some(a.entries),
        seed: a.seed,
        ..GradCheckOptions::new(a.step, a.tol)
    };
    let report = model_gradcheck(a.seed, a.points, &opts)?;
    let mut per_param: BTreeMap<String, f64> = BTreeMap::new();
    for point in &report.points {
        for p in &point.params {
            let worst = per_param.entry(p.name.clone()).or_insert(0.0);
            *worst = worst.max(p.max_rel_error);
        }
    }
    let summary = GradcheckSummary {
        passed: report.passed(),
        seed: a.seed,
        points: a.points,
        tol: a.tol,
        max_rel_error: report.max_rel_error(),
        entries_checked: report.entries_checked(),
        per_param,
    };
    for (name, err) in &summary.per_param {
        println!("{name:<28} {err:.3e}");
    }
    println!(
        "{} max_rel_error={:.3e} entries={}",
        if summary.passed { "PASS" } else { "FAIL" },
        summary.max_rel_error,
        summary.entries_checked
    );
    if let Some(out) = &a.out {
        write_json(out, &summary)?;
    }
    if summary.passed {
        Ok(())
    } else {
        Err(Error::GradCheckFailed(format!(
            "max relative error {:.3e} above {}",
            summary.max_rel_error, a.tol
        )))
    }
}

fn read_prediction_outcomes(path: &Path) -> Result<Vec<SurvivalOutcome>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: missing column `{name}`", path.display())))
    };
    let (time, event, risk) = (column("time")?, column("event")?, column("risk")?);
    let mut outcomes = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let field = |idx: usize, name: &str| -> Result<f64> {
            record
                .get(idx)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("`{name}` is not a finite number"),
                })
        };
        let e = field(event, "event")?;
        if e != 0.0 && e != 1.0 {
            return Err(Error::Parse {
                line,
                msg: "`event` must be 0 or 1".into(),
            });
        }
        outcomes.push(SurvivalOutcome::new(field(time, "time")?, e == 1.0, field(risk, "risk")?));
    }
    Ok(outcomes)
}

#[derive(Serialize)]
struct KmSummary {
    threshold: f64,
    n_high: usize,
    n_low: usize,
    chi2: f64,
    p: f64,
}

fn km_cmd(a: KmArgs) -> Result<()> {
    let outcomes = read_prediction_outcomes(&a.predictions)?;
    let (split, lr) = stratified_logrank(&outcomes)?;
    fs::write(&a.out, km_for(&outcomes)?)?;
    let summary = KmSummary {
        threshold: split.threshold,
        n_high: split.high.len(),
        n_low: split.low.len(),
        chi2: lr.chi2,
        p: lr.p,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("msurv").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_file_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"tau": 0.2, "epochs": 3, "lambda": 0.5}"#).unwrap();
        let cli = parse(&["train", "--cohort", "c", "--out", "m", "--config", path.to_str().unwrap(), "--tau", "0.1"]);
        let Command::Train(a) = cli.command else { panic!() };
        let cfg = a.config.resolve().unwrap();
        assert_eq!(cfg.tau, 0.1);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.lambda, 0.5);
        assert_eq!(cfg.queue_size, TrainConfig::default().queue_size);
    }

    #[test]
    fn config_errors_name_the_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"tua": 0.2}"#).unwrap();
        let cli = parse(&["cv", "--cohort", "c", "--out", "o", "--config", path.to_str().unwrap()]);
        let Command::Cv(a) = cli.command else { panic!() };
        let err = a.config.resolve().unwrap_err();
        assert!(err.is_validation());
        assert!(err.to_string().contains("tua"), "{err}");

        let cli = parse(&["train", "--cohort", "c", "--out", "m", "--queue-size", "1"]);
        let Command::Train(a) = cli.command else { panic!() };
        assert!(a.config.resolve().unwrap_err().to_string().contains("queue_size"));
    }

    #[test]
    fn unknown_flags_and_usage_errors_exit_one() {
        assert_eq!(run(["msurv", "gen", "--patients", "3", "--bogus", "1"]), 1);
        assert_eq!(run(["msurv"]), 1);
        assert_eq!(run(["msurv", "--help"]), 0);
    }

    #[test]
    fn sibling_paths_replace_the_extension() {
        assert_eq!(sibling(Path::new("out/metrics.json"), "km.csv"), Path::new("out/metrics.km.csv"));
        assert_eq!(sibling(Path::new("m.ckpt"), "loss.csv"), Path::new("m.loss.csv"));
    }
}
