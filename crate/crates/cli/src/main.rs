use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rvos_autodiff::{Real, TensorError};
use rvos_core::{
    ablation_table, infer_all, load_checkpoint, loss_curve_csv, run_ablation, save_checkpoint, standard_variants, CoreError, Model, Precision, RunConfig, Toggles, Trainer, Variant,
};
use rvos_data::{generate_samples, read_dataset, ti_suite, write_dataset, write_json, DataError, FrameFormat, VideoSample};
use rvos_eval::{dataset_stats, evaluate_all, grouped_report, read_predictions, write_predictions};

/// TI rates of the suite written by `gen --ti-suite`.
const SUITE_RATES: [f64; 10] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Parser)]
#[command(name = "rvos", version, about = "Referring segmentation in untrimmed synthetic videos")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model and write a checkpoint and loss curve.
    Train(TrainArgs),
    /// Run a checkpoint over a dataset and write predictions.
    Infer(InferArgs),
    /// Score serialized predictions against a dataset.
    Eval(EvalArgs),
    /// Dataset statistics.
    Stats(StatsArgs),
    /// Train and evaluate a baseline against ablation variants.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    out: PathBuf,
    /// Number of samples; overrides the configuration.
    #[arg(long)]
    count: Option<usize>,
    /// One sample per TI rate 0, 0.1, ..., 0.9 instead of random samples.
    #[arg(long)]
    ti_suite: bool,
    #[arg(long, value_enum, default_value = "bin")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Bin,
    Png,
}

#[derive(Clone, Copy, ValueEnum)]
enum Prec {
    F32,
    F64,
}

#[derive(Args)]
struct ModelFlags {
    #[arg(long, value_enum)]
    precision: Option<Prec>,
    #[arg(long)]
    no_span: bool,
    #[arg(long)]
    no_rel: bool,
    #[arg(long)]
    coupled_srd: bool,
    #[arg(long)]
    t_train: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

impl ModelFlags {
    fn toggles(&self) -> Toggles {
        Toggles { no_span: self.no_span, no_rel: self.no_rel, coupled_srd: self.coupled_srd }
    }

    fn any_toggle(&self) -> bool {
        self.no_span || self.no_rel || self.coupled_srd || self.t_train.is_some()
    }

    /// Budget and precision overrides; toggles are applied separately.
    fn apply_budget(&self, cfg: &mut RunConfig) {
        if let Some(p) = self.precision {
            cfg.precision = match p {
                Prec::F32 => Precision::F32,
                Prec::F64 => Precision::F64,
            };
        }
        if let Some(s) = self.steps {
            cfg.train.steps = s;
        }
        if let Some(lr) = self.lr {
            cfg.train.lr = lr;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    flags: ModelFlags,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Predictions file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    flags: ModelFlags,
    #[arg(long)]
    data: PathBuf,
    /// Evaluation dataset; the training set when omitted.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_samples(dir: &Path) -> Result<Vec<VideoSample>> {
    let ds = read_dataset(dir)?;
    if ds.samples.is_empty() {
        bail!(DataError::Schema(format!("{}: dataset has no samples", dir.display())));
    }
    Ok(ds.samples)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io { path: dir.display().to_string(), source })?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    if let Some(n) = a.count {
        cfg.num_samples = n;
    }
    let samples = if a.ti_suite { ti_suite(cfg.seed, &SUITE_RATES, &cfg.synth)? } else { generate_samples(cfg.seed, cfg.num_samples, &cfg.synth)? };
    let format = match a.format {
        Format::Bin => FrameFormat::Bin,
        Format::Png => FrameFormat::Png,
    };
    create_dir(&a.out)?;
    let manifest = write_dataset(&samples, &a.out, format)?;
    cfg.save(&a.out.join("config.json"))?;
    println!("wrote {} samples to {}", manifest.samples.len(), a.out.display());
    Ok(())
}

fn train_run<F: Real>(cfg: &RunConfig, samples: &[VideoSample], out: &Path) -> Result<()> {
    let mut trainer = Trainer::<F>::new(cfg)?;
    let curve = match trainer.train(samples, None) {
        Ok(c) => c,
        Err(e @ CoreError::NonFinite { step, .. }) => {
            log::error!("training aborted at step {step}");
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    save_checkpoint(&out.join("checkpoint.json"), cfg, &trainer.params, trainer.step)?;
    write_text(&out.join("loss_curve.csv"), &loss_curve_csv(&curve))?;
    if let (Some(first), Some(last)) = (curve.first(), curve.last()) {
        println!("trained {} steps: loss {:.4} -> {:.4}", curve.len(), first.loss.total, last.loss.total);
    } else {
        println!("0 steps: checkpoint holds the initialization");
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&a.common)?;
    a.flags.apply_budget(&mut cfg);
    cfg.apply(a.flags.toggles());
    if let Some(t) = a.flags.t_train {
        cfg.train.t_train = t;
    }
    cfg.validate()?;
    let samples = load_samples(&a.data)?;
    create_dir(&a.out)?;
    cfg.save(&a.out.join("config.json"))?;
    match cfg.precision {
        Precision::F32 => train_run::<f32>(&cfg, &samples, &a.out),
        Precision::F64 => train_run::<f64>(&cfg, &samples, &a.out),
    }
}

fn infer(a: InferArgs) -> Result<()> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let (model, init) = Model::new(&ckpt.config.model, ckpt.config.seed)?;
    ckpt.check_against(&init)?;
    let samples = load_samples(&a.data)?;
    let preds = match ckpt.config.precision {
        Precision::F32 => infer_all(&model, &ckpt.params.cast::<f32>(), &samples)?,
        Precision::F64 => infer_all(&model, &ckpt.params, &samples)?,
    };
    write_predictions(&a.out, &preds)?;
    println!("wrote {} predictions to {}", preds.len(), a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let preds = read_predictions(&a.predictions)?;
    let samples = load_samples(&a.data)?;
    let report = grouped_report(&evaluate_all(&preds, &samples)?);
    print!("{}", report.to_table());
    println!("{}", report.to_json());
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let cfg = load_config(&a.common)?;
    let samples = load_samples(&a.data)?;
    let st = dataset_stats(&samples, cfg.eval.scene_threshold);
    println!("videos {}  objects {}  expressions {}", st.videos, st.objects, st.expressions);
    println!("mean scenes {:.2}  mean Dur(e) {:.2}  mean Dur(v) {:.2}  mean TI {:.4}", st.mean_scenes, st.mean_dur_e, st.mean_dur_v, st.mean_ti);
    println!("{:<12} {:>6} {:>6} {:>6} {:>8}", "id", "scenes", "dur_e", "dur_v", "ti");
    for e in &st.per_expression {
        println!("{:<12} {:>6} {:>6} {:>6} {:>8.4}", e.id, e.scenes, e.dur_e, e.dur_v, e.ti);
    }
    if let Some(out) = &a.out {
        write_json(out, &st)?;
    }
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let mut base = load_config(&a.common)?;
    a.flags.apply_budget(&mut base);
    base.validate()?;
    let train = load_samples(&a.data)?;
    let eval = match &a.eval_data {
        Some(d) => load_samples(d)?,
        None => train.clone(),
    };
    let variants = if a.flags.any_toggle() {
        let mut v = Variant::new("variant", a.flags.toggles());
        v.t_train = a.flags.t_train;
        vec![Variant::new("baseline", Toggles::default()), v]
    } else {
        standard_variants()
    };
    for v in &variants {
        v.config(&base).validate()?;
    }
    let results = run_ablation(&base, &variants, &train, &eval)?;
    print!("{}", ablation_table(&results));
    if let Some(out) = &a.out {
        write_json(out, &results)?;
    }
    Ok(())
}

/// 2 for configuration problems, 3 for data and schema problems, 4 for numeric failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<CoreError>() {
        return match e {
            CoreError::Config(_) => 2,
            CoreError::Data(d) => data_code(d),
            CoreError::NonFinite { .. } | CoreError::Tensor(_) => 4,
            CoreError::InvalidSpan { .. } | CoreError::Vocab(_) | CoreError::Schema(_) => 3,
        };
    }
    if let Some(d) = err.downcast_ref::<DataError>() {
        return data_code(d);
    }
    if err.downcast_ref::<TensorError>().is_some() {
        return 4;
    }
    3
}

fn data_code(e: &DataError) -> u8 {
    match e {
        DataError::Config(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Gen(a) => gen(a),
        Cmd::Train(a) => train(a),
        Cmd::Infer(a) => infer(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Stats(a) => stats(a),
        Cmd::Ablate(a) => ablate(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
