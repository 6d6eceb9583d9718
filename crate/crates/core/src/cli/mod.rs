//! The `frrc` command-line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numeric failure.

mod plot;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::synth::{parse_dataset_spec, write_dataset, DEFAULT_DATASET_SPEC};
use crate::data::{load_features, DataError, Manifest, Split};
use crate::density::DensityError;
use crate::model::{Checkpoint, KernelKind, ModelConfig, ModelError, Positional, RowPool};
use crate::train::{
    evaluate, grad_check, load_split, loss_curve_csv, predict, train_from_manifest, EvalReport,
    TrainConfig, TrainError,
};

pub use plot::{write_pgm, PlotFiles};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Data(m) | Self::Numeric(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<DensityError> for CliError {
    fn from(e: DensityError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => Self::Usage(m),
            e => Self::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteGradient(_) | TrainError::Diverged { .. } => {
                Self::Numeric(e.to_string())
            }
            TrainError::Model(m) => m.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Density(d) => d.into(),
            TrainError::Config(m) => Self::Data(m),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

/// Everything a run depends on. Loaded from TOML; unknown keys are errors.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub paths: Paths,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {}", path.display(), e.message())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "frrc", version, about = "Repetition counting on per-frame feature sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (features, annotations, manifest).
    GenSynth {
        /// Dataset spec file; the built-in spec is used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the train split of a manifest.
    Train(TrainArgs),
    /// Score a checkpoint on a split, or score a predictions file.
    Eval(EvalArgs),
    /// Predict the density map and count of one feature file.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        /// Write `frame,density` rows here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump density maps and similarity matrices of a trained run.
    Plot {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Defaults to `<run-dir>/plots`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
struct Overrides {
    /// TOML run config; flags below take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the small desk-scale model and its training schedule.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    kernel_kind: Option<KernelKind>,
    #[arg(long)]
    num_blocks: Option<usize>,
    #[arg(long)]
    d0: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    decoder_layers: Option<usize>,
    #[arg(long)]
    row_pool: Option<RowPool>,
    #[arg(long)]
    positional: Option<Positional>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut rc = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.desk {
            rc.model = ModelConfig::desk();
            rc.train = TrainConfig::desk();
        }
        let m = &mut rc.model;
        let t = &mut rc.train;
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src.clone() {
                    $dst = v;
                }
            };
        }
        set!(t.stride, self.stride);
        set!(m.kernel_kind, self.kernel_kind);
        set!(m.num_blocks, self.num_blocks);
        set!(m.d0, self.d0);
        set!(m.d_model, self.d_model);
        set!(m.heads, self.heads);
        set!(m.decoder_layers, self.decoder_layers);
        set!(m.row_pool, self.row_pool);
        set!(m.positional, self.positional);
        set!(m.dropout, self.dropout);
        set!(t.epochs, self.epochs);
        set!(t.batch_size, self.batch_size);
        set!(t.lr, self.lr);
        set!(t.seed, self.seed);
        set!(t.init_seed, self.init_seed);
        set!(t.eval_every, self.eval_every);
        if self.max_steps.is_some() {
            t.max_steps = self.max_steps;
        }
        rc.model.validate()?;
        rc.train.validate()?;
        Ok(rc)
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Checkpoint to score; defaults to `<run-dir>/best.frrc`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// CSV with `video_id,true_count,predicted_count` rows to score instead
    /// of running a model.
    #[arg(long, conflicts_with_all = ["checkpoint", "run_dir"])]
    predictions: Option<PathBuf>,
    /// Write the per-video report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 40)]
    len: usize,
    /// Entries compared per checked tensor.
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[command(flatten)]
    overrides: Overrides,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            return Err(CliError::Usage(e.to_string()));
        }
    };
    match cli.command {
        Command::GenSynth { spec, out } => cmd_gen_synth(spec.as_deref(), &out),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict {
            checkpoint,
            features,
            out,
        } => cmd_predict(&checkpoint, &features, out.as_deref()),
        Command::Plot {
            run_dir,
            manifest,
            split,
            out,
        } => cmd_plot(&run_dir, manifest.as_deref(), split, out.as_deref()),
        Command::GradCheck(a) => cmd_grad_check(a),
    }
}

fn cmd_gen_synth(spec: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let (text, origin) = match spec {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|e| io_err(p, e))?,
            p.display().to_string(),
        ),
        None => (DEFAULT_DATASET_SPEC.to_string(), "built-in spec".to_string()),
    };
    let spec = parse_dataset_spec(&text, &origin)?;
    let manifest = write_dataset(&spec, out)?;
    println!(
        "wrote {} videos and {}",
        manifest.entries.len(),
        out.join("manifest.json").display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut rc = a.overrides.resolve()?;
    if a.manifest.is_some() {
        rc.paths.manifest = a.manifest;
    }
    if a.run_dir.is_some() {
        rc.paths.run_dir = a.run_dir;
    }
    let manifest_path = rc
        .paths
        .manifest
        .clone()
        .ok_or_else(|| CliError::Usage("no manifest given (--manifest or paths.manifest)".into()))?;
    let run_dir = rc
        .paths
        .run_dir
        .clone()
        .ok_or_else(|| CliError::Usage("no run directory given (--run-dir or paths.run_dir)".into()))?;
    std::fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
    write_file(&run_dir.join("config.toml"), rc.to_toml())?;

    let manifest = Manifest::load(&manifest_path)?;
    let outcome = train_from_manifest(&manifest, &rc.model, &rc.train, |r| {
        if let Some(m) = r.val_mae {
            eprintln!(
                "epoch {} loss {:.6} selection MAE {:.4} OBO {:.4}",
                r.epoch,
                r.train_loss,
                m,
                r.val_obo.unwrap_or(0.0)
            );
        }
    })?;
    outcome.best.save(run_dir.join("best.frrc"))?;
    outcome.last.save(run_dir.join("last.frrc"))?;
    write_file(&run_dir.join("loss.csv"), loss_curve_csv(&outcome.curve))?;
    println!(
        "trained {} steps; best epoch {}; checkpoint {}",
        outcome.steps,
        outcome.best_epoch.map_or("-".to_string(), |e| e.to_string()),
        run_dir.join("best.frrc").display()
    );
    Ok(())
}

/// Run config echoed by `train`, if present.
fn run_config_of(run_dir: &Path) -> Result<Option<RunConfig>, CliError> {
    let p = run_dir.join("config.toml");
    if p.exists() {
        RunConfig::load(&p).map(Some)
    } else {
        Ok(None)
    }
}

fn manifest_for(explicit: Option<&Path>, run_dir: Option<&Path>) -> Result<(Manifest, usize), CliError> {
    let rc = match run_dir {
        Some(d) => run_config_of(d)?,
        None => None,
    };
    let stride = rc.as_ref().map_or(1, |r| r.train.stride);
    let path = explicit
        .map(Path::to_path_buf)
        .or_else(|| rc.and_then(|r| r.paths.manifest))
        .ok_or_else(|| CliError::Usage("no manifest given".into()))?;
    Ok((Manifest::load(&path)?, stride))
}

fn parse_predictions(path: &Path) -> Result<EvalReport, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.starts_with("video_id")) {
            continue;
        }
        let bad = |m: &str| CliError::Data(format!("{} line {}: {m}", path.display(), i + 1));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() < 3 {
            return Err(bad("expected video_id,true_count,predicted_count"));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(&format!("bad number {s:?}")))
        };
        rows.push((f[0].to_string(), num(f[1])?, num(f[2])?));
    }
    Ok(EvalReport::from_counts(rows))
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let report = if let Some(p) = &a.predictions {
        parse_predictions(p)?
    } else {
        let ck_path = match (&a.checkpoint, &a.run_dir) {
            (Some(c), _) => c.clone(),
            (None, Some(d)) => d.join("best.frrc"),
            (None, None) => return Err(CliError::Usage("give --checkpoint, --run-dir or --predictions".into())),
        };
        let ck = Checkpoint::load(&ck_path)?;
        let (manifest, stride) = manifest_for(a.manifest.as_deref(), a.run_dir.as_deref())?;
        let items = load_split(&manifest, a.split, stride)?;
        evaluate(&items, &ck)?
    };
    print!("{}", report.summary());
    if let Some(out) = &a.out {
        write_file(out, report.to_csv())?;
    }
    Ok(())
}

fn cmd_predict(checkpoint: &Path, features: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let seq = load_features(features)?;
    let (density, count) = predict(&seq, &ck)?;
    if !density.values.iter().all(|v| v.is_finite()) {
        return Err(CliError::Numeric(format!("{}: non-finite density", seq.video_id)));
    }
    println!("{} {:.4}", seq.video_id, count);
    if let Some(out) = out {
        let mut s = String::from("frame,density\n");
        for (t, v) in density.values.iter().enumerate() {
            s.push_str(&format!("{t},{v:.9}\n"));
        }
        write_file(out, s)?;
    }
    Ok(())
}

fn cmd_plot(run_dir: &Path, manifest: Option<&Path>, split: Split, out: Option<&Path>) -> Result<(), CliError> {
    let ck_path = run_dir.join("best.frrc");
    if !ck_path.exists() {
        return Err(CliError::Data(format!("{} not found", ck_path.display())));
    }
    let ck = Checkpoint::load(&ck_path)?;
    let (manifest, stride) = manifest_for(manifest, Some(run_dir))?;
    let items = load_split(&manifest, split, stride)?;
    let out_dir = out.map_or_else(|| run_dir.join("plots"), Path::to_path_buf);
    std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;
    for (seq, ann) in &items {
        let files = plot::plot_video(&out_dir, seq, ann, &ck)?;
        println!("{}", files.density.display());
    }
    Ok(())
}

fn cmd_grad_check(a: GradCheckArgs) -> Result<(), CliError> {
    let rc = a.overrides.resolve()?;
    let report = grad_check(&rc.model, a.len, rc.train.init_seed, a.samples, a.step)?;
    for e in report.by_group() {
        println!(
            "{:<24} {:<28} analytic {:+.6e} numeric {:+.6e} rel {:.2e}",
            e.group,
            e.tensor,
            e.analytic,
            e.numeric,
            e.rel_error()
        );
    }
    let worst = report.max_rel_error();
    if worst < a.tolerance {
        println!(
            "gradient check passed: max relative error {worst:.2e} ({} kinked entries skipped)",
            report.skipped
        );
        Ok(())
    } else {
        Err(CliError::Numeric(format!(
            "gradient check failed: max relative error {worst:.2e} >= {:.0e}",
            a.tolerance
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trip_and_unknown_keys() {
        let mut rc = RunConfig::default();
        rc.model = ModelConfig::desk();
        rc.train.max_steps = Some(12);
        rc.paths.manifest = Some("data/manifest.json".into());
        let back = RunConfig::from_toml(&rc.to_toml()).unwrap();
        assert_eq!(back, rc);
        let err = RunConfig::from_toml("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.message().contains("learning_rate"));
    }

    #[test]
    fn predictions_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        std::fs::write(&p, "video_id,true_count,predicted_count\na,10,8\nb,5,5\n").unwrap();
        let r = parse_predictions(&p).unwrap();
        assert!((r.mae - 0.1).abs() < 1e-15);
        assert_eq!(r.obo, 0.5);
        std::fs::write(&p, "a,10,x\n").unwrap();
        let e = parse_predictions(&p).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.message().contains("line 1"));
    }
}
