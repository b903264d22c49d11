//! Command-line driver.
//!
//! Settings resolve in three layers: built-in defaults, then an optional
//! `--config` file of `key = value` lines, then explicit flags.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::evaluation::{self, comparison_csv, fold_csv, significance_summary, CrossvalResult};
use crate::gradcheck;
use crate::model::{parse_key_values, ModelConfig, ModelParams};
use crate::phantom::{
    generate_cohort, read_dataset, sample_stream_inputs, write_dataset, CohortSpec, PatientSeries, PhantomOptions,
    StreamVariant, NUM_CLASSES,
};
use crate::rng::{derive_seed, rng_for};
use crate::training::{self, load_checkpoint, save_checkpoint, CheckpointPolicy, TrainConfig, TrainState};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config keys or unusable inputs; exit code 2.
    Usage(String),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "stdsnn", version, about = "Dual-stream co-segmentation of sequential scans")]
pub struct Cli {
    /// Base seed for every random draw [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// File of `key = value` lines overriding defaults (flags take precedence)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a phantom cohort and its manifest
    GenPhantom(GenArgs),
    /// Train on a dataset
    Train(TrainArgs),
    /// Patient-wise k-fold cross-validation comparing stream variants
    Crossval(CrossvalArgs),
    /// Score a checkpoint on a dataset
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Default)]
pub struct CohortArgs {
    /// Cohort as NxM[,NxM...]: M patients with N scans each [default: 2x6,3x3,4x1]
    #[arg(long)]
    pub scan_counts: Option<String>,
    /// Number of patients with two scans each; alternative to --scan-counts
    #[arg(long)]
    pub patients: Option<usize>,
    /// Volume size SLICESxHxW, H and W multiples of 16 [default: 16x176x176]
    #[arg(long)]
    pub dims: Option<String>,
    /// Disable noise, blur and lesions
    #[arg(long)]
    pub clean: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub cohort: CohortArgs,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    /// Slice samples per step [default: 6]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate [default: 5e-5]
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 weight decay [default: 1e-5]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Epochs between learning-rate decays and checkpoints [default: 50]
    #[arg(long)]
    pub step_size: Option<usize>,
    /// Learning-rate decay factor [default: 0.5]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Training epochs [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Smallest crop fraction [default: 0.8]
    #[arg(long)]
    pub crop_min: Option<f64>,
    /// Largest crop fraction [default: 1.0]
    #[arg(long)]
    pub crop_max: Option<f64>,
    /// Channels of the first encoder level [default: 32]
    #[arg(long)]
    pub base_width: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest (or its directory)
    #[arg(long)]
    pub data: PathBuf,
    /// same | unpaired | sequential [default: sequential]
    #[arg(long)]
    pub variant: Option<String>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Resume from this checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Output directory for checkpoints and the training log
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    /// Dataset manifest (or its directory); a phantom cohort is generated when omitted
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// same | unpaired | sequential | all [default: all]
    #[arg(long)]
    pub variant: Option<String>,
    /// Number of folds [default: 5]
    #[arg(long)]
    pub k: Option<usize>,
    #[command(flatten)]
    pub cohort: CohortArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Output directory for the CSV reports and significance summary
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset manifest (or its directory)
    #[arg(long)]
    pub data: PathBuf,
    /// same | unpaired | sequential [default: sequential]
    #[arg(long)]
    pub variant: Option<String>,
    /// Write metrics CSV and overlays here
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Only `tiny` is defined
    #[arg(long, default_value = "tiny")]
    pub profile: String,
}

/// Every key accepted in a config file.
pub const CONFIG_KEYS: &[&str] = &[
    "seed",
    "batch_size",
    "learning_rate",
    "weight_decay",
    "step_size",
    "gamma",
    "epochs",
    "crop_min",
    "crop_max",
    "base_width",
    "variant",
    "k",
    "scan_counts",
    "patients",
    "dims",
];

/// Resolved settings shared by all subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub train: TrainConfig,
    pub base_width: usize,
    pub variant: Option<String>,
    pub k: usize,
    pub scan_counts: String,
    pub patients: Option<usize>,
    pub dims: String,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            train: TrainConfig::default(),
            base_width: ModelConfig::default().base_width,
            variant: None,
            k: 5,
            scan_counts: "2x6,3x3,4x1".into(),
            patients: None,
            dims: "16x176x176".into(),
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e| CliError::Usage(format!("config key {key}: {e}")))
}

impl Settings {
    /// Applies `key = value` lines; unknown keys are rejected.
    pub fn apply_config_text(&mut self, text: &str) -> Result<(), CliError> {
        let kv = parse_key_values(text).map_err(CliError::Usage)?;
        let mut keys: Vec<_> = kv.keys().collect();
        keys.sort();
        for key in keys {
            let v = kv[key].as_str();
            match key.as_str() {
                "seed" => self.seed = parse_value(key, v)?,
                "batch_size" => self.train.batch_size = parse_value(key, v)?,
                "learning_rate" => self.train.learning_rate = parse_value(key, v)?,
                "weight_decay" => self.train.weight_decay = parse_value(key, v)?,
                "step_size" => self.train.step_size = parse_value(key, v)?,
                "gamma" => self.train.gamma = parse_value(key, v)?,
                "epochs" => self.train.epochs = parse_value(key, v)?,
                "crop_min" => self.train.crop_fraction_range.0 = parse_value(key, v)?,
                "crop_max" => self.train.crop_fraction_range.1 = parse_value(key, v)?,
                "base_width" => self.base_width = parse_value(key, v)?,
                "variant" => self.variant = Some(v.to_owned()),
                "k" => self.k = parse_value(key, v)?,
                "scan_counts" => self.scan_counts = v.to_owned(),
                "patients" => self.patients = Some(parse_value(key, v)?),
                "dims" => self.dims = v.to_owned(),
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown config key {other:?}; known keys: {}",
                        CONFIG_KEYS.join(", ")
                    )))
                }
            }
        }
        Ok(())
    }

    fn apply_hyper(&mut self, h: &HyperArgs) {
        let t = &mut self.train;
        if let Some(v) = h.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = h.lr {
            t.learning_rate = v;
        }
        if let Some(v) = h.weight_decay {
            t.weight_decay = v;
        }
        if let Some(v) = h.step_size {
            t.step_size = v;
        }
        if let Some(v) = h.gamma {
            t.gamma = v;
        }
        if let Some(v) = h.epochs {
            t.epochs = v;
        }
        if let Some(v) = h.crop_min {
            t.crop_fraction_range.0 = v;
        }
        if let Some(v) = h.crop_max {
            t.crop_fraction_range.1 = v;
        }
        if let Some(v) = h.base_width {
            self.base_width = v;
        }
    }

    fn apply_cohort(&mut self, c: &CohortArgs) {
        if let Some(v) = &c.scan_counts {
            self.scan_counts = v.clone();
        }
        if let Some(v) = c.patients {
            self.patients = Some(v);
        }
        if let Some(v) = &c.dims {
            self.dims = v.clone();
        }
    }

    fn cohort(&self, explicit_scan_counts: bool) -> Result<CohortSpec, CliError> {
        let spec = match self.patients {
            Some(n) if !explicit_scan_counts => format!("2x{n}"),
            _ => self.scan_counts.clone(),
        };
        let spec: CohortSpec = spec.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
        if let Some(n) = self.patients {
            if spec.num_patients() != n {
                return Err(CliError::Usage(format!(
                    "--patients {n} disagrees with --scan-counts {spec} ({} patients)",
                    spec.num_patients()
                )));
            }
        }
        Ok(spec)
    }

    fn dims(&self) -> Result<(usize, usize, usize), CliError> {
        let parts: Vec<&str> = self.dims.split('x').collect();
        let bad = || CliError::Usage(format!("--dims {:?} must look like SLICESxHxW", self.dims));
        let [s, h, w] = parts[..] else { return Err(bad()) };
        let p = |v: &str| v.trim().parse::<usize>().map_err(|_| bad());
        let d = (p(s)?, p(h)?, p(w)?);
        if d.0 == 0 || d.1 == 0 || d.2 == 0 || d.1 % 16 != 0 || d.2 % 16 != 0 {
            return Err(CliError::Usage(format!(
                "--dims {}: slices must be positive and H, W positive multiples of 16",
                self.dims
            )));
        }
        Ok(d)
    }

    fn train_config(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig { seed: self.seed, ..self.train.clone() };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

fn variant_of(s: Option<&str>, default: StreamVariant) -> Result<StreamVariant, CliError> {
    s.map_or(Ok(default), |v| v.parse().map_err(CliError::Usage))
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.txt")
    } else {
        data.to_path_buf()
    }
}

fn load_data(data: &Path) -> Result<Vec<PatientSeries>, CliError> {
    let manifest = manifest_path(data);
    if !manifest.is_file() {
        return Err(CliError::Usage(format!("manifest {} not found", manifest.display())));
    }
    let dataset = read_dataset(&manifest).map_err(runtime)?;
    if dataset.is_empty() {
        return Err(CliError::Usage(format!("manifest {} lists no scans", manifest.display())));
    }
    Ok(dataset)
}

fn dataset_dims(dataset: &[PatientSeries]) -> Result<(usize, usize, usize), CliError> {
    let dims = dataset[0].scans[0].dims();
    if dataset.iter().flat_map(|p| &p.scans).any(|s| s.dims() != dims) {
        return Err(CliError::Runtime("all scans in a dataset must share dims".into()));
    }
    Ok(dims)
}

fn model_config(base_width: usize, h: usize, w: usize) -> Result<ModelConfig, CliError> {
    let cfg = ModelConfig {
        in_channels: 1,
        num_classes: NUM_CLASSES,
        base_width,
        levels: ModelConfig::default().levels,
        input_size: (h, w),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn cmd_gen(s: &Settings, a: &GenArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = s.cohort(a.cohort.scan_counts.is_some())?;
    let dims = s.dims()?;
    let opts = if a.cohort.clean { PhantomOptions::clean() } else { PhantomOptions::default() };
    let cohort = generate_cohort(&spec, dims, s.seed, &opts).map_err(runtime)?;
    let manifest = write_dataset(&a.out, &cohort).map_err(runtime)?;
    let _ = writeln!(
        out,
        "{} patients, {} scans, manifest {}",
        spec.num_patients(),
        spec.scan_counts().iter().sum::<usize>(),
        manifest.display()
    );
    let _ = writeln!(out, "{} pairs", spec.num_pairs());
    Ok(())
}

fn cmd_train(s: &Settings, a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = s.train_config()?;
    let variant = variant_of(s.variant.as_deref(), StreamVariant::Sequential)?;
    let dataset = load_data(&a.data)?;
    let (_, h, w) = dataset_dims(&dataset)?;
    let model_cfg = model_config(s.base_width, h, w)?;
    let pairs = sample_stream_inputs(variant, &dataset, &mut rng_for(s.seed, &[0x7061697273])).map_err(runtime)?;
    let mut state = match &a.resume {
        Some(path) => {
            let st = load_checkpoint(path, Some(&model_cfg)).map_err(runtime)?;
            if st.model.config().input_size != (h, w) {
                return Err(CliError::Runtime(format!(
                    "checkpoint expects {:?} slices, data has {h}x{w}",
                    st.model.config().input_size
                )));
            }
            st
        }
        None => {
            let model = ModelParams::build(model_cfg, derive_seed(s.seed, &[0x696e6974])).map_err(runtime)?;
            TrainState::new(model, &cfg)
        }
    };
    create_dir(&a.out)?;
    let _ = writeln!(
        out,
        "training {variant} on {} pairs ({} slice samples), {} parameters",
        pairs.len(),
        pairs.iter().map(|p| p.slices()).sum::<usize>(),
        state.model.num_parameters()
    );
    let policy = CheckpointPolicy { dir: Some(a.out.join("checkpoints")) };
    let history = training::run(&mut state, &pairs, &cfg, &policy, |e| {
        eprintln!("epoch {:>4}  loss {:.6}  lr {:.3e}  {:.2}s", e.epoch, e.mean_loss, e.lr, e.seconds);
    })
    .map_err(runtime)?;
    let final_path = a.out.join("model.stdw");
    save_checkpoint(&final_path, &state).map_err(runtime)?;
    write_file(&a.out.join("train_log.csv"), history.to_csv())?;
    let _ = writeln!(out, "trained to epoch {}; checkpoint {}", state.epoch, final_path.display());
    Ok(())
}

fn cmd_crossval(s: &Settings, a: &CrossvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = s.train_config()?;
    let variants: Vec<StreamVariant> = match s.variant.as_deref() {
        None | Some("all") => StreamVariant::ALL.to_vec(),
        Some(v) => vec![v.parse().map_err(CliError::Usage)?],
    };
    let dataset = match &a.data {
        Some(d) => load_data(d)?,
        None => {
            let spec = s.cohort(a.cohort.scan_counts.is_some())?;
            let opts = if a.cohort.clean { PhantomOptions::clean() } else { PhantomOptions::default() };
            generate_cohort(&spec, s.dims()?, s.seed, &opts).map_err(runtime)?
        }
    };
    if s.k < 2 || s.k > dataset.len() {
        return Err(CliError::Usage(format!("k = {} folds for {} patients", s.k, dataset.len())));
    }
    let (_, h, w) = dataset_dims(&dataset)?;
    let model_cfg = model_config(s.base_width, h, w)?;
    create_dir(&a.out)?;
    let mut results: Vec<CrossvalResult> = Vec::new();
    for v in variants {
        let r = evaluation::crossval(&dataset, v, &model_cfg, &cfg, s.k, |fold, e| {
            if e.epoch == 1 || e.epoch % 10 == 0 || e.epoch == cfg.epochs {
                eprintln!("{v} fold {} epoch {:>4}  loss {:.6}", fold + 1, e.epoch, e.mean_loss);
            }
        })
        .map_err(runtime)?;
        let _ = writeln!(out, "{v}: mean DSC {}", r.aggregate.mean.dsc.map_or("NA".into(), |d| format!("{d:.4}")));
        results.push(r);
    }
    let rows: Vec<(String, &evaluation::MetricsReport)> =
        results.iter().map(|r| (r.variant.to_string(), &r.aggregate)).collect();
    write_file(&a.out.join("comparison.csv"), comparison_csv(&rows))?;
    write_file(&a.out.join("folds.csv"), fold_csv(&results))?;
    let summary = significance_summary(&results).map_err(runtime)?;
    write_file(&a.out.join("significance.txt"), &summary)?;
    let _ = write!(out, "{summary}");
    Ok(())
}

fn cmd_eval(s: &Settings, a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let variant = variant_of(s.variant.as_deref(), StreamVariant::Sequential)?;
    if !a.checkpoint.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} not found", a.checkpoint.display())));
    }
    let dataset = load_data(&a.data)?;
    let (_, h, w) = dataset_dims(&dataset)?;
    let state = load_checkpoint(&a.checkpoint, None).map_err(runtime)?;
    let cfg = state.model.config();
    if cfg.input_size != (h, w) || cfg.num_classes != NUM_CLASSES {
        return Err(CliError::Runtime(format!(
            "shape mismatch: checkpoint model takes {}x{} slices with {} classes, data has {h}x{w} with {NUM_CLASSES}",
            cfg.input_size.0, cfg.input_size.1, cfg.num_classes
        )));
    }
    let pairs = sample_stream_inputs(variant, &dataset, &mut rng_for(s.seed, &[0x6576616c])).map_err(runtime)?;
    let report = evaluation::evaluate_pairs(&state.model, &pairs).map_err(runtime)?;
    let csv = comparison_csv(&[(variant.to_string(), &report)]);
    let _ = write!(out, "{csv}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(&dir.join("metrics.csv"), &csv)?;
        for (i, pair) in pairs.iter().enumerate() {
            let k = pair.slices() / 2;
            let sample = pair.sample(k);
            let x1 = sample.x1.clone().reshape(&[1, 1, h, w]).map_err(runtime)?;
            let x2 = sample.x2.clone().reshape(&[1, 1, h, w]).map_err(runtime)?;
            let (p1, _) = state.model.predict(&x1, &x2).map_err(runtime)?;
            let pred = evaluation::argmax_channels(&p1).map_err(runtime)?.reshape(&[h, w]).map_err(runtime)?;
            let stem = format!("{:03}_{}_{}", i + 1, pair.first, pair.second).replace(['/', ' '], "_");
            evaluation::render_overlay(&sample.x1, &pred, &dir.join(format!("{stem}_pred.ppm"))).map_err(runtime)?;
            evaluation::render_overlay(&sample.x1, &sample.y1, &dir.join(format!("{stem}_truth.ppm")))
                .map_err(runtime)?;
        }
    }
    Ok(())
}

fn cmd_gradcheck(s: &Settings, a: &GradcheckArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.profile != "tiny" {
        return Err(CliError::Usage(format!("unknown profile {:?} (only `tiny`)", a.profile)));
    }
    let results = gradcheck::run_suite(s.seed).map_err(runtime)?;
    for r in &results {
        let _ = writeln!(out, "{r}");
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} gradient checks failed")));
    }
    let _ = writeln!(out, "all {} gradient checks passed", results.len());
    Ok(())
}

/// Resolves settings for a parsed command line.
pub fn settings_for(cli: &Cli) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        s.apply_config_text(&text)?;
    }
    if let Some(seed) = cli.seed {
        s.seed = seed;
    }
    match &cli.command {
        Command::GenPhantom(a) => s.apply_cohort(&a.cohort),
        Command::Train(a) => {
            s.apply_hyper(&a.hyper);
            if a.variant.is_some() {
                s.variant = a.variant.clone();
            }
        }
        Command::Crossval(a) => {
            s.apply_hyper(&a.hyper);
            s.apply_cohort(&a.cohort);
            if a.variant.is_some() {
                s.variant = a.variant.clone();
            }
            if let Some(k) = a.k {
                s.k = k;
            }
        }
        Command::Eval(a) => {
            if a.variant.is_some() {
                s.variant = a.variant.clone();
            }
        }
        Command::Gradcheck(_) => {}
    }
    Ok(s)
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let s = settings_for(cli)?;
    match &cli.command {
        Command::GenPhantom(a) => cmd_gen(&s, a, out),
        Command::Train(a) => cmd_train(&s, a, out),
        Command::Crossval(a) => cmd_crossval(&s, a, out),
        Command::Eval(a) => cmd_eval(&s, a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&s, a, out),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("stdsnn").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn train_defaults_match_recipe() {
        let cli = parse(&["train", "--data", "d", "--out", "o"]);
        let s = settings_for(&cli).unwrap();
        let t = s.train_config().unwrap();
        assert_eq!((t.batch_size, t.epochs, t.step_size), (6, 200, 50));
        assert_eq!((t.learning_rate, t.weight_decay), (5e-5, 1e-5));
    }

    #[test]
    fn config_layers_and_unknown_keys() {
        let mut s = Settings::default();
        s.apply_config_text("epochs = 3\n# comment\nlearning_rate = 1e-3\n").unwrap();
        assert_eq!((s.train.epochs, s.train.learning_rate), (3, 1e-3));
        let err = s.apply_config_text("epoch = 3\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(s.apply_config_text("epochs = three\n").is_err());
    }

    #[test]
    fn cohort_flags() {
        let s = Settings { patients: Some(3), ..Settings::default() };
        assert_eq!(s.cohort(false).unwrap().num_pairs(), 3);
        assert!(s.cohort(true).is_err());
        let s = Settings { dims: "4x60x64".into(), ..Settings::default() };
        assert_eq!(s.dims().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn usage_errors_exit_two() {
        let mut sink = Vec::new();
        assert_eq!(run(["stdsnn", "bogus"], &mut sink), 2);
        assert_eq!(run(["stdsnn", "train", "--data", "/nonexistent/manifest.txt", "--out", "/tmp/x"], &mut sink), 2);
        assert_eq!(run(["stdsnn", "gradcheck", "--profile", "huge"], &mut sink), 2);
    }
}
