//! The `symdec` command line. Parsing lives here so commands can be driven
//! in-process; the binary only forwards `argv` and the exit status.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::decoder::equivariance::{check_decode, run_checks, EquivarianceReport, ProbeShape};
use crate::encoder::PatchTokens;
use crate::error::{Error, Result};
use crate::gridmath::csym;
use crate::imageio;
use crate::metrics::{consistency, f1_max, predict_split, robustness, EvalItem, EvalReport, TransformFamily};
use crate::model::{Model, TEXT_PARAM};
use crate::sapg::PromptPolicy;
use crate::synthdata::{generate_split, read_dataset, write_samples, Sample, MANIFEST_FILE};
use crate::tensor::{Scalar, Tensor};
use crate::training::{load_checkpoint, save_checkpoint, train, OptimState, StepRecord};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];
pub const TRAIN_LOG: &str = "train_log.jsonl";

#[derive(Parser, Debug)]
#[command(name = "symdec", version, about = "Prompt-conditioned, rotation-equivariant symmetry heatmaps")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; absent keys take the preset's values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base preset: desk-toy or paper-geometry
    #[arg(long, global = true, default_value = "desk-toy")]
    pub preset: String,
    /// Overrides the configured seed (and SYMDEC_SEED) [preset default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for per-image evaluation; 0 uses all cores
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic train/val/test splits
    GenData(GenDataArgs),
    /// Train on a generated dataset, checkpointing every epoch
    Train(TrainArgs),
    /// Predict a heatmap for one image
    Predict(PredictArgs),
    /// Evaluate a checkpoint on a dataset split
    Eval(EvalArgs),
    /// Certify quarter-turn equivariance of the decoder
    EquivCheck(EquivArgs),
    /// Print the prompt set
    Prompts(PromptArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GenDataArgs {
    /// Output directory [preset default: data]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training images [preset default: 64]; val and test sizes come from the configuration (16 each)
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Dataset directory with train/ and val/ [preset default: data]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory [preset default: checkpoint]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory for the validation report [preset default: out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Epochs [preset default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many optimizer steps in total
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from the checkpoint directory
    #[arg(long, default_value_t = false)]
    pub resume: bool,
}

#[derive(Args, Debug, Clone)]
pub struct PredictArgs {
    /// Checkpoint directory [preset default: checkpoint]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Input image
    #[arg(long)]
    pub image: PathBuf,
    /// Output directory [preset default: out]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    /// Uniform angle from the configured range, [-45, 45] degrees by default
    Rotation,
    /// Multiples of 90 degrees
    Quarter,
    /// Horizontal mirror
    Flip,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Checkpoint directory [preset default: checkpoint]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory [preset default: data]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split to evaluate
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Also report F1 under sampled transforms
    #[arg(long)]
    pub robust: Option<FamilyArg>,
    /// Also report prediction consistency under sampled transforms
    #[arg(long)]
    pub consistency: Option<FamilyArg>,
    /// Transforms per image for consistency [preset default: 4]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Matching tolerance radius in pixels [preset default: 0]
    #[arg(long)]
    pub rho: Option<f64>,
    /// Macro-average per-image curves instead of pooling pixels
    #[arg(long = "macro", default_value_t = false)]
    pub macro_average: bool,
    /// Report directory [preset default: out]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EquivArgs {
    /// Also check the decoder weights of this checkpoint
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Run in double precision (tolerance 1e-10 instead of 1e-5)
    #[arg(long, default_value_t = false)]
    pub f64: bool,
    /// Rotation group order n [preset default: 8]
    #[arg(long)]
    pub n: Option<usize>,
    /// Add positional encodings to the decoder transformer, which must fail the mixing check
    #[arg(long, default_value_t = false)]
    pub inject_positional_encoding: bool,
}

#[derive(Args, Debug, Clone)]
pub struct PromptArgs {
    /// Number of prompts M [preset default: 25]
    #[arg(short = 'm', long)]
    pub m: Option<usize>,
    /// Classes per prompt K [preset default: 4]
    #[arg(short = 'k', long)]
    pub k: Option<usize>,
    /// Shuffle the vocabulary before grouping
    #[arg(long, default_value_t = false)]
    pub shuffled: bool,
    /// Write the prompts here instead of standard output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Preset, then config file, then `SYMDEC_SEED`, then `--seed`.
pub fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            RunConfig::overlay(&RunConfig::preset(&common.preset)?, &text)?
        }
        None => RunConfig::preset(&common.preset)?,
    };
    cfg = cfg.with_env()?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenSummary {
    /// `(split, images, symmetry elements)`.
    pub splits: Vec<(String, usize, usize)>,
}

/// Generates every split in memory, audits it, then writes. Directories this
/// call created are removed if anything fails.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path, count: Option<usize>) -> Result<GenSummary> {
    let counts = [count.unwrap_or(cfg.data.train), cfg.data.val, cfg.data.test];
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(Error::config(format!("{} split needs at least one image", SPLITS[i])));
    }
    cfg.validate()?;
    let scene = cfg.scene();
    let mut splits = Vec::new();
    for (split, &n) in SPLITS.iter().zip(&counts) {
        let samples = generate_split(&scene, split, n)?;
        if let Some(i) = samples.iter().position(|s| s.annotation.is_empty()) {
            return Err(Error::Generation(format!("{split} image {i} has no symmetric shape")));
        }
        splits.push((split.to_string(), samples));
    }
    let existed = out.exists();
    let written = (|| -> Result<GenSummary> {
        let mut summary = GenSummary { splits: Vec::new() };
        for (split, samples) in &splits {
            write_samples(samples, split, Some(scene.clone()), out.join(split))?;
            let elements = samples.iter().map(|s| s.annotation.axes.len() + s.annotation.centers.len()).sum();
            summary.splits.push((split.clone(), samples.len(), elements));
        }
        Ok(summary)
    })();
    if written.is_err() {
        let created: Vec<PathBuf> = if existed { SPLITS.iter().map(|s| out.join(s)).collect() } else { vec![out.to_path_buf()] };
        for p in created {
            let _ = fs::remove_dir_all(p);
        }
    }
    written
}

fn require_split(data: &Path, split: &str) -> Result<PathBuf> {
    let dir = data.join(split);
    if !dir.join(MANIFEST_FILE).is_file() {
        return Err(Error::config(format!("dataset split {} not found (run gen-data first)", dir.display())));
    }
    Ok(dir)
}

/// Keeps only log lines up to and including `step`.
fn truncate_log(path: &Path, step: u64) -> Result<()> {
    let Ok(f) = File::open(path) else { return Ok(()) };
    let mut kept = String::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        match serde_json::from_str::<StepRecord>(&line) {
            Ok(r) if r.step <= step => {
                kept.push_str(&line);
                kept.push('\n');
            }
            _ => {}
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(path, e))
}

pub struct TrainOutcome {
    pub records: Vec<StepRecord>,
    pub report: EvalReport,
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, ckpt: &Path, out: &Path, resume: bool, max_steps: Option<u64>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_dir, val_dir) = (require_split(data, "train")?, require_split(data, "val")?);
    let spec = cfg.model_spec();
    if resume && !ckpt.join("manifest.json").is_file() {
        return Err(Error::config(format!("--resume: no checkpoint in {}", ckpt.display())));
    }
    let (_, train_set) = read_dataset(&train_dir)?;
    let (_, val_set) = read_dataset(&val_dir)?;
    let tc = cfg.train_config();

    let log_path = ckpt.join(TRAIN_LOG);
    let (mut model, mut optim) = if resume {
        let (model, optim) = load_checkpoint(ckpt, Some(&spec))?;
        let optim = optim.ok_or_else(|| Error::config("--resume: checkpoint has no optimizer state"))?;
        truncate_log(&log_path, optim.step)?;
        (model, optim)
    } else {
        let model = Model::init(spec, &cfg.text_tokens()?, cfg.seed)?;
        let optim = OptimState::new(&model.params, cfg.optim);
        fs::create_dir_all(ckpt).map_err(|e| Error::io(ckpt, e))?;
        File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        (model, optim)
    };
    let mut log = fs::OpenOptions::new().append(true).open(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let spe = tc.steps_per_epoch(train_set.len());
    let records = train(&mut model, &mut optim, &train_set, &tc, max_steps, |r, m, o| {
        let line = serde_json::to_string(r).expect("plain record");
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        if r.step % spe == 0 {
            log::info!("epoch {} done, step {}, loss {:.4}", r.epoch + 1, r.step, r.loss);
            save_checkpoint(ckpt, m, Some(o))?;
        }
        Ok(())
    })?;
    save_checkpoint(ckpt, &model, Some(&optim))?;
    let report = evaluate(cfg, &model, &val_set, Some(cfg.eval.robustness), Some(cfg.eval.consistency), cfg.eval.consistency_samples)?;
    report.write(out)?;
    Ok(TrainOutcome { records, report })
}

/// F1 plus optional robustness and consistency, all seeded from the config.
pub fn evaluate(cfg: &RunConfig, model: &Model, samples: &[Sample], robust: Option<TransformFamily>, consist: Option<TransformFamily>, n_samples: usize) -> Result<EvalReport> {
    let items = EvalItem::from_samples(samples);
    let (preds, gts) = predict_split(model, &items, cfg.task, &cfg.gt)?;
    let opts = cfg.f1_options();
    let mut report = EvalReport::new(f1_max(&preds, &gts, &opts)?);
    if let Some(fam) = robust {
        report.robustness = Some(robustness(model, &items, fam, cfg.seed, cfg.task, &cfg.gt, &opts)?.f1);
    }
    if let Some(fam) = consist {
        report.consistency = Some(consistency(model, &items, fam, n_samples, cfg.seed)?.mean);
    }
    Ok(report)
}

/// Paths of the CSYM and PGM heatmaps written by [`cmd_predict`].
pub fn cmd_predict(cfg: &RunConfig, ckpt: &Path, image: &Path, out: &Path) -> Result<(PathBuf, PathBuf)> {
    cfg.validate()?;
    let (model, _) = load_checkpoint(ckpt, Some(&cfg.model_spec()))?;
    let img = imageio::load_image(image)?;
    let heat = model.predict(&img)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "heatmap".into());
    let (c, p) = (out.join(format!("{stem}.csym")), out.join(format!("{stem}.pgm")));
    csym::write(&c, heat.scores())?;
    imageio::write_pgm(&p, &heat)?;
    Ok((c, p))
}

fn family(arg: FamilyArg, configured: TransformFamily) -> TransformFamily {
    match arg {
        FamilyArg::Rotation => match configured {
            f @ TransformFamily::Rotation { .. } => f,
            _ => TransformFamily::default_rotation(),
        },
        FamilyArg::Quarter => TransformFamily::Quarter,
        FamilyArg::Flip => TransformFamily::Flip,
    }
}

pub fn cmd_eval(cfg: &RunConfig, args: &EvalArgs) -> Result<EvalReport> {
    let mut cfg = cfg.clone();
    if let Some(r) = args.rho {
        cfg.eval.rho = r;
    }
    cfg.eval.macro_average |= args.macro_average;
    if let Some(s) = args.samples {
        cfg.eval.consistency_samples = s;
    }
    cfg.validate()?;
    let data = args.data.clone().unwrap_or_else(|| cfg.paths.dataset.clone());
    let dir = require_split(&data, &args.split)?;
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let (model, _) = load_checkpoint(&ckpt, Some(&cfg.model_spec()))?;
    let (_, samples) = read_dataset(&dir)?;
    let robust = args.robust.map(|a| family(a, cfg.eval.robustness));
    let consist = args.consistency.map(|a| family(a, cfg.eval.consistency));
    let report = evaluate(&cfg, &model, &samples, robust, consist, cfg.eval.consistency_samples)?;
    report.write(args.out.clone().unwrap_or_else(|| cfg.paths.output.clone()))?;
    Ok(report)
}

fn equiv_report<T: Scalar>(cfg: &RunConfig, args: &EquivArgs) -> Result<EquivarianceReport> {
    let mut dec = cfg.model.decoder.clone();
    if let Some(n) = args.n {
        dec.n = n;
    }
    dec.inject_positional_encoding |= args.inject_positional_encoding;
    let e = &cfg.model.encoder;
    let shape = ProbeShape { grid: e.grid(), d_enc: e.dim, d_txt: cfg.model.text_dim, prompts: cfg.prompts.m, image: e.image_size };
    let mut report = run_checks::<T>(&dec, &shape, cfg.seed)?;
    if let Some(ckpt) = &args.checkpoint {
        let (model, _) = load_checkpoint(ckpt, Some(&cfg.model_spec()))?;
        let params = model.decoder_params().cast::<T>();
        let text = model.params.get(TEXT_PARAM)?.cast::<T>();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
        let z = Tensor::<T>::randn(&[shape.grid, shape.grid, shape.d_enc], 1.0, &mut rng);
        let tokens = PatchTokens::new(z, e.patch_size, (e.image_size, e.image_size))?;
        report.extend(check_decode(&tokens, &text, &params, &dec)?);
    }
    Ok(report)
}

/// The report; the caller decides the exit status from `passed()`.
pub fn cmd_equiv_check(cfg: &RunConfig, args: &EquivArgs) -> Result<EquivarianceReport> {
    cfg.validate()?;
    if args.f64 {
        equiv_report::<f64>(cfg, args)
    } else {
        equiv_report::<f32>(cfg, args)
    }
}

pub fn cmd_prompts(cfg: &RunConfig, args: &PromptArgs) -> Result<String> {
    let mut cfg = cfg.clone();
    cfg.prompts.m = args.m.unwrap_or(cfg.prompts.m);
    cfg.prompts.k = args.k.unwrap_or(cfg.prompts.k);
    if args.shuffled {
        cfg.prompts.policy = PromptPolicy::Shuffled;
    }
    let text = cfg.prompt_set()?.to_text();
    if let Some(p) = &args.out {
        fs::write(p, &text).map_err(|e| Error::io(p, e))?;
    }
    Ok(text)
}

fn run(cli: Cli) -> Result<i32> {
    if cli.common.threads > 0 {
        // a second call in one process keeps the first pool, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.common.threads).build_global();
    }
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::GenData(a) => {
            let out = a.out.unwrap_or_else(|| cfg.paths.dataset.clone());
            let s = cmd_gen_data(&cfg, &out, a.count)?;
            for (split, n, elements) in s.splits {
                println!("{split}: {n} images, {elements} symmetry elements");
            }
            println!("written to {}", out.display());
        }
        Command::Train(a) => {
            let mut cfg = cfg;
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            let data = a.data.unwrap_or_else(|| cfg.paths.dataset.clone());
            let ckpt = a.checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
            let out = a.out.unwrap_or_else(|| cfg.paths.output.clone());
            let o = cmd_train(&cfg, &data, &ckpt, &out, a.resume, a.max_steps)?;
            print!("{}", o.report.to_text());
        }
        Command::Predict(a) => {
            let ckpt = a.checkpoint.unwrap_or_else(|| cfg.paths.checkpoint.clone());
            let out = a.out.unwrap_or_else(|| cfg.paths.output.clone());
            let (c, p) = cmd_predict(&cfg, &ckpt, &a.image, &out)?;
            println!("{}\n{}", c.display(), p.display());
        }
        Command::Eval(a) => print!("{}", cmd_eval(&cfg, &a)?.to_text()),
        Command::EquivCheck(a) => {
            let r = cmd_equiv_check(&cfg, &a)?;
            print!("{r}");
            if !r.passed() {
                let err = Error::numeric("equivariance check", format!("failing stages: {}", r.failing_stages().join(", ")));
                eprintln!("error: {err}");
                return Ok(err.exit_code());
            }
            println!("all checks passed");
        }
        Command::Prompts(a) => {
            let text = cmd_prompts(&cfg, &a)?;
            if a.out.is_none() {
                print!("{text}");
            }
        }
    }
    Ok(0)
}

/// Parses `args` (including the program name) and runs; returns the exit status.
pub fn main_with<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_lists_flags_with_defaults() {
        // globals reach subcommands only once the parent is built
        let mut cmd = Cli::command();
        cmd.build();
        let help = cmd.find_subcommand_mut("train").unwrap().render_long_help().to_string();
        for flag in ["--data", "--checkpoint", "--epochs", "--resume", "--max-steps", "--threads", "--preset", "--seed"] {
            assert!(help.contains(flag), "{flag} missing from\n{help}");
        }
        assert!(help.contains("default: 30"));
        assert!(help.contains("[default: desk-toy]"));
    }

    #[test]
    fn config_file_overlays_preset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        fs::write(&p, "[model.decoder]\nn = 4\n").unwrap();
        let common = Common { config: Some(p), preset: "desk-toy".into(), seed: Some(9), threads: 0 };
        let cfg = load_config(&common).unwrap();
        assert_eq!(cfg.model.decoder.n, 4);
        assert_eq!(cfg.model.decoder.dim, 16);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn unknown_verb_and_key_exit_2() {
        assert_eq!(main_with(["symdec", "frobnicate"]), 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.toml");
        fs::write(&p, "[train]\nepochz = 3\n").unwrap();
        assert_eq!(main_with(["symdec", "--config", p.to_str().unwrap(), "prompts"]), 2);
    }

    #[test]
    fn gen_data_zero_count_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d");
        let err = cmd_gen_data(&RunConfig::desk_toy(), &out, Some(0)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(!out.exists());
    }

    #[test]
    fn train_without_dataset_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        let err = cmd_train(&RunConfig::desk_toy(), &p.join("nope"), &p.join("ck"), &p.join("out"), false, None).err().unwrap();
        assert_eq!(err.exit_code(), 2);
        assert!(!p.join("ck").exists());
    }

    #[test]
    fn prompts_default_set() {
        let args = PromptArgs { m: None, k: None, shuffled: false, out: None };
        let text = cmd_prompts(&RunConfig::desk_toy(), &args).unwrap();
        assert_eq!(text.lines().count(), 25);
        assert!(text.lines().all(|l| l.split(' ').count() >= 4));
    }

    #[test]
    fn log_truncation_keeps_earlier_steps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(TRAIN_LOG);
        let line = |s: u64| serde_json::to_string(&StepRecord { step: s, epoch: 0, loss: 1.0, lr: 1e-3, wall: 0.0 }).unwrap();
        fs::write(&p, format!("{}\n{}\n{}\n", line(1), line(2), line(3))).unwrap();
        truncate_log(&p, 2).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), format!("{}\n{}\n", line(1), line(2)));
    }
}
