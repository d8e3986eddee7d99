//! `mgrd` command line: corpus generation, pass@k curation, the distillation
//! loop, the format-reward ablation, self-cognition correction and reports.
//!
//! Exit codes: 0 success, 2 usage / I/O / validation, 3 pipeline-state failure.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use mgrd_core::config::PipelineConfig;
use mgrd_core::corpus::{generate, world_vocabulary, GeneratorSpec, TaskKind};
use mgrd_core::curation::{estimate_all, select_rl_subset};
use mgrd_core::jsonl::{read_dataset, write_dataset, write_records};
use mgrd_core::mgrd::cognition::fit_base;
use mgrd_core::mgrd::{
    ablation_run, enumerate_optimal, run_cognition_correction, run_loop, split_holdout, AblationVariant, DirStore,
    MgrdError, Pools,
};
use mgrd_core::policy::{PolicyGenerator, ToyPolicy};
use mgrd_core::report::{write_metrics_csv, write_report, COGNITION_ROWS, COGNITION_TABLE};
use mgrd_core::seeds::derive_seed;
use mgrd_core::types::{Dataset, Sample};

#[derive(Parser)]
#[command(name = "mgrd", version, about = "Grounded-reasoning post-training pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic task corpus as JSONL.
    Generate(GenerateArgs),
    /// Keep prompts whose pass@k count falls inside a window.
    Curate(CurateArgs),
    /// Cold start followed by T distillation iterations.
    Loop(LoopArgs),
    /// Train the think-budget micro-task with and without the format reward.
    Ablation(AblationArgs),
    /// Measure and correct self-cognition errors on the cognition corpus.
    Cognition(CognitionArgs),
    /// Emit curve files and a summary for a run directory.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// copy_task, arithmetic_task, perception_task or cognition_task.
    #[arg(long)]
    kind: TaskKind,
    #[arg(long)]
    size: usize,
    /// Injected-error share (perception: surrogate chains; cognition: denials).
    #[arg(long, default_value_t = 0.0)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurateArgs {
    /// Candidate pool (JSONL samples).
    #[arg(long = "in")]
    input: PathBuf,
    /// Policy checkpoint used to sample the k attempts.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// Inclusive window of correct counts, `MIN..MAX`.
    #[arg(long)]
    keep: Option<String>,
    /// Output dataset; defaults to `<input stem>.rl.jsonl` next to the input.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LoopArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of iterations (overrides `loop.T`).
    #[arg(long = "T")]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `run_dir`; defaults to `run`.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this variant (with_format_reward or accuracy_only).
    #[arg(long)]
    variant: Option<AblationVariant>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CognitionArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    window: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

/// Failure carrying its exit code.
enum Failure {
    Usage(anyhow::Error),
    State(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Usage(e.into())
    }
}

fn classify(e: MgrdError) -> Failure {
    match e {
        MgrdError::EmptyDistilledSet { .. } | MgrdError::Trainer(_) | MgrdError::Generation(_) => Failure::State(e.into()),
        other => Failure::Usage(other.into()),
    }
}

/// Holds `run.lock` for the lifetime of a command.
struct RunLock {
    path: PathBuf,
    _file: File,
}

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("run.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(file) => Ok(Self { path, _file: file }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Failure::State(anyhow!("{} exists: another run is writing this directory", path.display())))
            }
            Err(e) => Err(Failure::Usage(anyhow!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env();
    Ok(cfg)
}

/// Config snapshot with the command-line overrides listed on top.
fn write_snapshot(dir: &Path, cfg: &PipelineConfig, overrides: &[String]) -> Result<(), Failure> {
    let mut text = String::new();
    for o in overrides {
        text.push_str(&format!("# override: {o}\n"));
    }
    text.push_str(&cfg.to_toml_string());
    let path = dir.join("config.toml");
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run_dir_of(cli: &Option<PathBuf>, cfg: &mut PipelineConfig, overrides: &mut Vec<String>) -> PathBuf {
    if let Some(d) = cli {
        overrides.push(format!("--run-dir {}", d.display()));
        cfg.run_dir = Some(d.clone());
    }
    cfg.run_dir.clone().unwrap_or_else(|| PathBuf::from("run"))
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let spec = GeneratorSpec::new(a.kind, a.size, a.seed).with_error_rate(a.rate);
    let d = generate(&spec, &world_vocabulary())?;
    write_dataset(&a.out, &d)?;
    println!("wrote {} samples to {}", d.len(), a.out.display());
    Ok(())
}

fn parse_keep(s: &str) -> anyhow::Result<(usize, usize)> {
    let (lo, hi) = s.split_once("..").ok_or_else(|| anyhow!("--keep expects MIN..MAX, got {s:?}"))?;
    Ok((lo.trim().parse().context("--keep minimum")?, hi.trim().parse().context("--keep maximum")?))
}

fn cmd_curate(a: CurateArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(k) = a.k {
        cfg.curation.k = k;
    }
    if let Some(keep) = &a.keep {
        (cfg.curation.keep_min, cfg.curation.keep_max) = parse_keep(keep)?;
    }
    cfg.curation.validate()?;
    let pool: Dataset<Sample> = read_dataset(&a.input)?;
    let policy = ToyPolicy::load(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let gen = PolicyGenerator { policy: &policy, max_len: cfg.ppo.max_seq_tokens };
    let seed = a.seed.unwrap_or(cfg.seed);
    let stats = estimate_all(&pool.samples, &gen, &cfg.curation, &cfg.reward, &cfg.format, seed)
        .map_err(|e| Failure::State(e.into()))?;
    let mut selected = select_rl_subset(&pool.samples, &stats, &cfg.curation);
    selected.set_provenance("source", a.input.display());
    selected.set_provenance("checkpoint", a.ckpt.display());
    selected.set_provenance("seed", seed);
    let out = a.out.unwrap_or_else(|| {
        let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        a.input.with_file_name(format!("{stem}.rl.jsonl"))
    });
    write_dataset(&out, &selected)?;
    let p = &selected.provenance;
    let get = |k: &str| p.get(k).map(String::as_str).unwrap_or("0");
    println!(
        "kept {} dropped_too_easy {} dropped_too_hard {} skipped {} -> {}",
        get("kept"),
        get("dropped_too_easy"),
        get("dropped_too_hard"),
        get("skipped"),
        out.display()
    );
    Ok(())
}

fn cmd_loop(a: LoopArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.config.as_deref())?;
    let mut overrides = Vec::new();
    if let Some(t) = a.iterations {
        cfg.loop_params.iterations = t;
        overrides.push(format!("--T {t}"));
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
        overrides.push(format!("--seed {s}"));
    }
    let dir = run_dir_of(&a.run_dir, &mut cfg, &mut overrides);
    cfg.validate()?;
    let judge = cfg.judge.build()?;
    let _lock = RunLock::acquire(&dir)?;
    write_snapshot(&dir, &cfg, &overrides)?;
    let pools = Pools::synthetic(&cfg.corpus, cfg.seed).map_err(classify)?;
    let mut store = DirStore { root: dir.clone() };
    let out = run_loop(&pools, judge.as_ref(), &cfg.loop_config(), &mut store, Some(&dir)).map_err(classify)?;
    for s in &out.summaries {
        println!(
            "iteration {}: distilled {}/{} mean_reward {:.4} think_tokens {:.3} -> {}",
            s.t, s.distilled, s.candidates, s.mean_reward, s.think_tokens, s.checkpoint
        );
    }
    Ok(())
}

fn cmd_ablation(a: AblationArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.config.as_deref())?;
    let mut overrides = Vec::new();
    if let Some(n) = a.iterations {
        cfg.ablation.iterations = n;
        overrides.push(format!("--iterations {n}"));
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
        overrides.push(format!("--seed {s}"));
    }
    let dir = run_dir_of(&a.run_dir, &mut cfg, &mut overrides);
    cfg.validate()?;
    let _lock = RunLock::acquire(&dir)?;
    write_snapshot(&dir, &cfg, &overrides)?;
    let variants = match a.variant {
        Some(v) => vec![v],
        None => vec![AblationVariant::WithFormatReward, AblationVariant::AccuracyOnly],
    };
    let ab = &cfg.ablation;
    for v in variants {
        let spec = v.reward_spec(&cfg.reward);
        let e = enumerate_optimal(&ab.task, &spec).map_err(classify)?;
        let r = ablation_run(v, &ab.task, &cfg.reward, &ab.ppo, &ab.collapse, ab.iterations, cfg.seed).map_err(classify)?;
        let vd = dir.join("ablation").join(v.name());
        std::fs::create_dir_all(&vd).with_context(|| format!("creating {}", vd.display()))?;
        write_metrics_csv(&vd.join("metrics.csv"), &r.metrics)?;
        write_records(&vd.join("collapse.jsonl"), &[r.collapse])?;
        r.final_policy.save(&vd.join("policy.ckpt.json"))?;
        println!(
            "{}: optimum {} over {} trajectories (think-bearing only: {}); final think_fraction {:.3}; collapse {} (ratio {:.3})",
            v.name(),
            e.best_value,
            e.n_trajectories,
            e.all_optimal_think_bearing(&ab.task),
            r.metrics.think_fraction.last().copied().unwrap_or(f64::NAN),
            r.collapse.collapsed,
            r.collapse.ratio
        );
    }
    Ok(())
}

fn cmd_cognition(a: CognitionArgs) -> Result<(), Failure> {
    let mut cfg = load_config(a.config.as_deref())?;
    let mut overrides = Vec::new();
    if let Some(s) = a.seed {
        cfg.seed = s;
        overrides.push(format!("--seed {s}"));
    }
    let dir = run_dir_of(&a.run_dir, &mut cfg, &mut overrides);
    cfg.validate()?;
    let judge = cfg.judge.build()?;
    let _lock = RunLock::acquire(&dir)?;
    write_snapshot(&dir, &cfg, &overrides)?;
    let vocab = world_vocabulary();
    let spec = GeneratorSpec::new(TaskKind::CognitionTask, cfg.corpus.cognition_size, derive_seed(cfg.seed, &[7]))
        .with_error_rate(cfg.corpus.cognition_error_rate);
    let corpus = generate(&spec, &vocab)?;
    let (train, held) = split_holdout(&corpus, cfg.cognition.holdout_frac, derive_seed(cfg.seed, &[8]));
    let base = fit_base(&train, &vocab, &cfg.cognition, &cfg.format, cfg.seed).map_err(classify)?;
    let out = run_cognition_correction(&base, &train, &held, judge.as_ref(), &cfg.cognition, &cfg.dpo, &cfg.format, cfg.seed)
        .map_err(classify)?;
    let cd = dir.join("cognition");
    std::fs::create_dir_all(&cd).with_context(|| format!("creating {}", cd.display()))?;
    write_dataset(&cd.join("train.jsonl"), &train)?;
    write_dataset(&cd.join("heldout.jsonl"), &held)?;
    write_records(&dir.join(COGNITION_ROWS), &out.report.rows)?;
    std::fs::write(dir.join(COGNITION_TABLE), out.report.to_string()).context("writing cognition table")?;
    out.corrected.save(&cd.join("policy.ckpt.json"))?;
    print!("{}", out.report);
    println!("preference pairs: {}", out.pairs);
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let summary = write_report(&a.run_dir, a.window, a.threshold)?;
    print!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Generate(a) => cmd_generate(a),
        Cmd::Curate(a) => cmd_curate(a),
        Cmd::Loop(a) => cmd_loop(a),
        Cmd::Ablation(a) => cmd_ablation(a),
        Cmd::Cognition(a) => cmd_cognition(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::State(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
