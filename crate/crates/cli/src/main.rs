//! `manar`: self-checks, benchmarks, convex hull reports, training and sweeps for
//! the memory-augmented attention layer.
//!
//! Exit codes: 0 success, 1 a check failed or the run broke, 2 bad usage.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use manar_core::bench::{self, BenchArm, BenchPlan, BenchRecord, WindowPolicy, BENCH_CSV_HEADER};
use manar_core::checks::{
    decomposition_sweep, equivalence_sweep, retrieval_sweep, DECOMPOSITION_CSV_HEADER, EQUIVALENCE_CSV_HEADER,
    RETRIEVAL_CSV_HEADER,
};
use manar_core::chm::{self, ChmLayerRow, CHM_CSV_HEADER};
use manar_core::csvio::write_records_to;
use manar_core::train::{
    self, chm_samples, gradcheck_config, gradcheck_model, run_sweep, train_model, transfer_model, Arch,
    LongRangeTask, SweepAxis, SweepRow, ToyConfig, ToyWeights, TrainSettings, SWEEP_CSV_HEADER,
};
use manar_core::{load_weights, parse_config, save_weights, FreezeMask, KeyMode, ManarConfig, WeightContainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "manar", version, about = "Memory-augmented attention tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tape gradients of the toy models against central differences.
    Gradcheck(GradcheckArgs),
    /// MHA weights copied into an m = 0, l = n layer reproduce MHA.
    Equiv(EquivArgs),
    /// Wall-clock and score-entry scaling of MHA against the memory layer.
    Bench(BenchArgs),
    /// Convex hull membership of head outputs.
    Chm(ChmArgs),
    /// Train a toy classifier on the long-range task.
    Train(TrainArgs),
    /// Grid of toy training runs over memory, ACR and window sizes.
    Sweep(SweepArgs),
    /// ACR construction against its two-term decomposition.
    DecompCheck(TrialArgs),
    /// Product-key retrieval against brute force over all composite keys.
    RetrievalCheck(TrialArgs),
}

#[derive(Args)]
struct GradcheckArgs {
    /// Use product keys for the memory model.
    #[arg(long)]
    product_keys: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EquivArgs {
    /// Seeds 0..N, one random instance each.
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    Fixed,
    Half,
}

#[derive(Clone, Copy, ValueEnum)]
enum KeysArg {
    Flat,
    Product,
}

impl From<KeysArg> for KeyMode {
    fn from(k: KeysArg) -> Self {
        match k {
            KeysArg::Flat => KeyMode::Flat,
            KeysArg::Product => KeyMode::Product,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArmArg {
    Mha,
    Manar,
}

#[derive(Args)]
struct BenchArgs {
    /// At least four ascending lengths spanning a factor of eight.
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048,4096")]
    seq_lens: Vec<usize>,
    #[arg(long, default_value = "MANAR-256.32.128")]
    config: String,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 32)]
    head_dim: usize,
    #[arg(long, default_value_t = manar_core::DEFAULT_K_TOP)]
    k_top: usize,
    #[arg(long, value_enum, default_value_t = KeysArg::Product)]
    keys: KeysArg,
    #[arg(long, value_enum, default_value_t = WindowArg::Fixed)]
    window: WindowArg,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mha,manar")]
    arms: Vec<ArmArg>,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 2)]
    warmups: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lengths whose score count exceeds this are recorded as unmeasured.
    #[arg(long, default_value_t = 1 << 27)]
    max_score_entries: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ChmMode {
    /// Standard attention toy model; every output must be inside.
    Control,
    /// Hand-built memory layer with an output outside the hull.
    Witness,
    /// Memory-layer toy model, reported without a pass criterion.
    Model,
}

#[derive(Args)]
struct ChmArgs {
    #[arg(long, value_enum)]
    mode: ChmMode,
    /// Outputs sampled per layer.
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = chm::DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sequences pushed through the model.
    #[arg(long, default_value_t = 64)]
    sequences: usize,
    /// Layer shape for `model` mode.
    #[arg(long, default_value = "MANAR-16.8.16")]
    config: String,
    /// Trained weights for `model` mode, as written by `train --weights-out`.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Longrange,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Mha,
    Manar,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::Longrange)]
    task: TaskArg,
    #[arg(long, default_value = "MANAR-16.8.16")]
    config: String,
    #[arg(long, value_enum, default_value_t = ArchArg::Manar)]
    arch: ArchArg,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Copy MHA weights into the memory model and train only the memory
    /// parameters before step K.
    #[arg(long)]
    freeze_until: Option<usize>,
    /// MHA toy weights to copy from; a fresh MHA model when absent.
    #[arg(long, requires = "freeze_until")]
    source: Option<PathBuf>,
    /// Per-step minibatch losses.
    #[arg(long)]
    loss_out: Option<PathBuf>,
    #[arg(long)]
    weights_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    CwlAcr,
    MemAcr,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    axis: AxisArg,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training steps per cell.
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrialArgs {
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Check(String),
    Internal(anyhow::Error),
}

impl From<manar_core::Error> for Failure {
    fn from(e: manar_core::Error) -> Self {
        use manar_core::Error as E;
        match e {
            E::Argument(_) | E::Parse { .. } | E::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Internal(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Internal(e)
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let result = match cli.command {
        Command::Gradcheck(a) => gradcheck(a),
        Command::Equiv(a) => equiv(a),
        Command::Bench(a) => run_bench(a),
        Command::Chm(a) => run_chm(a),
        Command::Train(a) => run_train(a),
        Command::Sweep(a) => sweep(a),
        Command::DecompCheck(a) => decomp_check(a),
        Command::RetrievalCheck(a) => retrieval_check(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Internal(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// CSV to `out`, or to stdout when no path is given.
fn emit<R: serde::Serialize>(records: &[R], header: &[&str], out: Option<&Path>) -> Outcome {
    match out {
        Some(p) => manar_core::csvio::write_records(records, header, p)?,
        None => write_records_to(records, header, std::io::stdout().lock(), Path::new("<stdout>"))?,
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Outcome {
    let keys = if a.product_keys { KeyMode::Product } else { KeyMode::Flat };
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for (label, arch) in [("mha", Arch::Mha), ("manar", Arch::Manar)] {
        let report = gradcheck_model(&gradcheck_config(arch, keys), a.seed, a.step)?;
        log::info!("{label}: max relative error {:.3e}", report.max_rel_error());
        worst = worst.max(report.max_rel_error());
        rows.extend(report.groups.into_iter().map(|mut g| {
            g.name = format!("{label}/{}", g.name);
            g
        }));
    }
    emit(&rows, &["name", "rel_error", "skipped"], a.out.as_deref())?;
    if !(worst <= a.tol) {
        return Err(Failure::Check(format!("max relative error {worst:.3e} above {:.1e}", a.tol)));
    }
    Ok(())
}

fn equiv(a: EquivArgs) -> Outcome {
    let rows = equivalence_sweep(0..a.seeds)?;
    let worst = rows.iter().map(|r| r.max_abs_diff).fold(0.0, f64::max);
    emit(&rows, &EQUIVALENCE_CSV_HEADER, a.out.as_deref())?;
    log::info!("{} instances, max abs difference {worst:.3e}", rows.len());
    if !(worst <= a.tol) {
        return Err(Failure::Check(format!("max abs difference {worst:.3e} above {:.1e}", a.tol)));
    }
    Ok(())
}

fn run_bench(a: BenchArgs) -> Outcome {
    if a.seq_lens.len() < 4 {
        return Err(Failure::Usage(format!(
            "--seq-lens needs at least 4 lengths for a slope fit, got {}",
            a.seq_lens.len()
        )));
    }
    let name = parse_config(&a.config)?;
    let layer = ManarConfig::from_name(name, a.heads, a.head_dim, a.k_top, a.keys.into())?;
    let plan = BenchPlan {
        lengths: a.seq_lens.clone(),
        arms: a
            .arms
            .iter()
            .map(|arm| match arm {
                ArmArg::Mha => BenchArm::Mha,
                ArmArg::Manar => BenchArm::Manar,
            })
            .collect(),
        layer,
        window: match a.window {
            WindowArg::Fixed => WindowPolicy::Fixed,
            WindowArg::Half => WindowPolicy::Half,
        },
        repetitions: a.reps,
        warmups: a.warmups,
        seed: a.seed,
        max_score_entries: a.max_score_entries,
    };
    let records = bench::run_bench(&plan, |r: &BenchRecord| {
        log::info!("{} n={}: {:.4e} s, {} score entries", r.arm, r.n, r.median_seconds, r.instrumented_entries);
    })?;
    emit(&records, &BENCH_CSV_HEADER, a.out.as_deref())?;
    for &arm in &plan.arms {
        match bench::arm_slope(&records, arm) {
            Ok(s) => log::info!("{} log-log slope {s:.3}", arm.label()),
            Err(e) => log::warn!("{}: no slope ({e})", arm.label()),
        }
    }
    let bad: Vec<String> = records
        .iter()
        .filter(|r| r.measured && r.instrumented_entries != r.analytic_entries)
        .map(|r| format!("{} n={}: {} counted vs {} analytic", r.arm, r.n, r.instrumented_entries, r.analytic_entries))
        .collect();
    if !bad.is_empty() {
        return Err(Failure::Check(bad.join("; ")));
    }
    Ok(())
}

/// Toy config and dataset for a `MANAR-M.m.C` name on the long-range task.
fn toy_setup(config: &str, arch: Arch, seed: u64) -> Result<(ToyConfig, LongRangeTask), Failure> {
    let name = parse_config(config)?;
    if name.context_window % 2 != 0 {
        return Err(Failure::Usage(format!("context window {} must be even", name.context_window)));
    }
    let task = LongRangeTask {
        half_window: name.context_window / 2,
        seed,
        ..LongRangeTask::default()
    };
    task.validate()?;
    let mut cfg = ToyConfig::long_range(&task, name.acr_size);
    cfg.arch = arch;
    cfg.layer.memory_size = name.memory_size;
    cfg.validate()?;
    Ok((cfg, task))
}

fn run_chm(a: ChmArgs) -> Outcome {
    let rows: Vec<ChmLayerRow> = match a.mode {
        ChmMode::Witness => {
            let v = chm::verify_witness(8, a.seed, a.eps)?;
            let outside = !v.simplex.inside;
            match &v.separation {
                Some(s) => log::info!(
                    "witness output coordinate {} = {:.6e} lies {} every value (bound {:.6e})",
                    s.coord,
                    s.value,
                    if s.above { "above" } else { "below" },
                    s.bound
                ),
                None => log::warn!("no bounding-box separation for the witness output"),
            }
            let row = ChmLayerRow {
                layer_index: 0,
                samples: 1,
                outside_count: usize::from(outside),
                outside_fraction: if outside { 1.0 } else { 0.0 },
            };
            emit(std::slice::from_ref(&row), &CHM_CSV_HEADER, a.out.as_deref())?;
            if !outside || v.separation.is_none() {
                return Err(Failure::Check("witness output was not certified outside the hull".into()));
            }
            return Ok(());
        }
        ChmMode::Control | ChmMode::Model => {
            let arch = if a.mode == ChmMode::Control { Arch::Mha } else { Arch::Manar };
            let (cfg, task) = toy_setup(&a.config, arch, a.seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let mut w = ToyWeights::<f32>::init(&cfg, &mut rng)?;
            if let Some(p) = &a.weights {
                load_weights(p)?.apply_to(&mut w)?;
            }
            let data = LongRangeTask {
                train_size: 0,
                test_size: a.sequences,
                ..task
            }
            .generate()?;
            let layers = chm_samples(&w.cast::<f64>(), &cfg, &data.test)?;
            chm::chm_report(&layers, a.samples, a.eps, a.seed)?
        }
    };
    emit(&rows, &CHM_CSV_HEADER, a.out.as_deref())?;
    if a.mode == ChmMode::Control {
        let outside: usize = rows.iter().map(|r| r.outside_count).sum();
        if outside > 0 {
            return Err(Failure::Check(format!("{outside} attention outputs outside their value hull")));
        }
    }
    Ok(())
}

fn run_train(a: TrainArgs) -> Outcome {
    let TaskArg::Longrange = a.task;
    let arch = match a.arch {
        ArchArg::Mha => Arch::Mha,
        ArchArg::Manar => Arch::Manar,
    };
    if a.freeze_until.is_some() && arch != Arch::Manar {
        return Err(Failure::Usage("--freeze-until needs --arch manar".into()));
    }
    let (cfg, task) = toy_setup(&a.config, arch, a.seed)?;
    let data = task.generate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut w = ToyWeights::<f32>::init(&cfg, &mut rng)?;
    let mut mask = FreezeMask::all_trainable(&w, "");
    if a.freeze_until.is_some() {
        let src_cfg = ToyConfig { arch: Arch::Mha, ..cfg };
        let mut src = ToyWeights::<f32>::init(&src_cfg, &mut rng)?;
        if let Some(p) = &a.source {
            load_weights(p)?.apply_to(&mut src)?;
        }
        mask = transfer_model(&src, &mut w)?;
        log::info!("{} parameters frozen until step {}", mask.frozen().count(), a.freeze_until.unwrap_or(0));
    }
    let settings = TrainSettings {
        steps: a.steps,
        batch_size: a.batch_size,
        optimizer: train::AdamWSettings {
            lr: a.lr,
            ..Default::default()
        },
        seed: a.seed,
        thaw_step: a.freeze_until,
        ..Default::default()
    };
    let out = train_model(&cfg, &w, &data, &settings, &mask, |step, _| {
        if step % 200 == 0 {
            log::debug!("step {step}");
        }
    })?;
    if let Some(p) = &a.loss_out {
        train::write_loss_csv(&out.losses, p)?;
    }
    if let Some(p) = &a.weights_out {
        save_weights(&WeightContainer::from_params(&out.weights), p)?;
    }
    let minima = train::windowed_minima(&out.losses, 200);
    let monotone = minima.windows(2).all(|w| w[1] <= w[0]);
    log::info!("best loss per 200-step window non-increasing: {monotone}");
    println!("initial_loss,final_loss,test_accuracy");
    println!("{},{},{}", out.initial_loss, out.final_loss, out.test_accuracy);
    Ok(())
}

fn sweep(a: SweepArgs) -> Outcome {
    let axis = match a.axis {
        AxisArg::CwlAcr => SweepAxis::CwlAcr,
        AxisArg::MemAcr => SweepAxis::MemAcr,
    };
    let settings = TrainSettings {
        steps: a.steps,
        ..Default::default()
    };
    let rows = run_sweep(axis, &LongRangeTask::default(), &settings, a.seed, |r: &SweepRow| {
        log::info!(
            "M={} m={} C={}: loss {:.4} -> {:.4}, accuracy {:.3}",
            r.memory_size,
            r.acr_size,
            r.context_window,
            r.initial_loss,
            r.final_loss,
            r.test_accuracy
        );
    })?;
    emit(&rows, &SWEEP_CSV_HEADER, a.out.as_deref())?;
    if axis == SweepAxis::MemAcr {
        for m in [2, 4, 8] {
            let accs: Vec<f64> = rows.iter().filter(|r| r.acr_size == m).map(|r| r.test_accuracy).collect();
            let monotone = accs.windows(2).all(|w| w[1] >= w[0]);
            log::info!("m={m}: accuracy over M {accs:?}, non-decreasing: {monotone}");
        }
    }
    Ok(())
}

fn decomp_check(a: TrialArgs) -> Outcome {
    let rows = decomposition_sweep(a.trials, a.seed)?;
    emit(&rows, &DECOMPOSITION_CSV_HEADER, a.out.as_deref())?;
    let w32 = rows.iter().map(|r| r.rel_diff_f32).fold(0.0, f64::max);
    let w64 = rows.iter().map(|r| r.rel_diff_f64).fold(0.0, f64::max);
    log::info!("{} trials: max relative difference {w32:.3e} (f32), {w64:.3e} (f64)", rows.len());
    if !(w32 <= 1e-5 && w64 <= 1e-10) {
        return Err(Failure::Check(format!("relative differences {w32:.3e} / {w64:.3e} above 1e-5 / 1e-10")));
    }
    Ok(())
}

fn retrieval_check(a: TrialArgs) -> Outcome {
    let rows = retrieval_sweep(a.trials, a.seed)?;
    emit(&rows, &RETRIEVAL_CSV_HEADER, a.out.as_deref())?;
    let mismatched = rows.iter().filter(|r| !r.matched).count();
    log::info!("{} trials, {mismatched} mismatches", rows.len());
    if mismatched > 0 {
        return Err(Failure::Check(format!("{mismatched} of {} retrievals differ from brute force", rows.len())));
    }
    Ok(())
}
