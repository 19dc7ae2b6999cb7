use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use fan_core::checks::{all_checks, check, DEFAULT_INSTANCES, TOLERANCE};
use fan_core::data::{
    degrade_pair, list_pngs, load_paired_dir, load_png, save_png, synthetic_pairs, DegradationConfig,
};
use fan_core::eval::eval_dirs;
use fan_core::infer::{infer_tiled, self_ensemble, upscale, TilingPlan, DEFAULT_OVERLAP, DEFAULT_TILE};
use fan_core::metrics::format_db;
use fan_core::model::weights::{load_model, FanwFile};
use fan_core::model::{FanConfig, FanModel};
use fan_core::par::Workers;
use fan_core::train::{LossMode, TrainConfig, Trainer};
use fan_core::Error;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "fan", version, about = "Frequency aggregation network for x4 super-resolution")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build LR/HR training pairs from clean PNGs.
    Degrade(DegradeArgs),
    /// Train a network on paired folders or synthetic data.
    Train(TrainArgs),
    /// Super-resolve every PNG in a folder.
    Infer(InferArgs),
    /// Score predictions against ground truth (PSNR and SSIM on luma).
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
    /// Print the parameter census of a configuration.
    Params(ParamsArgs),
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_lr: PathBuf,
    #[arg(long)]
    out_hr: PathBuf,
    #[arg(long, default_value_t = 4)]
    scale: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma_lr: f64,
    #[arg(long, default_value_t = 0.0)]
    sigma_hr: f64,
    #[arg(long, default_value_t = 0.01)]
    noise_lr: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_hr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON with optional `model`, `train`, `degradation` and `synthetic_size` fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, requires = "data_hr", conflicts_with = "synthetic")]
    data_lr: Option<PathBuf>,
    #[arg(long, requires = "data_lr")]
    data_hr: Option<PathBuf>,
    /// Train on this many generated images instead of folders.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from a checkpoint; its training settings take precedence.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Single loss for the whole run (disables the MSE fine-tune phase).
    #[arg(long)]
    loss: Option<LossMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print a progress line every this many steps.
    #[arg(long, default_value_t = 10)]
    log_every: u64,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TILE)]
    tile: usize,
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    overlap: usize,
    /// Average over the eight flips and rotations.
    #[arg(long)]
    self_ensemble: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// `all` or one check name.
    #[arg(long, default_value = "all")]
    ops: String,
    #[arg(long, default_value_t = DEFAULT_INSTANCES)]
    instances: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ParamsArgs {
    /// A bare model config or a training config with a `model` field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also tabulate the branch-count and attention ablations.
    #[arg(long)]
    ablation: bool,
}

/// Contents of `train --config`.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfig {
    model: FanConfig,
    train: TrainConfig,
    degradation: DegradationConfig,
    synthetic_size: Option<usize>,
}

const DEFAULT_SYNTHETIC_SIZE: usize = 192;

enum Failure {
    Usage(String),
    Data(String),
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.cmd {
        Command::Degrade(a) => degrade(a),
        Command::Train(a) => train(a),
        Command::Infer(a) => infer(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Params(a) => params(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Check(m)) => {
            eprintln!("{m}");
            ExitCode::from(3)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn degrade(a: DegradeArgs) -> CmdResult {
    let cfg = DegradationConfig::gaussian(a.sigma_hr, a.sigma_lr, a.scale, a.noise_hr, a.noise_lr, a.seed)?;
    fs::create_dir_all(&a.out_lr).map_err(Error::from)?;
    fs::create_dir_all(&a.out_hr).map_err(Error::from)?;
    let names = list_pngs(&a.input)?;
    let mut failed = 0;
    let (mut clamped_hr, mut clamped_lr) = (0, 0);
    for (i, name) in names.iter().enumerate() {
        let path = a.input.join(name);
        let done = load_png(&path)
            .and_then(|img| degrade_pair(&img, &cfg, i as u64))
            .and_then(|d| {
                save_png(&d.sample.lr, &a.out_lr.join(name))?;
                save_png(&d.sample.hr, &a.out_hr.join(name))?;
                Ok(d)
            });
        match done {
            Ok(d) => {
                clamped_hr += d.clamped_hr;
                clamped_lr += d.clamped_lr;
            }
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                failed += 1;
            }
        }
    }
    println!(
        "degraded {} of {} images ({clamped_hr} HR and {clamped_lr} LR values clamped)",
        names.len() - failed,
        names.len()
    );
    if failed > 0 {
        return Err(Failure::Data(format!("{failed} images failed")));
    }
    Ok(())
}

fn train(a: TrainArgs) -> CmdResult {
    let run: RunConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    let mut cfg = run.train;
    if let Some(mode) = a.loss {
        cfg = cfg.single_phase(mode);
    }
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let data = if let (Some(lr), Some(hr)) = (&a.data_lr, &a.data_hr) {
        load_paired_dir(lr, hr)?
    } else if let Some(n) = a.synthetic {
        let mut deg = run.degradation;
        if a.seed.is_some() {
            deg.seed = cfg.seed;
        }
        let size = run.synthetic_size.unwrap_or(DEFAULT_SYNTHETIC_SIZE);
        synthetic_pairs(n, size, &deg, &Workers::new(cfg.workers))?
    } else {
        return Err(Failure::Usage("give --data-lr and --data-hr, or --synthetic N".into()));
    };
    let mut trainer = match &a.resume {
        Some(p) => {
            if a.config.is_some() || a.loss.is_some() || a.seed.is_some() {
                eprintln!("note: resuming uses the settings stored in {}", p.display());
            }
            Trainer::resume(&FanwFile::read(p)?, data)?
        }
        None => Trainer::new(FanModel::new(run.model, cfg.seed)?, cfg, data)?,
    };
    let total = trainer.total_steps();
    println!(
        "training {} parameters for {total} steps ({} per epoch) from step {}",
        trainer.model().count_params(),
        trainer.steps_per_epoch(),
        trainer.step_count()
    );
    let start = Instant::now();
    let every = a.log_every.max(1);
    trainer.run(Some(&a.out), |r| {
        if r.step % every == 0 || r.step + 1 == total {
            println!(
                "step {:>6}  epoch {:>4}  lr {:.2e}  loss {:.6}  psnr {}  {:.1}s",
                r.step,
                r.epoch,
                r.lr,
                r.loss,
                format_db(r.train_psnr),
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn infer(a: InferArgs) -> CmdResult {
    if !a.tile.is_multiple_of(4) || a.tile == 0 {
        return Err(Failure::Usage(format!("--tile must be a positive multiple of 4, got {}", a.tile)));
    }
    if a.overlap >= a.tile {
        return Err(Failure::Usage(format!("--overlap {} must be below --tile {}", a.overlap, a.tile)));
    }
    let model = load_model(&a.model)?;
    let m = model.config().input_multiple();
    if !a.tile.is_multiple_of(m) {
        eprintln!("note: tiles of {} are padded to a multiple of {m} for this network", a.tile);
    }
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    let run = |x: &fan_core::Tensor<f32>| upscale(&model, x);
    let mut failed = 0;
    for name in list_pngs(&a.input)? {
        let path = a.input.join(&name);
        let start = Instant::now();
        let done = load_png(&path).and_then(|x| {
            let y = if a.self_ensemble {
                self_ensemble(&x, a.tile, a.overlap, run)?
            } else {
                let s = x.shape();
                infer_tiled(&x, &TilingPlan::new(s.h, s.w, a.tile, a.overlap)?, run)?
            };
            save_png(&y, &a.out.join(&name))
        });
        match done {
            Ok(()) => println!("{name}  {:.2}s", start.elapsed().as_secs_f64()),
            Err(e) => {
                eprintln!("{}: {e}", path.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Data(format!("{failed} images failed")));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let report = eval_dirs(&a.pred, &a.gt)?;
    let table = report.to_csv();
    match &a.csv {
        Some(p) => fs::write(p, &table).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?,
        None => print!("{table}"),
    }
    if let Some((p, s)) = report.mean() {
        eprintln!("{} images: mean PSNR {}, mean SSIM {s:.4}", report.scores.len(), format_db(p));
    }
    for e in &report.errors {
        eprintln!("{e}");
    }
    if !report.errors.is_empty() {
        return Err(Failure::Data(format!("{} files could not be scored", report.errors.len())));
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let names: Vec<&str> = if a.ops == "all" {
        all_checks().collect()
    } else {
        vec![a.ops.as_str()]
    };
    let mut failed = Vec::new();
    for name in names {
        let r = check(name, a.instances, a.seed)?;
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<20} max rel err {:.3e}  checked {:>6}  skipped {:>4}  {verdict}",
            r.name, r.result.max_rel_error, r.result.checked, r.result.skipped
        );
        if !r.passed() {
            failed.push(r.name);
        }
    }
    if !failed.is_empty() {
        return Err(Failure::Check(format!(
            "gradient check above {TOLERANCE:e} for: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

fn params(a: ParamsArgs) -> CmdResult {
    let cfg = match &a.config {
        None => FanConfig::default(),
        Some(p) => {
            let value: serde_json::Value = read_json(p)?;
            let model = match value.get("model") {
                Some(m) => m.clone(),
                None => value,
            };
            serde_json::from_value(model).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
    };
    let model = FanModel::<f32>::new(cfg.clone(), 0)?;
    print!("{}", model.describe());
    if a.ablation {
        println!();
        println!("{:<24} {:>12}", "variant", "params");
        for b in 1..=4 {
            let v = FanConfig {
                num_branches: b,
                branch_channels: FanConfig::fan(b).branch_channels,
                ..cfg.clone()
            };
            println!("{:<24} {:>12}", format!("FAN-{b}"), count(v)?);
        }
        for (ca, nl) in [(false, false), (true, false), (false, true), (true, true)] {
            let v = FanConfig {
                ca_enabled: ca,
                nl_enabled: nl,
                ..cfg.clone()
            };
            let label = format!("CA {} NL {}", on_off(ca), on_off(nl));
            println!("{label:<24} {:>12}", count(v)?);
        }
    }
    Ok(())
}

fn count(cfg: FanConfig) -> Result<usize, Failure> {
    Ok(FanModel::<f32>::new(cfg, 0)?.count_params())
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}
