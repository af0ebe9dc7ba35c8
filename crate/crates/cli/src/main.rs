use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use maisenet_cli::commands::{self, to_json, write_text};
use maisenet_cli::{init_weights, load_config, save_weights, BucketMix, CliError, EXIT_CHECK_FAILED, EXIT_USAGE};
use maisenet_core::BlockKind;
use maisenet_eval::{render_table, Task};

#[derive(Parser)]
#[command(
    name = "maisenet",
    version,
    about = "Mask attention and scale enhancement blocks: checks, forward passes and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Bbox,
    Segm,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Bbox => Task::Bbox,
            TaskArg::Segm => Task::Segm,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the invariant suite and print a JSON report.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Relative-error tolerance for nonlinear gradient checks.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient check of one block, or `all`.
    Gradcheck {
        #[arg(long)]
        block: String,
        /// Single seed; seeds 0, 1 and 2 when omitted.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward pass on seeded synthetic features; writes per-tensor statistics.
    Forward {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write seeded initial weights for a config as a tensor archive.
    Init {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// COCO-style AP of detections against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        dt: PathBuf,
        #[arg(long, value_enum)]
        task: TaskArg,
        /// JSON report destination.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy non-maximum suppression per image.
    Nms {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        iou: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic ship scene as COCO-subset ground truth.
    Synth {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write detections identical to the ground truth.
        #[arg(long)]
        dt_out: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        height: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
        #[arg(long, default_value_t = 2)]
        small: usize,
        #[arg(long, default_value_t = 2)]
        medium: usize,
        #[arg(long, default_value_t = 1)]
        large: usize,
    },
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("MAISENET_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        CliError::usage(format!("MAISENET_THREADS={value:?} is not a positive integer"), "unset it or pass e.g. 4")
    })?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| CliError::usage(e.to_string(), ""))
}

fn emit(text: &str, out: Option<&PathBuf>) -> Result<(), CliError> {
    if let Some(path) = out {
        write_text(path, text)?;
    }
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(text.as_bytes()).map_err(|e| CliError::usage(format!("stdout: {e}"), ""))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Check { seed, tol, out } => {
            let report = commands::cmd_check(seed, tol, |r| {
                eprintln!("{} {} ({})", if r.pass { "PASS" } else { "FAIL" }, r.id, r.detail);
            })?;
            emit(&to_json(&report), out.as_ref())?;
            eprintln!("{} passed, {} failed", report.passed, report.failed);
            if !report.all_passed() {
                return Err(CliError::failed(format!("{} invariant checks failed", report.failed)));
            }
        }
        Command::Gradcheck { block, seed, tol, out } => {
            let blocks: Vec<BlockKind> = if block == "all" {
                BlockKind::ALL.to_vec()
            } else {
                vec![block.parse().map_err(|e: maisenet_core::Error| {
                    CliError::usage(e.to_string(), "pass one block name or `all`")
                })?]
            };
            let seeds = seed.map_or_else(|| vec![0, 1, 2], |s| vec![s]);
            let results = commands::cmd_gradcheck(&blocks, &seeds, tol)?;
            for r in &results {
                eprintln!(
                    "{} {} seed {}: max relative error {:.3e} (tolerance {:e})",
                    if r.result.pass { "PASS" } else { "FAIL" },
                    r.block,
                    r.seed,
                    r.result.max_relative_error,
                    r.tolerance
                );
            }
            emit(&to_json(&results), out.as_ref())?;
            let failed = results.iter().filter(|r| !r.result.pass).count();
            if failed > 0 {
                return Err(CliError::failed(format!("{failed} gradient checks failed")));
            }
        }
        Command::Forward { config, out } => {
            let cfg = load_config(&config)?;
            let report = commands::cmd_forward(&cfg)?;
            write_text(&out, &to_json(&report))?;
            for t in &report.tensors {
                println!("{:<20} {:?} mean {:+.6e} variance {:.6e}", t.name, t.shape, t.mean, t.variance);
            }
        }
        Command::Init { config, out, seed } => {
            let cfg = load_config(&config)?;
            let params = init_weights(&cfg, seed.unwrap_or(cfg.seed));
            save_weights(&params, &out)?;
            eprintln!("wrote {} tensors to {}", params.len(), out.display());
        }
        Command::Eval { gt, dt, task, out } => {
            let report = commands::cmd_eval(&gt, &dt, task.into())?;
            print!("{}", render_table(&report));
            if let Some(path) = out {
                write_text(&path, &to_json(&report))?;
            }
        }
        Command::Nms { input, iou, out } => {
            let kept = commands::cmd_nms(&input, iou)?;
            write_text(&out, &to_json(&kept))?;
            eprintln!("kept {} detections", kept.len());
        }
        Command::Synth { seed, out, dt_out, height, width, small, medium, large } => {
            let synth = commands::cmd_synth(seed, height, width, BucketMix { small, medium, large })?;
            write_text(&out, &synth.ground_truth)?;
            if let Some(path) = dt_out {
                write_text(&path, &synth.detections)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            let code = if e.code == EXIT_CHECK_FAILED { EXIT_CHECK_FAILED } else { EXIT_USAGE };
            ExitCode::from(code as u8)
        }
    }
}
