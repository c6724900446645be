//! `hoiprior` command-line pipeline: synthetic data, filtering, calibration,
//! aggregation, inference, evaluation, mesh export, and diagnostics.

mod commands;
mod stamp;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hoiprior::body::BodyPart;
use hoiprior::filtering::FilterProfile;
use hoiprior::pap::{ApMode, Interpolation};

#[derive(Parser)]
#[command(name = "hoiprior", version, about = "Canonical human-object occupancy pipeline")]
struct Cli {
    /// Worker threads; falls back to CHORUS_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArg {
    /// Pipeline config (JSON); defaults apply to anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with oracle fields.
    SynthGenerate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the detection-record filter cascade.
    Filter {
        #[command(flatten)]
        cfg: ConfigArg,
        /// One JSON detection record per line.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        category: Option<String>,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        /// CSV of rejected image ids and reasons.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit perspective cameras to each view's 2D joints.
    Calibrate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        profile: Option<Profile>,
        /// JSON report of every fit.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write fitted cameras back into the view records.
        #[arg(long)]
        apply: bool,
    },
    /// Aggregate object masks into a canonical occupancy field.
    Aggregate {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Prompt of the semantic type (with --part).
        #[arg(long, requires = "part")]
        prompt: Option<String>,
        /// Contacted body part, e.g. rightHand (with --prompt).
        #[arg(long, requires = "prompt")]
        part: Option<BodyPart>,
    },
    /// Carry a canonical field into a target pose.
    Infer {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        field: PathBuf,
        /// Pose parameters (JSON).
        #[arg(long, conflicts_with_all = ["dataset", "view"])]
        pose: Option<PathBuf>,
        /// Take the pose of a dataset view instead (with --view).
        #[arg(long, requires = "view")]
        dataset: Option<PathBuf>,
        #[arg(long, requires = "dataset")]
        view: Option<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Projective average precision of a field against dataset masks.
    EvalPap {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        /// Ignore pixels covered by the human mask.
        #[arg(long)]
        hoa: bool,
        #[arg(long, value_enum)]
        interpolation: Option<Interp>,
        /// Only score views of this prompt.
        #[arg(long)]
        prompt: Option<String>,
        /// The field is already posed; skip backward skinning.
        #[arg(long)]
        posed: bool,
        /// Per-sample CSV report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Summary JSON; printed to stdout either way.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Marching-cubes surface of a field as OBJ or PLY.
    ExportMesh {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        iso: Option<f64>,
        /// Format follows the extension (.obj or .ply).
        #[arg(long)]
        out: PathBuf,
        /// Let surfaces run open at the grid boundary.
        #[arg(long)]
        no_clamp: bool,
    },
    /// Dataset statistics: rejection rate, camera entropy, bin and prompt counts.
    Diagnostics {
        #[command(flatten)]
        cfg: ConfigArg,
        #[arg(long)]
        dataset: PathBuf,
        /// Detection records; defaults to records.jsonl in the dataset.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        category: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// synth-generate, aggregate, eval-pap, export-mesh, diagnostics in one go.
    Run {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Output directory for every artifact.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Default,
    Eval,
}

impl From<Profile> for FilterProfile {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Default => FilterProfile::Default,
            Profile::Eval => FilterProfile::Eval,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Vanilla,
    Strict,
}

impl From<Mode> for ApMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Vanilla => ApMode::Vanilla,
            Mode::Strict => ApMode::Strict,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Interp {
    AllPoint,
    ElevenPoint,
}

impl From<Interp> for Interpolation {
    fn from(i: Interp) -> Self {
        match i {
            Interp::AllPoint => Interpolation::AllPoint,
            Interp::ElevenPoint => Interpolation::ElevenPoint,
        }
    }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, String> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("CHORUS_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("CHORUS_THREADS={v:?} is not a thread count")),
        _ => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Info
        } else {
            log::LevelFilter::Warn
        })
        .parse_default_env()
        .init();

    let threads = match thread_count(cli.threads) {
        Ok(t) => t,
        Err(e) => return commands::fail("setup", &anyhow::anyhow!(e)),
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return commands::fail("setup", &anyhow::anyhow!(e));
        }
    }

    let result = match cli.command {
        Command::SynthGenerate { cfg, out, seed } => commands::synth_generate(&cfg, &out, seed),
        Command::Filter {
            cfg,
            records,
            category,
            profile,
            out,
        } => commands::filter(&cfg, &records, category, profile.map(Into::into), out.as_deref()),
        Command::Calibrate {
            cfg,
            dataset,
            profile,
            out,
            apply,
        } => commands::calibrate(&cfg, &dataset, profile.map(Into::into), out.as_deref(), apply),
        Command::Aggregate {
            cfg,
            dataset,
            out,
            prompt,
            part,
        } => commands::aggregate(&cfg, &dataset, &out, prompt.zip(part)),
        Command::Infer {
            cfg,
            field,
            pose,
            dataset,
            view,
            out,
        } => commands::infer(&cfg, &field, pose.as_deref(), dataset.as_deref().zip(view), &out),
        Command::EvalPap {
            cfg,
            field,
            dataset,
            mode,
            hoa,
            interpolation,
            prompt,
            posed,
            out,
            summary,
        } => commands::eval_pap(
            &cfg,
            &commands::EvalArgs {
                field,
                dataset,
                mode: mode.map(Into::into),
                hoa,
                interpolation: interpolation.map(Into::into),
                prompt,
                posed,
                out,
                summary,
            },
        ),
        Command::ExportMesh {
            cfg,
            field,
            iso,
            out,
            no_clamp,
        } => commands::export_mesh(&cfg, &field, iso, &out, no_clamp),
        Command::Diagnostics {
            cfg,
            dataset,
            records,
            category,
            out,
        } => commands::diagnostics(&cfg, &dataset, records.as_deref(), category, out.as_deref()),
        Command::Run { cfg, out } => commands::run(&cfg, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => commands::fail(e.stage, &e.error),
    }
}
