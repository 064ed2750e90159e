use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod cmd;

#[derive(Parser)]
#[command(name = "fgos", version, about = "Frequency-geometric scan toolkit: demos, evaluation and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Haar split/merge on a random grid; fails if the reconstruction error exceeds 1e-5.
    DwtRoundtrip {
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Locality cost, build time and serialization throughput per scan kind.
    ScanBench {
        /// Comma-separated square sizes.
        #[arg(long, default_value = "16,32,64,128")]
        sizes: String,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evolves probes on a synthetic image and writes the trajectory and masks.
    ProbeDemo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        steps: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Runs the segmentation pipeline on one PGM image.
    Forward {
        #[arg(long)]
        image: PathBuf,
        /// Weight bundle (.fgw); seeded weights from the config when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// key = value config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Scan assignment override, e.g. `ll=hilbert,lh=h,hl=v,hh=hilbert` or `D4`.
        #[arg(long)]
        assign: Option<String>,
    },
    /// Writes seeded weights for a config as a .fgw bundle.
    InitWeights {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-component MAC counts for a config and input size.
    Flops {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        size: usize,
    },
    /// Region and topology metrics of prediction PGMs against ground truth PGMs.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generates synthetic curvilinear samples.
    SynthGen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value = "bezier")]
        orientation: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// On-structure response of the aligned and swapped band assignments for an oriented line.
    MismatchDemo {
        #[arg(long, default_value = "horizontal")]
        orientation: String,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Timing of the core kernels and the full forward pass.
    Bench {
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        /// Comma-separated subset of dwt,idwt,fa_scan,cross_scan,ssm,forward.
        #[arg(long, default_value = "dwt,idwt,fa_scan,cross_scan,ssm,forward")]
        ops: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::DwtRoundtrip { size, channels, seed } => cmd::dwt_roundtrip(size, channels, seed),
        Command::ScanBench { sizes, reps, out } => cmd::scan_bench(&sizes, reps, out.as_deref()),
        Command::ProbeDemo { seed, size, steps, out_dir } => cmd::probe_demo(seed, size, steps, &out_dir),
        Command::Forward { image, weights, out, config, assign } => {
            cmd::forward(&image, weights.as_deref(), &out, config.as_deref(), assign.as_deref())
        }
        Command::InitWeights { config, out } => cmd::init_weights(config.as_deref(), &out),
        Command::Flops { config, size } => cmd::flops(config.as_deref(), size),
        Command::Eval { pred_dir, gt_dir, out } => cmd::eval(&pred_dir, &gt_dir, out.as_deref()),
        Command::SynthGen { seed, count, size, orientation, out_dir } => cmd::synth_gen(seed, count, size, &orientation, &out_dir),
        Command::MismatchDemo { orientation, size, seed, out } => cmd::mismatch_demo(&orientation, size, seed, out.as_deref()),
        Command::Bench { size, iterations, warmup, ops, out } => cmd::bench(size, iterations, warmup, &ops, out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
