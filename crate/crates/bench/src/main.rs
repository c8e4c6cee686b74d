//! Benchmark CLI.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure during training.

use clap::{Args, Parser, Subcommand};
use sparsecode::bayeslista::MomentMode;
use sparsecode_bench::error::BenchError;
use sparsecode_bench::idx::{load_mnist_idx, PixelScale};
use sparsecode_bench::run::{
    emit_csv, run_active, run_mnist, run_sweep, ActiveConfig, Algo, Experiment, MnistConfig,
    Strategy, SweepConfig,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "bench", version, about = "Sparse coding benchmark harness")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Offset added to every seed in the seed list.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
    /// Use exact product moments in the uncertainty propagation.
    #[arg(long, global = true)]
    exact_moments: bool,
    /// Worker threads for independent experiment cells.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output format (only `csv`).
    #[arg(long, global = true, default_value = "csv")]
    format: String,
    /// Append an `nmse_db` column (10*log10 of NMSE).
    #[arg(long, global = true)]
    db: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// Shrinkage parameter.
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    /// Training epochs for the learned networks.
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    /// SGD step size for the frequentist network.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Comma-separated algorithms.
    #[arg(long, default_value = "ista,fista,lista,bayeslista")]
    algos: String,
    /// Seed list: `a..b` (inclusive) or comma-separated.
    #[arg(long, default_value = "0..4")]
    seeds: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Target dimension D.
    #[arg(long, default_value_t = 100)]
    d: usize,
    /// Observation noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    noise_sd: f64,
    /// Probability of a zero target entry.
    #[arg(long, default_value_t = 0.8)]
    spike_prob: f64,
    /// Excluded slab interval around zero.
    #[arg(long, default_value_t = 0.1)]
    trunc: f64,
    /// Training pairs.
    #[arg(long, default_value_t = 1000)]
    n_train: usize,
    /// Test pairs.
    #[arg(long, default_value_t = 100)]
    n_test: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthetic benchmark over network depths.
    LayersSweep {
        /// Comma-separated depth list.
        #[arg(long, default_value = "1,2,4,8,16")]
        layers: String,
        /// Observation size K.
        #[arg(long, default_value_t = 50)]
        k: usize,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Synthetic benchmark over observation sizes.
    KSweep {
        /// Comma-separated observation size list.
        #[arg(long, default_value = "25,50,75,100")]
        ks: String,
        /// Network depth.
        #[arg(long, default_value_t = 4)]
        layers: usize,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Image reconstruction benchmark from an IDX image file.
    Mnist {
        /// Path to an IDX image file (magic 0x00000803).
        #[arg(long)]
        images: PathBuf,
        /// Observation size K.
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Training images.
        #[arg(long, default_value_t = 100)]
        train: usize,
        /// Test images.
        #[arg(long, default_value_t = 100)]
        test: usize,
        /// Network depth.
        #[arg(long, default_value_t = 4)]
        layers: usize,
        /// Pixel scaling.
        #[arg(long, default_value = "unit")]
        mnist_scale: String,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Active learning with uncertainty sampling on image data.
    Active {
        /// Path to an IDX image file.
        #[arg(long)]
        images: PathBuf,
        /// Initial training images.
        #[arg(long, default_value_t = 50)]
        train: usize,
        /// Pool images.
        #[arg(long, default_value_t = 500)]
        pool: usize,
        /// Test images.
        #[arg(long, default_value_t = 100)]
        test: usize,
        /// Acquisition rounds.
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        /// Independent repetitions (seeds 0..repeats-1).
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        /// Comma-separated strategies.
        #[arg(long, default_value = "active,random")]
        strategy: String,
        /// Observation size K.
        #[arg(long, default_value_t = 100)]
        k: usize,
        /// Network depth.
        #[arg(long, default_value_t = 4)]
        layers: usize,
        /// Pixel scaling.
        #[arg(long, default_value = "unit")]
        mnist_scale: String,
        #[command(flatten)]
        model: ModelArgs,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, BenchError> {
    let items: Result<Vec<T>, _> = s.split(',').map(|p| p.trim().parse::<T>()).collect();
    let items = items.map_err(|_| BenchError::Config(format!("invalid {what} list '{s}'")))?;
    if items.is_empty() {
        return Err(BenchError::Config(format!("empty {what} list")));
    }
    Ok(items)
}

fn parse_seeds(s: &str, offset: u64) -> Result<Vec<u64>, BenchError> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let lo: u64 = a
            .trim()
            .parse()
            .map_err(|_| BenchError::Config(format!("invalid seed range '{s}'")))?;
        let hi: u64 = b
            .trim()
            .parse()
            .map_err(|_| BenchError::Config(format!("invalid seed range '{s}'")))?;
        if hi < lo {
            return Err(BenchError::Config(format!("empty seed range '{s}'")));
        }
        (lo..=hi).collect()
    } else {
        parse_list::<u64>(s, "seed")?
    };
    Ok(seeds.into_iter().map(|x| x + offset).collect())
}

fn parse_algos(s: &str) -> Result<Vec<Algo>, BenchError> {
    s.split(',').map(|p| Algo::parse(p.trim())).collect()
}

fn parse_scale(s: &str) -> Result<PixelScale, BenchError> {
    match s {
        "unit" => Ok(PixelScale::Unit),
        "raw" => Ok(PixelScale::Raw),
        other => Err(BenchError::Config(format!(
            "unknown pixel scale '{other}' (expected unit or raw)"
        ))),
    }
}

fn run(cli: Cli) -> Result<(), BenchError> {
    if cli.format != "csv" {
        return Err(BenchError::Config(format!(
            "unsupported format '{}' (only csv)",
            cli.format
        )));
    }
    let mode = if cli.exact_moments { MomentMode::Exact } else { MomentMode::Approx };
    let threads = cli.threads.max(1);

    match cli.cmd {
        Cmd::LayersSweep { layers, k, synth, model } => {
            let cfg = SweepConfig {
                d: synth.d,
                ks: vec![k],
                layers: parse_list(&layers, "layer")?,
                lambda: model.lambda,
                noise_sd: synth.noise_sd,
                spike_prob: synth.spike_prob,
                trunc: synth.trunc,
                n_train: synth.n_train,
                n_test: synth.n_test,
                algos: parse_algos(&model.algos)?,
                seeds: parse_seeds(&model.seeds, cli.seed_offset)?,
                epochs: model.epochs,
                step: model.step,
                mode,
                threads,
            };
            let records = run_sweep(Experiment::LayersSweep, &cfg)?;
            emit_csv(&records, &model.out, cli.db)
        }
        Cmd::KSweep { ks, layers, synth, model } => {
            let cfg = SweepConfig {
                d: synth.d,
                ks: parse_list(&ks, "observation size")?,
                layers: vec![layers],
                lambda: model.lambda,
                noise_sd: synth.noise_sd,
                spike_prob: synth.spike_prob,
                trunc: synth.trunc,
                n_train: synth.n_train,
                n_test: synth.n_test,
                algos: parse_algos(&model.algos)?,
                seeds: parse_seeds(&model.seeds, cli.seed_offset)?,
                epochs: model.epochs,
                step: model.step,
                mode,
                threads,
            };
            let records = run_sweep(Experiment::KSweep, &cfg)?;
            emit_csv(&records, &model.out, cli.db)
        }
        Cmd::Mnist { images, k, train, test, layers, mnist_scale, model } => {
            let pixels = load_mnist_idx(&images, parse_scale(&mnist_scale)?)?;
            let cfg = MnistConfig {
                k,
                n_train: train,
                n_test: test,
                layers,
                lambda: model.lambda,
                epochs: model.epochs,
                step: model.step,
                algos: parse_algos(&model.algos)?,
                seeds: parse_seeds(&model.seeds, cli.seed_offset)?,
                mode,
                threads,
            };
            let records = run_mnist(&cfg, &pixels)?;
            emit_csv(&records, &model.out, cli.db)
        }
        Cmd::Active {
            images,
            train,
            pool,
            test,
            rounds,
            repeats,
            strategy,
            k,
            layers,
            mnist_scale,
            model,
        } => {
            let pixels = load_mnist_idx(&images, parse_scale(&mnist_scale)?)?;
            let strategies: Result<Vec<Strategy>, _> =
                strategy.split(',').map(|p| Strategy::parse(p.trim())).collect();
            if repeats == 0 {
                return Err(BenchError::Config("need at least one repeat".into()));
            }
            let cfg = ActiveConfig {
                k,
                n_train: train,
                n_pool: pool,
                n_test: test,
                rounds,
                strategies: strategies?,
                layers,
                lambda: model.lambda,
                epochs: model.epochs,
                step: model.step,
                mode,
                threads,
                seeds: (0..repeats as u64).map(|s| s + cli.seed_offset).collect(),
            };
            let records = run_active(&cfg, &pixels)?;
            emit_csv(&records, &model.out, cli.db)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
