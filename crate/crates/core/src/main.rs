use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eunn::bench::{run_bench, BenchConfig};
use eunn::dense::max_abs_diff;
use eunn::experiment::{parse_config_text, run_experiment, ExperimentSpec};
use eunn::formats::{parse_matrix, parse_program, write_matrix, write_program};
use eunn::optim::TrainOutcome;
use eunn::unitary::{decompose_unitary, reconstruct, MeshStyle, CONSTRUCTION_TOL};
use eunn::verify::{format_table, run_verify, VerifyOptions};
use eunn::{EunnError, Result};

/// Efficient unitary recurrent networks: training, decomposition and checks.
#[derive(Parser)]
#[command(name = "eunn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes metrics.csv, config.resolved and checkpoint.txt.
    Train(TrainArgs),
    /// Decompose a unitary matrix file into an angle program.
    Decompose {
        input: PathBuf,
        /// Program file to write (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild the matrix of an angle program.
    Reconstruct {
        input: PathBuf,
        /// Matrix file to write (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time apply + backward against a dense reference; prints CSV.
    Bench(BenchArgs),
    /// Run the invariant suite; exit status 3 if any check fails.
    Verify {
        /// Corrupt one rotation kernel to exercise the failure path.
        #[arg(long)]
        inject_fault: bool,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// `key = value` config file; flags override its settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// copy | mnist
    #[arg(long)]
    task: Option<String>,
    /// eurnn-tunable | eurnn-fft | vanilla
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    n_hidden: Option<String>,
    #[arg(long)]
    capacity: Option<String>,
    #[arg(long)]
    spectral_radius: Option<String>,
    #[arg(long)]
    n_symbols: Option<String>,
    #[arg(long)]
    m_len: Option<String>,
    #[arg(long)]
    t_delay: Option<String>,
    /// MNIST directory; defaults to $EUNN_DATA_DIR, then data/mnist.
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    train_size: Option<String>,
    #[arg(long)]
    val_size: Option<String>,
    #[arg(long)]
    downsample: Option<String>,
    #[arg(long)]
    perm_seed: Option<String>,
    #[arg(long)]
    iters: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    eval_interval: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    decay: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    /// Global gradient-norm clip, or `none`.
    #[arg(long)]
    clip_norm: Option<String>,
    /// Record wall-clock milliseconds in metrics.csv.
    #[arg(long)]
    wall_clock: bool,
}

impl TrainArgs {
    fn flag_pairs(&self) -> Vec<(String, String)> {
        let flags: [(&str, &Option<String>); 22] = [
            ("task", &self.task),
            ("model", &self.model),
            ("n_hidden", &self.n_hidden),
            ("capacity", &self.capacity),
            ("spectral_radius", &self.spectral_radius),
            ("n_symbols", &self.n_symbols),
            ("m_len", &self.m_len),
            ("t_delay", &self.t_delay),
            ("data_dir", &self.data_dir),
            ("train_size", &self.train_size),
            ("val_size", &self.val_size),
            ("downsample", &self.downsample),
            ("perm_seed", &self.perm_seed),
            ("iters", &self.iters),
            ("batch_size", &self.batch_size),
            ("eval_interval", &self.eval_interval),
            ("seed", &self.seed),
            ("lr", &self.lr),
            ("decay", &self.decay),
            ("momentum", &self.momentum),
            ("epsilon", &self.epsilon),
            ("clip_norm", &self.clip_norm),
        ];
        let mut out: Vec<(String, String)> = flags
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        if self.wall_clock {
            out.push(("wall_clock".into(), "true".into()));
        }
        out
    }
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated dimensions.
    #[arg(long, value_delimiter = ',', default_values_t = [128usize, 256, 512, 1024])]
    dims: Vec<usize>,
    /// Comma-separated tunable capacities.
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 8])]
    capacities: Vec<usize>,
    /// Comma-separated styles: tunable, fft.
    #[arg(long, value_delimiter = ',', default_values_t = [String::from("tunable"), String::from("fft")])]
    styles: Vec<String>,
    #[arg(long, default_value_t = 15)]
    samples: usize,
    /// Minimum duration of one timing sample in microseconds.
    #[arg(long, default_value_t = 2000.0)]
    min_sample_us: f64,
    /// Skip the dense reference column.
    #[arg(long)]
    no_dense: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV file to write (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| EunnError::Config(format!("cannot read {}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => Ok(fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut pairs = match &args.config {
        Some(p) => parse_config_text(&read(p)?, &p.display().to_string())?,
        None => Vec::new(),
    };
    pairs.extend(args.flag_pairs());
    let spec = ExperimentSpec::resolve(&pairs)?;
    let summary = run_experiment(&spec, &args.out)?;
    let last = summary.records.last();
    eprintln!(
        "{} iterations, final loss {}, {} {}",
        summary.records.len(),
        last.map_or("-".into(), |r| r.loss.to_string()),
        summary.val_metric_name,
        summary.last_val().map_or("-".into(), |v| v.to_string())
    );
    if let Some(b) = spec.baseline() {
        eprintln!("memoryless baseline {b}");
    }
    match summary.outcome {
        TrainOutcome::Diverged { iter, detail } => Err(EunnError::Diverged { iter, detail }),
        _ => Ok(()),
    }
}

fn cmd_decompose(input: &Path, out: Option<&Path>) -> Result<()> {
    let m = parse_matrix(&read(input)?, &input.display().to_string())?;
    let program = decompose_unitary(&m)?;
    let err = max_abs_diff(&reconstruct(&program)?, &m);
    emit(out, &write_program(&program))?;
    eprintln!(
        "{} rotations, round-trip max entry error {err:.3e}",
        program.rotations.len()
    );
    if !(err < CONSTRUCTION_TOL) {
        return Err(EunnError::Invariant(format!(
            "round-trip error {err:.3e} exceeds {CONSTRUCTION_TOL:e}"
        )));
    }
    Ok(())
}

fn cmd_reconstruct(input: &Path, out: Option<&Path>) -> Result<()> {
    let program = parse_program(&read(input)?, &input.display().to_string())?;
    emit(out, &write_matrix(&reconstruct(&program)?))
}

fn cmd_bench(args: &BenchArgs) -> Result<()> {
    let styles = args
        .styles
        .iter()
        .map(|s| s.parse::<MeshStyle>())
        .collect::<Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        dims: args.dims.clone(),
        capacities: args.capacities.clone(),
        styles,
        samples: args.samples,
        min_sample_us: args.min_sample_us,
        dense: !args.no_dense,
        seed: args.seed,
    };
    emit(args.out.as_deref(), &run_bench(&cfg)?.to_csv())
}

fn cmd_verify(inject_fault: bool) -> Result<()> {
    let results = run_verify(&VerifyOptions { inject_fault });
    print!("{}", format_table(&results));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(EunnError::Invariant(failed.join(", ")))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Decompose { input, out } => cmd_decompose(input, out.as_deref()),
        Command::Reconstruct { input, out } => cmd_reconstruct(input, out.as_deref()),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify { inject_fault } => cmd_verify(*inject_fault),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
