//! Command-line front end: full suite runs, a built-in demo, schedule
//! inspection, and one-shot response scoring.
//!
//! Exit codes: 0 success, 1 configuration error (bad flags, bad config
//! file), 2 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rcpa_core::{
    score_response, CurriculumConfig64, CurriculumState64, Error, RunConfig, ScenarioConfig,
    Strategy, Vocabulary,
};

#[derive(Parser)]
#[command(
    name = "rcpa",
    version,
    about = "Curriculum-scheduled policy optimization lab on tabular token policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full strategy x seed suite described by a JSON config file.
    Run {
        /// Path to the JSON run configuration.
        config: PathBuf,
    },
    /// Run the built-in default scenario across all strategies.
    Demo {
        /// Where metrics CSVs, datasets, and summary.json are written.
        #[arg(long, default_value = "demo_runs")]
        output_dir: PathBuf,
        /// Seeds to sweep.
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1])]
        seeds: Vec<u64>,
    },
    /// Print the threshold and forced-prefix schedules.
    Schedule {
        /// Total training steps S.
        #[arg(long)]
        steps: usize,
        /// Pacing parameter sigma.
        #[arg(long)]
        sigma: f64,
        /// Answer length |y| used for the prefix columns.
        #[arg(long, default_value_t = 6)]
        answer_len: usize,
    },
    /// Score a candidate token sequence against a reference answer.
    Score {
        /// Comma-separated candidate tokens, e.g. 17,19,21.
        #[arg(long)]
        candidate: String,
        /// Comma-separated reference tokens.
        #[arg(long)]
        reference: String,
        /// Pass threshold.
        #[arg(long, default_value_t = 0.8)]
        delta: f64,
        /// Semantic-axis weight.
        #[arg(long, default_value_t = 0.6)]
        alpha: f64,
        /// Factual-axis weight within the non-semantic share.
        #[arg(long, default_value_t = 0.7)]
        beta: f64,
        /// Vocabulary size; entity flags follow the default scenario
        /// convention (every 4th token id).
        #[arg(long, default_value_t = 32)]
        vocab_size: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Bad flags and unknown subcommands print usage and exit 1;
            // --help/--version print to stdout and exit 0.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            run_and_report(&cfg)
        }
        Command::Demo { output_dir, seeds } => {
            if seeds.is_empty() {
                return Err(Error::Config("demo needs at least one seed".into()));
            }
            let cfg = RunConfig {
                seeds,
                output_dir,
                strategies: Some(Strategy::ALL.to_vec()),
                ..RunConfig::default()
            };
            run_and_report(&cfg)
        }
        Command::Schedule { steps, sigma, answer_len } => print_schedule(steps, sigma, answer_len),
        Command::Score { candidate, reference, delta, alpha, beta, vocab_size } => {
            score_once(&candidate, &reference, delta, alpha, beta, vocab_size)
        }
    }
}

fn run_and_report(cfg: &RunConfig) -> Result<(), Error> {
    let summary = rcpa_core::run_suite(cfg)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    eprintln!("wrote metrics and summary under {}", cfg.output_dir.display());
    Ok(())
}

fn print_schedule(steps: usize, sigma: f64, answer_len: usize) -> Result<(), Error> {
    let config = CurriculumConfig64 {
        total_steps: steps,
        sigma,
        ..CurriculumConfig64::default()
    };
    config.validate()?;
    if answer_len < 1 {
        return Err(Error::Config("answer_len must be >= 1".into()));
    }
    let boundary = config.pre_alignment_steps();
    println!("total steps {steps}, sigma {sigma}: pre-alignment occupies {boundary} steps");
    println!("{:>8}  {:>8}  {:>10}  {:>15}", "step", "delta", "prefix_len", "prefix_fraction");
    let mut rows: Vec<usize> = (0..20).map(|i| i * steps / 20).collect();
    rows.extend([boundary.saturating_sub(1), boundary, steps - 1]);
    rows.sort_unstable();
    rows.dedup();
    for s in rows.into_iter().filter(|&s| s < steps) {
        let state = CurriculumState64::new(s, config.clone());
        let k = state.prefix_length(answer_len);
        println!(
            "{:>8}  {:>8.4}  {:>10}  {:>15.4}",
            s,
            state.threshold(),
            k,
            k as f64 / answer_len as f64
        );
    }
    Ok(())
}

fn parse_tokens(raw: &str, vocab_size: usize, name: &str) -> Result<Vec<usize>, Error> {
    let mut tokens = Vec::new();
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let t: usize = part
            .parse()
            .map_err(|e| Error::Config(format!("{name}: bad token {part:?}: {e}")))?;
        if t >= vocab_size {
            return Err(Error::Config(format!(
                "{name}: token {t} out of range for vocab size {vocab_size}"
            )));
        }
        tokens.push(t);
    }
    Ok(tokens)
}

fn score_once(
    candidate: &str,
    reference: &str,
    delta: f64,
    alpha: f64,
    beta: f64,
    vocab_size: usize,
) -> Result<(), Error> {
    let scenario = ScenarioConfig { vocab_size, ..ScenarioConfig::default() };
    let vocab: Vocabulary = scenario.vocabulary()?;
    let spec = rcpa_core::RewardSpec64 { alpha, beta, ..Default::default() };
    spec.validate()?;
    let o = parse_tokens(candidate, vocab_size, "candidate")?;
    let y = parse_tokens(reference, vocab_size, "reference")?;
    let (similarity, reward) = score_response(&o, &y, &spec, delta, &vocab);
    println!("similarity {similarity:.6}");
    println!("reward {reward:+.0}");
    Ok(())
}
