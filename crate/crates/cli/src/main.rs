use clap::{Parser, Subcommand};
use polo_core::hard_instances::{build, HardInstanceParams};
use polo_core::harness::{run_experiment, run_sweep, sweep_csv, ExperimentConfig};
use polo_core::mdp::LowRankMdp;
use polo_core::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_INVALID: u8 = 3;

#[derive(Parser)]
#[command(name = "polo", version, about = "Seeded regret experiments for POLO on finite low-rank MDPs")]
struct Cli {
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) pair of a config.
    Run { config: PathBuf },
    /// Check the low-rank regularity conditions of an MDP file or of a
    /// hard instance given as `hard:dim=8,n_states=12,n_actions=5,gamma=0.9`
    /// (optionally `target=i:a`, `epsilon=e`, `k_episodes=K`).
    Validate { target: String },
    /// Re-run a config once per value of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parse(_) => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => cmd_run(config, cli.out.as_deref(), cli.jobs),
        Command::Validate { target } => cmd_validate(target),
        Command::Sweep { config, param, values } => cmd_sweep(config, param, values, cli.out.as_deref(), cli.jobs),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn out_dir(cli_out: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("results"))
}

fn cmd_run(config: &Path, out: Option<&Path>, jobs: Option<usize>) -> Result<u8, Failure> {
    let cfg = ExperimentConfig::load(config)?;
    let dir = out_dir(out, &cfg);
    let output = run_experiment(&cfg, jobs)?;
    output.write(&dir)?;
    print!("{}", output.summary_csv());
    eprintln!("wrote {} runs to {}", output.records.len(), dir.display());
    Ok(0)
}

fn cmd_sweep(config: &Path, param: &str, values: &[f64], out: Option<&Path>, jobs: Option<usize>) -> Result<u8, Failure> {
    if values.is_empty() {
        return Err(Failure::config("--values needs at least one value"));
    }
    let cfg = ExperimentConfig::load(config)?;
    let dir = out_dir(out, &cfg);
    let (rows, outputs) = run_sweep(&cfg, param, values, jobs)?;
    for (v, o) in values.iter().zip(&outputs) {
        o.write(&dir.join(format!("{param}={v}")))?;
    }
    let csv = sweep_csv(param, &rows);
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    std::fs::write(dir.join("sweep_summary.csv"), &csv).map_err(Error::from)?;
    print!("{csv}");
    Ok(0)
}

fn parse_hard_params(spec: &str) -> Result<HardInstanceParams, Failure> {
    let body = spec.strip_prefix("hard:").unwrap_or(spec);
    let (mut dim, mut n_states, mut n_actions, mut gamma) = (None, None, None, None);
    let mut target = None;
    let mut epsilon = 0.0;
    let mut k_episodes = None;
    for item in body.split(',').filter(|s| !s.is_empty()) {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("expected key=value, got '{item}'")))?;
        let bad = || Failure::config(format!("bad value for {key}: '{value}'"));
        match key.trim() {
            "dim" | "d" => dim = Some(value.parse().map_err(|_| bad())?),
            "n_states" | "S" => n_states = Some(value.parse().map_err(|_| bad())?),
            "n_actions" | "A" => n_actions = Some(value.parse().map_err(|_| bad())?),
            "gamma" => gamma = Some(value.parse().map_err(|_| bad())?),
            "epsilon" => epsilon = value.parse().map_err(|_| bad())?,
            "k_episodes" | "K" => k_episodes = Some(value.parse().map_err(|_| bad())?),
            "target" => {
                let (i, a) = value.split_once(':').ok_or_else(|| bad())?;
                target = Some((i.parse().map_err(|_| bad())?, a.parse().map_err(|_| bad())?));
            }
            other => return Err(Failure::config(format!("unknown key '{other}'"))),
        }
    }
    fn need<T>(v: Option<T>, key: &str) -> Result<T, Failure> {
        v.ok_or_else(|| Failure::config(format!("missing {key}")))
    }
    let mut p = HardInstanceParams::reference(
        need(dim, "dim")?,
        need(n_states, "n_states")?,
        need(n_actions, "n_actions")?,
        need(gamma, "gamma")?,
    );
    p.k_episodes = k_episodes;
    if let Some((i, a)) = target {
        p = p.with_target(i, a, epsilon);
    }
    Ok(p)
}

fn cmd_validate(target: &str) -> Result<u8, Failure> {
    let path = Path::new(target);
    let mdp: LowRankMdp = if path.exists() {
        LowRankMdp::load(path).map_err(|e| Failure::config(e.to_string()))?
    } else if target.contains('=') {
        let params = parse_hard_params(target)?;
        build(params).map_err(|e| Failure::config(e.to_string()))?.mdp
    } else {
        return Err(Failure::config(format!("{target}: no such file")));
    };
    let report = mdp.validate();
    print!("{report}");
    if report.any_bound_only() {
        eprintln!("warning: bound-only check (S > 20): the reported value is an upper bound, not the exact supremum");
    }
    if report.all_passed() {
        println!("all checks passed");
        Ok(0)
    } else {
        Ok(EXIT_INVALID)
    }
}
