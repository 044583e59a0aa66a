//! The `adpo` command line.
//!
//! Exit codes: 0 on success, 1 on runtime failure (I/O, a diverged run, a
//! failed oracle certificate), 2 on invalid input.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, RunConfig};
use crate::data::{
    attach_scores, fit_score_models, generate_dataset, load_jsonl, save_jsonl, validate_dataset, DataError,
    Manifest, PreferencePair,
};
use crate::lm::{clone_frozen, AnyPolicy, Checkpoint};
use crate::losses::{LossConfig, LossError};
use crate::oracle::{self, Check, CheckOptions, EnumSpace, OracleError};
use crate::rng;
use crate::trainer::{eval_pairs, prefix_reward_profile, train, TrainError, TrainLog};

#[derive(Debug, Parser)]
#[command(name = "adpo", version, about = "Prefix-wise preference optimization lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set loss.method=dpo`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic preference dataset and its manifest.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy; writes logs and checkpoints under `output_dir`.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate a checkpoint on a dataset; prints one log row as CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Frozen reference. Defaults to `step_000000.json` next to the checkpoint.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Config supplying the loss section; library defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Prefix-wise implicit-reward variance and margin across checkpoints.
    Analyze {
        #[arg(long, num_args = 1.., required = true)]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Defaults to `step_000000.json` next to the first checkpoint.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = LossConfig::default().beta)]
        beta: f64,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Brute-force certificates of the Boltzmann identities.
    OracleCheck {
        /// `v,L`: content tokens and maximum length.
        #[arg(long, value_parser = parse_space)]
        space: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// all, boltzmann, optimality, decompose, reparam or theorem1.
        #[arg(long, default_value = "all")]
        check: String,
        /// Use the fixed-length space `[v]^L` instead of EOS-terminated sequences.
        #[arg(long)]
        fixed: bool,
        #[arg(long, default_value_t = CheckOptions::default().trials)]
        trials: usize,
        /// Random policies for the optimality check, spread across trials.
        #[arg(long, default_value_t = CheckOptions::default().policies)]
        policies: usize,
    },
}

fn parse_space(s: &str) -> Result<(usize, usize), String> {
    let (v, l) = s.split_once(',').ok_or_else(|| format!("expected v,L, got {s:?}"))?;
    let num = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((num(v)?, num(l)?))
}

/// Failure of one command, with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => Self::runtime(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(_) => Self::runtime(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::EmptyDataset | TrainError::Loss(_) => {
                Self::validation(e.to_string())
            }
            _ => Self::runtime(e.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::runtime(format!("{}: {e}", path.display()))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let ck = Checkpoint::load(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => CliError::validation(format!("{}: {e}", path.display())),
        _ => io_err(path, e),
    })?;
    ck.to_policy()
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    Ok(ck)
}

fn load_policy(path: &Path) -> CliResult<AnyPolicy> {
    Ok(load_checkpoint(path)?.to_policy().expect("checked on load"))
}

fn default_reference(checkpoint: &Path) -> PathBuf {
    checkpoint.with_file_name(checkpoint_name(0))
}

pub fn checkpoint_name(step: usize) -> String {
    format!("step_{step:06}.json")
}

/// Dataset named by the config: loaded from `data.path` or sampled.
pub fn materialize_dataset(cfg: &RunConfig) -> CliResult<(Vec<PreferencePair>, Option<Manifest>)> {
    let vocab = cfg.vocab();
    let data = match &cfg.data.path {
        Some(path) => {
            let data = load_jsonl(path).map_err(|e| match e {
                DataError::Io(io) => io_err(path, io),
                other => CliError::validation(format!("{}: {other}", path.display())),
            })?;
            validate_dataset(&data, &vocab)?;
            return Ok((data, None));
        }
        None => {
            let mut data = generate_dataset(&cfg.data.task, cfg.data.n_pairs, cfg.data.labeling)?;
            if cfg.wants_scores() {
                let (pos, neg) = fit_score_models(vocab, &data, cfg.data.score_smoothing)?;
                attach_scores(&mut data, &pos, &neg)?;
            }
            data
        }
    };
    let manifest = Manifest::new(&cfg.data.task, cfg.data.labeling, &data);
    Ok((data, Some(manifest)))
}

fn write_dataset(path: &Path, data: &[PreferencePair], manifest: &Manifest) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    save_jsonl(path, data)?;
    manifest.save(&Manifest::path_for(path))?;
    Ok(())
}

fn gen_data(args: &ConfigArgs, out: &Path) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    if cfg.data.path.is_some() {
        return Err(CliError::validation("gen-data samples a task; remove data.path"));
    }
    let (data, manifest) = materialize_dataset(&cfg)?;
    write_dataset(out, &data, &manifest.expect("sampled dataset has a manifest"))?;
    println!("wrote {} pairs to {}", data.len(), out.display());
    Ok(())
}

/// Files written by one training run.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub config: PathBuf,
    pub log: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub dataset: Option<PathBuf>,
}

/// Everything `adpo train` does, for callers that already hold a config.
pub fn run_training(cfg: &RunConfig) -> CliResult<(RunOutputs, TrainLog)> {
    let dir = &cfg.output_dir;
    let ck_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ck_dir).map_err(|e| io_err(&ck_dir, e))?;
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, cfg.to_json()).map_err(|e| io_err(&config_path, e))?;

    let (data, manifest) = materialize_dataset(cfg)?;
    let dataset = match manifest {
        Some(m) => {
            let path = dir.join("data.jsonl");
            write_dataset(&path, &data, &m)?;
            Some(path)
        }
        None => None,
    };

    let hash = cfg.hash();
    let init = AnyPolicy::init(cfg.vocab(), &cfg.model.spec(), &mut rng::child(cfg.seed, rng::INIT_STREAM))
        .map_err(|e| CliError::validation(e.to_string()))?;
    let reference = Checkpoint::from_policy(&init, 0, &hash);
    let outcome = train(&data, init, &cfg.loss, &cfg.train_config(), &hash)?;

    let mut checkpoints = Vec::new();
    for ck in std::iter::once(&reference).chain(&outcome.checkpoints) {
        let path = ck_dir.join(checkpoint_name(ck.step));
        ck.save(&path).map_err(|e| io_err(&path, e))?;
        checkpoints.push(path);
    }
    let log_path = dir.join("train_log.csv");
    std::fs::write(&log_path, outcome.log.to_csv()).map_err(|e| io_err(&log_path, e))?;
    Ok((
        RunOutputs {
            config: config_path,
            log: log_path,
            checkpoints,
            dataset,
        },
        outcome.log,
    ))
}

fn train_cmd(args: &ConfigArgs) -> CliResult<()> {
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    let (outputs, log) = run_training(&cfg)?;
    let last = log.last().expect("at least the initial row");
    println!(
        "step {} loss {:.6} accuracy {:.4} margin {:.4}; log {}",
        last.step,
        last.loss,
        last.accuracy,
        last.margin,
        outputs.log.display()
    );
    Ok(())
}

fn load_data_file(path: &Path, policy: &AnyPolicy) -> CliResult<Vec<PreferencePair>> {
    use crate::lm::Policy;
    let data = load_jsonl(path).map_err(|e| match e {
        DataError::Io(io) => io_err(path, io),
        other => CliError::validation(format!("{}: {other}", path.display())),
    })?;
    validate_dataset(&data, policy.vocab())?;
    Ok(data)
}

fn eval_cmd(
    checkpoint: &Path,
    data: &Path,
    reference: Option<&Path>,
    config: Option<&Path>,
    overrides: &[String],
) -> CliResult<()> {
    let loss = match config {
        Some(p) => RunConfig::load(p, overrides)?.loss,
        None if overrides.is_empty() => LossConfig::default(),
        None => return Err(CliError::validation("--set needs --config")),
    };
    let ck = load_checkpoint(checkpoint)?;
    let policy = ck.to_policy().expect("checked on load");
    let ref_path = reference.map(Path::to_path_buf).unwrap_or_else(|| default_reference(checkpoint));
    let reference = clone_frozen(&load_policy(&ref_path)?);
    let data = load_data_file(data, &policy)?;
    if loss.weighted && data.iter().any(|p| p.rejected_scores.is_none()) {
        return Err(CliError::validation("weighted loss needs rejected_scores on every pair"));
    }
    let ev = eval_pairs(&policy, &reference, &data, &loss).map_err(|e| match e {
        TrainError::Loss(LossError::InvalidConfig(_)) => CliError::validation(e.to_string()),
        other => CliError::from(other),
    })?;
    let log = TrainLog {
        rows: vec![crate::trainer::LogRow { step: ck.step, ..ev.row }],
    };
    print!("{}", log.to_csv());
    Ok(())
}

fn analyze_cmd(
    checkpoints: &[PathBuf],
    data: &Path,
    reference: Option<&Path>,
    beta: f64,
    bins: usize,
    out: Option<&Path>,
) -> CliResult<()> {
    if bins == 0 {
        return Err(CliError::validation("--bins must be at least 1"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(CliError::validation("--beta must be positive"));
    }
    let ref_path = reference.map(Path::to_path_buf).unwrap_or_else(|| default_reference(&checkpoints[0]));
    let reference = clone_frozen(&load_policy(&ref_path)?);
    let mut named = Vec::with_capacity(checkpoints.len());
    for path in checkpoints {
        let ck = load_checkpoint(path)?;
        named.push((format!("step_{}", ck.step), ck.to_policy().expect("checked on load")));
    }
    let data = load_data_file(data, &named[0].1)?;
    let profile = prefix_reward_profile(&named, &reference, &data, beta, bins)?;
    match out {
        Some(p) => std::fs::write(p, profile.to_csv()).map_err(|e| io_err(p, e))?,
        None => print!("{}", profile.to_csv()),
    }
    Ok(())
}

fn oracle_cmd(
    space: (usize, usize),
    seed: u64,
    check: &str,
    fixed: bool,
    trials: usize,
    policies: usize,
) -> CliResult<()> {
    let s = if fixed {
        EnumSpace::fixed(space.0, space.1)?
    } else {
        EnumSpace::new(space.0, space.1)?
    };
    let checks = Check::parse_selection(check)?;
    let opts = CheckOptions { trials, policies };
    let certs = checks
        .into_iter()
        .map(|c| oracle::run_check(c, &s, seed, opts))
        .collect::<Result<Vec<_>, _>>()?;
    println!("{}", serde_json::to_string_pretty(&certs).expect("certificates serialize"));
    if certs.iter().all(|c| c.pass) {
        Ok(())
    } else {
        let failed: Vec<&str> = certs.iter().filter(|c| !c.pass).map(|c| c.check.as_str()).collect();
        Err(CliError::runtime(format!("certificates failed: {}", failed.join(", "))))
    }
}

/// Run a parsed command.
pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { config, out } => gen_data(&config, &out),
        Command::Train { config } => train_cmd(&config),
        Command::Eval {
            checkpoint,
            data,
            reference,
            config,
            overrides,
        } => eval_cmd(&checkpoint, &data, reference.as_deref(), config.as_deref(), &overrides),
        Command::Analyze {
            checkpoints,
            data,
            reference,
            beta,
            bins,
            out,
        } => analyze_cmd(&checkpoints, &data, reference.as_deref(), beta, bins, out.as_deref()),
        Command::OracleCheck {
            space,
            seed,
            check,
            fixed,
            trials,
            policies,
        } => oracle_cmd(space, seed, &check, fixed, trials, policies),
    }
}

/// Parse `args` (program name first), run, and map the outcome to an exit code.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_parser() {
        assert_eq!(parse_space("3,4").unwrap(), (3, 4));
        assert!(parse_space("3").is_err());
        assert!(parse_space("a,4").is_err());
    }

    #[test]
    fn checkpoint_names_sort_by_step() {
        assert_eq!(checkpoint_name(200), "step_000200.json");
        assert!(checkpoint_name(90) < checkpoint_name(1000));
        assert_eq!(
            default_reference(Path::new("/r/checkpoints/step_002000.json")),
            Path::new("/r/checkpoints/step_000000.json")
        );
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
