//! Command-line flags and their resolution into [`Run`]s.

use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use privdiv_core::divergence::Method;
use privdiv_core::par::Execution;
use privdiv_core::strategy::StrategyKind;
use privdiv_core::synth::GeneratorConfig;
use privdiv_mpc::net::serve_dealer_with;
use privdiv_mpc::trace::trace_enabled;
use privdiv_mpc::{PartyId, RetryPolicy, SessionSpec};

use crate::error::{CliError, Result};
use crate::provenance::Provenance;
use crate::run::{
    list_sites, resolve_bounds, ConsistencyRun, Env, EvaluateRun, GenRun, Pair, Run, ScoreRun, SelectRun,
    Transport,
};

#[derive(Debug, Parser)]
#[command(name = "privdiv", version, about = "Private dataset divergence scoring and acquisition")]
pub struct Cli {
    /// Run independent work items on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-site grid with its ground-truth manifest.
    Gen(GenArgs),
    /// Score sources against targets, in plaintext or under MPC.
    Score(ScoreArgs),
    /// Serve correlated randomness to two-process secure sessions.
    Dealer(DealerArgs),
    /// Pick partner datasets with one or more strategies.
    Select(SelectArgs),
    /// Measure the downstream AUC change of selections.
    Evaluate(EvaluateArgs),
    /// Compare plaintext and secure scores per source.
    Consistency(ConsistencyArgs),
    /// Rerun a command from the provenance block of its output.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator config (TOML or JSON); unset fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rows per site.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Plain,
    Secure,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// KL_XY, KL_X, SecureKL_XY, SecureKL_X or KDE_KL.
    #[arg(long, default_value = "KL_XY")]
    pub method: Method,
    /// `secure` turns KL_XY / KL_X into their secure counterparts.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Source site id, comma list, or `all`.
    #[arg(long)]
    pub source: String,
    /// Target ids; defaults to every other site.
    #[arg(long, value_delimiter = ',')]
    pub targets: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Override the training epoch cap.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Secure only: open no training losses.
    #[arg(long)]
    pub strict: bool,
    /// Run as one party of a two-process session (0 owns the sources).
    #[arg(long, requires_all = ["peer", "dealer"])]
    pub role: Option<u8>,
    /// Party 0: address to listen on. Party 1: party 0's address.
    #[arg(long)]
    pub peer: Option<String>,
    /// Dealer address.
    #[arg(long)]
    pub dealer: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DealerArgs {
    #[arg(long)]
    pub listen: String,
    /// Master seed; per-session seeds derive from it. Keep it secret in a
    /// deployment. Reproducing an in-process run needs the parties' seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sessions to serve before exiting; 0 serves until killed.
    #[arg(long, default_value_t = 0)]
    pub sessions: usize,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Source site id, comma list, or `all`.
    #[arg(long)]
    pub source: String,
    /// blind, private, subset[:k], demographic[:attribute]; comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub strategy: Vec<String>,
    /// Attribute for a bare `demographic` strategy.
    #[arg(long)]
    pub attribute: Option<String>,
    /// Number of partners; comma separated for several.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    pub n: Vec<usize>,
    /// Subset size for a bare `subset` strategy; defaults to 1% of a site.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Score file ranking the private strategy.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Output files of `select`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub selections: Vec<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 1900)]
    pub source_rows: usize,
    #[arg(long, default_value_t = 1500)]
    pub target_rows: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for outcomes.csv and summary.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    #[arg(long)]
    pub plain: PathBuf,
    #[arg(long)]
    pub secure: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub q: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// An output file or directory carrying a provenance block.
    pub from: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fail unless the replay is byte-identical to this output.
    #[arg(long)]
    pub verify: Option<PathBuf>,
}

impl Cli {
    pub fn execute(self) -> Result<()> {
        let execution = if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        let env = Env {
            execution,
            ..Env::default()
        };
        match self.command {
            Command::Gen(a) => gen_run(&a)?.execute(&env, Some(&a.out)),
            Command::Score(a) => score(a, env),
            Command::Dealer(a) => dealer(&a),
            Command::Select(a) => select_run(&a)?.execute(&env, a.out.as_deref()),
            Command::Evaluate(a) => evaluate_run(&a).execute(&env, Some(&a.out)),
            Command::Consistency(a) => Run::Consistency(ConsistencyRun {
                plain: a.plain,
                secure: a.secure,
                q: a.q,
            })
            .execute(&env, a.out.as_deref()),
            Command::Replay(a) => replay(&a, &env),
        }
    }
}

fn gen_run(a: &GenArgs) -> Result<Run> {
    let mut cfg = match &a.config {
        Some(p) => read_config(p)?,
        None => GeneratorConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.master_seed = s;
    }
    if let Some(k) = a.k {
        cfg.samples_per_site = k;
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(Run::Gen(GenRun { generator: cfg }))
}

fn read_config(path: &Path) -> Result<GeneratorConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let bad = |e: String| CliError::Config(format!("{}: {e}", path.display()));
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text).map_err(|e| bad(e.to_string())),
        _ => toml::from_str(&text).map_err(|e| bad(e.to_string())),
    }
}

/// Expands `all` or a comma list against the sites present.
fn resolve_ids(spec: &str, all: &[String]) -> Result<Vec<String>> {
    if spec == "all" {
        return Ok(all.to_vec());
    }
    let ids: Vec<String> = spec.split(',').map(str::trim).map(String::from).collect();
    for id in &ids {
        if !all.contains(id) {
            return Err(CliError::Data(format!("unknown site `{id}`")));
        }
    }
    Ok(ids)
}

fn score(a: ScoreArgs, mut env: Env) -> Result<()> {
    let method = match a.mode {
        None => a.method,
        Some(Mode::Plain) => a.method.plaintext(),
        Some(Mode::Secure) if a.method.is_classifier() => {
            if a.method.uses_labels() {
                Method::SecureKlXy
            } else {
                Method::SecureKlX
            }
        }
        _ => return Err(CliError::Config(format!("{} has no secure variant", a.method))),
    };
    if let Some(role) = a.role {
        let role = PartyId::from_index(role as usize)
            .ok_or_else(|| CliError::Config(format!("--role must be 0 or 1, got {role}")))?;
        env.transport = Transport::Tcp {
            role,
            peer: a.peer.clone().unwrap_or_default(),
            dealer: a.dealer.clone().unwrap_or_default(),
            retry: RetryPolicy::default(),
        };
    }
    let local = matches!(env.transport, Transport::Local);
    let all = list_sites(&a.data)?;
    let sources = resolve_ids(&a.source, &all)?;
    let mut pairs = Vec::new();
    for s in &sources {
        let targets: Vec<String> = if a.targets.is_empty() {
            all.iter().filter(|t| *t != s).cloned().collect()
        } else {
            resolve_ids(&a.targets.join(","), &all)?
        };
        for t in targets.into_iter().filter(|t| t != s) {
            pairs.push(Pair {
                source: s.clone(),
                target: t,
            });
        }
    }
    if pairs.is_empty() {
        return Err(CliError::Config("no (source, target) pairs to score".into()));
    }
    let run = Run::Score(ScoreRun {
        bounds: resolve_bounds(&a.data, local)?,
        data: a.data,
        method,
        pairs,
        seed: a.seed,
        max_epochs: a.epochs,
        strict: a.strict,
    });
    if trace_enabled() {
        let stem = a.out.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "privdiv".into());
        let suffix = match &env.transport {
            Transport::Tcp { role, .. } => format!(".p{}.trace.jsonl", role.index()),
            Transport::Local => ".trace.jsonl".into(),
        };
        env.trace_path = Some(PathBuf::from(stem + &suffix));
    }
    run.execute(&env, a.out.as_deref())
}

fn dealer(a: &DealerArgs) -> Result<()> {
    let listener =
        TcpListener::bind(&a.listen).map_err(|e| CliError::Protocol(format!("bind {}: {e}", a.listen)))?;
    let seed = a.seed;
    let mut served = 0;
    while a.sessions == 0 || served < a.sessions {
        let stats = serve_dealer_with(&listener, &|session| SessionSpec::dealer_seed_for(seed, session))?;
        served += 1;
        info!("session {served} done, {} items", stats.items);
    }
    Ok(())
}

fn select_run(a: &SelectArgs) -> Result<Run> {
    let all = list_sites(&a.data)?;
    let sources = resolve_ids(&a.source, &all)?;
    let size = privdiv_core::io::read_site(&privdiv_core::io::site_path(&a.data, &all[0]))?.n();
    let mut strategies = Vec::new();
    for s in &a.strategy {
        let s = s.trim();
        let kind = match (s, &a.attribute, a.k) {
            ("demographic", Some(attr), _) => StrategyKind::Demographic {
                attribute: attr.clone(),
            },
            ("demographic", None, _) => {
                return Err(CliError::Config("demographic needs --attribute or demographic:<attr>".into()))
            }
            ("subset", _, Some(k)) => StrategyKind::Subset { k },
            _ => StrategyKind::parse(s, size)?,
        };
        strategies.push(kind);
    }
    Ok(Run::Select(SelectRun {
        bounds: resolve_bounds(&a.data, true)?,
        data: a.data.clone(),
        sources,
        strategies,
        ns: a.n.clone(),
        seed: a.seed,
        scores: a.scores.clone(),
        max_epochs: a.epochs,
        strict: a.strict,
    }))
}

fn evaluate_run(a: &EvaluateArgs) -> Run {
    Run::Evaluate(EvaluateRun {
        data: a.data.clone(),
        selections: a.selections.clone(),
        folds: a.folds,
        repeats: a.repeats,
        source_rows: a.source_rows,
        target_rows: a.target_rows,
        seed: a.seed,
    })
}

fn replay(a: &ReplayArgs, env: &Env) -> Result<()> {
    let prov = Provenance::load(&a.from)?;
    prov.verify()?;
    info!("replaying {} {}", prov.run.name(), prov.config_hash);
    prov.run.execute(env, Some(&a.out))?;
    if let Some(original) = &a.verify {
        compare_outputs(original, &a.out)?;
    }
    Ok(())
}

/// Byte comparison of two output files or directories.
pub fn compare_outputs(a: &Path, b: &Path) -> Result<()> {
    let list = |p: &Path| -> Result<Vec<PathBuf>> {
        if p.is_dir() {
            let mut v: Vec<PathBuf> = fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            v.sort();
            Ok(v)
        } else {
            Ok(vec![p.to_path_buf()])
        }
    };
    let (la, lb) = (list(a)?, list(b)?);
    let names = |v: &[PathBuf]| v.iter().map(|p| p.file_name().map(|n| n.to_owned())).collect::<Vec<_>>();
    if a.is_dir() && names(&la) != names(&lb) {
        return Err(CliError::Data(format!("{} and {} hold different files", a.display(), b.display())));
    }
    for (fa, fb) in la.iter().zip(&lb) {
        if fs::read(fa)? != fs::read(fb)? {
            return Err(CliError::Data(format!("{} differs from {}", fb.display(), fa.display())));
        }
    }
    Ok(())
}
