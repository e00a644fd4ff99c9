//! Fully resolved command parameters and their execution.
//!
//! A [`Run`] holds every value that can change a command's output and nothing
//! that cannot (output paths, party role, addresses, thread count). It is the
//! payload of the provenance block, so replaying a run means deserializing it
//! and calling [`Run::execute`] again.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::BufWriter;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use privdiv_core::data::{FeatureBounds, SiteDataset};
use privdiv_core::divergence::{
    kde_kl, kl_secure_local, kl_x_plain, kl_xy_plain, score_as_party, session_id, DivergenceScore,
    KdeConfig, Method, SecureOptions,
};
use privdiv_core::eval::report::{summarize, write_outcomes_csv, write_summary_csv};
use privdiv_core::eval::{consistency_report, delta_eval, ConsistencyReport, DeltaConfig, StrategyOutcome};
use privdiv_core::io::{read_json, read_manifest, read_scores, read_site, save_sites, site_path, write_json, MANIFEST_FILE};
use privdiv_core::par::Execution;
use privdiv_core::plain_ml::SgdHyperparams;
use privdiv_core::strategy::{
    demographic_distance, rank_ascending, select_blind, ScoringContext, Selection, StrategyKind, StrategySpec,
};
use privdiv_core::synth::{generate_sites_with, GeneratorConfig};
use privdiv_mpc::net::{tcp_session, PeerLink};
use privdiv_mpc::{PartyId, RetryPolicy, SessionSpec, Trace, TranscriptDigest};

use crate::error::{CliError, Result};
use crate::provenance::{Provenance, PROVENANCE_FILE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Run {
    Gen(GenRun),
    Score(ScoreRun),
    Select(SelectRun),
    Evaluate(EvaluateRun),
    Consistency(ConsistencyRun),
}

/// How a secure score reaches the other party.
#[derive(Debug, Clone)]
pub enum Transport {
    /// Both parties and the dealer inside this process.
    Local,
    Tcp {
        role: PartyId,
        /// Listen address for party 0, peer address for party 1.
        peer: String,
        dealer: String,
        retry: RetryPolicy,
    },
}

/// Settings that change how a run executes but never what it outputs.
#[derive(Debug, Clone)]
pub struct Env {
    pub execution: Execution,
    pub transport: Transport,
    /// Protocol traces go here as JSON lines when set.
    pub trace_path: Option<PathBuf>,
}

impl Default for Env {
    fn default() -> Env {
        Env {
            execution: Execution::default(),
            transport: Transport::Local,
            trace_path: None,
        }
    }
}

impl Run {
    pub fn name(&self) -> &'static str {
        match self {
            Run::Gen(_) => "gen",
            Run::Score(_) => "score",
            Run::Select(_) => "select",
            Run::Evaluate(_) => "evaluate",
            Run::Consistency(_) => "consistency",
        }
    }

    pub fn seeds(&self) -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        match self {
            Run::Gen(r) => {
                m.insert("master_seed".into(), r.generator.master_seed);
            }
            Run::Score(r) => {
                m.insert("seed".into(), r.seed);
            }
            Run::Select(r) => {
                m.insert("seed".into(), r.seed);
            }
            Run::Evaluate(r) => {
                m.insert("seed".into(), r.seed);
            }
            Run::Consistency(_) => {}
        }
        m
    }

    /// Input files every party may see; their hashes go into the provenance.
    /// Site files are private to their owners and are not listed.
    pub fn public_inputs(&self) -> Vec<PathBuf> {
        match self {
            Run::Gen(_) | Run::Score(_) => vec![],
            Run::Select(r) => r.scores.iter().cloned().collect(),
            Run::Evaluate(r) => r.selections.clone(),
            Run::Consistency(r) => vec![r.plain.clone(), r.secure.clone()],
        }
    }

    /// Whether the output is a directory rather than a JSON file.
    pub fn writes_directory(&self) -> bool {
        matches!(self, Run::Gen(_) | Run::Evaluate(_))
    }

    /// Executes the run and writes its output to `out` (stdout when `None`
    /// and the output is a single JSON document).
    pub fn execute(&self, env: &Env, out: Option<&Path>) -> Result<()> {
        let prov = Provenance::new(self)?;
        info!("{} run {}", self.name(), prov.config_hash);
        if self.writes_directory() {
            let dir = out.ok_or_else(|| CliError::Config(format!("{} needs --out DIR", self.name())))?;
            fs::create_dir_all(dir)?;
            match self {
                Run::Gen(r) => r.execute(env, dir)?,
                Run::Evaluate(r) => r.execute(env, dir)?,
                _ => unreachable!(),
            }
            write_json(&dir.join(PROVENANCE_FILE), &prov)?;
            return Ok(());
        }
        let doc = match self {
            Run::Score(r) => {
                let (body, traces) = r.execute(env)?;
                if let Some(path) = &env.trace_path {
                    write_traces(path, &traces)?;
                }
                envelope(&prov, body)?
            }
            Run::Select(r) => envelope(&prov, r.execute(env)?)?,
            Run::Consistency(r) => envelope(&prov, r.execute()?)?,
            _ => unreachable!(),
        };
        match out {
            Some(p) => write_json(p, &doc)?,
            None => println!("{}", serde_json::to_string_pretty(&doc)?),
        }
        Ok(())
    }
}

/// `{"provenance": ..., <body fields>}` with the provenance first.
fn envelope<T: Serialize>(prov: &Provenance, body: T) -> Result<serde_json::Value> {
    let mut map = serde_json::Map::new();
    map.insert("provenance".into(), serde_json::to_value(prov)?);
    match serde_json::to_value(body)? {
        serde_json::Value::Object(o) => map.extend(o),
        other => {
            map.insert("result".into(), other);
        }
    }
    Ok(serde_json::Value::Object(map))
}

fn write_traces(path: &Path, traces: &[Trace]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in traces {
        t.write_jsonl(&mut w)?;
    }
    Ok(())
}

/// Site ids in `dir`: the manifest's order, or sorted CSV file stems.
pub fn list_sites(dir: &Path) -> Result<Vec<String>> {
    if dir.join(MANIFEST_FILE).exists() {
        return Ok(read_manifest(dir)?.sites.into_iter().map(|s| s.site_id).collect());
    }
    let entries = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(CliError::Data(format!("no site files in {}", dir.display())));
    }
    Ok(ids)
}

/// Public clipping bounds: the manifest's, else pooled over every site file.
/// Pooling reads all sites, so it is only available to a single operator.
pub fn resolve_bounds(dir: &Path, may_pool: bool) -> Result<FeatureBounds> {
    if dir.join(MANIFEST_FILE).exists() {
        return Ok(read_manifest(dir)?.bounds);
    }
    if !may_pool {
        return Err(CliError::Config(format!(
            "{} has no {MANIFEST_FILE}; two-process scoring needs public bounds",
            dir.display()
        )));
    }
    let sites = load(dir, &list_sites(dir)?)?;
    Ok(FeatureBounds::from_sites(&sites.values().collect::<Vec<_>>())?)
}

fn load(dir: &Path, ids: &[String]) -> Result<BTreeMap<String, SiteDataset>> {
    let mut out = BTreeMap::new();
    for id in ids {
        if !out.contains_key(id) {
            let path = site_path(dir, id);
            if !path.exists() {
                return Err(CliError::Data(format!("no data for site `{id}` in {}", dir.display())));
            }
            out.insert(id.clone(), read_site(&path)?);
        }
    }
    Ok(out)
}

fn hp_with(mut hp: SgdHyperparams, max_epochs: Option<usize>) -> SgdHyperparams {
    if let Some(e) = max_epochs {
        hp.max_epochs = e;
    }
    hp
}

// ---------------------------------------------------------------- gen

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRun {
    pub generator: GeneratorConfig,
}

impl GenRun {
    fn execute(&self, env: &Env, dir: &Path) -> Result<()> {
        let (sites, manifest) = generate_sites_with(&self.generator, env.execution)?;
        save_sites(&sites, dir)?;
        write_json(&dir.join(MANIFEST_FILE), &manifest)?;
        info!("wrote {} sites to {}", sites.len(), dir.display());
        Ok(())
    }
}

// ---------------------------------------------------------------- score

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRun {
    pub data: PathBuf,
    pub method: Method,
    pub pairs: Vec<Pair>,
    pub bounds: FeatureBounds,
    pub seed: u64,
    pub max_epochs: Option<usize>,
    /// Secure only: open no training losses.
    pub strict: bool,
}

/// Protocol facts both parties hold identically after a secure score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub source: String,
    pub target: String,
    pub session: u32,
    pub rounds: u64,
    pub transcript: TranscriptDigest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreBody {
    pub scores: Vec<DivergenceScore>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sessions: Vec<SessionSummary>,
}

impl ScoreRun {
    fn secure_options(&self) -> SecureOptions {
        let mut opts = SecureOptions::new(self.method, self.seed);
        opts.hp = hp_with(opts.hp, self.max_epochs);
        opts.strict = self.strict;
        opts
    }

    fn execute(&self, env: &Env) -> Result<(ScoreBody, Vec<Trace>)> {
        if !self.method.is_secure() {
            if !matches!(env.transport, Transport::Local) {
                return Err(CliError::Config(format!("{} runs in plain mode only", self.method)));
            }
            return Ok((self.plain(env)?, vec![]));
        }
        match &env.transport {
            Transport::Local => self.secure_local(env),
            Transport::Tcp {
                role,
                peer,
                dealer,
                retry,
            } => self.secure_tcp(*role, peer, dealer, *retry),
        }
    }

    fn ids(&self, pick: impl Fn(&Pair) -> &String) -> Vec<String> {
        self.pairs.iter().map(|p| pick(p).clone()).collect()
    }

    fn plain(&self, env: &Env) -> Result<ScoreBody> {
        let mut ids = self.ids(|p| &p.source);
        ids.extend(self.ids(|p| &p.target));
        let sites = load(&self.data, &ids)?;
        let hp = hp_with(SgdHyperparams::plaintext(), self.max_epochs);
        let kde = KdeConfig {
            seed: self.seed,
            execution: Execution::Sequential,
            ..KdeConfig::default()
        };
        let scores = env.execution.try_map(&self.pairs, |p| {
            let (s, t) = (&sites[&p.source], &sites[&p.target]);
            match self.method {
                Method::KlXy => kl_xy_plain(s, t, &self.bounds, &hp, self.seed),
                Method::KlX => kl_x_plain(s, t, &self.bounds, &hp, self.seed),
                Method::KdeKl => kde_kl(s, t, &kde),
                m => unreachable!("{m} is secure"),
            }
        })?;
        Ok(ScoreBody {
            scores,
            sessions: vec![],
        })
    }

    fn secure_local(&self, env: &Env) -> Result<(ScoreBody, Vec<Trace>)> {
        let mut ids = self.ids(|p| &p.source);
        ids.extend(self.ids(|p| &p.target));
        let sites = load(&self.data, &ids)?;
        let opts = self.secure_options();
        let runs = env.execution.try_map(&self.pairs, |p| {
            kl_secure_local(&sites[&p.source], &sites[&p.target], &self.bounds, &opts)
        })?;
        let mut body = ScoreBody {
            scores: vec![],
            sessions: vec![],
        };
        let mut traces = vec![];
        for (p, run) in self.pairs.iter().zip(runs) {
            if run.report0.transcript != run.report1.transcript {
                return Err(CliError::Protocol(format!(
                    "transcripts differ for {} -> {}",
                    p.source, p.target
                )));
            }
            body.scores.push(run.score);
            body.sessions.push(SessionSummary {
                source: p.source.clone(),
                target: p.target.clone(),
                session: run.report0.session,
                rounds: run.report0.rounds,
                transcript: run.report0.transcript,
            });
            traces.push(run.report0.trace);
            traces.push(run.report1.trace);
        }
        Ok((body, traces))
    }

    /// One party of the two-process deployment. Pairs run one after another,
    /// each in its own session; party 0 owns the sources, party 1 the targets.
    fn secure_tcp(
        &self,
        role: PartyId,
        peer: &str,
        dealer: &str,
        retry: RetryPolicy,
    ) -> Result<(ScoreBody, Vec<Trace>)> {
        let own_ids = match role {
            PartyId::P0 => self.ids(|p| &p.source),
            PartyId::P1 => self.ids(|p| &p.target),
        };
        let sites = load(&self.data, &own_ids)?;
        let listener = match role {
            PartyId::P0 => Some(
                TcpListener::bind(peer).map_err(|e| CliError::Protocol(format!("bind {peer}: {e}")))?,
            ),
            PartyId::P1 => None,
        };
        let opts = self.secure_options();
        let mut body = ScoreBody {
            scores: vec![],
            sessions: vec![],
        };
        let mut traces = vec![];
        for (p, own) in self.pairs.iter().zip(&own_ids) {
            let sid = session_id(&p.source, &p.target, self.seed);
            let spec = SessionSpec::from_seed(sid, self.seed);
            let link = match &listener {
                Some(l) => PeerLink::Listen(l),
                None => PeerLink::Connect(peer),
            };
            let mut s = tcp_session(role, &spec, link, dealer, retry)?;
            let scored = score_as_party(&mut s, &sites[own], &self.bounds, &opts)?;
            let report = s.finish()?;
            info!("{} -> {}: {} in {} rounds", p.source, p.target, scored.value, report.rounds);
            body.scores.push(scored.into_score(&p.source, &p.target, &opts));
            body.sessions.push(SessionSummary {
                source: p.source.clone(),
                target: p.target.clone(),
                session: report.session,
                rounds: report.rounds,
                transcript: report.transcript,
            });
            traces.push(report.trace);
        }
        Ok((body, traces))
    }
}

// ---------------------------------------------------------------- select

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectRun {
    pub data: PathBuf,
    pub bounds: FeatureBounds,
    pub sources: Vec<String>,
    pub strategies: Vec<StrategyKind>,
    pub ns: Vec<usize>,
    pub seed: u64,
    /// Precomputed scores ranking the private strategy instead of scoring here.
    pub scores: Option<PathBuf>,
    pub max_epochs: Option<usize>,
    pub strict: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectBody {
    pub selections: Vec<Selection>,
}

impl SelectRun {
    fn execute(&self, env: &Env) -> Result<SelectBody> {
        let all = list_sites(&self.data)?;
        let sites = load(&self.data, &all)?;
        let file_scores = match &self.scores {
            Some(p) => Some(read_scores(p)?),
            None => None,
        };
        let mut ctx = ScoringContext::new(self.bounds.clone());
        ctx.plain_hp = hp_with(ctx.plain_hp, self.max_epochs);
        ctx.secure_hp = hp_with(ctx.secure_hp, self.max_epochs);
        ctx.strict = self.strict;
        ctx.execution = env.execution;

        let mut selections = Vec::new();
        for source in &self.sources {
            let src = sites
                .get(source)
                .ok_or_else(|| CliError::Data(format!("no data for site `{source}`")))?;
            let cands: Vec<&SiteDataset> = all.iter().filter(|id| *id != source).map(|id| &sites[id]).collect();
            let ids: Vec<String> = cands.iter().map(|c| c.site_id.clone()).collect();
            let size = cands.iter().map(|c| c.n()).min().unwrap_or(0);
            for kind in &self.strategies {
                for &n in &self.ns {
                    StrategySpec {
                        kind: kind.clone(),
                        n,
                        seed: self.seed,
                    }
                    .validate(ids.len(), size)?;
                }
                let (method, k, values) = match kind {
                    StrategyKind::Blind => (None, None, vec![]),
                    StrategyKind::Demographic { attribute } => {
                        let mut v = Vec::with_capacity(cands.len());
                        for c in &cands {
                            v.push((c.site_id.clone(), demographic_distance(src, c, attribute)?));
                        }
                        (Some(format!("demographic_l2:{attribute}")), None, v)
                    }
                    StrategyKind::Subset { k } => {
                        let s = ctx.subset_scores(src, &cands, *k, self.seed)?;
                        (Some(Method::KlXy.to_string()), Some(*k), pairs_of(&s))
                    }
                    StrategyKind::Private => match &file_scores {
                        Some(all_scores) => {
                            let (method, v) = scores_for(all_scores, source, &ids)?;
                            (Some(method), Some(size), v)
                        }
                        None => {
                            let s = ctx.private_scores(src, &cands, self.seed)?;
                            (Some(Method::SecureKlXy.to_string()), Some(size), pairs_of(&s))
                        }
                    },
                };
                for &n in &self.ns {
                    let selected = match kind {
                        StrategyKind::Blind => select_blind(n, &ids, self.seed)?,
                        _ => rank_ascending(&values, &ids, n)?,
                    };
                    selections.push(Selection {
                        source: source.clone(),
                        strategy: StrategySpec {
                            kind: kind.clone(),
                            n,
                            seed: self.seed,
                        },
                        selected,
                        leakage: kind.leakage(),
                        method: method.clone(),
                        k,
                        values: values.clone(),
                    });
                }
            }
        }
        Ok(SelectBody { selections })
    }
}

fn pairs_of(scores: &[DivergenceScore]) -> Vec<(String, f64)> {
    scores.iter().map(|s| (s.target.clone(), s.value)).collect()
}

/// Scores of `source` against every candidate, from a score file.
fn scores_for(all: &[DivergenceScore], source: &str, ids: &[String]) -> Result<(String, Vec<(String, f64)>)> {
    let mine: Vec<&DivergenceScore> = all.iter().filter(|s| s.source == source).collect();
    let mut v = Vec::with_capacity(ids.len());
    for id in ids {
        let s = mine
            .iter()
            .find(|s| &s.target == id)
            .ok_or_else(|| CliError::Data(format!("no score for candidate `{id}` of source `{source}`")))?;
        v.push((id.clone(), s.value));
    }
    let method = mine.first().map(|s| s.method.to_string()).unwrap_or_default();
    Ok((method, v))
}

// ---------------------------------------------------------------- evaluate

pub const OUTCOMES_FILE: &str = "outcomes.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRun {
    pub data: PathBuf,
    pub selections: Vec<PathBuf>,
    pub folds: usize,
    pub repeats: usize,
    pub source_rows: usize,
    pub target_rows: usize,
    pub seed: u64,
}

impl EvaluateRun {
    pub fn delta_config(&self, execution: Execution) -> DeltaConfig {
        DeltaConfig {
            folds: self.folds,
            repeats: self.repeats,
            source_rows: self.source_rows,
            target_rows: self.target_rows,
            execution,
            ..DeltaConfig::default()
        }
    }

    fn execute(&self, env: &Env, dir: &Path) -> Result<()> {
        let mut selections = Vec::new();
        for p in &self.selections {
            selections.extend(read_selections(p)?);
        }
        let all = list_sites(&self.data)?;
        let sites = load(&self.data, &all)?;
        let cfg = self.delta_config(env.execution);
        // Every strategy shares the source's folds, so equal selections give
        // equal results and are computed once.
        let mut cache: HashMap<(String, Vec<String>), (f64, f64, f64)> = HashMap::new();
        let mut rows = Vec::with_capacity(selections.len());
        for sel in &selections {
            let src = sites
                .get(&sel.source)
                .ok_or_else(|| CliError::Data(format!("no data for site `{}`", sel.source)))?;
            let seed = ScoringContext::cell_seed(self.seed, &sel.source);
            let mut key_sel = sel.selected.clone();
            key_sel.sort();
            let key = (sel.source.clone(), key_sel);
            let (base, comb, delta) = match cache.get(&key) {
                Some(v) => *v,
                None => {
                    let mut chosen = Vec::with_capacity(sel.selected.len());
                    for id in &sel.selected {
                        chosen.push(
                            sites
                                .get(id)
                                .ok_or_else(|| CliError::Data(format!("no data for selected site `{id}`")))?,
                        );
                    }
                    let r = delta_eval(src, &chosen, &cfg, seed)?;
                    let v = (r.auc_baseline, r.auc_combined, r.delta);
                    cache.insert(key, v);
                    v
                }
            };
            rows.push(StrategyOutcome {
                source: sel.source.clone(),
                strategy: sel.strategy.clone(),
                selected: sel.selected.clone(),
                auc_baseline: base,
                auc_combined: comb,
                delta,
                folds: self.folds,
                repeats: self.repeats,
                seed,
            });
        }
        write_outcomes_csv(BufWriter::new(File::create(dir.join(OUTCOMES_FILE))?), &rows)?;
        write_summary_csv(BufWriter::new(File::create(dir.join(SUMMARY_FILE))?), &summarize(&rows))?;
        Ok(())
    }
}

/// Selections from a `select` output or a bare JSON array.
pub fn read_selections(path: &Path) -> Result<Vec<Selection>> {
    let mut v: serde_json::Value = read_json(path)?;
    if let Some(inner) = v.get_mut("selections") {
        v = inner.take();
    }
    serde_json::from_value(v).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- consistency

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRun {
    pub plain: PathBuf,
    pub secure: PathBuf,
    /// FDR level.
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyBody {
    pub report: ConsistencyReport,
}

impl ConsistencyRun {
    fn execute(&self) -> Result<ConsistencyBody> {
        let plain = read_scores(&self.plain)?;
        let secure = read_scores(&self.secure)?;
        Ok(ConsistencyBody {
            report: consistency_report(&plain, &secure, self.q)?,
        })
    }
}
