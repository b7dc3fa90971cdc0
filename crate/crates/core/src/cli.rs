//! Command-line front end. Every artifact-producing command writes into an
//! output directory together with a `manifest.json`.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{BmHmmCheckpoint, BmHmmModel, LdaCheckpoint, LdaModel, LdaParams};
use crate::corpus::{self, Corpus, IngestOptions};
use crate::error::{Error, Result};
use crate::eval;
use crate::markov::TransitionMatrix;
use crate::predict::{self, StateModel};
use crate::sampler::{self, DirectorySink, Hyperparams, ModelCheckpoint, MtlvmModel, RunOptions};
use crate::synth::{self, OracleAtoms, OracleParams, SynthConfig};

pub const MANIFEST: &str = "manifest.json";
pub const BMHMM_FILE: &str = "bmhmm.json";
pub const LDA_FILE: &str = "lda.json";

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mtlvm", version, about = "Market-trend latent variable model: training, prediction and reporting")]
pub struct Cli {
    /// Worker threads for parallel likelihood scoring (1 = serial).
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a corpus from a JSONL record stream.
    Ingest(IngestArgs),
    /// Keep entities with more than `threshold` documents.
    Filter(FilterArgs),
    /// Print corpus counts; optionally write histograms.
    Stats(StatsArgs),
    /// Hold out the final epoch as a test set.
    Split(SplitArgs),
    /// Forward-sample a synthetic corpus with ground truth.
    Synth(SynthArgs),
    /// Exact posterior of a tiny corpus by enumeration.
    Oracle(OracleArgs),
    /// Train a model.
    Train {
        #[command(subcommand)]
        model: TrainModel,
    },
    /// Continue an MTLVM run from its checkpoint.
    Resume(ResumeArgs),
    /// Score held-out units with one or more trained runs.
    Predict(PredictArgs),
    /// Validity and coherence measures from expert labels.
    Eval(EvalArgs),
    /// Top words per topic and topic shares per state.
    ExportTopics(ExportTopicsArgs),
    /// State popularity per epoch and per-entity trajectories.
    ExportStates(ExportArgs),
    /// Posterior-mean transition matrix.
    ExportTransitions(ExportArgs),
}

#[derive(Debug, Subcommand)]
pub enum TrainModel {
    /// Full model: Markov states over a three-level topic franchise.
    Mtlvm(TrainArgs),
    /// Baseline: states emit tokens directly.
    Bmhmm(TrainArgs),
    /// Baseline: LDA over individual documents.
    Lda(LdaArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// One stop word per line.
    #[arg(long)]
    pub stop_words: Option<PathBuf>,
    /// Epoch width in months for dated records.
    #[arg(long, default_value_t = 1)]
    pub bin_months: u32,
    /// First month of epoch 0, as YYYY-MM.
    #[arg(long)]
    pub origin: Option<String>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub threshold: u64,
    /// Drop vocabulary entries that no longer occur.
    #[arg(long)]
    pub compact: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML file with SynthConfig keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(rename = "C")]
    pub n_states: usize,
    pub alpha: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub eta0: f64,
    /// Frozen atoms; nonparametric atoms when absent.
    pub fixed_theta: Option<Vec<Vec<f64>>>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_states: 1,
            alpha: 1.0,
            gamma0: 1.0,
            gamma1: 1.0,
            gamma2: 1.0,
            eta0: 0.5,
            fixed_theta: None,
        }
    }
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// TOML file with OracleConfig keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Every field of `Hyperparams`; flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct HyperparamArgs {
    /// C: number of recruitment states.
    #[arg(short = 'C', long = "states", value_name = "C")]
    pub n_states: Option<usize>,
    /// alpha: Dirichlet prior on transition rows.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// gamma0: concentration of the global topic measure.
    #[arg(long)]
    pub gamma0: Option<f64>,
    /// gamma1: concentration of each state's measure.
    #[arg(long)]
    pub gamma1: Option<f64>,
    /// gamma2: concentration of each document's measure.
    #[arg(long)]
    pub gamma2: Option<f64>,
    /// eta0: Dirichlet concentration of the topic base measure.
    #[arg(long)]
    pub eta0: Option<f64>,
    /// sweeps: total Gibbs sweeps.
    #[arg(long)]
    pub sweeps: Option<usize>,
    /// burn_in: sweeps before samples are kept.
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// thin: keep every thin-th sweep after burn-in.
    #[arg(long)]
    pub thin: Option<usize>,
    /// seed: RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl HyperparamArgs {
    pub fn apply(&self, hp: &mut Hyperparams) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { hp.$f = v; })* };
        }
        set!(n_states, alpha, gamma0, gamma1, gamma2, eta0, sweeps, burn_in, thin, seed);
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with Hyperparams keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub hp: HyperparamArgs,
    /// Write checkpoint.json every N sweeps (0: only at the end).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Full count recount after every sweep.
    #[arg(long)]
    pub audit: bool,
}

#[derive(Debug, Args)]
pub struct LdaArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML file with LdaParams keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// K: number of topics.
    #[arg(short = 'K', long = "topics", value_name = "K")]
    pub n_topics: Option<usize>,
    /// Document-topic prior (default 50/K).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Topic-word prior.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub sweeps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Run directory written by `train mtlvm`.
    #[arg(long)]
    pub run: PathBuf,
    /// Additional sweeps.
    #[arg(long)]
    pub sweeps: usize,
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    #[arg(long)]
    pub audit: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Training corpus the runs were fitted on.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Held-out records (JSONL) from `split`.
    #[arg(long)]
    pub test: PathBuf,
    /// Run directories (MTLVM or B-mHMM); one report row each.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Average MTLVM token probabilities over the last T thinned samples.
    #[arg(long, value_name = "T", num_args = 0..=1, default_missing_value = "10")]
    pub average_last: Option<usize>,
    /// Also write per-token probabilities.
    #[arg(long)]
    pub tokens: bool,
    /// Placeholder rows for externally scored baselines.
    #[arg(long = "placeholder", default_values_t = vec!["DTM".to_string()])]
    pub placeholders: Vec<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Label CSV files, one per model.
    #[arg(long = "labels", required = true)]
    pub labels: Vec<PathBuf>,
    /// Model name for each label file.
    #[arg(long = "model")]
    pub models: Vec<String>,
    /// Topic count for each label file.
    #[arg(short = 'K', long = "topics")]
    pub topics: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportTopicsArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Run directory of an MTLVM or LDA run.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Words per topic.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Topics per state in the summary table.
    #[arg(long, default_value_t = 4)]
    pub state_top: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Run directory of an MTLVM or B-mHMM run.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    /// Input path to SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file (relative to the directory) to SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST) {
            out.push(path);
        }
    }
    Ok(())
}

/// Hashes of every file under `dir` except the manifest.
pub fn hash_outputs(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files
        .into_iter()
        .map(|p| {
            let rel = p.strip_prefix(dir).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            Ok((rel, sha256_file(&p)?))
        })
        .collect()
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Every recorded output still hashes to its recorded value.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (rel, expected) in &self.outputs {
            let actual = sha256_file(&dir.join(rel))?;
            if &actual != expected {
                return Err(Error::invariant(format!("{rel} does not match its manifest hash")));
            }
        }
        Ok(())
    }
}

struct Recorder {
    command: String,
    config: Option<PathBuf>,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    started_at: String,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

impl Recorder {
    fn new(command: &str, config: Option<&Path>, inputs: &[&Path]) -> Self {
        Self {
            command: command.into(),
            config: config.map(Path::to_path_buf),
            seed: None,
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            started_at: now(),
        }
    }

    fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn finish(self, dir: &Path) -> Result<()> {
        let mut inputs = BTreeMap::new();
        for p in self.inputs.iter().chain(self.config.iter()) {
            if p.is_file() {
                inputs.insert(p.display().to_string(), sha256_file(p)?);
            }
        }
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").into(),
            config: self.config.map(|p| p.display().to_string()),
            seed: self.seed,
            inputs,
            outputs: hash_outputs(dir)?,
            started_at: self.started_at,
            finished_at: now(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let path = dir.join(MANIFEST);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_hyperparams(config: Option<&Path>, flags: &HyperparamArgs) -> Result<Hyperparams> {
    let mut hp = match config {
        Some(p) => Hyperparams::from_toml_str(&read_text(p)?)?,
        None => Hyperparams::default(),
    };
    flags.apply(&mut hp);
    hp.validate()?;
    Ok(hp)
}

fn run_options(workers: Option<usize>, audit: bool, checkpoint_every: usize) -> RunOptions {
    RunOptions {
        parallel: workers.is_some_and(|n| n > 1),
        audit: audit.then_some(true),
        checkpoint_every,
    }
}

fn parse_origin(s: &str) -> Result<(i32, u32)> {
    let bad = || Error::Config(format!("origin {s:?} is not YYYY-MM"));
    let (y, m) = s.split_once('-').ok_or_else(bad)?;
    let y: i32 = y.parse().map_err(|_| bad())?;
    let m: u32 = m.parse().map_err(|_| bad())?;
    if !(1..=12).contains(&m) {
        return Err(bad());
    }
    Ok((y, m))
}

fn cmd_ingest(a: &IngestArgs) -> Result<()> {
    let rec = Recorder::new("ingest", None, &[&a.input]);
    let stop_words = match &a.stop_words {
        Some(p) => corpus::read_stop_words(p)?,
        None => Default::default(),
    };
    let opts = IngestOptions {
        bin_months: a.bin_months,
        origin: a.origin.as_deref().map(parse_origin).transpose()?,
        stop_words,
    };
    let (corpus, report) = corpus::ingest_path(&a.input, &opts)?;
    info!(
        "ingest records={} skipped_empty={} vocab={}",
        report.records,
        report.skipped_empty,
        corpus.vocab_size()
    );
    create_dir(&a.out)?;
    corpus.save_json(&a.out.join("corpus.json"))?;
    rec.finish(&a.out)
}

fn cmd_filter(a: &FilterArgs) -> Result<()> {
    let rec = Recorder::new("filter", None, &[&a.input]);
    let corpus = Corpus::load(&a.input)?;
    let kept = corpus::filter_min_postings(&corpus, a.threshold, a.compact);
    info!(
        "filter threshold={} entities_before={} entities_after={}",
        a.threshold,
        corpus::stats(&corpus).n_entities,
        corpus::stats(&kept).n_entities
    );
    create_dir(&a.out)?;
    kept.save_json(&a.out.join("corpus.json"))?;
    rec.finish(&a.out)
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let corpus = Corpus::load(&a.input)?;
    let s = corpus::stats(&corpus);
    println!(
        "documents={} entities={} units={} chains={}",
        s.n_documents, s.n_entities, s.n_units, s.n_chains
    );
    if let Some(out) = &a.out {
        let rec = Recorder::new("stats", None, &[&a.input]);
        create_dir(out)?;
        write_with(&out.join("stats.csv"), |w| s.write_csv(w))?;
        let h = corpus::histograms(&corpus);
        for (name, hist) in [
            ("units_per_epoch", &h.units_per_epoch),
            ("docs_per_entity", &h.docs_per_entity),
            ("docs_per_unit", &h.docs_per_unit),
            ("chain_lengths", &h.chain_lengths),
        ] {
            write_with(&out.join(format!("{name}.csv")), |w| corpus::write_histogram_csv(hist, w))?;
        }
        rec.finish(out)?;
    }
    Ok(())
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    let rec = Recorder::new("split", None, &[&a.input]);
    let corpus = Corpus::load(&a.input)?;
    let split = corpus::split_final_epoch(&corpus)?;
    info!(
        "split test_units={} excluded_entities={}",
        split.test.len(),
        split.excluded_entities
    );
    create_dir(&a.out)?;
    split.train.save_json(&a.out.join("train.json"))?;
    corpus::write_records(&corpus::heldout_records(&split.test), &a.out.join("test.jsonl"))?;
    rec.finish(&a.out)
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::from_toml_str(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let rec = Recorder::new("synth", a.config.as_deref(), &[]).seed(cfg.seed);
    let (corpus, truth) = synth::generate(&cfg)?;
    create_dir(&a.out)?;
    corpus.write_jsonl(&a.out.join("corpus.jsonl"))?;
    corpus.save_json(&a.out.join("corpus.json"))?;
    truth.save(&a.out.join("truth.json"))?;
    let resolved = toml::to_string(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(a.out.join("synth.toml"), resolved).map_err(|e| Error::io(a.out.join("synth.toml"), e))?;
    rec.finish(&a.out)
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(" ")
}

fn cmd_oracle(a: &OracleArgs) -> Result<()> {
    let rec = Recorder::new("oracle", a.config.as_deref(), &[&a.corpus]);
    let cfg: OracleConfig = match &a.config {
        Some(p) => toml::from_str(&read_text(p)?)?,
        None => OracleConfig::default(),
    };
    let corpus = Corpus::load(&a.corpus)?;
    let params = OracleParams {
        n_states: cfg.n_states,
        alpha: cfg.alpha,
        gamma0: cfg.gamma0,
        gamma1: cfg.gamma1,
        gamma2: cfg.gamma2,
        atoms: match cfg.fixed_theta {
            Some(theta) => OracleAtoms::Fixed { theta },
            None => OracleAtoms::Nonparametric { eta0: cfg.eta0 },
        },
    };
    let post = synth::enumerate_posterior(&corpus, &params)?;
    create_dir(&a.out)?;
    write_with(&a.out.join("posterior.csv"), |w| {
        writeln!(w, "probability,states,tables,dishes,atoms")?;
        for (c, p) in &post.configurations {
            let nested = |v: &[Vec<u32>]| v.iter().map(|x| join(x)).collect::<Vec<_>>().join("|");
            writeln!(w, "{p},{},{},{},{}", join(&c.states), nested(&c.tables), nested(&c.dishes), join(&c.atoms))?;
        }
        Ok(())
    })?;
    let states = post.marginal(|c| c.states.clone());
    write_with(&a.out.join("state_posterior.csv"), |w| {
        writeln!(w, "states,probability")?;
        for (s, p) in &states {
            writeln!(w, "{},{p}", join(s))?;
        }
        Ok(())
    })?;
    write_with(&a.out.join("summary.txt"), |w| {
        writeln!(w, "configurations = {}", post.configurations.len())?;
        writeln!(w, "log_evidence = {}", post.log_evidence)
    })?;
    rec.finish(&a.out)
}

fn cmd_train_mtlvm(a: &TrainArgs, workers: Option<usize>) -> Result<()> {
    let hp = load_hyperparams(a.config.as_deref(), &a.hp)?;
    let rec = Recorder::new("train mtlvm", a.config.as_deref(), &[&a.corpus]).seed(hp.seed);
    let corpus = Corpus::load(&a.corpus)?;
    create_dir(&a.out)?;
    let samples = a.out.join(DirectorySink::SAMPLES);
    if samples.exists() {
        fs::remove_dir_all(&samples).map_err(|e| Error::io(&samples, e))?;
    }
    write_hyperparams(&a.out, &hp)?;
    let mut sink = DirectorySink::create(&a.out, hp.n_states)?;
    let opts = run_options(workers, a.audit, a.checkpoint_every);
    let (model, trace) = sampler::train(&corpus, &hp, &opts, &mut sink)?;
    drop(sink);
    if let Some(last) = trace.last() {
        info!("train mtlvm sweeps={} logp={} K={}", last.sweep, last.logp, last.k);
    }
    model.audit()?;
    rec.finish(&a.out)
}

fn write_hyperparams(dir: &Path, hp: &Hyperparams) -> Result<()> {
    let text = toml::to_string(hp).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join("hyperparams.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn cmd_train_bmhmm(a: &TrainArgs) -> Result<()> {
    let hp = load_hyperparams(a.config.as_deref(), &a.hp)?;
    let rec = Recorder::new("train bmhmm", a.config.as_deref(), &[&a.corpus]).seed(hp.seed);
    let corpus = Corpus::load(&a.corpus)?;
    let mut model = BmHmmModel::initialize(&corpus, &hp)?;
    for _ in 0..hp.sweeps {
        model.sweep_once()?;
        if a.audit {
            model.audit()?;
        }
    }
    info!("train bmhmm sweeps={}", model.sweep());
    create_dir(&a.out)?;
    write_hyperparams(&a.out, &hp)?;
    model.checkpoint().save(&a.out.join(BMHMM_FILE))?;
    rec.finish(&a.out)
}

fn cmd_train_lda(a: &LdaArgs) -> Result<()> {
    let mut params = match &a.config {
        Some(p) => toml::from_str::<LdaParams>(&read_text(p)?)?,
        None => LdaParams::default(),
    };
    if let Some(k) = a.n_topics {
        params.n_topics = k;
    }
    if a.alpha.is_some() {
        params.alpha = a.alpha;
    }
    if let Some(b) = a.beta {
        params.beta = b;
    }
    if let Some(s) = a.sweeps {
        params.sweeps = s;
    }
    if let Some(s) = a.seed {
        params.seed = s;
    }
    params.validate()?;
    let rec = Recorder::new("train lda", a.config.as_deref(), &[&a.corpus]).seed(params.seed);
    let corpus = Corpus::load(&a.corpus)?;
    let (model, trace) = crate::baselines::lda::train_lda(&corpus, &params)?;
    model.audit()?;
    create_dir(&a.out)?;
    model.checkpoint().save(&a.out.join(LDA_FILE))?;
    write_with(&a.out.join("perplexity.csv"), |w| {
        writeln!(w, "sweep,perplexity")?;
        for (i, p) in trace.iter().enumerate() {
            writeln!(w, "{},{p}", i + 1)?;
        }
        Ok(())
    })?;
    rec.finish(&a.out)
}

fn cmd_resume(a: &ResumeArgs, workers: Option<usize>) -> Result<()> {
    let manifest = RunManifest::load(&a.run)?;
    manifest.verify(&a.run)?;
    let ckpt = ModelCheckpoint::load(&a.run.join(DirectorySink::CHECKPOINT))?;
    let rec = Recorder::new("resume", None, &[&a.corpus]).seed(ckpt.hyperparams.seed);
    let corpus = Corpus::load(&a.corpus)?;
    let mut sink = DirectorySink::append(&a.run)?;
    let opts = run_options(workers, a.audit, a.checkpoint_every);
    let (model, _) = sampler::resume(&corpus, &ckpt, a.sweeps, &opts, &mut sink)?;
    drop(sink);
    info!("resume sweep={}", model.sweep());
    write_hyperparams(&a.run, &model.hp)?;
    rec.finish(&a.run)
}

enum LoadedRun {
    Mtlvm(Vec<MtlvmModel>),
    Bmhmm(Box<BmHmmModel>),
    Lda(Box<LdaModel>),
}

/// Load whatever model a run directory holds. For MTLVM, `average_last`
/// swaps the final checkpoint for the last thinned samples.
fn load_run(corpus: &Corpus, dir: &Path, average_last: Option<usize>) -> Result<LoadedRun> {
    let ckpt_path = dir.join(DirectorySink::CHECKPOINT);
    if ckpt_path.is_file() {
        let paths = match average_last {
            Some(t) => sampler::last_samples(dir, t)?,
            None => Vec::new(),
        };
        let paths = if paths.is_empty() { vec![ckpt_path] } else { paths };
        let models = paths
            .iter()
            .map(|p| MtlvmModel::from_checkpoint(corpus, &ModelCheckpoint::load(p)?))
            .collect::<Result<Vec<_>>>()?;
        return Ok(LoadedRun::Mtlvm(models));
    }
    let b = dir.join(BMHMM_FILE);
    if b.is_file() {
        let m = BmHmmModel::from_checkpoint(corpus, &BmHmmCheckpoint::load(&b)?)?;
        return Ok(LoadedRun::Bmhmm(Box::new(m)));
    }
    let l = dir.join(LDA_FILE);
    if l.is_file() {
        let m = LdaModel::from_checkpoint(corpus, &LdaCheckpoint::load(&l)?)?;
        return Ok(LoadedRun::Lda(Box::new(m)));
    }
    Err(Error::Config(format!("{} holds no trained model", dir.display())))
}

fn slug(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase()
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = vec![&a.corpus, &a.test];
    let ckpts: Vec<PathBuf> = a.runs.iter().map(|r| r.join(DirectorySink::CHECKPOINT)).collect();
    inputs.extend(ckpts.iter().map(PathBuf::as_path));
    let rec = Recorder::new("predict", None, &inputs);
    let corpus = Corpus::load(&a.corpus)?;
    let test = corpus::heldout_from_records(corpus::read_records(&a.test)?);
    create_dir(&a.out)?;
    let mut rows = Vec::new();
    for dir in &a.runs {
        let run = load_run(&corpus, dir, a.average_last)?;
        let models: Vec<&dyn StateModel> = match &run {
            LoadedRun::Mtlvm(ms) => ms.iter().map(|m| m as &dyn StateModel).collect(),
            LoadedRun::Bmhmm(m) => vec![m.as_ref() as &dyn StateModel],
            LoadedRun::Lda(_) => {
                return Err(Error::Config(format!(
                    "{}: LDA has no state layer to predict with",
                    dir.display()
                )))
            }
        };
        let report = predict::heldout_log_likelihood(&models, &corpus.vocabulary, &test, a.tokens)?;
        let name = models[0].name();
        let s = slug(name);
        info!(
            "predict model={} models_averaged={} heldout_ll={} tokens={} skipped_units={}",
            name,
            models.len(),
            report.total_ll,
            report.tokens,
            report.skipped_units
        );
        write_with(&a.out.join(format!("predictions_{s}.csv")), |w| report.write_csv(w))?;
        write_with(&a.out.join(format!("summary_{s}.txt")), |w| report.write_summary(w))?;
        if a.tokens {
            write_with(&a.out.join(format!("tokens_{s}.csv")), |w| report.write_token_csv(w))?;
        }
        rows.push((name.to_string(), Some(report.total_ll)));
    }
    rows.extend(a.placeholders.iter().map(|p| (p.clone(), None)));
    write_with(&a.out.join("heldout.csv"), |w| predict::write_heldout_table(&rows, w))?;
    rec.finish(&a.out)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let n = a.labels.len();
    if (!a.models.is_empty() && a.models.len() != n) || (!a.topics.is_empty() && a.topics.len() != n) {
        return Err(Error::Config("--model and --topics must be given once per --labels".into()));
    }
    let inputs: Vec<&Path> = a.labels.iter().map(PathBuf::as_path).collect();
    let rec = Recorder::new("eval", None, &inputs);
    create_dir(&a.out)?;
    let mut scores = Vec::new();
    for (i, path) in a.labels.iter().enumerate() {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let labels = eval::read_labels(std::io::BufReader::new(file))?;
        let s = eval::compute_vm_cm(&labels)?;
        let name = a.models.get(i).cloned().unwrap_or_else(|| {
            path.file_stem().map_or_else(|| format!("model{i}"), |s| s.to_string_lossy().into_owned())
        });
        write_with(&a.out.join(format!("raters_{}.csv", slug(&name))), |w| eval::write_rater_scores(&s, w))?;
        let k = a.topics.get(i).copied().unwrap_or(labels.iter().map(|l| l.topic_id).collect::<std::collections::BTreeSet<_>>().len());
        scores.push((name, k, s));
    }
    let rows: Vec<(String, usize, &eval::VmCm)> = scores.iter().map(|(n, k, s)| (n.clone(), *k, s)).collect();
    write_with(&a.out.join("quality.csv"), |w| eval::write_quality_table(&rows, w))?;
    rec.finish(&a.out)
}

fn cmd_export_topics(a: &ExportTopicsArgs) -> Result<()> {
    let rec = Recorder::new("export-topics", None, &[&a.corpus]);
    let corpus = Corpus::load(&a.corpus)?;
    let export = match load_run(&corpus, &a.run, None)? {
        LoadedRun::Mtlvm(ms) => eval::export_topics(&ms[0], &corpus.vocabulary, a.top),
        LoadedRun::Lda(m) => eval::export_lda_topics(&m, &corpus.vocabulary, a.top),
        LoadedRun::Bmhmm(_) => return Err(Error::Config("B-mHMM runs have no topics".into())),
    };
    create_dir(&a.out)?;
    write_with(&a.out.join("topics.csv"), |w| export.write_topics_csv(w))?;
    let json = export.to_json()?;
    fs::write(a.out.join("topics.json"), json).map_err(|e| Error::io(a.out.join("topics.json"), e))?;
    if !export.states.is_empty() {
        write_with(&a.out.join("state_topics.csv"), |w| export.write_states_csv(w))?;
        write_with(&a.out.join("state_top_topics.csv"), |w| export.write_state_top_table(a.state_top, w))?;
    }
    rec.finish(&a.out)
}

fn load_state_run(corpus: &Corpus, dir: &Path) -> Result<(eval::StateTrends, TransitionMatrix)> {
    match load_run(corpus, dir, None)? {
        LoadedRun::Mtlvm(ms) => Ok((eval::export_state_trends(&ms[0]), ms[0].rho())),
        LoadedRun::Bmhmm(m) => Ok((eval::state_trends(m.layout(), &m.states(), m.hp.n_states), m.rho())),
        LoadedRun::Lda(_) => Err(Error::Config("LDA runs have no states".into())),
    }
}

fn cmd_export_states(a: &ExportArgs) -> Result<()> {
    let rec = Recorder::new("export-states", None, &[&a.corpus]);
    let corpus = Corpus::load(&a.corpus)?;
    let (trends, _) = load_state_run(&corpus, &a.run)?;
    create_dir(&a.out)?;
    write_with(&a.out.join("occupancy.csv"), |w| trends.write_occupancy_csv(w))?;
    write_with(&a.out.join("trajectories.csv"), |w| trends.write_trajectories_csv(w))?;
    rec.finish(&a.out)
}

fn cmd_export_transitions(a: &ExportArgs) -> Result<()> {
    let rec = Recorder::new("export-transitions", None, &[&a.corpus]);
    let corpus = Corpus::load(&a.corpus)?;
    let (_, rho) = load_state_run(&corpus, &a.run)?;
    create_dir(&a.out)?;
    write_with(&a.out.join("transitions.csv"), |w| rho.write_csv(w))?;
    rec.finish(&a.out)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be >= 1".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Filter(a) => cmd_filter(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Split(a) => cmd_split(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Train { model } => match model {
            TrainModel::Mtlvm(a) => cmd_train_mtlvm(a, cli.workers),
            TrainModel::Bmhmm(a) => cmd_train_bmhmm(a),
            TrainModel::Lda(a) => cmd_train_lda(a),
        },
        Command::Resume(a) => cmd_resume(a, cli.workers),
        Command::Predict(a) => cmd_predict(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportTopics(a) => cmd_export_topics(a),
        Command::ExportStates(a) => cmd_export_states(a),
        Command::ExportTransitions(a) => cmd_export_transitions(a),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Invariant(_) => EXIT_INVARIANT,
        Error::Config(_) | Error::Toml(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

/// Parse `std::env::args`, run, and return the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            if let Error::Invariant(report) = &e {
                eprintln!("audit failed: {report}");
            } else {
                eprintln!("error: {e}");
            }
            exit_code(&e)
        }
    }
}
