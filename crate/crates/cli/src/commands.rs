//! Pipeline stages.
//!
//! Each stage reads its upstream manifests, refuses to run on a stale or
//! missing upstream, skips itself when its own manifest is current and
//! otherwise runs under the output-directory lock and writes a new manifest.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::Serialize;
use serde_json::{json, Value};

use mmrec_core::analysis::{diversity_summary, similarity_table, to_csv};
use mmrec_core::corpus::{
    attach_movielens_titles, build_eval_candidates, k_core_filter, parse_amazon, parse_movielens, read_items,
    read_splits, split_per_user, write_items, write_splits, DatasetSplits, ImplicitDataset, Item, Partition,
};
use mmrec_core::embedding::{
    build_representations, load_image_embeddings, CachedEmbedder, Combo, EmbeddingError, EmbeddingVector,
    HashEmbedder, ItemRecords, RemoteEmbedder, RepresentationSet, TextEmbedder,
};
use mmrec_core::eval::{aggregate_splits, evaluate, format_table, PopularityScorer, RandomScorer, SplitReport};
use mmrec_core::gateway::{
    enrich_corpus, BackendConfig, ChatBackend, EnrichOptions, EnrichmentRecord, HttpChatBackend, MockBackend,
    ResponseCache,
};
use mmrec_core::pool::map_bounded;
use mmrec_core::prompting::Strategy;
use mmrec_core::recsys::{grid_search, load_checkpoint, save_checkpoint, train, Hyperparams, ModelScorer};
use mmrec_core::rng::derive_seed;
use mmrec_core::synthetic::generate;

use crate::config::{ChatBackendConfig, EmbeddingConfig, PipelineConfig, Preset};
use crate::error::{CliError, CliResult};
use crate::manifest::{
    file_hash, hash_value, manifest_path, read_manifest, sha256_bytes, sorted_lines_hash, write_manifest, DirLock,
    Manifest, TOOL_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Enrich,
    Embed,
    Repr,
    Grid,
    Train,
    Eval,
    Analyze,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Enrich => "enrich",
            Stage::Embed => "embed",
            Stage::Repr => "repr",
            Stage::Grid => "grid",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }

    /// Upstream stages, each flagged as required.
    fn upstream(self, out: &Path) -> Vec<(Stage, bool)> {
        let optional = |s: Stage| manifest_path(out, s.name()).exists();
        match self {
            Stage::Ingest => vec![],
            Stage::Enrich => vec![(Stage::Ingest, true)],
            Stage::Embed => vec![(Stage::Ingest, true), (Stage::Enrich, true)],
            Stage::Repr => vec![(Stage::Ingest, true), (Stage::Enrich, true), (Stage::Embed, true)],
            Stage::Grid => vec![(Stage::Ingest, true), (Stage::Repr, true)],
            Stage::Train => {
                let mut v = vec![(Stage::Ingest, true), (Stage::Repr, true)];
                if optional(Stage::Grid) {
                    v.push((Stage::Grid, false));
                }
                v
            }
            Stage::Eval => vec![(Stage::Ingest, true), (Stage::Repr, true), (Stage::Train, true)],
            Stage::Analyze => vec![(Stage::Ingest, true), (Stage::Enrich, true), (Stage::Embed, true)],
            Stage::Report => {
                let mut v = vec![(Stage::Eval, true)];
                if optional(Stage::Analyze) {
                    v.push((Stage::Analyze, false));
                }
                v
            }
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Command-line overrides of the training hyperparameters.
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub dropout: Option<f64>,
    pub max_epochs: Option<usize>,
}

/// Everything a stage needs: the loaded config plus global and per-stage
/// flags that change results.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub force: bool,
    pub dry_run: bool,
    /// Overrides `train.seed`.
    pub seed: Option<u64>,
    pub train_overrides: TrainOverrides,
    pub eval_k: Option<usize>,
    pub analysis_strategies: Option<Vec<String>>,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig) -> Self {
        let out = cfg.output_dir.clone();
        Ctx {
            cfg,
            out,
            force: false,
            dry_run: false,
            seed: None,
            train_overrides: TrainOverrides::default(),
            eval_k: None,
            analysis_strategies: None,
        }
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    /// Config hyperparameters with the seed override.
    fn base_hp(&self) -> Hyperparams {
        let mut hp = self.cfg.train.clone();
        if let Some(s) = self.seed {
            hp.seed = s;
        }
        hp
    }

    fn apply_overrides(&self, mut hp: Hyperparams) -> CliResult<Hyperparams> {
        let o = &self.train_overrides;
        if let Some(v) = o.learning_rate {
            hp.learning_rate = v;
        }
        if let Some(v) = o.dropout {
            hp.dropout = v;
        }
        if let Some(v) = o.max_epochs {
            hp.max_epochs = v;
        }
        hp.validate().map_err(CliError::validation)?;
        Ok(hp)
    }

    fn combos(&self) -> CliResult<Vec<Combo>> {
        if self.cfg.combos.is_empty() {
            return Err(CliError::validation("combos must not be empty"));
        }
        self.cfg
            .combos
            .iter()
            .map(|c| c.parse::<Combo>().map_err(|e| CliError::validation(format!("combo {c:?}: {e}"))))
            .collect()
    }

    /// Strategies enriched: the configured list, everything the combos
    /// need and the visual-only reference, in catalogue order.
    fn enrich_strategies(&self) -> CliResult<Vec<Strategy>> {
        let mut wanted = vec![Strategy::VisualOnly];
        for tag in &self.cfg.strategies {
            wanted.push(parse_strategy(tag)?);
        }
        for combo in self.combos()? {
            wanted.extend(combo.strategies());
        }
        Ok(Strategy::ALL.iter().copied().filter(|s| wanted.contains(s)).collect())
    }

    fn analysis_strategies(&self) -> CliResult<Vec<Strategy>> {
        let tags = self
            .analysis_strategies
            .clone()
            .unwrap_or_else(|| self.cfg.analysis.strategies.clone());
        if tags.is_empty() {
            return Ok(self
                .enrich_strategies()?
                .into_iter()
                .filter(|s| *s != Strategy::VisualOnly)
                .collect());
        }
        tags.iter().map(|t| parse_strategy(t)).collect()
    }

    fn eval_k(&self) -> usize {
        self.eval_k.unwrap_or(self.cfg.eval.k)
    }

    fn splits_dir(&self, seed: u64) -> PathBuf {
        self.path(format!("splits/seed_{seed}"))
    }

    fn checkpoint_dir(&self, combo: &str, seed: u64) -> PathBuf {
        self.path(format!("train/{combo}/seed_{seed}"))
    }
}

fn parse_strategy(tag: &str) -> CliResult<Strategy> {
    tag.parse::<Strategy>()
        .map_err(|e| CliError::validation(format!("strategy {tag:?}: {e}")))
}

/// The config section a stage depends on.
fn stage_config(ctx: &Ctx, stage: Stage) -> CliResult<Value> {
    let cfg = &ctx.cfg;
    let tags = |v: Vec<Strategy>| v.iter().map(|s| s.tag()).collect::<Vec<_>>();
    Ok(match stage {
        Stage::Ingest => json!({
            "dataset": cfg.dataset,
            "ratios": cfg.ratios(),
            "seeds": cfg.split.seeds,
            "eval_negatives": cfg.split.eval_negatives,
        }),
        Stage::Enrich => json!({
            "prompting": cfg.prompt_config(),
            "strategies": tags(ctx.enrich_strategies()?),
            "model_id": chat_model_id(&cfg.chat_backend),
        }),
        Stage::Embed => json!({ "embedding_backend": cfg.embedding_backend }),
        Stage::Repr => json!({ "combos": cfg.combos, "image_embeddings": cfg.image_embeddings }),
        Stage::Grid => json!({
            "train": ctx.base_hp(),
            "grid": cfg.grid,
            "combos": cfg.combos,
            "seed": cfg.split.seeds[0],
        }),
        Stage::Train => json!({
            "train": ctx.apply_overrides(ctx.base_hp())?,
            "combos": cfg.combos,
            "seeds": cfg.split.seeds,
        }),
        Stage::Eval => json!({
            "k": ctx.eval_k(),
            "baselines": cfg.eval.baselines,
            "combos": cfg.combos,
            "seeds": cfg.split.seeds,
        }),
        Stage::Analyze => json!({ "strategies": tags(ctx.analysis_strategies()?) }),
        Stage::Report => json!({}),
    })
}

fn chat_model_id(b: &ChatBackendConfig) -> &str {
    match b {
        ChatBackendConfig::Mock { model_id, .. } => model_id,
        ChatBackendConfig::Http(c) => &c.model_id,
    }
}

fn require_file(path: &Option<PathBuf>, field: &str, preset: &str) -> CliResult<PathBuf> {
    let p = path
        .as_ref()
        .ok_or_else(|| CliError::validation(format!("dataset.{field} is required for the {preset} preset")))?;
    if !p.is_file() {
        return Err(CliError::validation(format!("{field} file not found: {}", p.display())));
    }
    Ok(p.clone())
}

/// Input files a stage reads directly, keyed `input:<name>`.
fn stage_inputs(ctx: &Ctx, stage: Stage) -> CliResult<Vec<(String, PathBuf)>> {
    let d = &ctx.cfg.dataset;
    let mut out = Vec::new();
    match stage {
        Stage::Ingest => match d.preset {
            Preset::Movielens => {
                out.push(("ratings".into(), require_file(&d.ratings, "ratings", "movielens")?));
                out.push(("posters".into(), require_file(&d.posters, "posters", "movielens")?));
                out.push(("descriptions".into(), require_file(&d.descriptions, "descriptions", "movielens")?));
                if d.movies.is_some() {
                    out.push(("movies".into(), require_file(&d.movies, "movies", "movielens")?));
                }
            }
            Preset::Amazon => {
                out.push(("metadata".into(), require_file(&d.metadata, "metadata", "amazon")?));
                out.push(("reviews".into(), require_file(&d.reviews, "reviews", "amazon")?));
            }
            Preset::Synthetic => {}
        },
        Stage::Repr => {
            if ctx.combos()?.iter().any(Combo::needs_images) {
                let p = ctx.cfg.image_embeddings.clone();
                out.push((
                    "image_embeddings".into(),
                    p.as_ref()
                        .filter(|p| p.is_file())
                        .cloned()
                        .ok_or_else(|| match p {
                            Some(p) => CliError::validation(format!(
                                "image_embeddings file not found: {}",
                                p.display()
                            )),
                            None => CliError::validation("combos use image embeddings but image_embeddings is not set"),
                        })?,
                ));
            }
        }
        _ => {}
    }
    Ok(out)
}

/// Hashes of inputs and upstream manifests. Missing or stale upstreams are
/// validation errors; `--force` downgrades staleness to a warning.
fn resolve_upstream(ctx: &Ctx, stage: Stage) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (name, path) in stage_inputs(ctx, stage)? {
        out.insert(format!("input:{name}"), file_hash(&path)?);
    }
    for (up, required) in stage.upstream(&ctx.out) {
        match read_manifest(&ctx.out, up.name())? {
            None if !required => {}
            None if stage == Stage::Eval && up == Stage::Train => {
                return Err(CliError::validation(format!(
                    "missing checkpoint: no trained models under {}; run `train` first",
                    ctx.path("train").display()
                )))
            }
            None => {
                return Err(CliError::validation(format!(
                    "`{stage}` needs the output of `{up}`: {} does not exist; run `{up}` first",
                    manifest_path(&ctx.out, up.name()).display()
                )))
            }
            Some((m, hash)) => {
                let current = hash_value(&stage_config(ctx, up)?);
                if m.config_hash != current {
                    let msg = format!(
                        "upstream `{up}` is stale: it was produced from a different `{up}` configuration \
                         than the current one; rerun `{up}` or pass --force"
                    );
                    if ctx.force {
                        warn!("{msg} (continuing because of --force)");
                    } else {
                        return Err(CliError::validation(msg));
                    }
                }
                out.insert(up.name().to_string(), hash);
            }
        }
    }
    Ok(out)
}

/// Digest of an output file. Enrichment records are hashed without their
/// creation time and the embedding store without regard to line order.
fn output_digest(out: &Path, rel: &str) -> CliResult<String> {
    let path = out.join(rel);
    if rel.starts_with("enrich/records/") {
        let text = fs::read_to_string(&path)?;
        let mut canon = String::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let mut r: EnrichmentRecord = serde_json::from_str(line)?;
            r.created_at = 0;
            canon.push_str(&serde_json::to_string(&r)?);
            canon.push('\n');
        }
        Ok(sha256_bytes(canon.as_bytes()))
    } else if rel == "embed/store.csv" {
        sorted_lines_hash(&path)
    } else {
        file_hash(&path)
    }
}

fn up_to_date(ctx: &Ctx, stage: Stage, config_hash: &str, upstream: &BTreeMap<String, String>) -> CliResult<bool> {
    if ctx.force {
        return Ok(false);
    }
    let Some((m, _)) = read_manifest(&ctx.out, stage.name())? else {
        return Ok(false);
    };
    if m.config_hash != config_hash || &m.upstream != upstream || m.tool_version != TOOL_VERSION {
        return Ok(false);
    }
    for (rel, digest) in &m.outputs {
        match output_digest(&ctx.out, rel) {
            Ok(d) if &d == digest => {}
            _ => return Ok(false),
        }
    }
    Ok(true)
}

/// What a stage body produced: output paths relative to the output
/// directory, or `None` for a partial run that must not be recorded.
type StageOutputs = Option<Vec<String>>;

fn run_stage(
    ctx: &Ctx,
    stage: Stage,
    plan: &str,
    body: impl FnOnce(&Ctx) -> CliResult<StageOutputs>,
) -> CliResult<()> {
    let _lock = if ctx.dry_run { None } else { Some(DirLock::acquire(&ctx.out)?) };
    let upstream = resolve_upstream(ctx, stage)?;
    let config = stage_config(ctx, stage)?;
    let config_hash = hash_value(&config);
    if up_to_date(ctx, stage, &config_hash, &upstream)? {
        println!("{stage}: up to date");
        return Ok(());
    }
    if ctx.dry_run {
        println!("{stage}: would run: {plan}");
        for (k, v) in &upstream {
            println!("  reads {k} ({})", &v[..12]);
        }
        println!("  writes under {}", ctx.out.display());
        return Ok(());
    }
    let Some(outputs) = body(ctx)? else {
        println!("{stage}: partial run; manifest not updated");
        return Ok(());
    };
    let mut digests = BTreeMap::new();
    for rel in outputs {
        let d = output_digest(&ctx.out, &rel)?;
        digests.insert(rel, d);
    }
    let n = digests.len();
    write_manifest(
        &ctx.out,
        &Manifest {
            stage: stage.name().to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config_hash,
            config,
            upstream,
            outputs: digests,
        },
    )?;
    println!("{stage}: done ({n} outputs)");
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::runtime(format!("invalid {}: {e}", path.display())))
}

fn load_items(ctx: &Ctx) -> CliResult<Vec<Item>> {
    Ok(read_items(&ctx.path("data/items.jsonl"))?.into_values().collect())
}

fn load_splits(ctx: &Ctx) -> CliResult<Vec<(u64, DatasetSplits)>> {
    ctx.cfg
        .split
        .seeds
        .iter()
        .map(|&s| Ok((s, read_splits(&ctx.splits_dir(s))?)))
        .collect()
}

fn records_path(ctx: &Ctx, s: Strategy) -> PathBuf {
    ctx.path(format!("enrich/records/{}.jsonl", s.tag()))
}

fn load_records(ctx: &Ctx, strategies: &[Strategy]) -> CliResult<HashMap<String, ItemRecords>> {
    let mut out: HashMap<String, ItemRecords> = HashMap::new();
    for &s in strategies {
        let path = records_path(ctx, s);
        if !path.is_file() {
            return Err(CliError::validation(format!(
                "no `{}` responses at {}; add the strategy to the config and run `enrich`",
                s.tag(),
                path.display()
            )));
        }
        for line in fs::read_to_string(&path)?.lines().filter(|l| !l.trim().is_empty()) {
            let r: EnrichmentRecord = serde_json::from_str(line)?;
            out.entry(r.item_id.clone()).or_default().insert(s, r);
        }
    }
    Ok(out)
}

/// Either configured text encoder.
pub enum AnyEmbedder {
    Hash(HashEmbedder),
    Remote(RemoteEmbedder),
}

impl TextEmbedder for AnyEmbedder {
    fn model_id(&self) -> &str {
        match self {
            AnyEmbedder::Hash(e) => e.model_id(),
            AnyEmbedder::Remote(e) => e.model_id(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            AnyEmbedder::Hash(e) => e.dim(),
            AnyEmbedder::Remote(e) => e.dim(),
        }
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        match self {
            AnyEmbedder::Hash(e) => e.embed(text),
            AnyEmbedder::Remote(e) => e.embed(text),
        }
    }
}

fn open_embedder(ctx: &Ctx) -> CliResult<(CachedEmbedder<AnyEmbedder>, usize)> {
    let (inner, parallelism) = match &ctx.cfg.embedding_backend {
        EmbeddingConfig::Hash { dim } => (AnyEmbedder::Hash(HashEmbedder::new(*dim)), 1),
        EmbeddingConfig::Remote(c) => (AnyEmbedder::Remote(RemoteEmbedder::new(c.clone())), 4),
    };
    Ok((CachedEmbedder::open(inner, ctx.path("embed/store.csv"))?, parallelism))
}

fn load_dataset(ctx: &Ctx) -> CliResult<ImplicitDataset> {
    let d = &ctx.cfg.dataset;
    let inputs: HashMap<String, PathBuf> = stage_inputs(ctx, Stage::Ingest)?.into_iter().collect();
    Ok(match d.preset {
        Preset::Movielens => {
            let mut ds = parse_movielens(&inputs["ratings"], &inputs["posters"], &inputs["descriptions"])?;
            if let Some(movies) = inputs.get("movies") {
                attach_movielens_titles(&mut ds, movies)?;
            }
            info!("parsed {} ratings ({} skipped records)", ds.ratings.len(), ds.report.skipped_records);
            ds.into_implicit()
        }
        Preset::Amazon => {
            let ds = parse_amazon(&inputs["metadata"], &inputs["reviews"])?;
            info!("parsed {} ratings ({} skipped records)", ds.ratings.len(), ds.report.skipped_records);
            ds.into_implicit()
        }
        Preset::Synthetic => generate(&d.synthetic.clone().unwrap_or_default()),
    })
}

pub fn cmd_ingest(ctx: &Ctx) -> CliResult<()> {
    let seeds = &ctx.cfg.split.seeds;
    let plan = format!("filter to a {}-core and split for seeds {seeds:?}", ctx.cfg.dataset.k_core);
    run_stage(ctx, Stage::Ingest, &plan, |ctx| {
        let cfg = &ctx.cfg;
        let ds = k_core_filter(&load_dataset(ctx)?, cfg.dataset.k_core)?;
        info!(
            "{}-core: {} users, {} items, {} interactions",
            cfg.dataset.k_core,
            ds.users().len(),
            ds.items.len(),
            ds.interactions.len()
        );
        let mut outputs = vec!["data/items.jsonl".to_string()];
        fs::create_dir_all(ctx.path("data"))?;
        write_items(&ctx.path("data/items.jsonl"), ds.items.values())?;
        for &seed in seeds {
            let mut splits = split_per_user(&ds, cfg.ratios(), seed)?;
            let (cands, report) = build_eval_candidates(&splits, cfg.split.eval_negatives, seed);
            if !report.short_users.is_empty() {
                warn!("seed {seed}: {} users have fewer eligible negatives than requested", report.short_users.len());
            }
            splits.eval_candidates = cands;
            write_splits(&ctx.splits_dir(seed), &splits)?;
            for f in ["interactions.jsonl", "candidates.tsv", "splits.json"] {
                outputs.push(format!("splits/seed_{seed}/{f}"));
            }
        }
        Ok(Some(outputs))
    })
}

/// Flags of `enrich` that do not change its results.
#[derive(Debug, Clone, Default)]
pub struct EnrichFlags {
    /// Run only this strategy; the stage manifest is then left untouched.
    pub strategy: Option<String>,
    pub parallelism: Option<usize>,
    pub cache: Option<PathBuf>,
    /// Directory holding the per-strategy journals.
    pub checkpoint: Option<PathBuf>,
    /// JSON file with an HTTP backend config replacing `chat_backend`.
    pub backend_config: Option<PathBuf>,
}

fn make_backend(ctx: &Ctx, flags: &EnrichFlags) -> CliResult<Box<dyn ChatBackend>> {
    let mut cfg = ctx.cfg.chat_backend.clone();
    if let Some(path) = &flags.backend_config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::validation(format!("cannot read backend config {}: {e}", path.display())))?;
        let b: BackendConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::validation(format!("invalid backend config {}: {e}", path.display())))?;
        cfg = ChatBackendConfig::Http(b);
    }
    Ok(match cfg {
        ChatBackendConfig::Mock { model_id, parallelism } => {
            Box::new(MockBackend::new(model_id).with_parallelism(flags.parallelism.unwrap_or(parallelism)))
        }
        ChatBackendConfig::Http(mut b) => {
            if let Some(p) = flags.parallelism {
                b.parallelism = p;
            }
            b.validate().map_err(CliError::validation)?;
            Box::new(HttpChatBackend::new(b).map_err(CliError::validation)?)
        }
    })
}

pub fn cmd_enrich(ctx: &Ctx, flags: &EnrichFlags) -> CliResult<()> {
    let strategies = match &flags.strategy {
        Some(tag) => vec![parse_strategy(tag)?],
        None => ctx.enrich_strategies()?,
    };
    let tags: Vec<&str> = strategies.iter().map(|s| s.tag()).collect();
    let plan = format!("query `{}` for strategies {tags:?}", chat_model_id(&ctx.cfg.chat_backend));
    run_stage(ctx, Stage::Enrich, &plan, |ctx| {
        let items = load_items(ctx)?;
        let backend = make_backend(ctx, flags)?;
        let cache_path = flags.cache.clone().unwrap_or_else(|| ctx.path("enrich/cache.jsonl"));
        let cache = ResponseCache::open(&cache_path)?;
        let journal_dir = flags.checkpoint.clone().unwrap_or_else(|| ctx.path("enrich"));
        fs::create_dir_all(&journal_dir)?;
        fs::create_dir_all(ctx.path("enrich/records"))?;
        let options = EnrichOptions {
            prompt_config: ctx.cfg.prompt_config(),
            ..EnrichOptions::default()
        };
        let mut outputs = Vec::new();
        let mut failed = 0;
        for &s in &strategies {
            let journal = journal_dir.join(format!("journal_{}.jsonl", s.tag()));
            let report = enrich_corpus(&items, s, backend.as_ref(), &cache, Some(&journal), &options)?;
            info!(
                "{}: {} records, {} skipped, {} failed, {} resumed",
                s.tag(),
                report.records.len(),
                report.skipped.len(),
                report.failed.len(),
                report.resumed
            );
            failed += report.failed.len();
            let mut text = String::new();
            for r in &report.records {
                text.push_str(&serde_json::to_string(r)?);
                text.push('\n');
            }
            fs::write(records_path(ctx, s), text)?;
            write_json(
                &ctx.path(format!("enrich/report_{}.json", s.tag())),
                &json!({ "skipped": report.skipped, "failed": report.failed }),
            )?;
            outputs.push(format!("enrich/records/{}.jsonl", s.tag()));
        }
        cache.compact()?;
        if failed > 0 {
            return Err(CliError::runtime(format!(
                "{failed} requests failed after retries; rerun `enrich` to retry them"
            )));
        }
        Ok(flags.strategy.is_none().then_some(outputs))
    })
}

pub fn cmd_embed(ctx: &Ctx) -> CliResult<()> {
    run_stage(ctx, Stage::Embed, "embed descriptions and responses", |ctx| {
        let items = load_items(ctx)?;
        let records = load_records(ctx, &ctx.enrich_strategies()?)?;
        let mut texts: Vec<&str> = items.iter().map(|i| i.description.as_str()).collect();
        for recs in records.values() {
            texts.extend(recs.values().map(|r| r.response_text.as_str()));
        }
        texts.sort_unstable();
        texts.dedup();
        fs::create_dir_all(ctx.path("embed"))?;
        let (embedder, parallelism) = open_embedder(ctx)?;
        info!("embedding {} unique texts with {}", texts.len(), embedder.model_id());
        map_bounded(&texts, parallelism, |_, t| embedder.embed(t))
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(vec!["embed/store.csv".to_string()]))
    })
}

pub fn cmd_repr(ctx: &Ctx) -> CliResult<()> {
    let plan = format!("build representations {:?}", ctx.cfg.combos);
    run_stage(ctx, Stage::Repr, &plan, |ctx| {
        let items = load_items(ctx)?;
        let combos = ctx.combos()?;
        let (embedder, parallelism) = open_embedder(ctx)?;
        let images = match stage_inputs(ctx, Stage::Repr)?.first() {
            Some((_, path)) => Some(load_image_embeddings(path)?),
            None => None,
        };
        let mut outputs = Vec::new();
        for combo in &combos {
            let records = load_records(ctx, &combo.strategies())?;
            let set = build_representations(combo, &items, &records, images.as_ref(), &embedder, parallelism)?;
            info!("{}: {} items, dim {}", combo.tag, set.len(), set.dim);
            set.write(&ctx.path("repr"))?;
            outputs.push(format!("repr/{}.f32", combo.tag));
            outputs.push(format!("repr/{}.json", combo.tag));
        }
        Ok(Some(outputs))
    })
}

pub fn cmd_grid(ctx: &Ctx) -> CliResult<()> {
    let g = &ctx.cfg.grid;
    let plan = format!(
        "train {} grid points per combo on split seed {}",
        g.learning_rates.len() * g.dropouts.len(),
        ctx.cfg.split.seeds[0]
    );
    run_stage(ctx, Stage::Grid, &plan, |ctx| {
        let seed = ctx.cfg.split.seeds[0];
        let splits = read_splits(&ctx.splits_dir(seed))?;
        let base = ctx.base_hp();
        let mut outputs = Vec::new();
        for combo in ctx.combos()? {
            let reprs = RepresentationSet::read(&ctx.path("repr"), &combo.tag)?;
            let result = grid_search(&splits, &reprs, &ctx.cfg.grid, &base)?;
            for (i, report) in result.reports.iter().enumerate() {
                let rel = format!("grid/{}/report_{i}.json", combo.tag);
                write_json(&ctx.path(&rel), report)?;
                outputs.push(rel);
            }
            let best = result.best_hp();
            info!(
                "{}: best lr {} dropout {} (val recall {:.4})",
                combo.tag,
                best.learning_rate,
                best.dropout,
                result.reports[result.best_index].best_val_recall
            );
            let rel = format!("grid/{}/best_hp.json", combo.tag);
            write_json(&ctx.path(&rel), best)?;
            outputs.push(rel);
        }
        Ok(Some(outputs))
    })
}

pub fn cmd_train(ctx: &Ctx) -> CliResult<()> {
    let plan = format!("train {:?} on split seeds {:?}", ctx.cfg.combos, ctx.cfg.split.seeds);
    run_stage(ctx, Stage::Train, &plan, |ctx| {
        let splits = load_splits(ctx)?;
        let use_grid = manifest_path(&ctx.out, Stage::Grid.name()).exists();
        let mut outputs = Vec::new();
        for combo in ctx.combos()? {
            let reprs = RepresentationSet::read(&ctx.path("repr"), &combo.tag)?;
            let best_path = ctx.path(format!("grid/{}/best_hp.json", combo.tag));
            let hp = if use_grid && best_path.is_file() {
                let mut hp: Hyperparams = read_json(&best_path)?;
                hp.seed = ctx.base_hp().seed;
                hp
            } else {
                ctx.base_hp()
            };
            let hp = ctx.apply_overrides(hp)?;
            for (split_seed, split) in &splits {
                let hp = Hyperparams {
                    seed: derive_seed(hp.seed, &["split", &split_seed.to_string()]),
                    ..hp.clone()
                };
                let (params, report) = train(split, &reprs, &hp)?;
                info!(
                    "{} seed {split_seed}: best val recall {:.4} at epoch {}",
                    combo.tag, report.best_val_recall, report.best_epoch
                );
                let dir = ctx.checkpoint_dir(&combo.tag, *split_seed);
                save_checkpoint(&dir, &params, &hp, report.best_epoch, &combo.tag)?;
                write_json(&dir.join("report.json"), &report)?;
                for f in ["params.bin", "params.json", "report.json"] {
                    outputs.push(format!("train/{}/seed_{split_seed}/{f}", combo.tag));
                }
            }
        }
        Ok(Some(outputs))
    })
}

pub fn cmd_eval(ctx: &Ctx, print_table: bool) -> CliResult<()> {
    let k = ctx.eval_k();
    let plan = format!("rank test candidates at k={k} for {:?} and baselines", ctx.cfg.combos);
    run_stage(ctx, Stage::Eval, &plan, |ctx| {
        let splits = load_splits(ctx)?;
        let mut outputs = Vec::new();
        let mut rows = Vec::new();
        let mut record = |name: &str, reports: Vec<SplitReport>, outputs: &mut Vec<String>| -> CliResult<()> {
            for r in &reports {
                let rel = format!("eval/{name}/seed_{}.json", r.seed);
                write_json(&ctx.path(&rel), r)?;
                outputs.push(rel);
            }
            let agg = aggregate_splits(&reports)?;
            let rel = format!("eval/{name}/summary.json");
            write_json(&ctx.path(&rel), &agg)?;
            outputs.push(rel);
            rows.push((name.to_string(), agg));
            Ok(())
        };
        for combo in ctx.combos()? {
            let reprs = RepresentationSet::read(&ctx.path("repr"), &combo.tag)?;
            let mut reports = Vec::new();
            for (seed, split) in &splits {
                let dir = ctx.checkpoint_dir(&combo.tag, *seed);
                if !dir.join("params.json").is_file() {
                    return Err(CliError::validation(format!("missing checkpoint {}", dir.display())));
                }
                let (params, _) = load_checkpoint(&dir)?;
                let scorer = ModelScorer::new(&params, &reprs)?;
                reports.push(evaluate(&scorer, split, Partition::Test, k, 1)?);
            }
            record(&combo.tag, reports, &mut outputs)?;
        }
        for name in &ctx.cfg.eval.baselines {
            let mut reports = Vec::new();
            for (seed, split) in &splits {
                let report = match name.as_str() {
                    "popularity" => evaluate(&PopularityScorer::from_train(&split.train), split, Partition::Test, k, 1)?,
                    "random" => {
                        let scorer = RandomScorer {
                            seed: derive_seed(*seed, &["random"]),
                        };
                        evaluate(&scorer, split, Partition::Test, k, 1)?
                    }
                    other => return Err(CliError::validation(format!("unknown baseline {other:?}"))),
                };
                reports.push(report);
            }
            record(name, reports, &mut outputs)?;
        }
        fs::write(ctx.path("eval/table.csv"), format_table(&rows))?;
        outputs.push("eval/table.csv".to_string());
        Ok(Some(outputs))
    })?;
    if print_table && !ctx.dry_run {
        print!("{}", fs::read_to_string(ctx.path("eval/table.csv"))?);
    }
    Ok(())
}

pub fn cmd_analyze(ctx: &Ctx) -> CliResult<()> {
    let plan = "compare description, image-description and response embeddings";
    run_stage(ctx, Stage::Analyze, plan, |ctx| {
        let items = load_items(ctx)?;
        let strategies = ctx.analysis_strategies()?;
        let mut needed = strategies.clone();
        needed.push(Strategy::VisualOnly);
        let records = load_records(ctx, &needed)?;
        let (embedder, _) = open_embedder(ctx)?;
        let table = similarity_table(&items, &records, &embedder, &strategies)?;
        info!("similarity rows: {}, skipped items: {}", table.rows.len(), table.skipped.len());
        fs::create_dir_all(ctx.path("analysis"))?;
        fs::write(ctx.path("analysis/similarity.csv"), to_csv(&table.rows, &strategies))?;
        let mut per_strategy = BTreeMap::new();
        for s in &strategies {
            let summary = diversity_summary(&table.rows, s.tag()).ok();
            per_strategy.insert(s.tag().to_string(), summary);
        }
        write_json(
            &ctx.path("analysis/summary.json"),
            &json!({
                "items": table.rows.len(),
                "skipped": table.skipped.len(),
                "strategies": per_strategy,
            }),
        )?;
        Ok(Some(vec![
            "analysis/similarity.csv".to_string(),
            "analysis/summary.json".to_string(),
        ]))
    })
}

pub fn cmd_report(ctx: &Ctx) -> CliResult<()> {
    run_stage(ctx, Stage::Report, "summarise evaluation and analysis", |ctx| {
        let table = fs::read_to_string(ctx.path("eval/table.csv"))?;
        let mut md = format!("# Results\n\n## Ranking metrics (mean±std over splits)\n\n```csv\n{table}```\n");
        let summary_path = ctx.path("analysis/summary.json");
        if summary_path.is_file() {
            let summary: Value = read_json(&summary_path)?;
            md.push_str("\n## Similarity to the item description\n\n");
            md.push_str("| strategy | mean similarity | mean image-description similarity | share below reference |\n");
            md.push_str("|---|---|---|---|\n");
            if let Some(map) = summary["strategies"].as_object() {
                for (tag, s) in map {
                    if s.is_null() {
                        continue;
                    }
                    md.push_str(&format!(
                        "| {tag} | {:.4} | {:.4} | {:.3} |\n",
                        s["mean_sim"].as_f64().unwrap_or(f64::NAN),
                        s["mean_reference"].as_f64().unwrap_or(f64::NAN),
                        s["fraction_below_reference"].as_f64().unwrap_or(f64::NAN),
                    ));
                }
            }
        }
        fs::create_dir_all(ctx.path("report"))?;
        fs::write(ctx.path("report/report.md"), &md)?;
        print!("{md}");
        Ok(Some(vec!["report/report.md".to_string()]))
    })
}
