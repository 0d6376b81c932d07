//! Stage orchestration behind a single TOML run config.
//!
//! Stages read their inputs from the output directory and write artifacts plus
//! a manifest (`manifests/<stage>.json`) holding the SHA-256 of every input
//! and output, a hash of the config sections the stage depends on, the seed
//! and the crate version. A stage refuses to run when an upstream manifest is
//! missing, was produced under a different config, or no longer matches the
//! bytes on disk.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::export::{
    deserialize, eval_fixed, from_fixed, node_table_csv, quantize_forest, quantize_input,
    sense_check, serialize, DEFAULT_SCALE_BITS,
};
use crate::features::{derive_features, EconParams, ETH_GENESIS_SUPPLY};
use crate::graphical::{export_graph, stability_graph, GraphParams};
use crate::ingest::{
    default_cache_dir, load_blocks, load_pool_events, load_price_candles, load_transactions,
    AdapterRegistry, ReplayAdapter, TimeRange,
};
use crate::learners::{
    predictions_csv, rolling_evaluate, Metrics, Model, ModelSpec, RollingParams, TrainingMeta,
};
use crate::mutualinfo::{default_bins, mi_alpha_sweep, mi_report_csv};
use crate::timeseries::{
    fmt_f64, hour_of, join_features, FeatureMatrix, FillPolicy, NormalizationStats, TimeSeries,
};

/// Target column appended to `features.csv`.
pub const PRICE_COLUMN: &str = "price_usd";

/// Where a raw input comes from: a local CSV, or a named remote adapter
/// fetched through the cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DataSource {
    Path(PathBuf),
    Adapter { adapter: String, fixture: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeConfig {
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub blocks: Option<DataSource>,
    pub txs: Option<DataSource>,
    pub candles: Option<DataSource>,
    pub pools: Option<DataSource>,
    /// Inclusive unix-second range; records outside it are dropped.
    pub range: Option<RangeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiConfig {
    pub alphas: Vec<f64>,
    pub bins: Option<usize>,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.5, 0.9, 0.99],
            bins: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub horizons: Vec<usize>,
    pub min_train_hours: usize,
    pub max_train_hours: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizons: vec![24, 168, 720],
            min_train_hours: 30 * 24,
            max_train_hours: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    pub scale_bits: u32,
    /// Relative deviation from the actual price that the sense check flags.
    pub sense_tolerance: f64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            scale_bits: DEFAULT_SCALE_BITS,
            sense_tolerance: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output directory, relative to the config file.
    pub out_dir: Option<PathBuf>,
    /// Adapter download cache, relative to the config file; defaults to
    /// `$COUNTERPOINT_CACHE_DIR` or `.counterpoint-cache`. Not part of any
    /// stage hash: it only changes where fetched copies live.
    pub cache_dir: Option<PathBuf>,
    /// Supply before the first block, tokens.
    pub genesis_supply: f64,
    pub fill: FillPolicy,
    pub data: DataConfig,
    pub econ: EconParams,
    pub graph: GraphParams,
    pub mi: MiConfig,
    pub model: ModelSpec,
    pub evaluation: EvalConfig,
    pub export: ExportConfig,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            cache_dir: None,
            genesis_supply: ETH_GENESIS_SUPPLY,
            fill: FillPolicy::default(),
            data: DataConfig::default(),
            econ: EconParams::default(),
            graph: GraphParams::default(),
            mi: MiConfig::default(),
            model: ModelSpec::default(),
            evaluation: EvalConfig::default(),
            export: ExportConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

const REPLAY_ADAPTER: &str = "replay";

impl RunConfig {
    pub fn from_toml(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    /// Output directory from the config, if any, resolved against its file.
    pub fn configured_out_dir(&self) -> Option<PathBuf> {
        self.out_dir.as_ref().map(|p| self.resolve(p))
    }

    fn sources(&self) -> [(&'static str, Option<&DataSource>, bool); 4] {
        let d = &self.data;
        [
            ("blocks", d.blocks.as_ref(), true),
            ("txs", d.txs.as_ref(), true),
            ("candles", d.candles.as_ref(), true),
            ("pools", d.pools.as_ref(), false),
        ]
    }

    /// Checks every parameter and that every referenced input resolves.
    pub fn validate(&self) -> Result<()> {
        self.econ.validate()?;
        self.graph.validate()?;
        self.model.validate()?;
        if !(self.genesis_supply >= 0.0 && self.genesis_supply.is_finite()) {
            return Err(Error::Config("genesis_supply must be non-negative".into()));
        }
        if self.mi.alphas.is_empty() {
            return Err(Error::Config("mi.alphas must not be empty".into()));
        }
        if let Some(a) = self.mi.alphas.iter().find(|a| !(**a >= 0.0 && **a < 1.0)) {
            return Err(Error::Config(format!("mi.alphas: {a} not in [0, 1)")));
        }
        if self.mi.bins.is_some_and(|b| b < 2) {
            return Err(Error::Config("mi.bins must be at least 2".into()));
        }
        let e = &self.evaluation;
        if e.horizons.is_empty() || e.horizons.contains(&0) {
            return Err(Error::Config("evaluation.horizons must be positive hours".into()));
        }
        if e.max_train_hours == Some(0) {
            return Err(Error::Config("evaluation.max_train_hours must be positive".into()));
        }
        if self.export.scale_bits > 62 {
            return Err(Error::Config("export.scale_bits must be at most 62".into()));
        }
        if !(self.export.sense_tolerance >= 0.0) {
            return Err(Error::Config("export.sense_tolerance must be non-negative".into()));
        }
        if let Some(r) = self.data.range {
            TimeRange::new(r.start, r.end)?;
        }
        for (name, source, required) in self.sources() {
            match source {
                None if required => {
                    return Err(Error::Config(format!("data.{name} is required")));
                }
                None => {}
                Some(DataSource::Path(p)) => {
                    if !self.resolve(p).is_file() {
                        return Err(Error::Config(format!(
                            "data.{name}: {} not found",
                            self.resolve(p).display()
                        )));
                    }
                }
                Some(DataSource::Adapter { adapter, fixture }) => {
                    if adapter != REPLAY_ADAPTER {
                        return Err(Error::UnknownAdapter(adapter.clone()));
                    }
                    if self.data.range.is_none() {
                        return Err(Error::Config(format!(
                            "data.{name}: adapter sources need data.range"
                        )));
                    }
                    if !self.resolve(fixture).is_file() {
                        return Err(Error::Config(format!(
                            "data.{name}: fixture {} not found",
                            self.resolve(fixture).display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Hash of the config sections that determine `stage`'s outputs,
    /// including those of every upstream stage.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let value = match stage {
            Stage::Ingest => serde_json::json!({ "data": self.data }),
            Stage::Features => serde_json::json!({
                "up": self.stage_hash(Stage::Ingest),
                "econ": self.econ,
                "genesis_supply": self.genesis_supply,
                "fill": self.fill,
            }),
            Stage::Graph => serde_json::json!({
                "up": self.stage_hash(Stage::Features),
                "graph": self.graph,
            }),
            Stage::Mi => serde_json::json!({
                "up": self.stage_hash(Stage::Features),
                "mi": self.mi,
            }),
            Stage::Train => serde_json::json!({
                "up": self.stage_hash(Stage::Features),
                "model": self.model,
                "evaluation": self.evaluation,
                "seed": self.seed,
            }),
            Stage::Export => serde_json::json!({
                "up": self.stage_hash(Stage::Train),
                "export": self.export,
            }),
            Stage::All => serde_json::json!({ "up": self.stage_hash(Stage::Export) }),
        };
        sha256_hex(value.to_string().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Features,
    Graph,
    Mi,
    Train,
    Export,
    All,
}

impl Stage {
    pub const ORDER: [Stage; 6] = [
        Stage::Ingest,
        Stage::Features,
        Stage::Graph,
        Stage::Mi,
        Stage::Train,
        Stage::Export,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Graph => "graph",
            Stage::Mi => "mi",
            Stage::Train => "train",
            Stage::Export => "export",
            Stage::All => "all",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ORDER
            .into_iter()
            .chain([Stage::All])
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    /// Relative path → SHA-256 of the bytes read.
    pub inputs: BTreeMap<String, String>,
    /// Relative path (under the output directory) → SHA-256 of the bytes
    /// written.
    pub outputs: BTreeMap<String, String>,
}

/// Names of the artifacts each stage writes, relative to the output dir.
pub mod artifacts {
    pub const INGEST_DIR: &str = "ingest";
    pub const FEATURES: &str = "features.csv";
    pub const GRAPH_EDGES: &str = "graph_edges.csv";
    pub const PARTIAL_CORR: &str = "partial_corr.csv";
    pub const MI_REPORT: &str = "mi_report.csv";
    pub const METRICS: &str = "metrics.json";
    pub const MODEL: &str = "model.json";
    pub const MODEL_BYTES: &str = "model.cpfx";
    pub const MODEL_NODES: &str = "model_nodes.csv";
    pub const NORMALIZATION: &str = "normalization.json";
    pub const SENSE_CHECK: &str = "sense_check.csv";
    pub const PLOTS_DIR: &str = "plots";
    pub const MANIFESTS_DIR: &str = "manifests";

    pub fn predictions(horizon: usize) -> String {
        format!("predictions_{horizon}h.csv")
    }
}

/// Accumulates one stage's manifest while it runs.
struct StageRun<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    stage: Stage,
    manifest: Manifest,
}

impl<'a> StageRun<'a> {
    fn new(cfg: &'a RunConfig, out: &'a Path, stage: Stage) -> Self {
        Self {
            cfg,
            out,
            stage,
            manifest: Manifest {
                stage: stage.name().into(),
                version: env!("CARGO_PKG_VERSION").into(),
                seed: cfg.seed,
                config_hash: cfg.stage_hash(stage),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
        }
    }

    /// Verifies the upstream manifest and returns the path of `artifact`.
    fn upstream(&mut self, stage: Stage, artifact: &str) -> Result<PathBuf> {
        let missing = || Error::MissingUpstream {
            stage: stage.name(),
            artifact: artifact.to_string(),
        };
        let path = self.out.join(artifact);
        if !path.is_file() {
            return Err(missing());
        }
        let manifest_path = manifest_path(self.out, stage);
        if !manifest_path.is_file() {
            return Err(missing());
        }
        let manifest: Manifest = serde_json::from_slice(&read(&manifest_path)?)?;
        let stale = || Error::StaleUpstream {
            stage: stage.name(),
            artifact: artifact.to_string(),
        };
        if manifest.config_hash != self.cfg.stage_hash(stage) {
            return Err(stale());
        }
        let bytes = read(&path)?;
        let hash = sha256_hex(&bytes);
        if manifest.outputs.get(artifact) != Some(&hash) {
            return Err(stale());
        }
        self.manifest.inputs.insert(artifact.to_string(), hash);
        Ok(path)
    }

    fn input(&mut self, label: String, path: &Path) -> Result<()> {
        self.manifest.inputs.insert(label, sha256_hex(&read(path)?));
        Ok(())
    }

    fn write(&mut self, artifact: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(artifact);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.manifest
            .outputs
            .insert(artifact.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    /// Records a file some helper already wrote.
    fn wrote(&mut self, artifact: &str) -> Result<()> {
        let bytes = read(&self.out.join(artifact))?;
        self.manifest
            .outputs
            .insert(artifact.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn finish(self) -> Result<Vec<PathBuf>> {
        let path = manifest_path(self.out, self.stage);
        let dir = path.parent().expect("manifest has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_string_pretty(&self.manifest)? + "\n";
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        let mut written: Vec<PathBuf> = self
            .manifest
            .outputs
            .keys()
            .map(|a| self.out.join(a))
            .collect();
        written.push(path);
        Ok(written)
    }
}

fn manifest_path(out: &Path, stage: Stage) -> PathBuf {
    out.join(artifacts::MANIFESTS_DIR)
        .join(format!("{}.json", stage.name()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Runs `stage` (or every stage, in order, for [`Stage::All`]) and returns
/// the files written.
pub fn run_pipeline(cfg: &RunConfig, stage: Stage, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    if stage == Stage::All {
        let mut written = Vec::new();
        for st in Stage::ORDER {
            written.extend(run_pipeline(cfg, st, out)?);
        }
        written.extend(emit_all_plotdata(cfg, out)?);
        return Ok(written);
    }
    log::info!("running stage {}", stage.name());
    let run = StageRun::new(cfg, out, stage);
    let result = match stage {
        Stage::Ingest => ingest(run),
        Stage::Features => features(run),
        Stage::Graph => graph(run),
        Stage::Mi => mi(run),
        Stage::Train => train(run),
        Stage::Export => export(run),
        Stage::All => unreachable!(),
    };
    result.map_err(|e| Error::Stage {
        stage: stage.name(),
        source: Box::new(e),
    })
}

fn ingest_file(name: &str) -> String {
    format!("{}/{name}.csv", artifacts::INGEST_DIR)
}

fn ingest(mut run: StageRun<'_>) -> Result<Vec<PathBuf>> {
    let cfg = run.cfg;
    let range = cfg.data.range.map(|r| TimeRange {
        start: r.start,
        end: r.end,
    });
    let mut registry = AdapterRegistry::default();
    let cache = cfg
        .cache_dir
        .as_ref()
        .map_or_else(default_cache_dir, |p| cfg.resolve(p));
    let mut local: BTreeMap<&str, PathBuf> = BTreeMap::new();
    for (name, source, _) in cfg.sources() {
        let Some(source) = source else { continue };
        let path = match source {
            DataSource::Path(p) => {
                run.input(p.display().to_string(), &cfg.resolve(p))?;
                cfg.resolve(p)
            }
            DataSource::Adapter { adapter, fixture } => {
                let range = range.expect("validated");
                let source_name = format!("{adapter}-{name}");
                registry.register(Arc::new(ReplayAdapter::new(
                    source_name.clone(),
                    cfg.resolve(fixture),
                    range,
                )));
                let path = registry.fetch_remote(&source_name, range, &cache)?;
                run.input(format!("{adapter}:{}", fixture.display()), &path)?;
                path
            }
        };
        local.insert(name, path);
    }

    let in_range = |ts: i64| range.is_none_or(|r| ts >= r.start && ts <= r.end);
    let mut blocks = load_blocks(&local["blocks"])?;
    blocks.retain(|b| in_range(b.timestamp));
    if blocks.is_empty() {
        return Err(Error::NoRecords);
    }
    let kept: std::collections::HashSet<u64> = blocks.iter().map(|b| b.number).collect();
    let mut txs = load_transactions(&local["txs"])?;
    txs.retain(|t| kept.contains(&t.block_number));
    let mut candles = load_price_candles(&local["candles"])?;
    candles.retain(|c| in_range(c.timestamp));

    let mut write = |name: &str, text: String| run.write(&ingest_file(name), text.as_bytes());
    write("blocks", crate::ingest::to_csv_string(&blocks))?;
    write("txs", crate::ingest::to_csv_string(&txs))?;
    write("candles", crate::ingest::to_csv_string(&candles))?;
    if let Some(path) = local.get("pools") {
        let mut pools = load_pool_events(path)?;
        pools.retain(|p| in_range(p.timestamp));
        write("pools", crate::ingest::to_csv_string(&pools))?;
    }
    run.finish()
}

fn features(mut run: StageRun<'_>) -> Result<Vec<PathBuf>> {
    let cfg = run.cfg;
    let blocks = load_blocks(&run.upstream(Stage::Ingest, &ingest_file("blocks"))?)?;
    let txs = load_transactions(&run.upstream(Stage::Ingest, &ingest_file("txs"))?)?;
    let candles = load_price_candles(&run.upstream(Stage::Ingest, &ingest_file("candles"))?)?;
    let pools = if cfg.data.pools.is_some() {
        load_pool_events(&run.upstream(Stage::Ingest, &ingest_file("pools"))?)?
    } else {
        Vec::new()
    };
    let features = derive_features(&blocks, &txs, &pools, &cfg.econ, cfg.genesis_supply, cfg.fill)?;
    if candles.is_empty() {
        return Err(Error::NoRecords);
    }
    let price = FeatureMatrix::from_columns(
        candles.iter().map(|c| hour_of(c.timestamp)).collect(),
        [(PRICE_COLUMN.to_string(), candles.iter().map(|c| c.close).collect())],
    )?;
    // Keep only hours that have on-chain features.
    let joined = join_features(&[features, price], cfg.fill)?;
    let first = blocks.iter().map(|b| hour_of(b.timestamp)).min().unwrap_or(i64::MIN);
    let last = blocks.iter().map(|b| hour_of(b.timestamp)).max().unwrap_or(i64::MAX);
    let joined = joined.filter_rows(|r| (first..=last).contains(&joined.index()[r]));
    if joined.n_rows() == 0 {
        return Err(Error::NoRecords);
    }
    if joined.has_nan() {
        return Err(Error::InvalidSeries(
            "features still contain gaps after the fill policy".into(),
        ));
    }
    let path = run.out.join(artifacts::FEATURES);
    joined.write_csv(&path)?;
    run.wrote(artifacts::FEATURES)?;
    run.finish()
}

/// Features and price target read back from `features.csv`.
fn split_target(m: FeatureMatrix) -> Result<(FeatureMatrix, Vec<f64>)> {
    let mut m = m;
    let price = m.take_column(PRICE_COLUMN).ok_or_else(|| {
        Error::InvalidSeries(format!("features.csv has no `{PRICE_COLUMN}` column"))
    })?;
    Ok((m, price))
}

/// Columns that are non-constant in every leave-one-fold-out subset.
fn graph_columns(m: &FeatureMatrix, k: usize) -> Vec<String> {
    let n = m.n_rows();
    m.names()
        .iter()
        .zip(m.columns())
        .filter(|(name, col)| {
            let ok = (0..k).all(|f| {
                let (lo, hi) = (f * n / k, (f + 1) * n / k);
                let mut rest = col[..lo].iter().chain(&col[hi..]);
                let first = rest.clone().next().copied();
                first.is_some_and(|v| rest.any(|x| *x != v))
            });
            if !ok {
                log::warn!("graph: dropping `{name}`, constant within a fold subset");
            }
            ok
        })
        .map(|(name, _)| name.clone())
        .collect()
}

fn graph(mut run: StageRun<'_>) -> Result<Vec<PathBuf>> {
    let m = FeatureMatrix::read_csv(&run.upstream(Stage::Features, artifacts::FEATURES)?)?;
    let m = m.select(&graph_columns(&m, run.cfg.graph.k))?;
    let g = stability_graph(&m, &run.cfg.graph)?;
    if !g.unconverged_folds.is_empty() {
        log::warn!("graph: folds {:?} did not converge", g.unconverged_folds);
    }
    export_graph(&g, run.out)?;
    run.wrote(artifacts::GRAPH_EDGES)?;
    run.wrote(artifacts::PARTIAL_CORR)?;
    run.finish()
}

fn mi(mut run: StageRun<'_>) -> Result<Vec<PathBuf>> {
    let m = FeatureMatrix::read_csv(&run.upstream(Stage::Features, artifacts::FEATURES)?)?;
    let start = m.index()[0];
    let (m, price) = split_target(m)?;
    let price = TimeSeries::new(PRICE_COLUMN, start, price)?;
    let bins = run.cfg.mi.bins.unwrap_or_else(|| default_bins(m.n_rows()));
    let reports = mi_alpha_sweep(&m, &price, &run.cfg.mi.alphas, Some(bins))?;
    run.write(artifacts::MI_REPORT, mi_report_csv(&reports).as_bytes())?;
    run.finish()
}

/// Final model plus the normalization its inputs need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub normalization: NormalizationStats,
    pub model: Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub rmse: f64,
    pub mape: f64,
    pub r2: f64,
    pub median_window_r2: f64,
    pub windows: usize,
}

fn train(mut run: StageRun<'_>) -> Result<Vec<PathBuf>> {
    let cfg = run.cfg;
    let m = FeatureMatrix::read_csv(&run.upstream(Stage::Features, artifacts::FEATURES)?)?;
    let (m, price) = split_target(m)?;

    let mut metrics: BTreeMap<String, HorizonMetrics> = BTreeMap::new();
    for &h in &cfg.evaluation.horizons {
        let params = RollingParams {
            horizon_hours: h,
            min_train_hours: cfg.evaluation.min_train_hours,
            max_train_hours: cfg.evaluation.max_train_hours,
            model: cfg.model.clone(),
            seed: cfg.seed,
        };
        let report = rolling_evaluate(&m, &price, &params)?;
        run.write(&artifacts::predictions(h), predictions_csv(&report).as_bytes())?;
        let Metrics { rmse, mape, r2 } = report.metrics;
        metrics.insert(
            format!("{h}h"),
            HorizonMetrics {
                rmse,
                mape,
                r2,
                median_window_r2: report.median_window_r2,
                windows: report.windows.len(),
            },
        );
    }
    run.write(
        artifacts::METRICS,
        (serde_json::to_string_pretty(&metrics)? + "\n").as_bytes(),
    )?;

    let normalization = NormalizationStats::fit(&m)?;
    let x = normalization.apply(&m)?;
    let mut model = cfg.model.fit(&x.to_dmatrix(), &price, cfg.seed)?;
    if let Model::Forest(f) = &mut model {
        f.feature_names = x.names().to_vec();
        f.training_meta = TrainingMeta {
            rows: x.n_rows(),
            time_range: Some((x.index()[0], *x.index().last().expect("non-empty"))),
        };
    }
    let trained = TrainedModel {
        normalization,
        model,
    };
    run.write(
        artifacts::MODEL,
        (serde_json::to_string_pretty(&trained)? + "\n").as_bytes(),
    )?;
    run.finish()
}

fn export(mut run: StageRun<'_>) -> Result<Vec<PathBuf>> {
    let cfg = run.cfg;
    let trained: TrainedModel =
        serde_json::from_slice(&read(&run.upstream(Stage::Train, artifacts::MODEL)?)?)?;
    let Model::Forest(forest) = &trained.model else {
        return Err(Error::Config(format!(
            "export needs a forest model, config trains `{}`",
            cfg.model.name()
        )));
    };
    let fixed = quantize_forest(forest, cfg.export.scale_bits)?;
    let bytes = serialize(&fixed);
    // Catch any writer/reader disagreement before publishing the artifact.
    debug_assert_eq!(deserialize(&bytes)?, fixed);
    run.write(artifacts::MODEL_BYTES, &bytes)?;
    run.write(artifacts::MODEL_NODES, node_table_csv(&fixed).as_bytes())?;
    run.write(
        artifacts::NORMALIZATION,
        (serde_json::to_string_pretty(&trained.normalization)? + "\n").as_bytes(),
    )?;

    // Sense check: the integer model against the recorded price.
    let m = FeatureMatrix::read_csv(&run.upstream(Stage::Features, artifacts::FEATURES)?)?;
    let (m, price) = split_target(m)?;
    let x = trained.normalization.apply(&m)?;
    let predicted = (0..x.n_rows())
        .map(|r| {
            let row: Vec<f64> = x.columns().iter().map(|c| c[r]).collect();
            let q = quantize_input(&row, fixed.scale_bits)?;
            Ok(from_fixed(eval_fixed(&fixed, &q)?, fixed.scale_bits))
        })
        .collect::<Result<Vec<_>>>()?;
    let flagged = sense_check(&predicted, &price, cfg.export.sense_tolerance)?;
    let mut csv = String::from("timestamp,predicted,reference,relative\n");
    for d in &flagged {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            x.index()[d.index],
            fmt_f64(d.predicted),
            fmt_f64(d.reference),
            fmt_f64(d.relative)
        );
    }
    if !flagged.is_empty() {
        log::warn!("sense check flagged {} of {} hours", flagged.len(), predicted.len());
    }
    run.write(artifacts::SENSE_CHECK, csv.as_bytes())?;
    run.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    PredVsActual,
    MiBars,
    GraphEdges,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pred_vs_actual" => Ok(PlotKind::PredVsActual),
            "mi_bars" => Ok(PlotKind::MiBars),
            "graph_edges" => Ok(PlotKind::GraphEdges),
            other => Err(Error::Config(format!("unknown plot kind `{other}`"))),
        }
    }
}

fn read_table(path: &Path, expected: &[&str]) -> Result<Vec<csv::StringRecord>> {
    if !path.is_file() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "plot input not found"),
        ));
    }
    let mut reader = csv::Reader::from_path(path)?;
    if reader.headers()? != expected {
        return Err(Error::BadHeader {
            path: path.into(),
            expected: expected.join(","),
        });
    }
    Ok(reader.records().collect::<std::result::Result<_, _>>()?)
}

fn parse_f64(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<f64> {
    let raw = rec.get(i).unwrap_or_default();
    raw.parse().map_err(|e| Error::MalformedRow {
        path: path.into(),
        line: rec.position().map_or(0, |p| p.line()),
        reason: format!("`{raw}`: {e}"),
    })
}

/// Writes a tidy CSV for an external plotter.
///
/// - `pred_vs_actual`: `timestamp,actual,predicted,error` from a predictions file.
/// - `mi_bars`: `feature,alpha,mi_bits` from an MI report, sorted by MI descending.
/// - `graph_edges`: `src,dst,weight,partial_corr,abs_partial_corr` sorted by
///   absolute partial correlation descending.
pub fn emit_plotdata(kind: PlotKind, input: &Path, output: &Path) -> Result<PathBuf> {
    let mut out = String::new();
    match kind {
        PlotKind::PredVsActual => {
            let rows = read_table(input, &["timestamp", "actual", "predicted", "window_id"])?;
            out.push_str("timestamp,actual,predicted,error\n");
            for r in &rows {
                let (a, p) = (parse_f64(input, r, 1)?, parse_f64(input, r, 2)?);
                let _ = writeln!(out, "{},{},{},{}", &r[0], fmt_f64(a), fmt_f64(p), fmt_f64(p - a));
            }
        }
        PlotKind::MiBars => {
            let rows = read_table(input, &["feature", "alpha", "mi_nats", "mi_bits", "bins", "n"])?;
            let mut bars = rows
                .iter()
                .map(|r| Ok((r[0].to_string(), parse_f64(input, r, 1)?, parse_f64(input, r, 3)?)))
                .collect::<Result<Vec<_>>>()?;
            bars.sort_by(|a, b| {
                b.2.total_cmp(&a.2)
                    .then(a.1.total_cmp(&b.1))
                    .then_with(|| a.0.cmp(&b.0))
            });
            out.push_str("feature,alpha,mi_bits\n");
            for (f, a, mi) in bars {
                let _ = writeln!(out, "{f},{},{}", fmt_f64(a), fmt_f64(mi));
            }
        }
        PlotKind::GraphEdges => {
            let rows = read_table(input, &["src", "dst", "weight", "partial_corr"])?;
            let mut edges = rows
                .iter()
                .map(|r| {
                    Ok((
                        r[0].to_string(),
                        r[1].to_string(),
                        parse_f64(input, r, 2)?,
                        parse_f64(input, r, 3)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            edges.sort_by(|a, b| b.3.abs().total_cmp(&a.3.abs()).then_with(|| (&a.0, &a.1).cmp(&(&b.0, &b.1))));
            out.push_str("src,dst,weight,partial_corr,abs_partial_corr\n");
            for (s, d, w, pc) in edges {
                let _ = writeln!(out, "{s},{d},{},{},{}", fmt_f64(w), fmt_f64(pc), fmt_f64(pc.abs()));
            }
        }
    }
    if let Some(dir) = output.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(output, out).map_err(|e| Error::io(output, e))?;
    Ok(output.to_path_buf())
}

fn emit_all_plotdata(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let plots = out.join(artifacts::PLOTS_DIR);
    let mut written = Vec::new();
    for &h in &cfg.evaluation.horizons {
        written.push(emit_plotdata(
            PlotKind::PredVsActual,
            &out.join(artifacts::predictions(h)),
            &plots.join(format!("pred_vs_actual_{h}h.csv")),
        )?);
    }
    written.push(emit_plotdata(
        PlotKind::MiBars,
        &out.join(artifacts::MI_REPORT),
        &plots.join("mi_bars.csv"),
    )?);
    written.push(emit_plotdata(
        PlotKind::GraphEdges,
        &out.join(artifacts::GRAPH_EDGES),
        &plots.join("graph_edges.csv"),
    )?);
    Ok(written)
}
