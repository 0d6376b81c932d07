//! Raw record loading and the remote-source adapter contract.
//!
//! Every record type has one CSV schema. Token amounts stay integer base units
//! (wei scale) until feature derivation converts them.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use csv::StringRecord;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{fmt_f64, HOUR};

/// Base units per whole token.
pub const WEI_PER_ETH: f64 = 1e18;

/// Environment variable overriding the adapter cache location.
pub const CACHE_DIR_ENV: &str = "COUNTERPOINT_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRecord {
    pub number: u64,
    pub timestamp: i64,
    pub gas_limit: u64,
    pub gas_used: u64,
    pub difficulty: u128,
    pub size_bytes: u64,
    pub miner_reward: u128,
    pub fees_total: u128,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxRecord {
    pub block_number: u64,
    pub from_addr: String,
    pub to_addr: String,
    pub value: u128,
    pub gas_price: u128,
    pub gas_used: u64,
}

impl TxRecord {
    /// Fee paid in base units.
    pub fn fee(&self) -> u128 {
        self.gas_price * self.gas_used as u128
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolEventKind {
    Mint,
    Burn,
    Swap,
}

impl PoolEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolEventKind::Mint => "mint",
            PoolEventKind::Burn => "burn",
            PoolEventKind::Swap => "swap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolEvent {
    pub timestamp: i64,
    pub pool_id: String,
    pub kind: PoolEventKind,
    pub eth_delta: i128,
    pub stable_delta: i128,
    pub liquidity_after: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceCandle {
    pub timestamp: i64,
    pub close: f64,
    pub volume: f64,
}

type FieldError = (&'static str, String);

/// One CSV schema.
pub trait CsvRecord: Sized {
    const HEADER: &'static [&'static str];

    fn parse(record: &StringRecord) -> Result<Self, FieldError>;

    /// Checks domain invariants, naming the offending field.
    fn validate(&self) -> Result<(), FieldError>;

    fn write_row(&self, out: &mut String);

    fn sort_key(&self) -> i64;
}

fn field<T: std::str::FromStr>(
    record: &StringRecord,
    i: usize,
    name: &'static str,
) -> Result<T, FieldError>
where
    T::Err: std::fmt::Display,
{
    let raw = record.get(i).ok_or((name, "missing".to_string()))?;
    raw.trim()
        .parse()
        .map_err(|e: T::Err| (name, format!("`{raw}`: {e}")))
}

impl CsvRecord for BlockRecord {
    const HEADER: &'static [&'static str] = &[
        "number",
        "timestamp",
        "gas_limit",
        "gas_used",
        "difficulty",
        "size_bytes",
        "miner_reward",
        "fees_total",
    ];

    fn parse(r: &StringRecord) -> Result<Self, FieldError> {
        Ok(Self {
            number: field(r, 0, "number")?,
            timestamp: field(r, 1, "timestamp")?,
            gas_limit: field(r, 2, "gas_limit")?,
            gas_used: field(r, 3, "gas_used")?,
            difficulty: field(r, 4, "difficulty")?,
            size_bytes: field(r, 5, "size_bytes")?,
            miner_reward: field(r, 6, "miner_reward")?,
            fees_total: field(r, 7, "fees_total")?,
        })
    }

    fn validate(&self) -> Result<(), FieldError> {
        if self.gas_used > self.gas_limit {
            return Err((
                "gas_used",
                format!("{} exceeds gas_limit {}", self.gas_used, self.gas_limit),
            ));
        }
        if self.timestamp <= 0 {
            return Err(("timestamp", "must be positive".into()));
        }
        if self.size_bytes == 0 {
            return Err(("size_bytes", "must be positive".into()));
        }
        Ok(())
    }

    fn write_row(&self, out: &mut String) {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            self.number,
            self.timestamp,
            self.gas_limit,
            self.gas_used,
            self.difficulty,
            self.size_bytes,
            self.miner_reward,
            self.fees_total
        )
        .unwrap();
    }

    fn sort_key(&self) -> i64 {
        self.number as i64
    }
}

impl CsvRecord for TxRecord {
    const HEADER: &'static [&'static str] = &[
        "block_number",
        "from_addr",
        "to_addr",
        "value",
        "gas_price",
        "gas_used",
    ];

    fn parse(r: &StringRecord) -> Result<Self, FieldError> {
        Ok(Self {
            block_number: field(r, 0, "block_number")?,
            from_addr: field(r, 1, "from_addr")?,
            to_addr: field(r, 2, "to_addr")?,
            // Unsigned parsing already rejects negative value and gas_price.
            value: field(r, 3, "value")?,
            gas_price: field(r, 4, "gas_price")?,
            gas_used: field(r, 5, "gas_used")?,
        })
    }

    fn validate(&self) -> Result<(), FieldError> {
        if self.from_addr.is_empty() {
            return Err(("from_addr", "empty".into()));
        }
        if self.to_addr.is_empty() {
            return Err(("to_addr", "empty".into()));
        }
        Ok(())
    }

    fn write_row(&self, out: &mut String) {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            self.block_number,
            self.from_addr,
            self.to_addr,
            self.value,
            self.gas_price,
            self.gas_used
        )
        .unwrap();
    }

    fn sort_key(&self) -> i64 {
        self.block_number as i64
    }
}

impl CsvRecord for PoolEvent {
    const HEADER: &'static [&'static str] = &[
        "timestamp",
        "pool_id",
        "kind",
        "eth_delta",
        "stable_delta",
        "liquidity_after",
    ];

    fn parse(r: &StringRecord) -> Result<Self, FieldError> {
        let kind = match r.get(2).map(str::trim) {
            Some("mint") => PoolEventKind::Mint,
            Some("burn") => PoolEventKind::Burn,
            Some("swap") => PoolEventKind::Swap,
            Some(other) => return Err(("kind", format!("unknown kind `{other}`"))),
            None => return Err(("kind", "missing".into())),
        };
        Ok(Self {
            timestamp: field(r, 0, "timestamp")?,
            pool_id: field(r, 1, "pool_id")?,
            kind,
            eth_delta: field(r, 3, "eth_delta")?,
            stable_delta: field(r, 4, "stable_delta")?,
            liquidity_after: field(r, 5, "liquidity_after")?,
        })
    }

    fn validate(&self) -> Result<(), FieldError> {
        if self.timestamp <= 0 {
            return Err(("timestamp", "must be positive".into()));
        }
        if self.pool_id.is_empty() {
            return Err(("pool_id", "empty".into()));
        }
        Ok(())
    }

    fn write_row(&self, out: &mut String) {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            self.timestamp,
            self.pool_id,
            self.kind.as_str(),
            self.eth_delta,
            self.stable_delta,
            self.liquidity_after
        )
        .unwrap();
    }

    fn sort_key(&self) -> i64 {
        self.timestamp
    }
}

impl CsvRecord for PriceCandle {
    const HEADER: &'static [&'static str] = &["timestamp", "close", "volume"];

    fn parse(r: &StringRecord) -> Result<Self, FieldError> {
        Ok(Self {
            timestamp: field(r, 0, "timestamp")?,
            close: field(r, 1, "close")?,
            volume: field(r, 2, "volume")?,
        })
    }

    fn validate(&self) -> Result<(), FieldError> {
        if self.timestamp.rem_euclid(HOUR) != 0 {
            return Err(("timestamp", format!("{} is not hour aligned", self.timestamp)));
        }
        if !(self.close > 0.0 && self.close.is_finite()) {
            return Err(("close", format!("{} must be positive", self.close)));
        }
        if !(self.volume >= 0.0 && self.volume.is_finite()) {
            return Err(("volume", format!("{} must be non-negative", self.volume)));
        }
        Ok(())
    }

    fn write_row(&self, out: &mut String) {
        writeln!(
            out,
            "{},{},{}",
            self.timestamp,
            fmt_f64(self.close),
            fmt_f64(self.volume)
        )
        .unwrap();
    }

    fn sort_key(&self) -> i64 {
        self.timestamp
    }
}

/// Loads, validates and stably sorts one CSV file.
pub fn load_records<T: CsvRecord>(path: &Path) -> Result<Vec<T>> {
    Ok(load_with_lines(path)?.into_iter().map(|(_, r)| r).collect())
}

fn load_with_lines<T: CsvRecord>(path: &Path) -> Result<Vec<(u64, T)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::MalformedRow {
                path: path.into(),
                line: 0,
                reason: format!("{other:?}"),
            },
        })?;
    let header = reader.headers()?.clone();
    if header.iter().map(str::trim).ne(T::HEADER.iter().copied()) {
        return Err(Error::BadHeader {
            path: path.into(),
            expected: T::HEADER.join(","),
        });
    }

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != T::HEADER.len() {
            return Err(Error::MalformedRow {
                path: path.into(),
                line,
                reason: format!("expected {} fields, got {}", T::HEADER.len(), record.len()),
            });
        }
        let row = T::parse(&record).map_err(|(field, reason)| Error::MalformedRow {
            path: path.into(),
            line,
            reason: format!("{field}: {reason}"),
        })?;
        row.validate().map_err(|(field, reason)| Error::InvalidField {
            path: path.into(),
            line,
            field,
            reason,
        })?;
        rows.push((line, row));
    }
    rows.sort_by_key(|(_, r)| r.sort_key());
    Ok(rows)
}

pub fn load_blocks(path: &Path) -> Result<Vec<BlockRecord>> {
    load_records(path)
}

pub fn load_transactions(path: &Path) -> Result<Vec<TxRecord>> {
    load_records(path)
}

pub fn load_pool_events(path: &Path) -> Result<Vec<PoolEvent>> {
    load_records(path)
}

/// Loads candles, rejecting two candles in the same hour.
pub fn load_price_candles(path: &Path) -> Result<Vec<PriceCandle>> {
    let candles: Vec<(u64, PriceCandle)> = load_with_lines(path)?;
    if let Some(w) = candles
        .windows(2)
        .find(|w| w[0].1.timestamp == w[1].1.timestamp)
    {
        return Err(Error::DuplicateTimestamp {
            path: path.into(),
            line: w[0].0.max(w[1].0),
            timestamp: w[1].1.timestamp,
        });
    }
    Ok(candles.into_iter().map(|(_, c)| c).collect())
}

/// Renders records in their CSV schema.
pub fn to_csv_string<T: CsvRecord>(rows: &[T]) -> String {
    let mut out = T::HEADER.join(",");
    out.push('\n');
    for row in rows {
        row.write_row(&mut out);
    }
    out
}

pub fn write_records<T: CsvRecord>(path: &Path, rows: &[T]) -> Result<()> {
    std::fs::write(path, to_csv_string(rows)).map_err(|e| Error::io(path, e))
}

/// Inclusive epoch-second range requested from a source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

impl TimeRange {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end < start {
            return Err(Error::param(
                "range",
                format!("end {end} is before start {start}"),
            ));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, other: &TimeRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

/// A remote data source producing a CSV in one of the `load_*` schemas.
///
/// Live connectors (warehouse queries, graph indexers, exchange APIs) plug in
/// behind this trait; the crate ships only [`ReplayAdapter`].
pub trait SourceAdapter: Send + Sync {
    fn name(&self) -> &str;

    /// Writes the requested range to `dest`.
    fn fetch(&self, range: TimeRange, dest: &Path) -> std::result::Result<(), String>;
}

/// Serves a checked-in fixture file byte for byte.
pub struct ReplayAdapter {
    name: String,
    fixture: PathBuf,
    coverage: TimeRange,
    calls: AtomicUsize,
}

impl ReplayAdapter {
    pub fn new(name: impl Into<String>, fixture: impl Into<PathBuf>, coverage: TimeRange) -> Self {
        Self {
            name: name.into(),
            fixture: fixture.into(),
            coverage,
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of times the adapter was asked to fetch.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl SourceAdapter for ReplayAdapter {
    fn name(&self) -> &str {
        &self.name
    }

    fn fetch(&self, range: TimeRange, dest: &Path) -> std::result::Result<(), String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !self.coverage.contains(&range) {
            return Err(format!(
                "fixture covers [{}, {}], requested [{}, {}]",
                self.coverage.start, self.coverage.end, range.start, range.end
            ));
        }
        std::fs::copy(&self.fixture, dest)
            .map(|_| ())
            .map_err(|e| format!("{}: {e}", self.fixture.display()))
    }
}

/// Named adapters plus a file cache shared by concurrent callers.
pub struct AdapterRegistry {
    adapters: BTreeMap<String, Arc<dyn SourceAdapter>>,
    max_retries: u32,
    key_locks: Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>,
}

impl Default for AdapterRegistry {
    fn default() -> Self {
        Self::new(2)
    }
}

impl AdapterRegistry {
    pub fn new(max_retries: u32) -> Self {
        Self {
            adapters: BTreeMap::new(),
            max_retries,
            key_locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn register(&mut self, adapter: Arc<dyn SourceAdapter>) {
        self.adapters.insert(adapter.name().to_string(), adapter);
    }

    /// Returns a local CSV for `range`, fetching only on a cache miss.
    ///
    /// One writer per cache key; the file is renamed into place so readers
    /// never observe a partial download.
    pub fn fetch_remote(&self, source: &str, range: TimeRange, cache_dir: &Path) -> Result<PathBuf> {
        let range = TimeRange::new(range.start, range.end)?;
        let adapter = self
            .adapters
            .get(source)
            .ok_or_else(|| Error::UnknownAdapter(source.to_string()))?;
        let target = cache_dir.join(format!("{source}-{}-{}.csv", range.start, range.end));

        let lock = {
            let mut locks = self.key_locks.lock().unwrap();
            locks.entry(target.clone()).or_default().clone()
        };
        let _guard = lock.lock().unwrap();
        if target.is_file() {
            return Ok(target);
        }
        std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
        let tmp = target.with_extension(format!("tmp{}", std::process::id()));

        let mut attempt = 0;
        loop {
            match adapter.fetch(range, &tmp) {
                Ok(()) => break,
                Err(reason) if attempt >= self.max_retries => {
                    let _ = std::fs::remove_file(&tmp);
                    return Err(Error::Adapter {
                        adapter: source.to_string(),
                        retries: attempt,
                        reason,
                    });
                }
                Err(reason) => {
                    log::warn!("adapter `{source}` attempt {} failed: {reason}", attempt + 1);
                    attempt += 1;
                }
            }
        }
        std::fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
        Ok(target)
    }
}

/// Cache location: `$COUNTERPOINT_CACHE_DIR`, else `.counterpoint-cache`.
pub fn default_cache_dir() -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".counterpoint-cache"))
}
