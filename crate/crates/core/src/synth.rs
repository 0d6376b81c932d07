//! Synthetic markets in which price drives on-chain activity.
//!
//! A geometric Brownian price path is pushed through the economic relations
//! the feature set is built on, inverted: per-transaction fees in ETH scale
//! with `F(ρ)/price`, transferred value with `price · supply`, hash rate with
//! `price · (reward + fees)`, and address spreading with a power of price.
//! Each channel then gets multiplicative log-normal noise, and optionally a
//! slow random-walk drift in its gain so the price link itself changes over
//! time.

use std::path::{Path, PathBuf};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{CongestionCurve, ETH_GENESIS_SUPPLY};
use crate::ingest::{write_records, BlockRecord, PriceCandle, TxRecord, WEI_PER_ETH};
use crate::rng::{mix, seeded, Rng};
use crate::timeseries::{TimeSeries, HOUR};

/// Relative standard deviation of the log-normal noise on each channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseLevels {
    pub fees: f64,
    pub volume: f64,
    pub hash_rate: f64,
    pub spreading: f64,
    /// Innovation scale of the congestion process (logit units).
    pub rho: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            fees: 0.002,
            volume: 0.002,
            hash_rate: 0.002,
            spreading: 0.01,
            rho: 0.01,
        }
    }
}

impl NoiseLevels {
    pub fn zero() -> Self {
        Self {
            fees: 0.0,
            volume: 0.0,
            hash_rate: 0.0,
            spreading: 0.0,
            rho: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub hours: usize,
    /// First hour (unix seconds, aligned to the hour).
    pub start: i64,
    /// Price at hour 0, USD.
    pub price0: f64,
    /// Mean log-return per hour.
    pub drift: f64,
    /// Log-return standard deviation per √hour.
    pub vol: f64,
    /// Hourly transferred value as a fraction of market cap (`price · supply`).
    pub velocity_v: f64,
    /// Supply before the first block, tokens.
    pub supply0: f64,
    /// Per-transaction fee in USD at full congestion, multiplying `F(ρ)`.
    pub fee_gain: f64,
    /// Hash rate per USD of hourly block payoff (hashes/s per USD).
    pub hash_gain: f64,
    /// Issuance per block, tokens.
    pub block_reward: f64,
    pub blocks_per_hour: usize,
    pub max_txs_per_block: usize,
    pub gas_limit: u64,
    pub f_of_rho: CongestionCurve,
    /// Long-run mean of the congestion level ρ.
    pub rho_mean: f64,
    /// AR(1) persistence of the congestion process in logit space.
    pub rho_persistence: f64,
    /// Address spreading at `price0` and its price elasticity.
    pub spreading_base: f64,
    pub spreading_elasticity: f64,
    /// Deterministic change per hour of the log gain of each price-linked
    /// channel, e.g. hardware efficiency raising hash rate per USD.
    pub link_trend: f64,
    /// Per-√hour volatility of the log gain of each price-linked channel.
    pub link_drift: f64,
    /// Fees, transferred value and hash rate respond to
    /// `price0 · (price / price0)^k` instead of price itself.
    pub link_exponent: f64,
    pub noise_levels: NoiseLevels,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            hours: 8760,
            start: 1_577_836_800,
            price0: 2000.0,
            drift: 0.0,
            vol: 0.01,
            velocity_v: 4e-7,
            supply0: ETH_GENESIS_SUPPLY,
            fee_gain: 5.0,
            hash_gain: 2.5e11,
            block_reward: 2.0,
            blocks_per_hour: 4,
            max_txs_per_block: 10,
            gas_limit: 15_000_000,
            f_of_rho: CongestionCurve::default(),
            rho_mean: 0.7,
            rho_persistence: 0.99,
            spreading_base: 1.5,
            spreading_elasticity: 0.5,
            link_trend: 3e-5,
            link_drift: 0.0,
            link_exponent: 1.0,
            noise_levels: NoiseLevels::default(),
            seed: 7,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} must be positive")))
            }
        };
        if self.hours < 48 {
            return Err(Error::param("hours", "need at least 48 hours"));
        }
        if self.start <= 0 || self.start % HOUR != 0 {
            return Err(Error::param("start", "must be a positive whole hour"));
        }
        positive("price0", self.price0)?;
        positive("supply0", self.supply0)?;
        positive("velocity_v", self.velocity_v)?;
        positive("fee_gain", self.fee_gain)?;
        positive("hash_gain", self.hash_gain)?;
        positive("block_reward", self.block_reward)?;
        positive("spreading_base", self.spreading_base)?;
        if self.blocks_per_hour == 0 || self.max_txs_per_block == 0 || self.gas_limit == 0 {
            return Err(Error::param("blocks_per_hour", "block layout must be non-empty"));
        }
        if !(self.rho_mean > 0.0 && self.rho_mean < 1.0) {
            return Err(Error::param("rho_mean", "must lie in (0, 1)"));
        }
        if !(self.rho_persistence >= 0.0 && self.rho_persistence < 1.0) {
            return Err(Error::param("rho_persistence", "must lie in [0, 1)"));
        }
        let n = &self.noise_levels;
        for v in [n.fees, n.volume, n.hash_rate, n.spreading, n.rho, self.link_drift, self.vol] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param("noise_levels", "must be non-negative"));
            }
        }
        positive("link_exponent", self.link_exponent)?;
        if !self.drift.is_finite() || !self.link_trend.is_finite() || !self.spreading_elasticity.is_finite() {
            return Err(Error::param("drift", "must be finite"));
        }
        Ok(())
    }
}

// Independent random streams, one per channel.
const STREAM_PRICE: u64 = 0;
const STREAM_RHO: u64 = 1;
const STREAM_FEES: u64 = 2;
const STREAM_VOLUME: u64 = 3;
const STREAM_HASH: u64 = 4;
const STREAM_SPREADING: u64 = 5;
const STREAM_DRIFT: u64 = 6;

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Geometric Brownian motion: `ln p_{h+1} − ln p_h = drift + vol · z`.
pub fn gen_price_path(p: &SynthParams) -> Result<TimeSeries> {
    p.validate()?;
    let mut rng = seeded(mix(p.seed, STREAM_PRICE));
    let mut log_return = 0.0;
    let mut values = Vec::with_capacity(p.hours);
    values.push(p.price0);
    for _ in 1..p.hours {
        log_return += p.drift + p.vol * normal(&mut rng);
        values.push(p.price0 * log_return.exp());
    }
    TimeSeries::new("price_usd", p.start, values)
}

/// The hourly channel values the records were built from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynthTruth {
    pub rho: Vec<f64>,
    /// Mean fee per transaction, tokens.
    pub fee_eth: Vec<f64>,
    /// Transferred value, tokens.
    pub volume_eth: Vec<f64>,
    /// Hashes per second.
    pub hash_rate: Vec<f64>,
    pub spreading: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SynthRecords {
    pub blocks: Vec<BlockRecord>,
    pub txs: Vec<TxRecord>,
    pub candles: Vec<PriceCandle>,
    pub truth: SynthTruth,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn to_wei(eth: f64) -> u128 {
    (eth * WEI_PER_ETH).round() as u128
}

fn address(kind: u8, hour: usize, i: usize) -> String {
    format!("0x{kind:02x}{hour:08x}{i:030x}")
}

/// Spreads `total` over `parts` integers, remainder on the last one.
fn split_evenly(total: u128, parts: usize) -> impl Iterator<Item = u128> {
    let share = total / parts as u128;
    let last = total - share * (parts as u128 - 1);
    (0..parts).map(move |i| if i + 1 == parts { last } else { share })
}

/// Block, transaction and candle records for `price`.
pub fn gen_chain_features(price: &TimeSeries, p: &SynthParams) -> Result<SynthRecords> {
    p.validate()?;
    if price.values().iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidSeries("price must be positive".into()));
    }
    let noise = &p.noise_levels;
    let mut rho_rng = seeded(mix(p.seed, STREAM_RHO));
    let mut fee_rng = seeded(mix(p.seed, STREAM_FEES));
    let mut vol_rng = seeded(mix(p.seed, STREAM_VOLUME));
    let mut hash_rng = seeded(mix(p.seed, STREAM_HASH));
    let mut spread_rng = seeded(mix(p.seed, STREAM_SPREADING));
    let mut drift_rng = seeded(mix(p.seed, STREAM_DRIFT));
    let lognormal = |rng: &mut Rng, sigma: f64| (sigma * normal(rng)).exp();

    let b = p.blocks_per_hour;
    let logit_mean = (p.rho_mean / (1.0 - p.rho_mean)).ln();
    // Stationary start for the congestion process.
    let stationary = (1.0 - p.rho_persistence * p.rho_persistence).sqrt();
    let mut u = noise.rho * normal(&mut rho_rng) / stationary;
    let mut gains = [0.0f64; 4];
    let mut supply = p.supply0;
    let mut out = SynthRecords::default();
    let mut block_number = 1u64;

    for (h, &px) in price.values().iter().enumerate() {
        if h > 0 {
            u = p.rho_persistence * u + noise.rho * normal(&mut rho_rng);
            for g in &mut gains {
                *g += p.link_trend + p.link_drift * normal(&mut drift_rng);
            }
        }
        let rho = logistic(logit_mean + u);
        let txs_per_block = ((rho * p.max_txs_per_block as f64).round() as usize).max(1);
        let n_tx = txs_per_block * b;
        supply += p.block_reward * b as f64;

        let px_link = if p.link_exponent == 1.0 {
            px
        } else {
            p.price0 * (px / p.price0).powf(p.link_exponent)
        };
        let fee_eth = p.fee_gain * p.f_of_rho.eval(rho) / px_link
            * gains[0].exp()
            * lognormal(&mut fee_rng, noise.fees);
        let volume_eth =
            p.velocity_v * px_link * supply * gains[1].exp() * lognormal(&mut vol_rng, noise.volume);
        let fees_per_block = fee_eth * txs_per_block as f64;
        let hash_rate = p.hash_gain
            * px_link
            * (p.block_reward + fees_per_block)
            * gains[2].exp()
            * lognormal(&mut hash_rng, noise.hash_rate);
        let spreading = p.spreading_base
            * (px / p.price0).powf(p.spreading_elasticity)
            * gains[3].exp()
            * lognormal(&mut spread_rng, noise.spreading);

        let (n_to, n_from) = if spreading >= 1.0 {
            (n_tx, ((n_tx as f64 / spreading).round() as usize).clamp(1, n_tx))
        } else {
            (((n_tx as f64 * spreading).round() as usize).clamp(1, n_tx), n_tx)
        };
        let gas_used = (rho * p.gas_limit as f64).round() as u64;
        let difficulty = (hash_rate * HOUR as f64 / b as f64).round() as u128;
        let mut values = split_evenly(to_wei(volume_eth), n_tx);
        let ts0 = p.start + h as i64 * HOUR;
        let mut tx_index = 0usize;
        for j in 0..b {
            let mut fees_total = 0u128;
            for gas in split_evenly(gas_used as u128, txs_per_block) {
                let gas = gas.max(1) as u64;
                let gas_price = (to_wei(fee_eth) as f64 / gas as f64).round() as u128;
                fees_total += gas_price * gas as u128;
                out.txs.push(TxRecord {
                    block_number,
                    from_addr: address(0xf, h, tx_index % n_from),
                    to_addr: address(0x7, h, tx_index % n_to),
                    value: values.next().unwrap_or(0),
                    gas_price,
                    gas_used: gas,
                });
                tx_index += 1;
            }
            out.blocks.push(BlockRecord {
                number: block_number,
                timestamp: ts0 + (j as i64 * HOUR) / b as i64,
                gas_limit: p.gas_limit,
                gas_used,
                difficulty,
                size_bytes: 600 + 110 * txs_per_block as u64,
                miner_reward: to_wei(p.block_reward),
                fees_total,
            });
            block_number += 1;
        }
        out.candles.push(PriceCandle {
            timestamp: ts0,
            close: px,
            volume: volume_eth,
        });
        out.truth.rho.push(rho);
        out.truth.fee_eth.push(fee_eth);
        out.truth.volume_eth.push(volume_eth);
        out.truth.hash_rate.push(hash_rate);
        out.truth.spreading.push(n_to as f64 / n_from as f64);
    }
    Ok(out)
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    generator: &'static str,
    version: &'static str,
    seed: u64,
    params: &'a SynthParams,
    files: &'a [String],
}

pub const BLOCKS_FILE: &str = "blocks.csv";
pub const TXS_FILE: &str = "txs.csv";
pub const CANDLES_FILE: &str = "candles.csv";
pub const MANIFEST_FILE: &str = "synth_manifest.json";

/// Writes `blocks.csv`, `txs.csv`, `candles.csv` and a manifest recording
/// every parameter; returns the paths in that order.
pub fn gen_dataset(p: &SynthParams, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let price = gen_price_path(p)?;
    let records = gen_chain_features(&price, p)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths: Vec<PathBuf> = [BLOCKS_FILE, TXS_FILE, CANDLES_FILE, MANIFEST_FILE]
        .iter()
        .map(|f| out_dir.join(f))
        .collect();
    write_records(&paths[0], &records.blocks)?;
    write_records(&paths[1], &records.txs)?;
    write_records(&paths[2], &records.candles)?;
    let files: Vec<String> = [BLOCKS_FILE, TXS_FILE, CANDLES_FILE].map(String::from).to_vec();
    let manifest = SynthManifest {
        generator: "counterpoint-synth",
        version: env!("CARGO_PKG_VERSION"),
        seed: p.seed,
        params: p,
        files: &files,
    };
    let json = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&paths[3], json).map_err(|e| Error::io(&paths[3], e))?;
    Ok(paths)
}
