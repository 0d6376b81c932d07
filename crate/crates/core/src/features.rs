//! Hourly network, Uniswap and economic features.
//!
//! Column formulas are catalogued in `docs/features.md`. Any hour whose
//! denominator or log argument is non-positive gets `NaN`; the fill policy
//! deals with it downstream.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BlockRecord, PoolEvent, PoolEventKind, TxRecord, WEI_PER_ETH};
use crate::timeseries::{hour_of, join_features, FeatureMatrix, FillPolicy, HOUR};

/// Total ether minted at genesis, the default starting supply.
pub const ETH_GENESIS_SUPPLY: f64 = 72_009_990.5;

pub const BASIC_COLUMNS: &[&str] = &[
    "n_blocks",
    "n_txs",
    "supply_pct_change",
    "avg_gas_limit",
    "avg_gas_used",
    "avg_gas_price",
    "hash_rate",
];

pub const ECONOMIC_COLUMNS: &[&str] = &[
    "mining_payoff_1",
    "hash_high_ratio",
    "payoff_high_ratio",
    "excess_block_space",
    "social_value",
    "social_cost",
    "comp_burden",
    "rho",
    "rho_sq",
    "congestion_ind",
    "congestion_price_1",
    "congestion_price_2",
    "congestion_price_3",
    "spreading",
    "velocity_ratio",
];

/// Fee-to-congestion map used by `congestion_price_1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CongestionCurve {
    Rho,
    #[default]
    RhoSquared,
}

impl CongestionCurve {
    pub fn eval(self, rho: f64) -> f64 {
        match self {
            CongestionCurve::Rho => rho,
            CongestionCurve::RhoSquared => rho * rho,
        }
    }
}

/// Horizon of the "previous high" in the running-max ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunningMax {
    #[default]
    Expanding,
    Hours(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EconParams {
    pub congestion_threshold_x: f64,
    pub f_of_rho: CongestionCurve,
    pub running_max: RunningMax,
}

impl Default for EconParams {
    fn default() -> Self {
        Self {
            congestion_threshold_x: 0.8,
            f_of_rho: CongestionCurve::default(),
            running_max: RunningMax::default(),
        }
    }
}

impl EconParams {
    pub fn validate(&self) -> Result<()> {
        let x = self.congestion_threshold_x;
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::param("congestion_threshold_x", format!("{x} not in (0, 1)")));
        }
        if self.running_max == RunningMax::Hours(0) {
            return Err(Error::param("running_max", "window must be positive"));
        }
        Ok(())
    }
}

/// Per-hour aggregates shared by the network and economic features.
#[derive(Debug, Default)]
struct HourlyStats {
    start: i64,
    n_blocks: Vec<usize>,
    n_txs: Vec<usize>,
    reward_eth: Vec<f64>,
    fees_eth: Vec<f64>,
    gas_limit: Vec<f64>,
    gas_used: Vec<f64>,
    size_bytes: Vec<f64>,
    difficulty: Vec<f64>,
    gas_price_sum: Vec<f64>,
    tx_fee_eth: Vec<f64>,
    tx_value_eth: Vec<f64>,
    max_txs_per_block: Vec<usize>,
    unique_from: Vec<usize>,
    unique_to: Vec<usize>,
}

impl HourlyStats {
    fn new(blocks: &[BlockRecord], txs: &[TxRecord]) -> Result<Self> {
        let first = blocks.iter().map(|b| hour_of(b.timestamp)).min().ok_or(Error::NoRecords)?;
        let last = blocks.iter().map(|b| hour_of(b.timestamp)).max().ok_or(Error::NoRecords)?;
        let len = ((last - first) / HOUR + 1) as usize;
        let mut s = HourlyStats {
            start: first,
            n_blocks: vec![0; len],
            n_txs: vec![0; len],
            reward_eth: vec![0.0; len],
            fees_eth: vec![0.0; len],
            gas_limit: vec![0.0; len],
            gas_used: vec![0.0; len],
            size_bytes: vec![0.0; len],
            difficulty: vec![0.0; len],
            gas_price_sum: vec![0.0; len],
            tx_fee_eth: vec![0.0; len],
            tx_value_eth: vec![0.0; len],
            max_txs_per_block: vec![0; len],
            unique_from: vec![0; len],
            unique_to: vec![0; len],
        };

        let bucket = |ts: i64| ((hour_of(ts) - first) / HOUR) as usize;
        let mut block_hour = HashMap::with_capacity(blocks.len());
        for b in blocks {
            let h = bucket(b.timestamp);
            block_hour.insert(b.number, h);
            s.n_blocks[h] += 1;
            s.reward_eth[h] += b.miner_reward as f64 / WEI_PER_ETH;
            s.fees_eth[h] += b.fees_total as f64 / WEI_PER_ETH;
            s.gas_limit[h] += b.gas_limit as f64;
            s.gas_used[h] += b.gas_used as f64;
            s.size_bytes[h] += b.size_bytes as f64;
            s.difficulty[h] += b.difficulty as f64;
        }

        let mut per_block: HashMap<u64, usize> = HashMap::new();
        let mut from: Vec<HashSet<&str>> = vec![HashSet::new(); len];
        let mut to: Vec<HashSet<&str>> = vec![HashSet::new(); len];
        let mut orphans = 0usize;
        for tx in txs {
            let Some(&h) = block_hour.get(&tx.block_number) else {
                orphans += 1;
                continue;
            };
            s.n_txs[h] += 1;
            s.gas_price_sum[h] += tx.gas_price as f64;
            s.tx_fee_eth[h] += tx.fee() as f64 / WEI_PER_ETH;
            s.tx_value_eth[h] += tx.value as f64 / WEI_PER_ETH;
            *per_block.entry(tx.block_number).or_default() += 1;
            from[h].insert(&tx.from_addr);
            to[h].insert(&tx.to_addr);
        }
        if orphans > 0 {
            log::warn!("{orphans} transactions reference unknown blocks and were skipped");
        }
        for (number, count) in per_block {
            let h = block_hour[&number];
            s.max_txs_per_block[h] = s.max_txs_per_block[h].max(count);
        }
        s.unique_from = from.iter().map(HashSet::len).collect();
        s.unique_to = to.iter().map(HashSet::len).collect();
        Ok(s)
    }

    fn len(&self) -> usize {
        self.n_blocks.len()
    }

    fn index(&self) -> Vec<i64> {
        (0..self.len() as i64).map(|i| self.start + i * HOUR).collect()
    }

    fn per_block(&self, totals: &[f64]) -> Vec<f64> {
        totals
            .iter()
            .zip(&self.n_blocks)
            .map(|(t, &n)| if n == 0 { f64::NAN } else { t / n as f64 })
            .collect()
    }

    fn per_tx(&self, totals: &[f64]) -> Vec<f64> {
        totals
            .iter()
            .zip(&self.n_txs)
            .map(|(t, &n)| if n == 0 { f64::NAN } else { t / n as f64 })
            .collect()
    }

    /// Supply at the end of each hour: genesis plus all issuance so far.
    fn accumulated_supply(&self, genesis_supply: f64) -> Vec<f64> {
        let mut acc = genesis_supply;
        self.reward_eth
            .iter()
            .map(|r| {
                acc += r;
                acc
            })
            .collect()
    }
}

/// `num / den`, or `NaN` when the denominator is not positive.
fn guarded_div(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}

/// Natural log, or `NaN` for a non-positive argument.
fn guarded_ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NAN
    }
}

/// Hourly hash rate: summed block difficulty over the hour divided by 3600 s.
pub fn hash_rate_estimate(blocks: &[BlockRecord]) -> Result<crate::TimeSeries> {
    let stats = HourlyStats::new(blocks, &[])?;
    crate::TimeSeries::new("hash_rate", stats.start, hash_rate_values(&stats))
}

fn hash_rate_values(stats: &HourlyStats) -> Vec<f64> {
    stats
        .difficulty
        .iter()
        .zip(&stats.n_blocks)
        .map(|(&d, &n)| if n == 0 { f64::NAN } else { d / HOUR as f64 })
        .collect()
}

/// Table-style network features on the hour grid spanned by `blocks`.
///
/// `genesis_supply` (whole tokens) seeds the accumulated supply used by
/// `supply_pct_change`.
pub fn basic_network_features(
    blocks: &[BlockRecord],
    txs: &[TxRecord],
    genesis_supply: f64,
) -> Result<FeatureMatrix> {
    let s = HourlyStats::new(blocks, txs)?;
    let supply = s.accumulated_supply(genesis_supply);
    let supply_pct_change = s
        .reward_eth
        .iter()
        .zip(&supply)
        .map(|(&r, &total)| guarded_div(r, total))
        .collect();

    FeatureMatrix::from_columns(
        s.index(),
        [
            ("n_blocks", s.n_blocks.iter().map(|&n| n as f64).collect()),
            ("n_txs", s.n_txs.iter().map(|&n| n as f64).collect()),
            ("supply_pct_change", supply_pct_change),
            ("avg_gas_limit", s.per_block(&s.gas_limit)),
            ("avg_gas_used", s.per_block(&s.gas_used)),
            ("avg_gas_price", s.per_tx(&s.gas_price_sum)),
            ("hash_rate", hash_rate_values(&s)),
        ]
        .into_iter()
        .map(|(n, v)| (n.to_string(), v)),
    )
}

/// `running_max(values) / values`, skipping `NaN` when tracking the maximum.
fn high_ratio(values: &[f64], window: RunningMax) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    match window {
        RunningMax::Expanding => {
            let mut high = f64::NEG_INFINITY;
            for &v in values {
                if v > high {
                    high = v;
                }
                out.push(if v.is_nan() { f64::NAN } else { guarded_div(high, v) });
            }
        }
        RunningMax::Hours(w) => {
            // Monotone deque of candidate maxima within the trailing window.
            let mut deque: VecDeque<usize> = VecDeque::new();
            for (i, &v) in values.iter().enumerate() {
                while deque.front().is_some_and(|&j| j + w <= i) {
                    deque.pop_front();
                }
                if !v.is_nan() {
                    while deque.back().is_some_and(|&j| values[j] <= v) {
                        deque.pop_back();
                    }
                    deque.push_back(i);
                }
                out.push(if v.is_nan() {
                    f64::NAN
                } else {
                    guarded_div(values[*deque.front().unwrap()], v)
                });
            }
        }
    }
    out
}

/// Economic factors derived from the network features and raw records.
///
/// Rows follow `basic`'s index; `basic` must carry `hash_rate`,
/// `avg_gas_limit` and `avg_gas_used`.
pub fn economic_features(
    basic: &FeatureMatrix,
    blocks: &[BlockRecord],
    txs: &[TxRecord],
    params: &EconParams,
    genesis_supply: f64,
) -> Result<FeatureMatrix> {
    params.validate()?;
    let s = HourlyStats::new(blocks, txs)?;
    let need = |name: &str| {
        basic
            .column(name)
            .ok_or_else(|| Error::InvalidSeries(format!("basic features lack `{name}`")))
    };
    let hash_rate = need("hash_rate")?;
    let gas_limit = need("avg_gas_limit")?;
    let gas_used = need("avg_gas_used")?;

    let supply = s.accumulated_supply(genesis_supply);
    let block_size = s.per_block(&s.size_bytes);
    let reward = s.per_block(&s.reward_eth);
    let block_fees = s.per_block(&s.fees_eth);
    let tx_fee = s.per_tx(&s.tx_fee_eth);

    let n = basic.n_rows();
    let mut cols: BTreeMap<&str, Vec<f64>> = ECONOMIC_COLUMNS
        .iter()
        .map(|&c| (c, Vec::with_capacity(n)))
        .collect();
    let mut push = |name: &str, v: f64| cols.get_mut(name).unwrap().push(v);

    for (row, &ts) in basic.index().iter().enumerate() {
        let offset = (ts - s.start).div_euclid(HOUR);
        let h = (offset >= 0 && (offset as usize) < s.len()).then_some(offset as usize);
        let at = |v: &[f64]| h.map_or(f64::NAN, |h| v[h]);

        let rate = h.map_or(f64::NAN, |h| s.n_blocks[h] as f64 / HOUR as f64);
        push(
            "mining_payoff_1",
            guarded_div(1.0, rate * (at(&reward) + at(&block_fees))),
        );
        push("excess_block_space", gas_limit[row] - gas_used[row]);
        push("social_value", -guarded_ln(gas_used[row]));
        push("social_cost", guarded_div(1.0, gas_used[row]));
        let size = at(&block_size);
        push("comp_burden", size * guarded_ln(size).powi(2));

        let rho = guarded_div(gas_used[row], gas_limit[row]);
        push("rho", rho);
        push("rho_sq", rho * rho);
        push(
            "congestion_ind",
            if rho.is_nan() {
                f64::NAN
            } else if rho > params.congestion_threshold_x {
                1.0
            } else {
                0.0
            },
        );
        push(
            "congestion_price_1",
            guarded_div(params.f_of_rho.eval(rho), at(&tx_fee)),
        );
        let max_txs = h.map_or(f64::NAN, |h| s.max_txs_per_block[h] as f64);
        let fees = at(&block_fees);
        push("congestion_price_2", guarded_div(max_txs, fees));
        push("congestion_price_3", guarded_div(max_txs * max_txs, fees));
        push(
            "spreading",
            h.map_or(f64::NAN, |h| {
                guarded_div(s.unique_to[h] as f64, s.unique_from[h] as f64)
            }),
        );
        push(
            "velocity_ratio",
            h.map_or(f64::NAN, |h| guarded_div(s.tx_value_eth[h], supply[h])),
        );
    }

    cols.insert("hash_high_ratio", high_ratio(hash_rate, params.running_max));
    let payoff = cols["mining_payoff_1"].clone();
    cols.insert("payoff_high_ratio", high_ratio(&payoff, params.running_max));

    FeatureMatrix::from_columns(
        basic.index().to_vec(),
        ECONOMIC_COLUMNS
            .iter()
            .map(|&c| (c.to_string(), cols.remove(c).unwrap())),
    )
}

fn column_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Liquidity level, net liquidity flow and swap volume per pool and summed
/// over pools, in whole tokens.
///
/// Levels carry forward through quiet hours and are zero before a pool's
/// first event; flows and volumes are zero in quiet hours.
pub fn uniswap_features(pools: &[PoolEvent]) -> Result<FeatureMatrix> {
    let first = pools.iter().map(|e| hour_of(e.timestamp)).min().ok_or(Error::NoRecords)?;
    let last = pools.iter().map(|e| hour_of(e.timestamp)).max().ok_or(Error::NoRecords)?;
    let len = ((last - first) / HOUR + 1) as usize;

    #[derive(Clone)]
    struct PoolCols {
        level: Vec<f64>,
        flow: Vec<f64>,
        volume: Vec<f64>,
        seen: Vec<bool>,
    }
    let empty = PoolCols {
        level: vec![0.0; len],
        flow: vec![0.0; len],
        volume: vec![0.0; len],
        seen: vec![false; len],
    };
    let mut per_pool: BTreeMap<&str, PoolCols> = BTreeMap::new();
    // Events arrive sorted by timestamp, so the last one seen in an hour is
    // the latest.
    for e in pools {
        let h = ((hour_of(e.timestamp) - first) / HOUR) as usize;
        let p = per_pool.entry(&e.pool_id).or_insert_with(|| empty.clone());
        let eth = e.eth_delta as f64 / WEI_PER_ETH;
        match e.kind {
            PoolEventKind::Mint | PoolEventKind::Burn => p.flow[h] += eth,
            PoolEventKind::Swap => p.volume[h] += eth.abs(),
        }
        p.level[h] = e.liquidity_after as f64 / WEI_PER_ETH;
        p.seen[h] = true;
    }
    for p in per_pool.values_mut() {
        let mut prev = 0.0;
        for h in 0..len {
            if p.seen[h] {
                prev = p.level[h];
            } else {
                p.level[h] = prev;
            }
        }
    }

    let sum = |f: &dyn Fn(&PoolCols) -> &Vec<f64>| -> Vec<f64> {
        (0..len)
            .map(|h| per_pool.values().map(|p| f(p)[h]).sum())
            .collect()
    };
    let mut columns = vec![
        ("liquidity_level".to_string(), sum(&|p| &p.level)),
        ("liquidity_net_flow".to_string(), sum(&|p| &p.flow)),
        ("trade_volume_eth".to_string(), sum(&|p| &p.volume)),
    ];
    if per_pool.len() > 1 {
        for (id, p) in &per_pool {
            let id = column_safe(id);
            columns.push((format!("liquidity_level_{id}"), p.level.clone()));
            columns.push((format!("liquidity_net_flow_{id}"), p.flow.clone()));
            columns.push((format!("trade_volume_eth_{id}"), p.volume.clone()));
        }
    }
    let index = (0..len as i64).map(|i| first + i * HOUR).collect();
    FeatureMatrix::from_columns(index, columns)
}

/// Network, economic and (when pool events are given) Uniswap features
/// joined on the hour grid.
pub fn derive_features(
    blocks: &[BlockRecord],
    txs: &[TxRecord],
    pools: &[PoolEvent],
    params: &EconParams,
    genesis_supply: f64,
    fill: FillPolicy,
) -> Result<FeatureMatrix> {
    let basic = basic_network_features(blocks, txs, genesis_supply)?;
    let econ = economic_features(&basic, blocks, txs, params, genesis_supply)?;
    let mut parts = vec![basic, econ];
    if !pools.is_empty() {
        parts.push(uniswap_features(pools)?);
    }
    join_features(&parts, fill)
}

#[cfg(test)]
mod tests {
    use super::*;

    const T0: i64 = 1_600_000_000 - 1_600_000_000 % HOUR;
    const WEI: u128 = 1_000_000_000_000_000_000;

    fn block(number: u64, ts: i64, gas_used: u64, gas_limit: u64) -> BlockRecord {
        BlockRecord {
            number,
            timestamp: ts,
            gas_limit,
            gas_used,
            difficulty: 3600,
            size_bytes: 1000,
            miner_reward: 2 * WEI,
            fees_total: 0,
        }
    }

    fn tx(block_number: u64, from: &str, to: &str, gas_price: u128) -> TxRecord {
        TxRecord {
            block_number,
            from_addr: from.into(),
            to_addr: to.into(),
            value: WEI,
            gas_price,
            gas_used: 21_000,
        }
    }

    #[test]
    fn basic_counts_and_means() {
        let blocks: Vec<_> = (0..4).map(|i| block(i, T0 + 10 * i as i64, 50, 100)).collect();
        let txs = vec![tx(0, "a", "b", 7), tx(1, "a", "c", 7), tx(1, "d", "e", 7)];
        let m = basic_network_features(&blocks, &txs, 100.0).unwrap();
        assert_eq!(m.index(), &[T0]);
        assert_eq!(m.column("n_blocks").unwrap(), &[4.0]);
        assert_eq!(m.column("n_txs").unwrap(), &[3.0]);
        assert_eq!(m.column("avg_gas_price").unwrap(), &[7.0]);
        assert_eq!(m.column("supply_pct_change").unwrap(), &[8.0 / 108.0]);
    }

    #[test]
    fn no_blocks_is_error() {
        assert!(basic_network_features(&[], &[], 1.0).is_err());
    }

    #[test]
    fn hash_rate_definition() {
        let mut b = block(0, T0, 1, 2);
        b.difficulty = 7_200_000;
        let mut later = block(1, T0 + 2 * HOUR, 1, 2);
        later.difficulty = 36;
        let hr = hash_rate_estimate(&[b.clone(), later.clone()]).unwrap();
        assert_eq!(hr.values()[0], 2000.0);
        assert!(hr.values()[1].is_nan());
        b.difficulty *= 2;
        later.difficulty *= 2;
        assert_eq!(hash_rate_estimate(&[b, later]).unwrap().values()[0], 4000.0);
    }

    #[test]
    fn congestion_indicator_is_strict() {
        for (used, expected) in [(8_000_000, 0.0), (8_100_000, 1.0)] {
            let blocks = vec![block(0, T0, used, 10_000_000)];
            let basic = basic_network_features(&blocks, &[], 1.0).unwrap();
            let econ =
                economic_features(&basic, &blocks, &[], &EconParams::default(), 1.0).unwrap();
            assert_eq!(econ.column("congestion_ind").unwrap(), &[expected]);
        }
        let blocks = vec![block(0, T0, 8_000_000, 10_000_000)];
        let basic = basic_network_features(&blocks, &[], 1.0).unwrap();
        let econ = economic_features(&basic, &blocks, &[], &EconParams::default(), 1.0).unwrap();
        assert_eq!(econ.column("rho").unwrap(), &[0.8]);
    }

    #[test]
    fn mining_payoff_formula() {
        // 3600 blocks in the hour, each paying reward + fees = 2 tokens.
        let blocks: Vec<_> = (0..3600)
            .map(|i| {
                let mut b = block(i, T0 + i as i64, 1, 2);
                b.miner_reward = WEI + WEI / 2;
                b.fees_total = WEI / 2;
                b
            })
            .collect();
        let basic = basic_network_features(&blocks, &[], 1.0).unwrap();
        let econ = economic_features(&basic, &blocks, &[], &EconParams::default(), 1.0).unwrap();
        assert_eq!(econ.column("mining_payoff_1").unwrap(), &[0.5]);
    }

    #[test]
    fn spreading_ratio() {
        let blocks = vec![block(0, T0, 1, 2)];
        let txs: Vec<_> = (0..30)
            .map(|i| tx(0, &format!("f{}", i % 10), &format!("t{i}"), 1))
            .collect();
        let basic = basic_network_features(&blocks, &txs, 1.0).unwrap();
        let econ = economic_features(&basic, &blocks, &txs, &EconParams::default(), 1.0).unwrap();
        assert_eq!(econ.column("spreading").unwrap(), &[3.0]);
    }

    #[test]
    fn guards_produce_nan() {
        let blocks = vec![block(0, T0, 0, 10), block(1, T0 + 2 * HOUR, 5, 10)];
        let basic = basic_network_features(&blocks, &[], 1.0).unwrap();
        let econ = economic_features(&basic, &blocks, &[], &EconParams::default(), 1.0).unwrap();
        assert!(econ.column("social_value").unwrap()[0].is_nan());
        assert!(econ.column("social_cost").unwrap()[0].is_nan());
        // empty middle hour
        assert!(econ.column("rho").unwrap()[1].is_nan());
        assert!(econ.column("mining_payoff_1").unwrap()[1].is_nan());
        // no transactions at all
        assert!(econ.column("congestion_price_1").unwrap()[2].is_nan());
    }

    #[test]
    fn high_ratio_windows() {
        let v = [1.0, 3.0, f64::NAN, 2.0, 1.0];
        let e = high_ratio(&v, RunningMax::Expanding);
        assert_eq!(e[0], 1.0);
        assert_eq!(e[1], 1.0);
        assert!(e[2].is_nan());
        assert_eq!(e[3], 1.5);
        assert_eq!(e[4], 3.0);
        let w = high_ratio(&v, RunningMax::Hours(2));
        assert_eq!(w[3], 1.0);
        assert_eq!(w[4], 2.0);
    }

    #[test]
    fn econ_params_validation() {
        let mut p = EconParams::default();
        p.congestion_threshold_x = 1.0;
        assert!(p.validate().is_err());
        p.congestion_threshold_x = 0.5;
        p.running_max = RunningMax::Hours(0);
        assert!(p.validate().is_err());
    }

    fn event(ts: i64, pool: &str, kind: PoolEventKind, eth: i128, liq: u128) -> PoolEvent {
        PoolEvent {
            timestamp: ts,
            pool_id: pool.into(),
            kind,
            eth_delta: eth * WEI as i128,
            stable_delta: 0,
            liquidity_after: liq * WEI,
        }
    }

    #[test]
    fn uniswap_flows_and_volume() {
        let events = vec![
            event(T0 + 10, "eth-dai", PoolEventKind::Mint, 10, 10),
            event(T0 + 20, "eth-dai", PoolEventKind::Swap, -3, 10),
            event(T0 + 30, "eth-dai", PoolEventKind::Swap, 4, 11),
            event(T0 + 2 * HOUR, "eth-dai", PoolEventKind::Burn, -2, 9),
        ];
        let m = uniswap_features(&events).unwrap();
        assert_eq!(m.column("liquidity_net_flow").unwrap(), &[10.0, 0.0, -2.0]);
        assert_eq!(m.column("trade_volume_eth").unwrap(), &[7.0, 0.0, 0.0]);
        assert_eq!(m.column("liquidity_level").unwrap(), &[11.0, 11.0, 9.0]);
    }

    #[test]
    fn uniswap_per_pool_columns() {
        let events = vec![
            event(T0, "eth-usdc", PoolEventKind::Mint, 1, 1),
            event(T0 + HOUR, "eth/dai", PoolEventKind::Mint, 2, 2),
        ];
        let m = uniswap_features(&events).unwrap();
        assert_eq!(m.column("liquidity_level_eth_dai").unwrap(), &[0.0, 2.0]);
        assert_eq!(m.column("liquidity_level").unwrap(), &[1.0, 3.0]);
    }
}
