//! Hourly time grid, smoothing, normalization and feature-matrix assembly.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid step in seconds.
pub const HOUR: i64 = 3600;

/// Hour bucket of an epoch timestamp (floor division, timezone free).
pub fn hour_of(timestamp: i64) -> i64 {
    timestamp.div_euclid(HOUR) * HOUR
}

/// A named series on the hourly grid. `NaN` marks a missing hour.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    name: String,
    start: i64,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, start: i64, values: Vec<f64>) -> Result<Self> {
        if start.rem_euclid(HOUR) != 0 {
            return Err(Error::InvalidSeries(format!(
                "start {start} is not hour aligned"
            )));
        }
        if values.is_empty() {
            return Err(Error::InvalidSeries("empty series".into()));
        }
        Ok(Self {
            name: name.into(),
            start,
            values,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn step(&self) -> i64 {
        HOUR
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Hour timestamps covered by the series.
    pub fn index(&self) -> Vec<i64> {
        (0..self.values.len() as i64)
            .map(|i| self.start + i * HOUR)
            .collect()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agg {
    Sum,
    Mean,
    Count,
    Max,
    Last,
}

/// Buckets `(timestamp, value)` rows into hours over `[min, max]` record hour.
///
/// Empty buckets are `NaN`, except under [`Agg::Count`] where they are zero.
/// For [`Agg::Last`] the row with the latest timestamp wins; equal timestamps
/// resolve to the later row.
pub fn align_hourly(name: &str, records: &[(i64, f64)], agg: Agg) -> Result<TimeSeries> {
    let first = records.iter().map(|r| hour_of(r.0)).min().ok_or(Error::NoRecords)?;
    let last = records.iter().map(|r| hour_of(r.0)).max().ok_or(Error::NoRecords)?;
    let len = ((last - first) / HOUR + 1) as usize;

    let mut sums = vec![0.0; len];
    let mut counts = vec![0usize; len];
    let mut maxes = vec![f64::NEG_INFINITY; len];
    let mut lasts: Vec<Option<(i64, f64)>> = vec![None; len];
    for &(ts, v) in records {
        let b = ((hour_of(ts) - first) / HOUR) as usize;
        sums[b] += v;
        counts[b] += 1;
        if v > maxes[b] {
            maxes[b] = v;
        }
        if lasts[b].is_none_or(|(t, _)| ts >= t) {
            lasts[b] = Some((ts, v));
        }
    }

    let values = (0..len)
        .map(|b| match agg {
            Agg::Count => counts[b] as f64,
            _ if counts[b] == 0 => f64::NAN,
            Agg::Sum => sums[b],
            Agg::Mean => sums[b] / counts[b] as f64,
            Agg::Max => maxes[b],
            Agg::Last => lasts[b].map_or(f64::NAN, |(_, v)| v),
        })
        .collect();
    TimeSeries::new(name, first, values)
}

/// Exponential moving average `b̃ₜ = (1−α)bₜ + α·b̃ₜ₋₁`, seeded with `b̃₀ = b₀`.
pub fn ema(values: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::param("alpha", format!("{alpha} not in [0, 1)")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidSeries("NaN in series to smooth".into()));
    }
    let mut out = Vec::with_capacity(values.len());
    let mut acc = match values.first() {
        Some(&v) => v,
        None => return Ok(out),
    };
    out.push(acc);
    for &v in &values[1..] {
        acc = (1.0 - alpha) * v + alpha * acc;
        out.push(acc);
    }
    Ok(out)
}

pub fn ema_smooth(series: &TimeSeries, alpha: f64) -> Result<TimeSeries> {
    let values = ema(series.values(), alpha)?;
    TimeSeries::new(series.name(), series.start(), values)
}

/// Missing-data policy applied after joins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    /// Carry the last observation forward, then drop leading rows that still
    /// hold a gap.
    #[default]
    Ffill,
    Zero,
    /// Drop every row containing a gap.
    Drop,
}

/// Named numeric columns over a strictly increasing hour index.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    index: Vec<i64>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn new(index: Vec<i64>) -> Result<Self> {
        if index.iter().any(|t| t.rem_euclid(HOUR) != 0) {
            return Err(Error::InvalidSeries("index is not hour aligned".into()));
        }
        if index.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSeries(
                "index is not strictly increasing".into(),
            ));
        }
        Ok(Self {
            index,
            names: Vec::new(),
            columns: Vec::new(),
        })
    }

    pub fn from_columns(
        index: Vec<i64>,
        columns: impl IntoIterator<Item = (String, Vec<f64>)>,
    ) -> Result<Self> {
        let mut m = Self::new(index)?;
        for (name, values) in columns {
            m.push_column(name, values)?;
        }
        Ok(m)
    }

    /// Builds a single-column matrix spanning the series.
    pub fn from_series(series: &TimeSeries) -> Result<Self> {
        Self::from_columns(
            series.index(),
            [(series.name().to_string(), series.values().to_vec())],
        )
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::DuplicateColumn(name));
        }
        if values.len() != self.index.len() {
            return Err(Error::LengthMismatch(values.len(), self.index.len()));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    pub fn index(&self) -> &[i64] {
        &self.index
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn n_rows(&self) -> usize {
        self.index.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.position(name).map(|i| self.columns[i].as_slice())
    }

    pub fn has_nan(&self) -> bool {
        self.columns.iter().flatten().any(|v| v.is_nan())
    }

    /// Keeps only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let mut out = Self {
            index: self.index.clone(),
            names: Vec::new(),
            columns: Vec::new(),
        };
        for name in names {
            let col = self
                .column(name)
                .ok_or_else(|| Error::InvalidSeries(format!("no column `{name}`")))?;
            out.push_column(name.clone(), col.to_vec())?;
        }
        Ok(out)
    }

    /// Removes a column, returning its values.
    pub fn take_column(&mut self, name: &str) -> Option<Vec<f64>> {
        let i = self.position(name)?;
        self.names.remove(i);
        Some(self.columns.remove(i))
    }

    /// Keeps rows whose position satisfies `keep`.
    pub fn filter_rows(&self, mut keep: impl FnMut(usize) -> bool) -> Self {
        let rows: Vec<usize> = (0..self.n_rows()).filter(|&r| keep(r)).collect();
        self.take_rows(&rows)
    }

    pub fn slice_rows(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            index: self.index[range.clone()].to_vec(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[range.clone()].to_vec()).collect(),
        }
    }

    fn take_rows(&self, rows: &[usize]) -> Self {
        Self {
            index: rows.iter().map(|&r| self.index[r]).collect(),
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
        }
    }

    /// Applies a missing-data policy.
    pub fn fill(&self, policy: FillPolicy) -> Self {
        match policy {
            FillPolicy::Zero => {
                let mut out = self.clone();
                for v in out.columns.iter_mut().flatten() {
                    if v.is_nan() {
                        *v = 0.0;
                    }
                }
                out
            }
            FillPolicy::Drop => {
                self.filter_rows(|r| self.columns.iter().all(|c| !c[r].is_nan()))
            }
            FillPolicy::Ffill => {
                let mut out = self.clone();
                for col in &mut out.columns {
                    let mut prev = f64::NAN;
                    for v in col.iter_mut() {
                        if v.is_nan() {
                            *v = prev;
                        } else {
                            prev = *v;
                        }
                    }
                }
                let first_full = (0..out.n_rows())
                    .find(|&r| out.columns.iter().all(|c| !c[r].is_nan()))
                    .unwrap_or(out.n_rows());
                out.slice_rows(first_full..out.n_rows())
            }
        }
    }

    /// Row-major copy of the values, suitable for model fitting.
    pub fn to_dmatrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.n_rows(), self.n_cols(), |r, c| self.columns[c][r])
    }

    /// Writes `timestamp,<names...>` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("timestamp");
        for name in &self.names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (r, ts) in self.index.iter().enumerate() {
            write!(out, "{ts}").unwrap();
            for col in &self.columns {
                write!(out, ",{}", fmt_f64(col[r])).unwrap();
            }
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let headers = reader.headers()?.clone();
        if headers.get(0) != Some("timestamp") {
            return Err(Error::BadHeader {
                path: path.into(),
                expected: "timestamp,...".into(),
            });
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut index = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let malformed = |reason: String| Error::MalformedRow {
                path: path.into(),
                line,
                reason,
            };
            let ts: i64 = record
                .get(0)
                .unwrap_or_default()
                .parse()
                .map_err(|e| malformed(format!("timestamp: {e}")))?;
            index.push(ts);
            for (c, col) in columns.iter_mut().enumerate() {
                let field = record.get(c + 1).unwrap_or_default();
                let v: f64 = field
                    .parse()
                    .map_err(|e| malformed(format!("{}: {e}", names[c])))?;
                col.push(v);
            }
        }
        Self::from_columns(index, names.into_iter().zip(columns))
    }
}

/// Shortest round-trip rendering used in every CSV artifact.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Outer-joins matrices on the hour index and applies `fill`.
pub fn join_features(parts: &[FeatureMatrix], fill: FillPolicy) -> Result<FeatureMatrix> {
    let mut seen = BTreeSet::new();
    for name in parts.iter().flat_map(|p| p.names()) {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateColumn(name.clone()));
        }
    }
    let index: Vec<i64> = parts
        .iter()
        .flat_map(|p| p.index().iter().copied())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut joined = FeatureMatrix::new(index)?;
    for part in parts {
        // Both indexes are sorted, so a merge walk maps rows.
        let mut positions = Vec::with_capacity(joined.n_rows());
        let mut j = 0;
        for ts in joined.index() {
            while j < part.n_rows() && part.index()[j] < *ts {
                j += 1;
            }
            positions.push((j < part.n_rows() && part.index()[j] == *ts).then_some(j));
        }
        for (name, col) in part.names().iter().zip(part.columns()) {
            let values = positions
                .iter()
                .map(|p| p.map_or(f64::NAN, |j| col[j]))
                .collect();
            joined.push_column(name.clone(), values)?;
        }
    }
    Ok(joined.fill(fill))
}

/// Per-column z-score parameters fitted on one matrix and reusable on another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
    /// Constant columns removed during fitting.
    pub degenerate: Vec<String>,
}

impl NormalizationStats {
    pub fn fit(m: &FeatureMatrix) -> Result<Self> {
        if m.n_rows() < 2 {
            return Err(Error::param("rows", "need at least 2 rows to normalize"));
        }
        if m.has_nan() {
            return Err(Error::InvalidSeries("NaN in matrix to normalize".into()));
        }
        let n = m.n_rows() as f64;
        let mut stats = Self {
            columns: Vec::new(),
            mean: Vec::new(),
            stddev: Vec::new(),
            degenerate: Vec::new(),
        };
        for (name, col) in m.names().iter().zip(m.columns()) {
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let sd = var.sqrt();
            // Relative cutoff so columns that are constant up to rounding
            // (e.g. means of identical values) are also dropped.
            if !(sd > 1e-10 * mean.abs().max(f64::MIN_POSITIVE)) {
                stats.degenerate.push(name.clone());
                continue;
            }
            stats.columns.push(name.clone());
            stats.mean.push(mean);
            stats.stddev.push(sd);
        }
        if stats.columns.is_empty() {
            return Err(Error::AllColumnsConstant);
        }
        Ok(stats)
    }

    /// Selects the retained columns of `m` and standardizes them.
    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        let mut out = FeatureMatrix::new(m.index().to_vec())?;
        for (i, name) in self.columns.iter().enumerate() {
            let col = m
                .column(name)
                .ok_or_else(|| Error::InvalidSeries(format!("no column `{name}`")))?;
            let (mu, sd) = (self.mean[i], self.stddev[i]);
            out.push_column(name.clone(), col.iter().map(|v| (v - mu) / sd).collect())?;
        }
        Ok(out)
    }
}

/// Standardizes each column to sample mean 0 and sample stddev 1, dropping
/// constant columns.
pub fn zscore_normalize(m: &FeatureMatrix) -> Result<(FeatureMatrix, NormalizationStats)> {
    let stats = NormalizationStats::fit(m)?;
    Ok((stats.apply(m)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const H10: i64 = 10 * HOUR;

    #[test]
    fn align_sum_within_bucket() {
        let s = align_hourly("v", &[(H10 + 300, 2.0), (H10 + 2400, 3.0)], Agg::Sum).unwrap();
        assert_eq!(s.start(), H10);
        assert_eq!(s.values(), &[5.0]);
    }

    #[test]
    fn align_count_fills_zero() {
        let s = align_hourly(
            "n",
            &[(H10 + 300, 1.0), (H10 + 2 * HOUR + 600, 1.0)],
            Agg::Count,
        )
        .unwrap();
        assert_eq!(s.values(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn align_singleton_mean_and_gaps() {
        let s = align_hourly("v", &[(H10 + 300, 4.0)], Agg::Mean).unwrap();
        assert_eq!(s.values(), &[4.0]);

        let s = align_hourly("v", &[(H10, 1.0), (H10 + 2 * HOUR, 2.0)], Agg::Max).unwrap();
        assert!(s.values()[1].is_nan());
    }

    #[test]
    fn align_last_takes_latest_timestamp() {
        let s = align_hourly("v", &[(H10 + 50, 9.0), (H10 + 10, 1.0)], Agg::Last).unwrap();
        assert_eq!(s.values(), &[9.0]);
    }

    #[test]
    fn align_empty_is_error() {
        assert!(matches!(
            align_hourly("v", &[], Agg::Sum),
            Err(Error::NoRecords)
        ));
    }

    #[test]
    fn ema_examples() {
        assert_eq!(ema(&[3.0, 5.0, 7.0], 0.0).unwrap(), vec![3.0, 5.0, 7.0]);
        assert_eq!(ema(&[2.0, 4.0], 0.5).unwrap(), vec![2.0, 3.0]);
        assert_eq!(ema(&[1.5, 1.5, 1.5], 0.9).unwrap(), vec![1.5, 1.5, 1.5]);
        assert!(ema(&[1.0], 1.0).is_err());
        assert!(ema(&[1.0], -0.1).is_err());
    }

    #[test]
    fn zscore_examples() {
        let m = FeatureMatrix::from_columns(
            vec![0, HOUR, 2 * HOUR],
            [
                ("a".to_string(), vec![1.0, 2.0, 3.0]),
                ("c".to_string(), vec![5.0, 5.0, 5.0]),
            ],
        )
        .unwrap();
        let (z, stats) = zscore_normalize(&m).unwrap();
        assert_eq!(z.names(), &["a".to_string()]);
        assert_eq!(z.column("a").unwrap(), &[-1.0, 0.0, 1.0]);
        assert_eq!(stats.degenerate, vec!["c".to_string()]);

        let (z2, _) = zscore_normalize(&z).unwrap();
        for (a, b) in z.columns()[0].iter().zip(&z2.columns()[0]) {
            assert!((a - b).abs() < 1e-9);
        }

        let constant = FeatureMatrix::from_columns(vec![0, HOUR], [("c".into(), vec![2.0, 2.0])])
            .unwrap();
        assert!(matches!(
            zscore_normalize(&constant),
            Err(Error::AllColumnsConstant)
        ));
    }

    fn fm(index: &[i64], name: &str, values: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_columns(index.to_vec(), [(name.to_string(), values.to_vec())]).unwrap()
    }

    #[test]
    fn join_same_index_concatenates() {
        let idx = [0, HOUR];
        let j = join_features(
            &[fm(&idx, "a", &[1.0, 2.0]), fm(&idx, "b", &[3.0, 4.0])],
            FillPolicy::Drop,
        )
        .unwrap();
        assert_eq!(j.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(j.column("b").unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn join_drop_keeps_intersection() {
        let j = join_features(
            &[
                fm(&[0, HOUR], "a", &[1.0, 2.0]),
                fm(&[HOUR, 2 * HOUR], "b", &[3.0, 4.0]),
            ],
            FillPolicy::Drop,
        )
        .unwrap();
        assert_eq!(j.index(), &[HOUR]);
        assert_eq!(j.column("a").unwrap(), &[2.0]);
        assert_eq!(j.column("b").unwrap(), &[3.0]);
    }

    #[test]
    fn join_ffill_drops_leading_gap() {
        let j = join_features(
            &[
                fm(&[0, HOUR, 2 * HOUR], "a", &[1.0, 2.0, 3.0]),
                fm(&[HOUR, 2 * HOUR], "b", &[3.0, f64::NAN]),
            ],
            FillPolicy::Ffill,
        )
        .unwrap();
        assert_eq!(j.index(), &[HOUR, 2 * HOUR]);
        assert_eq!(j.column("b").unwrap(), &[3.0, 3.0]);

        let z = join_features(
            &[fm(&[0], "a", &[1.0]), fm(&[HOUR], "b", &[2.0])],
            FillPolicy::Zero,
        )
        .unwrap();
        assert_eq!(z.column("a").unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn join_duplicate_column_named() {
        let err = join_features(
            &[fm(&[0], "gas", &[1.0]), fm(&[0], "gas", &[2.0])],
            FillPolicy::Drop,
        )
        .unwrap_err();
        assert!(err.to_string().contains("gas"));
    }

    #[test]
    fn feature_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let m = FeatureMatrix::from_columns(
            vec![0, HOUR],
            [
                ("a".into(), vec![0.1, 1e-300]),
                ("b".into(), vec![f64::NAN, 3e20]),
            ],
        )
        .unwrap();
        m.write_csv(&path).unwrap();
        let back = FeatureMatrix::read_csv(&path).unwrap();
        assert_eq!(back.index(), m.index());
        assert_eq!(back.column("a"), m.column("a"));
        assert!(back.column("b").unwrap()[0].is_nan());
        assert_eq!(back.column("b").unwrap()[1], 3e20);
    }

    proptest! {
        #[test]
        fn ema_is_convex_combination(
            values in prop::collection::vec(-1e6f64..1e6, 1..50),
            alpha in 0.0f64..0.999,
        ) {
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-9 * hi.abs().max(lo.abs()).max(1.0);
            for v in ema(&values, alpha).unwrap() {
                prop_assert!(v >= lo - tol && v <= hi + tol);
            }
        }

        #[test]
        fn align_length_spans_hours(ts in prop::collection::vec(0i64..1_000_000, 1..40)) {
            let rows: Vec<(i64, f64)> = ts.iter().map(|&t| (t, 1.0)).collect();
            let s = align_hourly("x", &rows, Agg::Count).unwrap();
            let lo = ts.iter().map(|&t| hour_of(t)).min().unwrap();
            let hi = ts.iter().map(|&t| hour_of(t)).max().unwrap();
            prop_assert_eq!(s.len() as i64, (hi - lo) / HOUR + 1);
            prop_assert_eq!(s.values().iter().sum::<f64>(), ts.len() as f64);
        }

        #[test]
        fn zscore_idempotent(col in prop::collection::vec(-1e3f64..1e3, 3..40)) {
            prop_assume!(col.iter().any(|v| (v - col[0]).abs() > 1e-3));
            let idx: Vec<i64> = (0..col.len() as i64).map(|i| i * HOUR).collect();
            let m = FeatureMatrix::from_columns(idx, [("x".to_string(), col)]).unwrap();
            let (z, _) = zscore_normalize(&m).unwrap();
            let (z2, _) = zscore_normalize(&z).unwrap();
            let n = z.n_rows() as f64;
            let mean = z.columns()[0].iter().sum::<f64>() / n;
            let sd = (z.columns()[0].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((sd - 1.0).abs() < 1e-9);
            for (a, b) in z.columns()[0].iter().zip(&z2.columns()[0]) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
