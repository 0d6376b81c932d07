//! Plug-in mutual information from equal-width histograms.
//!
//! Entropies are computed from sorted bin counts, so the estimate depends only
//! on the multiset of counts: MI is exactly symmetric and `MI(x, x) == H(x)`.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{ema, fmt_f64, FeatureMatrix, TimeSeries};

/// Default bin count for `n` samples: `⌈√(n/5)⌉`, within `[2, 64]`.
pub fn default_bins(n: usize) -> usize {
    ((n as f64 / 5.0).sqrt().ceil() as usize).clamp(2, 64)
}

/// Equal-width bin index of every value; a constant vector lands in bin 0.
fn bin_indices(x: &[f64], bins: usize) -> Result<Vec<usize>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSeries("non-finite value in MI input".into()));
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let width = hi - lo;
    if !(width > 0.0) {
        return Ok(vec![0; x.len()]);
    }
    Ok(x
        .iter()
        .map(|&v| (((v - lo) / width * bins as f64) as usize).min(bins - 1))
        .collect())
}

fn entropy_from_counts(counts: impl Iterator<Item = usize>, n: usize) -> f64 {
    let mut c: Vec<usize> = counts.filter(|&c| c > 0).collect();
    c.sort_unstable();
    let n = n as f64;
    -c.iter()
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>()
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(Error::param("bins", "need at least 2 bins"));
    }
    Ok(())
}

/// Shannon entropy in nats of the equal-width histogram of `x`.
pub fn histogram_entropy(x: &[f64], bins: usize) -> Result<f64> {
    check_bins(bins)?;
    if x.is_empty() {
        return Err(Error::NoRecords);
    }
    let idx = bin_indices(x, bins)?;
    let mut counts = vec![0usize; bins];
    for i in idx {
        counts[i] += 1;
    }
    Ok(entropy_from_counts(counts.into_iter(), x.len()))
}

/// Mutual information in nats, `H(x) + H(y) − H(x, y)`, clamped at zero.
pub fn mutual_information(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    check_bins(bins)?;
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n == 0 {
        return Err(Error::NoRecords);
    }
    if n < bins * bins / 4 {
        log::warn!("{n} samples for a {bins}x{bins} histogram; MI will be biased upward");
    }
    let (bx, by) = (bin_indices(x, bins)?, bin_indices(y, bins)?);
    let mut cx = vec![0usize; bins];
    let mut cy = vec![0usize; bins];
    let mut joint = vec![0usize; bins * bins];
    for (&i, &j) in bx.iter().zip(&by) {
        cx[i] += 1;
        cy[j] += 1;
        joint[i * bins + j] += 1;
    }
    let hx = entropy_from_counts(cx.into_iter(), n);
    let hy = entropy_from_counts(cy.into_iter(), n);
    let hxy = entropy_from_counts(joint.into_iter(), n);
    Ok((hx + hy - hxy).max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiReport {
    pub feature: String,
    pub alpha: f64,
    pub mi_nats: f64,
    pub bins: usize,
    pub n: usize,
}

impl MiReport {
    pub fn mi_bits(&self) -> f64 {
        self.mi_nats / std::f64::consts::LN_2
    }
}

/// MI between each EMA-smoothed feature and the unsmoothed price for every
/// `alpha`. Output is grouped by alpha in the given order, each group sorted
/// by MI descending (ties by feature name).
pub fn mi_alpha_sweep(
    features: &FeatureMatrix,
    price: &TimeSeries,
    alphas: &[f64],
    bins: Option<usize>,
) -> Result<Vec<MiReport>> {
    if alphas.is_empty() {
        return Err(Error::param("alphas", "empty alpha list"));
    }
    if price.index() != features.index() {
        return Err(Error::InvalidSeries(
            "price is not aligned with the feature index".into(),
        ));
    }
    if features.has_nan() || price.values().iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidSeries("NaN in MI input".into()));
    }
    let n = features.n_rows();
    let bins = bins.unwrap_or_else(|| default_bins(n));
    let cells: Vec<(f64, usize)> = alphas
        .iter()
        .flat_map(|&a| (0..features.n_cols()).map(move |j| (a, j)))
        .collect();
    let mut reports = cells
        .par_iter()
        .map(|&(alpha, j)| {
            let smoothed = ema(&features.columns()[j], alpha)?;
            Ok(MiReport {
                feature: features.names()[j].clone(),
                alpha,
                mi_nats: mutual_information(&smoothed, price.values(), bins)?,
                bins,
                n,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let p = features.n_cols().max(1);
    for group in reports.chunks_mut(p) {
        group.sort_by(|a, b| b.mi_nats.total_cmp(&a.mi_nats).then_with(|| a.feature.cmp(&b.feature)));
    }
    Ok(reports)
}

/// `feature,alpha,mi_nats,mi_bits,bins,n` rows.
pub fn mi_report_csv(reports: &[MiReport]) -> String {
    let mut out = String::from("feature,alpha,mi_nats,mi_bits,bins,n\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.feature,
            fmt_f64(r.alpha),
            fmt_f64(r.mi_nats),
            fmt_f64(r.mi_bits()),
            r.bins,
            r.n
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn uniform_four_bins() {
        let x = [0.0, 1.0, 2.0, 3.0, 0.1, 1.1, 2.1, 2.9];
        assert!((histogram_entropy(&x, 4).unwrap() - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn constant_is_zero() {
        assert_eq!(histogram_entropy(&[2.0; 10], 4).unwrap(), 0.0);
        assert_eq!(mutual_information(&[2.0; 10], &[1.0, 2.0, 3.0, 4.0, 5.0, 1.0, 2.0, 3.0, 4.0, 5.0], 4).unwrap(), 0.0);
    }

    #[test]
    fn two_bin_hand_value() {
        // Split at 4.5: three values below, five above.
        let x = [0.0, 1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let (p, q) = (3.0 / 8.0, 5.0 / 8.0);
        let expected = -(p * f64::ln(p) + q * f64::ln(q));
        assert!((histogram_entropy(&x, 2).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn self_and_mirror_information() {
        let mut rng = seeded(3);
        let x: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        let h = histogram_entropy(&x, 10).unwrap();
        assert_eq!(mutual_information(&x, &x, 10).unwrap(), h);
        assert!((mutual_information(&x, &neg, 10).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn independent_samples_near_zero() {
        let mut rng = seeded(11);
        let x: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        assert!(mutual_information(&x, &y, 8).unwrap() < 0.01);
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(matches!(
            mutual_information(&[1.0, 2.0], &[1.0], 2),
            Err(Error::LengthMismatch(2, 1))
        ));
    }

    #[test]
    fn sweep_orders_and_identity_alpha() {
        let price = TimeSeries::new("price", 0, (0..200).map(|h| ((h * 17) % 31) as f64).collect()).unwrap();
        let noise: Vec<f64> = (0..200).map(|h| ((h * 7) % 13) as f64).collect();
        let m = FeatureMatrix::from_columns(
            price.index(),
            [("noise".to_string(), noise.clone()), ("p".to_string(), price.values().to_vec())],
        )
        .unwrap();
        let r = mi_alpha_sweep(&m, &price, &[0.0, 0.9], None).unwrap();
        assert_eq!(r.len(), 4);
        assert_eq!(r[0].feature, "p");
        let bins = default_bins(200);
        assert_eq!(r[0].mi_nats, histogram_entropy(price.values(), bins).unwrap());
        assert_eq!(r[1].mi_nats, mutual_information(&noise, price.values(), bins).unwrap());
        assert!(r[2..].iter().all(|x| x.alpha == 0.9));
        assert!(mi_alpha_sweep(&m, &price, &[], None).is_err());
        let csv = mi_report_csv(&r);
        assert!(csv.starts_with("feature,alpha,mi_nats,mi_bits,bins,n\np,0.0,"));
    }

    proptest! {
        #[test]
        fn symmetric_and_nonnegative(
            xs in prop::collection::vec(-1e3f64..1e3, 20..200),
            seed in any::<u64>(),
            bins in 2usize..12,
        ) {
            let mut rng = seeded(seed);
            let ys: Vec<f64> = xs.iter().map(|x| x * rng.random::<f64>() + rng.random::<f64>()).collect();
            let a = mutual_information(&xs, &ys, bins).unwrap();
            let b = mutual_information(&ys, &xs, bins).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a >= 0.0);
        }
    }
}
