//! Per-user mobility indicators: visit distributions, temporally
//! uncorrelated mobility entropy, and the density-detrended Corrected
//! Mobility Entropy (CME).
//!
//! Raw entropy depends on how finely the tower grid slices space: the same
//! movement scores higher wherever towers are dense. CME removes that trend
//! by subtracting a density-conditional baseline: users are bucketed by
//! log10 of their home tower's density, the per-bucket mean entropy is the
//! baseline, and CME is the residual `H - Ḣ(d)`. By construction the
//! residual averages to zero within every bucket.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::home::HomeAssignment;
use crate::ingest::CdrRecord;

/// Per-user visit probabilities over towers. Support is exactly the set of
/// towers visited in-window; probabilities are positive and sum to 1.
#[derive(Debug, Clone)]
pub struct VisitDistribution {
    /// `(tower index, p)` sorted by tower index.
    pub probs: Vec<(u32, f64)>,
    pub n_events: u32,
}

impl VisitDistribution {
    /// From per-tower visit counts; errors on an all-zero iterator.
    pub fn from_counts(counts: impl IntoIterator<Item = (u32, u32)>) -> Result<Self> {
        let mut items: Vec<(u32, u32)> = counts.into_iter().filter(|&(_, c)| c > 0).collect();
        items.sort_unstable();
        let total: u64 = items.iter().map(|&(_, c)| c as u64).sum();
        if total == 0 {
            return Err(Error::Internal(
                "visit distribution over zero events".into(),
            ));
        }
        Ok(VisitDistribution {
            probs: items
                .iter()
                .map(|&(t, c)| (t, c as f64 / total as f64))
                .collect(),
            n_events: total as u32,
        })
    }

    pub fn support(&self) -> usize {
        self.probs.len()
    }
}

/// Visit distribution of one user's event sequence.
pub fn visit_distribution(events: &[CdrRecord]) -> Result<VisitDistribution> {
    let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
    for e in events {
        *counts.entry(e.cell).or_insert(0) += 1;
    }
    VisitDistribution::from_counts(counts)
}

/// Temporally-uncorrelated mobility entropy in bits:
/// `H = -sum_i p_i log2 p_i`.
pub fn mobility_entropy(dist: &VisitDistribution) -> f64 {
    -dist
        .probs
        .iter()
        .map(|&(_, p)| if p > 0.0 { p * p.log2() } else { 0.0 })
        .sum::<f64>()
}

/// Bin arithmetic runs on log10(density) quantized to this resolution, so
/// float noise (projection roundtrips, area sums) cannot split a physical
/// density cluster across bins. 1e-9 in log space is a 2e-7 % density
/// difference, far below anything meaningful.
const LOG10_QUANTUM: f64 = 1e-9;

fn quantized_log10(density_per_km2: f64) -> f64 {
    (density_per_km2.log10() / LOG10_QUANTUM).round() * LOG10_QUANTUM
}

/// One calibration bucket over quantized log10(density).
#[derive(Debug, Clone, PartialEq)]
pub struct CalBin {
    pub log10_lo: f64,
    pub log10_hi: f64,
    pub mean_h: f64,
    pub count: usize,
}

/// Density-conditional entropy baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTable {
    /// Contiguous bins in increasing density order.
    pub bins: Vec<CalBin>,
}

impl CalibrationTable {
    /// Bin holding this density, plus whether an out-of-range value was
    /// clamped to the nearest end.
    pub fn bin_index(&self, density_per_km2: f64) -> Result<(usize, bool)> {
        if self.bins.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        let x = quantized_log10(density_per_km2);
        let last = self.bins.len() - 1;
        if x < self.bins[0].log10_lo {
            return Ok((0, true));
        }
        if x > self.bins[last].log10_hi {
            return Ok((last, true));
        }
        for (i, bin) in self.bins.iter().enumerate() {
            if x >= bin.log10_lo && (x < bin.log10_hi || i == last) {
                return Ok((i, false));
            }
        }
        Ok((last, false))
    }

    /// Baseline for a density (towers/km²). Densities outside the table
    /// range clamp to the nearest bin; the flag reports the clamp.
    pub fn lookup(&self, density_per_km2: f64) -> Result<(f64, bool)> {
        let (i, clamped) = self.bin_index(density_per_km2)?;
        Ok((self.bins[i].mean_h, clamped))
    }

    /// `bin_lo,bin_hi,H_mean,count` (bin edges in log10 towers/km²).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "bin_lo,bin_hi,H_mean,count")?;
        for b in &self.bins {
            writeln!(w, "{},{},{},{}", b.log10_lo, b.log10_hi, b.mean_h, b.count)?;
        }
        Ok(())
    }
}

/// Build the baseline from `(entropy, home density)` samples.
///
/// Buckets are quantile bins (deciles by `bins = 10`) over log10(density).
/// Tie runs never split across bins, so heavily clustered densities simply
/// collapse to fewer, wider bins. Bins thinner than `min_users` merge into
/// their right neighbor (the last one merges leftward). Errors when fewer
/// than `min_users` samples exist in total.
pub fn calibrate_baseline(
    samples: &[(f64, f64)],
    bins: usize,
    min_users: usize,
) -> Result<CalibrationTable> {
    if samples.len() < min_users.max(1) {
        return Err(Error::TooFewUsers {
            got: samples.len(),
            min: min_users.max(1),
        });
    }
    let mut by_logd: Vec<(f64, f64)> = samples
        .iter()
        .map(|&(h, d)| (quantized_log10(d), h))
        .collect();
    by_logd.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = by_logd.len();
    let bins = bins.max(1);

    // Quantile group boundaries, nudged right past any tie run so equal
    // densities stay in one bin.
    let mut starts: Vec<usize> = vec![0];
    for k in 1..bins {
        let mut b = (k * n) / bins;
        while b < n && b > 0 && by_logd[b - 1].0 == by_logd[b].0 {
            b += 1;
        }
        if b < n && *starts.last().unwrap() < b {
            starts.push(b);
        }
    }

    let mut bins_out: Vec<CalBin> = Vec::with_capacity(starts.len());
    for (g, &start) in starts.iter().enumerate() {
        let end = starts.get(g + 1).copied().unwrap_or(n);
        let slice = &by_logd[start..end];
        let mean_h = slice.iter().map(|&(_, h)| h).sum::<f64>() / slice.len() as f64;
        bins_out.push(CalBin {
            log10_lo: slice[0].0,
            // Half-open up to the next group's first value; the last bin
            // closes on the observed maximum.
            log10_hi: starts
                .get(g + 1)
                .map_or(by_logd[n - 1].0, |&next| by_logd[next].0),
            mean_h,
            count: slice.len(),
        });
    }

    // Merge thin bins rightward; the final bin merges into its left
    // neighbor if still thin.
    let mut merged: Vec<CalBin> = Vec::with_capacity(bins_out.len());
    let mut carry: Option<CalBin> = None;
    for bin in bins_out.drain(..) {
        let mut bin = bin;
        if let Some(c) = carry.take() {
            bin = merge_bins(&c, &bin);
        }
        if bin.count < min_users {
            carry = Some(bin);
        } else {
            merged.push(bin);
        }
    }
    if let Some(c) = carry {
        match merged.last_mut() {
            Some(last) => *last = merge_bins(last, &c),
            None => merged.push(c), // every sample in one thin bin: keep it
        }
    }

    Ok(CalibrationTable { bins: merged })
}

fn merge_bins(a: &CalBin, b: &CalBin) -> CalBin {
    let count = a.count + b.count;
    let mean_h = if count > 0 {
        (a.mean_h * a.count as f64 + b.mean_h * b.count as f64) / count as f64
    } else {
        0.0
    };
    CalBin {
        log10_lo: a.log10_lo.min(b.log10_lo),
        log10_hi: a.log10_hi.max(b.log10_hi),
        mean_h,
        count,
    }
}

/// Corrected Mobility Entropy: the density-detrended residual
/// `CME = H - Ḣ(bin(d))` in bits (signed). The flag reports an
/// out-of-range density clamped to the nearest bin.
pub fn corrected_mobility_entropy(
    h_bits: f64,
    home_density_per_km2: f64,
    table: &CalibrationTable,
) -> Result<(f64, bool)> {
    let (baseline, clamped) = table.lookup(home_density_per_km2)?;
    Ok((h_bits - baseline, clamped))
}

/// Per-tower mean of a per-user indicator over users homed at that tower.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TowerIndicator {
    /// cell id -> (mean, user count); towers with no homed users omitted.
    pub by_tower: BTreeMap<String, (f64, usize)>,
}

impl TowerIndicator {
    /// `cell_id,mean,count`, sorted by cell id.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "cell_id,mean,count")?;
        for (cell, (mean, count)) in &self.by_tower {
            writeln!(w, "{cell},{mean},{count}")?;
        }
        Ok(())
    }

    pub fn means(&self) -> BTreeMap<String, f64> {
        self.by_tower
            .iter()
            .map(|(k, &(m, _))| (k.clone(), m))
            .collect()
    }

    pub fn counts(&self) -> BTreeMap<String, f64> {
        self.by_tower
            .iter()
            .map(|(k, &(_, c))| (k.clone(), c as f64))
            .collect()
    }
}

/// Average per-user values at their detected home tower (qualifying homed
/// users only; users without a home are excluded).
pub fn average_by_home(values: &BTreeMap<String, f64>, homes: &[HomeAssignment]) -> TowerIndicator {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for a in homes {
        if !a.qualifies {
            continue;
        }
        let (Some(cell), Some(&v)) = (&a.home_cell, values.get(&a.user)) else {
            continue;
        };
        let e = sums.entry(cell.clone()).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    TowerIndicator {
        by_tower: sums
            .into_iter()
            .map(|(cell, (sum, count))| (cell, (sum / count as f64, count)))
            .collect(),
    }
}

/// One row of the per-user indicator export
/// `user_id,H,CME,home_cell,density`.
#[derive(Debug, Clone)]
pub struct UserIndicatorRow {
    pub user: String,
    pub h_bits: f64,
    pub cme_bits: Option<f64>,
    pub home_cell: Option<String>,
    pub density_per_km2: Option<f64>,
}

pub fn write_user_indicators_csv<W: std::io::Write>(
    rows: &[UserIndicatorRow],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "user_id,H,CME,home_cell,density")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.user,
            r.h_bits,
            r.cme_bits.map(|v| v.to_string()).unwrap_or_default(),
            r.home_cell.as_deref().unwrap_or(""),
            r.density_per_km2.map(|v| v.to_string()).unwrap_or_default(),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dist(counts: &[(u32, u32)]) -> VisitDistribution {
        VisitDistribution::from_counts(counts.iter().copied()).unwrap()
    }

    #[test]
    fn distribution_examples() {
        let d = dist(&[(0, 4)]);
        assert_eq!(d.probs, vec![(0, 1.0)]);

        let d = dist(&[(0, 2), (1, 2)]);
        assert_eq!(d.probs, vec![(0, 0.5), (1, 0.5)]);

        let d = dist(&[(0, 2), (1, 1), (2, 1)]);
        assert_eq!(d.probs, vec![(0, 0.5), (1, 0.25), (2, 0.25)]);
        assert_relative_eq!(
            d.probs.iter().map(|&(_, p)| p).sum::<f64>(),
            1.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn zero_events_is_an_error() {
        assert!(VisitDistribution::from_counts([]).is_err());
        assert!(VisitDistribution::from_counts([(3, 0)]).is_err());
    }

    #[test]
    fn entropy_analytic_values() {
        assert_relative_eq!(mobility_entropy(&dist(&[(0, 4)])), 0.0);
        assert_relative_eq!(
            mobility_entropy(&dist(&[(0, 1), (1, 1), (2, 1), (3, 1)])),
            2.0
        );
        assert_relative_eq!(mobility_entropy(&dist(&[(0, 2), (1, 1), (2, 1)])), 1.5);
    }

    #[test]
    fn single_bin_collapse_gives_global_mean() {
        let samples: Vec<(f64, f64)> = (0..100).map(|i| (i as f64 / 10.0, 2.0)).collect();
        let table = calibrate_baseline(&samples, 10, 10).unwrap();
        assert_eq!(table.bins.len(), 1);
        let global: f64 = samples.iter().map(|s| s.0).sum::<f64>() / 100.0;
        assert_relative_eq!(table.bins[0].mean_h, global, epsilon = 1e-12);
    }

    #[test]
    fn two_equal_bins_keep_their_means() {
        let mut samples = Vec::new();
        for _ in 0..60 {
            samples.push((1.0, 0.1));
            samples.push((3.0, 10.0));
        }
        let table = calibrate_baseline(&samples, 2, 50).unwrap();
        assert_eq!(table.bins.len(), 2);
        assert_relative_eq!(table.bins[0].mean_h, 1.0, epsilon = 1e-12);
        assert_relative_eq!(table.bins[1].mean_h, 3.0, epsilon = 1e-12);
        assert_eq!(table.bins[0].count, 60);
    }

    #[test]
    fn bin_means_track_a_linear_trend() {
        // H = 2 + 0.5*log10(d); the independent check is a two-point
        // least-squares line through the bin means.
        let n = 1000;
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let logd = -1.0 + 3.0 * (i as f64 + 0.5) / n as f64;
                (2.0 + 0.5 * logd, 10f64.powf(logd))
            })
            .collect();
        let table = calibrate_baseline(&samples, 10, 50).unwrap();
        assert!(table.bins.len() >= 8);
        // Regression oracle over (bin center, bin mean).
        let pts: Vec<(f64, f64)> = table
            .bins
            .iter()
            .map(|b| ((b.log10_lo + b.log10_hi) / 2.0, b.mean_h))
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        let bin_width = 3.0 / 10.0;
        assert!((slope - 0.5).abs() <= 2.0 * bin_width, "slope {slope}");
    }

    #[test]
    fn too_few_samples_error() {
        let samples = vec![(1.0, 1.0); 10];
        assert!(matches!(
            calibrate_baseline(&samples, 10, 50),
            Err(Error::TooFewUsers { got: 10, min: 50 })
        ));
    }

    #[test]
    fn cme_is_the_residual() {
        let table = CalibrationTable {
            bins: vec![CalBin {
                log10_lo: -1.0,
                log10_hi: 1.0,
                mean_h: 1.2,
                count: 100,
            }],
        };
        let (cme, clamped) = corrected_mobility_entropy(1.5, 1.0, &table).unwrap();
        assert_relative_eq!(cme, 0.3, epsilon = 1e-12);
        assert!(!clamped);

        // User exactly at baseline.
        let (cme, _) = corrected_mobility_entropy(1.2, 1.0, &table).unwrap();
        assert_relative_eq!(cme, 0.0, epsilon = 1e-12);

        // Out-of-range density clamps and flags.
        let (cme, clamped) = corrected_mobility_entropy(1.2, 1e6, &table).unwrap();
        assert_relative_eq!(cme, 0.0, epsilon = 1e-12);
        assert!(clamped);

        let empty = CalibrationTable { bins: vec![] };
        assert!(corrected_mobility_entropy(1.0, 1.0, &empty).is_err());
    }

    #[test]
    fn cme_mean_is_zero_within_each_bin() {
        // Varied entropies across two density clusters.
        let mut samples = Vec::new();
        for i in 0..200 {
            let h = 1.0 + (i % 17) as f64 * 0.1;
            let d = if i % 2 == 0 { 0.2 } else { 20.0 };
            samples.push((h, d));
        }
        let table = calibrate_baseline(&samples, 10, 50).unwrap();
        let mut sums: Vec<(f64, usize)> = vec![(0.0, 0); table.bins.len()];
        for &(h, d) in &samples {
            let (cme, _) = corrected_mobility_entropy(h, d, &table).unwrap();
            let (idx, clamped) = table.bin_index(d).unwrap();
            assert!(!clamped);
            sums[idx].0 += cme;
            sums[idx].1 += 1;
        }
        for (sum, count) in sums {
            assert!(count > 0);
            assert!((sum / count as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn average_by_home_hand_means() {
        let mk = |user: &str, cell: Option<&str>, q: bool| HomeAssignment {
            user: user.into(),
            home_cell: cell.map(str::to_string),
            score: 1.0,
            tie_broken: false,
            qualifies: q,
        };
        let homes = vec![
            mk("u1", Some("c1"), true),
            mk("u2", Some("c1"), true),
            mk("u3", Some("c2"), true),
            mk("u4", None, true),
            mk("u5", Some("c3"), true),
        ];
        let values: BTreeMap<String, f64> = [
            ("u1".into(), 1.0),
            ("u2".into(), 3.0),
            ("u3".into(), 5.0),
            ("u4".into(), 100.0),
            ("u5".into(), 7.0),
        ]
        .into_iter()
        .collect();
        let ti = average_by_home(&values, &homes);
        // Hand means: c1 = (1+3)/2 = 2, c2 = 5, c3 = 7; u4 has no home.
        assert_eq!(ti.by_tower["c1"], (2.0, 2));
        assert_eq!(ti.by_tower["c2"], (5.0, 1));
        assert_eq!(ti.by_tower["c3"], (7.0, 1));
        assert_eq!(ti.by_tower.len(), 3);
    }
}
