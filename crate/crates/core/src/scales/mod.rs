//! Spatial aggregation across levels and the multi-scale correlation
//! report: how indicator relationships shift when the same data is read at
//! tower, IRIS or commune resolution, with per-level-pair scale differences
//! and sensitivity flags.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::geom::Crosswalk;
use crate::stats::{pearson, Correlation};

/// A spatial level. Report columns keep the order levels are configured in.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    Cell,
    Iris,
    Commune,
    Custom(String),
}

impl Level {
    pub fn parse(s: &str) -> Level {
        match s.trim().to_ascii_lowercase().as_str() {
            "cell" => Level::Cell,
            "iris" => Level::Iris,
            "commune" => Level::Commune,
            other => Level::Custom(other.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Level::Cell => "cell",
            Level::Iris => "iris",
            Level::Commune => "commune",
            Level::Custom(name) => name,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How values move up a crosswalk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMethod {
    /// Crosswalk-weighted sum; for count-type variables only.
    Sum,
    /// Mean weighted by overlap fraction alone.
    Mean,
    /// Mean weighted by overlap fraction times a population weight.
    PopulationWeightedMean,
    /// Mean weighted by actual overlap area.
    ArealWeighted,
}

impl AggregationMethod {
    pub fn parse(s: &str) -> Option<AggregationMethod> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sum" => Some(AggregationMethod::Sum),
            "mean" => Some(AggregationMethod::Mean),
            "population_weighted_mean" | "popmean" => {
                Some(AggregationMethod::PopulationWeightedMean)
            }
            "areal_weighted" | "areal" => Some(AggregationMethod::ArealWeighted),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregationMethod::Sum => "sum",
            AggregationMethod::Mean => "mean",
            AggregationMethod::PopulationWeightedMean => "population_weighted_mean",
            AggregationMethod::ArealWeighted => "areal_weighted",
        }
    }
}

/// Move `values` from the crosswalk's source level to its target level.
///
/// Sum: `out[t] = sum_s w(s->t) v[s]`. Means divide the weighted value mass
/// by the corresponding weight mass (overlap fraction, fraction x
/// population, or overlap area). Targets receiving zero total weight are
/// absent from the output. `population` is required by
/// `PopulationWeightedMean` and ignored otherwise.
pub fn aggregate(
    values: &BTreeMap<String, f64>,
    xwalk: &Crosswalk,
    method: AggregationMethod,
    population: Option<&BTreeMap<String, f64>>,
) -> Result<BTreeMap<String, f64>> {
    if method == AggregationMethod::PopulationWeightedMean && population.is_none() {
        return Err(Error::MissingWeights);
    }
    let mut num: BTreeMap<String, f64> = BTreeMap::new();
    let mut den: BTreeMap<String, f64> = BTreeMap::new();
    for row in &xwalk.rows {
        let Some(&v) = values.get(&row.source) else {
            continue;
        };
        let mass = match method {
            AggregationMethod::Sum | AggregationMethod::Mean => 1.0,
            AggregationMethod::ArealWeighted => row.source_area_m2,
            AggregationMethod::PopulationWeightedMean => {
                population.unwrap().get(&row.source).copied().unwrap_or(0.0)
            }
        };
        for (target, w) in &row.weights {
            *num.entry(target.clone()).or_insert(0.0) += w * mass * v;
            *den.entry(target.clone()).or_insert(0.0) += w * mass;
        }
    }
    let out = match method {
        AggregationMethod::Sum => num
            .into_iter()
            .filter(|(t, _)| den.get(t).is_some_and(|&d| d > 0.0))
            .collect(),
        _ => num
            .into_iter()
            .filter_map(|(t, n)| {
                let d = den.get(&t).copied().unwrap_or(0.0);
                (d > 0.0).then(|| (t, n / d))
            })
            .collect(),
    };
    Ok(out)
}

/// One variable observed (or derived) at several levels.
#[derive(Debug, Clone)]
pub struct VariableLevels {
    pub name: String,
    pub per_level: Vec<(Level, BTreeMap<String, f64>)>,
}

impl VariableLevels {
    pub fn new(name: impl Into<String>) -> Self {
        VariableLevels {
            name: name.into(),
            per_level: Vec::new(),
        }
    }

    pub fn insert(&mut self, level: Level, values: BTreeMap<String, f64>) {
        self.per_level.retain(|(l, _)| *l != level);
        self.per_level.push((level, values));
    }

    pub fn get(&self, level: &Level) -> Option<&BTreeMap<String, f64>> {
        self.per_level
            .iter()
            .find(|(l, _)| l == level)
            .map(|(_, v)| v)
    }
}

/// Derive a variable at every level along a crosswalk chain, starting from
/// base-level values. `population` weights (for the population-weighted
/// mean) are summed up the chain alongside the values.
pub fn derive_levels(
    name: impl Into<String>,
    base_level: Level,
    base_values: BTreeMap<String, f64>,
    chain: &[(Level, &Crosswalk)],
    method: AggregationMethod,
    population: Option<BTreeMap<String, f64>>,
) -> Result<VariableLevels> {
    let mut var = VariableLevels::new(name);
    let mut current = base_values;
    let mut pop = population;
    var.insert(base_level, current.clone());
    for (level, xwalk) in chain {
        let next = aggregate(&current, xwalk, method, pop.as_ref())?;
        let next_pop = match &pop {
            Some(p) => Some(aggregate(p, xwalk, AggregationMethod::Sum, None)?),
            None => None,
        };
        var.insert(level.clone(), next.clone());
        current = next;
        pop = next_pop;
    }
    Ok(var)
}

/// Scale difference between two adjacent levels: `r(level_b) - r(level_a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleDiff {
    pub level_a: Level,
    pub level_b: Level,
    pub delta_r: f64,
    /// Raised when the correlation changes sign or |delta r| exceeds the
    /// configured threshold.
    pub flag: bool,
}

/// Correlation-by-level for one variable pair, plus scale differences for
/// every adjacent pair of levels where both correlations are defined.
#[derive(Debug, Clone)]
pub struct PairReport {
    pub pair: String,
    /// One entry per requested level, in order; None marks `undefined`.
    pub by_level: Vec<(Level, Option<Correlation>)>,
    pub diffs: Vec<ScaleDiff>,
}

impl PairReport {
    /// Assemble from already-computed correlations (None = undefined).
    pub fn from_correlations(
        pair: impl Into<String>,
        by_level: Vec<(Level, Option<Correlation>)>,
        flag_threshold: f64,
    ) -> PairReport {
        let defined: Vec<(usize, f64)> = by_level
            .iter()
            .enumerate()
            .filter_map(|(i, (_, c))| c.map(|c| (i, c.r)))
            .collect();
        let diffs = defined
            .windows(2)
            .map(|w| {
                let (ia, ra) = w[0];
                let (ib, rb) = w[1];
                let delta = rb - ra;
                ScaleDiff {
                    level_a: by_level[ia].0.clone(),
                    level_b: by_level[ib].0.clone(),
                    delta_r: delta,
                    flag: (ra.signum() != rb.signum() && ra != 0.0 && rb != 0.0)
                        || delta.abs() > flag_threshold,
                }
            })
            .collect();
        PairReport {
            pair: pair.into(),
            by_level,
            diffs,
        }
    }

    pub fn r_at(&self, level: &Level) -> Option<f64> {
        self.by_level
            .iter()
            .find(|(l, _)| l == level)
            .and_then(|(_, c)| c.map(|c| c.r))
    }
}

/// The Table-1-shaped product: every pair x level cell is a correlation or
/// an explicit undefined marker, never silently missing.
#[derive(Debug, Clone, Default)]
pub struct MultiScaleReport {
    pub pairs: Vec<PairReport>,
}

impl MultiScaleReport {
    /// `pair,level,r,n` (r column is `undefined` where no value exists).
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "pair,level,r,n")?;
        for p in &self.pairs {
            for (level, corr) in &p.by_level {
                match corr {
                    Some(c) => writeln!(w, "{},{},{},{}", p.pair, level, c.r, c.n)?,
                    None => writeln!(w, "{},{},undefined,0", p.pair, level)?,
                }
            }
        }
        Ok(())
    }

    /// `pair,level_a,level_b,delta_r,flag`.
    pub fn write_diffs_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "pair,level_a,level_b,delta_r,flag")?;
        for p in &self.pairs {
            for d in &p.diffs {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    p.pair, d.level_a, d.level_b, d.delta_r, d.flag
                )?;
            }
        }
        Ok(())
    }
}

/// Correlate two multi-level variables at every requested level.
///
/// A level where either variable is missing, has fewer than 3 shared units,
/// or has zero variance is reported as undefined rather than failing the
/// report.
pub fn multi_scale_correlate(
    var_a: &VariableLevels,
    var_b: &VariableLevels,
    levels: &[Level],
    flag_threshold: f64,
) -> PairReport {
    let pair = format!("{} vs {}", var_a.name, var_b.name);
    let by_level: Vec<(Level, Option<Correlation>)> = levels
        .iter()
        .map(|level| {
            let corr = match (var_a.get(level), var_b.get(level)) {
                (Some(a), Some(b)) => pearson(a, b).ok(),
                _ => None,
            };
            (level.clone(), corr)
        })
        .collect();
    PairReport::from_correlations(pair, by_level, flag_threshold)
}

/// Per-level distribution summary of one variable.
#[derive(Debug, Clone)]
pub struct SensitivityRow {
    pub level: Level,
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
    pub n: usize,
    /// Correlation against the reference variable at this level.
    pub r_vs_reference: Option<Correlation>,
}

#[derive(Debug, Clone)]
pub struct SensitivityReport {
    pub variable: String,
    pub reference: String,
    pub rows: Vec<SensitivityRow>,
    /// Adjacent-level differences of the reference correlation, with flags.
    pub diffs: Vec<ScaleDiff>,
}

impl SensitivityReport {
    /// `level,mean,variance,n,r`, then `level_a,level_b,delta_r,flag` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "level,mean,variance,n,r")?;
        for row in &self.rows {
            let r = row
                .r_vs_reference
                .map(|c| c.r.to_string())
                .unwrap_or_else(|| "undefined".into());
            writeln!(
                w,
                "{},{},{},{},{}",
                row.level, row.mean, row.variance, row.n, r
            )?;
        }
        writeln!(w, "level_a,level_b,delta_r,flag")?;
        for d in &self.diffs {
            writeln!(w, "{},{},{},{}", d.level_a, d.level_b, d.delta_r, d.flag)?;
        }
        Ok(())
    }
}

/// Summarize one variable across levels and flag level pairs where its
/// correlation against `reference` changes sign or moves more than
/// `flag_threshold`.
pub fn sensitivity_report(
    variable: &VariableLevels,
    reference: &VariableLevels,
    levels: &[Level],
    flag_threshold: f64,
) -> SensitivityReport {
    let rows: Vec<SensitivityRow> = levels
        .iter()
        .filter_map(|level| {
            let values = variable.get(level)?;
            let n = values.len();
            if n == 0 {
                return None;
            }
            let mean = values.values().sum::<f64>() / n as f64;
            let variance = values
                .values()
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / n as f64;
            let r_vs_reference = reference.get(level).and_then(|r| pearson(values, r).ok());
            Some(SensitivityRow {
                level: level.clone(),
                mean,
                variance,
                n,
                r_vs_reference,
            })
        })
        .collect();

    let by_level: Vec<(Level, Option<Correlation>)> = rows
        .iter()
        .map(|r| (r.level.clone(), r.r_vs_reference))
        .collect();
    let diffs = PairReport::from_correlations("sensitivity", by_level, flag_threshold).diffs;
    SensitivityReport {
        variable: variable.name.clone(),
        reference: reference.name.clone(),
        rows,
        diffs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::crosswalk::{build_crosswalk, NamedSurface};
    use crate::geom::polygon::Pt;
    use approx::assert_relative_eq;

    fn rect(id: &str, x0: f64, y0: f64, x1: f64, y1: f64) -> NamedSurface {
        NamedSurface::from_ring(
            id,
            &[
                Pt::new(x0, y0),
                Pt::new(x1, y0),
                Pt::new(x1, y1),
                Pt::new(x0, y1),
            ],
        )
        .unwrap()
    }

    fn vals(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn identity_crosswalk_is_identity_for_every_method() {
        let s = vec![rect("a", 0.0, 0.0, 1.0, 1.0), rect("b", 1.0, 0.0, 2.0, 1.0)];
        let xw = build_crosswalk(&s, &s, "cell", "cell");
        let v = vals(&[("a", 3.0), ("b", 7.0)]);
        let pop = vals(&[("a", 10.0), ("b", 20.0)]);
        for method in [
            AggregationMethod::Sum,
            AggregationMethod::Mean,
            AggregationMethod::ArealWeighted,
            AggregationMethod::PopulationWeightedMean,
        ] {
            let out = aggregate(&v, &xw, method, Some(&pop)).unwrap();
            assert_eq!(out.len(), 2, "{}", method.name());
            assert_relative_eq!(out["a"], 3.0, epsilon = 1e-9);
            assert_relative_eq!(out["b"], 7.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn whole_units_merging_mean_is_plain_mean() {
        let s = vec![rect("a", 0.0, 0.0, 1.0, 1.0), rect("b", 1.0, 0.0, 2.0, 1.0)];
        let t = vec![rect("T", 0.0, 0.0, 2.0, 1.0)];
        let xw = build_crosswalk(&s, &t, "cell", "iris");
        let out = aggregate(
            &vals(&[("a", 1.0), ("b", 3.0)]),
            &xw,
            AggregationMethod::Mean,
            None,
        )
        .unwrap();
        assert_relative_eq!(out["T"], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn population_weighted_mean_hand_value() {
        // Populations (100, 300, 600) with values (1, 2, 3):
        // (100 + 600 + 1800) / 1000 = 2.5.
        let s = vec![
            rect("a", 0.0, 0.0, 1.0, 1.0),
            rect("b", 1.0, 0.0, 2.0, 1.0),
            rect("c", 2.0, 0.0, 3.0, 1.0),
        ];
        let t = vec![rect("T", 0.0, 0.0, 3.0, 1.0)];
        let xw = build_crosswalk(&s, &t, "cell", "iris");
        let v = vals(&[("a", 1.0), ("b", 2.0), ("c", 3.0)]);
        let pop = vals(&[("a", 100.0), ("b", 300.0), ("c", 600.0)]);
        let out = aggregate(
            &v,
            &xw,
            AggregationMethod::PopulationWeightedMean,
            Some(&pop),
        )
        .unwrap();
        assert_relative_eq!(out["T"], 2.5, epsilon = 1e-9);

        assert!(matches!(
            aggregate(&v, &xw, AggregationMethod::PopulationWeightedMean, None),
            Err(Error::MissingWeights)
        ));
    }

    #[test]
    fn sum_conserves_totals_through_full_coverage() {
        // 4 cells -> 2 strips; totals must survive exactly.
        let cells = vec![
            rect("c0", 0.0, 0.0, 1.0, 1.0),
            rect("c1", 1.0, 0.0, 2.0, 1.0),
            rect("c2", 0.0, 1.0, 1.0, 2.0),
            rect("c3", 1.0, 1.0, 2.0, 2.0),
        ];
        let strips = vec![
            rect("s0", 0.0, 0.0, 2.0, 1.0),
            rect("s1", 0.0, 1.0, 2.0, 2.0),
        ];
        let xw = build_crosswalk(&cells, &strips, "cell", "iris");
        let v = vals(&[("c0", 5.0), ("c1", 7.0), ("c2", 11.0), ("c3", 13.0)]);
        let out = aggregate(&v, &xw, AggregationMethod::Sum, None).unwrap();
        let total_in: f64 = v.values().sum();
        let total_out: f64 = out.values().sum();
        assert_relative_eq!(total_out, total_in, max_relative = 1e-9);
    }

    #[test]
    fn population_weighted_mean_is_stable_across_levels() {
        // Aggregating values and populations together preserves the global
        // population-weighted mean exactly under full coverage.
        let cells = vec![
            rect("c0", 0.0, 0.0, 1.0, 1.0),
            rect("c1", 1.0, 0.0, 2.0, 1.0),
            rect("c2", 0.0, 1.0, 1.0, 2.0),
            rect("c3", 1.0, 1.0, 2.0, 2.0),
        ];
        let strips = vec![
            rect("s0", 0.0, 0.0, 2.0, 1.0),
            rect("s1", 0.0, 1.0, 2.0, 2.0),
        ];
        let xw = build_crosswalk(&cells, &strips, "cell", "iris");
        let v = vals(&[("c0", 1.5), ("c1", 4.0), ("c2", 2.5), ("c3", 8.0)]);
        let pop = vals(&[("c0", 10.0), ("c1", 40.0), ("c2", 25.0), ("c3", 5.0)]);

        let global = v.iter().map(|(k, x)| pop[k] * x).sum::<f64>() / pop.values().sum::<f64>();

        let v_up = aggregate(
            &v,
            &xw,
            AggregationMethod::PopulationWeightedMean,
            Some(&pop),
        )
        .unwrap();
        let pop_up = aggregate(&pop, &xw, AggregationMethod::Sum, None).unwrap();
        let global_up =
            v_up.iter().map(|(k, x)| pop_up[k] * x).sum::<f64>() / pop_up.values().sum::<f64>();
        assert_relative_eq!(global_up, global, max_relative = 1e-9);
    }

    #[test]
    fn scale_difference_column_arithmetic() {
        // Rows with a missing level still difference correctly:
        // (0.62, 0.92) -> +0.30 and (-0.03, -0.43) -> -0.40.
        let levels = [Level::Cell, Level::Iris, Level::Commune];
        let homes_row = PairReport::from_correlations(
            "homes vs population",
            vec![
                (Level::Cell, Some(Correlation { r: 0.62, n: 100 })),
                (Level::Iris, Some(Correlation { r: 0.92, n: 100 })),
                (Level::Commune, None),
            ],
            0.2,
        );
        assert_eq!(homes_row.diffs.len(), 1);
        assert_relative_eq!(homes_row.diffs[0].delta_r, 0.30, epsilon = 1e-12);
        assert!(homes_row.diffs[0].flag); // 0.30 > 0.2

        let entropy_row = PairReport::from_correlations(
            "entropy vs EDI",
            vec![
                (Level::Cell, None),
                (Level::Iris, Some(Correlation { r: -0.03, n: 100 })),
                (Level::Commune, Some(Correlation { r: -0.43, n: 100 })),
            ],
            0.2,
        );
        assert_eq!(entropy_row.diffs.len(), 1);
        assert_relative_eq!(entropy_row.diffs[0].delta_r, -0.40, epsilon = 1e-12);
        assert_eq!(entropy_row.diffs[0].level_a, Level::Iris);
        assert_eq!(entropy_row.diffs[0].level_b, Level::Commune);

        // Equal correlations: zero difference, no flag.
        let flat = PairReport::from_correlations(
            "flat",
            levels
                .iter()
                .map(|l| (l.clone(), Some(Correlation { r: 0.5, n: 10 })))
                .collect(),
            0.2,
        );
        assert_eq!(flat.diffs.len(), 2);
        for d in &flat.diffs {
            assert_eq!(d.delta_r, 0.0);
            assert!(!d.flag);
        }
    }

    #[test]
    fn multi_scale_report_marks_undefined_levels() {
        let mut a = VariableLevels::new("a");
        a.insert(Level::Cell, vals(&[("u1", 1.0), ("u2", 2.0), ("u3", 3.0)]));
        a.insert(Level::Iris, vals(&[("i1", 1.0), ("i2", 2.0)])); // too few
        let mut b = VariableLevels::new("b");
        b.insert(Level::Cell, vals(&[("u1", 2.0), ("u2", 4.0), ("u3", 6.0)]));
        b.insert(Level::Iris, vals(&[("i1", 1.0), ("i2", 2.0)]));

        let levels = [Level::Cell, Level::Iris, Level::Commune];
        let rep = multi_scale_correlate(&a, &b, &levels, 0.2);
        assert_eq!(rep.by_level.len(), 3); // report totality
        assert!(rep.by_level[0].1.is_some());
        assert!(rep.by_level[1].1.is_none()); // < 3 units -> undefined
        assert!(rep.by_level[2].1.is_none()); // level absent -> undefined
        assert_relative_eq!(rep.r_at(&Level::Cell).unwrap(), 1.0, epsilon = 1e-12);

        let report = MultiScaleReport { pairs: vec![rep] };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("a vs b,iris,undefined,0"));
        let cell_row = text
            .lines()
            .find(|l| l.starts_with("a vs b,cell,"))
            .unwrap();
        let fields: Vec<&str> = cell_row.split(',').collect();
        assert_relative_eq!(fields[2].parse::<f64>().unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(fields[3], "3");
    }

    #[test]
    fn sensitivity_report_flags_and_constant_fields() {
        let levels = [Level::Cell, Level::Iris];
        // Constant variable: zero variance everywhere, r undefined, no flags.
        let mut konst = VariableLevels::new("const");
        konst.insert(Level::Cell, vals(&[("a", 2.0), ("b", 2.0), ("c", 2.0)]));
        konst.insert(Level::Iris, vals(&[("i", 2.0), ("j", 2.0), ("k", 2.0)]));
        let mut reference = VariableLevels::new("ref");
        reference.insert(Level::Cell, vals(&[("a", 1.0), ("b", 2.0), ("c", 3.0)]));
        reference.insert(Level::Iris, vals(&[("i", 1.0), ("j", 2.0), ("k", 3.0)]));
        let rep = sensitivity_report(&konst, &reference, &levels, 0.2);
        assert_eq!(rep.rows.len(), 2);
        for row in &rep.rows {
            assert_eq!(row.variance, 0.0);
            assert!(row.r_vs_reference.is_none());
        }
        assert!(rep.diffs.is_empty());

        // Variable equal to the reference: r = 1 at all levels, no flags.
        let rep = sensitivity_report(&reference, &reference, &levels, 0.2);
        for row in &rep.rows {
            assert_relative_eq!(row.r_vs_reference.unwrap().r, 1.0, epsilon = 1e-12);
        }
        assert_eq!(rep.diffs.len(), 1);
        assert_eq!(rep.diffs[0].delta_r, 0.0);
        assert!(!rep.diffs[0].flag);
    }

    #[test]
    fn sensitivity_flags_table_one_shaped_shift() {
        // r going -0.03 -> -0.43 must flag: |delta| = 0.40 > 0.2.
        let diffs = PairReport::from_correlations(
            "x",
            vec![
                (Level::Iris, Some(Correlation { r: -0.03, n: 50 })),
                (Level::Commune, Some(Correlation { r: -0.43, n: 50 })),
            ],
            0.2,
        )
        .diffs;
        assert_eq!(diffs.len(), 1);
        assert!(diffs[0].flag);
        assert_relative_eq!(diffs[0].delta_r, -0.40, epsilon = 1e-12);
    }
}
