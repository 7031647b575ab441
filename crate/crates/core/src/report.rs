//! Per-subject summary rows and the cohort tables built from them.
//!
//! A summary row describes one subject's parameter maps under one mask source
//! and one fusion strategy. The cohort report compares sources with paired
//! t-tests, groups with Mann–Whitney U tests, and reports inter-subject CVs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fgr::Group;
use crate::grid::{IvimMaps, Parameter};
use crate::mask_ops::FusionStrategy;
use crate::stats::{self, TestResult};

/// Where a mask came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    Manual,
    Automatic,
}

impl MaskSource {
    pub const ALL: [MaskSource; 2] = [MaskSource::Manual, MaskSource::Automatic];

    pub fn name(&self) -> &'static str {
        match self {
            MaskSource::Manual => "manual",
            MaskSource::Automatic => "automatic",
        }
    }
}

impl fmt::Display for MaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MaskSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "manual" => Ok(MaskSource::Manual),
            "automatic" | "auto" => Ok(MaskSource::Automatic),
            _ => Err(Error::Argument(format!(
                "unknown mask source `{s}` (expected manual or automatic)"
            ))),
        }
    }
}

/// Parameters that enter the cohort tables.
pub const REPORTED: [Parameter; 3] = [Parameter::F, Parameter::DStar, Parameter::Adc];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub subject: String,
    pub group: Group,
    pub source: MaskSource,
    pub strategy: FusionStrategy,
    pub volume_ml: f64,
    pub f_mean: f64,
    pub d_star_mean: f64,
    pub adc_mean: f64,
    pub f_cv: f64,
    pub d_star_cv: f64,
    pub adc_cv: f64,
    pub f_entropy: f64,
    pub d_star_entropy: f64,
    pub adc_entropy: f64,
}

/// The quantity a table row is about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    VolumeMl,
    Mean(Parameter),
    Cv(Parameter),
    Entropy(Parameter),
}

impl Metric {
    pub fn all() -> Vec<Metric> {
        let mut v = vec![Metric::VolumeMl];
        for kind in [Metric::Mean, Metric::Cv, Metric::Entropy] {
            v.extend(REPORTED.iter().map(|&p| kind(p)));
        }
        v
    }

    pub fn name(&self) -> String {
        match self {
            Metric::VolumeMl => "volume_ml".into(),
            Metric::Mean(p) => format!("{}_mean", p.name()),
            Metric::Cv(p) => format!("{}_cv", p.name()),
            Metric::Entropy(p) => format!("{}_entropy", p.name()),
        }
    }
}

impl SummaryRow {
    /// Summarizes fitted maps; needs at least two fitted voxels.
    pub fn from_maps(
        subject: impl Into<String>,
        group: Group,
        source: MaskSource,
        strategy: FusionStrategy,
        maps: &IvimMaps,
        bins: usize,
    ) -> Result<Self> {
        let subject = subject.into();
        let mut means = [0.0; 3];
        let mut cvs = [0.0; 3];
        let mut entropies = [0.0; 3];
        for (k, &p) in REPORTED.iter().enumerate() {
            let values = maps.fitted_values(p);
            if values.len() < 2 {
                return Err(Error::Argument(format!(
                    "subject {subject} ({source}, {strategy}): {} fitted {} voxels, need at least 2",
                    values.len(),
                    p.name()
                )));
            }
            means[k] = values.iter().sum::<f64>() / values.len() as f64;
            cvs[k] = stats::cv(&values)?;
            entropies[k] = stats::shannon_entropy(&values, bins)?;
        }
        Ok(SummaryRow {
            subject,
            group,
            source,
            strategy,
            volume_ml: maps.mask.volume_ml(),
            f_mean: means[0],
            d_star_mean: means[1],
            adc_mean: means[2],
            f_cv: cvs[0],
            d_star_cv: cvs[1],
            adc_cv: cvs[2],
            f_entropy: entropies[0],
            d_star_entropy: entropies[1],
            adc_entropy: entropies[2],
        })
    }

    pub fn metric(&self, metric: Metric) -> f64 {
        let pick = |p: Parameter, v: [f64; 3]| match p {
            Parameter::F => v[0],
            Parameter::DStar => v[1],
            Parameter::Adc => v[2],
            _ => f64::NAN,
        };
        match metric {
            Metric::VolumeMl => self.volume_ml,
            Metric::Mean(p) => pick(p, [self.f_mean, self.d_star_mean, self.adc_mean]),
            Metric::Cv(p) => pick(p, [self.f_cv, self.d_star_cv, self.adc_cv]),
            Metric::Entropy(p) => pick(p, [self.f_entropy, self.d_star_entropy, self.adc_entropy]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Manual against automatic, paired by subject.
    PairedT,
    /// FGR against Control within one mask source.
    MannWhitney,
}

/// One hypothesis test in the comparison table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub metric: String,
    pub strategy: FusionStrategy,
    pub test: TestKind,
    /// `manual_vs_automatic` for paired tests, otherwise the mask source.
    pub comparison: String,
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: Option<usize>,
    pub degenerate: bool,
}

/// Inter-subject coefficient of variation of subject-level means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub parameter: String,
    pub strategy: FusionStrategy,
    pub source: MaskSource,
    pub group: Group,
    pub n: usize,
    /// Empty when fewer than two subjects or the mean is zero.
    pub cv: Option<f64>,
}

/// Agreement between manual and automatic inter-subject CVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementRow {
    pub strategy: FusionStrategy,
    /// `overall`, `FGR` or `Control`.
    pub scope: String,
    pub n: usize,
    /// Mean absolute percentage difference with the manual CV as reference.
    pub mean_abs_pct_diff: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub tests: Vec<TestRow>,
    pub cvs: Vec<CvRow>,
    pub agreement: Vec<AgreementRow>,
}

type Key<'a> = (FusionStrategy, MaskSource, &'a str);

fn index_rows(rows: &[SummaryRow]) -> Result<BTreeMap<Key<'_>, &SummaryRow>> {
    let mut index = BTreeMap::new();
    let mut groups: BTreeMap<&str, Group> = BTreeMap::new();
    for r in rows {
        if let Some(g) = groups.insert(&r.subject, r.group) {
            if g != r.group {
                return Err(Error::Argument(format!(
                    "subject {} listed in both {} and {}",
                    r.subject, g, r.group
                )));
            }
        }
        if index.insert((r.strategy, r.source, r.subject.as_str()), r).is_some() {
            return Err(Error::Argument(format!(
                "duplicate summary for subject {} ({}, {})",
                r.subject, r.source, r.strategy
            )));
        }
        for m in Metric::all() {
            if !r.metric(m).is_finite() {
                return Err(Error::Argument(format!(
                    "subject {} ({}, {}): {} is not finite",
                    r.subject,
                    r.source,
                    r.strategy,
                    m.name()
                )));
            }
        }
    }
    Ok(index)
}

fn test_row(
    metric: Metric,
    strategy: FusionStrategy,
    test: TestKind,
    comparison: &str,
    r: TestResult,
) -> TestRow {
    TestRow {
        metric: metric.name(),
        strategy,
        test,
        comparison: comparison.to_string(),
        statistic: r.statistic,
        p_value: r.p_value,
        n1: r.n1,
        n2: r.n2,
        degenerate: r.degenerate,
    }
}

/// Builds the cohort tables. Paired tests need at least two subjects with
/// both mask sources under a strategy; group tests are emitted only when both
/// groups are present.
pub fn cohort_report(rows: &[SummaryRow]) -> Result<CohortReport> {
    let index = index_rows(rows)?;
    let strategies: BTreeSet<FusionStrategy> = rows.iter().map(|r| r.strategy).collect();
    let strategies: Vec<FusionStrategy> = FusionStrategy::ALL
        .into_iter()
        .filter(|s| strategies.contains(s))
        .collect();
    if strategies.is_empty() {
        return Err(Error::Argument("no summary rows".into()));
    }

    let subjects_of = |strategy: FusionStrategy, source: MaskSource| -> Vec<&SummaryRow> {
        index
            .range((strategy, source, "")..)
            .take_while(|((s, src, _), _)| *s == strategy && *src == source)
            .map(|(_, r)| *r)
            .collect()
    };

    let mut tests = Vec::new();
    for &strategy in &strategies {
        let manual = subjects_of(strategy, MaskSource::Manual);
        let pairs: Vec<(&SummaryRow, &SummaryRow)> = manual
            .iter()
            .filter_map(|m| {
                index
                    .get(&(strategy, MaskSource::Automatic, m.subject.as_str()))
                    .map(|a| (*m, *a))
            })
            .collect();
        if pairs.len() < 2 {
            return Err(Error::Argument(format!(
                "strategy {strategy}: {} subject(s) with both manual and automatic summaries, \
                 paired tests need at least 2",
                pairs.len()
            )));
        }
        for metric in Metric::all() {
            let x: Vec<f64> = pairs.iter().map(|(m, _)| m.metric(metric)).collect();
            let y: Vec<f64> = pairs.iter().map(|(_, a)| a.metric(metric)).collect();
            let r = stats::paired_t_test(&x, &y)?;
            tests.push(test_row(metric, strategy, TestKind::PairedT, "manual_vs_automatic", r));
        }
        for source in MaskSource::ALL {
            let members = subjects_of(strategy, source);
            let fgr: Vec<&SummaryRow> = members.iter().copied().filter(|r| r.group == Group::Fgr).collect();
            let ctl: Vec<&SummaryRow> = members.iter().copied().filter(|r| r.group == Group::Control).collect();
            if fgr.is_empty() || ctl.is_empty() {
                continue;
            }
            for metric in Metric::all() {
                let x: Vec<f64> = fgr.iter().map(|r| r.metric(metric)).collect();
                let y: Vec<f64> = ctl.iter().map(|r| r.metric(metric)).collect();
                let r = stats::mann_whitney_u(&x, &y)?;
                tests.push(test_row(metric, strategy, TestKind::MannWhitney, source.name(), r));
            }
        }
    }

    let mut cvs = Vec::new();
    for &strategy in &strategies {
        for source in MaskSource::ALL {
            let members = subjects_of(strategy, source);
            for group in [Group::Fgr, Group::Control] {
                let in_group: Vec<&SummaryRow> =
                    members.iter().copied().filter(|r| r.group == group).collect();
                for p in REPORTED {
                    let values: Vec<f64> = in_group.iter().map(|r| r.metric(Metric::Mean(p))).collect();
                    cvs.push(CvRow {
                        parameter: p.name().to_string(),
                        strategy,
                        source,
                        group,
                        n: values.len(),
                        cv: stats::cv_sample(&values).ok(),
                    });
                }
            }
        }
    }

    let mut agreement = Vec::new();
    for &strategy in &strategies {
        let lookup = |source: MaskSource, group: Group, p: &str| {
            cvs.iter()
                .find(|c| c.strategy == strategy && c.source == source && c.group == group && c.parameter == p)
                .and_then(|c| c.cv)
        };
        let scopes: [(&str, &[Group]); 3] = [
            ("overall", &[Group::Fgr, Group::Control]),
            ("FGR", &[Group::Fgr]),
            ("Control", &[Group::Control]),
        ];
        for (scope, groups) in scopes {
            let (mut a, mut b) = (Vec::new(), Vec::new());
            for &g in groups {
                for p in REPORTED {
                    if let (Some(m), Some(x)) = (
                        lookup(MaskSource::Manual, g, p.name()),
                        lookup(MaskSource::Automatic, g, p.name()),
                    ) {
                        a.push(m);
                        b.push(x);
                    }
                }
            }
            agreement.push(AgreementRow {
                strategy,
                scope: scope.to_string(),
                n: a.len(),
                mean_abs_pct_diff: stats::mean_abs_pct_diff(&a, &b).ok(),
            });
        }
    }

    Ok(CohortReport {
        tests,
        cvs,
        agreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(subject: &str, group: Group, source: MaskSource, f: f64) -> SummaryRow {
        SummaryRow {
            subject: subject.into(),
            group,
            source,
            strategy: FusionStrategy::Avg,
            volume_ml: 30.0 + f,
            f_mean: f,
            d_star_mean: 0.05 + f / 10.0,
            adc_mean: 0.002 + f / 1000.0,
            f_cv: 0.1 + f,
            d_star_cv: 0.2 + f,
            adc_cv: 0.05 + f,
            f_entropy: 3.0 + f,
            d_star_entropy: 4.0 + f,
            adc_entropy: 5.0 + f,
        }
    }

    fn cohort(offset: f64) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for (k, f) in [0.20, 0.25, 0.31, 0.28, 0.35, 0.22].into_iter().enumerate() {
            let g = if k < 3 { Group::Fgr } else { Group::Control };
            let id = format!("s{k}");
            rows.push(row(&id, g, MaskSource::Manual, f));
            rows.push(row(&id, g, MaskSource::Automatic, f + offset));
        }
        rows
    }

    #[test]
    fn identical_sources_give_unit_p() {
        let r = cohort_report(&cohort(0.0)).unwrap();
        let paired: Vec<&TestRow> = r.tests.iter().filter(|t| t.test == TestKind::PairedT).collect();
        assert_eq!(paired.len(), Metric::all().len());
        assert!(paired.iter().all(|t| t.p_value == 1.0));
        for a in &r.agreement {
            assert_eq!(a.mean_abs_pct_diff, Some(0.0));
        }
    }

    #[test]
    fn group_tests_and_cvs_present() {
        let r = cohort_report(&cohort(0.01)).unwrap();
        let mw = r.tests.iter().filter(|t| t.test == TestKind::MannWhitney).count();
        assert_eq!(mw, 2 * Metric::all().len());
        assert_eq!(r.cvs.len(), 2 * 2 * 3);
        let f = r
            .cvs
            .iter()
            .find(|c| c.parameter == "f" && c.source == MaskSource::Manual && c.group == Group::Fgr)
            .unwrap();
        assert!((f.cv.unwrap() - stats::cv_sample(&[0.20, 0.25, 0.31]).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn single_subject_is_rejected() {
        let rows = vec![
            row("a", Group::Fgr, MaskSource::Manual, 0.3),
            row("a", Group::Fgr, MaskSource::Automatic, 0.3),
        ];
        assert!(matches!(cohort_report(&rows), Err(Error::Argument(_))));
    }

    #[test]
    fn duplicates_are_rejected() {
        let mut rows = cohort(0.0);
        rows.push(rows[0].clone());
        assert!(cohort_report(&rows).is_err());
    }

    #[test]
    fn metric_names_match_columns() {
        let names: Vec<String> = Metric::all().iter().map(Metric::name).collect();
        assert_eq!(names[0], "volume_ml");
        assert!(names.contains(&"d_star_entropy".to_string()));
        assert_eq!(names.len(), 10);
    }
}
