//! Observed-to-expected lung volume, control-referenced Z-scores and a
//! single-threshold ROC classifier for growth restriction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Plausible gestational ages in weeks.
pub const GA_RANGE: (f64, f64) = (15.0, 45.0);

/// Expected total lung volume (mL) at `ga_weeks` from the cubic growth model.
pub fn expected_tlv(ga_weeks: f64) -> Result<f64> {
    let (lo, hi) = GA_RANGE;
    if !(lo..=hi).contains(&ga_weeks) {
        return Err(Error::ModelRange {
            ga: ga_weeks,
            reason: format!("outside the plausible range [{lo}, {hi}] weeks"),
        });
    }
    let ga = ga_weeks;
    let v = -0.0132 * ga.powi(3) + 1.14 * ga.powi(2) - 27.38 * ga + 207.5;
    if v <= 0.0 {
        return Err(Error::ModelRange {
            ga,
            reason: format!("expected volume {v} mL is not positive"),
        });
    }
    Ok(v)
}

/// Observed over expected lung volume.
pub fn oe_tlv(observed_ml: f64, ga_weeks: f64) -> Result<f64> {
    if !(observed_ml.is_finite() && observed_ml > 0.0) {
        return Err(Error::Argument(format!(
            "observed lung volume must be positive, got {observed_ml}"
        )));
    }
    Ok(observed_ml / expected_tlv(ga_weeks)?)
}

/// Parses `"28"`, `"28.4"` or week-plus-day notation `"28+2"` into weeks.
pub fn parse_ga(text: &str) -> Result<f64> {
    let text = text.trim();
    let bad = |reason: &str| Error::Argument(format!("gestational age `{text}`: {reason}"));
    let weeks = match text.split_once('+') {
        Some((w, d)) => {
            let w: u32 = w.trim().parse().map_err(|_| bad("weeks must be an integer"))?;
            let d: u32 = d.trim().parse().map_err(|_| bad("days must be an integer"))?;
            if d > 6 {
                return Err(bad("days must be 0 to 6"));
            }
            f64::from(w) + f64::from(d) / 7.0
        }
        None => text.parse::<f64>().map_err(|_| bad("not a number"))?,
    };
    if !weeks.is_finite() {
        return Err(bad("not finite"));
    }
    Ok(weeks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "FGR", alias = "fgr")]
    Fgr,
    #[serde(rename = "Control", alias = "control")]
    Control,
}

impl Group {
    pub fn name(&self) -> &'static str {
        match self {
            Group::Fgr => "FGR",
            Group::Control => "Control",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fgr" => Ok(Group::Fgr),
            "control" => Ok(Group::Control),
            _ => Err(Error::Argument(format!(
                "unknown group `{s}` (expected FGR or Control)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub ga_weeks: f64,
    pub group: Group,
    pub tlv_ml: f64,
}

impl SubjectRecord {
    pub fn new(id: impl Into<String>, ga_weeks: f64, group: Group, tlv_ml: f64) -> Result<Self> {
        let id = id.into();
        let (lo, hi) = GA_RANGE;
        if !(lo..=hi).contains(&ga_weeks) {
            return Err(Error::Argument(format!(
                "subject {id}: gestational age {ga_weeks} outside [{lo}, {hi}]"
            )));
        }
        if !(tlv_ml.is_finite() && tlv_ml > 0.0) {
            return Err(Error::Argument(format!(
                "subject {id}: lung volume must be positive, got {tlv_ml}"
            )));
        }
        Ok(SubjectRecord {
            id,
            ga_weeks,
            group,
            tlv_ml,
        })
    }

    pub fn oe_tlv(&self) -> Result<f64> {
        oe_tlv(self.tlv_ml, self.ga_weeks)
    }
}

/// Mean and sample standard deviation of a control reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZScoreRef {
    pub mean: f64,
    pub sd: f64,
}

impl ZScoreRef {
    pub fn apply(&self, value: f64) -> f64 {
        zscore_apply(value, self.mean, self.sd)
    }
}

pub fn zscore_fit(controls: &[f64]) -> Result<ZScoreRef> {
    if controls.len() < 2 {
        return Err(Error::Argument(format!(
            "Z-score reference needs at least 2 controls, got {}",
            controls.len()
        )));
    }
    let n = controls.len() as f64;
    let mean = controls.iter().sum::<f64>() / n;
    let sd = (controls.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateReference);
    }
    Ok(ZScoreRef { mean, sd })
}

pub fn zscore_apply(value: f64, mean: f64, sd: f64) -> f64 {
    (value - mean) / sd
}

/// Which side of the threshold is called positive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// Positive when the score is strictly above the threshold.
    Higher,
    /// Positive when the score is strictly below the threshold.
    Lower,
}

impl Polarity {
    pub fn is_positive(&self, score: f64, threshold: f64) -> bool {
        match self {
            Polarity::Higher => score > threshold,
            Polarity::Lower => score < threshold,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocAnalysis {
    /// From the most to the least conservative threshold: sensitivity rises
    /// from 0 to 1 while specificity falls from 1 to 0.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub youden_threshold: f64,
    pub youden_j: f64,
    pub polarity: Polarity,
}

/// ROC analysis with positives scoring above the threshold.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocAnalysis> {
    roc_with_polarity(scores, labels, Polarity::Higher)
}

/// ROC analysis in the direction that gives the larger AUC (`Higher` on ties).
pub fn roc_auto(scores: &[f64], labels: &[bool]) -> Result<RocAnalysis> {
    let higher = roc_with_polarity(scores, labels, Polarity::Higher)?;
    let lower = roc_with_polarity(scores, labels, Polarity::Lower)?;
    Ok(if lower.auc > higher.auc { lower } else { higher })
}

pub fn roc_with_polarity(scores: &[f64], labels: &[bool], polarity: Polarity) -> Result<RocAnalysis> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Argument(format!("non-finite score {s}")));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Argument(
            "ROC analysis needs both positive and negative cases".into(),
        ));
    }
    // work in "higher is positive" orientation
    let sign = match polarity {
        Polarity::Higher => 1.0,
        Polarity::Lower => -1.0,
    };
    let oriented: Vec<f64> = scores.iter().map(|s| sign * s).collect();
    let mut distinct = oriented.clone();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();

    let mut thresholds = Vec::with_capacity(distinct.len() + 1);
    thresholds.push(f64::INFINITY);
    thresholds.extend(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    thresholds.push(f64::NEG_INFINITY);

    let points: Vec<RocPoint> = thresholds
        .iter()
        .map(|&t| {
            let (mut tp, mut tn) = (0usize, 0usize);
            for (&s, &l) in oriented.iter().zip(labels) {
                match (s > t, l) {
                    (true, true) => tp += 1,
                    (false, false) => tn += 1,
                    _ => {}
                }
            }
            RocPoint {
                threshold: sign * t,
                sensitivity: tp as f64 / n_pos as f64,
                specificity: tn as f64 / n_neg as f64,
            }
        })
        .collect();

    let auc = points
        .windows(2)
        .map(|w| {
            let dx = w[0].specificity - w[1].specificity;
            dx * (w[0].sensitivity + w[1].sensitivity) / 2.0
        })
        .sum();

    // earlier points have higher specificity, so a strict improvement is
    // required to move on
    let mut best = points[0];
    let mut best_j = best.sensitivity + best.specificity - 1.0;
    for p in &points[1..] {
        let j = p.sensitivity + p.specificity - 1.0;
        if j > best_j + 1e-12 {
            best = *p;
            best_j = j;
        }
    }
    Ok(RocAnalysis {
        points,
        auc,
        youden_threshold: best.threshold,
        youden_j: best_j,
        polarity,
    })
}

pub fn classify(score: f64, threshold: f64, polarity: Polarity) -> Group {
    if polarity.is_positive(score, threshold) {
        Group::Fgr
    } else {
        Group::Control
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub accuracy: f64,
}

/// Counts with FGR as the positive class.
pub fn confusion(predictions: &[Group], labels: &[Group]) -> Result<Confusion> {
    if predictions.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
        accuracy: f64::NAN,
    };
    for (p, l) in predictions.iter().zip(labels) {
        match (p, l) {
            (Group::Fgr, Group::Fgr) => c.tp += 1,
            (Group::Fgr, Group::Control) => c.fp += 1,
            (Group::Control, Group::Control) => c.tn += 1,
            (Group::Control, Group::Fgr) => c.fn_ += 1,
        }
    }
    if !labels.is_empty() {
        c.accuracy = (c.tp + c.tn) as f64 / labels.len() as f64;
    }
    Ok(c)
}

/// Z-scored oeTLV threshold classifier trained on one cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub reference: ZScoreRef,
    pub roc: RocAnalysis,
}

impl Classifier {
    pub fn train(subjects: &[SubjectRecord]) -> Result<Self> {
        let oe = subjects
            .iter()
            .map(SubjectRecord::oe_tlv)
            .collect::<Result<Vec<_>>>()?;
        let controls: Vec<f64> = subjects
            .iter()
            .zip(&oe)
            .filter(|(s, _)| s.group == Group::Control)
            .map(|(_, &v)| v)
            .collect();
        let reference = zscore_fit(&controls)?;
        let scores: Vec<f64> = oe.iter().map(|&v| reference.apply(v)).collect();
        let labels: Vec<bool> = subjects.iter().map(|s| s.group == Group::Fgr).collect();
        let roc = roc_auto(&scores, &labels)?;
        Ok(Classifier { reference, roc })
    }

    pub fn score(&self, subject: &SubjectRecord) -> Result<f64> {
        Ok(self.reference.apply(subject.oe_tlv()?))
    }

    pub fn predict(&self, subject: &SubjectRecord) -> Result<Group> {
        Ok(classify(
            self.score(subject)?,
            self.roc.youden_threshold,
            self.roc.polarity,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expected_tlv_reference_points() {
        assert!((expected_tlv(30.0).unwrap() - 55.70).abs() < 1e-9);
        assert!((expected_tlv(20.0).unwrap() - 10.30).abs() < 1e-9);
        assert!((expected_tlv(36.0).unwrap() - 83.4008).abs() < 1e-9);
        assert!(matches!(expected_tlv(50.0), Err(Error::ModelRange { .. })));
    }

    #[test]
    fn oe_ratio() {
        let e = expected_tlv(30.0).unwrap();
        assert_eq!(oe_tlv(e, 30.0).unwrap(), 1.0);
        assert!((oe_tlv(27.85, 30.0).unwrap() - 0.5).abs() < 1e-12);
        assert!(oe_tlv(0.0, 30.0).is_err());
    }

    #[test]
    fn ga_notation() {
        assert!((parse_ga("28+2").unwrap() - (28.0 + 2.0 / 7.0)).abs() < 1e-15);
        assert_eq!(parse_ga(" 31.5 ").unwrap(), 31.5);
        assert!(parse_ga("28+7").is_err());
        assert!(parse_ga("abc").is_err());
    }

    #[test]
    fn zscores() {
        let r = zscore_fit(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((r.mean, r.sd), (2.0, 1.0));
        assert_eq!(r.apply(4.0), 2.0);
        assert_eq!(r.apply(2.0), 0.0);
        assert!(zscore_fit(&[1.0]).is_err());
        assert!(matches!(zscore_fit(&[2.0, 2.0]), Err(Error::DegenerateReference)));
    }

    #[test]
    fn separable_roc() {
        let r = roc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!(r.youden_j, 1.0);
        assert!((r.youden_threshold - 0.5).abs() < 1e-15);
        assert_eq!(r.points.len(), 5);
        let first = r.points[0];
        let last = r.points[4];
        assert_eq!((first.sensitivity, first.specificity), (0.0, 1.0));
        assert_eq!((last.sensitivity, last.specificity), (1.0, 0.0));
    }

    #[test]
    fn interleaved_roc() {
        // pairs (pos, neg): (1,2) (1,4) (3,2) (3,4) -> one win of four
        let r = roc(&[1.0, 2.0, 3.0, 4.0], &[true, false, true, false]).unwrap();
        assert!((r.auc - 0.25).abs() < 1e-15);
        let r = roc(&[1.0, 2.0, 3.0, 4.0], &[true, false, false, true]).unwrap();
        assert!((r.auc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ties_give_half_credit() {
        let r = roc(&[1.0, 1.0], &[true, false]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(r.points.len(), 2);
    }

    #[test]
    fn auto_polarity_prefers_lower_for_small_fgr_scores() {
        let scores = [-3.0, -2.5, 0.1, 0.4, -0.2];
        let labels = [true, true, false, false, false];
        let r = roc_auto(&scores, &labels).unwrap();
        assert_eq!(r.polarity, Polarity::Lower);
        assert_eq!(r.auc, 1.0);
        for (&s, &l) in scores.iter().zip(&labels) {
            assert_eq!(classify(s, r.youden_threshold, r.polarity) == Group::Fgr, l);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(roc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn classify_boundaries() {
        assert_eq!(classify(1.0, 1.0, Polarity::Higher), Group::Control);
        assert_eq!(classify(1.0, 1.0, Polarity::Lower), Group::Control);
        for s in [-1.0, 0.5, 3.0] {
            if s != 0.5 {
                assert_ne!(classify(s, 0.5, Polarity::Higher), classify(s, 0.5, Polarity::Lower));
            }
        }
    }

    #[test]
    fn confusion_counts() {
        use Group::*;
        let c = confusion(&[Fgr, Fgr, Fgr, Control, Control, Control], &[Fgr, Fgr, Fgr, Control, Control, Control]).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_, c.accuracy), (3, 3, 0, 0, 1.0));
        let c = confusion(&[Fgr, Control], &[Control, Fgr]).unwrap();
        assert_eq!((c.fp, c.fn_, c.accuracy), (1, 1, 0.0));
    }
}
