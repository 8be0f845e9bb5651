//! Confusion matrices, classification reports and segment voting.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dastgah;
use crate::error::{Error, Result};

const K: usize = Dastgah::COUNT;

/// Rows are true classes, columns predicted classes, both by code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    counts: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; K]; K]) -> Self {
        Self { counts }
    }

    pub fn counts(&self) -> &[[u64; K]; K] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, t: usize) -> u64 {
        self.counts[t].iter().sum()
    }

    pub fn col_sum(&self, p: usize) -> u64 {
        self.counts.iter().map(|r| r[p]).sum()
    }
}

pub fn confusion(predictions: &[usize], labels: &[usize]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= K {
            return Err(Error::LabelOutOfRange(p));
        }
        if t >= K {
            return Err(Error::LabelOutOfRange(t));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Average {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Per-class metrics indexed by class code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
    pub accuracy: f64,
    #[serde(rename = "macro")]
    pub macro_avg: Average,
    pub weighted: Average,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Support-weighted mean of `values`.
pub fn weighted_average(values: &[f64], supports: &[u64]) -> Result<f64> {
    if values.len() != supports.len() {
        return Err(Error::Shape(format!(
            "{} values for {} supports",
            values.len(),
            supports.len()
        )));
    }
    let total: u64 = supports.iter().sum();
    if total == 0 {
        return Err(Error::Empty(
            "weighted average with zero total support".into(),
        ));
    }
    Ok(values
        .iter()
        .zip(supports)
        .map(|(v, &s)| v * s as f64)
        .sum::<f64>()
        / total as f64)
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix has no entries".into()));
    }
    let classes: Vec<ClassMetrics> = Dastgah::ALL
        .iter()
        .map(|d| {
            let c = d.code();
            let precision = ratio(cm.get(c, c), cm.col_sum(c));
            let recall = ratio(cm.get(c, c), cm.row_sum(c));
            ClassMetrics {
                name: d.name().to_string(),
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: cm.row_sum(c),
            }
        })
        .collect();
    let supports: Vec<u64> = classes.iter().map(|c| c.support).collect();
    let column = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).collect::<Vec<_>>();
    let (p, r, f) = (
        column(|c| c.precision),
        column(|c| c.recall),
        column(|c| c.f1),
    );
    let mean = |v: &[f64]| v.iter().sum::<f64>() / K as f64;
    Ok(ClassReport {
        accuracy: ratio(cm.trace(), total),
        macro_avg: Average {
            precision: mean(&p),
            recall: mean(&r),
            f1: mean(&f),
            support: total,
        },
        weighted: Average {
            precision: weighted_average(&p, &supports)?,
            recall: weighted_average(&r, &supports)?,
            f1: weighted_average(&f, &supports)?,
            support: total,
        },
        classes,
        confusion: *cm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "json" => Ok(Self::Json),
            _ => Err(Error::InvalidArgument(format!(
                "unknown report format {s:?} (expected text or json)"
            ))),
        }
    }
}

pub fn render(report: &ClassReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            serde_json::to_string_pretty(report).expect("report serialises") + "\n"
        }
        ReportFormat::Text => render_text(report),
    }
}

fn render_text(r: &ClassReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<18}{:>10}{:>10}{:>10}{:>10}",
        "", "precision", "recall", "f1-score", "support"
    );
    for d in Dastgah::REPORT_ORDER {
        let c = &r.classes[d.code()];
        let _ = writeln!(
            s,
            "{:<18}{:>10.2}{:>10.2}{:>10.2}{:>10}",
            c.name, c.precision, c.recall, c.f1, c.support
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<18}{:>10}{:>10}{:>10.2}{:>10}",
        "Total Accuracy", "", "", r.accuracy, r.macro_avg.support
    );
    for (name, a) in [
        ("Average Macro", &r.macro_avg),
        ("Average weighted", &r.weighted),
    ] {
        let _ = writeln!(
            s,
            "{:<18}{:>10.2}{:>10.2}{:>10.2}{:>10}",
            name, a.precision, a.recall, a.f1, a.support
        );
    }
    let _ = writeln!(s);
    s.push_str(&render_confusion(&r.confusion));
    s
}

/// Text confusion matrix in report order; rows true, columns predicted.
pub fn render_confusion(cm: &ConfusionMatrix) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<14}", "true \\ pred");
    for d in Dastgah::REPORT_ORDER {
        let name = d.name();
        let _ = write!(s, "{:>7}", &name[..name.len().min(6)]);
    }
    let _ = writeln!(s);
    for t in Dastgah::REPORT_ORDER {
        let _ = write!(s, "{:<14}", t.name());
        for p in Dastgah::REPORT_ORDER {
            let _ = write!(s, "{:>7}", cm.get(t.code(), p.code()));
        }
        let _ = writeln!(s);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub class: usize,
    pub votes: usize,
    pub mean_probability: f64,
}

/// Majority vote over per-segment probability rows. Ties go to the class
/// with the higher mean probability, then to the lower code.
pub fn majority_vote(probs: &[Vec<f32>]) -> Result<Verdict> {
    if probs.is_empty() {
        return Err(Error::Empty("no segments to vote over".into()));
    }
    let k = probs[0].len();
    if k == 0 || probs.iter().any(|p| p.len() != k) {
        return Err(Error::Shape("probability rows differ in length".into()));
    }
    let mut votes = vec![0usize; k];
    let mut mean = vec![0.0f64; k];
    for row in probs {
        votes[argmax(row)] += 1;
        for (m, &p) in mean.iter_mut().zip(row) {
            *m += p as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= probs.len() as f64);
    let mut best = 0;
    for c in 1..k {
        if votes[c] > votes[best] || (votes[c] == votes[best] && mean[c] > mean[best]) {
            best = c;
        }
    }
    Ok(Verdict {
        class: best,
        votes: votes[best],
        mean_probability: mean[best],
    })
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_basics() {
        let cm = confusion(&[], &[]).unwrap();
        assert_eq!(cm.total(), 0);
        let cm = confusion(&[5], &[2]).unwrap();
        assert_eq!(cm.get(2, 5), 1);
        assert_eq!(cm.total(), 1);
        let labels: Vec<usize> = (0..21).map(|i| i % 7).collect();
        let cm = confusion(&labels, &labels).unwrap();
        for t in 0..K {
            assert_eq!(cm.get(t, t), 3);
            assert_eq!(cm.row_sum(t), 3);
        }
        assert!(matches!(
            confusion(&[7], &[0]),
            Err(Error::LabelOutOfRange(7))
        ));
        assert!(confusion(&[0], &[9]).is_err());
        assert!(confusion(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn harmonic_mean_of_half_and_one() {
        assert!((harmonic(0.5, 1.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(harmonic(0.0, 0.0), 0.0);
    }

    #[test]
    fn precision_recall_by_hand() {
        // Class 0: 2 true, one predicted as 1. Class 1: 1 true, predicted correctly.
        let cm = confusion(&[0, 1, 1], &[0, 0, 1]).unwrap();
        let r = report(&cm).unwrap();
        assert_eq!(r.classes[0].precision, 1.0);
        assert_eq!(r.classes[0].recall, 0.5);
        assert_eq!(r.classes[1].precision, 0.5);
        assert_eq!(r.classes[1].recall, 1.0);
        assert!((r.classes[1].f1 - 2.0 / 3.0).abs() < 1e-15);
        // Absent classes score 0.
        assert_eq!(r.classes[4].f1, 0.0);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.weighted.support, 3);
    }

    #[test]
    fn all_zero_matrix_is_an_error() {
        assert!(matches!(
            report(&ConfusionMatrix::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn weighted_f1_from_table() {
        // Shur, Segah, Mahur, Homayoun, Rastpanjgah, Nava, Chahargah.
        let f1 = [0.90, 0.86, 0.91, 0.95, 0.88, 0.92, 0.98];
        let support = [63, 69, 56, 67, 56, 53, 87];
        let w = weighted_average(&f1, &support).unwrap();
        let oracle = (0.90 * 63.0
            + 0.86 * 69.0
            + 0.91 * 56.0
            + 0.95 * 67.0
            + 0.88 * 56.0
            + 0.92 * 53.0
            + 0.98 * 87.0)
            / 451.0;
        assert!((w - oracle).abs() < 1e-12);
        assert!((w - 0.9178).abs() < 5e-5);
        assert_eq!(format!("{w:.2}"), "0.92");
        assert!(weighted_average(&[1.0], &[0]).is_err());
    }

    #[test]
    fn perfect_report_prints_ones() {
        let labels: Vec<usize> = (0..70).map(|i| i % 7).collect();
        let r = report(&confusion(&labels, &labels).unwrap()).unwrap();
        let text = render(&r, ReportFormat::Text);
        let table: Vec<&str> = text.lines().take(12).collect();
        let mut metrics = 0;
        for line in &table[1..] {
            for tok in line.split_whitespace() {
                if tok.contains('.') {
                    assert_eq!(tok, "1.00", "{line}");
                    metrics += 1;
                }
            }
        }
        // 7 classes × 3, accuracy, 2 averages × 3.
        assert_eq!(metrics, 28);
    }

    #[test]
    fn text_layout() {
        let labels: Vec<usize> = (0..14).map(|i| i % 7).collect();
        let preds: Vec<usize> = labels.iter().map(|&l| if l == 3 { 0 } else { l }).collect();
        let text = render(
            &report(&confusion(&preds, &labels).unwrap()).unwrap(),
            ReportFormat::Text,
        );
        let names: Vec<&str> = text
            .lines()
            .skip(1)
            .take(7)
            .map(|l| l.split_whitespace().next().unwrap())
            .collect();
        assert_eq!(
            names,
            [
                "Shur",
                "Segah",
                "Mahur",
                "Homayoun",
                "Rastpanjgah",
                "Nava",
                "Chahargah"
            ]
        );
        for line in text.lines().skip(1).take(7) {
            assert_eq!(line.split_whitespace().last().unwrap(), "2");
        }
        assert!(text.contains("Total Accuracy"));
        assert!(text.contains("Average Macro"));
        assert!(text.contains("Average weighted"));
        assert!(text.contains("true \\ pred"));
    }

    #[test]
    fn json_round_trip_and_schema() {
        let r = report(&confusion(&[0, 1, 2, 2, 6], &[0, 1, 2, 3, 6]).unwrap()).unwrap();
        let json = render(&r, ReportFormat::Json);
        let back: ClassReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["classes", "accuracy", "macro", "weighted", "confusion"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let c0 = &v["classes"][0];
        for key in ["name", "precision", "recall", "f1", "support"] {
            assert!(c0.get(key).is_some(), "{key}");
        }
        assert_eq!(v["confusion"][3][2], 1);
        assert_eq!(v["classes"][3]["name"], "Homayoun");
    }

    #[test]
    fn voting() {
        let p = |c: usize, v: f32| {
            let mut r = vec![(1.0 - v) / 6.0; 7];
            r[c] = v;
            r
        };
        let v = majority_vote(&[p(2, 0.9), p(2, 0.5), p(4, 0.99)]).unwrap();
        assert_eq!((v.class, v.votes), (2, 2));
        // One vote each: class 4 has the higher mean probability.
        let v = majority_vote(&[p(2, 0.5), p(4, 0.8)]).unwrap();
        assert_eq!(v.class, 4);
        let v = majority_vote(&[p(5, 0.6), p(1, 0.6)]).unwrap();
        assert_eq!(v.class, 1);
        assert!(majority_vote(&[]).is_err());
    }

    fn pairs() -> impl Strategy<Value = Vec<(usize, usize)>> {
        prop::collection::vec((0..K, 0..K), 1..200)
    }

    proptest! {
        #[test]
        fn accuracy_is_support_weighted_recall(v in pairs()) {
            let (p, l): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            let r = report(&confusion(&p, &l).unwrap()).unwrap();
            let total: u64 = r.classes.iter().map(|c| c.support).sum();
            prop_assert_eq!(total, l.len() as u64);
            let acc: f64 = r.classes.iter().map(|c| c.support as f64 / total as f64 * c.recall).sum();
            prop_assert!((acc - r.accuracy).abs() < 1e-12);
        }

        #[test]
        fn metrics_bounded(v in pairs()) {
            let (p, l): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            let r = report(&confusion(&p, &l).unwrap()).unwrap();
            let f1: Vec<f64> = r.classes.iter().map(|c| c.f1).collect();
            let lo = f1.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f1.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.macro_avg.f1 >= lo - 1e-12 && r.macro_avg.f1 <= hi + 1e-12);
            for c in &r.classes {
                for m in [c.precision, c.recall, c.f1] {
                    prop_assert!((0.0..=1.0).contains(&m));
                }
            }
            for m in [r.accuracy, r.weighted.f1, r.weighted.precision, r.weighted.recall] {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&m));
            }
        }

        #[test]
        fn pair_order_does_not_matter(v in pairs(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = v.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (p, l): (Vec<_>, Vec<_>) = v.into_iter().unzip();
            let (ps, ls): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            prop_assert_eq!(
                report(&confusion(&p, &l).unwrap()).unwrap(),
                report(&confusion(&ps, &ls).unwrap()).unwrap()
            );
        }
    }
}
