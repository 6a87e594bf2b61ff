//! Evaluation metrics. Ransomware is always the positive class.
//!
//! Rates with a zero denominator are reported as 0 together with an
//! explicit flag, so CSV consumers never see non-numeric cells.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::Label;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {labels} labels vs {predictions} predictions")]
    LengthMismatch { labels: usize, predictions: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// Exact confusion counts; `labels` are ground truth.
pub fn confusion(labels: &[Label], predictions: &[Label]) -> Result<ConfusionCounts, MetricsError> {
    if labels.len() != predictions.len() {
        return Err(MetricsError::LengthMismatch { labels: labels.len(), predictions: predictions.len() });
    }
    let mut c = ConfusionCounts::default();
    for (&truth, &pred) in labels.iter().zip(predictions) {
        match (truth, pred) {
            (Label::Ransomware, Label::Ransomware) => c.true_pos += 1,
            (Label::Benign, Label::Ransomware) => c.false_pos += 1,
            (Label::Benign, Label::Benign) => c.true_neg += 1,
            (Label::Ransomware, Label::Benign) => c.false_neg += 1,
        }
    }
    Ok(c)
}

/// Rates derived from confusion counts, with undefined-rate flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
    pub fpr: f64,
    pub fnr: f64,
    /// Which of the rates above had a zero denominator.
    pub undefined: RateFlags,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateFlags {
    pub precision: bool,
    pub recall: bool,
    pub accuracy: bool,
    pub fpr: bool,
    pub fnr: bool,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn rates(c: &ConfusionCounts) -> Rates {
    let mut flags = RateFlags::default();
    let precision = ratio(c.true_pos, c.true_pos + c.false_pos, &mut flags.precision);
    let recall = ratio(c.true_pos, c.true_pos + c.false_neg, &mut flags.recall);
    let accuracy = ratio(c.true_pos + c.true_neg, c.total(), &mut flags.accuracy);
    let fpr = ratio(c.false_pos, c.false_pos + c.true_neg, &mut flags.fpr);
    let fnr = ratio(c.false_neg, c.false_neg + c.true_pos, &mut flags.fnr);
    Rates { precision, recall, accuracy, fpr, fnr, undefined: flags }
}

/// F-beta from precision and recall. `beta = 2` weighs recall twice as
/// heavily as precision. Returns `(value, defined)`; precision = recall = 0
/// yields `(0, false)`.
pub fn f_beta(precision: f64, recall: f64, beta: f64) -> (f64, bool) {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        return (0.0, false);
    }
    ((1.0 + b2) * precision * recall / den, true)
}

/// One row of the per-window metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub window_id: u32,
    pub timestamp_ms: i64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
    pub accuracy: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub runtime_s: f64,
}

impl MetricsRecord {
    pub fn from_counts(window_id: u32, timestamp_ms: i64, counts: &ConfusionCounts, runtime_s: f64) -> Self {
        let r = rates(counts);
        let (f1, _) = f_beta(r.precision, r.recall, 1.0);
        let (f2, _) = f_beta(r.precision, r.recall, 2.0);
        Self {
            window_id,
            timestamp_ms,
            precision: r.precision,
            recall: r.recall,
            f1,
            f2,
            accuracy: r.accuracy,
            fpr: r.fpr,
            fnr: r.fnr,
            runtime_s,
        }
    }

    pub fn csv_header() -> &'static str {
        "window_id,timestamp_ms,precision,recall,f1,f2,accuracy,fpr,fnr,runtime_s"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3}",
            self.window_id,
            self.timestamp_ms,
            self.precision,
            self.recall,
            self.f1,
            self.f2,
            self.accuracy,
            self.fpr,
            self.fnr,
            self.runtime_s
        )
    }

    pub fn from_csv_row(row: &str) -> Option<Self> {
        let mut it = row.split(',');
        Some(Self {
            window_id: it.next()?.parse().ok()?,
            timestamp_ms: it.next()?.parse().ok()?,
            precision: it.next()?.parse().ok()?,
            recall: it.next()?.parse().ok()?,
            f1: it.next()?.parse().ok()?,
            f2: it.next()?.parse().ok()?,
            accuracy: it.next()?.parse().ok()?,
            fpr: it.next()?.parse().ok()?,
            fnr: it.next()?.parse().ok()?,
            runtime_s: it.next()?.parse().ok()?,
        })
    }
}

/// Cumulative-runtime F2 series for plotting, one point per window.
pub fn f2_series(records: &[MetricsRecord]) -> Vec<(f64, f64)> {
    let mut elapsed = 0.0;
    records
        .iter()
        .map(|r| {
            elapsed += r.runtime_s;
            (elapsed, r.f2)
        })
        .collect()
}

pub fn f2_series_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("elapsed_s,f2\n");
    for (t, f2) in f2_series(records) {
        out.push_str(&format!("{t:.3},{f2:.6}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn confusion_tallies_by_hand() {
        use Label::{Benign as B, Ransomware as R};
        let labels = [R, R, B, B, R, B, B, B, R, B, R, R, B, B, R, B, R, B, B, R];
        let preds_ = [R, B, B, R, R, B, B, R, R, B, B, R, B, B, R, B, R, R, B, B];
        // hand tally: tp where (R,R): idx 0,4,8,11,14,16 -> 6
        // fn where (R,B): idx 1,10,19 -> 3
        // fp where (B,R): idx 3,7,17 -> 3
        // tn: remaining 8
        let c = confusion(&labels, &preds_).unwrap();
        assert_eq!(c, ConfusionCounts { true_pos: 6, false_pos: 3, true_neg: 8, false_neg: 3 });
        assert_eq!(c.total(), 20);

        let all_right = confusion(&labels, &labels).unwrap();
        assert_eq!(all_right.false_pos, 0);
        assert_eq!(all_right.false_neg, 0);

        let all_rw = vec![R; 4];
        let all_benign = vec![B; 4];
        let c2 = confusion(&all_benign, &all_rw).unwrap();
        assert_eq!((c2.true_pos, c2.false_pos), (0, 4));

        assert!(confusion(&labels, &preds_[..3]).is_err());
    }

    #[test]
    fn rates_match_reported_fixture() {
        // Recall 99.62% with tp=9962/fn=38; precision just above 99.60%.
        let c = ConfusionCounts { true_pos: 9962, false_neg: 38, false_pos: 39, true_neg: 70000 };
        let r = rates(&c);
        assert_relative_eq!(r.recall, 0.9962, max_relative = 1e-12);
        assert!((r.precision - 0.9961).abs() < 5e-5);
        assert_relative_eq!(r.fnr, 0.0038, max_relative = 1e-12);
        assert_relative_eq!(r.recall + r.fnr, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn degenerate_rates_are_flagged() {
        let c = ConfusionCounts { true_pos: 0, false_neg: 10, ..Default::default() };
        let r = rates(&c);
        assert_eq!(r.recall, 0.0);
        assert_eq!(r.fnr, 1.0);
        assert!(r.undefined.precision);
        assert!(!r.undefined.recall);

        let perfect = ConfusionCounts { true_pos: 50, true_neg: 50, ..Default::default() };
        let rp = rates(&perfect);
        assert_eq!(rp.precision, 1.0);
        assert_eq!(rp.recall, 1.0);
        assert_eq!(rp.accuracy, 1.0);
        assert_eq!(rp.fpr, 0.0);
    }

    #[test]
    fn f_beta_fixtures() {
        // Reported headline pair: precision 0.9961, recall 0.9962.
        let (f2, ok) = f_beta(0.9961, 0.9962, 2.0);
        assert!(ok);
        assert!((f2 - 0.9961).abs() < 1e-4, "f2 = {f2}");

        assert_eq!(f_beta(1.0, 1.0, 2.0), (1.0, true));
        assert_eq!(f_beta(1.0, 1.0, 0.5), (1.0, true));

        let (v, _) = f_beta(0.8, 0.9, 2.0);
        assert_relative_eq!(v, 5.0 * 0.72 / (3.2 + 0.9), max_relative = 1e-12);

        assert_eq!(f_beta(0.0, 0.0, 2.0), (0.0, false));
    }

    #[test]
    fn f1_is_harmonic_mean_on_grid() {
        for i in 0..=20 {
            for j in 0..=20 {
                let p = i as f64 / 20.0;
                let r = j as f64 / 20.0;
                let (f1, defined) = f_beta(p, r, 1.0);
                if p + r > 0.0 {
                    assert!(defined);
                    assert_relative_eq!(f1, 2.0 * p * r / (p + r), max_relative = 1e-12, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn f_beta_monotone_and_recall_weighted() {
        let grid: Vec<f64> = (1..=19).map(|i| i as f64 / 20.0).collect();
        for &p in &grid {
            for &r in &grid {
                let (base, _) = f_beta(p, r, 2.0);
                let (up_p, _) = f_beta((p + 0.05).min(1.0), r, 2.0);
                let (up_r, _) = f_beta(p, (r + 0.05).min(1.0), 2.0);
                assert!(up_p >= base - 1e-15);
                assert!(up_r >= base - 1e-15);
            }
            // at symmetric points a recall bump helps F2 more than a precision bump
            let (dp, _) = f_beta(p + 0.04, p, 2.0);
            let (dr, _) = f_beta(p, p + 0.04, 2.0);
            assert!(dr > dp, "recall weighting violated at p=r={p}");
        }
    }

    #[test]
    fn record_is_consistent_and_round_trips() {
        let c = ConfusionCounts { true_pos: 180, false_pos: 12, true_neg: 1790, false_neg: 18 };
        let rec = MetricsRecord::from_counts(3, 1_700_000_000_123, &c, 12.5);
        let (f2, _) = f_beta(rec.precision, rec.recall, 2.0);
        assert_relative_eq!(rec.f2, f2, max_relative = 1e-12);
        let row = rec.to_csv_row();
        let back = MetricsRecord::from_csv_row(&row).unwrap();
        assert_eq!(back.window_id, 3);
        assert!((back.f2 - rec.f2).abs() < 1e-6);
    }

    #[test]
    fn series_accumulates_runtime() {
        let c = ConfusionCounts { true_pos: 1, true_neg: 1, ..Default::default() };
        let a = MetricsRecord::from_counts(0, 0, &c, 10.0);
        let b = MetricsRecord::from_counts(1, 0, &c, 12.0);
        let s = f2_series(&[a, b]);
        assert_eq!(s.len(), 2);
        assert_relative_eq!(s[0].0, 10.0);
        assert_relative_eq!(s[1].0, 22.0);
        let single = f2_series(&[a]);
        assert_eq!(single.len(), 1);
        assert_relative_eq!(single[0].0, 10.0);
    }
}
