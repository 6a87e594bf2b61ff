//! Pearson correlation and top-k feature selection.
//!
//! Embedded features are matrices, so each feature is reduced to one scalar
//! per event before correlating against the 0/1 label. The reduction is the
//! mean of the embedding components by default, with a max-abs alternative
//! behind [`Scalarization`].

use serde::{Deserialize, Serialize};

use super::PrepError;
use crate::scalar::Scalar;

/// Pearson correlation with a degeneracy flag instead of NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PccValue<T> {
    pub r: T,
    /// True when either input had zero variance; `r` is 0 in that case.
    pub degenerate: bool,
}

/// Correlation of two equal-length series.
pub fn pcc<T: Scalar>(x: &[T], y: &[T]) -> Result<PccValue<T>, PrepError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(PrepError::DegenerateInput);
    }
    let n = T::of(x.len() as f64);
    let mut mx = T::zero();
    let mut my = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        mx += a;
        my += b;
    }
    mx /= n;
    my /= n;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    let mut syy = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == T::zero() || syy == T::zero() {
        return Ok(PccValue { r: T::zero(), degenerate: true });
    }
    let r = sxy / (sxx * syy).sqrt();
    // clamp the last-ulp spill outside [-1, 1]
    let one = T::one();
    Ok(PccValue { r: r.max(-one).min(one), degenerate: false })
}

/// How a feature's embedding matrix row collapses to one scalar per event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scalarization {
    Mean,
    MaxAbs,
}

impl Default for Scalarization {
    fn default() -> Self {
        Scalarization::Mean
    }
}

/// Ranking by absolute correlation (default) or signed correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    Absolute,
    Signed,
}

impl Default for RankMode {
    fn default() -> Self {
        RankMode::Absolute
    }
}

/// Scores for every feature plus the selected top-k names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    /// `(feature name, correlation against the label)` in schema order.
    pub scores: Vec<(String, f64)>,
    /// Top-k names, strongest first; ties broken by schema order.
    pub selected: Vec<String>,
    pub k: usize,
    pub mode: RankMode,
    /// Features whose scalar series had zero variance in this batch.
    pub degenerate: Vec<String>,
}

impl FeatureRanking {
    /// Selection as a set, ignoring rank order.
    pub fn selected_set(&self) -> std::collections::BTreeSet<&str> {
        self.selected.iter().map(|s| s.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ranking serializes")
    }
}

/// Rank features by correlation between their per-event scalars and the
/// binary label (`1` = positive class). `columns[j]` holds feature `j`'s
/// scalar series; `labels` must contain both classes.
pub fn select_features<T: Scalar>(
    columns: &[Vec<T>],
    names: &[String],
    labels: &[u8],
    k: usize,
    mode: RankMode,
) -> Result<FeatureRanking, PrepError> {
    assert_eq!(columns.len(), names.len(), "one column per feature name");
    let pos = labels.iter().filter(|&&l| l == 1).count();
    if pos == 0 || pos == labels.len() {
        return Err(PrepError::SingleClassBatch);
    }
    let y: Vec<T> = labels.iter().map(|&l| T::of(f64::from(l))).collect();

    let mut scores = Vec::with_capacity(columns.len());
    let mut degenerate = Vec::new();
    for (col, name) in columns.iter().zip(names) {
        let v = pcc(col, &y)?;
        if v.degenerate {
            degenerate.push(name.clone());
        }
        scores.push((name.clone(), v.r.as_f64()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let ka = match mode {
            RankMode::Absolute => scores[a].1.abs(),
            RankMode::Signed => scores[a].1,
        };
        let kb = match mode {
            RankMode::Absolute => scores[b].1.abs(),
            RankMode::Signed => scores[b].1,
        };
        kb.partial_cmp(&ka).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let selected = order.iter().take(k).map(|&i| scores[i].0.clone()).collect();
    Ok(FeatureRanking { scores, selected, k, mode, degenerate })
}

/// Feature-by-feature correlation matrix for reporting.
pub fn pcc_heatmap<T: Scalar>(columns: &[Vec<T>]) -> Vec<Vec<f64>> {
    let f = columns.len();
    let mut m = vec![vec![0.0; f]; f];
    for i in 0..f {
        m[i][i] = 1.0;
        for j in (i + 1)..f {
            let v = pcc(&columns[i], &columns[j]).map(|p| p.r.as_f64()).unwrap_or(0.0);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

/// Collapse one embedded feature row to a scalar.
pub fn scalarize<T: Scalar>(row: &[T], mode: Scalarization) -> T {
    match mode {
        Scalarization::Mean => {
            let mut s = T::zero();
            for &v in row {
                s += v;
            }
            s / T::of(row.len() as f64)
        }
        Scalarization::MaxAbs => {
            let mut best = T::zero();
            for &v in row {
                if v.abs() > best.abs() {
                    best = v;
                }
            }
            best
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    /// Direct textbook evaluation kept separate from the implementation.
    fn pcc_oracle(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn perfect_and_inverse_correlation() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_relative_eq!(pcc(&x, &x).unwrap().r, 1.0, max_relative = 1e-12);
        assert_relative_eq!(pcc(&x, &neg).unwrap().r, -1.0, max_relative = 1e-12);
    }

    #[test]
    fn matches_covariance_oracle() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let y = vec![2.0, 4.0, 5.0, 9.0];
        let got = pcc(&x, &y).unwrap();
        assert!(!got.degenerate);
        assert_relative_eq!(got.r, pcc_oracle(&x, &y), max_relative = 1e-12);
    }

    #[test]
    fn degenerate_inputs_flagged_not_nan() {
        let c = vec![3.0, 3.0, 3.0];
        let x = vec![1.0, 2.0, 3.0];
        let v = pcc(&c, &x).unwrap();
        assert_eq!(v.r, 0.0);
        assert!(v.degenerate);
        assert!(matches!(pcc(&x, &x[..2].to_vec()), Err(PrepError::DegenerateInput)));
    }

    #[test]
    fn constructed_perfect_feature_ranks_first() {
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let mut rng = crate::rng::stream(5, "test-noise", 0);
        let perfect: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let noise1: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let noise2: Vec<f64> = (0..40).map(|_| rng.gen::<f64>()).collect();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let ranking =
            select_features(&[noise1, perfect, noise2], &names, &labels, 2, RankMode::Absolute).unwrap();
        assert_eq!(ranking.selected[0], "b");
        assert_eq!(ranking.selected.len(), 2);
        assert_relative_eq!(
            ranking.scores.iter().find(|(n, _)| n == "b").unwrap().1,
            1.0,
            max_relative = 1e-9
        );
    }

    #[test]
    fn pure_noise_scores_stay_small() {
        // Null-distribution check via label permutation: with n = 10_000 the
        // correlation of iid noise concentrates well inside |r| < 0.05.
        let n = 10_000;
        let mut rng = crate::rng::stream(11, "test-null", 0);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < 0.2)).collect();
        for trial in 0..5 {
            let col: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let y: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
            let r = pcc(&col, &y).unwrap().r;
            assert!(r.abs() < 0.05, "trial {trial}: null pcc {r}");
        }
    }

    #[test]
    fn single_class_batch_is_rejected() {
        let names = vec!["a".to_string()];
        let col = vec![vec![1.0, 2.0, 3.0]];
        assert!(matches!(
            select_features(&col, &names, &[0, 0, 0], 1, RankMode::Absolute),
            Err(PrepError::SingleClassBatch)
        ));
    }

    #[test]
    fn k_limits_and_dedupes_selection() {
        let labels: Vec<u8> = (0..30).map(|i| u8::from(i % 3 == 0)).collect();
        let mut rng = crate::rng::stream(6, "test-k", 0);
        let names: Vec<String> = (0..10).map(|i| format!("f{i:02}")).collect();
        let cols: Vec<Vec<f64>> = (0..10).map(|_| (0..30).map(|_| rng.gen::<f64>()).collect()).collect();
        let ranking = select_features(&cols, &names, &labels, 6, RankMode::Absolute).unwrap();
        assert_eq!(ranking.selected.len(), 6);
        let set: std::collections::BTreeSet<_> = ranking.selected.iter().collect();
        assert_eq!(set.len(), 6);
    }

    #[test]
    fn signed_mode_prefers_positive_correlation() {
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let pos: Vec<f64> = labels.iter().map(|&l| f64::from(l)).collect();
        let neg: Vec<f64> = pos.iter().map(|v| -v).collect();
        let names = vec!["pos".to_string(), "neg".to_string()];
        let signed = select_features(&[pos.clone(), neg.clone()], &names, &labels, 1, RankMode::Signed).unwrap();
        assert_eq!(signed.selected[0], "pos");
        let abs = select_features(&[pos, neg], &names, &labels, 2, RankMode::Absolute).unwrap();
        // equal magnitude: schema order breaks the tie
        assert_eq!(abs.selected, vec!["pos".to_string(), "neg".to_string()]);
    }

    #[test]
    fn heatmap_is_symmetric_with_unit_diagonal() {
        let cols = vec![vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 1.0, 4.0, 3.0], vec![0.5, 0.25, 0.125, 0.0625]];
        let m = pcc_heatmap(&cols);
        for i in 0..3 {
            assert_eq!(m[i][i], 1.0);
            for j in 0..3 {
                assert_relative_eq!(m[i][j], m[j][i], max_relative = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn pcc_symmetry_and_affine_invariance(
            xs in proptest::collection::vec(-50.0f64..50.0, 8..40),
            a in prop_oneof![(-4.0f64..-0.1), (0.1f64..4.0)],
            b in -10.0f64..10.0,
        ) {
            let ys: Vec<f64> = xs.iter().rev().map(|v| v * 0.7 + 1.0).collect();
            prop_assume!(pcc(&xs, &ys).map(|p| !p.degenerate).unwrap_or(false));
            let rxy = pcc(&xs, &ys).unwrap().r;
            let ryx = pcc(&ys, &xs).unwrap().r;
            prop_assert!((rxy - ryx).abs() < 1e-12);

            let scaled: Vec<f64> = xs.iter().map(|v| a * v + b).collect();
            let rs = pcc(&scaled, &ys).unwrap().r;
            prop_assert!((rs - a.signum() * rxy).abs() < 1e-9, "rs={rs} rxy={rxy} a={a}");
        }

        #[test]
        fn ranking_invariant_under_column_rescale(seed in 0u64..200) {
            let mut rng = crate::rng::stream(seed, "test-rescale", 0);
            let n = 60;
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<f64>() < 0.5)).collect();
            prop_assume!(labels.iter().any(|&l| l == 1) && labels.iter().any(|&l| l == 0));
            let names: Vec<String> = (0..5).map(|i| format!("c{i}")).collect();
            let cols: Vec<Vec<f64>> = (0..5)
                .map(|j| {
                    (0..n)
                        .map(|i| rng.gen::<f64>() + if j == 2 { f64::from(labels[i]) } else { 0.0 })
                        .collect()
                })
                .collect();
            let base = select_features(&cols, &names, &labels, 3, RankMode::Absolute).unwrap();
            let rescaled: Vec<Vec<f64>> =
                cols.iter().enumerate().map(|(j, c)| c.iter().map(|v| v * (j as f64 + 1.5) - 7.0).collect()).collect();
            let re = select_features(&rescaled, &names, &labels, 3, RankMode::Absolute).unwrap();
            prop_assert_eq!(base.selected, re.selected);
        }
    }
}
