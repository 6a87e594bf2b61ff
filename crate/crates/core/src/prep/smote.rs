//! Synthetic minority oversampling.
//!
//! Each synthetic row is `x + u * (nn - x)` for a uniformly chosen minority
//! row `x`, one of its k nearest minority neighbours `nn` (Euclidean), and
//! `u ~ Uniform(0, 1)` from the seeded stream. Runs on the scaled training
//! split only; the test split never sees synthetic rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::PrepError;
use crate::rng::stream;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    /// Minority/majority ratio after oversampling.
    pub target_ratio: f64,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self { k_neighbors: 5, target_ratio: 1.0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutcome<T> {
    pub synthetic: Vec<Vec<T>>,
    /// Set when the minority had a single row and was duplicated verbatim.
    pub degenerate: bool,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Indices of the k nearest neighbours of every row, self excluded, ties
/// broken by row index.
fn knn_indices<T: Scalar>(rows: &[Vec<T>], k: usize) -> Vec<Vec<usize>> {
    let n = rows.len();
    (0..n)
        .map(|i| {
            let mut others: Vec<(T, usize)> =
                (0..n).filter(|&j| j != i).map(|j| (sq_dist(&rows[i], &rows[j]), j)).collect();
            others.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Generate synthetic minority rows until the class sizes reach the target
/// ratio. Returns no rows when the classes are already balanced.
pub fn smote<T: Scalar>(
    minority: &[Vec<T>],
    majority_count: usize,
    config: &SmoteConfig,
) -> Result<SmoteOutcome<T>, PrepError> {
    let m = minority.len();
    if m == 0 {
        return Err(PrepError::TooFewMinority { count: 0 });
    }
    let target = (config.target_ratio * majority_count as f64).ceil() as usize;
    let need = target.saturating_sub(m);
    if need == 0 {
        return Ok(SmoteOutcome { synthetic: Vec::new(), degenerate: false });
    }
    let mut rng = stream(config.seed, "smote", 0);

    if m == 1 {
        return Ok(SmoteOutcome { synthetic: vec![minority[0].clone(); need], degenerate: true });
    }

    let k = config.k_neighbors.max(1).min(m - 1);
    let neighbours = knn_indices(minority, k);
    let mut synthetic = Vec::with_capacity(need);
    for _ in 0..need {
        let i = rng.gen_range(0..m);
        let nn = neighbours[i][rng.gen_range(0..k)];
        let u = T::of(rng.gen::<f64>());
        let row = minority[i]
            .iter()
            .zip(&minority[nn])
            .map(|(&x, &y)| x + u * (y - x))
            .collect();
        synthetic.push(row);
    }
    Ok(SmoteOutcome { synthetic, degenerate: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(seed: u64) -> SmoteConfig {
        SmoteConfig { k_neighbors: 5, target_ratio: 1.0, seed }
    }

    #[test]
    fn identical_points_synthesize_identically() {
        let p = vec![vec![1.5, -2.0], vec![1.5, -2.0]];
        let out = smote(&p, 10, &cfg(1)).unwrap();
        assert_eq!(out.synthetic.len(), 8);
        assert!(out.synthetic.iter().all(|r| r == &p[0]));
        assert!(!out.degenerate);
    }

    #[test]
    fn two_points_interpolate_on_segment() {
        let p: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![2.0, 4.0]];
        let out = smote(&p, 50, &SmoteConfig { k_neighbors: 1, target_ratio: 1.0, seed: 3 }).unwrap();
        assert_eq!(out.synthetic.len(), 48);
        for r in &out.synthetic {
            // s = p + u (q - p): second coordinate is twice the first
            let u = r[0] / 2.0;
            assert!((0.0..=1.0).contains(&u), "u = {u}");
            assert!((r[1] - 2.0 * r[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn outputs_stay_in_minority_bounding_box() {
        let mut rng = crate::rng::stream(9, "smote-box", 0);
        use rand::Rng;
        let minority: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.gen::<f64>(), rng.gen::<f64>()]).collect();
        let out = smote(&minority, 110, &cfg(7)).unwrap();
        assert_eq!(out.synthetic.len(), 100);
        // convex combinations of minority points cannot leave the box
        let (mut lo, mut hi) = (vec![f64::MAX; 2], vec![f64::MIN; 2]);
        for r in &minority {
            for d in 0..2 {
                lo[d] = lo[d].min(r[d]);
                hi[d] = hi[d].max(r[d]);
            }
        }
        for r in &out.synthetic {
            for d in 0..2 {
                assert!(r[d] >= lo[d] - 1e-12 && r[d] <= hi[d] + 1e-12);
            }
        }
    }

    #[test]
    fn seeded_runs_are_identical_and_seeds_differ() {
        let minority: Vec<Vec<f32>> = (0..6).map(|i| vec![i as f32, (i * i) as f32]).collect();
        let a = smote(&minority, 40, &cfg(11)).unwrap();
        let b = smote(&minority, 40, &cfg(11)).unwrap();
        assert_eq!(a, b);
        let c = smote(&minority, 40, &cfg(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn balanced_input_needs_nothing() {
        let minority = vec![vec![1.0], vec![2.0], vec![3.0]];
        let out = smote(&minority, 3, &cfg(0)).unwrap();
        assert!(out.synthetic.is_empty());
    }

    #[test]
    fn single_row_duplicates_with_flag() {
        let minority = vec![vec![4.0, 4.0]];
        let out = smote(&minority, 5, &cfg(0)).unwrap();
        assert!(out.degenerate);
        assert_eq!(out.synthetic.len(), 4);
        assert!(out.synthetic.iter().all(|r| r == &minority[0]));
        assert!(matches!(smote::<f64>(&[], 5, &cfg(0)), Err(PrepError::TooFewMinority { count: 0 })));
    }

    #[test]
    fn target_ratio_scales_output() {
        let minority: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let half = SmoteConfig { target_ratio: 0.5, ..cfg(2) };
        let out = smote(&minority, 100, &half).unwrap();
        assert_eq!(out.synthetic.len(), 46); // ceil(0.5*100) - 4
    }
}
