//! Seeded K-means (K-means++ init, Lloyd refinement) over row-major samples.
//!
//! Used twice by the parameterization pipeline: once over sRGB pixel values
//! (D=3) to extract a palette, once per color cluster over UV coordinates
//! (D=2) to place control points. Everything is deterministic given the seed;
//! distance ties always resolve toward the lowest cluster index.

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::util::seeded_rng;

/// Lloyd refinement runs at most this many iterations; it stops early as soon
/// as one full pass leaves every assignment unchanged.
pub const LLOYD_MAX_ITERS: usize = 300;

#[derive(Debug, Clone)]
pub struct KmeansFit {
    /// k × D cluster centers, indexed by cluster label.
    pub centroids: Array2<f64>,
    /// Cluster label per input row.
    pub labels: Vec<usize>,
    /// Sum of squared distances from each sample to its centroid.
    pub inertia: f64,
    /// Lloyd iterations actually performed.
    pub iterations: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
}

/// Index of the nearest centroid, ties toward the lowest index.
fn nearest(centroids: &Array2<f64>, point: &[f64]) -> (usize, f64) {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (c, row) in centroids.outer_iter().enumerate() {
        let d = dist2(row.as_slice().unwrap(), point);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    (best, best_d)
}

/// K-means++ seeding: first center uniform, each later center drawn with
/// probability proportional to squared distance from the nearest chosen one.
fn kmeanspp_init(samples: &ArrayView2<'_, f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let (n, d) = samples.dim();
    let mut centroids = Array2::zeros((k, d));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&samples.row(first));

    let mut best_d2: Vec<f64> = (0..n)
        .map(|i| {
            dist2(
                samples.row(i).as_slice().unwrap(),
                centroids.row(0).as_slice().unwrap(),
            )
        })
        .collect();

    for c in 1..k {
        let total: f64 = best_d2.iter().sum();
        let pick = if total > 0.0 {
            // Walk the cumulative weights; the final index guard absorbs
            // floating-point shortfall in the running sum.
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in best_d2.iter().enumerate() {
                acc += w;
                if target < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // Fewer distinct points than clusters; any point will do.
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&samples.row(pick));
        for i in 0..n {
            let d = dist2(
                samples.row(i).as_slice().unwrap(),
                centroids.row(c).as_slice().unwrap(),
            );
            if d < best_d2[i] {
                best_d2[i] = d;
            }
        }
    }
    centroids
}

/// Lloyd refinement from explicit starting centroids. Exposed to the crate so
/// tests can exercise degenerate starts (e.g. forcing an empty cluster).
pub(crate) fn lloyd(samples: &ArrayView2<'_, f64>, mut centroids: Array2<f64>) -> KmeansFit {
    let (n, d) = samples.dim();
    let k = centroids.nrows();
    let mut labels = vec![usize::MAX; n];
    let mut prev_inertia = f64::INFINITY;
    let mut iterations = 0;

    for iter in 0..LLOYD_MAX_ITERS {
        iterations = iter + 1;
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let (c, dist) = nearest(&centroids, samples.row(i).as_slice().unwrap());
            inertia += dist;
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        debug_assert!(
            inertia <= prev_inertia * (1.0 + 1e-12) + 1e-9,
            "inertia increased: {prev_inertia} -> {inertia}"
        );
        prev_inertia = inertia;
        if !changed {
            break;
        }

        // Update step: means of the members.
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = labels[i];
            counts[c] += 1;
            for j in 0..d {
                sums[[c, j]] += samples[[i, j]];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..d {
                    centroids[[c, j]] = sums[[c, j]] / counts[c] as f64;
                }
            }
        }

        // Empty clusters grab the point currently farthest from its centroid,
        // one at a time in ascending cluster order. The donor cluster's mean
        // is recomputed without the stolen point so every centroid stays the
        // exact mean of its members.
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far_i = None;
            let mut far_d = -1.0;
            for i in 0..n {
                if counts[labels[i]] < 2 {
                    continue; // stealing would just move the hole
                }
                let dd = dist2(
                    samples.row(i).as_slice().unwrap(),
                    centroids.row(labels[i]).as_slice().unwrap(),
                );
                if dd > far_d {
                    far_d = dd;
                    far_i = Some(i);
                }
            }
            if let Some(i) = far_i {
                let donor = labels[i];
                counts[donor] -= 1;
                counts[c] = 1;
                for j in 0..d {
                    sums[[donor, j]] -= samples[[i, j]];
                    centroids[[donor, j]] = sums[[donor, j]] / counts[donor] as f64;
                    sums[[c, j]] = samples[[i, j]];
                    centroids[[c, j]] = samples[[i, j]];
                }
                labels[i] = c;
            }
        }
    }

    // Final inertia under the returned labels/centroids.
    let inertia = (0..n)
        .map(|i| {
            dist2(
                samples.row(i).as_slice().unwrap(),
                centroids.row(labels[i]).as_slice().unwrap(),
            )
        })
        .sum();
    KmeansFit {
        centroids,
        labels,
        inertia,
        iterations,
    }
}

/// Clusters `samples` (N×D, D ∈ {2, 3}) into `k` groups.
pub fn kmeans(samples: ArrayView2<'_, f64>, k: usize, seed: u64) -> Result<KmeansFit> {
    let (n, d) = samples.dim();
    if !(d == 2 || d == 3) {
        return Err(Error::InvalidInput(format!(
            "kmeans expects 2- or 3-dimensional samples, got D={d}"
        )));
    }
    if k == 0 {
        return Err(Error::InvalidInput("kmeans needs k >= 1".into()));
    }
    if n < k {
        return Err(Error::InvalidInput(format!(
            "kmeans needs at least as many samples as clusters: got {n} samples for k={k}"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("kmeans samples must be finite".into()));
    }
    let mut rng = seeded_rng(seed);
    let init = kmeanspp_init(&samples, k, &mut rng);
    Ok(lloyd(&samples, init))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sorted_first_coord(fit: &KmeansFit) -> Vec<f64> {
        let mut xs: Vec<f64> = fit.centroids.outer_iter().map(|r| r[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs
    }

    #[test]
    fn four_corners_recover_themselves() {
        let pts = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let fit = kmeans(pts.view(), 4, 11).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut rows: Vec<[f64; 2]> = fit.centroids.outer_iter().map(|r| [r[0], r[1]]).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(rows, vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]);
    }

    /// Oracle: enumerate every split of the four points into two non-empty
    /// groups and take the one with minimal inertia. For {0, 0.1, 10, 10.1}
    /// that is {0, 0.1} | {10, 10.1} with means 0.05 and 10.05.
    #[test]
    fn two_cluster_split_matches_enumeration() {
        let xs = [0.0, 0.1, 10.0, 10.1];
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 4) - 1 {
            let (mut s0, mut n0, mut s1, mut n1) = (0.0, 0, 0.0, 0);
            for (i, &x) in xs.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    s0 += x;
                    n0 += 1;
                } else {
                    s1 += x;
                    n1 += 1;
                }
            }
            let (m0, m1) = (s0 / n0 as f64, s1 / n1 as f64);
            let inertia: f64 = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let m = if mask & (1 << i) != 0 { m0 } else { m1 };
                    (x - m) * (x - m)
                })
                .sum();
            if inertia < best.0 {
                best = (inertia, mask);
            }
        }
        assert_eq!(best.1 & 0b0011, best.1, "oracle should split low vs high");

        let pts = array![[0.0, 0.0], [0.1, 0.0], [10.0, 0.0], [10.1, 0.0]];
        for seed in 0..5 {
            let fit = kmeans(pts.view(), 2, seed).unwrap();
            assert!((fit.inertia - best.0).abs() < 1e-12);
            let xs = sorted_first_coord(&fit);
            assert!((xs[0] - 0.05).abs() < 1e-12 && (xs[1] - 10.05).abs() < 1e-12);
        }
    }

    #[test]
    fn n_equals_k_is_exact() {
        let pts = array![[0.0, 0.0, 0.0], [5.0, 1.0, 2.0], [9.0, 9.0, 9.0]];
        let fit = kmeans(pts.view(), 3, 3).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut seen = fit.labels.clone();
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn too_few_samples_names_k() {
        let pts = array![[0.0, 0.0], [1.0, 1.0]];
        let err = kmeans(pts.view(), 5, 0).unwrap_err();
        assert!(err.to_string().contains("k=5"), "got: {err}");
    }

    #[test]
    fn empty_cluster_reseeds_to_farthest_point() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [10.0, 0.0]];
        // Both starting centroids coincide, so cluster 1 starts empty.
        let init = array![[0.0, 0.0], [0.0, 0.0]];
        let fit = lloyd(&pts.view(), init);
        let xs = sorted_first_coord(&fit);
        assert!((xs[0] - 0.05).abs() < 1e-12 && (xs[1] - 10.0).abs() < 1e-12);
        assert_eq!(fit.labels[0], fit.labels[1]);
        assert_ne!(fit.labels[0], fit.labels[2]);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut rng = crate::util::seeded_rng(99);
        let mut data = Array2::<f64>::zeros((120, 3));
        for v in data.iter_mut() {
            *v = rng.random_range(0.0..255.0);
        }
        let a = kmeans(data.view(), 6, 42).unwrap();
        let b = kmeans(data.view(), 6, 42).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.centroids, b.centroids);
        assert_eq!(a.inertia, b.inertia);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let pts = Array2::<f64>::zeros((4, 5));
        assert!(kmeans(pts.view(), 2, 0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn labels_valid_and_inertia_consistent(
                seed in 0u64..500,
                n in 4usize..40,
                k in 1usize..5,
            ) {
                prop_assume!(n >= k);
                let mut rng = crate::util::seeded_rng(seed);
                let mut data = Array2::<f64>::zeros((n, 2));
                for v in data.iter_mut() {
                    *v = rng.random_range(-1.0..1.0);
                }
                let fit = kmeans(data.view(), k, seed).unwrap();
                prop_assert!(fit.labels.iter().all(|&l| l < k));
                let recomputed: f64 = (0..n)
                    .map(|i| {
                        let c = fit.labels[i];
                        (0..2)
                            .map(|j| (data[[i, j]] - fit.centroids[[c, j]]).powi(2))
                            .sum::<f64>()
                    })
                    .sum();
                prop_assert!((recomputed - fit.inertia).abs() <= 1e-9 * (1.0 + recomputed));
            }
        }
    }
}
