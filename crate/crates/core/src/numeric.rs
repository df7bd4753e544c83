//! Scalar-generic numeric kernels: cosine similarity, k-means with medoid
//! extraction, pairwise statistics and Shannon entropy.
//!
//! Everything here works for any [`Scalar`] (`f32` or `f64`). The domain
//! modules use the `f64` aliases exported from the crate root.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use thiserror::Error;

/// Floating point scalar usable by the numeric kernels.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Default + Send + Sync + 'static
{
    fn count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize representable as float")
    }

    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 literal representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NumericError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("empty input")]
    Empty,
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

pub fn norm<F: Scalar>(a: &[F]) -> F {
    dot(a, a).sqrt()
}

pub fn squared_distance<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x - *y;
            d * d
        })
        .sum()
}

/// `dot(a, b) / (|a| |b|)`, clamped into `[-1, 1]` against rounding drift.
pub fn cosine<F: Scalar>(a: &[F], b: &[F]) -> Result<F, NumericError> {
    if a.len() != b.len() {
        return Err(NumericError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let na = norm(a);
    let nb = norm(b);
    if na == F::zero() || nb == F::zero() {
        return Err(NumericError::ZeroNorm);
    }
    let c = dot(a, b) / (na * nb);
    Ok(c.max(-F::one()).min(F::one()))
}

/// Unit-length copy of `a`; zero vectors are returned unchanged.
pub fn normalized<F: Scalar>(a: &[F]) -> Vec<F> {
    let n = norm(a);
    if n == F::zero() {
        return a.to_vec();
    }
    a.iter().map(|x| *x / n).collect()
}

/// Mean cosine similarity over all unordered pairs. `None` for fewer than
/// two points.
pub fn mean_pairwise_similarity<F: Scalar>(points: &[Vec<F>]) -> Result<Option<F>, NumericError> {
    if points.len() < 2 {
        return Ok(None);
    }
    let mut total = F::zero();
    let mut pairs = 0usize;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            total = total + cosine(&points[i], &points[j])?;
            pairs += 1;
        }
    }
    Ok(Some(total / F::count(pairs)))
}

/// Maximum of `1 - cos` over all unordered pairs, with the first pair (in
/// scan order) that attains it.
pub fn max_pairwise_cosine_distance<F: Scalar>(
    points: &[Vec<F>],
) -> Result<Option<(F, usize, usize)>, NumericError> {
    let mut best: Option<(F, usize, usize)> = None;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = F::one() - cosine(&points[i], &points[j])?;
            if best.is_none_or(|(b, _, _)| d > b) {
                best = Some((d, i, j));
            }
        }
    }
    Ok(best)
}

/// Shannon entropy in bits of the distribution given by raw counts.
pub fn shannon_entropy_bits<F: Scalar>(counts: &[usize]) -> F {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return F::zero();
    }
    let total = F::count(total);
    let h: F = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = F::count(c) / total;
            -(p * p.log2())
        })
        .sum();
    // -0.0 for a single bucket
    h.max(F::zero())
}

/// Sizes of `parts` contiguous slices covering `n` items: the first `n % parts`
/// slices get one extra item.
pub fn even_slice_sizes(n: usize, parts: usize) -> Vec<usize> {
    let base = n / parts;
    let extra = n % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub k: usize,
    pub max_iterations: usize,
    /// Converged once no centroid moves farther than this (Euclidean).
    pub tolerance: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            k: 4,
            max_iterations: 100,
            tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit<F> {
    pub centroids: Vec<Vec<F>>,
    pub labels: Vec<usize>,
    pub iterations: usize,
}

fn nearest<F: Scalar>(point: &[F], centroids: &[Vec<F>]) -> (usize, F) {
    let mut best = (0, F::infinity());
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding. Falls back to the lowest unchosen index once every
/// remaining point coincides with a chosen seed.
fn plus_plus_seeds<F: Scalar, R: Rng + ?Sized>(points: &[Vec<F>], k: usize, rng: &mut R) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    while chosen.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                if chosen.contains(&i) {
                    return 0.0;
                }
                chosen
                    .iter()
                    .map(|&c| squared_distance(&points[i], &points[c]))
                    .fold(F::infinity(), F::min)
                    .to_f64()
                    .unwrap_or(0.0)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, w) in weights.iter().enumerate() {
                if *w <= 0.0 {
                    continue;
                }
                if target < *w {
                    pick = Some(i);
                    break;
                }
                target -= w;
            }
            // rounding can walk off the end; take the last weighted point
            pick.or_else(|| weights.iter().rposition(|w| *w > 0.0))
        } else {
            None
        };
        let pick = pick.unwrap_or_else(|| (0..n).find(|i| !chosen.contains(i)).expect("k <= n"));
        chosen.push(pick);
    }
    chosen
}

/// Lloyd's k-means with k-means++ initialisation. Requires `1 <= k <= n`.
///
/// An empty cluster is re-seeded with the point farthest from its assigned
/// centroid (lowest index on ties) that is not already a centroid.
pub fn kmeans<F: Scalar, R: Rng + ?Sized>(
    points: &[Vec<F>],
    opts: KMeansOptions,
    rng: &mut R,
) -> Result<KMeansFit<F>, NumericError> {
    let n = points.len();
    if n == 0 || opts.k == 0 {
        return Err(NumericError::Empty);
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(NumericError::DimensionMismatch {
            left: dim,
            right: bad.len(),
        });
    }
    let k = opts.k.min(n);
    let mut centroids: Vec<Vec<F>> = plus_plus_seeds(points, k, rng)
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let tol = F::lit(opts.tolerance);
    let mut labels = vec![0usize; n];
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        for (i, p) in points.iter().enumerate() {
            labels[i] = nearest(p, &centroids).0;
        }
        // re-seed empty clusters
        for c in 0..k {
            if labels.contains(&c) {
                continue;
            }
            let far = (0..n)
                .filter(|&i| !centroids.iter().any(|cen| squared_distance(&points[i], cen) == F::zero()))
                .map(|i| (i, squared_distance(&points[i], &centroids[labels[i]])))
                .fold(None::<(usize, F)>, |acc, (i, d)| match acc {
                    Some((_, bd)) if bd >= d => acc,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = far {
                centroids[c] = points[i].clone();
                labels[i] = c;
            }
        }
        let mut shift = F::zero();
        for c in 0..k {
            let members: Vec<&Vec<F>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l == c)
                .map(|(p, _)| p)
                .collect();
            if members.is_empty() {
                continue;
            }
            let count = F::count(members.len());
            let mean: Vec<F> = (0..dim)
                .map(|d| members.iter().map(|m| m[d]).sum::<F>() / count)
                .collect();
            shift = shift.max(squared_distance(&mean, &centroids[c]).sqrt());
            centroids[c] = mean;
        }
        if shift <= tol {
            break;
        }
    }
    for (i, p) in points.iter().enumerate() {
        labels[i] = nearest(p, &centroids).0;
    }
    Ok(KMeansFit {
        centroids,
        labels,
        iterations,
    })
}

/// One distinct member index per cluster, in cluster order: the member
/// closest to the cluster's centroid. A cluster whose members are all taken
/// (or that is empty) falls back to the closest unchosen point overall. Ties
/// go to the lowest index.
pub fn medoids<F: Scalar>(points: &[Vec<F>], fit: &KMeansFit<F>) -> Vec<usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(fit.centroids.len());
    for (c, centroid) in fit.centroids.iter().enumerate() {
        let closest = |in_cluster: bool| {
            (0..points.len())
                .filter(|i| !chosen.contains(i))
                .filter(|&i| !in_cluster || fit.labels[i] == c)
                .map(|i| (i, squared_distance(&points[i], centroid)))
                .fold(None::<(usize, F)>, |acc, (i, d)| match acc {
                    Some((_, bd)) if bd <= d => acc,
                    _ => Some((i, d)),
                })
        };
        if let Some((i, _)) = closest(true).or_else(|| closest(false)) {
            chosen.push(i);
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cosine_hand_values() {
        assert_relative_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_relative_eq!(cosine(&[3.0f64, 4.0], &[3.0, 4.0]).unwrap(), 1.0);
        // 32 / (sqrt(14) * sqrt(77))
        let expected = 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt());
        assert_relative_eq!(cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), expected, epsilon = 1e-15);
        assert!((expected - 0.974_631_846).abs() < 1e-9);
    }

    #[test]
    fn cosine_works_for_f32() {
        let c: f32 = cosine(&[1.0f32, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((c - 0.974_631_85).abs() < 1e-6);
    }

    #[test]
    fn cosine_errors() {
        assert_eq!(
            cosine(&[1.0, 0.0], &[1.0]),
            Err(NumericError::DimensionMismatch { left: 2, right: 1 })
        );
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), Err(NumericError::ZeroNorm));
    }

    #[test]
    fn entropy_values() {
        assert_eq!(shannon_entropy_bits::<f64>(&[]), 0.0);
        assert_eq!(shannon_entropy_bits::<f64>(&[7]), 0.0);
        assert_relative_eq!(shannon_entropy_bits::<f64>(&[1, 1]), 1.0);
        assert_relative_eq!(shannon_entropy_bits::<f64>(&[2, 2, 2, 2]), 2.0);
    }

    #[test]
    fn slice_sizes() {
        assert_eq!(even_slice_sizes(100, 5), vec![20; 5]);
        assert_eq!(even_slice_sizes(50, 5), vec![10; 5]);
        assert_eq!(even_slice_sizes(98, 5), vec![20, 20, 20, 19, 19]);
        assert_eq!(even_slice_sizes(3, 5), vec![1, 1, 1, 0, 0]);
    }

    #[test]
    fn kmeans_separates_blobs() {
        let mut points = Vec::new();
        let centers = [[10.0, 0.0], [0.0, 10.0], [-10.0, 0.0], [0.0, -10.0]];
        for (b, c) in centers.iter().enumerate() {
            for j in 0..5 {
                let off = (j as f64 - 2.0) * 0.1 + b as f64 * 0.01;
                points.push(vec![c[0] + off, c[1] - off]);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fit = kmeans(&points, KMeansOptions::default(), &mut rng).unwrap();
        let meds = medoids(&points, &fit);
        let mut blobs: Vec<usize> = meds.iter().map(|i| i / 5).collect();
        blobs.sort();
        assert_eq!(blobs, vec![0, 1, 2, 3]);
    }

    #[test]
    fn kmeans_identical_points_pick_lowest_indices() {
        let points = vec![vec![1.0, 1.0]; 6];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fit = kmeans(&points, KMeansOptions::default(), &mut rng).unwrap();
        let mut meds = medoids(&points, &fit);
        meds.sort();
        assert_eq!(meds, vec![0, 1, 2, 3]);
    }

    #[test]
    fn kmeans_k_larger_than_n() {
        let points = vec![vec![0.0], vec![1.0]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fit = kmeans(&points, KMeansOptions::default(), &mut rng).unwrap();
        assert_eq!(fit.centroids.len(), 2);
        let mut meds = medoids(&points, &fit);
        meds.sort();
        assert_eq!(meds, vec![0, 1]);
    }

    #[test]
    fn max_pairwise_distance_scan() {
        let pts = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]];
        let (d, i, j) = max_pairwise_cosine_distance(&pts).unwrap().unwrap();
        assert_relative_eq!(d, 2.0);
        assert_eq!((i, j), (0, 2));
        assert!(max_pairwise_cosine_distance(&pts[..1]).unwrap().is_none());
    }
}
