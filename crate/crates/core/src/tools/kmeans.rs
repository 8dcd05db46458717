use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::{record, Determinism, FieldType, InputField, Tool, ToolDescriptor, ToolError, ToolRecord};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KMeansError {
    #[error("k = {k} exceeds the {n} points")]
    TooManyClusters { k: usize, n: usize },
    #[error("k = {k} exceeds the {distinct} distinct points")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("rows must all have the same positive width")]
    Ragged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each centroid update.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn inertia(points: &[Vec<f64>], centroids: &[Vec<f64>], assign: &[usize]) -> f64 {
    points.iter().zip(assign).map(|(p, &j)| sq_dist(p, &centroids[j])).sum()
}

/// Lloyd's algorithm. Initial centroids are `k` distinct point values drawn
/// without replacement; an emptied cluster keeps its previous centroid.
pub fn kmeans_segment(points: &[Vec<f64>], k: usize, seed: u64, max_iter: usize) -> Result<KMeansResult, KMeansError> {
    let n = points.len();
    if k == 0 {
        return Err(KMeansError::ZeroClusters);
    }
    if k > n {
        return Err(KMeansError::TooManyClusters { k, n });
    }
    let m = points[0].len();
    if m == 0 || points.iter().any(|p| p.len() != m) {
        return Err(KMeansError::Ragged);
    }
    let mut distinct: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !distinct.contains(&p) {
            distinct.push(p);
        }
    }
    if k > distinct.len() {
        return Err(KMeansError::TooFewDistinct {
            k,
            distinct: distinct.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = sample(&mut rng, distinct.len(), k)
        .into_iter()
        .map(|i| distinct[i].clone())
        .collect();

    let mut assign: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter.max(1) {
        iterations += 1;
        let mut sums = vec![vec![0.0; m]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assign) {
            counts[j] += 1;
            for (s, x) in sums[j].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        history.push(inertia(points, &centroids, &assign));
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    let final_inertia = inertia(points, &centroids, &assign);
    Ok(KMeansResult {
        assignments: assign,
        centroids,
        inertia: final_inertia,
        inertia_history: history,
        iterations,
    })
}

/// Projects rows onto the top two principal axes of their covariance.
/// Tables with a single column are padded with a zero second coordinate.
pub fn project_2d(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len();
    let m = points.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let x = DMatrix::from_fn(n, m, |i, j| points[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, m, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    (0..n)
        .map(|i| {
            (0..2)
                .map(|c| match order.get(c) {
                    Some(&axis) => {
                        let v = eig.eigenvectors.column(axis);
                        // fix the sign so that the largest component is positive
                        let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
                        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
                        sign * centered.row(i).iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>()
                    }
                    None => 0.0,
                })
                .collect()
        })
        .collect()
}

pub struct KMeansSegment {
    descriptor: ToolDescriptor,
}

impl KMeansSegment {
    pub fn new() -> Self {
        Self {
            descriptor: ToolDescriptor {
                name: "kmeans_segment".into(),
                description: "Segments a numeric table with k-means, optionally after a 2-D PCA projection".into(),
                inputs: vec![
                    InputField::required("points", FieldType::Table),
                    InputField::required("k", FieldType::Count),
                    InputField::optional("max_iter", FieldType::Count),
                    InputField::optional("pca", FieldType::Flag),
                ],
                determinism: Determinism::SeededStochastic,
            },
        }
    }
}

impl Default for KMeansSegment {
    fn default() -> Self {
        Self::new()
    }
}

impl Tool for KMeansSegment {
    fn descriptor(&self) -> &ToolDescriptor {
        &self.descriptor
    }

    fn call(&self, inputs: &ToolRecord, rng: &mut ChaCha8Rng) -> Result<ToolRecord, ToolError> {
        let mut points: Vec<Vec<f64>> = inputs["points"]
            .as_array()
            .map(|rows| {
                rows.iter()
                    .map(|r| r.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect())
                    .collect()
            })
            .unwrap_or_default();
        let k = inputs["k"].as_u64().unwrap_or(1) as usize;
        let max_iter = inputs.get("max_iter").and_then(|v| v.as_u64()).unwrap_or(100) as usize;
        if inputs.get("pca").and_then(|v| v.as_bool()).unwrap_or(false) {
            points = project_2d(&points);
        }
        if points.is_empty() {
            return Err(ToolError::Failed("empty table".into()));
        }
        let seed = rng.random();
        let res = kmeans_segment(&points, k, seed, max_iter).map_err(|e| ToolError::Failed(e.to_string()))?;
        Ok(record([
            ("assignments", json!(res.assignments)),
            ("centroids", json!(res.centroids)),
            ("inertia", json!(res.inertia)),
            ("iterations", json!(res.iterations)),
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_pairs() {
        let pts = vec![vec![0.0, 0.0], vec![10.0, 10.0], vec![0.0, 0.0], vec![10.0, 10.0]];
        for seed in 0..10 {
            let r = kmeans_segment(&pts, 2, seed, 50).unwrap();
            let mut c = r.centroids.clone();
            c.sort_by(|a, b| a[0].total_cmp(&b[0]));
            assert_eq!(c, vec![vec![0.0, 0.0], vec![10.0, 10.0]]);
            assert_eq!(r.inertia, 0.0);
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 1.0]];
        let r = kmeans_segment(&pts, 1, 3, 10).unwrap();
        assert_eq!(r.centroids[0], vec![3.0, 3.0]);
        assert_eq!(r.assignments, vec![0, 0, 0]);
    }

    #[test]
    fn errors() {
        let pts = vec![vec![0.0], vec![0.0]];
        assert_eq!(kmeans_segment(&pts, 3, 0, 5), Err(KMeansError::TooManyClusters { k: 3, n: 2 }));
        assert_eq!(kmeans_segment(&pts, 2, 0, 5), Err(KMeansError::TooFewDistinct { k: 2, distinct: 1 }));
        assert_eq!(kmeans_segment(&pts, 0, 0, 5), Err(KMeansError::ZeroClusters));
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        // points on the line y = 2x
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let proj = project_2d(&pts);
        let spread: Vec<f64> = proj.iter().map(|p| p[0]).collect();
        let step = 5f64.sqrt();
        for (i, s) in spread.iter().enumerate() {
            assert!((s - (i as f64 - 2.0) * step).abs() < 1e-9);
        }
        assert!(proj.iter().all(|p| p[1].abs() < 1e-9));
    }
}
