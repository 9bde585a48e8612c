//! Classification metrics and 2-D PCA of embeddings.

use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch(
                "confusion matrix must be square".into(),
            ));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|r| r[class]).sum()
    }

    /// Each row scaled to sum to 100; empty rows stay zero.
    pub fn row_percent(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| {
                        if s == 0 {
                            0.0
                        } else {
                            100.0 * c as f64 / s as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub macro_f1: f64,
    pub micro_accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        let total = confusion.total();
        if total == 0 {
            return Err(Error::EmptyEvaluation);
        }
        let per_class: Vec<ClassMetrics> = (0..confusion.num_classes())
            .map(|c| {
                let tp = confusion.get(c, c);
                let precision = ratio(tp, confusion.predicted(c));
                let recall = ratio(tp, confusion.support(c));
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                ClassMetrics {
                    precision,
                    recall,
                    f1,
                    support: confusion.support(c),
                }
            })
            .collect();
        let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / per_class.len() as f64;
        Ok(EvalReport {
            micro_accuracy: ratio(confusion.trace(), total),
            macro_f1,
            per_class,
            confusion,
        })
    }
}

/// Tallies `predictions` against `targets` over `k` classes.
pub fn evaluate(predictions: &[usize], targets: &[usize], k: usize) -> Result<EvalReport> {
    if predictions.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let mut cm = ConfusionMatrix::new(k);
    for (&p, &t) in predictions.iter().zip(targets) {
        if p >= k || t >= k {
            return Err(Error::ShapeMismatch(format!(
                "label pair ({t}, {p}) outside {k} classes"
            )));
        }
        cm.counts[t][p] += 1;
    }
    EvalReport::from_confusion(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    Counts,
    RowPercent,
}

/// CSV table with a header row of predicted classes and one row per true
/// class.
pub fn render_confusion(
    cm: &ConfusionMatrix,
    mode: RenderMode,
    names: Option<&[String]>,
) -> String {
    let k = cm.num_classes();
    let name = |i: usize| {
        names
            .and_then(|n| n.get(i).cloned())
            .unwrap_or_else(|| i.to_string())
    };
    let mut out = String::from("true\\pred");
    for j in 0..k {
        write!(out, ",{}", name(j)).unwrap();
    }
    out.push('\n');
    let pct = cm.row_percent();
    for i in 0..k {
        out.push_str(&name(i));
        for j in 0..k {
            match mode {
                RenderMode::Counts => write!(out, ",{}", cm.get(i, j)).unwrap(),
                RenderMode::RowPercent => write!(out, ",{:.2}", pct[i][j]).unwrap(),
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    pub components: [Vec<f64>; 2],
    /// Variance along each component.
    pub explained_variance: [f64; 2],
    /// All covariance eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    pub projections: Vec<[f64; 2]>,
}

impl PcaResult {
    pub fn total_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// Sample covariance (divided by n − 1) of row vectors.
pub fn covariance(points: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = points.len();
    let d = points[0].len();
    let mut mean = vec![0.0; d];
    for p in points {
        mean.iter_mut().zip(p).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| points[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mean, cov)
}

/// Projects embeddings onto the two leading covariance eigenvectors. Each
/// component's first non-negligible coordinate is made positive.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<PcaResult> {
    if points.len() < 3 {
        return Err(Error::DegenerateData(format!(
            "PCA needs at least 3 samples, got {}",
            points.len()
        )));
    }
    let d = points[0].len();
    if d < 2 || points.iter().any(|p| p.len() != d) {
        return Err(Error::DegenerateData(
            "PCA needs equal-length vectors of dimension >= 2".into(),
        ));
    }
    let (mean, cov) = covariance(points);
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let scale = cov.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || eigenvalues[0] <= 1e-12 * scale {
        return Err(Error::DegenerateData("covariance has rank 0".into()));
    }
    let components: [Vec<f64>; 2] = std::array::from_fn(|c| {
        let mut v: Vec<f64> = eig.eigenvectors.column(order[c]).iter().copied().collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
            if first < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
        }
        v
    });
    let projections = points
        .iter()
        .map(|p| {
            std::array::from_fn(|c| {
                p.iter()
                    .zip(&mean)
                    .zip(&components[c])
                    .map(|((x, m), w)| (x - m) * w)
                    .sum()
            })
        })
        .collect();
    Ok(PcaResult {
        mean,
        explained_variance: [eigenvalues[0], eigenvalues[1]],
        components,
        eigenvalues,
        projections,
    })
}

/// Mean silhouette coefficient under Euclidean distance. Points in
/// singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(Error::ShapeMismatch(
            "silhouette needs one label per point".into(),
        ));
    }
    let k = labels.iter().max().unwrap() + 1;
    let sizes = (0..k).fold(vec![0usize; k], |mut s, c| {
        s[c] = labels.iter().filter(|&&l| l == c).count();
        s
    });
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::DegenerateData(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    };
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[labels[j]] += dist(p, q);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / points.len() as f64)
}

/// Training accuracy of `k` one-vs-rest logistic regressions fitted by
/// full-batch gradient descent on standardized 2-D points; each point goes
/// to the class with the highest score.
pub fn one_vs_rest_accuracy(points: &[[f64; 2]], labels: &[usize], k: usize) -> Result<f64> {
    if points.len() != labels.len() || points.is_empty() {
        return Err(Error::ShapeMismatch("one label per point required".into()));
    }
    let n = points.len() as f64;
    let mut mean = [0.0; 2];
    let mut sd = [0.0; 2];
    for d in 0..2 {
        mean[d] = points.iter().map(|p| p[d]).sum::<f64>() / n;
        sd[d] = (points.iter().map(|p| (p[d] - mean[d]).powi(2)).sum::<f64>() / n)
            .sqrt()
            .max(1e-12);
    }
    let xs: Vec<[f64; 2]> = points
        .iter()
        .map(|p| [(p[0] - mean[0]) / sd[0], (p[1] - mean[1]) / sd[1]])
        .collect();
    let mut w = vec![[0.0f64; 3]; k];
    for (c, wc) in w.iter_mut().enumerate() {
        for _ in 0..2000 {
            let mut g = [0.0; 3];
            for (x, &l) in xs.iter().zip(labels) {
                let z = wc[0] * x[0] + wc[1] * x[1] + wc[2];
                let e = crate::nn::sigmoid(z) - if l == c { 1.0 } else { 0.0 };
                g[0] += e * x[0];
                g[1] += e * x[1];
                g[2] += e;
            }
            for d in 0..3 {
                wc[d] -= 1.0 * g[d] / n;
            }
        }
    }
    let correct = xs
        .iter()
        .zip(labels)
        .filter(|(x, &l)| {
            let scores: Vec<f64> = w
                .iter()
                .map(|wc| wc[0] * x[0] + wc[1] * x[1] + wc[2])
                .collect();
            crate::nn::argmax(&scores) == l
        })
        .count();
    Ok(correct as f64 / n)
}
