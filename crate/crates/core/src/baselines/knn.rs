//! Distance-weighted k-nearest neighbours over standardized flat windows.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::container::{fingerprint, Container, MAGIC_KNN};
use crate::data::{ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::nn::NTensor;
use crate::preprocess::{ScalerParams, StandardScaler};
use crate::rng::derived_rng;

#[derive(Debug, Clone)]
pub struct KnnModel {
    k: usize,
    scaler: StandardScaler,
    /// Scaled training vectors.
    points: Vec<Vec<f64>>,
    labels: Vec<ClassLabel>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn argmax(scores: &[f64]) -> usize {
    // First maximum wins, so ties go to the lower class index.
    scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > scores[best] { i } else { best })
}

impl KnnModel {
    /// Fit the scaler on `rows` and memorize the scaled points.
    pub fn fit(rows: &[Vec<f64>], labels: &[ClassLabel], k: usize) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch(rows.len(), labels.len()));
        }
        if k == 0 || k > rows.len() {
            return Err(Error::InvalidConfig(format!(
                "k = {k} needs 1 <= k <= {} training points",
                rows.len()
            )));
        }
        let mut scaler = StandardScaler::new();
        scaler.fit(rows)?;
        let points = rows.iter().map(|r| scaler.transform(r)).collect::<Result<_>>()?;
        Ok(KnnModel {
            k,
            scaler,
            points,
            labels: labels.to_vec(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Predicted label and normalized per-class vote weights for a raw
    /// (unscaled) query.
    ///
    /// Each of the `k` nearest points votes `1 / d`. A point at distance zero
    /// decides outright; several exact matches vote one each among themselves.
    pub fn predict(&self, query: &[f64]) -> Result<(ClassLabel, [f64; NUM_CLASSES])> {
        let q = self.scaler.transform(query)?;
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (sq_dist(&q, p), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut scores = [0.0; NUM_CLASSES];
        let exact: Vec<usize> = dist.iter().take_while(|(d, _)| *d == 0.0).map(|&(_, i)| i).collect();
        if exact.is_empty() {
            for &(d2, i) in &dist[..self.k] {
                scores[self.labels[i].index()] += 1.0 / d2.sqrt();
            }
        } else {
            for i in exact {
                scores[self.labels[i].index()] += 1.0;
            }
        }
        let total: f64 = scores.iter().sum();
        scores.iter_mut().for_each(|s| *s /= total);
        let label = ClassLabel::from_index(argmax(&scores)).expect("class index in range");
        Ok((label, scores))
    }

    pub fn predict_labels(&self, rows: &[Vec<f64>]) -> Result<Vec<ClassLabel>> {
        rows.iter().map(|r| self.predict(r).map(|p| p.0)).collect()
    }

    fn arch(&self) -> String {
        let dim = self.points.first().map_or(0, Vec::len);
        format!("knn;k={};dim={dim};weights=inverse-distance", self.k)
    }

    pub fn to_container(&self) -> Container {
        let dim = self.points.first().map_or(0, Vec::len);
        let params = self.scaler.params().expect("fitted models carry a scaler");
        let mut c = Container::new(MAGIC_KNN, fingerprint(&self.arch()));
        let flat: Vec<f64> = self.points.iter().flatten().copied().collect();
        c.push("points", NTensor::new(vec![self.points.len(), dim], flat).expect("consistent rows"));
        let labels = self.labels.iter().map(|l| l.index() as f64).collect();
        c.push("labels", NTensor::new(vec![self.labels.len()], labels).expect("1-d"));
        c.push("scaler.mean", NTensor::new(vec![dim], params.mean.clone()).expect("1-d"));
        c.push("scaler.std", NTensor::new(vec![dim], params.std.clone()).expect("1-d"));
        c.metadata = serde_json::json!({ "k": self.k, "architecture": self.arch() });
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let k = c.metadata["k"]
            .as_u64()
            .ok_or_else(|| Error::Format("kNN metadata lacks k".into()))? as usize;
        let points_t = c.tensor("points")?;
        let [n, dim] = points_t.shape() else {
            return Err(Error::Format("kNN points must be 2-d".into()));
        };
        let (n, dim) = (*n, *dim);
        let labels = c
            .tensor("labels")?
            .data()
            .iter()
            .map(|&v| {
                ClassLabel::from_index(v as usize)
                    .filter(|_| v.fract() == 0.0 && v >= 0.0)
                    .ok_or_else(|| Error::Format(format!("bad label value {v}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if labels.len() != n {
            return Err(Error::Format("kNN label count differs from point count".into()));
        }
        let points = if dim == 0 {
            vec![Vec::new(); n]
        } else {
            points_t.data().chunks_exact(dim).map(<[f64]>::to_vec).collect()
        };
        let scaler = StandardScaler::from_params(ScalerParams {
            mean: c.tensor("scaler.mean")?.data().to_vec(),
            std: c.tensor("scaler.std")?.data().to_vec(),
        });
        let model = KnnModel {
            k,
            scaler,
            points,
            labels,
        };
        c.expect_fingerprint(&fingerprint(&model.arch()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, MAGIC_KNN)?)
    }
}

/// Assign every index to one of `k_folds` folds, class by class.
///
/// Each class is shuffled with its own derived stream and dealt round-robin;
/// the dealing position carries over between classes so fold sizes stay
/// within one of each other as well.
pub fn stratified_folds(labels: &[ClassLabel], k_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k_folds < 2 {
        return Err(Error::InvalidConfig("cross-validation needs at least 2 folds".into()));
    }
    let mut folds = vec![Vec::new(); k_folds];
    let mut slot = 0;
    for class in ClassLabel::all() {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < k_folds {
            return Err(Error::InsufficientClassData {
                class: class.to_string(),
                have: idx.len(),
                need: k_folds,
            });
        }
        idx.shuffle(&mut derived_rng(seed, "cv-fold", class.index() as u64));
        for i in idx {
            folds[slot % k_folds].push(i);
            slot += 1;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fold_accuracy: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
    /// Pooled out-of-fold confusion counts.
    pub confusion: Vec<Vec<u64>>,
}

/// Stratified k-fold accuracy of a kNN classifier. The scaler is refit on
/// each training fold.
pub fn cross_validate(rows: &[Vec<f64>], labels: &[ClassLabel], k: usize, k_folds: usize, seed: u64) -> Result<CvReport> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch(rows.len(), labels.len()));
    }
    let folds = stratified_folds(labels, k_folds, seed)?;
    let mut fold_accuracy = Vec::with_capacity(k_folds);
    let mut pooled = ConfusionMatrix::new(NUM_CLASSES);
    for (f, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|&(g, _)| g != f)
            .flat_map(|(_, idx)| idx.iter().copied())
            .collect();
        let train_rows: Vec<Vec<f64>> = train.iter().map(|&i| rows[i].clone()).collect();
        let train_labels: Vec<ClassLabel> = train.iter().map(|&i| labels[i]).collect();
        let model = KnnModel::fit(&train_rows, &train_labels, k)?;
        let mut correct = 0;
        for &i in test {
            let (pred, _) = model.predict(&rows[i])?;
            let truth = labels[i];
            correct += usize::from(pred == truth);
            let cm = ConfusionMatrix::from_indices(&[truth.index()], &[pred.index()], NUM_CLASSES)?;
            pooled = add(&pooled, &cm);
        }
        fold_accuracy.push(correct as f64 / test.len() as f64);
    }
    let mean = fold_accuracy.iter().sum::<f64>() / k_folds as f64;
    let std = (fold_accuracy.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / k_folds as f64).sqrt();
    Ok(CvReport {
        fold_accuracy,
        mean,
        std,
        confusion: pooled.counts().to_vec(),
    })
}

fn add(a: &ConfusionMatrix, b: &ConfusionMatrix) -> ConfusionMatrix {
    let counts = a
        .counts()
        .iter()
        .zip(b.counts())
        .map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x + y).collect())
        .collect();
    ConfusionMatrix::from_counts(counts).expect("same shape")
}
