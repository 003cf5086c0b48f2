//! Evaluation metrics: top-1 accuracy, the cosine-weighted kNN protocol,
//! saliency scores of placements, relative saliency gain of trajectories and
//! the transfer delta.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imagery::SaliencyMask;
use crate::oracle::Trajectory;

/// Fraction of exact prediction/label matches.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set is undefined".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / predictions.len() as f64)
}

fn cosine(a: &[f64], b: &[f64], norm_a: f64, norm_b: f64) -> f64 {
    crate::linalg::dot(a, b) / (norm_a * norm_b)
}

fn norm(v: &[f64]) -> f64 {
    crate::linalg::dot(v, v).sqrt()
}

/// Weighted-vote kNN over cosine similarity: the `k` nearest neighbors vote
/// with weight `exp(sim / temperature)`; ties go to the lowest class index.
pub fn knn_classify(
    train_features: &[Vec<f64>],
    train_labels: &[usize],
    query: &[f64],
    k: usize,
    temperature: f64,
) -> Result<usize> {
    if train_features.is_empty() || train_features.len() != train_labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} features vs {} labels",
            train_features.len(),
            train_labels.len()
        )));
    }
    if k == 0 || k > train_features.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} out of range for {} train points",
            train_features.len()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    let qn = norm(query);
    if qn == 0.0 {
        return Err(Error::Numeric("zero-norm query feature".into()));
    }
    let mut sims: Vec<(f64, usize)> = Vec::with_capacity(train_features.len());
    for (i, f) in train_features.iter().enumerate() {
        let fnorm = norm(f);
        if fnorm == 0.0 {
            return Err(Error::Numeric(format!("zero-norm train feature {i}")));
        }
        sims.push((cosine(query, f, qn, fnorm), i));
    }
    // partial selection of the k most similar; ties break on index for
    // determinism
    sims.select_nth_unstable_by(k - 1, |a, b| {
        b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1))
    });
    let top = &mut sims[..k];
    top.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let num_classes = train_labels.iter().max().unwrap() + 1;
    let mut votes = vec![0.0; num_classes];
    for &(sim, idx) in top.iter() {
        votes[train_labels[idx]] += (sim / temperature).exp();
    }
    Ok(crate::oracle::argmax(&votes))
}

/// Mean of the `k x k` bilinear window of the mask centered at `s`, sampled
/// with the same offsets as patch extraction.
pub fn saliency_score(mask: &SaliencyMask, s: (f64, f64), k: usize) -> Result<f64> {
    // reuse the image sampling path by viewing the mask as a 1-channel image
    let as_image = crate::imagery::Image::new(mask.height(), mask.width(), 1, mask.data().to_vec())?;
    let window = crate::subpixel::extract_patch(&as_image, s, k)?;
    Ok(window.iter().sum::<f64>() / window.len() as f64)
}

/// Per-token relative saliency gain of a trajectory plus exclusion
/// diagnostics for tokens whose initial score is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RsgReport {
    /// One entry per token that had a positive initial score.
    pub per_token: Vec<f64>,
    /// Tokens dropped because `score(s_0) = 0`.
    pub excluded: usize,
}

impl RsgReport {
    /// Mean over included tokens; `None` when every token was excluded.
    pub fn mean(&self) -> Option<f64> {
        if self.per_token.is_empty() {
            None
        } else {
            Some(self.per_token.iter().sum::<f64>() / self.per_token.len() as f64)
        }
    }
}

/// Relative saliency gain per token: `(score(s_t) - score(s_0)) / score(s_0)`
/// between the first and last rows of a trajectory.
pub fn rsg(trajectory: &Trajectory, mask: &SaliencyMask, k: usize) -> Result<RsgReport> {
    let first = trajectory.initial();
    let last = trajectory.last();
    let mut per_token = Vec::with_capacity(first.len());
    let mut excluded = 0usize;
    for (s0, st) in first.iter().zip(last) {
        let before = saliency_score(mask, *s0, k)?;
        if before == 0.0 {
            excluded += 1;
            continue;
        }
        let after = saliency_score(mask, *st, k)?;
        per_token.push((after - before) / before);
    }
    Ok(RsgReport { per_token, excluded })
}

/// Accuracy change from original to transferred placements.
pub fn transfer_delta(acc_original: f64, acc_transfer: f64) -> f64 {
    acc_transfer - acc_original
}

/// Dataset-level evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top1: f64,
    pub knn_top1: f64,
    pub per_class: Vec<f64>,
    pub n_images: usize,
    pub token_budget: usize,
}

impl EvalReport {
    /// Flat `key=value` rendering, one line per field.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "top1={}", self.top1);
        let _ = writeln!(out, "knn_top1={}", self.knn_top1);
        for (c, acc) in self.per_class.iter().enumerate() {
            let _ = writeln!(out, "class{c}_top1={acc}");
        }
        let _ = writeln!(out, "n_images={}", self.n_images);
        let _ = writeln!(out, "token_budget={}", self.token_budget);
        out
    }

    pub fn csv_header(&self) -> String {
        let mut h = String::from("top1,knn_top1");
        for c in 0..self.per_class.len() {
            let _ = write!(h, ",class{c}_top1");
        }
        h.push_str(",n_images,token_budget");
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!("{},{}", self.top1, self.knn_top1);
        for acc in &self.per_class {
            let _ = write!(r, ",{acc}");
        }
        let _ = write!(r, ",{},{}", self.n_images, self.token_budget);
        r
    }

    pub fn save(&self, kv_path: impl AsRef<Path>, csv_path: impl AsRef<Path>) -> Result<()> {
        let kv_path = kv_path.as_ref();
        std::fs::write(kv_path, self.to_kv()).map_err(|e| Error::io(kv_path, e))?;
        let csv_path = csv_path.as_ref();
        let text = format!("{}\n{}\n", self.csv_header(), self.csv_row());
        std::fs::write(csv_path, text).map_err(|e| Error::io(csv_path, e))
    }
}

/// Build an [`EvalReport`] from predictions, kNN predictions and labels.
pub fn build_report(
    predictions: &[usize],
    knn_predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
    token_budget: usize,
) -> Result<EvalReport> {
    let top1 = accuracy(predictions, labels)?;
    let knn_top1 = accuracy(knn_predictions, labels)?;
    let mut per_class = vec![0.0; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        counts[l] += 1;
        if p == l {
            per_class[l] += 1.0;
        }
    }
    for (acc, &cnt) in per_class.iter_mut().zip(&counts) {
        if cnt > 0 {
            *acc /= cnt as f64;
        }
    }
    Ok(EvalReport { top1, knn_top1, per_class, n_images: labels.len(), token_budget })
}
