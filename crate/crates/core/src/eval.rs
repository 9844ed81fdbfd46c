//! Representation quality measurement: linear probe, k-NN probe, and
//! collapse diagnostics. Everything here reads encoder parameters without
//! ever mutating them.

use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::augment::{normalize_channels, AugmentConfig};
use crate::data::{Dataset, Samples};
use crate::error::{Error, Result};
use crate::loss::dissim;
use crate::model::{encode_batch, EncoderSpec, ParamSet};
use crate::rng::RngStream;
use crate::tensor::{Tape, Tensor};

/// Linear probe training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeHyper {
    pub lr: f64,
    pub epochs: usize,
    /// L2 penalty on the probe weights (not the bias).
    pub weight_decay: f64,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        ProbeHyper { lr: 0.5, epochs: 300, weight_decay: 1e-3, train_fraction: 0.8, split_seed: 0 }
    }
}

/// Frozen-encoder classifier: a single linear layer.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    pub weight: Tensor,
    pub bias: Tensor,
    pub hyper: ProbeHyper,
}

/// Accuracy summary of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub top5: f64,
    pub per_class: Vec<f64>,
    pub representation_variance: f64,
}

impl EvalReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::format(format!("report encode: {e}")))?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<EvalReport> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(format!("report parse: {e}")))
    }
}

/// Deterministic, augmentation-free forward pass over the whole dataset.
/// Returns the `N x d` representation matrix and the labels, if any.
pub fn extract_representations(
    spec: &EncoderSpec,
    params: &ParamSet,
    dataset: &Dataset,
    aug: &AugmentConfig,
) -> Result<(Tensor, Option<Vec<usize>>)> {
    let n = dataset.len();
    let d = spec.representation_dim;
    let mut values = Vec::with_capacity(n * d);
    let chunk = 256usize;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let batch = match dataset.samples() {
            Samples::Vectors { dim, .. } => {
                let mut rows = Vec::with_capacity((end - start) * dim);
                for i in start..end {
                    rows.extend_from_slice(dataset.vector_row(i));
                }
                Tensor::new(rows, vec![end - start, *dim])?
            }
            Samples::Images(_) => {
                let mut rows = Vec::new();
                for i in start..end {
                    let t = normalize_channels(dataset.image(i), &aug.norm_mean, &aug.norm_std)?;
                    rows.extend_from_slice(t.values());
                }
                Tensor::new(rows, spec.batch_shape(end - start))?
            }
        };
        let mut tape = Tape::new();
        let (rep, _) = encode_batch(&mut tape, spec, params, &batch)?;
        values.extend_from_slice(tape.values(rep));
        start = end;
    }
    Ok((Tensor::new(values, vec![n, d])?, dataset.labels().map(|l| l.to_vec())))
}

fn seeded_split(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(seed).derive_named("probe-split").shuffle(&mut order);
    let cut = ((n as f64) * train_fraction).round() as usize;
    let cut = cut.clamp(1, n - 1);
    (order[..cut].to_vec(), order[cut..].to_vec())
}

fn gather_rows(reps: &Tensor, indices: &[usize]) -> Tensor {
    let d = reps.shape()[1];
    let mut values = Vec::with_capacity(indices.len() * d);
    for &i in indices {
        values.extend_from_slice(&reps.values()[i * d..(i + 1) * d]);
    }
    Tensor::new(values, vec![indices.len(), d]).expect("gather geometry")
}

/// Train a softmax linear classifier on frozen representations with
/// full-batch gradient descent, then report held-out accuracy.
pub fn linear_probe(
    reps: &Tensor,
    labels: &[usize],
    hyper: ProbeHyper,
) -> Result<(LinearProbe, EvalReport)> {
    let shape = reps.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape(format!(
            "probe wants [N, d] with N labels, got {shape:?} and {} labels",
            labels.len()
        )));
    }
    let (n, d) = (shape[0], shape[1]);
    let k = labels.iter().max().map(|&m| m + 1).unwrap_or(0);
    if k < 2 {
        return Err(Error::contract("linear probe needs at least 2 classes"));
    }
    if n < 2 {
        return Err(Error::contract("linear probe needs at least 2 samples"));
    }

    let (train_idx, test_idx) = seeded_split(n, hyper.train_fraction, hyper.split_seed);
    let train_x = gather_rows(reps, &train_idx);
    let train_y: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
    {
        let mut seen = vec![false; k];
        for &y in &train_y {
            seen[y] = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::contract("train split is single-class"));
        }
    }

    let mut weight = Tensor::zeros(vec![d, k]).with_trainable(true);
    let mut bias = Tensor::zeros(vec![k]).with_trainable(true);
    for _ in 0..hyper.epochs {
        let mut tape = Tape::new();
        let x = tape.leaf(&train_x);
        let w = tape.leaf(&weight);
        let b = tape.leaf(&bias);
        let logits = tape.matmul(x, w)?;
        let logits = tape.add_bias(logits, b)?;
        let loss = tape.softmax_cross_entropy(logits, &train_y)?;
        tape.backward(loss)?;
        let gw = tape.grad(w).expect("weight gradient").to_vec();
        for (wv, g) in weight.values_mut().iter_mut().zip(gw) {
            *wv -= hyper.lr * (g + hyper.weight_decay * *wv);
        }
        let gb = tape.grad(b).expect("bias gradient").to_vec();
        for (bv, g) in bias.values_mut().iter_mut().zip(gb) {
            *bv -= hyper.lr * g;
        }
    }

    let test_x = gather_rows(reps, &test_idx);
    let test_y: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
    let mut tape = Tape::new();
    let x = tape.leaf(&test_x);
    let w = tape.leaf(&weight);
    let b = tape.leaf(&bias);
    let logits = tape.matmul(x, w)?;
    let logits = tape.add_bias(logits, b)?;
    let scores = tape.values(logits);

    let ranked = |row: &[f64]| -> Vec<usize> {
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
        order
    };
    let report = score_report(
        test_y.len(),
        k,
        |i| ranked(&scores[i * k..(i + 1) * k]),
        &test_y,
        collapse_diagnostics(reps)?.summary,
    );
    Ok((LinearProbe { weight, bias, hyper }, report))
}

fn score_report(
    n: usize,
    k: usize,
    ranked: impl Fn(usize) -> Vec<usize>,
    truth: &[usize],
    representation_variance: f64,
) -> EvalReport {
    let mut top1_hits = 0usize;
    let mut top5_hits = 0usize;
    let mut class_hits = vec![0usize; k];
    let mut class_totals = vec![0usize; k];
    for i in 0..n {
        let order = ranked(i);
        let y = truth[i];
        class_totals[y] += 1;
        if order[0] == y {
            top1_hits += 1;
            class_hits[y] += 1;
        }
        if order.iter().take(5).any(|&c| c == y) {
            top5_hits += 1;
        }
    }
    let per_class = class_hits
        .iter()
        .zip(&class_totals)
        .map(|(&h, &t)| if t == 0 { 0.0 } else { h as f64 / t as f64 })
        .collect();
    EvalReport {
        top1: top1_hits as f64 / n as f64,
        top5: top5_hits as f64 / n as f64,
        per_class,
        representation_variance,
    }
}

/// Leave-one-out k-nearest-neighbor probe under the same dissimilarity
/// the losses use. Vote ties break toward the class with the smallest
/// summed dissimilarity.
pub fn knn_probe(reps: &Tensor, labels: &[usize], k_neighbors: usize) -> Result<EvalReport> {
    let shape = reps.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::shape(format!(
            "knn wants [N, d] with N labels, got {shape:?} and {} labels",
            labels.len()
        )));
    }
    if k_neighbors == 0 {
        return Err(Error::contract("k_neighbors must be at least 1"));
    }
    let (n, d) = (shape[0], shape[1]);
    if n < 2 {
        return Err(Error::contract("knn needs at least 2 samples"));
    }
    let k = labels.iter().max().map(|&m| m + 1).unwrap_or(0);

    let ranked_classes = |i: usize| -> Result<Vec<usize>> {
        let anchor = &reps.values()[i * d..(i + 1) * d];
        let mut neighbors: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
        for j in 0..n {
            if j == i {
                continue;
            }
            let dist = dissim(anchor, &reps.values()[j * d..(j + 1) * d])?;
            neighbors.push((dist, j));
        }
        neighbors.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; k];
        let mut summed = vec![0.0f64; k];
        for &(dist, j) in neighbors.iter().take(k_neighbors) {
            votes[labels[j]] += 1;
            summed[labels[j]] += dist;
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                .then(summed[a].partial_cmp(&summed[b]).unwrap())
                .then(a.cmp(&b))
        });
        Ok(order)
    };

    let mut orders = Vec::with_capacity(n);
    for i in 0..n {
        orders.push(ranked_classes(i)?);
    }
    Ok(score_report(
        n,
        k,
        |i| orders[i].clone(),
        labels,
        collapse_diagnostics(reps)?.summary,
    ))
}

/// Variance statistics of inf-norm-normalized representations.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseStats {
    pub per_dim_variance: Vec<f64>,
    /// Mean per-dimension variance; near zero means the encoder maps
    /// everything to (almost) one point.
    pub summary: f64,
}

pub fn collapse_diagnostics(reps: &Tensor) -> Result<CollapseStats> {
    let shape = reps.shape();
    if shape.len() != 2 || shape[0] < 2 {
        return Err(Error::shape(format!("collapse diagnostics want [N>=2, d], got {shape:?}")));
    }
    let (n, d) = (shape[0], shape[1]);
    let mut normalized = vec![0.0; n * d];
    for i in 0..n {
        let row = &reps.values()[i * d..(i + 1) * d];
        let norm = row.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
        if norm == 0.0 {
            return Err(Error::degenerate(format!("representation row {i} is all zero")));
        }
        for j in 0..d {
            normalized[i * d + j] = row[j] / norm;
        }
    }
    let mut per_dim_variance = Vec::with_capacity(d);
    for j in 0..d {
        let mean: f64 = (0..n).map(|i| normalized[i * d + j]).sum::<f64>() / n as f64;
        let var: f64 = (0..n)
            .map(|i| {
                let x = normalized[i * d + j] - mean;
                x * x
            })
            .sum::<f64>()
            / n as f64;
        per_dim_variance.push(var);
    }
    let summary = per_dim_variance.iter().sum::<f64>() / d as f64;
    Ok(CollapseStats { per_dim_variance, summary })
}
