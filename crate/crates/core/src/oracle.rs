//! Brute-force reference computations for testing the fast paths.
//!
//! Nothing here reuses the sparse kernels: weights are materialized densely
//! from element accessors, instances are expanded to full one-hot vectors, and
//! norms are taken on explicit matrices. The scalar Logloss is the only shared
//! piece.

use crate::error::{Error, Result};
use crate::ingest::{Dataset, EncodedInstance, Label};
use crate::model::{FieldBlock, FieldWiseModel};
use crate::train::logloss;

/// Largest model [`oracle_finite_diff`] accepts.
pub const MAX_FD_PARAMS: usize = 5000;

/// `W⁽ⁱ⁾ = U⁽ⁱ⁾ᵀ V⁽ⁱ⁾` as nested rows, `(d − d_i) × d_i`.
pub fn dense_w(block: &FieldBlock) -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; block.d_field()]; block.d_other()];
    for (p, row) in w.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for a in 0..block.rank() {
                acc += block.u_at(a, p) * block.v_at(a, k);
            }
            *cell = acc;
        }
    }
    w
}

/// `W_b⁽ⁱ⁾`: `W⁽ⁱ⁾` with the bias row appended.
pub fn dense_wb(block: &FieldBlock) -> Vec<Vec<f64>> {
    let mut w = dense_w(block);
    w.push(block.b.clone());
    w
}

/// Full one-hot vector `x` of length `d`.
pub fn one_hot(cardinalities: &[usize], active: &[u32]) -> Vec<f64> {
    let mut x = Vec::with_capacity(cardinalities.iter().sum());
    for (&d, &k) in cardinalities.iter().zip(active) {
        for c in 0..d {
            x.push(if c == k as usize { 1.0 } else { 0.0 });
        }
    }
    x
}

/// `(x⁽ⁱ⁾, x⁽⁻ⁱ⁾)` split out of a full one-hot vector.
pub fn split_field(cardinalities: &[usize], x: &[f64], i: usize) -> (Vec<f64>, Vec<f64>) {
    let start: usize = cardinalities[..i].iter().sum();
    let end = start + cardinalities[i];
    let xi = x[start..end].to_vec();
    let mut rest = x[..start].to_vec();
    rest.extend_from_slice(&x[end..]);
    (xi, rest)
}

/// `ŷ = Σᵢ x⁽ⁱ⁾ᵀ (W⁽ⁱ⁾ᵀ x⁽⁻ⁱ⁾ + b⁽ⁱ⁾)` evaluated with dense matrices and vectors.
pub fn oracle_dense_predict(model: &FieldWiseModel, active: &[u32]) -> f64 {
    let cards = model.cardinalities();
    let x = one_hot(cards, active);
    let mut score = 0.0;
    for (i, block) in model.blocks().iter().enumerate() {
        let w = dense_w(block);
        let (xi, rest) = split_field(cards, &x, i);
        for k in 0..block.d_field() {
            let mut g = block.b[k];
            for (p, row) in w.iter().enumerate() {
                g += row[k] * rest[p];
            }
            score += xi[k] * g;
        }
    }
    score
}

/// `(‖W_b − w̄_b 1ᵀ‖_F, ‖w̄_b‖_F)` from the materialized matrix.
pub fn dense_norms(block: &FieldBlock) -> (f64, f64) {
    let wb = dense_wb(block);
    let cols = block.d_field() as f64;
    let mut var = 0.0;
    let mut mean_sq = 0.0;
    for row in &wb {
        let mean = row.iter().sum::<f64>() / cols;
        mean_sq += mean * mean;
        var += row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    }
    (var.sqrt(), mean_sq.sqrt())
}

/// Mean Logloss plus `λ Σᵢ (N₁ᵢ² + N₂ᵢ²)`, everything dense.
pub fn dense_objective(model: &FieldWiseModel, batch: &[&EncodedInstance], lambda: f64) -> f64 {
    let loss: f64 = batch
        .iter()
        .map(|inst| logloss(oracle_dense_predict(model, &inst.active), inst.label.sign()))
        .sum::<f64>()
        / batch.len() as f64;
    let reg: f64 = model
        .blocks()
        .iter()
        .map(|b| {
            let (n1, n2) = dense_norms(b);
            n1 * n1 + n2 * n2
        })
        .sum();
    loss + lambda * reg
}

/// Central finite differences of [`dense_objective`] for every parameter.
pub fn oracle_finite_diff(
    model: &FieldWiseModel,
    batch: &[&EncodedInstance],
    lambda: f64,
    step: f64,
) -> Result<Vec<FieldBlock>> {
    if model.num_params() > MAX_FD_PARAMS {
        return Err(Error::usage(format!(
            "finite differences limited to {MAX_FD_PARAMS} parameters, model has {}",
            model.num_params()
        )));
    }
    let mut probe = model.clone();
    let mut out: Vec<FieldBlock> = model.blocks().iter().map(FieldBlock::zeros_like).collect();
    for (i, grad) in out.iter_mut().enumerate() {
        for part in 0..3u8 {
            let len = match part {
                0 => model.block(i).u.len(),
                1 => model.block(i).v.len(),
                _ => model.block(i).b.len(),
            };
            for e in 0..len {
                let orig = *param_mut(&mut probe, i, part, e);
                *param_mut(&mut probe, i, part, e) = orig + step;
                let plus = dense_objective(&probe, batch, lambda);
                *param_mut(&mut probe, i, part, e) = orig - step;
                let minus = dense_objective(&probe, batch, lambda);
                *param_mut(&mut probe, i, part, e) = orig;
                let g = (plus - minus) / (2.0 * step);
                match part {
                    0 => grad.u[e] = g,
                    1 => grad.v[e] = g,
                    _ => grad.b[e] = g,
                }
            }
        }
    }
    Ok(out)
}

fn param_mut(model: &mut FieldWiseModel, i: usize, part: u8, e: usize) -> &mut f64 {
    let b = model.block_mut(i);
    match part {
        0 => &mut b.u[e],
        1 => &mut b.v[e],
        _ => &mut b.b[e],
    }
}

/// `|a − b| / max(1, |a|, |b|)`.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

/// Largest [`rel_error`] over every entry of two same-shaped gradient sets.
pub fn max_rel_error(a: &[FieldBlock], b: &[FieldBlock]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            x.u.iter()
                .zip(&y.u)
                .chain(x.v.iter().zip(&y.v))
                .chain(x.b.iter().zip(&y.b))
                .map(|(p, q)| rel_error(*p, *q))
        })
        .fold(0.0, f64::max)
}

/// Pairwise AUC: fraction of (positive, negative) pairs ranked correctly, ties as one half.
pub fn auc_bruteforce(scores: &[f64], labels: &[Label]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for (sp, lp) in scores.iter().zip(labels) {
        if *lp != Label::Positive {
            continue;
        }
        for (sn, ln) in scores.iter().zip(labels) {
            if *ln != Label::Negative {
                continue;
            }
            pairs += 1;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    (pairs > 0).then(|| wins / pairs as f64)
}

#[derive(Debug, Clone)]
pub struct LrFit {
    /// One weight per one-hot feature, length `d`.
    pub weights: Vec<f64>,
    pub train_logloss: f64,
    pub val_logloss: f64,
    pub iterations: usize,
}

fn lr_logloss(w: &[f64], xs: &[(Vec<f64>, f64)]) -> f64 {
    xs.iter()
        .map(|(x, y)| logloss(x.iter().zip(w).map(|(a, b)| a * b).sum(), *y))
        .sum::<f64>()
        / xs.len() as f64
}

/// Full-batch gradient descent on `mean Logloss + (l2/2)‖w‖²` over dense one-hot
/// vectors, without an intercept.
pub fn oracle_lr(train: &Dataset, val: &Dataset, l2: f64) -> LrFit {
    let cards = train.cardinalities();
    let d: usize = cards.iter().sum();
    let expand = |data: &Dataset| -> Vec<(Vec<f64>, f64)> {
        data.instances()
            .iter()
            .map(|inst| (one_hot(cards, &inst.active), inst.label.sign()))
            .collect()
    };
    let xs = expand(train);
    let vs = expand(val);
    let m = cards.len() as f64;
    // Lipschitz constant of the gradient: ‖x‖² / 4 + l2 with ‖x‖² = m.
    let step = 1.0 / (m / 4.0 + l2);
    let n = xs.len() as f64;
    let mut w = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut iterations = 0;
    for it in 0..200_000 {
        iterations = it + 1;
        grad.iter_mut().zip(&w).for_each(|(g, wi)| *g = l2 * wi);
        for (x, y) in &xs {
            let score: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
            let s = -y / (1.0 + (y * score).exp());
            for (g, xi) in grad.iter_mut().zip(x) {
                *g += s * xi / n;
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-11 {
            break;
        }
        for (wi, g) in w.iter_mut().zip(&grad) {
            *wi -= step * g;
        }
    }
    LrFit {
        train_logloss: lr_logloss(&w, &xs),
        val_logloss: lr_logloss(&w, &vs),
        weights: w,
        iterations,
    }
}
