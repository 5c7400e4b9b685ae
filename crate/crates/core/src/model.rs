//! Field-wise model parameters, decision scores and factored-form norms.
//!
//! Field `i` owns a linear field-focused model per category: `W = Uᵀ V` with
//! `U: r × (d − d_i)` and `V: r × d_i`, plus a bias vector `b` of length `d_i`.
//! The input of field `i`'s models is `x⁽⁻ⁱ⁾`, the one-hot vector with field `i`
//! removed; its columns are the other fields concatenated in field order.
//!
//! Factor matrices are stored column-major (each column of length `r` is
//! contiguous) because every sparse access reads whole columns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{EncodedInstance, Vocabulary};

const MODEL_MAGIC: &[u8; 8] = b"FWMODEL\0";
const MODEL_VERSION: u32 = 1;

/// Default element budget for [`FieldWiseModel::materialize_weights`].
pub const DEFAULT_DENSE_BUDGET: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankPolicy {
    /// The same rank for every field, clamped to `[1, d_i]`.
    Constant(usize),
    /// `r_i = round(log_b d_i)`, clamped to `[1, d_i]`.
    LogBase(f64),
    /// No factors at all; the model reduces to per-feature biases.
    BiasOnly,
}

pub fn rank_for_field(cardinality: usize, policy: RankPolicy) -> Result<usize> {
    if cardinality == 0 {
        return Err(Error::data("field cardinality must be at least 1"));
    }
    let raw = match policy {
        RankPolicy::BiasOnly => return Ok(0),
        RankPolicy::Constant(r) => {
            if r == 0 {
                return Err(Error::usage("constant rank must be at least 1"));
            }
            r
        }
        RankPolicy::LogBase(b) => {
            if !(b > 1.0) || !b.is_finite() {
                return Err(Error::usage(format!("rank log base must exceed 1, got {b}")));
            }
            let r = ((cardinality as f64).ln() / b.ln()).round();
            if r < 1.0 {
                1
            } else {
                r as usize
            }
        }
    };
    Ok(raw.clamp(1, cardinality))
}

/// Parameters of one field: `U` (`rank × d_other`), `V` (`rank × d_field`), `b` (`d_field`).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBlock {
    rank: usize,
    d_other: usize,
    d_field: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub b: Vec<f64>,
}

impl FieldBlock {
    pub fn zeros(rank: usize, d_other: usize, d_field: usize) -> Self {
        FieldBlock {
            rank,
            d_other,
            d_field,
            u: vec![0.0; rank * d_other],
            v: vec![0.0; rank * d_field],
            b: vec![0.0; d_field],
        }
    }

    pub fn zeros_like(other: &FieldBlock) -> Self {
        Self::zeros(other.rank, other.d_other, other.d_field)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// `d − d_i`: number of columns of `U`.
    pub fn d_other(&self) -> usize {
        self.d_other
    }

    /// `d_i`: number of columns of `V`.
    pub fn d_field(&self) -> usize {
        self.d_field
    }

    #[inline]
    pub fn u_col(&self, p: usize) -> &[f64] {
        &self.u[p * self.rank..(p + 1) * self.rank]
    }

    #[inline]
    pub fn u_col_mut(&mut self, p: usize) -> &mut [f64] {
        &mut self.u[p * self.rank..(p + 1) * self.rank]
    }

    #[inline]
    pub fn v_col(&self, k: usize) -> &[f64] {
        &self.v[k * self.rank..(k + 1) * self.rank]
    }

    #[inline]
    pub fn v_col_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.v[k * self.rank..(k + 1) * self.rank]
    }

    /// Row-major element access `U[a, p]`.
    pub fn u_at(&self, a: usize, p: usize) -> f64 {
        self.u[p * self.rank + a]
    }

    pub fn v_at(&self, a: usize, k: usize) -> f64 {
        self.v[k * self.rank + a]
    }

    pub fn num_params(&self) -> usize {
        self.u.len() + self.v.len() + self.b.len()
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).chain(&self.b).all(|x| x.is_finite())
    }

    /// `V̄`: mean column of `V`.
    pub fn v_mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.rank];
        for k in 0..self.d_field {
            for (m, x) in mean.iter_mut().zip(self.v_col(k)) {
                *m += x;
            }
        }
        let inv = 1.0 / self.d_field as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        mean
    }

    pub fn b_mean(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.d_field as f64
    }

    /// `U Uᵀ`, row-major `rank × rank`.
    pub fn u_gram(&self) -> Vec<f64> {
        let r = self.rank;
        let mut c = vec![0.0; r * r];
        for p in 0..self.d_other {
            let col = self.u_col(p);
            for a in 0..r {
                let ua = col[a];
                for b in a..r {
                    c[a * r + b] += ua * col[b];
                }
            }
        }
        for a in 0..r {
            for b in 0..a {
                c[a * r + b] = c[b * r + a];
            }
        }
        c
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `xᵀ C x` for a row-major square `C`.
fn quad_form(c: &[f64], x: &[f64]) -> f64 {
    let r = x.len();
    let mut acc = 0.0;
    for a in 0..r {
        acc += x[a] * dot(&c[a * r..(a + 1) * r], x);
    }
    acc
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldNorms {
    /// `‖W_b − w̄_b 1ᵀ‖_F`
    pub variance_norm: f64,
    /// `‖w̄_b‖_F`
    pub mean_norm: f64,
}

/// Row-major dense matrix, used only by analysis and test paths.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldWiseModel {
    cardinalities: Vec<usize>,
    blocks: Vec<FieldBlock>,
    /// `positions[i][j]`: first column of field `j` inside `x⁽⁻ⁱ⁾` (unused when `i == j`).
    positions: Vec<Vec<usize>>,
}

impl FieldWiseModel {
    /// All-zero model with explicit per-field ranks.
    pub fn zeros(cardinalities: &[usize], ranks: &[usize]) -> Result<Self> {
        if cardinalities.is_empty() {
            return Err(Error::data("model needs at least one field"));
        }
        if cardinalities.len() != ranks.len() {
            return Err(Error::data("one rank per field is required"));
        }
        if let Some(i) = cardinalities.iter().position(|&d| d == 0) {
            return Err(Error::data(format!("field {i} has cardinality 0")));
        }
        let d: usize = cardinalities.iter().sum();
        let blocks = cardinalities
            .iter()
            .zip(ranks)
            .map(|(&di, &r)| FieldBlock::zeros(r, d - di, di))
            .collect();
        Ok(FieldWiseModel {
            cardinalities: cardinalities.to_vec(),
            blocks,
            positions: column_positions(cardinalities),
        })
    }

    /// Factors drawn i.i.d. uniform in `±init_scale/√r_i`, biases zero.
    pub fn init(cardinalities: &[usize], policy: RankPolicy, init_scale: f64, seed: u64) -> Result<Self> {
        if !(init_scale > 0.0) || !init_scale.is_finite() {
            return Err(Error::usage("init_scale must be positive"));
        }
        let ranks = cardinalities
            .iter()
            .map(|&d| rank_for_field(d, policy))
            .collect::<Result<Vec<_>>>()?;
        let mut model = Self::zeros(cardinalities, &ranks)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for block in &mut model.blocks {
            if block.rank == 0 {
                continue;
            }
            let bound = init_scale / (block.rank as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            for x in block.u.iter_mut().chain(block.v.iter_mut()) {
                *x = dist.sample(&mut rng);
            }
        }
        Ok(model)
    }

    pub fn m(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn d(&self) -> usize {
        self.cardinalities.iter().sum()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.blocks.iter().map(FieldBlock::rank).collect()
    }

    pub fn block(&self, i: usize) -> &FieldBlock {
        &self.blocks[i]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut FieldBlock {
        &mut self.blocks[i]
    }

    pub fn blocks(&self) -> &[FieldBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [FieldBlock] {
        &mut self.blocks
    }

    /// Column of feature `(j, k)` inside `x⁽⁻ⁱ⁾`.
    #[inline]
    pub fn column_position(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert_ne!(i, j);
        self.positions[i][j] + k
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(FieldBlock::num_params).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(FieldBlock::is_finite)
    }

    /// Decision score `ŷ = Σᵢ [ b⁽ⁱ⁾_{kᵢ} + Σ_{j≠i} ⟨U⁽ⁱ⁾[:, pos(j, kⱼ)], V⁽ⁱ⁾[:, kᵢ]⟩ ]`.
    pub fn predict_score(&self, active: &[u32]) -> f64 {
        debug_assert_eq!(active.len(), self.m());
        let mut score = 0.0;
        for (i, block) in self.blocks.iter().enumerate() {
            let k = active[i] as usize;
            score += block.b[k];
            if block.rank == 0 {
                continue;
            }
            let v = block.v_col(k);
            for (j, &kj) in active.iter().enumerate() {
                if j != i {
                    score += dot(block.u_col(self.positions[i][j] + kj as usize), v);
                }
            }
        }
        score
    }

    pub fn predict(&self, inst: &EncodedInstance) -> f64 {
        self.predict_score(&inst.active)
    }

    /// Dense `W_b⁽ⁱ⁾ = [Uᵀ V; bᵀ]` of shape `(d − d_i + 1) × d_i`.
    pub fn materialize_weights(&self, i: usize, budget: usize) -> Result<DenseMatrix> {
        let block = &self.blocks[i];
        let rows = block.d_other + 1;
        let elements = rows * block.d_field;
        if elements > budget {
            return Err(Error::Budget { elements, budget });
        }
        let mut w = DenseMatrix::zeros(rows, block.d_field);
        for p in 0..block.d_other {
            let u = block.u_col(p);
            for k in 0..block.d_field {
                w.set(p, k, dot(u, block.v_col(k)));
            }
        }
        for k in 0..block.d_field {
            w.set(block.d_other, k, block.b[k]);
        }
        Ok(w)
    }

    /// Norms of `W_b⁽ⁱ⁾` computed from the factors through `C = U Uᵀ`, never
    /// forming the dense matrix.
    pub fn field_norms(&self, i: usize) -> FieldNorms {
        let block = &self.blocks[i];
        let b_mean = block.b_mean();
        let b_var: f64 = block.b.iter().map(|b| (b - b_mean).powi(2)).sum();
        let (w_var, w_mean) = if block.rank == 0 {
            (0.0, 0.0)
        } else {
            let c = block.u_gram();
            let v_mean = block.v_mean();
            let mut diff = vec![0.0; block.rank];
            let mut var = 0.0;
            for k in 0..block.d_field {
                for ((d, v), m) in diff.iter_mut().zip(block.v_col(k)).zip(&v_mean) {
                    *d = v - m;
                }
                var += quad_form(&c, &diff);
            }
            (var, quad_form(&c, &v_mean))
        };
        FieldNorms {
            variance_norm: (w_var + b_var).max(0.0).sqrt(),
            mean_norm: (w_mean + b_mean * b_mean).max(0.0).sqrt(),
        }
    }

    pub fn all_field_norms(&self) -> Vec<FieldNorms> {
        (0..self.m()).map(|i| self.field_norms(i)).collect()
    }

    /// Regularizer `Σᵢ (N₁ᵢ² + N₂ᵢ²)`.
    pub fn regularizer(&self) -> f64 {
        self.all_field_norms()
            .iter()
            .map(|n| n.variance_norm.powi(2) + n.mean_norm.powi(2))
            .sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W, vocab_ref: &str) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&(self.m() as u64).to_le_bytes())?;
        w.write_all(&(self.d() as u64).to_le_bytes())?;
        for block in &self.blocks {
            w.write_all(&(block.d_field as u64).to_le_bytes())?;
            w.write_all(&(block.rank as u64).to_le_bytes())?;
            for a in 0..block.rank {
                for p in 0..block.d_other {
                    w.write_all(&block.u_at(a, p).to_le_bytes())?;
                }
            }
            for a in 0..block.rank {
                for k in 0..block.d_field {
                    w.write_all(&block.v_at(a, k).to_le_bytes())?;
                }
            }
            for x in &block.b {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.write_all(&(vocab_ref.len() as u64).to_le_bytes())?;
        w.write_all(vocab_ref.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Reads a model and the vocabulary sidecar reference stored after it.
    pub fn read_from<R: Read>(mut r: R) -> Result<(Self, String)> {
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("missing FWMODEL header".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let m = read_u64(&mut r)? as usize;
        let d = read_u64(&mut r)? as usize;
        if m == 0 || m > d {
            return Err(Error::Format(format!("implausible shape m={m} d={d}")));
        }
        let mut cards = Vec::with_capacity(m);
        let mut blocks = Vec::with_capacity(m);
        for i in 0..m {
            let d_field = read_u64(&mut r)? as usize;
            let rank = read_u64(&mut r)? as usize;
            if d_field == 0 || d_field > d || rank > d_field {
                return Err(Error::Format(format!("field {i}: bad shape d_i={d_field} r_i={rank}")));
            }
            let mut block = FieldBlock::zeros(rank, d - d_field, d_field);
            for a in 0..rank {
                for p in 0..block.d_other {
                    block.u[p * rank + a] = read_f64(&mut r)?;
                }
            }
            for a in 0..rank {
                for k in 0..d_field {
                    block.v[k * rank + a] = read_f64(&mut r)?;
                }
            }
            for x in block.b.iter_mut() {
                *x = read_f64(&mut r)?;
            }
            cards.push(d_field);
            blocks.push(block);
        }
        if cards.iter().sum::<usize>() != d {
            return Err(Error::Format("field cardinalities do not sum to d".into()));
        }
        let len = read_u64(&mut r)? as usize;
        let mut buf = Vec::new();
        r.take(len as u64).read_to_end(&mut buf)?;
        if buf.len() != len {
            return Err(Error::Format("truncated vocabulary reference".into()));
        }
        let vocab_ref =
            String::from_utf8(buf).map_err(|_| Error::Format("vocabulary reference is not UTF-8".into()))?;
        let model = FieldWiseModel {
            positions: column_positions(&cards),
            cardinalities: cards,
            blocks,
        };
        Ok((model, vocab_ref))
    }

    pub fn save(&self, path: impl AsRef<Path>, vocab_ref: &str) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file), vocab_ref)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

pub fn init_model(vocab: &Vocabulary, policy: RankPolicy, init_scale: f64, seed: u64) -> Result<FieldWiseModel> {
    FieldWiseModel::init(&vocab.cardinalities(), policy, init_scale, seed)
}

/// Numerically stable logistic sigmoid.
pub fn predict_proba(score: f64) -> f64 {
    if score >= 0.0 {
        1.0 / (1.0 + (-score).exp())
    } else {
        let e = score.exp();
        e / (1.0 + e)
    }
}

fn column_positions(cardinalities: &[usize]) -> Vec<Vec<usize>> {
    let m = cardinalities.len();
    (0..m)
        .map(|i| {
            let mut acc = 0;
            (0..m)
                .map(|j| {
                    let start = acc;
                    if j != i {
                        acc += cardinalities[j];
                    }
                    start
                })
                .collect()
        })
        .collect()
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated model file: {e}")))
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r)?))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_for_field(8, RankPolicy::LogBase(2.0)).unwrap(), 3);
        assert_eq!(rank_for_field(56354, RankPolicy::LogBase(1.6)).unwrap(), 23);
        assert_eq!(rank_for_field(1, RankPolicy::LogBase(2.0)).unwrap(), 1);
        assert_eq!(rank_for_field(1, RankPolicy::Constant(5)).unwrap(), 1);
        assert_eq!(rank_for_field(3, RankPolicy::Constant(5)).unwrap(), 3);
        assert_eq!(rank_for_field(3, RankPolicy::BiasOnly).unwrap(), 0);
        assert!(rank_for_field(8, RankPolicy::LogBase(1.0)).is_err());
        assert!(rank_for_field(8, RankPolicy::LogBase(0.5)).is_err());
        assert!(rank_for_field(0, RankPolicy::Constant(2)).is_err());
    }

    #[test]
    fn parameter_count() {
        // Σᵢ [rᵢ(d − dᵢ) + rᵢdᵢ + dᵢ] = 20 + 21 + 22
        let model = FieldWiseModel::zeros(&[2, 3, 4], &[2, 2, 2]).unwrap();
        assert_eq!(model.num_params(), 63);
        let allocated: usize = model.blocks().iter().map(|b| b.u.len() + b.v.len() + b.b.len()).sum();
        assert_eq!(allocated, 63);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = FieldWiseModel::init(&[2, 3, 4], RankPolicy::Constant(2), 0.5, 7).unwrap();
        let b = FieldWiseModel::init(&[2, 3, 4], RankPolicy::Constant(2), 0.5, 7).unwrap();
        let c = FieldWiseModel::init(&[2, 3, 4], RankPolicy::Constant(2), 0.5, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 0.5 / 2f64.sqrt();
        for block in a.blocks() {
            assert!(block.u.iter().chain(&block.v).all(|x| x.abs() <= bound));
            assert!(block.b.iter().all(|&x| x == 0.0));
        }
        assert!(FieldWiseModel::init(&[2, 0], RankPolicy::Constant(1), 0.5, 7).is_err());
        assert!(FieldWiseModel::init(&[2, 3], RankPolicy::Constant(1), 0.0, 7).is_err());
    }

    #[test]
    fn tiny_init_predicts_near_zero() {
        let model = FieldWiseModel::init(&[3, 3, 3], RankPolicy::Constant(2), 1e-150, 1).unwrap();
        assert!(model.predict_score(&[0, 1, 2]).abs() < 1e-290);
        let zero = FieldWiseModel::zeros(&[3, 3], &[2, 2]).unwrap();
        assert_eq!(zero.predict_score(&[2, 1]), 0.0);
    }

    #[test]
    fn single_field_uses_bias_only() {
        let mut model = FieldWiseModel::zeros(&[3], &[1]).unwrap();
        assert_eq!(model.block(0).d_other(), 0);
        model.block_mut(0).b.copy_from_slice(&[0.5, -1.5, 2.0]);
        model.block_mut(0).v.copy_from_slice(&[9.0, 9.0, 9.0]);
        assert_eq!(model.predict_score(&[1]), -1.5);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(predict_proba(0.0), 0.5);
        assert!((predict_proba(3f64.ln()) - 0.75).abs() < 1e-15);
        assert_eq!(predict_proba(1e6), 1.0);
        assert_eq!(predict_proba(-1e6), 0.0);
        assert!(predict_proba(-700.0) > 0.0);
    }

    fn hand_model() -> FieldWiseModel {
        let mut model = FieldWiseModel::zeros(&[3, 3], &[2, 2]).unwrap();
        let block = model.block_mut(0);
        // U = [[1,2,3],[4,5,6]], V = [[1,0,-1],[2,1,0]]
        for (p, col) in [[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]].iter().enumerate() {
            block.u_col_mut(p).copy_from_slice(col);
        }
        for (k, col) in [[1.0, 2.0], [0.0, 1.0], [-1.0, 0.0]].iter().enumerate() {
            block.v_col_mut(k).copy_from_slice(col);
        }
        block.b.copy_from_slice(&[0.1, 0.2, 0.3]);
        model
    }

    #[test]
    fn hand_computed_materialization() {
        let w = hand_model().materialize_weights(0, DEFAULT_DENSE_BUDGET).unwrap();
        assert_eq!((w.rows, w.cols), (4, 3));
        let expected = [9.0, 4.0, -1.0, 12.0, 5.0, -2.0, 15.0, 6.0, -3.0, 0.1, 0.2, 0.3];
        assert_eq!(w.data, expected);
        assert!(matches!(
            hand_model().materialize_weights(0, 11),
            Err(Error::Budget {
                elements: 12,
                budget: 11
            })
        ));
        // field 0 picks k=2, field 1 picks k=1 (column 1 of x⁽⁻⁰⁾)
        assert_eq!(hand_model().predict_score(&[2, 1]), -2.0 + 0.3);
    }

    #[test]
    fn zero_u_leaves_only_bias_row() {
        let mut model = FieldWiseModel::init(&[2, 3], RankPolicy::Constant(2), 1.0, 3).unwrap();
        model.block_mut(1).u.iter_mut().for_each(|x| *x = 0.0);
        model.block_mut(1).b.copy_from_slice(&[1.0, 2.0, 3.0]);
        let w = model.materialize_weights(1, DEFAULT_DENSE_BUDGET).unwrap();
        assert!(w.data[..2 * 3].iter().all(|&x| x == 0.0));
        assert_eq!(&w.data[6..], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn rank_one_product_has_vanishing_minors() {
        let model = FieldWiseModel::init(&[4, 5], RankPolicy::Constant(1), 1.0, 11).unwrap();
        let w = model.materialize_weights(1, DEFAULT_DENSE_BUDGET).unwrap();
        for p in 0..4 {
            for q in 0..4 {
                for k in 0..5 {
                    for l in 0..5 {
                        let minor = w.get(p, k) * w.get(q, l) - w.get(p, l) * w.get(q, k);
                        assert!(minor.abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn norms_of_degenerate_blocks() {
        let mut model = FieldWiseModel::init(&[1, 3], RankPolicy::Constant(1), 1.0, 5).unwrap();
        model.block_mut(0).b[0] = -0.7;
        let n = model.field_norms(0);
        assert!(n.variance_norm.abs() < 1e-12);
        let col: f64 = (0..3)
            .map(|p| (model.block(0).u_at(0, p) * model.block(0).v_at(0, 0)).powi(2))
            .sum();
        assert!((n.mean_norm - (col + 0.49).sqrt()).abs() < 1e-12);

        let mut flat = FieldWiseModel::init(&[2, 3], RankPolicy::Constant(2), 1.0, 5).unwrap();
        let block = flat.block_mut(1);
        let first = block.v_col(0).to_vec();
        for k in 1..3 {
            block.v_col_mut(k).copy_from_slice(&first);
        }
        block.b.copy_from_slice(&[0.4; 3]);
        assert!(flat.field_norms(1).variance_norm < 1e-7);
        assert!(flat.field_norms(1).mean_norm > 0.0);
    }

    #[test]
    fn hand_norms() {
        // W_b columns: (9,12,15,0.1), (4,5,6,0.2), (-1,-2,-3,0.3)
        let n = hand_model().field_norms(0);
        let rows = [[9.0, 4.0, -1.0], [12.0, 5.0, -2.0], [15.0, 6.0, -3.0], [0.1, 0.2, 0.3]];
        let (mut var, mut mean) = (0.0, 0.0);
        for r in rows {
            let m = r.iter().sum::<f64>() / 3.0;
            mean += m * m;
            var += r.iter().map(|x| (x - m).powi(2)).sum::<f64>();
        }
        assert!((n.variance_norm - var.sqrt()).abs() < 1e-12);
        assert!((n.mean_norm - mean.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn column_positions_skip_own_field() {
        let model = FieldWiseModel::zeros(&[2, 3, 4], &[1, 1, 1]).unwrap();
        assert_eq!(model.column_position(0, 1, 0), 0);
        assert_eq!(model.column_position(0, 2, 1), 4);
        assert_eq!(model.column_position(1, 0, 1), 1);
        assert_eq!(model.column_position(1, 2, 0), 2);
        assert_eq!(model.column_position(2, 1, 2), 4);
    }

    #[test]
    fn binary_round_trip() {
        let mut model = FieldWiseModel::init(&[2, 3, 1], RankPolicy::Constant(2), 0.3, 9).unwrap();
        model.block_mut(2).b[0] = -1.25;
        let mut bytes = Vec::new();
        model.write_to(&mut bytes, "vocab.txt").unwrap();
        assert_eq!(&bytes[..8], b"FWMODEL\0");
        let (back, reference) = FieldWiseModel::read_from(&bytes[..]).unwrap();
        assert_eq!(back, model);
        assert_eq!(reference, "vocab.txt");
        let mut again = Vec::new();
        back.write_to(&mut again, "vocab.txt").unwrap();
        assert_eq!(again, bytes);

        assert!(FieldWiseModel::read_from(&bytes[..bytes.len() - 3]).is_err());
        assert!(FieldWiseModel::read_from(&bytes[..40]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FieldWiseModel::read_from(&bad[..]), Err(Error::Format(_))));
    }

    fn permuted(model: &FieldWiseModel, perm: &[usize]) -> FieldWiseModel {
        let cards: Vec<usize> = perm.iter().map(|&o| model.cardinalities()[o]).collect();
        let ranks: Vec<usize> = perm.iter().map(|&o| model.block(o).rank()).collect();
        let mut out = FieldWiseModel::zeros(&cards, &ranks).unwrap();
        for (i, &o) in perm.iter().enumerate() {
            let src = model.block(o).clone();
            for (j, &oj) in perm.iter().enumerate() {
                if j == i {
                    continue;
                }
                for k in 0..cards[j] {
                    let to = out.column_position(i, j, k);
                    let from = model.column_position(o, oj, k);
                    out.block_mut(i).u_col_mut(to).copy_from_slice(src.u_col(from));
                }
            }
            out.block_mut(i).v.copy_from_slice(&src.v);
            out.block_mut(i).b.copy_from_slice(&src.b);
        }
        out
    }

    proptest! {
        #[test]
        fn field_permutation_leaves_score_unchanged(
            seed in any::<u64>(),
            raw in prop::collection::vec(0u32..100, 3),
        ) {
            let mut model = FieldWiseModel::init(&[2, 3, 4], RankPolicy::Constant(2), 1.0, seed).unwrap();
            for (i, block) in model.blocks_mut().iter_mut().enumerate() {
                block.b.iter_mut().enumerate().for_each(|(k, b)| *b = 0.1 * (i + k) as f64 - 0.2);
            }
            let active: Vec<u32> = raw.iter().zip(model.cardinalities()).map(|(&x, &d)| x % d as u32).collect();
            let perm = [2usize, 0, 1];
            let p = permuted(&model, &perm);
            let p_active: Vec<u32> = perm.iter().map(|&o| active[o]).collect();
            prop_assert!((model.predict_score(&active) - p.predict_score(&p_active)).abs() < 1e-12);
            for (i, &o) in perm.iter().enumerate() {
                let (a, b) = (model.field_norms(o), p.field_norms(i));
                prop_assert!((a.variance_norm - b.variance_norm).abs() < 1e-12);
                prop_assert!((a.mean_norm - b.mean_norm).abs() < 1e-12);
            }
        }

        #[test]
        fn norms_are_nonnegative(seed in any::<u64>(), r in 1usize..4) {
            let model = FieldWiseModel::init(&[1, 2, 5], RankPolicy::Constant(r), 2.0, seed).unwrap();
            for n in model.all_field_norms() {
                prop_assert!(n.variance_norm >= 0.0 && n.mean_norm >= 0.0);
            }
        }
    }
}
