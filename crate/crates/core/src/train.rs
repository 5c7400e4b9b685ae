//! Mini-batch Adagrad on the mean Logloss plus the variance and mean-norm
//! regularizer `λ Σᵢ (‖W_b⁽ⁱ⁾ − w̄_b⁽ⁱ⁾1ᵀ‖²_F + ‖w̄_b⁽ⁱ⁾‖²_F)`.
//!
//! Loss gradients are sparse: an instance touches one column of `V⁽ⁱ⁾` and `b⁽ⁱ⁾`
//! per field plus the `m − 1` columns of `U⁽ⁱ⁾` at the other active features.
//! Regularizer gradients are dense and are only added every `reg_period` steps.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{Dataset, EncodedInstance};
use crate::metrics::mean_logloss;
use crate::model::{FieldBlock, FieldWiseModel};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of the variance/mean-norm regularizer.
    pub lambda: f64,
    /// Added as `weight_decay · θ` to every touched parameter's gradient.
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Regularizer gradients are applied once every this many steps.
    pub reg_period: usize,
    /// Multiply the periodic regularizer gradient by `reg_period`.
    pub scale_reg_by_period: bool,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            lambda: 1e-5,
            weight_decay: 0.0,
            batch_size: 2048,
            reg_period: 1000,
            scale_reg_by_period: false,
            max_epochs: 20,
            patience: 1,
            seed: 0,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |x: f64| x >= 0.0 && x.is_finite();
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::usage("learning rate must be positive"));
        }
        if !nonneg(self.lambda) || !nonneg(self.weight_decay) {
            return Err(Error::usage("lambda and weight decay must be non-negative"));
        }
        if self.batch_size == 0 || self.reg_period == 0 {
            return Err(Error::usage("batch size and reg period must be at least 1"));
        }
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::usage("max epochs and patience must be at least 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::usage("epsilon must be positive"));
        }
        Ok(())
    }
}

/// `log(1 + exp(−ŷ y))`, stable for large `|ŷ|`.
#[inline]
pub fn logloss(score: f64, y: f64) -> f64 {
    let z = score * y;
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `∂ℓ/∂ŷ = −y / (1 + exp(y ŷ))`.
#[inline]
pub fn loss_slope(score: f64, y: f64) -> f64 {
    let z = score * y;
    if z > 0.0 {
        let e = (-z).exp();
        -y * e / (1.0 + e)
    } else {
        -y / (1.0 + z.exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    U,
    V,
    B,
}

impl Part {
    pub fn as_str(self) -> &'static str {
        match self {
            Part::U => "U",
            Part::V => "V",
            Part::B => "b",
        }
    }
}

/// One sparse gradient entry: a column of `U`/`V` or one bias coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradEntry<'a> {
    pub field: usize,
    pub part: Part,
    pub column: usize,
    pub values: &'a [f64],
}

#[derive(Debug, Clone)]
struct GradBlock {
    values: FieldBlock,
    u_touched: Vec<usize>,
    u_mark: Vec<bool>,
    /// Touched categories; covers both `V` columns and `b` entries.
    k_touched: Vec<usize>,
    k_mark: Vec<bool>,
    dense: bool,
}

impl GradBlock {
    fn new(block: &FieldBlock) -> Self {
        GradBlock {
            values: FieldBlock::zeros_like(block),
            u_touched: Vec::new(),
            u_mark: vec![false; block.d_other()],
            k_touched: Vec::new(),
            k_mark: vec![false; block.d_field()],
            dense: false,
        }
    }

    #[inline]
    fn touch_u(&mut self, p: usize) {
        if !self.u_mark[p] {
            self.u_mark[p] = true;
            self.u_touched.push(p);
        }
    }

    #[inline]
    fn touch_k(&mut self, k: usize) {
        if !self.k_mark[k] {
            self.k_mark[k] = true;
            self.k_touched.push(k);
        }
    }

    fn clear(&mut self) {
        if self.dense {
            self.values.u.iter_mut().for_each(|x| *x = 0.0);
            self.values.v.iter_mut().for_each(|x| *x = 0.0);
            self.values.b.iter_mut().for_each(|x| *x = 0.0);
            self.u_mark.iter_mut().for_each(|x| *x = false);
            self.k_mark.iter_mut().for_each(|x| *x = false);
        } else {
            for &p in &self.u_touched {
                self.values.u_col_mut(p).iter_mut().for_each(|x| *x = 0.0);
                self.u_mark[p] = false;
            }
            for &k in &self.k_touched {
                self.values.v_col_mut(k).iter_mut().for_each(|x| *x = 0.0);
                self.values.b[k] = 0.0;
                self.k_mark[k] = false;
            }
        }
        self.u_touched.clear();
        self.k_touched.clear();
        self.dense = false;
    }

    fn u_columns(&self) -> Vec<usize> {
        if self.dense {
            (0..self.values.d_other()).collect()
        } else {
            self.u_touched.clone()
        }
    }

    fn k_columns(&self) -> Vec<usize> {
        if self.dense {
            (0..self.values.d_field()).collect()
        } else {
            self.k_touched.clone()
        }
    }
}

/// Gradient buffers shaped like the model, with per-field touched-column sets.
#[derive(Debug, Clone)]
pub struct Gradients {
    blocks: Vec<GradBlock>,
}

impl Gradients {
    pub fn new(model: &FieldWiseModel) -> Self {
        Gradients {
            blocks: model.blocks().iter().map(GradBlock::new).collect(),
        }
    }

    pub fn clear(&mut self) {
        self.blocks.iter_mut().for_each(GradBlock::clear);
    }

    /// Touched `U` columns of field `i`, in first-touch order (all columns after a regularizer pass).
    pub fn touched_u(&self, i: usize) -> Vec<usize> {
        self.blocks[i].u_columns()
    }

    /// Touched categories (`V` columns and `b` entries) of field `i`.
    pub fn touched_categories(&self, i: usize) -> Vec<usize> {
        self.blocks[i].k_columns()
    }

    pub fn entries(&self) -> Vec<GradEntry<'_>> {
        let mut out = Vec::new();
        for (field, g) in self.blocks.iter().enumerate() {
            for p in g.u_columns() {
                out.push(GradEntry {
                    field,
                    part: Part::U,
                    column: p,
                    values: g.values.u_col(p),
                });
            }
            for k in g.k_columns() {
                out.push(GradEntry {
                    field,
                    part: Part::V,
                    column: k,
                    values: g.values.v_col(k),
                });
                out.push(GradEntry {
                    field,
                    part: Part::B,
                    column: k,
                    values: std::slice::from_ref(&g.values.b[k]),
                });
            }
        }
        out
    }

    /// Dense copy, one block per field.
    pub fn to_dense(&self) -> Vec<FieldBlock> {
        self.blocks.iter().map(|g| g.values.clone()).collect()
    }
}

/// Adds the batch-mean Logloss gradient into `grads` and returns the batch-mean loss.
pub fn accumulate_loss_gradients(model: &FieldWiseModel, batch: &[&EncodedInstance], grads: &mut Gradients) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let inv_n = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for inst in batch {
        let y = inst.label.sign();
        let score = model.predict_score(&inst.active);
        loss += logloss(score, y);
        let s = loss_slope(score, y) * inv_n;
        for (i, (block, g)) in model.blocks().iter().zip(grads.blocks.iter_mut()).enumerate() {
            let k = inst.active[i] as usize;
            g.touch_k(k);
            g.values.b[k] += s;
            if block.rank() == 0 {
                continue;
            }
            let v = block.v_col(k);
            for (j, &kj) in inst.active.iter().enumerate() {
                if j == i {
                    continue;
                }
                let p = model.column_position(i, j, kj as usize);
                g.touch_u(p);
                for (gu, vv) in g.values.u_col_mut(p).iter_mut().zip(v) {
                    *gu += s * vv;
                }
                let u = block.u_col(p);
                for (gv, uu) in g.values.v_col_mut(k).iter_mut().zip(u) {
                    *gv += s * uu;
                }
            }
        }
    }
    loss * inv_n
}

/// Sparse gradient of the batch-mean Logloss, with the batch-mean loss.
pub fn loss_gradients(model: &FieldWiseModel, batch: &[&EncodedInstance]) -> (Gradients, f64) {
    let mut grads = Gradients::new(model);
    let loss = accumulate_loss_gradients(model, batch, &mut grads);
    (grads, loss)
}

fn mat_vec(c: &[f64], x: &[f64], out: &mut [f64]) {
    let r = x.len();
    for a in 0..r {
        out[a] = c[a * r..(a + 1) * r].iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

/// Adds `scale · (∂R₁ + ∂R₂)` for every field into `grads`, marking all columns touched.
pub fn accumulate_reg_gradients(model: &FieldWiseModel, scale: f64, grads: &mut Gradients) {
    for (block, g) in model.blocks().iter().zip(grads.blocks.iter_mut()) {
        g.dense = true;
        let r = block.rank();
        let d_i = block.d_field();
        let inv_d = 1.0 / d_i as f64;

        // Bias: ∂R₁/∂b = 2 b_diff, ∂R₂/∂b = 2 b̄ / d_i.
        let b_mean = block.b_mean();
        for (gb, b) in g.values.b.iter_mut().zip(&block.b) {
            *gb += scale * (2.0 * (b - b_mean) + 2.0 * b_mean * inv_d);
        }
        if r == 0 {
            continue;
        }

        let v_mean = block.v_mean();
        // S = (V − V̄)(V − V̄)ᵀ + V̄V̄ᵀ, so ∂(R₁+R₂)/∂U = 2 S U.
        let mut s = vec![0.0; r * r];
        let mut diff = vec![0.0; r];
        for k in 0..d_i {
            for ((d, v), m) in diff.iter_mut().zip(block.v_col(k)).zip(&v_mean) {
                *d = v - m;
            }
            for a in 0..r {
                for b in 0..r {
                    s[a * r + b] += diff[a] * diff[b];
                }
            }
        }
        for a in 0..r {
            for b in 0..r {
                s[a * r + b] += v_mean[a] * v_mean[b];
            }
        }
        let mut tmp = vec![0.0; r];
        for p in 0..block.d_other() {
            mat_vec(&s, block.u_col(p), &mut tmp);
            for (gu, t) in g.values.u_col_mut(p).iter_mut().zip(&tmp) {
                *gu += scale * 2.0 * t;
            }
        }

        // K = C (V − V̄) with C = U Uᵀ; ∂R₁/∂V = 2(K − K̄), ∂R₂/∂V = (2/d_i) C V̄ 1ᵀ.
        let c = block.u_gram();
        let mut k_cols = vec![0.0; r * d_i];
        let mut k_mean = vec![0.0; r];
        for k in 0..d_i {
            for ((d, v), m) in diff.iter_mut().zip(block.v_col(k)).zip(&v_mean) {
                *d = v - m;
            }
            mat_vec(&c, &diff, &mut k_cols[k * r..(k + 1) * r]);
            for (km, x) in k_mean.iter_mut().zip(&k_cols[k * r..(k + 1) * r]) {
                *km += x * inv_d;
            }
        }
        let mut k_vec = vec![0.0; r];
        mat_vec(&c, &v_mean, &mut k_vec);
        for k in 0..d_i {
            let kc = &k_cols[k * r..(k + 1) * r];
            for (a, gv) in g.values.v_col_mut(k).iter_mut().enumerate() {
                *gv += scale * (2.0 * (kc[a] - k_mean[a]) + 2.0 * inv_d * k_vec[a]);
            }
        }
    }
}

/// Dense gradient of `λ Σᵢ (R₁⁽ⁱ⁾ + R₂⁽ⁱ⁾)`.
pub fn reg_gradients(model: &FieldWiseModel, lambda: f64) -> Gradients {
    let mut grads = Gradients::new(model);
    accumulate_reg_gradients(model, lambda, &mut grads);
    grads
}

/// Per-parameter squared-gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdagradState {
    accum: Vec<FieldBlock>,
    pub epsilon: f64,
}

impl AdagradState {
    pub fn new(model: &FieldWiseModel, epsilon: f64) -> Self {
        AdagradState {
            accum: model.blocks().iter().map(FieldBlock::zeros_like).collect(),
            epsilon,
        }
    }

    pub fn accumulators(&self) -> &[FieldBlock] {
        &self.accum
    }
}

#[inline]
fn adagrad_update(theta: &mut f64, acc: &mut f64, g: f64, lr: f64, wd: f64, eps: f64) {
    let g = g + wd * *theta;
    *acc += g * g;
    *theta -= lr * g / (acc.sqrt() + eps);
}

/// Applies one Adagrad update to every touched parameter; untouched ones are left alone.
pub fn adagrad_step(
    state: &mut AdagradState,
    model: &mut FieldWiseModel,
    grads: &Gradients,
    learning_rate: f64,
    weight_decay: f64,
) -> Result<()> {
    for (i, g) in grads.blocks.iter().enumerate() {
        for p in g.u_columns() {
            if !g.values.u_col(p).iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteGradient { field: i, part: "U" });
            }
        }
        for k in g.k_columns() {
            if !g.values.v_col(k).iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteGradient { field: i, part: "V" });
            }
            if !g.values.b[k].is_finite() {
                return Err(Error::NonFiniteGradient { field: i, part: "b" });
            }
        }
    }

    let eps = state.epsilon;
    for ((g, block), acc) in grads.blocks.iter().zip(model.blocks_mut()).zip(state.accum.iter_mut()) {
        for p in g.u_columns() {
            let gu = g.values.u_col(p);
            let theta = block.u_col_mut(p);
            let a = acc.u_col_mut(p);
            for ((t, a), &x) in theta.iter_mut().zip(a).zip(gu) {
                adagrad_update(t, a, x, learning_rate, weight_decay, eps);
            }
        }
        for k in g.k_columns() {
            let gv = g.values.v_col(k);
            let theta = block.v_col_mut(k);
            let a = acc.v_col_mut(k);
            for ((t, a), &x) in theta.iter_mut().zip(a).zip(gv) {
                adagrad_update(t, a, x, learning_rate, weight_decay, eps);
            }
            adagrad_update(
                &mut block.b[k],
                &mut acc.b[k],
                g.values.b[k],
                learning_rate,
                weight_decay,
                eps,
            );
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean Logloss over the epoch's mini-batches, measured before each update.
    pub train_logloss: f64,
    pub val_logloss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainHistory {
    /// One `epoch<TAB>train_logloss<TAB>val_logloss<TAB>seconds` line per epoch.
    /// With `with_time == false` the seconds column is written as `0`.
    pub fn write_tsv<W: Write>(&self, mut w: W, with_time: bool) -> Result<()> {
        for r in &self.epochs {
            let secs = if with_time {
                format!("{:.3}", r.seconds)
            } else {
                "0".to_string()
            };
            writeln!(w, "{}\t{}\t{}\t{}", r.epoch, r.train_logloss, r.val_logloss, secs)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Single-writer optimizer loop over one model.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    model: FieldWiseModel,
    state: AdagradState,
    grads: Gradients,
    steps: u64,
    epochs: usize,
}

impl Trainer {
    pub fn new(model: FieldWiseModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer {
            state: AdagradState::new(&model, cfg.epsilon),
            grads: Gradients::new(&model),
            cfg,
            model,
            steps: 0,
            epochs: 0,
        })
    }

    pub fn model(&self) -> &FieldWiseModel {
        &self.model
    }

    pub fn into_model(self) -> FieldWiseModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn epochs_completed(&self) -> usize {
        self.epochs
    }

    pub fn state(&self) -> &AdagradState {
        &self.state
    }

    /// Gradients of the most recent step.
    pub fn last_gradients(&self) -> &Gradients {
        &self.grads
    }

    /// One optimizer step; returns the batch-mean Logloss before the update.
    pub fn step(&mut self, batch: &[&EncodedInstance]) -> Result<f64> {
        self.grads.clear();
        let loss = accumulate_loss_gradients(&self.model, batch, &mut self.grads);
        self.steps += 1;
        if self.cfg.lambda > 0.0 && self.steps.is_multiple_of(self.cfg.reg_period as u64) {
            let mut scale = self.cfg.lambda;
            if self.cfg.scale_reg_by_period {
                scale *= self.cfg.reg_period as f64;
            }
            accumulate_reg_gradients(&self.model, scale, &mut self.grads);
        }
        adagrad_step(
            &mut self.state,
            &mut self.model,
            &self.grads,
            self.cfg.learning_rate,
            self.cfg.weight_decay,
        )?;
        Ok(loss)
    }

    /// Epoch order: a full permutation drawn from the `(seed, epoch)` stream.
    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    /// Runs one shuffled pass; returns the mean pre-update train Logloss.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<f64> {
        let order = self.epoch_order(data.len(), self.epochs);
        let instances = data.instances();
        let mut batch: Vec<&EncodedInstance> = Vec::with_capacity(self.cfg.batch_size);
        let mut total = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&n| &instances[n]));
            total += self.step(&batch)? * chunk.len() as f64;
        }
        self.epochs += 1;
        Ok(total / data.len() as f64)
    }
}

/// Trains with early stopping on validation Logloss and returns the best model seen.
pub fn train(
    model: FieldWiseModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(FieldWiseModel, TrainHistory)> {
    if train.cardinalities() != model.cardinalities() || val.cardinalities() != model.cardinalities() {
        return Err(Error::data("datasets do not match the model's field cardinalities"));
    }
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, FieldWiseModel)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let last_good = epoch.checked_sub(1).filter(|&e| e > 0);
        let train_loss = trainer.run_epoch(train)?;
        let val_loss = mean_logloss(trainer.model(), val);
        if !train_loss.is_finite() || !val_loss.is_finite() || !trainer.model().is_finite() {
            return Err(Error::Divergence { epoch, last_good });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_logloss: train_loss,
            val_logloss: val_loss,
            seconds: start.elapsed().as_secs_f64(),
        });
        history.stopped_epoch = epoch;

        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, trainer.model().clone()));
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let (_, model) = best.expect("at least one epoch runs");
    Ok((model, history))
}
