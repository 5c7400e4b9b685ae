//! Generalization-bound quantities, field importance and the rank trend experiment.
//!
//! The Rademacher complexity of the field-wise hypothesis class is bounded by
//! `√(m/n) Σᵢ (N₁ᵢ + N₂ᵢ)`, where `N₁ᵢ` and `N₂ᵢ` are estimated from trained
//! parameters as `‖W_b⁽ⁱ⁾ − w̄_b⁽ⁱ⁾1ᵀ‖_F` and `‖w̄_b⁽ⁱ⁾‖_F`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::model::{FieldNorms, FieldWiseModel, RankPolicy};
use crate::train::{TrainConfig, Trainer};

pub fn rademacher_from_norms(norms: &[FieldNorms], n: usize) -> f64 {
    let sum: f64 = norms.iter().map(|x| x.variance_norm + x.mean_norm).sum();
    (norms.len() as f64 / n as f64).sqrt() * sum
}

pub fn rademacher_bound(model: &FieldWiseModel, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::usage("sample size must be at least 1"));
    }
    Ok(rademacher_from_norms(&model.all_field_norms(), n))
}

/// `R̂ + 2 L ℜ̂ + 3 c √(ln(2/δ) / 2n)`.
pub fn generalization_bound(
    empirical_risk: f64,
    rademacher: f64,
    lipschitz: f64,
    loss_cap: f64,
    delta: f64,
    n: usize,
) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::usage(format!(
            "confidence delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(loss_cap > 0.0) {
        return Err(Error::usage("loss cap c must be positive"));
    }
    if n == 0 {
        return Err(Error::usage("sample size must be at least 1"));
    }
    let confidence = ((2.0 / delta).ln() / (2.0 * n as f64)).sqrt();
    Ok(empirical_risk + 2.0 * lipschitz * rademacher + 3.0 * loss_cap * confidence)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskTerms {
    pub empirical_risk: f64,
    pub lipschitz: f64,
    pub loss_cap: f64,
    pub delta: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub m: usize,
    pub n: usize,
    pub num_params: usize,
    pub norms: Vec<FieldNorms>,
    pub rademacher_bound: f64,
    pub risk: Option<RiskTerms>,
}

impl BoundReport {
    pub fn new(model: &FieldWiseModel, n: usize) -> Result<Self> {
        let norms = model.all_field_norms();
        Ok(BoundReport {
            m: model.m(),
            n,
            num_params: model.num_params(),
            rademacher_bound: rademacher_bound(model, n)?,
            norms,
            risk: None,
        })
    }

    pub fn norm_sum(&self) -> f64 {
        self.norms.iter().map(|x| x.variance_norm + x.mean_norm).sum()
    }

    /// Adds the full generalization bound for the given empirical risk.
    pub fn with_risk(mut self, empirical_risk: f64, lipschitz: f64, loss_cap: f64, delta: f64) -> Result<Self> {
        let bound = generalization_bound(
            empirical_risk,
            self.rademacher_bound,
            lipschitz,
            loss_cap,
            delta,
            self.n,
        )?;
        self.risk = Some(RiskTerms {
            empirical_risk,
            lipschitz,
            loss_cap,
            delta,
            bound,
        });
        Ok(self)
    }

    pub fn write_kv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "m={}", self.m)?;
        writeln!(w, "n={}", self.n)?;
        writeln!(w, "params={}", self.num_params)?;
        writeln!(w, "norm_sum={}", self.norm_sum())?;
        writeln!(w, "rademacher_bound={}", self.rademacher_bound)?;
        if let Some(r) = &self.risk {
            writeln!(w, "empirical_risk={}", r.empirical_risk)?;
            writeln!(w, "lipschitz={}", r.lipschitz)?;
            writeln!(w, "loss_cap={}", r.loss_cap)?;
            writeln!(w, "delta={}", r.delta)?;
            writeln!(w, "generalization_bound={}", r.bound)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_norms_tsv<W: Write>(&self, mut w: W, names: &[String]) -> Result<()> {
        writeln!(w, "field\tname\tn1\tn2")?;
        for (i, n) in self.norms.iter().enumerate() {
            let name = names.get(i).map_or("", String::as_str);
            writeln!(w, "{i}\t{name}\t{}\t{}", n.variance_norm, n.mean_norm)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldImportance {
    pub field: usize,
    pub name: String,
    pub score: f64,
}

/// Fields ordered by `‖W_b⁽ⁱ⁾ − w̄_b⁽ⁱ⁾1ᵀ‖_F / d_i`, largest first.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceReport {
    pub entries: Vec<FieldImportance>,
}

impl ImportanceReport {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "rank\tfield\tname\timportance")?;
        for (r, e) in self.entries.iter().enumerate() {
            writeln!(w, "{}\t{}\t{}\t{}", r + 1, e.field, e.name, e.score)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Score of field `i` regardless of its position.
    pub fn score_of(&self, i: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.field == i).map(|e| e.score)
    }
}

pub fn field_importance(model: &FieldWiseModel, names: Option<&[String]>) -> ImportanceReport {
    let mut entries: Vec<FieldImportance> = (0..model.m())
        .map(|i| FieldImportance {
            field: i,
            name: names.and_then(|n| n.get(i).cloned()).unwrap_or_else(|| format!("f{i}")),
            score: model.field_norms(i).variance_norm / model.cardinalities()[i] as f64,
        })
        .collect();
    // stable: ties keep field order
    entries.sort_by(|a, b| b.score.total_cmp(&a.score));
    ImportanceReport { entries }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendRow {
    pub rank: usize,
    pub num_params: usize,
    /// `Σᵢ (N₁ᵢ + N₂ᵢ)` of the trained model.
    pub norm_sum: f64,
    pub epochs: usize,
    pub train_logloss: f64,
    pub reached: bool,
}

impl TrendRow {
    pub fn status(&self) -> &'static str {
        if self.reached {
            "reached"
        } else {
            "target_not_reached"
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendConfig {
    pub train: TrainConfig,
    pub init_scale: f64,
    /// Train each rank on its own thread.
    pub parallel: bool,
}

fn trend_row(data: &Dataset, cfg: &TrendConfig, rank: usize, target: f64) -> Result<TrendRow> {
    let model = FieldWiseModel::init(
        data.cardinalities(),
        RankPolicy::Constant(rank),
        cfg.init_scale,
        cfg.train.seed,
    )?;
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let mut loss = f64::INFINITY;
    let mut reached = false;
    while trainer.epochs_completed() < cfg.train.max_epochs {
        loss = trainer.run_epoch(data)?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch: trainer.epochs_completed(),
                last_good: trainer.epochs_completed().checked_sub(1).filter(|&e| e > 0),
            });
        }
        if loss <= target {
            reached = true;
            break;
        }
    }
    let model = trainer.model();
    let norm_sum = model
        .all_field_norms()
        .iter()
        .map(|x| x.variance_norm + x.mean_norm)
        .sum();
    Ok(TrendRow {
        rank,
        num_params: model.num_params(),
        norm_sum,
        epochs: trainer.epochs_completed(),
        train_logloss: loss,
        reached,
    })
}

/// Trains one model per rank until its epoch train Logloss is at most `target`
/// (or `max_epochs` runs out) and records `Σᵢ (N₁ᵢ + N₂ᵢ)` against the parameter count.
pub fn bound_trend_experiment(
    data: &Dataset,
    cfg: &TrendConfig,
    ranks: &[usize],
    target: f64,
) -> Result<Vec<TrendRow>> {
    if ranks.is_empty() {
        return Err(Error::usage("rank list is empty"));
    }
    if ranks.contains(&0) {
        return Err(Error::usage("trend ranks must be at least 1"));
    }
    cfg.train.validate()?;
    if !cfg.parallel {
        return ranks.iter().map(|&r| trend_row(data, cfg, r, target)).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = ranks
            .iter()
            .map(|&r| s.spawn(move || trend_row(data, cfg, r, target)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("trend worker panicked"))
            .collect()
    })
}

pub fn write_trend_tsv<W: Write>(rows: &[TrendRow], mut w: W) -> Result<()> {
    writeln!(w, "rank\tparams\tnorm_sum\tepochs\ttrain_logloss\tstatus")?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.rank,
            r.num_params,
            r.norm_sum,
            r.epochs,
            r.train_logloss,
            r.status()
        )?;
    }
    w.flush()?;
    Ok(())
}
