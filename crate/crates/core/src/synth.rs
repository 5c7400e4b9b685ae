//! Synthetic multi-field datasets drawn from a planted field-wise model.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{Dataset, EncodedInstance, FieldSpec, Label, Vocabulary};
use crate::model::{predict_proba, FieldWiseModel};

const MODEL_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub cardinalities: Vec<usize>,
    /// Factor rank of every field, clamped to `d_i`; 0 plants biases only.
    pub rank: usize,
    pub weight_scale: f64,
    /// Probability of flipping each drawn label, in `[0, 0.5)`.
    pub noise: f64,
    pub seed: u64,
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.cardinalities.is_empty() || self.cardinalities.contains(&0) {
            return Err(Error::usage("planted cardinalities must all be at least 1"));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::usage("label noise must lie in [0, 0.5)"));
        }
        if !(self.weight_scale >= 0.0) || !self.weight_scale.is_finite() {
            return Err(Error::usage("weight scale must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub data: Dataset,
    pub model: FieldWiseModel,
    /// Expected Logloss of the true conditional label distribution over `data`.
    pub bayes_logloss: f64,
}

/// Builds the ground-truth model.
///
/// Biases are uniform in `±weight_scale`; factor entries are uniform in
/// `±weight_scale / r^{1/4}`, so a single interaction `⟨u, v⟩` has a spread
/// that does not depend on the rank.
pub fn planted_model(spec: &PlantedSpec) -> Result<FieldWiseModel> {
    spec.validate()?;
    let ranks: Vec<usize> = spec.cardinalities.iter().map(|&d| spec.rank.min(d)).collect();
    let mut model = FieldWiseModel::zeros(&spec.cardinalities, &ranks)?;
    if spec.weight_scale == 0.0 {
        return Ok(model);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(MODEL_STREAM);
    let bias = Uniform::new_inclusive(-spec.weight_scale, spec.weight_scale);
    for block in model.blocks_mut() {
        if block.rank() > 0 {
            let a = spec.weight_scale / (block.rank() as f64).powf(0.25);
            let factor = Uniform::new_inclusive(-a, a);
            for x in block.u.iter_mut().chain(block.v.iter_mut()) {
                *x = factor.sample(&mut rng);
            }
        }
        for x in block.b.iter_mut() {
            *x = bias.sample(&mut rng);
        }
    }
    Ok(model)
}

/// Probability of a positive label after flipping with probability `noise`.
pub fn noisy_positive_rate(score: f64, noise: f64) -> f64 {
    let p = predict_proba(score);
    (1.0 - noise) * p + noise * (1.0 - p)
}

fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
    term(p) + term(1.0 - p)
}

/// Mean over `data` of the expected Logloss under the true label distribution.
pub fn expected_logloss(model: &FieldWiseModel, noise: f64, data: &Dataset) -> f64 {
    data.instances()
        .iter()
        .map(|inst| binary_entropy(noisy_positive_rate(model.predict(inst), noise)))
        .sum::<f64>()
        / data.len() as f64
}

/// Draws `n` instances: features uniform per field, labels from the planted model.
pub fn sample_dataset(model: &FieldWiseModel, noise: f64, n: usize, seed: u64, stream: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::usage("cannot sample an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let cards = model.cardinalities();
    let mut instances = Vec::with_capacity(n);
    for _ in 0..n {
        let active: Vec<u32> = cards.iter().map(|&d| rng.gen_range(0..d) as u32).collect();
        let p = predict_proba(model.predict_score(&active));
        let mut positive = rng.gen::<f64>() < p;
        if rng.gen::<f64>() < noise {
            positive = !positive;
        }
        let label = if positive { Label::Positive } else { Label::Negative };
        instances.push(EncodedInstance { active, label });
    }
    Dataset::new(cards.to_vec(), instances)
}

pub fn generate_planted(spec: &PlantedSpec, n: usize) -> Result<Planted> {
    let model = planted_model(spec)?;
    let data = sample_dataset(&model, spec.noise, n, spec.seed, DATA_STREAM)?;
    let bayes_logloss = expected_logloss(&model, spec.noise, &data);
    Ok(Planted {
        data,
        model,
        bayes_logloss,
    })
}

/// Field specs `f0..f{m-1}` and the vocabulary under which the written
/// tokens decode back to the generated indices.
pub fn synthetic_vocabulary(cardinalities: &[usize]) -> Result<Vocabulary> {
    let specs = (0..cardinalities.len())
        .map(|i| FieldSpec::categorical(format!("f{i}")))
        .collect();
    Vocabulary::identity(specs, cardinalities)
}

/// Writes `label<TAB>k_1<TAB>...<TAB>k_m` per instance, with an optional header.
pub fn write_dataset<W: Write>(data: &Dataset, mut w: W, header: bool) -> Result<()> {
    if header {
        write!(w, "label")?;
        for i in 0..data.m() {
            write!(w, "\tf{i}")?;
        }
        writeln!(w)?;
    }
    for inst in data.instances() {
        write!(w, "{}", inst.label.as_str())?;
        for k in &inst.active {
            write!(w, "\t{k}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(data: &Dataset, path: impl AsRef<Path>, header: bool) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(data, BufWriter::new(file), header)
}
