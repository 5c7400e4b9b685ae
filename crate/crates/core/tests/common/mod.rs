#![allow(dead_code)]

use fieldwise::ingest::{Dataset, EncodedInstance, Label};
use fieldwise::model::FieldWiseModel;
use rand::Rng;

/// Model with every factor and bias uniform in `±scale`.
pub fn random_model<R: Rng>(rng: &mut R, cards: &[usize], ranks: &[usize], scale: f64) -> FieldWiseModel {
    let mut model = FieldWiseModel::zeros(cards, ranks).unwrap();
    for block in model.blocks_mut() {
        for x in block.u.iter_mut().chain(block.v.iter_mut()).chain(block.b.iter_mut()) {
            *x = rng.gen_range(-scale..=scale);
        }
    }
    model
}

pub fn random_active<R: Rng>(rng: &mut R, cards: &[usize]) -> Vec<u32> {
    cards.iter().map(|&d| rng.gen_range(0..d) as u32).collect()
}

pub fn random_instances<R: Rng>(rng: &mut R, cards: &[usize], n: usize) -> Vec<EncodedInstance> {
    (0..n)
        .map(|_| EncodedInstance {
            active: random_active(rng, cards),
            label: if rng.gen_bool(0.5) {
                Label::Positive
            } else {
                Label::Negative
            },
        })
        .collect()
}

pub fn random_dataset<R: Rng>(rng: &mut R, cards: &[usize], n: usize) -> Dataset {
    Dataset::new(cards.to_vec(), random_instances(rng, cards, n)).unwrap()
}

/// Cardinalities and clamped ranks for a random small model.
pub fn random_shape<R: Rng>(
    rng: &mut R,
    m_range: std::ops::RangeInclusive<usize>,
    d_max: usize,
    r_max: usize,
) -> (Vec<usize>, Vec<usize>) {
    let m = rng.gen_range(m_range);
    let cards: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=d_max)).collect();
    let r = rng.gen_range(1..=r_max);
    let ranks = cards.iter().map(|&d| r.min(d)).collect();
    (cards, ranks)
}
