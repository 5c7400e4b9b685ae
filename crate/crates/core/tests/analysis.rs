mod common;

use fieldwise::analysis::{bound_trend_experiment, field_importance, write_trend_tsv, TrendConfig};
use fieldwise::model::{FieldWiseModel, DEFAULT_DENSE_BUDGET};
use fieldwise::synth::{generate_planted, PlantedSpec};
use fieldwise::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::random_model;

fn variance_norm_dense(w: &[Vec<f64>]) -> f64 {
    let cols = w[0].len() as f64;
    w.iter()
        .map(|row| {
            let mean = row.iter().sum::<f64>() / cols;
            row.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

#[test]
fn importance_ignores_a_shift_shared_by_all_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..50 {
        let cards = [3, 4, 2];
        let model = random_model(&mut rng, &cards, &[2, 2, 2], 1.0);
        let i = rng.gen_range(0..3);
        let w = model.materialize_weights(i, DEFAULT_DENSE_BUDGET).unwrap();
        let shift: Vec<f64> = (0..w.rows).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let shifted: Vec<Vec<f64>> = (0..w.rows)
            .map(|r| (0..w.cols).map(|c| w.get(r, c) + shift[r]).collect())
            .collect();
        let dense_score = variance_norm_dense(&shifted) / cards[i] as f64;
        let score = field_importance(&model, None).score_of(i).unwrap();
        assert!((dense_score - score).abs() <= 1e-10 * score.max(1.0));
    }
}

#[test]
fn field_with_varying_columns_ranks_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let cards = [3, 5, 4];
    let mut model = random_model(&mut rng, &cards, &[2, 2, 2], 1.0);
    for i in [0, 2] {
        let block = model.block_mut(i);
        let first = block.v_col(0).to_vec();
        for k in 1..block.d_field() {
            block.v_col_mut(k).copy_from_slice(&first);
        }
        let b0 = block.b[0];
        block.b.iter_mut().for_each(|b| *b = b0);
    }
    let report = field_importance(&model, None);
    assert_eq!(report.entries[0].field, 1);
    assert!(report.entries[1].score < 1e-7 && report.entries[2].score < 1e-7);
}

fn planted() -> fieldwise::Dataset {
    let spec = PlantedSpec {
        cardinalities: vec![6, 5, 4],
        rank: 2,
        weight_scale: 1.0,
        noise: 0.1,
        seed: 4,
    };
    generate_planted(&spec, 2000).unwrap().data
}

fn trend_cfg(parallel: bool) -> TrendConfig {
    TrendConfig {
        train: TrainConfig {
            batch_size: 64,
            reg_period: 5,
            max_epochs: 5,
            ..TrainConfig::default()
        },
        init_scale: 0.1,
        parallel,
    }
}

#[test]
fn infinite_target_stops_after_one_epoch() {
    let rows = bound_trend_experiment(&planted(), &trend_cfg(false), &[2], f64::INFINITY).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].epochs, 1);
    assert!(rows[0].reached);
}

#[test]
fn unreachable_target_is_flagged() {
    let rows = bound_trend_experiment(&planted(), &trend_cfg(false), &[1, 3], 1e-9).unwrap();
    assert!(rows.iter().all(|r| !r.reached && r.epochs == 5));
    let mut out = Vec::new();
    write_trend_tsv(&rows, &mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("rank\tparams\tnorm_sum\tepochs\ttrain_logloss\tstatus\n"));
    assert_eq!(text.matches("target_not_reached").count(), 2);
}

#[test]
fn trend_is_reproducible_and_parallel_agrees() {
    let data = planted();
    let ranks = [1, 2, 4];
    let a = bound_trend_experiment(&data, &trend_cfg(false), &ranks, 0.6).unwrap();
    let b = bound_trend_experiment(&data, &trend_cfg(false), &ranks, 0.6).unwrap();
    let c = bound_trend_experiment(&data, &trend_cfg(true), &ranks, 0.6).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert!(a.windows(2).all(|w| w[0].num_params < w[1].num_params));
    assert!(a.iter().all(|r| r.norm_sum >= 0.0));
}

#[test]
fn zero_model_has_zero_importance_everywhere() {
    let model = FieldWiseModel::zeros(&[2, 3], &[1, 1]).unwrap();
    assert!(field_importance(&model, None).entries.iter().all(|e| e.score == 0.0));
}
