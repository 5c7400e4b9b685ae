//! The pipeline steps behind each CLI subcommand.
//!
//! Every command reads its inputs from a [`RunConfig`], writes its artifacts
//! under `cfg.out`, and returns what it produced so callers can print or test it.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::analysis::{
    bound_trend_experiment, field_importance, write_trend_tsv, BoundReport, ImportanceReport, TrendConfig, TrendRow,
};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ingest::{build_vocabulary, encode_rows, read_table, split_indices, Dataset, RawRow, Vocabulary};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{init_model, FieldWiseModel};
use crate::synth::{generate_planted, sample_dataset, save_dataset, synthetic_vocabulary, PlantedSpec};
use crate::train::{logloss, train, TrainHistory};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MODEL_FILE: &str = "model.bin";
pub const HISTORY_FILE: &str = "history.tsv";
pub const RESOLVED_FILE: &str = "resolved.conf";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_string(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_resolved(cfg: &RunConfig) -> Result<()> {
    write_string(&cfg.out.join(RESOLVED_FILE), &cfg.dump())
}

/// Vocabulary reference stored in a model file: the bare file name when the
/// vocabulary sits next to the model, so output directories can be moved.
fn vocab_ref(model_path: &Path, vocab_path: &Path) -> String {
    if model_path.parent() == vocab_path.parent() {
        if let Some(name) = vocab_path.file_name() {
            return name.to_string_lossy().into_owned();
        }
    }
    vocab_path.display().to_string()
}

fn resolve_vocab_ref(model_path: &Path, reference: &str) -> PathBuf {
    let p = PathBuf::from(reference);
    if p.is_absolute() {
        return p;
    }
    match model_path.parent() {
        Some(dir) if p.components().count() == 1 => dir.join(p),
        _ => p,
    }
}

/// The vocabulary named in the config, or else the one the model file points at.
fn vocab_for_model(cfg: &RunConfig, model_path: &Path, reference: &str) -> Result<Option<Vocabulary>> {
    if let Some(p) = &cfg.vocab {
        return Vocabulary::load(p).map(Some);
    }
    if reference.is_empty() {
        return Ok(None);
    }
    let p = resolve_vocab_ref(model_path, reference);
    if p.exists() {
        Vocabulary::load(&p).map(Some)
    } else {
        Ok(None)
    }
}

fn read_rows(cfg: &RunConfig) -> Result<(Option<Vec<String>>, Vec<RawRow>)> {
    let table = read_table(cfg.require_data()?, cfg.read_options())?;
    if table.rows.is_empty() {
        return Err(Error::data("input file has no rows"));
    }
    Ok((table.header, table.rows))
}

fn pick(rows: &[RawRow], idx: &[usize]) -> Vec<RawRow> {
    idx.iter().map(|&i| rows[i].clone()).collect()
}

/// Builds the vocabulary over every row of `cfg.data`.
pub fn cmd_vocab(cfg: &RunConfig) -> Result<PathBuf> {
    let (header, rows) = read_rows(cfg)?;
    let specs = cfg.field_specs(header.as_deref(), rows[0].values.len())?;
    let vocab = build_vocabulary(&rows, &specs, &cfg.min_count)?;
    ensure_dir(&cfg.out)?;
    let path = cfg.vocab.clone().unwrap_or_else(|| cfg.out.join(VOCAB_FILE));
    vocab.save(&path)?;
    write_resolved(cfg)?;
    Ok(path)
}

/// Encoded train/validation/test splits of `cfg.data`.
pub struct Splits {
    pub vocab: Vocabulary,
    pub vocab_path: PathBuf,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Splits the raw rows, then encodes them with the configured vocabulary or
/// one fit on the training part alone (saved under `cfg.out`).
pub fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let (header, rows) = read_rows(cfg)?;
    let [tr, va, te] = split_indices(rows.len(), cfg.split, cfg.split_seed())?;
    let (train_rows, val_rows, test_rows) = (pick(&rows, &tr), pick(&rows, &va), pick(&rows, &te));
    ensure_dir(&cfg.out)?;
    let (vocab, vocab_path) = match &cfg.vocab {
        Some(p) => (Vocabulary::load(p)?, p.clone()),
        None => {
            let specs = cfg.field_specs(header.as_deref(), rows[0].values.len())?;
            let vocab = build_vocabulary(&train_rows, &specs, &cfg.min_count)?;
            let path = cfg.out.join(VOCAB_FILE);
            vocab.save(&path)?;
            (vocab, path)
        }
    };
    Ok(Splits {
        train: encode_rows(&train_rows, &vocab)?,
        val: encode_rows(&val_rows, &vocab)?,
        test: encode_rows(&test_rows, &vocab)?,
        vocab,
        vocab_path,
    })
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model_path: PathBuf,
    pub history_path: PathBuf,
    pub history: TrainHistory,
    pub test: EvalReport,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.train.validate()?;
    let policy = cfg.rank_policy()?;
    let splits = load_splits(cfg)?;
    let model = init_model(&splits.vocab, policy, cfg.init_scale, cfg.train.seed)?;
    let (model, history) = train(model, &splits.train, &splits.val, &cfg.train)?;

    let model_path = cfg.model_out.clone().unwrap_or_else(|| cfg.out.join(MODEL_FILE));
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    model.save(&model_path, &vocab_ref(&model_path, &splits.vocab_path))?;
    let history_path = cfg.out.join(HISTORY_FILE);
    history.write_tsv(create(&history_path)?, cfg.timing)?;
    let test = evaluate(&model, &splits.test);
    write_string(&cfg.out.join("test_eval.txt"), &test.key_values())?;
    write_resolved(cfg)?;
    Ok(TrainOutcome {
        model_path,
        history_path,
        history,
        test,
    })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let model_path = cfg.require_model_in()?;
    let (model, reference) = FieldWiseModel::load(model_path)?;
    let vocab =
        vocab_for_model(cfg, model_path, &reference)?.ok_or_else(|| Error::usage("no vocabulary: pass --vocab"))?;
    if vocab.cardinalities() != model.cardinalities() {
        return Err(Error::data("vocabulary does not match the model's field cardinalities"));
    }
    let (_, rows) = read_rows(cfg)?;
    let data = encode_rows(&rows, &vocab)?;
    let report = evaluate(&model, &data);
    ensure_dir(&cfg.out)?;
    write_string(&cfg.out.join("eval.txt"), &report.key_values())?;
    Ok(report)
}

pub struct AnalyzeOutcome {
    pub bound: BoundReport,
    pub importance: ImportanceReport,
}

/// Norms, Rademacher bound and field importance of a saved model.
///
/// With `cfg.data` set, its mean Logloss is taken as the empirical risk and the
/// full bound is added; `n` then defaults to its row count.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalyzeOutcome> {
    let model_path = cfg.require_model_in()?;
    let (model, reference) = FieldWiseModel::load(model_path)?;
    let vocab = vocab_for_model(cfg, model_path, &reference)?;
    let names = vocab.as_ref().map(Vocabulary::names);

    let data = match (&cfg.data, &vocab) {
        (Some(_), Some(v)) => Some(encode_rows(&read_rows(cfg)?.1, v)?),
        (Some(_), None) => return Err(Error::usage("analyzing data needs a vocabulary: pass --vocab")),
        _ => None,
    };
    let n = cfg
        .n
        .or(data.as_ref().map(Dataset::len))
        .ok_or_else(|| Error::usage("missing --n"))?;

    let mut bound = BoundReport::new(&model, n)?;
    if let Some(data) = &data {
        let losses: Vec<f64> = data
            .instances()
            .iter()
            .map(|x| logloss(model.predict(x), x.label.sign()))
            .collect();
        let risk = losses.iter().sum::<f64>() / losses.len() as f64;
        let cap = cfg
            .loss_cap
            .unwrap_or_else(|| losses.iter().copied().fold(0.0, f64::max));
        bound = bound.with_risk(risk, cfg.lipschitz, cap, cfg.delta)?;
    }
    let importance = field_importance(&model, names.as_deref());

    ensure_dir(&cfg.out)?;
    bound.write_kv(create(&cfg.out.join("bound.txt"))?)?;
    let names = names.unwrap_or_else(|| (0..model.m()).map(|i| format!("f{i}")).collect());
    bound.write_norms_tsv(create(&cfg.out.join("norms.tsv"))?, &names)?;
    importance.write_tsv(create(&cfg.out.join("importance.tsv"))?)?;
    Ok(AnalyzeOutcome { bound, importance })
}

/// Trains one model per rank in `cfg.ranks` on the training split of `cfg.data`.
pub fn cmd_trend(cfg: &RunConfig) -> Result<Vec<TrendRow>> {
    let target = cfg.target.ok_or_else(|| Error::usage("missing --target"))?;
    let splits = load_splits(cfg)?;
    let trend = TrendConfig {
        train: cfg.train.clone(),
        init_scale: cfg.init_scale,
        parallel: cfg.parallel,
    };
    let rows = bound_trend_experiment(&splits.train, &trend, &cfg.ranks, target)?;
    write_trend_tsv(&rows, create(&cfg.out.join("trend.tsv"))?)?;
    write_resolved(cfg)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutcome {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    pub model_path: PathBuf,
    pub bayes_logloss: f64,
    pub test_bayes_logloss: f64,
    /// Test AUC of the planted model's own scores.
    pub planted_test_auc: Option<f64>,
}

/// Writes `train.tsv`, `test.tsv`, the planted model, its vocabulary and a summary.
pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthOutcome> {
    let spec = PlantedSpec {
        cardinalities: cfg.cardinalities.clone(),
        rank: cfg.planted_rank,
        weight_scale: cfg.weight_scale,
        noise: cfg.noise,
        seed: cfg.train.seed,
    };
    let planted = generate_planted(&spec, cfg.samples)?;
    let test = sample_dataset(&planted.model, cfg.noise, cfg.test_samples, cfg.train.seed, 2)?;
    let test_bayes = crate::synth::expected_logloss(&planted.model, cfg.noise, &test);
    let planted_auc = evaluate(&planted.model, &test).auc;

    ensure_dir(&cfg.out)?;
    let train_path = cfg.out.join("train.tsv");
    let test_path = cfg.out.join("test.tsv");
    let model_path = cfg.out.join("planted.bin");
    let vocab_path = cfg.out.join(VOCAB_FILE);
    save_dataset(&planted.data, &train_path, cfg.header)?;
    save_dataset(&test, &test_path, cfg.header)?;
    synthetic_vocabulary(&cfg.cardinalities)?.save(&vocab_path)?;
    planted.model.save(&model_path, &vocab_ref(&model_path, &vocab_path))?;
    let summary = format!(
        "bayes_logloss={}\ntest_bayes_logloss={}\nplanted_test_auc={}\n",
        planted.bayes_logloss,
        test_bayes,
        planted_auc.map_or_else(|| "undefined".to_string(), |a| a.to_string()),
    );
    write_string(&cfg.out.join("planted.txt"), &summary)?;
    write_resolved(cfg)?;
    Ok(SynthOutcome {
        train_path,
        test_path,
        model_path,
        bayes_logloss: planted.bayes_logloss,
        test_bayes_logloss: test_bayes,
        planted_test_auc: planted_auc,
    })
}
