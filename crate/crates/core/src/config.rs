//! Flat `key = value` run configuration shared by every CLI command.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ingest::{FieldKind, FieldSpec, ReadOptions};
use crate::model::RankPolicy;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub model_in: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub out: PathBuf,
    pub delimiter: u8,
    pub header: bool,
    /// Names (or 0-based indices) of fields holding numeric values.
    pub numeric: Vec<String>,
    /// Constant rank; 0 selects the bias-only model.
    pub rank: usize,
    /// When set, overrides `rank` with `round(log_b d_i)`.
    pub rank_log_base: Option<f64>,
    pub init_scale: f64,
    pub min_count: Vec<usize>,
    pub split: [f64; 3],
    pub split_seed: Option<u64>,
    /// Record wall-clock seconds in the history file.
    pub timing: bool,
    pub n: Option<usize>,
    pub delta: f64,
    pub lipschitz: f64,
    pub loss_cap: Option<f64>,
    pub ranks: Vec<usize>,
    pub target: Option<f64>,
    pub parallel: bool,
    pub cardinalities: Vec<usize>,
    pub planted_rank: usize,
    pub weight_scale: f64,
    pub noise: f64,
    pub samples: usize,
    pub test_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            data: None,
            vocab: None,
            model_in: None,
            model_out: None,
            out: PathBuf::from("."),
            delimiter: b'\t',
            header: false,
            numeric: Vec::new(),
            rank: 4,
            rank_log_base: None,
            init_scale: 0.01,
            min_count: vec![1],
            split: [0.8, 0.1, 0.1],
            split_seed: None,
            timing: false,
            n: None,
            delta: 0.05,
            lipschitz: 1.0,
            loss_cap: None,
            ranks: vec![1, 2, 4, 8],
            target: None,
            parallel: false,
            cardinalities: vec![20; 5],
            planted_rank: 3,
            weight_scale: 1.0,
            noise: 0.1,
            samples: 50_000,
            test_samples: 5_000,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::usage(format!("bad value for `{key}`: `{value}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let value = value.trim();
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|x| parse(key, x)).collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::usage(format!("bad boolean for `{key}`: `{value}`"))),
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(x: &Option<T>) -> String {
    x.as_ref().map_or_else(String::new, T::to_string)
}

fn opt_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

fn opt_from<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.trim().is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn path_from(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "lr" | "learning_rate" => t.learning_rate = parse(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "reg_period" => t.reg_period = parse(key, value)?,
            "scale_reg_by_period" => t.scale_reg_by_period = parse_bool(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "epsilon" => t.epsilon = parse(key, value)?,
            "data" => self.data = path_from(value),
            "vocab" => self.vocab = path_from(value),
            "model_in" => self.model_in = path_from(value),
            "model_out" => self.model_out = path_from(value),
            "out" => self.out = path_from(value).ok_or_else(|| Error::usage("`out` must not be empty"))?,
            "delimiter" => {
                self.delimiter = match value {
                    "tab" | "\\t" | "\t" => b'\t',
                    "comma" | "," => b',',
                    s if s.len() == 1 => s.as_bytes()[0],
                    _ => return Err(Error::usage(format!("bad delimiter `{value}`"))),
                }
            }
            "header" => self.header = parse_bool(key, value)?,
            "numeric" => self.numeric = parse_list(key, value)?,
            "rank" => self.rank = parse(key, value)?,
            "rank_log_base" => self.rank_log_base = opt_from(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "min_count" => self.min_count = parse_list(key, value)?,
            "split" => {
                let v: Vec<f64> = parse_list(key, value)?;
                self.split = v
                    .try_into()
                    .map_err(|_| Error::usage("split needs exactly three ratios"))?;
            }
            "split_seed" => self.split_seed = opt_from(key, value)?,
            "timing" => self.timing = parse_bool(key, value)?,
            "n" => self.n = opt_from(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "lipschitz" => self.lipschitz = parse(key, value)?,
            "loss_cap" => self.loss_cap = opt_from(key, value)?,
            "ranks" => self.ranks = parse_list(key, value)?,
            "target" => self.target = opt_from(key, value)?,
            "parallel" => self.parallel = parse_bool(key, value)?,
            "cardinalities" => self.cardinalities = parse_list(key, value)?,
            "planted_rank" => self.planted_rank = parse(key, value)?,
            "weight_scale" => self.weight_scale = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "test_samples" => self.test_samples = parse(key, value)?,
            _ => return Err(Error::usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::usage(format!("config line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Every key with its effective value, in a fixed order; feeds back into [`RunConfig::apply_text`].
    pub fn dump(&self) -> String {
        let t = &self.train;
        let delimiter = match self.delimiter {
            b'\t' => "tab".to_string(),
            b',' => "comma".to_string(),
            c => (c as char).to_string(),
        };
        let pairs: Vec<(&str, String)> = vec![
            ("data", opt_path(&self.data)),
            ("vocab", opt_path(&self.vocab)),
            ("model_in", opt_path(&self.model_in)),
            ("model_out", opt_path(&self.model_out)),
            ("out", self.out.display().to_string()),
            ("delimiter", delimiter),
            ("header", self.header.to_string()),
            ("numeric", self.numeric.join(",")),
            ("lr", t.learning_rate.to_string()),
            ("lambda", t.lambda.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("reg_period", t.reg_period.to_string()),
            ("scale_reg_by_period", t.scale_reg_by_period.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("patience", t.patience.to_string()),
            ("seed", t.seed.to_string()),
            ("epsilon", t.epsilon.to_string()),
            ("rank", self.rank.to_string()),
            ("rank_log_base", opt(&self.rank_log_base)),
            ("init_scale", self.init_scale.to_string()),
            ("min_count", join(&self.min_count)),
            ("split", join(&self.split)),
            ("split_seed", opt(&self.split_seed)),
            ("timing", self.timing.to_string()),
            ("n", opt(&self.n)),
            ("delta", self.delta.to_string()),
            ("lipschitz", self.lipschitz.to_string()),
            ("loss_cap", opt(&self.loss_cap)),
            ("ranks", join(&self.ranks)),
            ("target", opt(&self.target)),
            ("parallel", self.parallel.to_string()),
            ("cardinalities", join(&self.cardinalities)),
            ("planted_rank", self.planted_rank.to_string()),
            ("weight_scale", self.weight_scale.to_string()),
            ("noise", self.noise.to_string()),
            ("samples", self.samples.to_string()),
            ("test_samples", self.test_samples.to_string()),
        ];
        let mut s = String::new();
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn rank_policy(&self) -> Result<RankPolicy> {
        match self.rank_log_base {
            Some(b) if !(b > 1.0) => Err(Error::usage(format!("rank log base must exceed 1, got {b}"))),
            Some(b) => Ok(RankPolicy::LogBase(b)),
            None if self.rank == 0 => Ok(RankPolicy::BiasOnly),
            None => Ok(RankPolicy::Constant(self.rank)),
        }
    }

    pub fn read_options(&self) -> ReadOptions {
        ReadOptions {
            delimiter: self.delimiter,
            has_header: self.header,
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.train.seed)
    }

    /// Field specs for `m` fields named by `header` (or `f0..`), with kinds from `numeric`.
    pub fn field_specs(&self, header: Option<&[String]>, m: usize) -> Result<Vec<FieldSpec>> {
        let names: Vec<String> = match header {
            Some(h) => h.to_vec(),
            None => (0..m).map(|i| format!("f{i}")).collect(),
        };
        for key in &self.numeric {
            let known = names.iter().any(|n| n == key) || key.parse::<usize>().is_ok_and(|i| i < m);
            if !known {
                return Err(Error::usage(format!("numeric field `{key}` does not exist")));
            }
        }
        Ok(names
            .into_iter()
            .enumerate()
            .map(|(i, name)| {
                let numeric = self.numeric.iter().any(|k| *k == name || *k == i.to_string());
                FieldSpec {
                    name,
                    kind: if numeric {
                        FieldKind::Numeric
                    } else {
                        FieldKind::Categorical
                    },
                }
            })
            .collect())
    }

    pub fn require_data(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| Error::usage("missing --data"))
    }

    pub fn require_model_in(&self) -> Result<&Path> {
        self.model_in
            .as_deref()
            .ok_or_else(|| Error::usage("missing --model-in"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\nlr = 0.05\nrank=3\n\nsplit = 0.5,0.25,0.25\nnumeric = a\n")
            .unwrap();
        assert_eq!(cfg.train.learning_rate, 0.05);
        assert_eq!(cfg.rank_policy().unwrap(), RankPolicy::Constant(3));
        assert_eq!(cfg.split, [0.5, 0.25, 0.25]);
        cfg.set("rank", "0").unwrap();
        assert_eq!(cfg.rank_policy().unwrap(), RankPolicy::BiasOnly);
        cfg.set("rank_log_base", "1.6").unwrap();
        assert_eq!(cfg.rank_policy().unwrap(), RankPolicy::LogBase(1.6));
    }

    #[test]
    fn dump_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("data = x.tsv\nrank_log_base = 2\nmin_count = 3,4\ndelimiter = comma\nn = 10")
            .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.dump()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_bad_input() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("nokey").is_err());
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("lr", "fast").is_err());
        assert!(cfg.set("split", "0.5,0.5").is_err());
        assert!(cfg.set("header", "maybe").is_err());
    }

    #[test]
    fn specs_from_header() {
        let mut cfg = RunConfig::default();
        cfg.set("numeric", "b,2").unwrap();
        let specs = cfg.field_specs(Some(&["a".into(), "b".into(), "c".into()]), 3).unwrap();
        let kinds: Vec<_> = specs.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            vec![FieldKind::Categorical, FieldKind::Numeric, FieldKind::Numeric]
        );
        cfg.set("numeric", "zz").unwrap();
        assert!(cfg.field_specs(None, 3).is_err());
    }
}
