//! Delimited-text ingestion, per-field vocabularies and one-hot index encoding.
//!
//! Every field is categorical by the time it reaches the model: numeric columns
//! are discretized with [`log_transform_numeric`] first. Each field owns a
//! vocabulary of kept tokens plus one rare bucket, which absorbs tokens seen
//! fewer than `min_count` times and any token unseen at fit time. The rare
//! bucket is always the last local index of its field.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Token used for an absent numeric value.
pub const MISSING: &str = "MISSING";

const VOCAB_MAGIC: &str = "FWVOCAB";
const VOCAB_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Categorical,
    Numeric,
}

impl FieldKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FieldKind::Categorical => "categorical",
            FieldKind::Numeric => "numeric",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "categorical" => Some(FieldKind::Categorical),
            "numeric" => Some(FieldKind::Numeric),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

impl FieldSpec {
    pub fn categorical(name: impl Into<String>) -> Self {
        FieldSpec {
            name: name.into(),
            kind: FieldKind::Categorical,
        }
    }

    pub fn numeric(name: impl Into<String>) -> Self {
        FieldSpec {
            name: name.into(),
            kind: FieldKind::Numeric,
        }
    }
}

pub fn validate_specs(specs: &[FieldSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::data("schema has no fields"));
    }
    let mut seen = HashSet::new();
    for spec in specs {
        if !seen.insert(spec.name.as_str()) {
            return Err(Error::data(format!("duplicate field name `{}`", spec.name)));
        }
    }
    Ok(())
}

/// Discretizes a numeric value into a categorical token.
///
/// `None` (missing) becomes [`MISSING`]; values `<= 2` keep their integer part;
/// larger values become `floor(ln(v)^2)`. Returns `None` for NaN or infinite input.
pub fn log_transform_numeric(value: Option<f64>) -> Option<String> {
    let v = match value {
        None => return Some(MISSING.to_string()),
        Some(v) if !v.is_finite() => return None,
        Some(v) => v,
    };
    let bucket = if v <= 2.0 {
        v.floor()
    } else {
        let l = v.ln();
        (l * l).floor()
    };
    Some(format!("{}", bucket as i64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    /// `+1.0` or `-1.0`.
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn from_sign(y: f64) -> Self {
        if y > 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn parse(s: &str, row: usize) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Label::Positive),
            "0" => Ok(Label::Negative),
            other => Err(Error::Label {
                row,
                label: other.to_string(),
            }),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "1",
            Label::Negative => "0",
        }
    }
}

/// One record as read from disk: label column first, then one raw value per field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRow {
    /// 1-based line number in the source file.
    pub line: usize,
    pub label: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RawTable {
    /// Field names taken from the header, label column excluded.
    pub header: Option<Vec<String>>,
    pub rows: Vec<RawRow>,
}

impl RawTable {
    pub fn num_fields(&self) -> usize {
        self.header
            .as_ref()
            .map(Vec::len)
            .or_else(|| self.rows.first().map(|r| r.values.len()))
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReadOptions {
    pub delimiter: u8,
    pub has_header: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            delimiter: b'\t',
            has_header: false,
        }
    }
}

pub fn read_table(path: impl AsRef<Path>, opts: ReadOptions) -> Result<RawTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_table_from(BufReader::new(file), opts)
}

pub fn read_table_from<R: Read>(reader: R, opts: ReadOptions) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(opts.has_header)
        .flexible(true)
        .quoting(opts.delimiter != b'\t')
        .from_reader(reader);

    let header = if opts.has_header {
        let h = rdr.headers()?;
        if h.len() < 2 {
            return Err(Error::data("header needs a label column and at least one field"));
        }
        Some(h.iter().skip(1).map(str::to_string).collect::<Vec<_>>())
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut width = header.as_ref().map(|h| h.len() + 1);
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(rows.len() + 1, |p| p.line() as usize);
        if record.len() == 1 && record.get(0).is_some_and(str::is_empty) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(Error::data(format!(
                    "line {line}: expected {w} columns, found {}",
                    record.len()
                )))
            }
            _ => {}
        }
        if record.len() < 2 {
            return Err(Error::data(format!("line {line}: no feature columns")));
        }
        rows.push(RawRow {
            line,
            label: record[0].to_string(),
            values: record.iter().skip(1).map(str::to_string).collect(),
        });
    }
    Ok(RawTable { header, rows })
}

/// Maps one raw row to its per-field tokens, discretizing numeric fields.
pub fn tokenize(row: &RawRow, specs: &[FieldSpec]) -> Result<Vec<String>> {
    if row.values.len() != specs.len() {
        return Err(Error::data(format!(
            "line {}: expected {} fields, found {}",
            row.line,
            specs.len(),
            row.values.len()
        )));
    }
    row.values
        .iter()
        .zip(specs)
        .map(|(raw, spec)| match spec.kind {
            FieldKind::Categorical => Ok(raw.clone()),
            FieldKind::Numeric => {
                let raw = raw.trim();
                let value = if raw.is_empty() {
                    None
                } else {
                    Some(raw.parse::<f64>().map_err(|_| {
                        Error::data(format!(
                            "line {}: field `{}`: `{raw}` is not numeric",
                            row.line, spec.name
                        ))
                    })?)
                };
                log_transform_numeric(value).ok_or_else(|| Error::NonFinite {
                    field: spec.name.clone(),
                    row: row.line,
                    value: raw.to_string(),
                })
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldVocab {
    spec: FieldSpec,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl FieldVocab {
    fn new(spec: FieldSpec, tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        FieldVocab { spec, tokens, index }
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    /// Kept tokens plus the rare bucket.
    pub fn cardinality(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn rare_index(&self) -> u32 {
        self.tokens.len() as u32
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or_else(|| self.rare_index())
    }

    /// Reverse lookup; `None` for the rare bucket or out-of-range indices.
    pub fn token(&self, index: u32) -> Option<&str> {
        self.tokens.get(index as usize).map(String::as_str)
    }

    pub fn kept_tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    fields: Vec<FieldVocab>,
    offsets: Vec<usize>,
}

impl Vocabulary {
    fn from_fields(fields: Vec<FieldVocab>) -> Self {
        let mut offsets = Vec::with_capacity(fields.len());
        let mut acc = 0;
        for f in &fields {
            offsets.push(acc);
            acc += f.cardinality();
        }
        Vocabulary { fields, offsets }
    }

    /// A vocabulary whose field `i` keeps the tokens `"0"..="d_i - 2"` at their
    /// own index, so the textual index `k` encodes to local index `k` for every `k < d_i`.
    pub fn identity(specs: Vec<FieldSpec>, cardinalities: &[usize]) -> Result<Self> {
        validate_specs(&specs)?;
        if specs.len() != cardinalities.len() {
            return Err(Error::data("one cardinality per field is required"));
        }
        let fields = specs
            .into_iter()
            .zip(cardinalities)
            .map(|(spec, &d)| {
                if d == 0 {
                    return Err(Error::data(format!("field `{}` has cardinality 0", spec.name)));
                }
                Ok(FieldVocab::new(spec, (0..d - 1).map(|k| k.to_string()).collect()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_fields(fields))
    }

    pub fn m(&self) -> usize {
        self.fields.len()
    }

    pub fn d(&self) -> usize {
        self.fields.iter().map(FieldVocab::cardinality).sum()
    }

    pub fn field(&self, i: usize) -> &FieldVocab {
        &self.fields[i]
    }

    pub fn fields(&self) -> &[FieldVocab] {
        &self.fields
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.fields.iter().map(FieldVocab::cardinality).collect()
    }

    /// Global offset of field `i` in the concatenated one-hot vector.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn specs(&self) -> Vec<FieldSpec> {
        self.fields.iter().map(|f| f.spec.clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.spec.name.clone()).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{VOCAB_MAGIC} {VOCAB_VERSION} m={} d={}", self.m(), self.d())?;
        for (i, f) in self.fields.iter().enumerate() {
            writeln!(w, "#field\t{i}\t{}\t{}", f.spec.name, f.spec.kind.as_str())?;
        }
        for (i, f) in self.fields.iter().enumerate() {
            for (k, token) in f.tokens.iter().enumerate() {
                if token.contains(['\t', '\n', '\r']) {
                    return Err(Error::data(format!(
                        "field {i}: token {token:?} cannot be stored in a vocabulary file"
                    )));
                }
                writeln!(w, "{i}\t{token}\t{k}")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::data("empty vocabulary file"))??;
        let parts: Vec<&str> = header.split(' ').collect();
        let (m, d) = match parts.as_slice() {
            [magic, version, m, d] if *magic == VOCAB_MAGIC => {
                if version.parse::<u32>().ok() != Some(VOCAB_VERSION) {
                    return Err(Error::data(format!("unsupported vocabulary version {version}")));
                }
                let m = m
                    .strip_prefix("m=")
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::data("bad m= in vocabulary header"))?;
                let d = d
                    .strip_prefix("d=")
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| Error::data("bad d= in vocabulary header"))?;
                (m, d)
            }
            _ => return Err(Error::data("missing FWVOCAB header")),
        };

        let mut specs: Vec<Option<FieldSpec>> = vec![None; m];
        let mut tokens: Vec<Vec<String>> = vec![Vec::new(); m];
        for (n, line) in lines.enumerate() {
            let line = line?;
            let lineno = n + 2;
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if let Some(meta) = line.strip_prefix("#field\t") {
                let meta: Vec<&str> = meta.split('\t').collect();
                let [idx, name, kind] = meta.as_slice() else {
                    return Err(Error::data(format!("vocabulary line {lineno}: bad field line")));
                };
                let i = parse_field_index(idx, m, lineno)?;
                let kind = FieldKind::parse(kind)
                    .ok_or_else(|| Error::data(format!("vocabulary line {lineno}: unknown kind `{kind}`")))?;
                specs[i] = Some(FieldSpec {
                    name: name.to_string(),
                    kind,
                });
                continue;
            }
            let [idx, token, local] = cols.as_slice() else {
                return Err(Error::data(format!("vocabulary line {lineno}: expected 3 columns")));
            };
            let i = parse_field_index(idx, m, lineno)?;
            let local: usize = local
                .parse()
                .map_err(|_| Error::data(format!("vocabulary line {lineno}: bad local index")))?;
            if local != tokens[i].len() {
                return Err(Error::data(format!(
                    "vocabulary line {lineno}: local index {local} out of sequence"
                )));
            }
            tokens[i].push(token.to_string());
        }

        let fields = specs
            .into_iter()
            .zip(tokens)
            .enumerate()
            .map(|(i, (spec, toks))| {
                let spec = spec.unwrap_or_else(|| FieldSpec::categorical(format!("f{i}")));
                FieldVocab::new(spec, toks)
            })
            .collect::<Vec<_>>();
        let specs: Vec<FieldSpec> = fields.iter().map(|f| f.spec.clone()).collect();
        validate_specs(&specs)?;
        let vocab = Self::from_fields(fields);
        if vocab.d() != d {
            return Err(Error::data(format!(
                "vocabulary header says d={d} but entries give d={}",
                vocab.d()
            )));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

fn parse_field_index(s: &str, m: usize, lineno: usize) -> Result<usize> {
    match s.parse::<usize>() {
        Ok(i) if i < m => Ok(i),
        _ => Err(Error::data(format!("vocabulary line {lineno}: bad field index `{s}`"))),
    }
}

/// Builds per-field vocabularies from a corpus of raw rows.
///
/// `min_count` holds either one threshold for all fields or one per field.
/// Tokens are indexed in order of first appearance.
pub fn build_vocabulary(rows: &[RawRow], specs: &[FieldSpec], min_count: &[usize]) -> Result<Vocabulary> {
    validate_specs(specs)?;
    if rows.is_empty() {
        return Err(Error::data("cannot build a vocabulary from an empty corpus"));
    }
    let thresholds: Vec<usize> = match min_count.len() {
        1 => vec![min_count[0]; specs.len()],
        n if n == specs.len() => min_count.to_vec(),
        n => {
            return Err(Error::usage(format!(
                "min_count has {n} entries for {} fields",
                specs.len()
            )))
        }
    };
    if thresholds.contains(&0) {
        return Err(Error::usage("min_count must be at least 1"));
    }

    let m = specs.len();
    let mut order: Vec<Vec<String>> = vec![Vec::new(); m];
    let mut counts: Vec<HashMap<String, usize>> = vec![HashMap::new(); m];
    for row in rows {
        let tokens = tokenize(row, specs)?;
        for (i, token) in tokens.into_iter().enumerate() {
            match counts[i].get_mut(&token) {
                Some(c) => *c += 1,
                None => {
                    counts[i].insert(token.clone(), 1);
                    order[i].push(token);
                }
            }
        }
    }

    let fields = specs
        .iter()
        .zip(order)
        .zip(&counts)
        .zip(&thresholds)
        .map(|(((spec, order), counts), &min)| {
            let kept = order.into_iter().filter(|t| counts[t] >= min).collect();
            FieldVocab::new(spec.clone(), kept)
        })
        .collect();
    Ok(Vocabulary::from_fields(fields))
}

/// Exactly one active local index per field plus a binary label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedInstance {
    pub active: Vec<u32>,
    pub label: Label,
}

pub fn encode_instance(row: &RawRow, vocab: &Vocabulary) -> Result<EncodedInstance> {
    let label = Label::parse(&row.label, row.line)?;
    let specs = vocab.specs();
    let tokens = tokenize(row, &specs)?;
    let active = tokens.iter().zip(vocab.fields()).map(|(t, f)| f.lookup(t)).collect();
    Ok(EncodedInstance { active, label })
}

pub fn encode_rows(rows: &[RawRow], vocab: &Vocabulary) -> Result<Dataset> {
    let instances = rows
        .iter()
        .map(|r| encode_instance(r, vocab))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(vocab.cardinalities(), instances)
}

/// A non-empty collection of encoded instances sharing one set of field cardinalities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    cardinalities: Vec<usize>,
    instances: Vec<EncodedInstance>,
}

impl Dataset {
    pub fn new(cardinalities: Vec<usize>, instances: Vec<EncodedInstance>) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::data("dataset is empty"));
        }
        if cardinalities.contains(&0) {
            return Err(Error::data("field cardinality must be at least 1"));
        }
        for (n, inst) in instances.iter().enumerate() {
            if inst.active.len() != cardinalities.len() {
                return Err(Error::data(format!(
                    "instance {n}: {} active indices for {} fields",
                    inst.active.len(),
                    cardinalities.len()
                )));
            }
            if let Some(i) = inst
                .active
                .iter()
                .zip(&cardinalities)
                .position(|(&k, &d)| k as usize >= d)
            {
                return Err(Error::data(format!(
                    "instance {n}: index {} out of range for field {i} (d={})",
                    inst.active[i], cardinalities[i]
                )));
            }
        }
        Ok(Dataset {
            cardinalities,
            instances,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn m(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn instances(&self) -> &[EncodedInstance] {
        &self.instances
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            self.cardinalities.clone(),
            indices.iter().map(|&i| self.instances[i].clone()).collect(),
        )
    }

    pub fn positive_rate(&self) -> f64 {
        let pos = self.instances.iter().filter(|i| i.label == Label::Positive).count();
        pos as f64 / self.len() as f64
    }
}

/// Partition sizes by largest remainder, each part non-empty.
fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|x| x.floor() as usize);
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut by_fraction = [0usize, 1, 2];
    by_fraction.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in by_fraction.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[i] += 1;
        rest -= 1;
    }
    for i in 0..3 {
        while sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], std::cmp::Reverse(j))).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    sizes
}

/// Seeded random three-way partition of `0..n`; each part is returned in ascending order.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    if n < 3 {
        return Err(Error::data(format!("need at least 3 instances to split, got {n}")));
    }
    if ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::usage("split ratios must be positive"));
    }
    if (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::usage("split ratios must sum to 1"));
    }
    let sizes = split_sizes(n, ratios);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut start = 0;
    for (part, size) in parts.iter_mut().zip(sizes) {
        *part = perm[start..start + size].to_vec();
        part.sort_unstable();
        start += size;
    }
    Ok(parts)
}

pub fn split_dataset(data: &Dataset, ratios: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let [train, val, test] = split_indices(data.len(), ratios, seed)?;
    Ok((data.subset(&train)?, data.subset(&val)?, data.subset(&test)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(line: usize, label: &str, values: &[&str]) -> RawRow {
        RawRow {
            line,
            label: label.to_string(),
            values: values.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn gender_corpus() -> Vec<RawRow> {
        vec![row(1, "1", &["Male"]), row(2, "0", &["Female"]), row(3, "1", &["Male"])]
    }

    #[test]
    fn log_transform_examples() {
        assert_eq!(log_transform_numeric(None).unwrap(), "MISSING");
        assert_eq!(log_transform_numeric(Some(1.0)).unwrap(), "1");
        assert_eq!(log_transform_numeric(Some(2.0)).unwrap(), "2");
        assert_eq!(log_transform_numeric(Some(0.5)).unwrap(), "0");
        assert_eq!(log_transform_numeric(Some(-0.5)).unwrap(), "-1");
        // ln(100)^2 = 21.207...
        assert_eq!(log_transform_numeric(Some(100.0)).unwrap(), "21");
        assert_eq!(log_transform_numeric(Some(3.0)).unwrap(), "1");
        assert!(log_transform_numeric(Some(f64::NAN)).is_none());
        assert!(log_transform_numeric(Some(f64::INFINITY)).is_none());
    }

    #[test]
    fn non_finite_numeric_names_field_and_row() {
        let specs = [FieldSpec::numeric("I1")];
        let err = tokenize(&row(7, "1", &["inf"]), &specs).unwrap_err();
        match err {
            Error::NonFinite { field, row, .. } => {
                assert_eq!(field, "I1");
                assert_eq!(row, 7);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(tokenize(&row(1, "1", &[""]), &specs).unwrap(), vec!["MISSING"]);
    }

    #[test]
    fn min_count_one_keeps_everything() {
        let vocab = build_vocabulary(&gender_corpus(), &[FieldSpec::categorical("Gender")], &[1]).unwrap();
        let f = vocab.field(0);
        assert_eq!(f.cardinality(), 3);
        assert_eq!(f.lookup("Male"), 0);
        assert_eq!(f.lookup("Female"), 1);
        assert_eq!(f.rare_index(), 2);
    }

    #[test]
    fn min_count_two_groups_rare() {
        let vocab = build_vocabulary(&gender_corpus(), &[FieldSpec::categorical("Gender")], &[2]).unwrap();
        let f = vocab.field(0);
        assert_eq!(f.cardinality(), 2);
        assert_eq!(f.lookup("Male"), 0);
        assert_eq!(f.lookup("Female"), f.rare_index());
    }

    #[test]
    fn field_with_no_survivors_is_rare_only() {
        let vocab = build_vocabulary(&gender_corpus(), &[FieldSpec::categorical("Gender")], &[10]).unwrap();
        assert_eq!(vocab.field(0).cardinality(), 1);
        assert_eq!(vocab.field(0).rare_index(), 0);
    }

    #[test]
    fn empty_corpus_and_bad_schema_rejected() {
        assert!(build_vocabulary(&[], &[FieldSpec::categorical("a")], &[1]).is_err());
        let specs = [FieldSpec::categorical("a"), FieldSpec::numeric("a")];
        assert!(build_vocabulary(&[row(1, "1", &["x", "1"])], &specs, &[1]).is_err());
        assert!(build_vocabulary(&[row(1, "1", &["x"])], &[FieldSpec::categorical("a")], &[0]).is_err());
    }

    #[test]
    fn encode_gender_one_hot() {
        let corpus = vec![row(1, "1", &["Male"]), row(2, "0", &["Female"])];
        let vocab = build_vocabulary(&corpus, &[FieldSpec::categorical("Gender")], &[1]).unwrap();
        assert_eq!(encode_instance(&corpus[0], &vocab).unwrap().active, vec![0]);
        assert_eq!(encode_instance(&corpus[1], &vocab).unwrap().active, vec![1]);
        let unseen = encode_instance(&row(3, "0", &["Other"]), &vocab).unwrap();
        assert_eq!(unseen.active, vec![vocab.field(0).rare_index()]);
        assert_eq!(unseen.label, Label::Negative);
    }

    #[test]
    fn malformed_label_reports_row() {
        let vocab = build_vocabulary(&gender_corpus(), &[FieldSpec::categorical("Gender")], &[1]).unwrap();
        match encode_instance(&row(12, "yes", &["Male"]), &vocab) {
            Err(Error::Label { row, .. }) => assert_eq!(row, 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn offsets_and_d() {
        let corpus = vec![
            row(1, "1", &["a", "x"]),
            row(2, "0", &["b", "y"]),
            row(3, "0", &["c", "x"]),
        ];
        let specs = [FieldSpec::categorical("p"), FieldSpec::categorical("q")];
        let vocab = build_vocabulary(&corpus, &specs, &[1]).unwrap();
        assert_eq!(vocab.cardinalities(), vec![4, 3]);
        assert_eq!(vocab.offset(0), 0);
        assert_eq!(vocab.offset(1), 4);
        assert_eq!(vocab.d(), 7);
    }

    #[test]
    fn vocab_file_round_trip() {
        let corpus = vec![
            row(1, "1", &["a", "3.5"]),
            row(2, "0", &["", "100"]),
            row(3, "0", &["a", ""]),
        ];
        let specs = [FieldSpec::categorical("site"), FieldSpec::numeric("count")];
        let vocab = build_vocabulary(&corpus, &specs, &[1]).unwrap();
        let mut buf = Vec::new();
        vocab.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("FWVOCAB 1 m=2 d=7\n"));
        assert!(text.contains("1\t21\t1\n"));
        let back = Vocabulary::read_from(&buf[..]).unwrap();
        assert_eq!(back, vocab);
    }

    #[test]
    fn vocab_file_rejects_bad_d() {
        let text = "FWVOCAB 1 m=1 d=5\n0\ta\t0\n";
        assert!(Vocabulary::read_from(text.as_bytes()).is_err());
        assert!(Vocabulary::read_from("nope\n".as_bytes()).is_err());
    }

    #[test]
    fn read_table_with_header_and_comma() {
        let text = "label,Gender,Age\n1,Male,30\n0,Female,\n";
        let table = read_table_from(
            text.as_bytes(),
            ReadOptions {
                delimiter: b',',
                has_header: true,
            },
        )
        .unwrap();
        assert_eq!(
            table.header.as_deref(),
            Some(&["Gender".to_string(), "Age".to_string()][..])
        );
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[1].values, vec!["Female", ""]);
        assert_eq!(table.rows[1].line, 3);
    }

    #[test]
    fn read_table_rejects_ragged_rows() {
        let text = "1\ta\tb\n0\ta\n";
        assert!(read_table_from(text.as_bytes(), ReadOptions::default()).is_err());
    }

    #[test]
    fn split_sizes_exact() {
        let [a, b, c] = split_indices(10, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let again = split_indices(10, [0.8, 0.1, 0.1], 3).unwrap();
        assert_eq!([a, b, c], again);
    }

    #[test]
    fn split_rejects_tiny_and_bad_ratios() {
        assert!(split_indices(2, [0.8, 0.1, 0.1], 0).is_err());
        assert!(split_indices(10, [0.8, 0.1, 0.2], 0).is_err());
        assert!(split_indices(10, [1.0, 0.0, 0.0], 0).is_err());
        let [a, b, c] = split_indices(3, [0.8, 0.1, 0.1], 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (1, 1, 1));
    }

    #[test]
    fn forty_five_million_split_sizes() {
        let sizes = split_sizes(45_840_617, [0.8, 0.1, 0.1]);
        assert_eq!(sizes.iter().sum::<usize>(), 45_840_617);
        for (s, r) in sizes.iter().zip([0.8, 0.1, 0.1]) {
            assert!((*s as f64 - r * 45_840_617.0).abs() <= 1.0);
        }
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![2], vec![]).is_err());
        let bad = EncodedInstance {
            active: vec![2],
            label: Label::Positive,
        };
        assert!(Dataset::new(vec![2], vec![bad]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn encode_decode_round_trip(
                corpus in prop::collection::vec(prop::collection::vec(0u8..6, 3), 1..40),
                min_count in 1usize..4,
            ) {
                let rows: Vec<RawRow> = corpus
                    .iter()
                    .enumerate()
                    .map(|(n, vals)| RawRow {
                        line: n + 1,
                        label: "1".into(),
                        values: vals.iter().map(|v| format!("t{v}")).collect(),
                    })
                    .collect();
                let specs = vec![
                    FieldSpec::categorical("a"),
                    FieldSpec::categorical("b"),
                    FieldSpec::categorical("c"),
                ];
                let vocab = build_vocabulary(&rows, &specs, &[min_count]).unwrap();
                prop_assert_eq!(&vocab, &build_vocabulary(&rows, &specs, &[min_count]).unwrap());
                for i in 0..3 {
                    let f = vocab.field(i);
                    for (k, t) in f.kept_tokens().iter().enumerate() {
                        prop_assert_eq!(f.lookup(t), k as u32);
                        prop_assert_eq!(f.token(k as u32), Some(t.as_str()));
                    }
                    prop_assert!(f.token(f.rare_index()).is_none());
                }
                for r in &rows {
                    let inst = encode_instance(r, &vocab).unwrap();
                    for (i, (&k, raw)) in inst.active.iter().zip(&r.values).enumerate() {
                        let f = vocab.field(i);
                        let count = rows.iter().filter(|q| &q.values[i] == raw).count();
                        if count >= min_count {
                            prop_assert_eq!(f.token(k), Some(raw.as_str()));
                        } else {
                            prop_assert_eq!(k, f.rare_index());
                        }
                    }
                }
            }

            #[test]
            fn split_is_a_partition(n in 3usize..300, seed in any::<u64>()) {
                let parts = split_indices(n, [0.8, 0.1, 0.1], seed).unwrap();
                let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                if n >= 20 {
                    for (p, r) in parts.iter().zip([0.8, 0.1, 0.1]) {
                        prop_assert!((p.len() as f64 - r * n as f64).abs() <= 1.0);
                    }
                }
            }
        }
    }
}
