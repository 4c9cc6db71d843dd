//! Labelled embedding datasets and their CSV interchange format.
//!
//! The on-disk grammar is one header line followed by one line per
//! utterance:
//!
//! ```text
//! utterance_id,speaker_id,domain_id,dim=3
//! utt0001,spk01,movie,0.25,-1.5,3
//! ```
//!
//! IDs match `[A-Za-z0-9_.-]+`; there is no quoting. Floats are written in
//! shortest round-trip form so a read after a write is bit-exact.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

const HEADER_PREFIX: &str = "utterance_id,speaker_id,domain_id,dim=";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub utterance_id: String,
    pub speaker_id: String,
    pub domain_id: String,
    pub vector: Vec<f64>,
}

/// An ordered, validated collection of [`EmbeddingRecord`]s.
///
/// Speaker and domain class indices are assigned by first appearance, so
/// two datasets with the same records in the same order always agree on
/// labels. Subsets produced by [`partition_by_domain`] keep the parent's
/// indices so labels stay comparable across parts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDataset {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    speakers: Vec<String>,
    domains: Vec<String>,
    speaker_labels: Vec<usize>,
    domain_labels: Vec<usize>,
}

pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

impl EmbeddingDataset {
    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new())
    }

    /// Builds a dataset, assigning class indices by first appearance.
    pub fn new(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut speakers = Vec::new();
        let mut domains = Vec::new();
        let mut spk_map: HashMap<String, usize> = HashMap::new();
        let mut dom_map: HashMap<String, usize> = HashMap::new();
        for r in &records {
            if !spk_map.contains_key(&r.speaker_id) {
                spk_map.insert(r.speaker_id.clone(), speakers.len());
                speakers.push(r.speaker_id.clone());
            }
            if !dom_map.contains_key(&r.domain_id) {
                dom_map.insert(r.domain_id.clone(), domains.len());
                domains.push(r.domain_id.clone());
            }
        }
        Self::with_index(dim, records, speakers, domains)
    }

    /// Builds a dataset over fixed speaker and domain index tables. Every
    /// record's labels must appear in the tables.
    pub fn with_index(
        dim: usize,
        records: Vec<EmbeddingRecord>,
        speakers: Vec<String>,
        domains: Vec<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("embedding dimension must be at least 1".into()));
        }
        let spk_map = index_of(&speakers, "speaker")?;
        let dom_map = index_of(&domains, "domain")?;
        let mut seen = HashSet::with_capacity(records.len());
        let mut speaker_labels = Vec::with_capacity(records.len());
        let mut domain_labels = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let row = i + 1;
            if r.vector.len() != dim {
                return Err(Error::Dimension(format!(
                    "record {row} ({}) has {} coordinates, expected {dim}",
                    r.utterance_id,
                    r.vector.len()
                )));
            }
            if let Some(j) = r.vector.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "record {row} ({}) coordinate {j}",
                    r.utterance_id
                )));
            }
            if !seen.insert(r.utterance_id.as_str()) {
                return Err(Error::Data(format!(
                    "duplicate utterance_id {} at record {row}",
                    r.utterance_id
                )));
            }
            let spk = spk_map.get(r.speaker_id.as_str()).ok_or_else(|| {
                Error::Data(format!("speaker {} not in speaker index", r.speaker_id))
            })?;
            let dom = dom_map.get(r.domain_id.as_str()).ok_or_else(|| {
                Error::Data(format!("domain {} not in domain index", r.domain_id))
            })?;
            speaker_labels.push(*spk);
            domain_labels.push(*dom);
        }
        Ok(Self {
            dim,
            records,
            speakers,
            domains,
            speaker_labels,
            domain_labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &EmbeddingRecord {
        &self.records[i]
    }

    /// Speaker ids in class-index order.
    pub fn speakers(&self) -> &[String] {
        &self.speakers
    }

    /// Domain ids in class-index order.
    pub fn domains(&self) -> &[String] {
        &self.domains
    }

    pub fn n_speakers(&self) -> usize {
        self.speakers.len()
    }

    pub fn n_domains(&self) -> usize {
        self.domains.len()
    }

    /// Class index of record `i`'s speaker.
    pub fn speaker_label(&self, i: usize) -> usize {
        self.speaker_labels[i]
    }

    pub fn speaker_labels(&self) -> &[usize] {
        &self.speaker_labels
    }

    pub fn domain_label(&self, i: usize) -> usize {
        self.domain_labels[i]
    }

    pub fn speaker_index(&self, speaker_id: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s == speaker_id)
    }

    pub fn domain_index(&self, domain_id: &str) -> Option<usize> {
        self.domains.iter().position(|d| d == domain_id)
    }

    /// Map from utterance id to record position.
    pub fn utterance_lookup(&self) -> HashMap<&str, usize> {
        self.records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.utterance_id.as_str(), i))
            .collect()
    }

    /// Domain ids that actually occur in the records, in index order.
    pub fn present_domains(&self) -> Vec<&str> {
        let mut present = vec![false; self.domains.len()];
        for &d in &self.domain_labels {
            present[d] = true;
        }
        self.domains
            .iter()
            .zip(present)
            .filter(|(_, p)| *p)
            .map(|(d, _)| d.as_str())
            .collect()
    }

    /// Records whose positions satisfy `keep`, with this dataset's indices.
    fn subset_keep_index(&self, keep: impl Fn(usize) -> bool) -> Self {
        let mut out = Self {
            dim: self.dim,
            records: Vec::new(),
            speakers: self.speakers.clone(),
            domains: self.domains.clone(),
            speaker_labels: Vec::new(),
            domain_labels: Vec::new(),
        };
        for i in (0..self.len()).filter(|&i| keep(i)) {
            out.records.push(self.records[i].clone());
            out.speaker_labels.push(self.speaker_labels[i]);
            out.domain_labels.push(self.domain_labels[i]);
        }
        out
    }

    /// Row-major copy of the vectors at `rows`.
    pub fn gather(&self, rows: &[usize]) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(rows.len(), self.dim, |i, j| self.records[rows[i]].vector[j])
    }

    /// All vectors as an n × D matrix.
    pub fn matrix(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.len(), self.dim, |i, j| self.records[i].vector[j])
    }

    /// A copy with every vector replaced through `f` (dimension may change).
    pub fn map_vectors(&self, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Self> {
        let mut records = Vec::with_capacity(self.len());
        for r in &self.records {
            records.push(EmbeddingRecord {
                utterance_id: r.utterance_id.clone(),
                speaker_id: r.speaker_id.clone(),
                domain_id: r.domain_id.clone(),
                vector: f(&r.vector)?,
            });
        }
        let dim = records.first().map_or(self.dim, |r| r.vector.len());
        Self::with_index(dim, records, self.speakers.clone(), self.domains.clone())
    }
}

fn index_of<'a>(ids: &'a [String], what: &str) -> Result<HashMap<&'a str, usize>> {
    let mut map = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.as_str(), i).is_some() {
            return Err(Error::Data(format!("duplicate {what} id {id} in index")));
        }
    }
    Ok(map)
}

/// Parses the CSV dataset format from any reader. `path` is only used for
/// error messages.
pub fn parse_dataset(reader: impl BufRead, path: &Path) -> Result<EmbeddingDataset> {
    let row_err = |row: usize, msg: String| Error::Row {
        path: path.to_path_buf(),
        row,
        msg,
    };
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(row_err(0, "missing header line".into())),
    };
    let dim: usize = header
        .trim_end_matches('\r')
        .strip_prefix(HEADER_PREFIX)
        .and_then(|d| d.parse().ok())
        .filter(|&d| d >= 1)
        .ok_or_else(|| {
            row_err(
                0,
                format!("header must be `{HEADER_PREFIX}D` with D >= 1, got `{header}`"),
            )
        })?;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut id = |name: &str| -> Result<String> {
            let f = fields
                .next()
                .ok_or_else(|| row_err(row, format!("missing {name}")))?;
            if !is_valid_id(f) {
                return Err(row_err(row, format!("invalid {name} `{f}`")));
            }
            Ok(f.to_string())
        };
        let utterance_id = id("utterance_id")?;
        let speaker_id = id("speaker_id")?;
        let domain_id = id("domain_id")?;
        let mut vector = Vec::with_capacity(dim);
        for (j, f) in fields.enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| row_err(row, format!("coordinate {j}: cannot parse `{f}`")))?;
            if !v.is_finite() {
                return Err(row_err(row, format!("coordinate {j} is not finite")));
            }
            vector.push(v);
        }
        if vector.len() != dim {
            return Err(row_err(
                row,
                format!("has {} coordinates, expected {dim}", vector.len()),
            ));
        }
        if !seen.insert(utterance_id.clone()) {
            return Err(row_err(
                row,
                format!("duplicate utterance_id {utterance_id}"),
            ));
        }
        records.push(EmbeddingRecord {
            utterance_id,
            speaker_id,
            domain_id,
            vector,
        });
    }
    EmbeddingDataset::new(dim, records)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<EmbeddingDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(BufReader::new(file), path)
}

/// Renders the CSV text of a dataset.
pub fn format_dataset(ds: &EmbeddingDataset) -> String {
    let mut out = String::with_capacity(64 + ds.len() * (24 + ds.dim() * 20));
    let _ = writeln!(out, "{HEADER_PREFIX}{}", ds.dim());
    for r in ds.records() {
        out.push_str(&r.utterance_id);
        out.push(',');
        out.push_str(&r.speaker_id);
        out.push(',');
        out.push_str(&r.domain_id);
        for v in &r.vector {
            // f64 Display is the shortest string that parses back bit-exact.
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(ds: &EmbeddingDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(format_dataset(ds).as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// Splits a dataset into one part per domain. Parts keep the parent's
/// speaker and domain indices.
pub fn partition_by_domain(ds: &EmbeddingDataset) -> BTreeMap<String, EmbeddingDataset> {
    let mut out = BTreeMap::new();
    for dom in ds.present_domains() {
        let d = ds.domain_index(dom).expect("present domain is indexed");
        out.insert(
            dom.to_string(),
            ds.subset_keep_index(|i| ds.domain_labels[i] == d),
        );
    }
    out
}

/// Seen/unseen-domain split. Each side gets freshly assigned indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSplit {
    pub train: EmbeddingDataset,
    pub eval: EmbeddingDataset,
    pub held_out_domains: BTreeSet<String>,
}

pub fn split_train_eval(
    ds: &EmbeddingDataset,
    held_out_domains: &BTreeSet<String>,
) -> Result<DomainSplit> {
    let present: BTreeSet<&str> = ds.present_domains().into_iter().collect();
    if let Some(unknown) = held_out_domains
        .iter()
        .find(|d| !present.contains(d.as_str()))
    {
        return Err(Error::Config(format!(
            "unknown held-out domain `{unknown}`"
        )));
    }
    let remaining = present.len() - held_out_domains.len();
    if remaining < 2 {
        return Err(Error::Config(format!(
            "holding out {} of {} domains leaves {remaining} training domain(s); at least 2 are required",
            held_out_domains.len(),
            present.len()
        )));
    }
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for r in ds.records() {
        if held_out_domains.contains(&r.domain_id) {
            eval.push(r.clone());
        } else {
            train.push(r.clone());
        }
    }
    Ok(DomainSplit {
        train: EmbeddingDataset::new(ds.dim(), train)?,
        eval: EmbeddingDataset::new(ds.dim(), eval)?,
        held_out_domains: held_out_domains.clone(),
    })
}
