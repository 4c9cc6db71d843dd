//! Trial lists, scoring and EER.
//!
//! # EER convention
//!
//! Let `u_1 < … < u_m` be the distinct scores. The sweep uses the
//! thresholds `t_0 = −∞`, `t_j = (u_j + u_{j+1}) / 2` and `t_m = +∞`, with
//!
//! ```text
//! FAR(t) = #{nontarget score ≥ t} / N_nontarget
//! FRR(t) = #{target score < t} / N_target
//! ```
//!
//! FAR falls from 1 to 0 and FRR rises from 0 to 1 along the sweep. The EER
//! is taken at the first operating point `j` with `FRR_j ≥ FAR_j`: if they
//! are equal that value is returned, otherwise the two curves are linearly
//! interpolated between points `j − 1` and `j` and the crossing value is
//! returned. All-equal scores give 0.5; perfectly separated scores give 0.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::backend::{score_cosine, LdaModel, PldaScorer, Preproc};
use crate::error::{Error, Result};
use crate::nn::ProjectionNet;
use crate::vecio::EmbeddingDataset;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trial {
    pub enroll_utt: String,
    pub test_utt: String,
    pub target: bool,
}

pub type TrialList = Vec<Trial>;

fn label_token(target: bool) -> &'static str {
    if target {
        "target"
    } else {
        "nontarget"
    }
}

fn parse_label(tok: &str) -> std::result::Result<bool, String> {
    match tok {
        "target" => Ok(true),
        "nontarget" => Ok(false),
        other => Err(format!(
            "unknown trial label '{other}' (expected target or nontarget)"
        )),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    std::io::BufReader::new(f)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))
}

pub fn parse_trials(text: &str, path: &Path) -> Result<TrialList> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 fields, found {}",
                toks.len()
            )));
        }
        out.push(Trial {
            enroll_utt: toks[0].to_string(),
            test_utt: toks[1].to_string(),
            target: parse_label(toks[2]).map_err(parse_err)?,
        });
    }
    Ok(out)
}

pub fn load_trials(path: impl AsRef<Path>) -> Result<TrialList> {
    let path = path.as_ref();
    parse_trials(&read_lines(path)?.join("\n"), path)
}

pub fn format_trials(trials: &[Trial]) -> String {
    let mut s = String::new();
    for t in trials {
        let _ = writeln!(
            s,
            "{} {} {}",
            t.enroll_utt,
            t.test_utt,
            label_token(t.target)
        );
    }
    s
}

pub fn write_trials(trials: &[Trial], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_trials(trials)).map_err(|e| Error::io(path, e))
}

fn trial_of(ds: &EmbeddingDataset, i: usize, j: usize) -> Trial {
    Trial {
        enroll_utt: ds.record(i).utterance_id.clone(),
        test_utt: ds.record(j).utterance_id.clone(),
        target: ds.speaker_label(i) == ds.speaker_label(j),
    }
}

/// Every unordered pair of distinct records, in index order.
pub fn all_pairs_trials(ds: &EmbeddingDataset) -> TrialList {
    let n = ds.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            out.push(trial_of(ds, i, j));
        }
    }
    out
}

/// Samples `n_target` same-speaker and `n_nontarget` different-speaker
/// pairs without repetition. Targets come first.
pub fn make_trials(
    ds: &EmbeddingDataset,
    rng: &mut impl Rng,
    n_target: usize,
    n_nontarget: usize,
) -> Result<TrialList> {
    let mut by_speaker: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..ds.len() {
        by_speaker.entry(ds.speaker_label(i)).or_default().push(i);
    }
    let mut target_pairs = Vec::new();
    for members in by_speaker.values() {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                target_pairs.push((i, j));
            }
        }
    }
    if n_target > target_pairs.len() {
        return Err(Error::Data(format!(
            "requested {n_target} target trials but only {} same-speaker pairs exist",
            target_pairs.len()
        )));
    }
    let n = ds.len();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let available_non = total_pairs - target_pairs.len();
    if n_nontarget > available_non {
        return Err(Error::Data(format!(
            "requested {n_nontarget} nontarget trials but only {available_non} different-speaker pairs exist"
        )));
    }

    let mut out = Vec::with_capacity(n_target + n_nontarget);
    for k in index::sample(rng, target_pairs.len(), n_target) {
        let (i, j) = target_pairs[k];
        out.push(trial_of(ds, i, j));
    }

    if n_nontarget * 2 >= available_non {
        let mut pairs = Vec::with_capacity(available_non);
        for i in 0..n {
            for j in (i + 1)..n {
                if ds.speaker_label(i) != ds.speaker_label(j) {
                    pairs.push((i, j));
                }
            }
        }
        for k in index::sample(rng, pairs.len(), n_nontarget) {
            let (i, j) = pairs[k];
            out.push(trial_of(ds, i, j));
        }
    } else {
        let mut seen = HashSet::with_capacity(n_nontarget);
        while seen.len() < n_nontarget {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j || ds.speaker_label(i) == ds.speaker_label(j) {
                continue;
            }
            let key = (i.min(j), i.max(j));
            if seen.insert(key) {
                out.push(trial_of(ds, key.0, key.1));
            }
        }
    }
    Ok(out)
}

/// One transformation applied to every vector before scoring.
#[derive(Debug, Clone)]
pub enum ProjectorStep {
    Net(ProjectionNet),
    Lda(LdaModel),
    Preproc(Preproc),
}

impl ProjectorStep {
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Net(net) => net.embed(v),
            Self::Lda(m) => m.apply(v),
            Self::Preproc(p) => p.apply(v),
        }
    }
}

/// A chain of steps applied left to right; empty means identity.
#[derive(Debug, Clone, Default)]
pub struct Projector {
    pub steps: Vec<ProjectorStep>,
}

impl Projector {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn then(mut self, step: ProjectorStep) -> Self {
        self.steps.push(step);
        self
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut cur = v.to_vec();
        for s in &self.steps {
            cur = s.apply(&cur)?;
        }
        Ok(cur)
    }

    /// Transforms every record of `ds`, keeping labels and IDs.
    pub fn transform_dataset(&self, ds: &EmbeddingDataset) -> Result<EmbeddingDataset> {
        let vectors: Vec<Vec<f64>> = ds
            .records()
            .par_iter()
            .map(|r| self.apply(&r.vector))
            .collect::<Result<_>>()?;
        let mut it = vectors.into_iter();
        ds.map_vectors(|_| Ok(it.next().expect("one vector per record")))
    }
}

#[derive(Debug, Clone)]
pub enum Scorer {
    Cosine,
    Plda(PldaScorer),
}

impl Scorer {
    pub fn score(&self, enroll: &[f64], test: &[f64]) -> Result<f64> {
        match self {
            Self::Cosine => score_cosine(enroll, test),
            Self::Plda(p) => p.score(enroll, test),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub targets: Vec<bool>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, targets: Vec<bool>) -> Result<Self> {
        if scores.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} scores but {} labels",
                scores.len(),
                targets.len()
            )));
        }
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("score {i} is {}", scores[i])));
        }
        Ok(Self { scores, targets })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn n_targets(&self) -> usize {
        self.targets.iter().filter(|&&t| t).count()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

fn resolve(lookup: &HashMap<&str, usize>, id: &str, k: usize, side: &str) -> Result<usize> {
    lookup.get(id).copied().ok_or_else(|| {
        Error::Data(format!(
            "trial {}: {side} utterance '{id}' not found in dataset",
            k + 1
        ))
    })
}

/// Transforms the vectors referenced by `trials`, then scores each trial.
/// The result is in trial order and independent of thread count.
pub fn score_trials(
    scorer: &Scorer,
    projector: &Projector,
    ds: &EmbeddingDataset,
    trials: &[Trial],
) -> Result<ScoreSet> {
    let lookup = ds.utterance_lookup();
    let mut pairs = Vec::with_capacity(trials.len());
    let mut needed = vec![false; ds.len()];
    for (k, t) in trials.iter().enumerate() {
        let i = resolve(&lookup, &t.enroll_utt, k, "enroll")?;
        let j = resolve(&lookup, &t.test_utt, k, "test")?;
        needed[i] = true;
        needed[j] = true;
        pairs.push((i, j));
    }
    let transformed: Vec<Option<Vec<f64>>> = needed
        .par_iter()
        .enumerate()
        .map(|(i, &need)| {
            need.then(|| projector.apply(&ds.record(i).vector))
                .transpose()
        })
        .collect::<Result<_>>()?;
    let scores = pairs
        .par_iter()
        .map(|&(i, j)| {
            let e = transformed[i].as_deref().expect("transformed");
            let t = transformed[j].as_deref().expect("transformed");
            scorer.score(e, t)
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreSet::new(scores, trials.iter().map(|t| t.target).collect())
}

/// One `(threshold, FAR, FRR)` point per threshold of the sweep.
fn sweep(scores: &ScoreSet) -> Result<Vec<(f64, f64, f64)>> {
    let n_tar = scores.n_targets();
    let n_non = scores.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        return Err(Error::Data(format!(
            "EER needs at least one target and one nontarget score (got {n_tar} and {n_non})"
        )));
    }
    if let Some(s) = scores.scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores.scores[a].total_cmp(&scores.scores[b]));

    // Walk the distinct values upwards; after consuming value u_j the
    // threshold sits between u_j and u_{j+1}.
    let (nt, nn) = (n_tar as f64, n_non as f64);
    let mut tar_below = 0usize;
    let mut non_below = 0usize;
    let mut points = vec![(f64::NEG_INFINITY, 1.0, 0.0)];
    let mut k = 0;
    while k < order.len() {
        let u = scores.scores[order[k]];
        while k < order.len() && scores.scores[order[k]] == u {
            if scores.targets[order[k]] {
                tar_below += 1;
            } else {
                non_below += 1;
            }
            k += 1;
        }
        let t = if k < order.len() {
            (u + scores.scores[order[k]]) / 2.0
        } else {
            f64::INFINITY
        };
        points.push((t, (n_non - non_below) as f64 / nn, tar_below as f64 / nt));
    }
    Ok(points)
}

/// `(FAR, FRR)` along the threshold sweep, from `(1, 0)` to `(0, 1)`.
pub fn det_points(scores: &ScoreSet) -> Result<Vec<(f64, f64)>> {
    Ok(sweep(scores)?.into_iter().map(|(_, a, r)| (a, r)).collect())
}

/// Interpolated FAR/FRR crossing over a sequence of operating points.
/// Returns the EER and the index of the first point with `FRR ≥ FAR`
/// together with the interpolation weight towards it.
pub fn eer_from_det(points: &[(f64, f64)]) -> Option<(f64, usize, f64)> {
    let j = points.iter().position(|&(far, frr)| frr - far >= 0.0)?;
    let (far1, frr1) = points[j];
    let d1 = frr1 - far1;
    if d1 == 0.0 || j == 0 {
        return Some((far1, j, 1.0));
    }
    let (far0, frr0) = points[j - 1];
    let d0 = frr0 - far0;
    let lambda = -d0 / (d1 - d0);
    Some((far0 + lambda * (far1 - far0), j, lambda))
}

/// EER as a fraction, and the threshold at the crossing (interpolated
/// between the bracketing thresholds; an infinite end is replaced by the
/// extreme score on that side).
pub fn compute_eer(scores: &ScoreSet) -> Result<(f64, f64)> {
    let pts = sweep(scores)?;
    let det: Vec<(f64, f64)> = pts.iter().map(|&(_, a, r)| (a, r)).collect();
    let (eer, j, lambda) = eer_from_det(&det).expect("sweep ends at FRR = 1, FAR = 0");
    let lo = scores.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores
        .scores
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let finite = |t: f64| {
        if t == f64::NEG_INFINITY {
            lo
        } else if t == f64::INFINITY {
            hi
        } else {
            t
        }
    };
    let t1 = finite(pts[j].0);
    let threshold = if lambda == 1.0 {
        t1
    } else {
        let t0 = finite(pts[j - 1].0);
        t0 + lambda * (t1 - t0)
    };
    Ok((eer, threshold))
}

pub fn format_scores(trials: &[Trial], scores: &ScoreSet) -> Result<String> {
    if trials.len() != scores.len() {
        return Err(Error::Dimension(format!(
            "{} trials but {} scores",
            trials.len(),
            scores.len()
        )));
    }
    let mut s = String::new();
    for (t, sc) in trials.iter().zip(&scores.scores) {
        let _ = writeln!(
            s,
            "{} {} {} {}",
            t.enroll_utt,
            t.test_utt,
            sc,
            label_token(t.target)
        );
    }
    Ok(s)
}

pub fn write_scores(trials: &[Trial], scores: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_scores(trials, scores)?).map_err(|e| Error::io(path, e))
}

pub fn parse_scores(text: &str, path: &Path) -> Result<(TrialList, ScoreSet)> {
    let mut trials = Vec::new();
    let mut values = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(parse_err(format!(
                "expected 4 fields, found {}",
                toks.len()
            )));
        }
        let score: f64 = toks[2]
            .parse()
            .map_err(|_| parse_err(format!("invalid score '{}'", toks[2])))?;
        if !score.is_finite() {
            return Err(parse_err(format!("non-finite score '{}'", toks[2])));
        }
        trials.push(Trial {
            enroll_utt: toks[0].to_string(),
            test_utt: toks[1].to_string(),
            target: parse_label(toks[3]).map_err(parse_err)?,
        });
        values.push(score);
    }
    let set = ScoreSet::new(values, trials.iter().map(|t| t.target).collect())?;
    Ok((trials, set))
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<(TrialList, ScoreSet)> {
    let path = path.as_ref();
    parse_scores(&read_lines(path)?.join("\n"), path)
}

/// Groups trials by the domain of their utterances: trials with both sides
/// in domain `d` go to `d`, mixed-domain trials to `"cross"`.
pub fn group_by_domain(
    trials: &[Trial],
    ds: &EmbeddingDataset,
) -> Result<BTreeMap<String, Vec<usize>>> {
    let lookup = ds.utterance_lookup();
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (k, t) in trials.iter().enumerate() {
        let i = resolve(&lookup, &t.enroll_utt, k, "enroll")?;
        let j = resolve(&lookup, &t.test_utt, k, "test")?;
        let (di, dj) = (&ds.record(i).domain_id, &ds.record(j).domain_id);
        let key = if di == dj {
            di.clone()
        } else {
            "cross".to_string()
        };
        groups.entry(key).or_default().push(k);
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub domain: String,
    pub scoring: String,
    pub projector: String,
    pub eer_percent: f64,
}

pub const REPORT_HEADER: &str = "domain,scoring,projector,eer_percent";

pub fn format_report_rows(rows: &[ReportRow]) -> String {
    let mut s = String::new();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.domain, r.scoring, r.projector, r.eer_percent
        );
    }
    s
}

pub fn format_report(rows: &[ReportRow]) -> String {
    format!("{REPORT_HEADER}\n{}", format_report_rows(rows))
}

/// Writes the report, or appends rows to an existing one (the header is
/// written only when the file is new or empty).
pub fn write_report(rows: &[ReportRow], path: impl AsRef<Path>, append: bool) -> Result<()> {
    let path = path.as_ref();
    let existing = if append && path.exists() {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?
    } else {
        String::new()
    };
    let text = if existing.trim().is_empty() {
        format_report(rows)
    } else {
        if existing.lines().next() != Some(REPORT_HEADER) {
            return Err(Error::Data(format!(
                "{}: existing file is not an EER report",
                path.display()
            )));
        }
        let mut t = existing;
        if !t.ends_with('\n') {
            t.push('\n');
        }
        t + &format_report_rows(rows)
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
