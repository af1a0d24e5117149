//! Reader for UCI EEG trial files and per-subject averaging.
//!
//! A trial file starts with `#` header lines naming the subject
//! (`# co2a0000364.rd`) and the condition (`# S1 obj , trial 0`), followed by
//! whitespace-separated rows `trial channel sample value` (the leading trial
//! column may be absent). The fourth character of the subject id gives the
//! group: `a` alcoholic (label 1), `c` control (label 0). Files may be gzipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::MatrixDataset;
use crate::error::{MvError, Result};
use crate::par::map_indices;

pub const TIME_POINTS: usize = 256;

/// Electrode order used for the columns of every trial matrix.
pub const CHANNELS: [&str; 64] = [
    "FP1", "FP2", "F7", "F8", "AF1", "AF2", "FZ", "F4", "F3", "FC6", "FC5", "FC2", "FC1", "T8", "T7", "CZ", "C3",
    "C4", "CP5", "CP6", "CP1", "CP2", "P3", "P4", "PZ", "P8", "P7", "PO2", "PO1", "O2", "O1", "X", "AF7", "AF8",
    "F5", "F6", "FT7", "FT8", "FPZ", "FC4", "FC3", "C6", "C5", "F2", "F1", "TP8", "TP7", "AFZ", "CP3", "CP4", "P5",
    "P6", "C1", "C2", "PO7", "PO8", "FCZ", "POZ", "OZ", "P2", "P1", "CPZ", "nd", "Y",
];

pub fn channel_index(name: &str) -> Option<usize> {
    CHANNELS.iter().position(|c| c.eq_ignore_ascii_case(name))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Group {
    Alcoholic,
    Control,
}

impl Group {
    pub fn label(self) -> u8 {
        match self {
            Group::Alcoholic => 1,
            Group::Control => 0,
        }
    }

    fn from_subject(subject: &str) -> Option<Self> {
        match subject.as_bytes().get(3) {
            Some(b'a') => Some(Group::Alcoholic),
            Some(b'c') => Some(Group::Control),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// `S1 obj`
    SingleStimulus,
    /// `S2 match`
    Matched,
    /// `S2 nomatch`
    Unmatched,
}

impl Condition {
    fn parse_header(text: &str) -> Option<Self> {
        let norm = text.split_whitespace().collect::<Vec<_>>().join(" ").to_ascii_lowercase();
        if norm.contains("s1 obj") {
            Some(Condition::SingleStimulus)
        } else if norm.contains("s2 nomatch") {
            Some(Condition::Unmatched)
        } else if norm.contains("s2 match") {
            Some(Condition::Matched)
        } else {
            None
        }
    }

    fn header_text(self) -> &'static str {
        match self {
            Condition::SingleStimulus => "S1 obj",
            Condition::Matched => "S2 match",
            Condition::Unmatched => "S2 nomatch",
        }
    }
}

/// Which trials [`ingest_eeg`] keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionFilter {
    #[default]
    SingleStimulus,
    Matched,
    Unmatched,
    All,
}

impl ConditionFilter {
    fn keeps(self, c: Condition) -> bool {
        match self {
            ConditionFilter::All => true,
            ConditionFilter::SingleStimulus => c == Condition::SingleStimulus,
            ConditionFilter::Matched => c == Condition::Matched,
            ConditionFilter::Unmatched => c == Condition::Unmatched,
        }
    }
}

impl FromStr for ConditionFilter {
    type Err = MvError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "single" | "single-stimulus" => Ok(ConditionFilter::SingleStimulus),
            "match" | "matched" => Ok(ConditionFilter::Matched),
            "nomatch" | "unmatched" => Ok(ConditionFilter::Unmatched),
            "all" => Ok(ConditionFilter::All),
            other => Err(MvError::InvalidInput(format!("unknown condition filter `{other}`"))),
        }
    }
}

impl fmt::Display for ConditionFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConditionFilter::SingleStimulus => "single-stimulus",
            ConditionFilter::Matched => "matched",
            ConditionFilter::Unmatched => "unmatched",
            ConditionFilter::All => "all",
        })
    }
}

/// One complete trial: `TIME_POINTS x 64` voltages in [`CHANNELS`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct EegTrialRecord {
    pub subject: String,
    pub group: Group,
    pub trial: u32,
    pub condition: Condition,
    pub voltages: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub file: String,
    pub trial: Option<u32>,
    pub reason: String,
}

/// Contents of one trial file.
#[derive(Debug, Clone, Default)]
pub struct ParsedFile {
    pub subject: Option<String>,
    pub trials: Vec<EegTrialRecord>,
    pub rejected: Vec<Rejection>,
    /// Trials dropped by the condition filter.
    pub skipped: usize,
}

struct TrialBuffer {
    values: Vec<f64>,
    seen: Vec<bool>,
    filled: usize,
    problem: Option<String>,
}

impl TrialBuffer {
    fn new() -> Self {
        let size = TIME_POINTS * CHANNELS.len();
        Self { values: vec![0.0; size], seen: vec![false; size], filled: 0, problem: None }
    }

    fn set(&mut self, channel: &str, sample: usize, value: f64) {
        if self.problem.is_some() {
            return;
        }
        let Some(c) = channel_index(channel) else {
            self.problem = Some(format!("unknown channel `{channel}`"));
            return;
        };
        if sample >= TIME_POINTS {
            self.problem = Some(format!("sample index {sample} outside 0..{TIME_POINTS}"));
            return;
        }
        let k = c * TIME_POINTS + sample;
        if self.seen[k] {
            self.problem = Some(format!("duplicate value for channel {channel} sample {sample}"));
            return;
        }
        self.seen[k] = true;
        self.values[k] = value;
        self.filled += 1;
    }

    fn finish(self) -> std::result::Result<DMatrix<f64>, String> {
        if let Some(p) = self.problem {
            return Err(p);
        }
        let want = self.values.len();
        if self.filled != want {
            return Err(format!("incomplete trial: {} of {want} values present", self.filled));
        }
        // Channel-major storage is exactly column-major TIME_POINTS x 64.
        Ok(DMatrix::from_vec(TIME_POINTS, CHANNELS.len(), self.values))
    }
}

fn subject_from_file_name(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    name.split('.').next().map(str::to_string).filter(|s| !s.is_empty())
}

fn open_text(path: &Path) -> Result<Box<dyn BufRead>> {
    let file = std::fs::File::open(path).map_err(|e| MvError::io(path, e))?;
    let gz = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let reader: Box<dyn Read> = if gz { Box::new(flate2::read::GzDecoder::new(file)) } else { Box::new(file) };
    Ok(Box::new(BufReader::new(reader)))
}

/// Parses one trial file from disk.
pub fn parse_eeg_file(path: &Path, filter: ConditionFilter) -> Result<ParsedFile> {
    let reader = open_text(path)?;
    parse_eeg_reader(reader, &path.display().to_string(), subject_from_file_name(path), filter)
}

/// Parses trial-file text. `fallback_subject` is used when no header names the subject.
pub fn parse_eeg_reader<R: BufRead>(
    reader: R,
    source: &str,
    fallback_subject: Option<String>,
    filter: ConditionFilter,
) -> Result<ParsedFile> {
    let parse_err = |line: usize, reason: String| MvError::Parse { file: source.to_string(), line, reason };
    let mut subject: Option<String> = None;
    let mut header_condition: Option<Condition> = None;
    let mut header_trial: Option<u32> = None;
    let mut trials: BTreeMap<u32, TrialBuffer> = BTreeMap::new();
    let mut out = ParsedFile::default();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| parse_err(lineno, e.to_string()))?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if let Some(header) = text.strip_prefix('#') {
            let header = header.trim();
            if subject.is_none() {
                if let Some(tok) = header.split_whitespace().next() {
                    if let Some(stem) = tok.strip_suffix(".rd") {
                        subject = Some(stem.to_string());
                    }
                }
            }
            if let Some(c) = Condition::parse_header(header) {
                header_condition = Some(c);
                header_trial = header
                    .split(|ch: char| ch == ',' || ch.is_whitespace())
                    .skip_while(|t| !t.eq_ignore_ascii_case("trial"))
                    .nth(1)
                    .and_then(|t| t.parse().ok());
            }
            continue;
        }
        // Data rows follow the headers; drop filtered trials without reading them.
        if let Some(c) = header_condition {
            if !filter.keeps(c) {
                out.skipped = 1;
                break;
            }
        }
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let (trial, channel, sample, value) = match tokens.as_slice() {
            [t, c, s, v] => {
                let t = t.parse::<u32>().map_err(|_| parse_err(lineno, format!("bad trial number `{t}`")))?;
                (t, *c, *s, *v)
            }
            [c, s, v] => (header_trial.unwrap_or(0), *c, *s, *v),
            _ => {
                return Err(parse_err(
                    lineno,
                    format!("expected `trial channel sample value`, found {} fields", tokens.len()),
                ))
            }
        };
        let sample = sample.parse::<usize>().map_err(|_| parse_err(lineno, format!("bad sample index `{sample}`")))?;
        let value = value.parse::<f64>().map_err(|_| parse_err(lineno, format!("bad voltage `{value}`")))?;
        if !value.is_finite() {
            return Err(parse_err(lineno, format!("non-finite voltage `{value}`")));
        }
        trials.entry(trial).or_insert_with(TrialBuffer::new).set(channel, sample, value);
    }

    let subject = subject.or(fallback_subject);
    out.subject = subject.clone();
    if out.skipped > 0 {
        return Ok(out);
    }
    let reject = |trial: Option<u32>, reason: String| Rejection { file: source.to_string(), trial, reason };
    let Some(subject) = subject else {
        out.rejected.push(reject(None, "no subject id in headers or file name".into()));
        return Ok(out);
    };
    let Some(group) = Group::from_subject(&subject) else {
        out.rejected.push(reject(None, format!("subject id `{subject}` does not encode a group")));
        return Ok(out);
    };
    let Some(condition) = header_condition else {
        out.rejected.push(reject(header_trial, "no condition header".into()));
        return Ok(out);
    };
    if trials.is_empty() {
        out.rejected.push(reject(header_trial, "no data rows".into()));
    }
    for (trial, buf) in trials {
        match buf.finish() {
            Ok(voltages) => {
                out.trials.push(EegTrialRecord { subject: subject.clone(), group, trial, condition, voltages })
            }
            Err(reason) => out.rejected.push(reject(Some(trial), reason)),
        }
    }
    Ok(out)
}

/// Reads exactly one complete trial; any rejection becomes an
/// [`MvError::IncompleteTrial`].
pub fn read_trial(path: &Path) -> Result<EegTrialRecord> {
    let parsed = parse_eeg_file(path, ConditionFilter::All)?;
    if let Some(r) = parsed.rejected.into_iter().next() {
        return Err(MvError::IncompleteTrial {
            file: r.file,
            trial: r.trial.map_or_else(|| "?".into(), |t| t.to_string()),
            reason: r.reason,
        });
    }
    parsed
        .trials
        .into_iter()
        .next()
        .ok_or_else(|| MvError::InvalidInput(format!("{} holds no trial", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectSummary {
    pub id: String,
    pub group: Group,
    pub trials: usize,
}

/// Averaged per-subject dataset plus bookkeeping.
#[derive(Debug, Clone)]
pub struct EegIngest {
    /// One `TIME_POINTS x 64` matrix per subject, ordered by subject id.
    pub dataset: MatrixDataset,
    pub subjects: Vec<SubjectSummary>,
    pub rejections: Vec<Rejection>,
    pub files_read: usize,
    pub skipped_trials: usize,
    pub condition: ConditionFilter,
}

impl EegIngest {
    pub fn channels(&self) -> Vec<String> {
        CHANNELS.iter().map(|c| c.to_string()).collect()
    }
}

/// Trial files below `dir`: names containing `.rd`, sorted by path.
pub fn trial_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| dir.to_path_buf());
            MvError::io(path, std::io::Error::other(e.to_string()))
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy();
        if name.starts_with('.') || name.ends_with(".tar") || name.ends_with(".tar.gz") {
            continue;
        }
        if name.contains(".rd") {
            files.push(entry.into_path());
        }
    }
    files.sort();
    Ok(files)
}

/// Parses every trial file under `dir` and averages the retained trials of each subject.
pub fn ingest_eeg(dir: &Path, filter: ConditionFilter) -> Result<EegIngest> {
    let files = trial_files(dir)?;
    if files.is_empty() {
        return Err(MvError::InvalidInput(format!("no EEG trial files (*.rd*) under {}", dir.display())));
    }
    let parsed = map_indices(files.len(), |i| parse_eeg_file(&files[i], filter));

    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut sums: BTreeMap<String, (Group, DMatrix<f64>, usize)> = BTreeMap::new();
    let mut rejections = Vec::new();
    let mut skipped = 0;
    for file in parsed {
        let file = file?;
        if let Some(s) = &file.subject {
            seen.insert(s.clone());
        }
        skipped += file.skipped;
        rejections.extend(file.rejected);
        for t in file.trials {
            let slot = sums
                .entry(t.subject.clone())
                .or_insert_with(|| (t.group, DMatrix::zeros(TIME_POINTS, CHANNELS.len()), 0));
            slot.1 += &t.voltages;
            slot.2 += 1;
        }
    }
    if let Some(missing) = seen.iter().find(|s| !sums.contains_key(*s)) {
        return Err(MvError::InvalidInput(format!("subject {missing} has no retained {filter} trials")));
    }
    if sums.is_empty() {
        return Err(MvError::InvalidInput("no complete trials found".into()));
    }

    let mut matrices = Vec::with_capacity(sums.len());
    let mut labels = Vec::with_capacity(sums.len());
    let mut ids = Vec::with_capacity(sums.len());
    let mut subjects = Vec::with_capacity(sums.len());
    for (id, (group, sum, count)) in sums {
        log::info!("subject {id}: {count} trials");
        matrices.push(sum / count as f64);
        labels.push(group.label());
        subjects.push(SubjectSummary { id: id.clone(), group, trials: count });
        ids.push(id);
    }
    let dataset = MatrixDataset::new(matrices, labels)?.with_ids(ids)?;
    Ok(EegIngest { dataset, subjects, rejections, files_read: files.len(), skipped_trials: skipped, condition: filter })
}

/// Shape of a deterministic synthetic data set in the trial-file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEeg {
    pub alcoholic: usize,
    pub control: usize,
    /// Single-stimulus trials per subject; one matched-stimulus trial is added as well.
    pub trials_per_subject: usize,
    /// Size of the rank-one group difference relative to the trial noise.
    pub signal: f64,
    pub seed: u64,
}

impl Default for SyntheticEeg {
    fn default() -> Self {
        Self { alcoholic: 18, control: 12, trials_per_subject: 2, signal: 1.0, seed: 2024 }
    }
}

/// Writes `<dir>/<subject>/<subject>.rd.NNN` files. Alcoholic subjects carry a
/// rank-one time-by-channel component of random size; everyone shares a
/// smooth background and subject-level nuisance.
pub fn write_synthetic_eeg(dir: &Path, spec: &SyntheticEeg) -> Result<Vec<PathBuf>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (p, q) = (TIME_POINTS, CHANNELS.len());
    let time: Vec<f64> = (0..p).map(|t| t as f64 / p as f64).collect();
    let signal_u: Vec<f64> = time.iter().map(|t| (std::f64::consts::TAU * 3.0 * t).sin() * (-2.0 * t).exp()).collect();
    let signal_v: Vec<f64> = (0..q).map(|c| (std::f64::consts::TAU * c as f64 / q as f64 + 0.3).cos()).collect();
    let nuisance_u: Vec<f64> = time.iter().map(|t| (std::f64::consts::TAU * 1.5 * t).cos()).collect();
    let background = DMatrix::from_fn(p, q, |t, c| 2.0 * (std::f64::consts::TAU * time[t] + c as f64 * 0.1).sin());
    let amp = Normal::new(spec.signal, 0.3 * spec.signal.abs()).map_err(|e| MvError::InvalidInput(e.to_string()))?;

    let mut written = Vec::new();
    let groups = std::iter::repeat_n(Group::Alcoholic, spec.alcoholic).chain(std::iter::repeat_n(Group::Control, spec.control));
    for (s, group) in groups.enumerate() {
        let tag = if group == Group::Alcoholic { 'a' } else { 'c' };
        let subject = format!("co2{tag}{:07}", 1000 + s);
        let a = if group == Group::Alcoholic { rng.sample(amp) } else { 0.0 };
        let nuisance_v: Vec<f64> = (0..q).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mean = DMatrix::from_fn(p, q, |t, c| {
            background[(t, c)] + 3.0 * a * signal_u[t] * signal_v[c] + 1.5 * nuisance_u[t] * nuisance_v[c]
        });
        let sub_dir = dir.join(&subject);
        std::fs::create_dir_all(&sub_dir).map_err(|e| MvError::io(&sub_dir, e))?;
        let conditions = std::iter::repeat_n(Condition::SingleStimulus, spec.trials_per_subject).chain([Condition::Matched]);
        for (trial, condition) in conditions.enumerate() {
            let path = sub_dir.join(format!("{subject}.rd.{trial:03}"));
            let mut out = std::io::BufWriter::new(std::fs::File::create(&path).map_err(|e| MvError::io(&path, e))?);
            let mut text = String::with_capacity(p * q * 20);
            text.push_str(&format!("# {subject}.rd\n# 1 trials, {q} chans, {p} samples\n# 3.906000 msecs uV\n"));
            text.push_str(&format!("# {} , trial {trial}\n", condition.header_text()));
            for (c, name) in CHANNELS.iter().enumerate() {
                text.push_str(&format!("# {name} chan {c}\n"));
                for t in 0..p {
                    let v = mean[(t, c)] + 2.0 * rng.sample::<f64, _>(StandardNormal);
                    text.push_str(&format!("{trial} {name} {t} {v:.3}\n"));
                }
            }
            out.write_all(text.as_bytes()).map_err(|e| MvError::io(&path, e))?;
            out.flush().map_err(|e| MvError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
