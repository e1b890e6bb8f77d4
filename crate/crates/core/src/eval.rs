//! Manifests, score tables, tie-aware AUROC, frame-to-video aggregation,
//! ensemble fusion, label-mix configurations and result tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seam;
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn flipped(self) -> Self {
        match self {
            Label::Real => Label::Fake,
            Label::Fake => Label::Real,
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "real" => Ok(Label::Real),
            "fake" => Ok(Label::Fake),
            _ => Err(Error::InvalidParameter(format!("label must be real or fake, got {s:?}"))),
        }
    }
}

pub type FrameKey = (String, u32);

fn key_string((video, frame): &FrameKey) -> String {
    format!("{video}:{frame}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Relative to the manifest's directory unless absolute.
    pub path: String,
    pub label: Label,
    pub video_id: String,
    pub frame_idx: u32,
    pub source_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SampleRecord {
    pub fn key(&self) -> FrameKey {
        (self.video_id.clone(), self.frame_idx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub source_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestMetadata {
    pub generator: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
}

impl ManifestMetadata {
    pub fn new(generator: impl Into<String>) -> Self {
        Self {
            generator: generator.into(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            base_seed: None,
            config: None,
            params: serde_json::Value::Null,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub metadata: ManifestMetadata,
    pub records: Vec<SampleRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkipRecord>,
}

impl Manifest {
    pub fn new(metadata: ManifestMetadata) -> Self {
        Self {
            metadata,
            records: Vec::new(),
            skipped: Vec::new(),
        }
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn count(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Unique keys and one label per video.
    pub fn check_integrity(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut labels: BTreeMap<&str, Label> = BTreeMap::new();
        for r in &self.records {
            if !seen.insert(r.key()) {
                return Err(Error::ManifestIntegrity(format!(
                    "duplicate record {}",
                    key_string(&r.key())
                )));
            }
            if *labels.entry(&r.video_id).or_insert(r.label) != r.label {
                return Err(Error::ManifestIntegrity(format!(
                    "video {:?} mixes real and fake frames",
                    r.video_id
                )));
            }
        }
        Ok(())
    }

    /// Integrity plus: nonempty, every referenced file exists.
    pub fn validate(&self, base_dir: &Path) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::ManifestIntegrity("manifest has no records".into()));
        }
        self.check_integrity()?;
        for r in &self.records {
            let p = self.resolve(base_dir, r);
            if !p.is_file() {
                return Err(Error::ManifestIntegrity(format!(
                    "record {} references missing file {}",
                    key_string(&r.key()),
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, base_dir: &Path, record: &SampleRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }
}

// -- score tables ----------------------------------------------------------

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    pub entries: BTreeMap<FrameKey, f64>,
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    video_id: String,
    frame_idx: u32,
    score: f64,
}

impl ScoreTable {
    pub fn insert(&mut self, video_id: impl Into<String>, frame_idx: u32, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite score {score}")));
        }
        self.entries.insert((video_id.into(), frame_idx), score);
        Ok(())
    }

    pub fn get(&self, video_id: &str, frame_idx: u32) -> Option<f64> {
        self.entries.get(&(video_id.to_string(), frame_idx)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `video_id,frame_idx,score` with a header; scores round-trip exactly.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for ((video_id, frame_idx), &score) in &self.entries {
            w.serialize(ScoreRow {
                video_id: video_id.clone(),
                frame_idx: *frame_idx,
                score,
            })
            .expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let schema = |line: usize, message: String| Error::Schema {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| schema(1, e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["video_id", "frame_idx", "score"] {
            return Err(schema(1, format!("expected header video_id,frame_idx,score, got {}", headers.iter().collect::<Vec<_>>().join(","))));
        }
        let mut table = ScoreTable::default();
        for row in rdr.deserialize::<ScoreRow>() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                schema(line, e.to_string())
            })?;
            let key = (row.video_id, row.frame_idx);
            if !row.score.is_finite() {
                return Err(schema(0, format!("non-finite score for {}", key_string(&key))));
            }
            if table.entries.insert(key.clone(), row.score).is_some() {
                return Err(schema(0, format!("duplicate key {}", key_string(&key))));
            }
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

// -- AUROC -----------------------------------------------------------------

/// Area under the ROC curve via the rank-sum statistic with midranks:
/// the probability that a fake outscores a real, ties counting one half.
pub fn auroc(scores: &[(f64, Label)]) -> Result<f64> {
    if let Some((s, _)) = scores.iter().find(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidInput(format!("score {s} is not a number")));
    }
    let n_fake = scores.iter().filter(|(_, l)| *l == Label::Fake).count();
    let n_real = scores.len() - n_fake;
    if n_fake == 0 || n_real == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both classes ({n_fake} fake, {n_real} real)"
        )));
    }
    let mut sorted: Vec<&(f64, Label)> = scores.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the fake rank sum, kept integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let fakes = sorted[i..j].iter().filter(|(_, l)| *l == Label::Fake).count() as u128;
        // midrank of 1-based ranks i+1..=j, doubled
        rank_sum2 += fakes * (i as u128 + 1 + j as u128);
        i = j;
    }
    let nf = n_fake as u128;
    let u2 = rank_sum2 - nf * (nf + 1);
    Ok(u2 as f64 / (2 * nf * n_real as u128) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoScore {
    pub video_id: String,
    pub score: f64,
    pub label: Label,
}

/// Per-video mean over evenly sampled frame scores, in video-id order.
pub fn aggregate_video(table: &ScoreTable, manifest: &Manifest, k: usize) -> Result<Vec<VideoScore>> {
    manifest.check_integrity()?;
    let mut videos: BTreeMap<&str, (Label, Vec<(u32, f64)>)> = BTreeMap::new();
    for r in &manifest.records {
        let entry = videos.entry(&r.video_id).or_insert((r.label, Vec::new()));
        if let Some(&s) = table.entries.get(&r.key()) {
            entry.1.push((r.frame_idx, s));
        }
    }
    let known: BTreeSet<FrameKey> = manifest.records.iter().map(SampleRecord::key).collect();
    let mut missing: Vec<String> = table
        .entries
        .keys()
        .filter(|k| !known.contains(*k))
        .map(key_string)
        .collect();
    missing.extend(
        videos
            .iter()
            .filter(|(_, (_, frames))| frames.is_empty())
            .map(|(v, _)| format!("{v}:*")),
    );
    if !missing.is_empty() {
        return Err(Error::Join { missing });
    }
    videos
        .into_iter()
        .map(|(video_id, (label, mut frames))| {
            frames.sort_by_key(|&(i, _)| i);
            let scores: Vec<f64> = frames.into_iter().map(|(_, s)| s).collect();
            Ok(VideoScore {
                video_id: video_id.to_string(),
                score: seam::score_video(&scores, k)?,
                label,
            })
        })
        .collect()
}

pub fn video_auroc(table: &ScoreTable, manifest: &Manifest, k: usize) -> Result<f64> {
    let videos = aggregate_video(table, manifest, k)?;
    let pairs: Vec<(f64, Label)> = videos.iter().map(|v| (v.score, v.label)).collect();
    auroc(&pairs)
}

// -- ensemble --------------------------------------------------------------

/// Per-key unweighted mean of tables sharing one key set.
pub fn ensemble_mean(tables: &[ScoreTable]) -> Result<ScoreTable> {
    let first = tables
        .first()
        .ok_or_else(|| Error::InvalidInput("ensemble of zero tables".into()))?;
    let all: BTreeSet<&FrameKey> = tables.iter().flat_map(|t| t.entries.keys()).collect();
    let missing: Vec<String> = all
        .iter()
        .filter(|k| tables.iter().any(|t| !t.entries.contains_key(**k)))
        .map(|k| key_string(k))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Join { missing });
    }
    let mut out = ScoreTable::default();
    for key in first.entries.keys() {
        let values: Vec<f64> = tables.iter().map(|t| t.entries[key]).collect();
        out.entries.insert(key.clone(), stats::exact_mean(&values));
    }
    Ok(out)
}

// -- label mixing ----------------------------------------------------------

/// Appends `extra` to `base` with every extra record relabeled to `assign`
/// and its video id prefixed by `namespace/`.
pub fn mix_manifests(
    base: &Manifest,
    extra: &Manifest,
    assign: Label,
    name: &str,
    namespace: &str,
) -> Result<Manifest> {
    base.check_integrity()?;
    let mut out = base.clone();
    let mut keys: BTreeSet<FrameKey> = base.records.iter().map(SampleRecord::key).collect();
    for r in &extra.records {
        let mut r = r.clone();
        r.video_id = format!("{namespace}/{}", r.video_id);
        r.label = assign;
        if !keys.insert(r.key()) {
            return Err(Error::ManifestIntegrity(format!(
                "record {} collides with the base manifest",
                key_string(&r.key())
            )));
        }
        out.records.push(r);
    }
    out.skipped.extend(extra.skipped.iter().cloned());
    out.metadata.config = Some(name.to_string());
    out.metadata.params = serde_json::json!({
        "mix": {
            "assign": assign,
            "namespace": namespace,
            "base": base.metadata,
            "extra": extra.metadata,
        }
    });
    out.check_integrity()?;
    Ok(out)
}

// -- report ----------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub method: String,
    pub results: IndexMap<String, f64>,
    pub excluded: BTreeSet<String>,
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

impl Report {
    pub fn new(method: impl Into<String>, results: IndexMap<String, f64>, excluded: impl IntoIterator<Item = String>) -> Result<Self> {
        let report = Self {
            method: method.into(),
            results,
            excluded: excluded.into_iter().collect(),
        };
        if report.results.is_empty() {
            return Err(Error::InvalidInput("report needs at least one dataset".into()));
        }
        if let Some(x) = report.excluded.iter().find(|x| !report.results.contains_key(*x)) {
            return Err(Error::InvalidInput(format!("excluded dataset {x:?} is not in the results")));
        }
        report.mean()?;
        Ok(report)
    }

    /// Unweighted mean over the non-excluded datasets.
    pub fn mean(&self) -> Result<f64> {
        let values: Vec<f64> = self
            .results
            .iter()
            .filter(|(k, _)| !self.excluded.contains(*k))
            .map(|(_, &v)| v)
            .collect();
        if values.is_empty() {
            return Err(Error::InvalidInput("every dataset is excluded from the mean".into()));
        }
        Ok(stats::exact_mean(&values))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string()];
        header.extend(self.results.keys().cloned());
        header.push("Mean".into());
        w.write_record(&header).expect("in-memory csv write");
        let mut row = vec![self.method.clone()];
        row.extend(self.results.values().map(|&v| pct(v)));
        row.push(pct(self.mean().expect("validated on construction")));
        w.write_record(&row).expect("in-memory csv write");
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
    }

    /// Excluded cells are parenthesized and listed under the table.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let names: Vec<&str> = self.results.keys().map(String::as_str).collect();
        let _ = writeln!(s, "| Method | {} | Mean |", names.join(" | "));
        let _ = writeln!(s, "|---|{}---:|", "---:|".repeat(names.len()));
        let cells: Vec<String> = self
            .results
            .iter()
            .map(|(k, &v)| {
                if self.excluded.contains(k) {
                    format!("({})", pct(v))
                } else {
                    pct(v)
                }
            })
            .collect();
        let mean = pct(self.mean().expect("validated on construction"));
        let _ = writeln!(s, "| {} | {} | {mean} |", self.method, cells.join(" | "));
        if !self.excluded.is_empty() {
            let list: Vec<&str> = self.excluded.iter().map(String::as_str).collect();
            let _ = writeln!(s, "\nExcluded from the mean: {}", list.join(", "));
        }
        s
    }
}
