//! File-level jobs: read a manifest of real frames plus a landmark file,
//! crop faces, and write generated images, masks, sidecars and manifests.
//!
//! Output trees are a pure function of inputs and parameters; nothing
//! time- or host-dependent is written.

use std::path::{Component, Path, PathBuf};

use indexmap::IndexMap;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{Label, Manifest, ManifestMetadata, SampleRecord, ScoreTable, SkipRecord};
use crate::geometry::{self, CropRect, LandmarkFile, LandmarkSet};
use crate::par::Exec;
use crate::probes::{self, ProbeFrame, ProbeSpec};
use crate::raster::ImageBuffer;
use crate::sbi::{self, SbiDraw, SbiOutcome, SbiParams};
use crate::seam::{self, SeamConfig};
use crate::synth::{self, SynthConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASETS_FILE: &str = "datasets.json";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct CropConfig {
    pub margin: f64,
    pub size: usize,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            margin: 1.3,
            size: 224,
        }
    }
}

/// A real input frame after face cropping. `face` is an error message when
/// the frame has to be skipped.
#[derive(Clone, Debug)]
pub struct CroppedFrame {
    pub record: SampleRecord,
    pub source_id: String,
    pub stem: String,
    pub face: std::result::Result<(ImageBuffer, LandmarkSet, CropRect), String>,
}

pub fn source_id(record: &SampleRecord) -> String {
    format!("{}/{}", record.video_id, record.frame_idx)
}

/// File-name stem for a record: the video id with unsafe characters
/// replaced, plus the zero-padded frame index.
pub fn record_stem(record: &SampleRecord) -> String {
    let vid: String = record
        .video_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{vid}_{:05}", record.frame_idx)
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads the real records of a manifest and crops each around its
/// landmarks. Unreadable images are fatal; landmark and geometry problems
/// become per-frame skips.
pub fn load_real_frames(
    manifest_path: &Path,
    landmarks_path: &Path,
    crop: &CropConfig,
    exec: Exec,
) -> Result<(Manifest, Vec<CroppedFrame>)> {
    let manifest = Manifest::load(manifest_path)?;
    let landmarks = LandmarkFile::load(landmarks_path)?;
    let base = manifest_dir(manifest_path);
    manifest.validate(&base)?;
    let reals: Vec<&SampleRecord> = manifest.records.iter().filter(|r| r.label == Label::Real).collect();
    let mut stems = std::collections::BTreeSet::new();
    for r in &reals {
        if !stems.insert(record_stem(r)) {
            return Err(Error::ManifestIntegrity(format!(
                "records collide on output name {}",
                record_stem(r)
            )));
        }
    }
    let frames = exec.try_map(&reals, |r| -> Result<CroppedFrame> {
        let image = ImageBuffer::load_png(manifest.resolve(&base, r))?;
        let face = match landmarks.lookup(&r.path) {
            None => Err("missing landmarks".to_string()),
            Some(lm) => lm
                .and_then(|lm| geometry::crop_face(&image, &lm, crop.margin, crop.size))
                .map_err(|e| e.to_string()),
        };
        Ok(CroppedFrame {
            record: (*r).clone(),
            source_id: source_id(r),
            stem: record_stem(r),
            face,
        })
    })?;
    Ok((manifest, frames))
}

/// Makes `dir` ready for a fresh artifact tree. An existing non-empty
/// directory is only replaced with `overwrite`, and only if it looks like
/// a previous output of this toolkit.
pub fn prepare_output_dir(dir: &Path, overwrite: bool) -> Result<()> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            if !overwrite {
                return Err(Error::InvalidInput(format!(
                    "output directory {} is not empty (use --overwrite)",
                    dir.display()
                )));
            }
            if !dir.join(MANIFEST_FILE).is_file() && !dir.join(DATASETS_FILE).is_file() {
                return Err(Error::InvalidInput(format!(
                    "refusing to overwrite {}: it holds no {MANIFEST_FILE} or {DATASETS_FILE}",
                    dir.display()
                )));
            }
            std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Refuses to clobber an existing file unless `overwrite`.
pub fn check_output_file(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() && !overwrite {
        return Err(Error::InvalidInput(format!(
            "{} already exists (use --overwrite)",
            path.display()
        )));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

fn mkdirs(dir: &Path, subdirs: &[&str]) -> Result<()> {
    for s in subdirs {
        let p = dir.join(s);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// JSON value of `v` that keeps f32 fields at their shortest decimal form.
fn json_value(v: &impl Serialize) -> serde_json::Value {
    serde_json::from_str(&serde_json::to_string(v).expect("params serialize")).expect("valid json")
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("sidecar serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn skip_records(frames: &[CroppedFrame]) -> Vec<SkipRecord> {
    frames
        .iter()
        .filter_map(|f| {
            f.face.as_ref().err().map(|reason| SkipRecord {
                source_id: f.source_id.clone(),
                reason: reason.clone(),
            })
        })
        .collect()
}

// -- gen-sbi ---------------------------------------------------------------

#[derive(Serialize)]
struct SbiSidecar<'a> {
    source_id: &'a str,
    source_path: &'a str,
    crop: &'a CropRect,
    draw: &'a SbiDraw,
}

/// One pseudo-fake per real frame. Writes `real/`, `fake/`, `masks/`,
/// `params/` and a manifest pairing every fake with its real crop.
pub fn gen_sbi(
    manifest_path: &Path,
    landmarks_path: &Path,
    out_dir: &Path,
    params: &SbiParams,
    base_seed: u64,
    crop: &CropConfig,
    exec: Exec,
) -> Result<Manifest> {
    params.validate()?;
    let (_, frames) = load_real_frames(manifest_path, landmarks_path, crop, exec)?;
    mkdirs(out_dir, &["real", "fake", "masks", "params"])?;

    // None: skipped at crop time; Some(Err): generation itself failed.
    let outcomes = exec.try_map(&frames, |f| -> Result<Option<std::result::Result<SbiDraw, String>>> {
        let Ok((image, lm, rect)) = &f.face else {
            return Ok(None);
        };
        match sbi::generate_one(&f.source_id, image, Some(lm), params, base_seed) {
            SbiOutcome::Skipped { reason, .. } => Ok(Some(Err(reason))),
            SbiOutcome::Generated(s) => {
                image.save_png(out_dir.join("real").join(format!("{}.png", f.stem)))?;
                s.image.save_png(out_dir.join("fake").join(format!("{}.png", f.stem)))?;
                s.mask_used.save_png(out_dir.join("masks").join(format!("{}.png", f.stem)))?;
                write_json(
                    &out_dir.join("params").join(format!("{}.json", f.stem)),
                    &SbiSidecar {
                        source_id: &f.source_id,
                        source_path: &f.record.path,
                        crop: rect,
                        draw: &s.param_record,
                    },
                )?;
                Ok(Some(Ok(s.param_record)))
            }
        }
    })?;

    let mut metadata = ManifestMetadata::new("gen-sbi");
    metadata.base_seed = Some(base_seed);
    metadata.params = serde_json::json!({ "sbi": json_value(params), "crop": crop });
    let mut manifest = Manifest::new(metadata);
    manifest.skipped = skip_records(&frames);
    for (f, draw) in frames.iter().zip(&outcomes) {
        match draw {
            Some(Ok(d)) => {
                manifest.records.push(SampleRecord {
                    path: format!("real/{}.png", f.stem),
                    label: Label::Real,
                    video_id: f.record.video_id.clone(),
                    frame_idx: f.record.frame_idx,
                    source_tag: "real".into(),
                    seed: None,
                });
                manifest.records.push(SampleRecord {
                    path: format!("fake/{}.png", f.stem),
                    label: Label::Fake,
                    video_id: format!("sbi/{}", f.record.video_id),
                    frame_idx: f.record.frame_idx,
                    source_tag: "sbi".into(),
                    seed: Some(d.seed),
                });
            }
            Some(Err(reason)) => manifest.skipped.push(SkipRecord {
                source_id: f.source_id.clone(),
                reason: reason.clone(),
            }),
            None => {}
        }
    }
    manifest.skipped.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    manifest.check_integrity()?;
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

// -- gen-probes ------------------------------------------------------------

#[derive(Serialize)]
struct ProbeSidecar {
    source_id: String,
    delta: f32,
    delta_global: f32,
    region_fraction: f64,
}

/// One sub-dataset directory per delta, each with `fake/`, `real/`,
/// `params.json` and its own manifest; `datasets.json` indexes them.
pub fn gen_probes(
    manifest_path: &Path,
    landmarks_path: &Path,
    out_dir: &Path,
    spec: &ProbeSpec,
    crop: &CropConfig,
    exec: Exec,
) -> Result<IndexMap<String, Manifest>> {
    spec.validate()?;
    let (_, frames) = load_real_frames(manifest_path, landmarks_path, crop, exec)?;
    let probe_frames: Vec<ProbeFrame> = frames
        .iter()
        .map(|f| ProbeFrame {
            source_id: f.source_id.clone(),
            image: f.face.as_ref().map(|(img, ..)| img.clone()).unwrap_or_else(|_| {
                ImageBuffer::filled(1, 1, [0.0; 3]).expect("1x1 placeholder")
            }),
            landmarks: f.face.as_ref().ok().map(|(_, lm, _)| lm.clone()),
        })
        .collect();
    let subsets = probes::generate_probe_dataset_with(&probe_frames, spec, exec)?;

    let mut index = IndexMap::new();
    let mut manifests = IndexMap::new();
    for subset in &subsets {
        if manifests.contains_key(&subset.name) {
            return Err(Error::InvalidParameter(format!("duplicate delta for {}", subset.name)));
        }
        let dir = out_dir.join(&subset.name);
        mkdirs(&dir, &["fake", "real"])?;
        let jobs: Vec<(&CroppedFrame, &probes::ProbePair)> = frames
            .iter()
            .zip(&subset.pairs)
            .filter_map(|(f, p)| p.as_ref().ok().map(|p| (f, p)))
            .collect();
        exec.try_map(&jobs, |(f, p)| -> Result<()> {
            p.fake.save_png(dir.join("fake").join(format!("{}.png", f.stem)))?;
            p.matched_real.save_png(dir.join("real").join(format!("{}.png", f.stem)))
        })?;

        let mut metadata = ManifestMetadata::new("gen-probes");
        metadata.base_seed = Some(spec.seed);
        metadata.config = Some(subset.name.clone());
        metadata.params = serde_json::json!({
            "delta": json_value(&subset.delta),
            "mask_mode": json_value(&spec.mask_mode),
            "crop": crop,
        });
        let mut manifest = Manifest::new(metadata);
        let mut sidecar = Vec::new();
        for (f, pair) in frames.iter().zip(&subset.pairs) {
            match pair {
                Ok(p) => {
                    for (label, prefix, tag) in [
                        (Label::Fake, "fake", format!("probe-{}", spec.mask_mode.name())),
                        (Label::Real, "real", "probe-matched-real".to_string()),
                    ] {
                        manifest.records.push(SampleRecord {
                            path: format!("{prefix}/{}.png", f.stem),
                            label,
                            video_id: format!("{prefix}/{}", f.record.video_id),
                            frame_idx: f.record.frame_idx,
                            source_tag: tag,
                            seed: None,
                        });
                    }
                    sidecar.push(ProbeSidecar {
                        source_id: f.source_id.clone(),
                        delta: p.delta,
                        delta_global: p.delta_global,
                        region_fraction: p.region_fraction,
                    });
                }
                Err(reason) => manifest.skipped.push(SkipRecord {
                    source_id: f.source_id.clone(),
                    reason: reason.clone(),
                }),
            }
        }
        manifest.check_integrity()?;
        manifest.save(dir.join(MANIFEST_FILE))?;
        write_json(&dir.join("params.json"), &sidecar)?;
        index.insert(subset.name.clone(), format!("{}/{MANIFEST_FILE}", subset.name));
        manifests.insert(subset.name.clone(), manifest);
    }
    write_json(&out_dir.join(DATASETS_FILE), &index)?;
    Ok(manifests)
}

// -- score -----------------------------------------------------------------

/// Seam score of every record in a manifest.
pub fn score_manifest(manifest_path: &Path, config: &SeamConfig, exec: Exec) -> Result<(Manifest, ScoreTable)> {
    config.validate()?;
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_dir(manifest_path);
    manifest.validate(&base)?;
    let scores = exec.try_map(&manifest.records, |r| -> Result<f64> {
        let img = ImageBuffer::load_png(manifest.resolve(&base, r))?;
        Ok(seam::score_frame_with(&img, config)?.value)
    })?;
    let mut table = ScoreTable::default();
    for (r, s) in manifest.records.iter().zip(scores) {
        table.insert(r.video_id.clone(), r.frame_idx, s)?;
    }
    Ok((manifest, table))
}

// -- mix-manifest ----------------------------------------------------------

fn absolute(p: &Path) -> Result<PathBuf> {
    let abs = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map_err(|e| Error::io(p, e))?.join(p)
    };
    let mut out = PathBuf::new();
    for c in abs.components() {
        match c {
            Component::ParentDir => {
                out.pop();
            }
            Component::CurDir => {}
            other => out.push(other),
        }
    }
    Ok(out)
}

/// `target` expressed relative to directory `from`.
pub fn relative_path(target: &Path, from: &Path) -> Result<String> {
    let t = absolute(target)?;
    let f = absolute(from)?;
    let tc: Vec<Component> = t.components().collect();
    let fc: Vec<Component> = f.components().collect();
    let common = tc.iter().zip(&fc).take_while(|(a, b)| a == b).count();
    let mut rel = PathBuf::new();
    for _ in common..fc.len() {
        rel.push("..");
    }
    for c in &tc[common..] {
        rel.push(c);
    }
    rel.to_str()
        .map(|s| s.replace('\\', "/"))
        .ok_or_else(|| Error::InvalidInput(format!("non-UTF-8 path {}", rel.display())))
}

/// Rewrites record paths so they resolve from `out_dir`.
pub fn rebase_manifest(manifest: &Manifest, manifest_path: &Path, out_dir: &Path) -> Result<Manifest> {
    let base = manifest_dir(manifest_path);
    let mut out = manifest.clone();
    for r in &mut out.records {
        let p = manifest.resolve(&base, r);
        r.path = relative_path(&p, out_dir)?;
    }
    Ok(out)
}

// -- fixtures --------------------------------------------------------------

/// Writes a synthetic corpus: `frames/*.png`, `landmarks.json` keyed by
/// file name, and a manifest of real records.
pub fn gen_fixtures(out_dir: &Path, n_videos: usize, seed: u64, cfg: &SynthConfig, exec: Exec) -> Result<Manifest> {
    cfg.validate()?;
    let videos: Vec<usize> = (0..n_videos).collect();
    mkdirs(out_dir, &["frames"])?;
    let frames = exec.try_map(&videos, |&v| -> Result<Vec<synth::SynthFrame>> {
        let mut frames = synth::synth_corpus_video(v, seed, cfg)?;
        for f in &mut frames {
            f.image.save_png(out_dir.join("frames").join(f.landmarks.image_ref()))?;
        }
        Ok(frames)
    })?;
    let mut metadata = ManifestMetadata::new("gen-fixtures");
    metadata.base_seed = Some(seed);
    metadata.params = serde_json::json!({ "synth": cfg, "videos": n_videos });
    let mut manifest = Manifest::new(metadata);
    let mut landmarks = LandmarkFile::default();
    for f in frames.into_iter().flatten() {
        let name = f.landmarks.image_ref().to_string();
        manifest.records.push(SampleRecord {
            path: format!("frames/{name}"),
            label: Label::Real,
            video_id: f.video_id,
            frame_idx: f.frame_idx,
            source_tag: "synthetic".into(),
            seed: None,
        });
        landmarks.frames.insert(name, f.landmarks.points().to_vec());
    }
    landmarks.save(out_dir.join("landmarks.json"))?;
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}
