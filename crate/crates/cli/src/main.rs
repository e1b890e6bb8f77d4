use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use blendforge::eval::{self, Label, Manifest, Report, ScoreTable};
use blendforge::par::Exec;
use blendforge::pipeline::{self, CropConfig};
use blendforge::probes::{MaskMode, ProbeSpec};
use blendforge::sbi::SbiParams;
use blendforge::seam::{SeamConfig, DEFAULT_FRAMES_PER_VIDEO};
use blendforge::synth::SynthConfig;
use clap::{Parser, Subcommand, ValueEnum};
use indexmap::IndexMap;
use serde_json::json;

#[derive(Parser)]
#[command(name = "blendforge", version, about = "Blending-artifact datasets and detector evaluation")]
struct Cli {
    /// Worker threads for data-parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Base seed for generation.
    #[arg(long, global = true, env = "BLENDFORGE_SEED", default_value_t = 0)]
    seed: u64,

    /// Replace existing outputs.
    #[arg(long, global = true)]
    overwrite: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Hard,
    Soft,
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelArg {
    Real,
    Fake,
}

impl From<LabelArg> for Label {
    fn from(l: LabelArg) -> Self {
        match l {
            LabelArg::Real => Label::Real,
            LabelArg::Fake => Label::Fake,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Self-blended pseudo-fakes, one per real frame.
    GenSbi {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON file overriding generation parameters.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Real-on-Real brightness probes with matched real controls.
    GenProbes {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = blendforge::probes::default_deltas())]
        deltas: Vec<f32>,
        #[arg(long, value_enum, default_value = "soft")]
        mask: MaskArg,
        #[arg(long, default_value_t = blendforge::probes::DEFAULT_SOFT_SIGMA)]
        sigma: f32,
    },
    /// Seam score for every frame of a manifest, as CSV.
    Score {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// JSON seam-scorer configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Video-level AUROC per dataset, plus the mean.
    Auroc {
        /// Repeatable; pairs with --scores in order.
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
        /// Dataset names (default: manifest config or file stem).
        #[arg(long)]
        name: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_FRAMES_PER_VIDEO)]
        frames_per_video: usize,
        /// Full-precision results as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-key mean of score tables.
    Ensemble {
        #[arg(long, required = true)]
        scores: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Appends relabeled extra samples to a base manifest.
    MixManifest {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        extra: PathBuf,
        #[arg(long, value_enum)]
        assign: LabelArg,
        /// Configuration name recorded in the metadata, e.g. FF+SBI=R.
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "extra")]
        namespace: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// report.csv and report.md from AUROC results.
    Report {
        /// JSON object dataset -> AUROC, as written by `auroc --out`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        exclude: Vec<String>,
        #[arg(long, default_value = "seam")]
        method: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthetic face frames, landmarks and manifest for end-to-end runs.
    GenFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        videos: usize,
        #[arg(long, default_value_t = 1)]
        frames_per_video: usize,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| blendforge::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(serde_json::from_str(&text).map_err(|e| blendforge::Error::Schema {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?)
}

fn write_text(path: &Path, text: &str, overwrite: bool) -> Result<()> {
    pipeline::check_output_file(path, overwrite)?;
    std::fs::write(path, text).map_err(|source| blendforge::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

fn dataset_name(manifest: &Manifest, path: &Path) -> String {
    if let Some(c) = &manifest.metadata.config {
        return c.clone();
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset");
    if stem == "manifest" {
        if let Some(dir) = path.parent().and_then(Path::file_name).and_then(|s| s.to_str()) {
            return dir.to_string();
        }
    }
    stem.to_string()
}

fn run(cli: Cli) -> Result<()> {
    let exec = Exec::default();
    let seed = cli.seed;
    let overwrite = cli.overwrite;
    match cli.command {
        Command::GenSbi {
            manifest,
            landmarks,
            out,
            params,
        } => {
            let params: SbiParams = match params {
                Some(p) => read_json(&p)?,
                None => SbiParams::default(),
            };
            pipeline::prepare_output_dir(&out, overwrite)?;
            let m = pipeline::gen_sbi(&manifest, &landmarks, &out, &params, seed, &CropConfig::default(), exec)?;
            println!(
                "gen-sbi: {} real, {} fake, {} skipped -> {}",
                m.count(Label::Real),
                m.count(Label::Fake),
                m.skipped.len(),
                out.join(pipeline::MANIFEST_FILE).display()
            );
        }
        Command::GenProbes {
            manifest,
            landmarks,
            out,
            deltas,
            mask,
            sigma,
        } => {
            let spec = ProbeSpec {
                deltas,
                mask_mode: match mask {
                    MaskArg::Hard => MaskMode::Hard,
                    MaskArg::Soft => MaskMode::Soft { sigma },
                },
                seed,
            };
            spec.validate()?;
            pipeline::prepare_output_dir(&out, overwrite)?;
            let sets = pipeline::gen_probes(&manifest, &landmarks, &out, &spec, &CropConfig::default(), exec)?;
            for (name, m) in &sets {
                println!(
                    "{name}: {} fake, {} real, {} skipped",
                    m.count(Label::Fake),
                    m.count(Label::Real),
                    m.skipped.len()
                );
            }
        }
        Command::Score {
            manifest,
            out,
            config,
        } => {
            let config: SeamConfig = match config {
                Some(p) => read_json(&p)?,
                None => SeamConfig::default(),
            };
            pipeline::check_output_file(&out, overwrite)?;
            let (_, table) = pipeline::score_manifest(&manifest, &config, exec)?;
            write_text(&out, &table.to_csv(), true)?;
            println!("score: {} frames -> {}", table.len(), out.display());
        }
        Command::Auroc {
            manifest,
            scores,
            name,
            frames_per_video,
            out,
        } => {
            anyhow::ensure!(
                manifest.len() == scores.len(),
                blendforge::Error::InvalidParameter(format!(
                    "{} --manifest but {} --scores",
                    manifest.len(),
                    scores.len()
                ))
            );
            anyhow::ensure!(
                name.is_empty() || name.len() == manifest.len(),
                blendforge::Error::InvalidParameter("give one --name per --manifest or none".into())
            );
            if let Some(o) = &out {
                pipeline::check_output_file(o, overwrite)?;
            }
            let mut results: IndexMap<String, f64> = IndexMap::new();
            for (i, (mp, sp)) in manifest.iter().zip(&scores).enumerate() {
                let m = Manifest::load(mp)?;
                let t = ScoreTable::load(sp)?;
                let a = eval::video_auroc(&t, &m, frames_per_video)
                    .with_context(|| format!("dataset {}", mp.display()))?;
                let key = name.get(i).cloned().unwrap_or_else(|| dataset_name(&m, mp));
                anyhow::ensure!(
                    results.insert(key.clone(), a).is_none(),
                    blendforge::Error::InvalidParameter(format!("dataset name {key:?} used twice"))
                );
            }
            let report = Report::new("auroc", results.clone(), [])?;
            for (k, v) in &results {
                println!("{k}: {:.1}", v * 100.0);
            }
            println!("mean: {:.1}", report.mean()? * 100.0);
            if let Some(o) = out {
                let text = serde_json::to_string_pretty(&results)? + "\n";
                write_text(&o, &text, true)?;
            }
        }
        Command::Ensemble { scores, out } => {
            pipeline::check_output_file(&out, overwrite)?;
            let tables = scores.iter().map(ScoreTable::load).collect::<blendforge::Result<Vec<_>>>()?;
            let fused = eval::ensemble_mean(&tables)?;
            write_text(&out, &fused.to_csv(), true)?;
            println!("ensemble: {} tables, {} keys -> {}", tables.len(), fused.len(), out.display());
        }
        Command::MixManifest {
            base,
            extra,
            assign,
            name,
            namespace,
            out,
        } => {
            pipeline::check_output_file(&out, overwrite)?;
            let out_dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
            let b = pipeline::rebase_manifest(&Manifest::load(&base)?, &base, &out_dir)?;
            let e = pipeline::rebase_manifest(&Manifest::load(&extra)?, &extra, &out_dir)?;
            let mixed = eval::mix_manifests(&b, &e, assign.into(), &name, &namespace)?;
            write_text(&out, &mixed.to_json(), true)?;
            println!(
                "{name}: {} real, {} fake -> {}",
                mixed.count(Label::Real),
                mixed.count(Label::Fake),
                out.display()
            );
        }
        Command::Report {
            results,
            exclude,
            method,
            out,
        } => {
            let values: IndexMap<String, f64> = read_json(&results)?;
            let report = Report::new(method, values, exclude)?;
            let (csv, md) = (out.join("report.csv"), out.join("report.md"));
            write_text(&csv, &report.to_csv(), overwrite)?;
            write_text(&md, &report.to_markdown(), overwrite)?;
            println!("mean: {:.1}", report.mean()? * 100.0);
        }
        Command::GenFixtures {
            out,
            videos,
            frames_per_video,
        } => {
            let cfg = SynthConfig {
                frames_per_video,
                ..SynthConfig::default()
            };
            pipeline::prepare_output_dir(&out, overwrite)?;
            let m = pipeline::gen_fixtures(&out, videos, seed, &cfg, exec)?;
            println!("gen-fixtures: {} frames -> {}", m.records.len(), out.display());
        }
    }
    Ok(())
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    // Library errors already embed their source text; skip repeats.
    let mut message = String::new();
    for part in err.chain().map(|e| e.to_string()) {
        if !message.ends_with(&part) {
            if !message.is_empty() {
                message.push_str(": ");
            }
            message.push_str(&part);
        }
    }
    let mut body = json!({ "code": "error", "message": message });
    if let Some(e) = err.chain().find_map(|e| e.downcast_ref::<blendforge::Error>()) {
        body["code"] = json!(e.code());
        if let Some(p) = e.path() {
            body["path"] = json!(p.display().to_string());
        }
        match e {
            blendforge::Error::Schema { line, .. } => body["line"] = json!(line),
            blendforge::Error::Join { missing } => body["missing"] = json!(missing),
            _ => {}
        }
    }
    json!({ "error": body })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let body = json!({ "error": { "code": "usage", "message": e.to_string().trim_end() } });
            eprintln!("{body}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.threads {
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building the thread pool")
            .and_then(|pool| pool.install(|| run(cli))),
        _ => run(cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
