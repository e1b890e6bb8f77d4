//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use blendforge::blend::{alpha_blend, collapse_pyramid, laplacian_pyramid, poisson_blend, Plane, PoissonParams};
use blendforge::eval::{self, auroc, ensemble_mean, Label, Manifest, ManifestMetadata, SampleRecord, ScoreTable};
use blendforge::geometry::Mask;
use blendforge::raster::ImageBuffer;
use blendforge::seam;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const BIN: &str = env!("CARGO_BIN_EXE_blendforge");
const FIXTURE_VIDEOS: usize = 50;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    ImageBuffer::from_planar(w, h, (0..w * h * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
}

fn run_cli(args: &[&str]) -> String {
    let out = Command::new(BIN).args(args).env_remove("BLENDFORGE_SEED").output().expect("spawn cli");
    assert!(
        out.status.success(),
        "blendforge {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tree_digest(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&p).unwrap())));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn combined(digest: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in digest {
        h.update(k.as_bytes());
        h.update(v.as_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

// -- compositing -------------------------------------------------------------

fn alpha_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases: Vec<(ImageBuffer, ImageBuffer)> = (0..100)
        .map(|_| (random_image(64, 64, &mut rng), random_image(64, 64, &mut rng)))
        .collect();
    let ones = Mask::filled(64, 64, 1.0).unwrap();
    let zeros = Mask::filled(64, 64, 0.0).unwrap();
    let half = Mask::filled(64, 64, 0.5).unwrap();
    let start = Instant::now();
    let mut bad = 0;
    for (fg, bg) in &cases {
        bad += usize::from(alpha_blend(fg, bg, &ones).unwrap() != *fg);
        bad += usize::from(alpha_blend(fg, bg, &zeros).unwrap() != *bg);
        let mid = alpha_blend(fg, bg, &half).unwrap();
        let want: Vec<f32> = fg.samples().iter().zip(bg.samples()).map(|(f, b)| (f + b) / 2.0).collect();
        bad += usize::from(mid.samples() != want.as_slice());
    }
    let took = start.elapsed();
    outcome(
        bad == 0 && took < Duration::from_secs(1),
        format!("{bad} mismatches over 300 identities, {took:.2?}"),
    )
}

fn pyramid_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let data: Vec<f32> = (0..64 * 64).map(|_| rng.random::<f32>()).collect();
        for levels in 1..=4 {
            let bands = laplacian_pyramid(Plane::new(64, 64, data.clone()), levels);
            let back = collapse_pyramid(&bands);
            let mse = back.data.iter().zip(&data).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / data.len() as f64;
            worst = worst.max(mse.sqrt());
        }
    }
    outcome(worst <= 1e-5, format!("worst reconstruction RMS {worst:.2e}"))
}

/// Dense Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

fn poisson_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (w, h) = (16usize, 16usize);
    let (mut worst_err, mut worst_time) = (0.0f64, Duration::ZERO);
    for _ in 0..20 {
        let fg = random_image(w, h, &mut rng);
        let bg = random_image(w, h, &mut rng);
        let (x0, y0) = (rng.random_range(1..=w - 7), rng.random_range(1..=h - 7));
        let inside = |x: usize, y: usize| (x0..x0 + 6).contains(&x) && (y0..y0 + 6).contains(&y);
        let mask = Mask::from_fn(w, h, |x, y| if inside(x, y) { 1.0 } else { 0.0 }).unwrap();

        let start = Instant::now();
        let out = poisson_blend(&fg, &bg, &mask, &PoissonParams::default()).unwrap();
        worst_time = worst_time.max(start.elapsed());

        let unknowns: Vec<(usize, usize)> = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| inside(x, y)).collect();
        let index: BTreeMap<(usize, usize), usize> = unknowns.iter().enumerate().map(|(i, &p)| (p, i)).collect();
        for c in 0..3 {
            let n = unknowns.len();
            let mut a = vec![vec![0.0; n]; n];
            let mut b = vec![0.0; n];
            for (i, &(x, y)) in unknowns.iter().enumerate() {
                a[i][i] = 4.0;
                for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
                    b[i] += (fg.get(c, x, y) - fg.get(c, nx, ny)) as f64;
                    match index.get(&(nx, ny)) {
                        Some(&j) => a[i][j] = -1.0,
                        None => b[i] += bg.get(c, nx, ny) as f64,
                    }
                }
            }
            let sol = dense_solve(a, b);
            for y in 0..h {
                for x in 0..w {
                    let want = match index.get(&(x, y)) {
                        Some(&i) => sol[i].clamp(0.0, 1.0),
                        None => bg.get(c, x, y) as f64,
                    };
                    worst_err = worst_err.max((out.image.get(c, x, y) as f64 - want).abs());
                }
            }
        }
    }
    outcome(
        worst_err <= 1e-4 && worst_time < Duration::from_secs(1),
        format!("max abs error {worst_err:.2e}, slowest solve {worst_time:.2?}"),
    )
}

// -- metrics -----------------------------------------------------------------

fn auroc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(2..=20);
        let mut table: Vec<(f64, Label)> = (0..n)
            .map(|_| {
                let s = if rng.random_bool(0.6) {
                    rng.random_range(0..levels) as f64 / levels as f64
                } else {
                    rng.random::<f64>()
                };
                (s, if rng.random_bool(0.5) { Label::Fake } else { Label::Real })
            })
            .collect();
        table[0].1 = Label::Fake;
        table[1].1 = Label::Real;
        let (mut num, mut pairs) = (0.0f64, 0.0f64);
        for &(f, lf) in &table {
            for &(r, lr) in &table {
                if lf == Label::Fake && lr == Label::Real {
                    pairs += 1.0;
                    num += if f > r { 1.0 } else if f == r { 0.5 } else { 0.0 };
                }
            }
        }
        worst = worst.max((auroc(&table).unwrap() - num / pairs).abs());
    }
    outcome(worst <= 1e-12, format!("max |rank-sum - brute force| {worst:.1e} over 1000 tables"))
}

fn record(video: &str, label: Label, tag: &str) -> SampleRecord {
    SampleRecord {
        path: format!("{video}.png"),
        label,
        video_id: video.into(),
        frame_idx: 0,
        source_tag: tag.into(),
        seed: None,
    }
}

fn immunization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut base = Manifest::new(ManifestMetadata::new("acceptance"));
    base.records.extend((0..720).map(|i| record(&format!("real{i}"), Label::Real, "real")));
    base.records.extend((0..2880).map(|i| record(&format!("fake{i}"), Label::Fake, "native-fake")));
    let mut extra = Manifest::new(ManifestMetadata::new("acceptance"));
    extra.records.extend((0..720).map(|i| record(&format!("{i}"), Label::Fake, "sbi")));

    let sbi_f = eval::mix_manifests(&base, &extra, Label::Fake, "FF+SBI=F", "sbi").unwrap();
    let sbi_r = eval::mix_manifests(&base, &extra, Label::Real, "FF+SBI=R", "sbi").unwrap();
    // The scorer flags every blended sample, whatever its label.
    let mut scores = ScoreTable::default();
    for r in &sbi_f.records {
        let blended = r.source_tag != "real";
        let s = if blended { rng.random_range(0.55..1.0) } else { rng.random_range(0.0..0.6) };
        scores.insert(r.video_id.clone(), r.frame_idx, s).unwrap();
    }
    let af = eval::video_auroc(&scores, &sbi_f, 32).unwrap();
    let ar = eval::video_auroc(&scores, &sbi_r, 32).unwrap();
    let counts_ok = (sbi_f.count(Label::Real), sbi_f.count(Label::Fake)) == (720, 3600)
        && (sbi_r.count(Label::Real), sbi_r.count(Label::Fake)) == (1440, 2880);
    outcome(
        ar < af && counts_ok,
        format!("SBI=R {:.1} < SBI=F {:.1}", ar * 100.0, af * 100.0),
    )
}

fn ensemble_parity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut failures = 0;
    for _ in 0..200 {
        let mut t = ScoreTable::default();
        for i in 0..50 {
            t.insert(format!("v{}", i % 7), i, rng.random::<f64>()).unwrap();
        }
        let k = rng.random_range(1..=9);
        failures += usize::from(ensemble_mean(&vec![t.clone(); k]).unwrap() != t);
        let anti = ScoreTable {
            entries: t.entries.iter().map(|(key, &p)| (key.clone(), 1.0 - p)).collect(),
        };
        let fused = ensemble_mean(&[t, anti]).unwrap();
        failures += usize::from(!fused.entries.values().all(|&v| v == 0.5));
    }
    outcome(failures == 0, format!("{failures} inexact results over 400 fusions"))
}

// -- pipelines ---------------------------------------------------------------

fn determinism(fixtures: &Path, work: &Path) -> Outcome {
    let m = fixtures.join("manifest.json");
    let l = fixtures.join("landmarks.json");
    let (m, l) = (m.to_str().unwrap(), l.to_str().unwrap());
    let mut digests = Vec::new();
    for (run, threads) in [("a", "2"), ("b", "1")] {
        let sbi = work.join(format!("sbi_{run}"));
        let probes = work.join(format!("probes_{run}"));
        run_cli(&["gen-sbi", "--manifest", m, "--landmarks", l, "--out", sbi.to_str().unwrap(), "--seed", "7", "--threads", threads]);
        run_cli(&[
            "gen-probes", "--manifest", m, "--landmarks", l, "--out", probes.to_str().unwrap(),
            "--deltas", "0,0.3,1", "--threads", threads,
        ]);
        digests.push((tree_digest(&sbi), tree_digest(&probes)));
    }
    let same = digests[0] == digests[1];
    let files = digests[0].0.len() + digests[0].1.len();
    outcome(
        same && files > 0,
        format!(
            "{files} files, sbi tree {} probe tree {}, reruns {}",
            combined(&digests[0].0),
            combined(&digests[0].1),
            if same { "identical" } else { "differ" }
        ),
    )
}

fn score_subsets(root: &Path) -> Vec<(String, f64)> {
    let index: indexmap::IndexMap<String, String> =
        serde_json::from_str(&std::fs::read_to_string(root.join("datasets.json")).unwrap()).unwrap();
    index
        .iter()
        .map(|(name, rel)| {
            let manifest = root.join(rel);
            let scores = root.join(format!("{name}.csv"));
            run_cli(&["score", "--manifest", manifest.to_str().unwrap(), "--out", scores.to_str().unwrap()]);
            let m = Manifest::load(&manifest).unwrap();
            let t = ScoreTable::load(&scores).unwrap();
            (name.clone(), eval::video_auroc(&t, &m, seam::DEFAULT_FRAMES_PER_VIDEO).unwrap())
        })
        .collect()
}

fn probe_protocol(fixtures: &Path, work: &Path) -> (Outcome, Vec<(String, f64)>, Vec<(String, f64)>) {
    let m = fixtures.join("manifest.json");
    let l = fixtures.join("landmarks.json");
    let (hard, soft) = (work.join("probes_hard"), work.join("probes_soft"));
    run_cli(&["gen-probes", "--manifest", m.to_str().unwrap(), "--landmarks", l.to_str().unwrap(), "--out", hard.to_str().unwrap(), "--mask", "hard"]);
    // Default probe spec: soft mask, sigma 7, eleven deltas.
    run_cli(&["gen-probes", "--manifest", m.to_str().unwrap(), "--landmarks", l.to_str().unwrap(), "--out", soft.to_str().unwrap()]);

    let subdirs = |root: &Path| std::fs::read_dir(root).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    let (n_soft, n_hard) = (subdirs(&soft), subdirs(&hard));

    let zero = hard.join("delta_0_hard");
    let zm = Manifest::load(zero.join("manifest.json")).unwrap();
    let fakes: Vec<&SampleRecord> = zm.records.iter().filter(|r| r.label == Label::Fake).collect();
    let bit_exact = fakes.len() == FIXTURE_VIDEOS
        && fakes.iter().all(|r| {
            let twin = zero.join(r.path.replacen("fake/", "real/", 1));
            std::fs::read(zero.join(&r.path)).unwrap() == std::fs::read(twin).unwrap()
        });

    let hard_auc = score_subsets(&hard);
    let soft_auc = score_subsets(&soft);
    let zero_auc = hard_auc[0].1;
    let pass = n_soft == 11 && n_hard == 11 && bit_exact && (zero_auc - 0.5).abs() <= 0.02;
    (
        outcome(
            pass,
            format!(
                "{n_soft} soft / {n_hard} hard sub-datasets, delta 0 hard fake==real: {bit_exact}, AUROC {zero_auc:.4}"
            ),
        ),
        hard_auc,
        soft_auc,
    )
}

fn hypothesis_trend(hard: &[(String, f64)], soft: &[(String, f64)]) -> Outcome {
    let at02 = hard[2].1;
    let dominates = hard.iter().zip(soft).skip(1).all(|(h, s)| h.1 >= s.1);
    let monotone = hard.windows(2).all(|w| w[1].1 >= w[0].1);
    let fmt = |v: &[(String, f64)]| v.iter().map(|(_, a)| format!("{:.1}", a * 100.0)).collect::<Vec<_>>().join(" ");
    outcome(
        at02 >= 0.90 && dominates && monotone,
        format!("hard@0.2 {:.1}; hard [{}]; soft [{}]", at02 * 100.0, fmt(hard), fmt(soft)),
    )
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let fixtures = work.path().join("fixtures");
    run_cli(&["gen-fixtures", "--out", fixtures.to_str().unwrap(), "--videos", &FIXTURE_VIDEOS.to_string(), "--seed", "0"]);

    let mut results: Vec<(&str, Outcome)> = vec![
        ("alpha blending identities", alpha_identities()),
        ("pyramid reconstruction", pyramid_fidelity()),
        ("poisson vs dense solve", poisson_correctness()),
        ("auroc vs brute force", auroc_oracle()),
        ("gen-sbi/gen-probes determinism", determinism(&fixtures, work.path())),
    ];
    let (protocol, hard, soft) = probe_protocol(&fixtures, work.path());
    results.push(("probe protocol fidelity", protocol));
    results.push(("hard-vs-soft seam trend", hypothesis_trend(&hard, &soft)));
    results.push(("immunization structure", immunization()));
    results.push(("ensemble parity", ensemble_parity()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
