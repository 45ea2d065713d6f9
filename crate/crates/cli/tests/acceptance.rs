//! One PASS/FAIL line per acceptance criterion, each checked against an
//! oracle written here rather than the library's own self-checks.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use diffformer::data::{fit_pca, load_cube, save_cube, synth_cube, DataError, HsiCube, PatchSample, SynthSpec};
use diffformer::metrics::{average_accuracy, kappa, overall_accuracy, ConfusionMatrix, EvalReport};
use diffformer::model::layers::{attention_core, swiglu_hidden, LayerVars};
use diffformer::model::{positional_encoding, AttentionKind, DiffFormer, ModelConfig, ParamStore};
use diffformer::tensor::{Graph, Rng64, Tensor};
use diffformer::train::{cross_entropy_loss, Checkpoint, TrainConfig, TrainError, Trainer};

// Same allocator as the shipped binary, so timings reflect the tool.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn random(rng: &mut Rng64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).unwrap()
}

fn below(rng: &mut Rng64, n: usize) -> usize {
    ((rng.uniform() * n as f64) as usize).min(n - 1)
}

fn tiny(kind: AttentionKind) -> ModelConfig {
    ModelConfig {
        patch_size: 4,
        pca_bands: 2,
        token_spatial: 2,
        d_embed: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        dropout_rate: 0.1,
        ln_eps: 1e-3,
        attention: kind,
        n_classes: 3,
        seed: 5,
    }
}

/// Mean cross-entropy of 1-based labels, from raw logits rows.
fn cross_entropy(logits: &Tensor, labels: &[u16]) -> f64 {
    let c = logits.shape()[1];
    let rows = logits.data().chunks(c);
    let total: f64 = rows
        .zip(labels)
        .map(|(row, &y)| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - row[y as usize - 1]
        })
        .sum();
    total / labels.len() as f64
}

fn gradient_oracle() -> Outcome {
    let start = Instant::now();
    let (mut worst_rel, mut worst_abs, mut failures, mut coords) = (0.0f64, 0.0f64, 0, 0);
    for kind in [AttentionKind::Dmhsa, AttentionKind::Mhsa] {
        let cfg = tiny(kind);
        let model = DiffFormer::new(cfg.clone()).unwrap();
        let params = ParamStore::init(&cfg).unwrap();
        let mut rng = Rng64::seed(41);
        let input = random(&mut rng, &[2, 4, 4, 2]);
        let labels = [1u16, 3];
        let mask_seed = 0xAB;

        let mut g = Graph::new();
        let bound = params.bind(&mut g, true);
        let x = g.constant(input.clone());
        let out = model
            .forward(&mut g, &bound, x, Some(&mut Rng64::seed(mask_seed)))
            .unwrap();
        let loss = cross_entropy_loss(&mut g, out.logits, &labels, &bound, &[], 0.0).unwrap();
        g.backward(loss).unwrap();
        let analytic: Vec<f64> = bound.grads(&g).iter().flat_map(|t| t.data().to_vec()).collect();

        let loss_at = |p: &ParamStore| {
            let mut g = Graph::new();
            let bound = p.bind(&mut g, false);
            let x = g.constant(input.clone());
            let out = model
                .forward(&mut g, &bound, x, Some(&mut Rng64::seed(mask_seed)))
                .unwrap();
            cross_entropy(g.value(out.logits), &labels)
        };
        let theta = params.flatten();
        let mut probe = params.clone();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut t = theta.clone();
            t[i] = theta[i] + h;
            probe.assign_flat(&t);
            let plus = loss_at(&probe);
            t[i] = theta[i] - h;
            probe.assign_flat(&t);
            let minus = loss_at(&probe);
            let numeric = (plus - minus) / (2.0 * h);
            let abs = (analytic[i] - numeric).abs();
            let scale = analytic[i].abs().max(numeric.abs());
            let rel = if scale > 0.0 { abs / scale } else { 0.0 };
            worst_abs = worst_abs.max(abs);
            // Relative error is only meaningful away from zero.
            if scale > 1e-6 {
                worst_rel = worst_rel.max(rel);
            }
            if rel >= 1e-4 && abs >= 1e-7 {
                failures += 1;
            }
        }
        coords += theta.len();
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && secs < 60.0,
        format!("{coords} coordinates over both attention kinds, max rel {worst_rel:.2e}, max abs {worst_abs:.2e}, {failures} failures, {secs:.1}s"),
    )
}

/// Runs one attention forward on `[1, T, dh]` inputs.
fn attend(q: &Tensor, k: &Tensor, v: &Tensor, kind: AttentionKind) -> (Tensor, Tensor, Tensor, Tensor) {
    let mut g = Graph::new();
    let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let (s, d, a, z) = attention_core(&mut g, q, k, v, kind, 0.0, None).unwrap();
    (
        g.value(s).clone(),
        g.value(d).clone(),
        g.value(a).clone(),
        g.value(z).clone(),
    )
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let w = t.shape()[2];
    let data = perm
        .iter()
        .flat_map(|&i| t.data()[i * w..(i + 1) * w].to_vec())
        .collect();
    Tensor::new(t.shape(), data).unwrap()
}

fn attention_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng64::seed(8);
    let (t, dh) = (6, 4);
    let q = random(&mut rng, &[1, t, dh]);
    let k = random(&mut rng, &[1, t, dh]);
    let v = random(&mut rng, &[1, t, dh]);
    let (s, d, a, z_d) = attend(&q, &k, &v, AttentionKind::Dmhsa);

    let row_sum = a
        .data()
        .chunks(t)
        .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let mut cumsum = 0.0f64;
    for (srow, drow) in s.data().chunks(t).zip(d.data().chunks(t)) {
        let mut acc = 0.0;
        for j in 0..t {
            acc += drow[j];
            cumsum = cumsum.max((acc - srow[j]).abs());
        }
    }

    let c = 2.75;
    let mut g = Graph::new();
    let shifted = g.constant(Tensor::new(s.shape(), s.data().iter().map(|x| x + c).collect()).unwrap());
    let d2 = g.diff_cols(shifted).unwrap();
    let (mut first, mut rest) = (0.0f64, 0.0f64);
    for (a_row, b_row) in d.data().chunks(t).zip(g.value(d2).data().chunks(t)) {
        first = first.max((b_row[0] - a_row[0] - c).abs());
        rest = rest.max(
            a_row[1..]
                .iter()
                .zip(&b_row[1..])
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
        );
    }

    let perm = [3, 0, 5, 1, 4, 2];
    let (qp, kp, vp) = (
        permute_rows(&q, &perm),
        permute_rows(&k, &perm),
        permute_rows(&v, &perm),
    );
    let (.., z_m) = attend(&q, &k, &v, AttentionKind::Mhsa);
    let (.., z_mp) = attend(&qp, &kp, &vp, AttentionKind::Mhsa);
    let (.., z_dp) = attend(&qp, &kp, &vp, AttentionKind::Dmhsa);
    let mhsa_gap = permute_rows(&z_m, &perm).max_abs_diff(&z_mp);
    let dmhsa_gap = permute_rows(&z_d, &perm).max_abs_diff(&z_dp);
    let secs = start.elapsed().as_secs_f64();

    let passed = row_sum <= 1e-6
        && cumsum <= 1e-9
        && first <= 1e-12
        && rest <= 1e-12
        && mhsa_gap <= 1e-12
        && dmhsa_gap > 1e-6
        && secs < 5.0;
    outcome(
        passed,
        format!(
            "row sum {row_sum:.1e}, cumsum {cumsum:.1e}, shift first/rest {first:.1e}/{rest:.1e}, perm gap MHSA {mhsa_gap:.1e} DMHSA {dmhsa_gap:.2e}, {secs:.2}s"
        ),
    )
}

fn positional_encoding_check() -> Outcome {
    let (n, d) = (128, 64);
    let pe = positional_encoding(n, d).unwrap();
    let exact_zero_row = (0..d / 2).all(|i| pe.at2(0, 2 * i) == 0.0 && pe.at2(0, 2 * i + 1) == 1.0);
    let mut rng = Rng64::seed(19);
    let mut pyth = 0.0f64;
    let mut formula = 0.0f64;
    for _ in 0..100 {
        let pos = below(&mut rng, n);
        let i = below(&mut rng, d / 2);
        let (a, b) = (pe.at2(pos, 2 * i), pe.at2(pos, 2 * i + 1));
        pyth = pyth.max((a * a + b * b - 1.0).abs());
        let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
        formula = formula.max((a - angle.sin()).abs()).max((b - angle.cos()).abs());
    }
    let sin1 = (pe.at2(1, 0) - 1f64.sin()).abs();
    outcome(
        exact_zero_row && pyth <= 1e-9 && sin1 <= 1e-12 && formula <= 1e-9,
        format!("PE(0,·) exact: {exact_zero_row}, Pythagorean {pyth:.1e}, |PE(1,0)-sin 1| {sin1:.1e}, formula {formula:.1e}"),
    )
}

fn swiglu_check() -> Outcome {
    let cfg = tiny(AttentionKind::Dmhsa);
    let mut params = ParamStore::init(&cfg).unwrap();
    params.get_mut("layer0.ffn.wg").unwrap().data_mut().fill(0.0);
    params.get_mut("layer0.ffn.bg").unwrap().data_mut().fill(-50.0);
    let x_t = random(&mut Rng64::seed(23), &[5, 8]);
    let gap = |params: &ParamStore, factor: f64| {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let layer = LayerVars::bind(&bound, 0);
        let x = g.constant(x_t.clone());
        let (s, u) = swiglu_hidden(&mut g, x, &layer).unwrap();
        g.value(s)
            .data()
            .iter()
            .zip(g.value(u).data())
            .map(|(s, u)| (s - factor * u).abs())
            .fold(0.0, f64::max)
    };
    let closed = gap(&params, 1.0);
    params.get_mut("layer0.ffn.bg").unwrap().data_mut().fill(0.0);
    let half = gap(&params, 1.5);
    outcome(
        closed <= 1e-15 && half <= 1e-12,
        format!("gate shut {closed:.1e}, gate at zero {half:.1e}"),
    )
}

fn metrics_oracle() -> Outcome {
    let mut rng = Rng64::seed(2024);
    let mut worst = 0.0f64;
    let mut tested = 0;
    while tested < 1000 {
        let n = 1 + below(&mut rng, 8);
        let rows: Vec<Vec<u64>> = (0..n)
            .map(|_| (0..n).map(|_| below(&mut rng, 40) as u64).collect())
            .collect();
        let total: u64 = rows.iter().flatten().sum();
        if total == 0 {
            continue;
        }
        tested += 1;
        // Brute force: walk every individual prediction.
        let (mut hits, mut truth, mut guess) = (0u64, vec![0u64; n], vec![0u64; n]);
        let mut hits_per = vec![0u64; n];
        for (i, row) in rows.iter().enumerate() {
            for (j, &count) in row.iter().enumerate() {
                for _ in 0..count {
                    truth[i] += 1;
                    guess[j] += 1;
                    if i == j {
                        hits += 1;
                        hits_per[i] += 1;
                    }
                }
            }
        }
        let t = total as f64;
        let oa = hits as f64 / t;
        let recalls: Vec<f64> = (0..n)
            .filter(|&i| truth[i] > 0)
            .map(|i| hits_per[i] as f64 / truth[i] as f64)
            .collect();
        let aa = recalls.iter().sum::<f64>() / recalls.len() as f64;
        let pe: f64 = (0..n).map(|i| truth[i] as f64 * guess[i] as f64).sum::<f64>() / (t * t);
        let k = if pe == 1.0 {
            if oa == 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (oa - pe) / (1.0 - pe)
        };
        let cm = ConfusionMatrix::from_rows(&rows);
        worst = worst
            .max((overall_accuracy(&cm).unwrap() - oa).abs())
            .max((average_accuracy(&cm).unwrap() - aa).abs())
            .max((kappa(&cm).unwrap() - k).abs());
    }
    let hand = [
        (vec![vec![50, 0], vec![0, 50]], 1.0),
        (vec![vec![25, 25], vec![25, 25]], 0.0),
        (vec![vec![20, 5], vec![10, 15]], 0.4),
    ];
    let hand_ok = hand
        .iter()
        .all(|(rows, want)| (kappa(&ConfusionMatrix::from_rows(rows)).unwrap() - want).abs() <= 1e-12);
    outcome(
        worst <= 1e-12 && hand_ok,
        format!("{tested} matrices, max gap {worst:.1e}, hand cases ok: {hand_ok}"),
    )
}

fn pca_check() -> Outcome {
    let cube = synth_cube(&SynthSpec {
        classes: 4,
        width: 24,
        height: 16,
        bands: 12,
        noise_sigma: 0.2,
        seed: 6,
    })
    .unwrap();
    let k = cube.bands();
    let full = fit_pca(&cube, k).unwrap();
    let mut ortho = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let dot: f64 = full
                .component(i)
                .iter()
                .zip(full.component(j))
                .map(|(a, b)| a * b)
                .sum();
            ortho = ortho.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let ev = full.explained_variance();
    let nonincreasing = ev.windows(2).all(|w| w[0] >= w[1]);
    let mut round_trip = 0.0f64;
    for r in 0..cube.height() {
        for c in 0..cube.width() {
            let x = cube.spectrum(r, c);
            let back = full.back_project(&full.project(&x));
            round_trip = round_trip.max(x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        }
    }

    // Independent bands with standard deviations 5, 1, 0.5, 0.25.
    let (w, h, bands) = (20, 20, 4);
    let scales = [5.0, 1.0, 0.5, 0.25];
    let mut rng = Rng64::seed(77);
    let mut raster = vec![0.0; w * h * bands];
    for (b, s) in scales.iter().enumerate() {
        for p in 0..w * h {
            raster[b * w * h + p] = rng.normal(0.0, *s);
        }
    }
    let toy = HsiCube::new(w, h, bands, raster, vec![1; w * h], None).unwrap();
    let dominant = fit_pca(&toy, 1).unwrap().component(0)[0].abs();
    outcome(
        ortho <= 1e-6 && nonincreasing && round_trip < 1e-6 && dominant > 0.999,
        format!("orthonormality {ortho:.1e}, variance nonincreasing: {nonincreasing}, round trip {round_trip:.1e}, |dot e1| {dominant:.5}"),
    )
}

fn tool(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_diffformer"))
        .args(args)
        .env("DIFFFORMER_THREADS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&o.stderr).trim().to_string())
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

const TINY: [&str; 12] = [
    "--set",
    "patch_size=8",
    "--set",
    "token_spatial=2",
    "--set",
    "d_embed=32",
    "--set",
    "n_layers=2",
    "--set",
    "n_heads=4",
    "--set",
    "d_ff=128",
];

fn train(cube: &Path, out: &Path, extra: &[&str]) -> Result<(), String> {
    let mut args = vec!["train", "--cube", s(cube), "--out-dir", s(out)];
    args.extend_from_slice(&TINY);
    args.extend_from_slice(extra);
    tool(&args)
}

fn synth_toy(dir: &Path) -> Result<PathBuf, String> {
    let cube = dir.join("toy.hsic");
    tool(&[
        "synth",
        "--classes",
        "3",
        "--width",
        "32",
        "--height",
        "32",
        "--bands",
        "20",
        "--sigma",
        "0.1",
        "--out",
        s(&cube),
    ])?;
    Ok(cube)
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let dir = scratch("end-to-end");
    let result = (|| -> Result<(bool, String), String> {
        let cube = synth_toy(&dir)?;
        let mut parts = Vec::new();
        let mut ok = true;
        for kind in ["dmhsa", "mhsa"] {
            let out = dir.join(kind);
            let attention = format!("attention={kind}");
            train(&cube, &out, &["--set", &attention, "--epochs", "30"])?;
            // Score against the exported confusion matrix, not the stored summary.
            let report: EvalReport =
                serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
            let c = &report.confusion;
            let n = c.len();
            let total: u64 = c.iter().flatten().sum();
            let t = total as f64;
            let oa = (0..n).map(|i| c[i][i]).sum::<u64>() as f64 / t;
            let pe: f64 = (0..n)
                .map(|i| c[i].iter().sum::<u64>() as f64 * c.iter().map(|r| r[i]).sum::<u64>() as f64)
                .sum::<f64>()
                / (t * t);
            let k = (oa - pe) / (1.0 - pe);
            ok &= oa >= 0.95 && k >= 0.90;
            parts.push(format!("{kind} OA {oa:.4} kappa {k:.4}"));
        }
        Ok((ok, parts.join(", ")))
    })();
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok((ok, detail)) => outcome(ok && secs < 300.0, format!("{detail}, {secs:.1}s total")),
        Err(e) => outcome(false, format!("run failed: {e}")),
    }
}

fn overfit() -> Outcome {
    let cfg = tiny(AttentionKind::Dmhsa);
    let mut rng = Rng64::seed(88);
    let data: Vec<PatchSample> = (0..8)
        .map(|i| PatchSample {
            patch: (0..32).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            label: (i % 3) as u16 + 1,
            pixel: (i, 0),
        })
        .collect();
    let mut trainer = Trainer::new(cfg.clone(), TrainConfig::default()).unwrap();
    let batch: Vec<&PatchSample> = data.iter().collect();
    let model = DiffFormer::new(cfg).unwrap();
    for step in 1..=200 {
        trainer.step(&batch).unwrap();
        let logits = model.logits(trainer.params(), &batch).unwrap();
        let correct = logits
            .data()
            .chunks(3)
            .zip(&data)
            .filter(|(row, s)| {
                let best = (0..3).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                best as u16 + 1 == s.label
            })
            .count();
        if correct == data.len() {
            return outcome(true, format!("train accuracy 1.0 after {step} steps"));
        }
    }
    outcome(false, "train accuracy below 1.0 after 200 steps".into())
}

fn determinism() -> Outcome {
    let dir = scratch("determinism");
    let result = (|| -> Result<Vec<(String, bool)>, String> {
        let cube = synth_toy(&dir)?;
        let (a, b) = (dir.join("a"), dir.join("b"));
        for out in [&a, &b] {
            train(&cube, out, &["--set", "timing=false", "--epochs", "5"])?;
        }
        Ok(["history.csv", "report.json", "best.dfck"]
            .iter()
            .map(|f| {
                (
                    f.to_string(),
                    fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap(),
                )
            })
            .collect())
    })();
    match result {
        Ok(files) => outcome(
            files.iter().all(|(_, same)| *same),
            files
                .iter()
                .map(|(f, same)| format!("{f} {}", if *same { "identical" } else { "differs" }))
                .collect::<Vec<_>>()
                .join(", "),
        ),
        Err(e) => outcome(false, format!("run failed: {e}")),
    }
}

struct AttentionBench {
    q: Tensor,
    k: Tensor,
    v: Tensor,
}

impl AttentionBench {
    fn new(tokens: usize) -> Self {
        let (groups, dh) = (8, 8);
        let mut rng = Rng64::seed(tokens as u64);
        let mut draw = || random(&mut rng, &[groups, tokens, dh]);
        Self {
            q: draw(),
            k: draw(),
            v: draw(),
        }
    }

    fn seconds(&self, reps: usize) -> f64 {
        let start = Instant::now();
        for _ in 0..reps {
            let mut g = Graph::new();
            let (q, k, v) = (
                g.constant(self.q.clone()),
                g.constant(self.k.clone()),
                g.constant(self.v.clone()),
            );
            let out = attention_core(&mut g, q, k, v, AttentionKind::Dmhsa, 0.0, None).unwrap();
            std::hint::black_box(g.value(out.3));
        }
        start.elapsed().as_secs_f64()
    }
}

fn complexity() -> Outcome {
    let reps = 40;
    let (small, large) = (AttentionBench::new(64), AttentionBench::new(128));
    small.seconds(reps);
    large.seconds(reps);
    // Alternate the two sizes so machine drift hits both alike.
    let (mut a, mut b): (Vec<f64>, Vec<f64>) = (0..5).map(|_| (small.seconds(reps), large.seconds(reps))).unzip();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let ratio = b[2] / a[2];
    outcome(
        (3.0..=6.0).contains(&ratio),
        format!(
            "median {:.2} ms at 64 tokens, {:.2} ms at 128, ratio {ratio:.2}",
            1e3 * a[2],
            1e3 * b[2]
        ),
    )
}

fn format_round_trips() -> Outcome {
    let dir = scratch("formats");
    let cube = synth_cube(&SynthSpec {
        classes: 3,
        width: 9,
        height: 5,
        bands: 6,
        noise_sigma: 0.1,
        seed: 4,
    })
    .unwrap();
    let (c1, c2) = (dir.join("a.hsic"), dir.join("b.hsic"));
    save_cube(&cube, &c1).unwrap();
    save_cube(&load_cube(&c1).unwrap(), &c2).unwrap();
    let cube_bytes = fs::read(&c1).unwrap();
    let cube_same = cube_bytes == fs::read(&c2).unwrap();

    let mut trainer = Trainer::new(tiny(AttentionKind::Dmhsa), TrainConfig::default()).unwrap();
    trainer.set_metadata(Some(fit_pca(&cube, 2).unwrap()), None);
    let (k1, k2) = (dir.join("a.dfck"), dir.join("b.dfck"));
    trainer.checkpoint().save(&k1).unwrap();
    Checkpoint::load(&k1).unwrap().save(&k2).unwrap();
    let ck_bytes = fs::read(&k1).unwrap();
    let ck_same = ck_bytes == fs::read(&k2).unwrap();

    let cut_cube = |n: usize| dir.join(format!("cut{n}.hsic"));
    let mut cube_rejects = true;
    for n in [4, 40, cube_bytes.len() - 1] {
        fs::write(cut_cube(n), &cube_bytes[..n]).unwrap();
        cube_rejects &= matches!(load_cube(cut_cube(n)), Err(DataError::Truncated { .. }));
    }
    let mut ck_rejects = true;
    for n in [4, 40, ck_bytes.len() - 1] {
        ck_rejects &= matches!(
            Checkpoint::from_bytes(&ck_bytes[..n]),
            Err(TrainError::Data(DataError::Truncated { .. }))
        );
    }
    let mut wrong = ck_bytes.clone();
    wrong[0] = b'X';
    let magic = matches!(
        Checkpoint::from_bytes(&wrong),
        Err(TrainError::Data(DataError::BadMagic { .. }))
    );
    let mut wrong = cube_bytes.clone();
    wrong[0] = b'X';
    let magic = magic && matches!(HsiCube::from_bytes(&wrong), Err(DataError::BadMagic { .. }));
    outcome(
        cube_same && ck_same && cube_rejects && ck_rejects && magic,
        format!(
            "cube re-save identical: {cube_same}, checkpoint re-save identical: {ck_same}, truncations rejected: {}, bad magic rejected: {magic}",
            cube_rejects && ck_rejects
        ),
    )
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, Check); 11] = [
        ("gradient oracle", gradient_oracle),
        ("attention invariants", attention_invariants),
        ("positional encoding", positional_encoding_check),
        ("SWiGLU limits", swiglu_check),
        ("metrics oracle", metrics_oracle),
        ("PCA", pca_check),
        ("end-to-end synthetic learning", end_to_end),
        ("overfit sanity", overfit),
        ("determinism", determinism),
        ("attention complexity", complexity),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let r = check();
        println!(
            "{} {:>2} {name}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            i + 1,
            r.detail
        );
        failed += usize::from(!r.passed);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
