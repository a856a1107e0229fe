//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. The training criteria run full 8+8-epoch trainings on a
//! 200-case 64×64 phantom dataset and take the bulk of the runtime.

#[macro_use]
mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::generator::check_generator_objective;
use common::ops::{catalog, trial_seed, OP_TOL};
use tlp_core::dataset::{generate_dataset, Dataset, Split, DEFAULT_FRACTIONS};
use tlp_core::fpg::{build_kernel_set, generate_prompt, Mask, PromptConfig};
use tlp_core::inference::{copy_baseline, evaluate_cases, PromptMode};
use tlp_core::metrics::{nmse, psnr, psnr_masked, ssim, MetricReport};
use tlp_core::model::loss::{discriminator_loss_value, generator_loss_value};
use tlp_core::model::{Checkpoint, GeneratorConfig, LossConfig};
use tlp_core::phantom::{PhantomCase, PhantomSpec};
use tlp_core::rng::Stream;
use tlp_core::trainer::{train, TrainConfig};
use tlp_core::Tensor;

const GRAD_SEEDS: u64 = 20;
const E2E_TOL: f64 = 2e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(300);
const FPG_BUDGET: Duration = Duration::from_secs(60);
const LOSS_TOL: f64 = 1e-6;
const METRIC_TOL: f64 = 1e-5;
const PSNR_MARGIN_DB: f64 = 3.0;
const SSIM_MARGIN: f64 = 0.03;
const NMSE_RATIO: f64 = 0.5;
const TRAIN_BUDGET: Duration = Duration::from_secs(45 * 60);
const ABLATION_SEEDS: [u64; 3] = [1, 2, 3];
const MAIN_SEED: u64 = 1;
/// Desk-scale learning rate: the 16-epoch, 170-case schedule takes ~25×
/// fewer optimizer steps than the full-size setting.
const ACCEPTANCE_LR: f64 = 1e-3;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

type Outcome = Result<Verdict, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut worst_op = (0.0f64, "");
    let mut failures = Vec::new();
    let ops = catalog();
    for case in &ops {
        for k in 0..GRAD_SEEDS {
            let mut s = Stream::new(trial_seed(k));
            let r = (case.check)(&mut s).map_err(err)?;
            if r.rel_err > worst_op.0 {
                worst_op = (r.rel_err, case.name);
            }
            if r.checked == 0 || !(r.rel_err < OP_TOL) {
                failures.push(format!("{}#{k}={:.2e}", case.name, r.rel_err));
            }
        }
    }
    let mut worst_e2e = 0.0f64;
    let (mut checked, mut skipped) = (0, 0);
    for seed in 0..GRAD_SEEDS {
        let r = check_generator_objective(seed, 4, 0.01).map_err(err)?;
        worst_e2e = worst_e2e.max(r.rel_err);
        checked += r.checked;
        skipped += r.skipped;
        // Near-ties in fusion or pooling can push a good share of probes across
        // a kink; still demand a solid majority of usable coordinates.
        if r.checked < 100 || r.skipped * 3 > r.checked + r.skipped || !(r.rel_err < E2E_TOL) {
            failures.push(format!("generator#{seed}={:.2e}", r.rel_err));
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < GRAD_BUDGET;
    Ok(verdict(
        pass,
        format!(
            "{} ops x {GRAD_SEEDS} seeds, worst {:.2e} ({}) < {OP_TOL:e}; generator x {GRAD_SEEDS} seeds, worst {worst_e2e:.2e} < {E2E_TOL:e} over {checked} coordinates ({skipped} kink-straddling ones skipped); {:.0}s{}",
            ops.len(),
            worst_op.0,
            worst_op.1,
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    ))
}

fn literal_kernels() -> Vec<[[u8; 3]; 3]> {
    let e = |i: usize, j: usize| {
        let mut m = [[0u8; 3]; 3];
        m[i - 1][j - 1] = 1;
        m
    };
    let add = |a: [[u8; 3]; 3], b: [[u8; 3]; 3]| {
        let mut m = a;
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += b[r][c];
            }
        }
        m
    };
    let mut out = Vec::new();
    for i in 1..=3 {
        for j in 1..=3 {
            if (i, j) != (2, 2) {
                out.push(add(e(2, 2), e(i, j)));
            }
        }
    }
    let mut plus = [[0u8; 3]; 3];
    for i in 1..=3 {
        for j in 1..=3 {
            let corner = (i == 1 || i == 3) && (j == 1 || j == 3);
            if !corner {
                plus = add(plus, e(i, j));
            }
        }
    }
    out.push(plus);
    out
}

fn random_mask(s: &mut Stream) -> Mask {
    let h = 1 + s.below(24);
    let w = 1 + s.below(24);
    let density = s.uniform_in(0.02, 0.7);
    Mask::from_fn(h, w, |_, _| s.uniform() < density)
}

fn fpg_correctness() -> Outcome {
    let start = Instant::now();
    let set = build_kernel_set();
    let mut got: Vec<[[u8; 3]; 3]> = set.kernels().to_vec();
    let mut want = literal_kernels();
    got.sort();
    want.sort();
    let kernels_ok = set.len() == 9 && got == want;

    let mut s = Stream::new(0xf96);
    let (mut grow_bad, mut shrink_bad, mut nondet) = (0, 0, 0);
    for _ in 0..1000 {
        let m = random_mask(&mut s);
        let t = 1 + s.below(6);
        let seed = s.next_u64();
        let dil = PromptConfig { p: 1.0, q: 0.0, t, seed };
        let ero = PromptConfig { p: 0.0, q: 0.0, t, seed };
        let d = generate_prompt(&m, &dil).map_err(err)?;
        let e = generate_prompt(&m, &ero).map_err(err)?;
        grow_bad += usize::from(!m.is_subset_of(&d));
        shrink_bad += usize::from(!e.is_subset_of(&m));
        let mixed = PromptConfig { seed, ..Default::default() };
        nondet += usize::from(generate_prompt(&m, &mixed).map_err(err)? != generate_prompt(&m, &mixed).map_err(err)?);
    }
    let label = Mask::from_fn(8, 8, |r, c| (3..5).contains(&r) && (3..6).contains(&c));
    let trials = 10_000;
    let mut dropped = 0;
    for seed in 0..trials {
        let cfg = PromptConfig { seed, ..Default::default() };
        dropped += usize::from(generate_prompt(&label, &cfg).map_err(err)?.is_empty());
    }
    let freq = dropped as f64 / trials as f64;
    let elapsed = start.elapsed();
    let pass = kernels_ok && grow_bad == 0 && shrink_bad == 0 && nondet == 0 && (freq - 0.5).abs() <= 0.02 && elapsed < FPG_BUDGET;
    Ok(verdict(
        pass,
        format!(
            "9 kernels match: {kernels_ok}; dilation violations {grow_bad}/1000, erosion violations {shrink_bad}/1000, nondeterministic {nondet}/1000; drop rate {freq:.4} (0.5±0.02); {:.1}s",
            elapsed.as_secs_f64()
        ),
    ))
}

fn mean_f64(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    s / n as f64
}

fn loss_algebra() -> Outcome {
    let mut s = Stream::new(0x1055);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (h, w) = (1 + s.below(8), 1 + s.below(8));
        let (ih, iw) = (2 + s.below(10), 2 + s.below(10));
        let d_fake = Tensor::from_fn([1, 1, h, w], |_| s.uniform_in(-1.0, 2.0) as f32);
        let d_real = Tensor::from_fn([1, 1, h, w], |_| s.uniform_in(-1.0, 2.0) as f32);
        let y_hat = Tensor::from_fn([1, 1, ih, iw], |_| s.uniform_in(-1.0, 1.0) as f32);
        let y = Tensor::from_fn([1, 1, ih, iw], |_| s.uniform_in(-1.0, 1.0) as f32);
        let lambda = s.uniform_in(0.0, 200.0);
        let f = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let (df, dr, yh, yy) = (f(&d_fake), f(&d_real), f(&y_hat), f(&y));
        let real_term = mean_f64(dr.iter().map(|v| (v - 1.0).powi(2)));
        let fake_term = mean_f64(df.iter().map(|v| v * v));
        let adv_term = mean_f64(df.iter().map(|v| (v - 1.0).powi(2)));
        let pix_term = lambda * mean_f64(yh.iter().zip(&yy).map(|(a, b)| (a - b).abs()));
        let cfg = LossConfig { lambda };
        let g = generator_loss_value(&d_fake, &y_hat, &y, &cfg).map_err(err)?;
        let d = discriminator_loss_value(&d_fake, &d_real).map_err(err)?;
        worst = worst
            .max((g - (adv_term + pix_term)).abs())
            .max((d - (real_term + fake_term)).abs())
            .max((g + d - (real_term + fake_term + adv_term + pix_term)).abs());
    }
    let y = Tensor::from_fn([1, 1, 6, 6], |i| i as f32 / 36.0 - 0.5);
    let y_hat = y.map(|v| v + 0.01);
    let half = Tensor::full([1, 1, 6, 6], 0.5f32);
    let g_ex = generator_loss_value(&half, &y_hat, &y, &LossConfig { lambda: 100.0 }).map_err(err)?;
    let d_ex = discriminator_loss_value(&half, &Tensor::full([1, 1, 6, 6], 0.8f32)).map_err(err)?;
    let pass = worst < LOSS_TOL && (g_ex - 1.25).abs() < LOSS_TOL && (d_ex - 0.29).abs() < LOSS_TOL;
    Ok(verdict(
        pass,
        format!("200 random draws, worst term mismatch {worst:.2e} < {LOSS_TOL:e}; examples {g_ex:.9} (1.25), {d_ex:.9} (0.29)"),
    ))
}

fn reference_planes(t: &Tensor) -> (usize, usize, Vec<f64>) {
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    (h, w, t.data().iter().map(|&v| (v as f64 + 1.0) / 2.0).collect())
}

fn reference_psnr(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        100.0
    } else {
        (-10.0 * mse.log10()).min(100.0)
    }
}

/// Direct 2-D Gaussian-window SSIM over every fully contained 11×11 window.
fn reference_ssim(h: usize, w: usize, a: &[f64], b: &[f64]) -> f64 {
    let k = 11usize;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * k + j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = Vec::new();
    for r in 0..=h - k {
        for c in 0..=w - k {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let g = win[i * k + j];
                    ma += g * a[(r + i) * w + c + j];
                    mb += g * b[(r + i) * w + c + j];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let g = win[i * k + j];
                    let (x, y) = (a[(r + i) * w + c + j] - ma, b[(r + i) * w + c + j] - mb);
                    va += g * x * x;
                    vb += g * y * y;
                    cov += g * x * y;
                }
            }
            acc.push((2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)));
        }
    }
    mean_f64(acc.into_iter())
}

fn metric_oracles() -> Outcome {
    let mut s = Stream::new(0x3e7);
    let mut worst = BTreeMap::from([("psnr", 0.0f64), ("ssim", 0.0), ("nmse", 0.0), ("lesion-psnr", 0.0)]);
    let mut bump = |k: &'static str, a: f64, b: f64| {
        let e = worst.get_mut(k).unwrap();
        *e = e.max((a - b).abs());
    };
    for _ in 0..50 {
        let (h, w) = (11 + s.below(30), 11 + s.below(30));
        let level = s.uniform_in(0.01, 0.5);
        let y = Tensor::from_fn([1, 1, h, w], |i| (((i % w) as f64 / w as f64) * 1.6 - 0.8 + 0.1 * s.normal()).clamp(-1.0, 1.0) as f32);
        let y_hat = Tensor::from_fn([1, 1, h, w], |i| (y.data()[i] as f64 + level * s.normal()).clamp(-1.0, 1.0) as f32);
        let mask = Mask::from_fn(h, w, |_, _| s.uniform() < 0.3);
        let (_, _, a) = reference_planes(&y_hat);
        let (_, _, b) = reference_planes(&y);
        bump("psnr", psnr(&y_hat, &y).map_err(err)?, reference_psnr(&a, &b));
        bump("ssim", ssim(&y_hat, &y).map_err(err)?, reference_ssim(h, w, &a, &b));
        let native = |t: &Tensor| t.data().iter().map(|&v| v as f64).collect::<Vec<_>>();
        let (na, nb) = (native(&y_hat), native(&y));
        let ref_nmse = na.iter().zip(&nb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / nb.iter().map(|y| y * y).sum::<f64>();
        bump("nmse", nmse(&y_hat, &y).map_err(err)?, ref_nmse);
        let pick = |v: &[f64]| v.iter().enumerate().filter(|(i, _)| mask.cells()[*i] == 1).map(|(_, &x)| x).collect::<Vec<_>>();
        let (ma, mb) = (pick(&a), pick(&b));
        let ref_lesion = if ma.is_empty() { 100.0 } else { reference_psnr(&ma, &mb) };
        bump("lesion-psnr", psnr_masked(&y_hat, &y, &mask).map_err(err)?, ref_lesion);
    }
    let y = Tensor::from_fn([1, 1, 16, 16], |i| ((i * 37 % 23) as f32 / 11.5) - 1.0);
    let fixed = (psnr(&y, &y).map_err(err)?, ssim(&y, &y).map_err(err)?, nmse(&y, &y).map_err(err)?);
    let pass = worst.values().all(|&e| e <= METRIC_TOL) && fixed == (100.0, 1.0, 0.0);
    let detail = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect::<Vec<_>>().join(", ");
    Ok(verdict(
        pass,
        format!("50 pairs vs naive f64 reference, worst |diff|: {detail} (≤ {METRIC_TOL:e}); identity gives {:?}", fixed),
    ))
}

/// Trained runs keyed by (levels, seed).
struct Runs {
    dataset: Dataset,
    test: Vec<PhantomCase>,
    root: PathBuf,
    done: BTreeMap<(usize, u64), (PathBuf, Duration)>,
}

impl Runs {
    fn config(levels: usize, seed: u64) -> TrainConfig {
        TrainConfig { lr0: ACCEPTANCE_LR, seed, generator: GeneratorConfig::with_levels(levels), ..Default::default() }
    }

    fn train_into(&self, levels: usize, seed: u64, out: &Path) -> Result<(PathBuf, Duration), String> {
        let start = Instant::now();
        let cfg = Self::config(levels, seed);
        eprintln!("training levels={levels} seed={seed} into {}", out.display());
        let outcome = train(&cfg, &self.dataset, out, |log| {
            eprintln!(
                "  epoch {:2} lr {:.2e} g {:.4} d {:.4} l1 {:.4} val {:.2} dB",
                log.epoch,
                log.lr,
                log.g_loss,
                log.d_loss,
                log.l1,
                log.val_psnr.unwrap_or(f64::NAN)
            )
        })
        .map_err(err)?;
        Ok((outcome.final_checkpoint, start.elapsed()))
    }

    fn get(&mut self, levels: usize, seed: u64) -> Result<(PathBuf, Duration), String> {
        if let Some(r) = self.done.get(&(levels, seed)) {
            return Ok(r.clone());
        }
        let out = self.root.join(format!("l{levels}_s{seed}"));
        let r = self.train_into(levels, seed, &out)?;
        self.done.insert((levels, seed), r.clone());
        Ok(r)
    }

    fn report(&self, ckpt: &Path, mode: PromptMode) -> Result<MetricReport, String> {
        let ck = Checkpoint::load(ckpt).map_err(err)?;
        let label = format!("tlp-l{}", ck.generator.config.levels);
        evaluate_cases(&ck.generator, &self.test, &mode, &label, "test").map_err(err)
    }
}

fn desk_training(runs: &mut Runs) -> Outcome {
    let n_train = runs.dataset.ids(Split::Train).len();
    let (ckpt, took) = runs.get(2, MAIN_SEED)?;
    let base = copy_baseline(&runs.test, "test").map_err(err)?;
    let model = runs.report(&ckpt, PromptMode::None)?;
    eprintln!("{}", MetricReport::table(&[&base, &model]));
    let dp = model.psnr_db.mean - base.psnr_db.mean;
    let ds = model.ssim.mean - base.ssim.mean;
    let ratio = model.nmse.mean / base.nmse.mean;
    let pass = n_train == 170
        && runs.test.len() == 26
        && dp >= PSNR_MARGIN_DB
        && ds >= SSIM_MARGIN
        && ratio < NMSE_RATIO
        && took <= TRAIN_BUDGET;
    Ok(verdict(
        pass,
        format!(
            "{n_train} train / {} test cases; PSNR {:.2} vs copy-x1 {:.2} (+{dp:.2} dB, need ≥{PSNR_MARGIN_DB}); SSIM {:.4} vs {:.4} (+{ds:.4}, need ≥{SSIM_MARGIN}); NMSE ratio {ratio:.3} (< {NMSE_RATIO}); trained in {:.1} min (budget {} min)",
            runs.test.len(),
            model.psnr_db.mean,
            base.psnr_db.mean,
            model.ssim.mean,
            base.ssim.mean,
            took.as_secs_f64() / 60.0,
            TRAIN_BUDGET.as_secs() / 60
        ),
    ))
}

fn ablations(runs: &mut Runs) -> Outcome {
    let (mut d1, mut d2, mut none, mut oracle) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for seed in ABLATION_SEEDS {
        let (c2, _) = runs.get(2, seed)?;
        let (c1, _) = runs.get(1, seed)?;
        let r2 = runs.report(&c2, PromptMode::None)?;
        let r1 = runs.report(&c1, PromptMode::None)?;
        let ro = runs.report(&c2, PromptMode::OracleLesion)?;
        d2.push(r2.psnr_db.mean);
        d1.push(r1.psnr_db.mean);
        none.push(r2.lesion_psnr_db.map(|a| a.mean).ok_or("missing lesion PSNR")?);
        oracle.push(ro.lesion_psnr_db.map(|a| a.mean).ok_or("missing lesion PSNR")?);
    }
    let m = |v: &[f64]| mean_f64(v.iter().copied());
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/");
    let depth_ok = m(&d2) >= m(&d1);
    let prompt_ok = m(&oracle) >= m(&none);
    Ok(verdict(
        depth_ok && prompt_ok,
        format!(
            "(a) depth-2 PSNR {:.2} [{}] vs depth-1 {:.2} [{}]: {}; (b) lesion PSNR oracle-lesion {:.2} [{}] vs none {:.2} [{}]: {}",
            m(&d2),
            fmt(&d2),
            m(&d1),
            fmt(&d1),
            if depth_ok { "ok" } else { "reversed" },
            m(&oracle),
            fmt(&oracle),
            m(&none),
            fmt(&none),
            if prompt_ok { "ok" } else { "reversed" }
        ),
    ))
}

fn reproducibility(runs: &mut Runs) -> Outcome {
    let (first, _) = runs.get(2, MAIN_SEED)?;
    let again = runs.root.join(format!("l2_s{MAIN_SEED}_repeat"));
    let (second, _) = runs.train_into(2, MAIN_SEED, &again)?;
    let a = std::fs::read(&first).map_err(err)?;
    let b = std::fs::read(&second).map_err(err)?;
    let log_a = std::fs::read(first.with_file_name("log.jsonl")).map_err(err)?;
    let log_b = std::fs::read(second.with_file_name("log.jsonl")).map_err(err)?;
    let strip = |t: &[u8]| -> Vec<String> {
        String::from_utf8_lossy(t)
            .lines()
            .map(|l| l.split(",\"elapsed_s\"").next().unwrap_or("").to_string())
            .collect()
    };
    let mut reports_equal = true;
    for mode in [PromptMode::None, PromptMode::OracleLesion] {
        let ra = runs.report(&first, mode.clone())?.to_json().map_err(err)?;
        let rb = runs.report(&second, mode)?.to_json().map_err(err)?;
        reports_equal &= ra == rb;
    }
    let ckpt_equal = a == b;
    let logs_equal = strip(&log_a) == strip(&log_b);
    Ok(verdict(
        ckpt_equal && reports_equal && logs_equal,
        format!(
            "final checkpoints ({} bytes) identical: {ckpt_equal}; evaluation reports identical: {reports_equal}; epoch losses identical: {logs_equal}",
            a.len()
        ),
    ))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        match &o {
            Ok(v) => println!("{} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail),
            Err(e) => println!("FAIL {name}: error: {e}"),
        }
        results.push((name, o));
    };
    report("gradient-integrity", gradient_integrity());
    report("fpg-correctness", fpg_correctness());
    report("loss-algebra", loss_algebra());
    report("metric-oracles", metric_oracles());

    let dir = tempfile::tempdir().expect("temp dir");
    let data = dir.path().join("data");
    let setup = generate_dataset(&data, &PhantomSpec::default(), 200, DEFAULT_FRACTIONS, 0)
        .and_then(|_| Dataset::open(&data))
        .and_then(|ds| ds.load_split(Split::Test).map(|test| (ds, test)));
    match setup {
        Ok((dataset, test)) => {
            let mut runs = Runs { dataset, test, root: dir.path().join("runs"), done: BTreeMap::new() };
            report("desk-scale-training", desk_training(&mut runs));
            report("ablation-trends", ablations(&mut runs));
            report("reproducibility", reproducibility(&mut runs));
        }
        Err(e) => {
            for name in ["desk-scale-training", "ablation-trends", "reproducibility"] {
                report(name, Err(format!("dataset setup failed: {e}")));
            }
        }
    }
    let passed = results.iter().filter(|(_, o)| matches!(o, Ok(v) if v.pass)).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
