//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Every criterion runs even if an earlier one fails. The process exits 0
//! unless `ACCEPTANCE_STRICT=1` is set, in which case any FAIL is an error.
//! `ACCEPTANCE_ONLY=3,7` restricts the run to the listed criteria.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use styleprior::glotrain::load_checkpoint;
use styleprior::invert::{
    invert, FeatureExtractor, InversionConfig, Strategy, OPTIMIZATION_SEED,
};
use styleprior::ndiff::{check_gradients, Graph, Tensor, Var, ADAIN_EPS};
use styleprior::priors::{inpaint, super_resolve, MaskSpec, SrSpec};
use styleprior::reanimate::{
    build_trajectory, mean_step_distance, reanimate_codes, reanimation_fidelity, render_video,
    target_identity, transfer, LatentTrajectory, TransferConfig,
};
use styleprior::sprites::{
    make_trajectory, render, Factors, Identity, Pose, PosePath, ShapeKind, Wave,
};
use styleprior::stylegen::{GeneratorConfig, LatentCode, PerLayerCodes, StyleGenerator, LEAKY_SLOPE};
use styleprior_cli::config::reference_checkpoint;
use styleprior_cli::eval::{inpainting_table, sr_table, strategy_table, EvalSuite};

const SUITE_SEED: u64 = 1234;
const SUITE_SIZE: usize = 20;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn reference() -> Result<StyleGenerator> {
    let path = reference_checkpoint();
    Ok(load_checkpoint(&path)
        .with_context(|| format!("loading {}", path.display()))?
        .generator)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: Vec<usize>, seed: u64) -> Tensor {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// `Σ w_i y_i` with fixed random weights, a smooth scalar readout.
fn readout(g: &mut Graph, y: Var, seed: u64) -> styleprior::Result<Var> {
    let w = randn(g.value(y).shape().to_vec(), seed);
    let wv = g.constant(w);
    let p = g.mul(y, wv)?;
    let n = g.value(p).len();
    let flat = g.concat(&[p])?;
    let parts: Vec<Var> = (0..n).map(|i| g.narrow(flat, i, 1)).collect::<styleprior::Result<_>>()?;
    g.sum(&parts)
}

// 1 -------------------------------------------------------------------------

fn gradient_suite() -> Result<Outcome> {
    const H: f64 = 1e-6;
    let mut worst: Vec<(&str, f64)> = Vec::new();
    let mut check = |name: &'static str, e: styleprior::Result<f64>| -> Result<()> {
        worst.push((name, e?));
        Ok(())
    };

    let x = randn(vec![3, 6, 6], 1);
    let k = randn(vec![4, 3, 3, 3], 2);
    let b = randn(vec![4], 3);
    let (k2, b2) = (k.clone(), b.clone());
    check("conv2d/input", check_gradients(|g, v| {
        let (kv, bv) = (g.constant(k2.clone()), g.constant(b2.clone()));
        let y = g.conv2d(v, kv, bv, 1)?;
        readout(g, y, 10)
    }, &x, H))?;
    let x2 = x.clone();
    check("conv2d_strided/kernel", check_gradients(|g, v| {
        let (xv, bv) = (g.constant(x2.clone()), g.constant(b2.clone()));
        let y = g.conv2d_strided(xv, v, bv, 2, 1)?;
        readout(g, y, 11)
    }, &k, H))?;
    let (x3, k3) = (x.clone(), k.clone());
    check("conv2d/bias", check_gradients(|g, v| {
        let (xv, kv) = (g.constant(x3.clone()), g.constant(k3.clone()));
        let y = g.conv2d(xv, kv, v, 0)?;
        readout(g, y, 12)
    }, &b, H))?;

    let s = randn(vec![3], 4);
    let bb = randn(vec![3], 5);
    let (s2, bb2) = (s.clone(), bb.clone());
    check("adain/input", check_gradients(|g, v| {
        let (sv, bv) = (g.constant(s2.clone()), g.constant(bb2.clone()));
        let y = g.adain(v, sv, bv, ADAIN_EPS)?;
        readout(g, y, 13)
    }, &x, H))?;
    let x4 = x.clone();
    check("adain/scale", check_gradients(|g, v| {
        let (xv, bv) = (g.constant(x4.clone()), g.constant(bb2.clone()));
        let y = g.adain(xv, v, bv, ADAIN_EPS)?;
        readout(g, y, 14)
    }, &s, H))?;
    let x5 = x.clone();
    check("adain/bias", check_gradients(|g, v| {
        let (xv, sv) = (g.constant(x5.clone()), g.constant(s2.clone()));
        let y = g.adain(xv, sv, v, ADAIN_EPS)?;
        readout(g, y, 15)
    }, &bb, H))?;

    let w = randn(vec![5, 4], 6);
    let wb = randn(vec![5], 7);
    let z = randn(vec![4], 8);
    let (w2, wb2) = (w.clone(), wb.clone());
    check("linear/input", check_gradients(|g, v| {
        let (wv, bv) = (g.constant(w2.clone()), g.constant(wb2.clone()));
        let y = g.linear(v, wv, bv)?;
        readout(g, y, 16)
    }, &z, H))?;
    let z2 = z.clone();
    check("linear/weight", check_gradients(|g, v| {
        let (zv, bv) = (g.constant(z2.clone()), g.constant(wb2.clone()));
        let y = g.linear(zv, v, bv)?;
        readout(g, y, 17)
    }, &w, H))?;

    check("leaky_relu", check_gradients(|g, v| {
        let y = g.leaky_relu(v, LEAKY_SLOPE)?;
        readout(g, y, 18)
    }, &x, H))?;
    check("tanh", check_gradients(|g, v| {
        let y = g.tanh(v)?;
        readout(g, y, 19)
    }, &x, H))?;
    check("upsample2x", check_gradients(|g, v| {
        let y = g.upsample2x(v)?;
        readout(g, y, 20)
    }, &x, H))?;
    check("downsample_avg", check_gradients(|g, v| {
        let y = g.downsample_avg(v, 2)?;
        readout(g, y, 21)
    }, &x, H))?;
    let other = randn(vec![3, 6, 6], 9);
    let o2 = other.clone();
    check("add/mul/scale", check_gradients(|g, v| {
        let o = g.constant(o2.clone());
        let a = g.add(v, o)?;
        let m = g.mul(a, v)?;
        let y = g.scale(m, -0.7)?;
        readout(g, y, 22)
    }, &x, H))?;
    let o3 = other.clone();
    check("l1_loss", check_gradients(|g, v| {
        let o = g.constant(o3.clone());
        g.l1_loss(v, o)
    }, &x, H))?;

    // Full composition: per-layer codes → synthesis → φ → L1 against a
    // target, plus the noise path through the mapping network.
    let cfg = GeneratorConfig {
        latent_dim: 4,
        mapping_depth: 2,
        base_resolution: 4,
        channels: vec![4, 3],
        out_channels: 3,
    };
    let gen = StyleGenerator::new(cfg, 3)?;
    let phi = FeatureExtractor::random_conv(3, 8, OPTIMIZATION_SEED);
    let target = phi.features(&render(
        &Factors {
            identity: Identity { shape: ShapeKind::Square, hue: 0.3, size: 0.35 },
            pose: Pose { x: 0.45, y: 0.55, rotation: 0.4 },
        },
        8,
    )?)?;
    let layers = gen.style_layers();
    let codes = randn(vec![layers * 4], 30);
    let composite = |g: &mut Graph, flat: Var, noise: bool| -> styleprior::Result<Var> {
        let p = gen.bind(g, false);
        let per: Vec<Var> = if noise {
            let zs = gen.map_var(g, &p, flat)?;
            vec![zs; layers]
        } else {
            (0..layers).map(|l| g.narrow(flat, 4 * l, 4)).collect::<styleprior::Result<_>>()?
        };
        let img = gen.synthesize_var(g, &p, &per)?;
        let f = phi.features_var(g, img)?;
        let t = g.constant(target.clone());
        g.l1_loss(f, t)
    };
    check("generator→φ→L1 / per-layer codes", check_gradients(|g, v| composite(g, v, false), &codes, H))?;
    check("mapping→generator→φ→L1 / noise", check_gradients(|g, v| composite(g, v, true), &randn(vec![4], 31), H))?;

    // Parameter gradients used by training.
    let style_w = gen.params().iter().position(|p| p.name == "style.1.weight").expect("param exists");
    let codes2 = codes.clone();
    check("generator→φ→L1 / style weight", check_gradients(|g, v| {
        let mut p = gen.bind(g, false);
        p.0[style_w] = v;
        let per: Vec<Var> = (0..layers)
            .map(|l| {
                let c = Tensor::vector(codes2.data()[4 * l..4 * l + 4].to_vec());
                g.constant(c)
            })
            .collect();
        let img = gen.synthesize_var(g, &p, &per)?;
        let f = phi.features_var(g, img)?;
        let t = g.constant(target.clone());
        g.l1_loss(f, t)
    }, &gen.params()[style_w].value, H))?;

    let (name, max) = worst
        .iter()
        .copied()
        .fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    outcome(
        max < 1e-5,
        format!("{} checks, max relative error {max:.2e} ({name}), tolerance 1e-5", worst.len()),
    )
}

// 2 -------------------------------------------------------------------------

fn self_inversion(gen: &StyleGenerator, cfg: &InversionConfig) -> Result<Outcome> {
    let phi = FeatureExtractor::random_conv(3, gen.resolution(), OPTIMIZATION_SEED);
    let d = gen.latent_dim();
    let images: Vec<Tensor> = (0..10)
        .map(|i| {
            let mut r = rng(500 + i);
            let s: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
            gen.generate(&s)
        })
        .collect::<styleprior::Result<_>>()?;
    let cfg = InversionConfig {
        strategy: Strategy::PerLayer,
        ..cfg.clone()
    };
    let ratios = styleprior::parallel::map_jobs(&images, jobs(), |_, img| {
        let r = invert(gen, img, &phi, &cfg)?;
        Ok(r.loss / r.loss_curve[0].1)
    })?;
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let passed = ratios.iter().filter(|r| **r <= 0.01).count();
    outcome(
        passed == ratios.len(),
        format!(
            "{passed}/10 images reach final/zero-init loss ≤ 1% in {} iterations (worst ratio {:.4})",
            cfg.iterations, worst
        ),
    )
}

// 3 4 5 ---------------------------------------------------------------------

fn strategy_ordering(gen: &StyleGenerator, suite: &EvalSuite, cfg: &InversionConfig) -> Result<Outcome> {
    let t = strategy_table(gen, suite, cfg, jobs())?;
    let m = |s| t.mean_loss(s).unwrap_or(f64::NAN);
    let (p, g, n) = (m(Strategy::PerLayer), m(Strategy::Global), m(Strategy::Noise));
    outcome(
        t.ordered(),
        format!("mean loss per-layer {p:.4e} < global {g:.4e} < noise {n:.4e}"),
    )
}

fn inpainting_ordering(gen: &StyleGenerator, suite: &EvalSuite, cfg: &InversionConfig) -> Result<Outcome> {
    let t = inpainting_table(gen, suite, 0, cfg, jobs())?;
    let kept = t.rows.iter().all(|r| r.observed_kept);
    let (gm, mf, win) = (t.mean_generator(), t.mean_meanfill(), t.win_rate());
    outcome(
        win >= 0.9 && gm < mf && kept,
        format!(
            "generator beats mean-fill on {:.0}% of images (need ≥ 90%); mean {gm:.4e} vs {mf:.4e}; observed pixels kept: {kept}",
            100.0 * win
        ),
    )
}

fn sr_ordering(gen: &StyleGenerator, suite: &EvalSuite, cfg: &InversionConfig) -> Result<Outcome> {
    let t = sr_table(gen, suite, 4, cfg, jobs())?;
    let [g, n, b] = t.means();
    let residual = t.residual_always_lower();
    let lower = t.rows.iter().filter(|r| r.residual < r.zero_residual).count();
    outcome(
        g < n && g < b && residual,
        format!(
            "mean error generator {g:.4e}, nearest {n:.4e}, bilinear {b:.4e}; residual below zero-code on {lower}/{}",
            t.rows.len()
        ),
    )
}

// 6 -------------------------------------------------------------------------

/// Disk source and target: the grid oracle only identifies disks reliably
/// away from grid poses.
fn reanimation(gen: &StyleGenerator, cfg: &InversionConfig) -> Result<Outcome> {
    let r = gen.resolution();
    let phi = FeatureExtractor::random_conv(3, r, OPTIMIZATION_SEED);
    let source_id = Identity { shape: ShapeKind::Disk, hue: 0.0, size: 0.2 + 0.2 * 5.0 / 7.0 };
    let target_id = Identity { shape: ShapeKind::Disk, hue: 0.625, size: 0.2 + 0.2 * 3.0 / 7.0 };
    let path = PosePath {
        x: Wave { mean: 0.5, amplitude: 0.15, period: 30.0, phase: 0.0 },
        y: Wave { mean: 0.5, amplitude: 0.15, period: 20.0, phase: 0.5 },
        rotation_start: 0.0,
        rotation_rate: 0.0,
    };
    let source: Vec<Tensor> = make_trajectory(source_id, &path, 60, r)?
        .into_iter()
        .map(|s| s.image)
        .collect();
    let still = render(
        &Factors { identity: target_id, pose: Pose { x: 0.5, y: 0.5, rotation: 0.0 } },
        r,
    )?;
    let traj = build_trajectory(gen, &source, &phi, cfg, jobs())?;
    let target = target_identity(gen, &[still], &phi, cfg, 1)?;
    let tcfg = TransferConfig::default();
    let codes = reanimate_codes(&traj, &target, &tcfg)?;
    let raw = reanimate_codes(&traj, &target, &TransferConfig { window: 1, ..tcfg })?;
    let video = render_video(gen, &codes, jobs())?;
    let f = reanimation_fidelity(&source, &video, &target_id)?;
    let (smooth, rough) = (mean_step_distance(&codes), mean_step_distance(&raw));
    outcome(
        f.pose_r_x > 0.8 && f.pose_r_y > 0.8 && f.identity_accuracy >= 0.9 && smooth < rough,
        format!(
            "pose r x {:.3} y {:.3} (need > 0.8); identity accuracy {:.3} (need ≥ 0.9); step distance smoothed {smooth:.4} vs raw {rough:.4}",
            f.pose_r_x, f.pose_r_y, f.identity_accuracy
        ),
    )
}

// 7 -------------------------------------------------------------------------

fn identities(gen: &StyleGenerator) -> Result<Outcome> {
    let mut notes = Vec::new();
    let mut all = true;
    let mut note = |ok: bool, s: String| {
        all &= ok;
        notes.push(format!("{}{s}", if ok { "" } else { "FAILED " }));
    };

    let (layers, d) = (gen.style_layers(), gen.latent_dim());
    let mut r = rng(77);
    let frames: Vec<PerLayerCodes> = (0..12)
        .map(|_| {
            PerLayerCodes(
                (0..layers)
                    .map(|_| (0..d).map(|_| StandardNormal.sample(&mut r)).collect())
                    .collect(),
            )
        })
        .collect();
    let traj = LatentTrajectory::from_codes(frames.clone())?;
    let mut worst_sum = 0.0_f64;
    for l in 0..layers {
        for k in 0..d {
            let s: f64 = traj.deltas().iter().map(|dz| dz.layers()[l][k]).sum();
            worst_sum = worst_sum.max(s.abs());
        }
    }
    note(worst_sum <= 1e-12 * frames.len() as f64, format!("|Σ dz| ≤ {worst_sum:.1e}"));

    let back = transfer(traj.identity(), traj.deltas(), &TransferConfig::default())?;
    let ulp = back
        .iter()
        .zip(&frames)
        .flat_map(|(a, b)| a.layers().iter().flatten().zip(b.layers().iter().flatten()).map(|(x, y)| (x - y).abs() / (f64::EPSILON * x.abs().max(y.abs()).max(1.0))).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    note(ulp <= 4.0, format!("self-transfer within {ulp:.1} ulp"));

    let phi = FeatureExtractor::random_conv(3, gen.resolution(), OPTIMIZATION_SEED);
    let img = EvalSuite::new(gen, 1, SUITE_SEED)?.images.remove(0);
    let cfg = InversionConfig { iterations: 40, ..InversionConfig::default() };
    let plain = invert(gen, &img, &phi, &cfg)?;
    let masked = inpaint(gen, &img, &MaskSpec::all_observed(gen.resolution()), &phi, &cfg)?;
    note(masked.inversion == plain, "all-ones inpainting == inversion".into());
    let sr = super_resolve(gen, &img, &SrSpec { factor: 1 }, &phi, &cfg)?;
    note(sr.inversion == plain, "k=1 super-resolution == inversion".into());

    let a = PerLayerCodes(frames[0].layers().to_vec());
    let b = PerLayerCodes(frames[1].layers().to_vec());
    let ends = gen.style_mix(&a, &b, 0)? == gen.synthesize(&b)?
        && gen.style_mix(&a, &b, layers)? == gen.synthesize(&a)?;
    note(ends, "style_mix endpoints == pure synthesis".into());
    outcome(all, notes.join("; "))
}

// 8 -------------------------------------------------------------------------

fn brute_force_oracle(cfg: &InversionConfig) -> Result<Outcome> {
    let gen = StyleGenerator::new(
        GeneratorConfig {
            latent_dim: 2,
            mapping_depth: 1,
            base_resolution: 4,
            channels: vec![6, 6],
            out_channels: 3,
        },
        11,
    )?;
    let phi = FeatureExtractor::random_conv(3, gen.resolution(), OPTIMIZATION_SEED);
    let cfg = InversionConfig { strategy: Strategy::Global, ..cfg.clone() };
    let grid: Vec<f64> = (0..=100).map(|i| -1.0 + 0.02 * i as f64).collect();
    let mut r = rng(8);
    let mut worst = 0.0_f64;
    for _ in 0..5 {
        let truth = [
            grid[rand::Rng::random_range(&mut r, 20..81)],
            grid[rand::Rng::random_range(&mut r, 20..81)],
        ];
        let img = gen.synthesize_global(&truth)?;
        let target = phi.features(&img)?;
        let mut best = (f64::INFINITY, [0.0, 0.0]);
        for &a in &grid {
            for &b in &grid {
                let l = phi.features(&gen.synthesize_global(&[a, b])?)?.l1_distance(&target)?;
                if l < best.0 {
                    best = (l, [a, b]);
                }
            }
        }
        let res = invert(&gen, &img, &phi, &cfg)?;
        let LatentCode::Global(z) = &res.code else {
            anyhow::bail!("global strategy returned another code kind");
        };
        let dist = ((z[0] - best.1[0]).powi(2) + (z[1] - best.1[1]).powi(2)).sqrt();
        worst = worst.max(dist);
    }
    outcome(
        worst <= 1e-2,
        format!("max latent L2 distance to 101×101 grid optimum {worst:.2e} over 5 images (tolerance 1e-2)"),
    )
}

// 9 -------------------------------------------------------------------------

fn files(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir)?.to_path_buf(), fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

fn pipeline(root: &Path) -> Result<()> {
    let bin = env!("CARGO_BIN_EXE_styleprior");
    let data = root.join("data");
    let model = root.join("model");
    let eval = root.join("eval");
    let p = |x: &Path| x.display().to_string();
    let steps: Vec<Vec<String>> = vec![
        vec!["gen-data".into(), "--seed".into(), "5".into(), "--out-dir".into(), p(&data), "--set".into(), "count=32".into()],
        vec![
            "train".into(), "--seed".into(), "5".into(), "--data".into(), p(&data), "--out-dir".into(), p(&model),
            "--set".into(), "channels=32,32,16,16".into(), "--set".into(), "epochs=4".into(),
            "--set".into(), "param_lr=0.01".into(), "--set".into(), "latent_lr=0.1".into(),
        ],
        vec![
            "eval".into(), "--seed".into(), "5".into(), "--checkpoint".into(), p(&model.join("model.ckpt")),
            "--out-dir".into(), p(&eval), "--iterations".into(), "25".into(), "--set".into(), "eval_images=3".into(),
            "--jobs".into(), jobs().to_string(),
        ],
    ];
    for args in steps {
        let out = Command::new(bin).args(&args).output()?;
        ensure!(out.status.success(), "{} failed: {}", args[0], String::from_utf8_lossy(&out.stderr));
    }
    Ok(())
}

fn determinism() -> Result<Outcome> {
    let t = Instant::now();
    let dir = tempfile::tempdir()?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&a)?;
    pipeline(&b)?;
    let (fa, fb) = (files(&a)?, files(&b)?);
    let differing: Vec<String> = fa
        .keys()
        .chain(fb.keys())
        .filter(|k| fa.get(*k) != fb.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let elapsed = t.elapsed();
    outcome(
        differing.is_empty() && !fa.is_empty() && elapsed < Duration::from_secs(45 * 60),
        format!(
            "{} files compared, {} differ{}; two runs took {:.0}s",
            fa.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(" ({})", differing.join(", ")) },
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let only: Option<Vec<u8>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let wanted = |n: u8| only.as_ref().is_none_or(|o| o.contains(&n));

    let cfg = InversionConfig::default();
    let gen = reference();
    let suite = gen
        .as_ref()
        .ok()
        .map(|g| EvalSuite::new(g, SUITE_SIZE, SUITE_SEED));

    type Check<'a> = Box<dyn Fn() -> Result<Outcome> + 'a>;
    let with_gen = |f: fn(&StyleGenerator) -> Result<Outcome>| -> Check<'_> {
        let gen = &gen;
        Box::new(move || match gen {
            Ok(g) => f(g),
            Err(e) => Err(anyhow::anyhow!("{e:#}")),
        })
    };
    let with_suite = |f: fn(&StyleGenerator, &EvalSuite, &InversionConfig) -> Result<Outcome>| -> Check<'_> {
        let (gen, suite, cfg) = (&gen, &suite, &cfg);
        Box::new(move || match (gen, suite) {
            (Ok(g), Some(Ok(s))) => f(g, s, cfg),
            (Err(e), _) => Err(anyhow::anyhow!("{e:#}")),
            (_, Some(Err(e))) => Err(anyhow::anyhow!("{e:#}")),
            _ => unreachable!(),
        })
    };

    let checks: Vec<(u8, &str, Check<'_>)> = vec![
        (1, "gradient suite", Box::new(gradient_suite)),
        (2, "self-inversion", with_gen(|g| self_inversion(g, &InversionConfig::default()))),
        (3, "strategy ordering", with_suite(strategy_ordering)),
        (4, "inpainting ordering", with_suite(inpainting_ordering)),
        (5, "super-resolution ordering", with_suite(sr_ordering)),
        (6, "reanimation fidelity", with_gen(|g| reanimation(g, &InversionConfig::default()))),
        (7, "exact identities", with_gen(identities)),
        (8, "brute-force oracle", Box::new(|| brute_force_oracle(&InversionConfig::default()))),
        (9, "pipeline determinism", Box::new(determinism)),
    ];

    let mut failures = 0;
    for (n, name, check) in checks {
        if !wanted(n) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match check() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e:#}")),
        };
        failures += usize::from(!pass);
        println!(
            "{} [{n}] {name}: {detail} ({:.0}s)",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if strict && failures > 0 {
        std::process::exit(1);
    }
}
