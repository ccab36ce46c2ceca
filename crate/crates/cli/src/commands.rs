use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};

use styleprior::glotrain::{load_checkpoint, save_checkpoint, train_glo_with, Checkpoint};
use styleprior::invert::{invert, FeatureExtractor, EVALUATION_SEED, OPTIMIZATION_SEED};
use styleprior::io::{fmt_f64, png_files, read_mask, read_png, write_atomic, write_mask, write_png, Csv};
use styleprior::ndiff::{downsample_avg, Tensor};
use styleprior::priors::{
    baseline_meanfill, baseline_upsample, inpaint, super_resolve, MaskSpec, SrSpec, UpsampleMode,
};
use styleprior::reanimate::{
    build_trajectory, codes_csv, reanimate_codes, reanimation_fidelity, render_video, target_identity,
};
use styleprior::sprites::{export_dataset, import_dataset, make_dataset, Identity};
use styleprior::stylegen::{LatentCode, StyleGenerator};

use crate::config::RunConfig;
use crate::eval::{inpainting_table, sr_table, strategy_table, EvalSuite};

fn out_dir(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating output directory {}", cfg.out_dir.display()))?;
    Ok(&cfg.out_dir)
}

fn load_generator(cfg: &RunConfig) -> Result<StyleGenerator> {
    let ck = load_checkpoint(&cfg.checkpoint)
        .with_context(|| format!("loading checkpoint {}", cfg.checkpoint.display()))?;
    Ok(ck.generator)
}

fn read_image(path: &Path) -> Result<Tensor> {
    read_png(path).with_context(|| format!("reading {}", path.display()))
}

fn extractors(resolution: usize) -> (FeatureExtractor, FeatureExtractor) {
    (
        FeatureExtractor::random_conv(3, resolution, OPTIMIZATION_SEED),
        FeatureExtractor::random_conv(3, resolution, EVALUATION_SEED),
    )
}

fn check_resolution(image: &Tensor, r: usize, what: &str) -> Result<()> {
    ensure!(
        image.shape() == [3, r, r],
        "{what} is {:?}, the generator works at {r}×{r}",
        &image.shape()[1..]
    );
    Ok(())
}

fn code_rows(code: &LatentCode) -> Csv {
    let mut csv = Csv::new(&["layer", "coordinate", "value"]);
    let layers: Vec<&Vec<f64>> = match code {
        LatentCode::Noise(v) | LatentCode::Global(v) => vec![v],
        LatentCode::PerLayer(c) => c.layers().iter().collect(),
    };
    for (l, z) in layers.iter().enumerate() {
        for (i, v) in z.iter().enumerate() {
            csv.row(&[l.to_string(), i.to_string(), fmt_f64(*v)]);
        }
    }
    csv
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    ensure!(cfg.count > 0, "count must be positive");
    let dir = out_dir(cfg)?;
    let samples = make_dataset(cfg.count, cfg.seed, cfg.resolution)?;
    export_dataset(dir, &samples)?;
    println!("wrote {} sprites to {}", samples.len(), dir.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let data = cfg.require("data", &cfg.data)?;
    cfg.train.validate()?;
    let samples = import_dataset(data).with_context(|| format!("reading dataset {}", data.display()))?;
    ensure!(!samples.is_empty(), "dataset {} is empty", data.display());
    let r = cfg.generator.final_resolution();
    let images: Vec<Tensor> = samples.into_iter().map(|s| s.image).collect();
    for img in &images {
        check_resolution(img, r, "a training image")?;
    }
    let dir = out_dir(cfg)?.to_path_buf();
    let gen = StyleGenerator::new(cfg.generator.clone(), cfg.seed)?;
    let (phi, _) = extractors(r);
    let outcome = train_glo_with(&images, gen, &phi, &cfg.train, |epoch, loss| {
        eprintln!("epoch {epoch:>4}  loss {}", fmt_f64(loss));
    })?;
    let mut hist = Csv::new(&["epoch", "loss"]);
    for (e, l) in outcome.loss_history.iter().enumerate() {
        hist.row(&[e.to_string(), fmt_f64(*l)]);
    }
    let ck = Checkpoint {
        generator: outcome.generator,
        codes: outcome.codes,
        loss_history: outcome.loss_history,
    };
    save_checkpoint(&dir.join("model.ckpt"), &ck)?;
    hist.write(&dir.join("loss_history.csv"))?;
    println!("wrote {}", dir.join("model.ckpt").display());
    Ok(())
}

pub fn invert_cmd(cfg: &RunConfig) -> Result<()> {
    cfg.inversion.validate()?;
    let input = cfg.require("input", &cfg.input)?;
    let gen = load_generator(cfg)?;
    let image = read_image(input)?;
    check_resolution(&image, gen.resolution(), "input")?;
    let dir = out_dir(cfg)?;
    let (phi, phi_eval) = extractors(gen.resolution());
    let r = invert(&gen, &image, &phi, &cfg.inversion)?;
    let eval_loss = phi_eval.distance(&r.image, &image)?;
    write_png(&dir.join("reconstruction.png"), &r.image)?;
    write_atomic(&dir.join("loss_curve.csv"), r.loss_curve_csv().as_bytes())?;
    code_rows(&r.code).write(&dir.join("code.csv"))?;
    let mut summary = Csv::new(&["strategy", "loss", "eval_loss"]);
    summary.row(&[cfg.inversion.strategy.to_string(), fmt_f64(r.loss), fmt_f64(eval_loss)]);
    summary.write(&dir.join("summary.csv"))?;
    println!("{} inversion: loss {} (held-out features {})", cfg.inversion.strategy, fmt_f64(r.loss), fmt_f64(eval_loss));
    Ok(())
}

/// With `mask` set, the input is the corrupted image and no ground truth is
/// known. Otherwise an `R/4` hole is cut from the input at `mask_seed` and
/// errors against the intact input are reported.
pub fn inpaint_cmd(cfg: &RunConfig) -> Result<()> {
    cfg.inversion.validate()?;
    let input = cfg.require("input", &cfg.input)?;
    let gen = load_generator(cfg)?;
    let image = read_image(input)?;
    let r = gen.resolution();
    check_resolution(&image, r, "input")?;
    let (mask, truth) = match &cfg.mask {
        Some(p) => {
            let m = read_mask(p).with_context(|| format!("reading mask {}", p.display()))?;
            (MaskSpec::new(m)?, None)
        }
        None => (MaskSpec::square_hole(r, cfg.mask_seed)?, Some(image.clone())),
    };
    ensure!(mask.resolution() == r, "mask is {0}×{0}, expected {r}×{r}", mask.resolution());
    let corrupted = mask.apply(&image)?;
    let dir = out_dir(cfg)?;
    let (phi, _) = extractors(r);
    let result = inpaint(&gen, &corrupted, &mask, &phi, &cfg.inversion)?;
    let meanfill = baseline_meanfill(&corrupted, &mask)?;
    write_png(&dir.join("inpainted.png"), &result.output)?;
    write_png(&dir.join("raw.png"), result.raw_output())?;
    write_png(&dir.join("corrupted.png"), &corrupted)?;
    write_png(&dir.join("meanfill.png"), &meanfill)?;
    write_mask(&dir.join("mask.png"), mask.mask())?;
    write_atomic(&dir.join("loss_curve.csv"), result.inversion.loss_curve_csv().as_bytes())?;
    if let Some(truth) = truth {
        let mut csv = Csv::new(&["image", "generator_error", "raw_error", "meanfill_error"]);
        let g = mask.missing_error(&result.output, &truth)?;
        let raw = mask.missing_error(result.raw_output(), &truth)?;
        let mf = mask.missing_error(&meanfill, &truth)?;
        csv.row(&[input.display().to_string(), fmt_f64(g), fmt_f64(raw), fmt_f64(mf)]);
        csv.write(&dir.join("report.csv"))?;
        println!("masked-region L1: generator {} (raw {}), mean-fill {}", fmt_f64(g), fmt_f64(raw), fmt_f64(mf));
    }
    Ok(())
}

/// A full-resolution input is downsampled by `sr_factor` and kept as ground
/// truth; an input already at `R/k` is super-resolved as is.
pub fn sr_cmd(cfg: &RunConfig) -> Result<()> {
    cfg.inversion.validate()?;
    let input = cfg.require("input", &cfg.input)?;
    let gen = load_generator(cfg)?;
    let image = read_image(input)?;
    let r = gen.resolution();
    let k = cfg.sr_factor;
    SrSpec { factor: k }.validate(r)?;
    let (lr, truth) = if image.shape() == [3, r, r] {
        (downsample_avg(&image, k)?, Some(image))
    } else {
        check_resolution(&image, r / k, "low-resolution input")?;
        (image, None)
    };
    let dir = out_dir(cfg)?;
    let (phi, _) = extractors(r);
    let result = super_resolve(&gen, &lr, &SrSpec { factor: k }, &phi, &cfg.inversion)?;
    let nearest = baseline_upsample(&lr, k, UpsampleMode::Nearest)?;
    let bilinear = baseline_upsample(&lr, k, UpsampleMode::Bilinear)?;
    write_png(&dir.join("sr.png"), result.output())?;
    write_png(&dir.join("lowres.png"), &lr)?;
    write_png(&dir.join("nearest.png"), &nearest)?;
    write_png(&dir.join("bilinear.png"), &bilinear)?;
    write_atomic(&dir.join("loss_curve.csv"), result.inversion.loss_curve_csv().as_bytes())?;
    let mut csv = Csv::new(&["image", "generator_error", "nearest_error", "bilinear_error", "residual"]);
    let errs = match &truth {
        Some(t) => [
            result.output().l1_distance(t)?,
            nearest.l1_distance(t)?,
            bilinear.l1_distance(t)?,
        ]
        .map(fmt_f64),
        None => [String::new(), String::new(), String::new()],
    };
    let [g, n, b] = errs;
    csv.row(&[input.display().to_string(), g, n, b, fmt_f64(result.residual)]);
    csv.write(&dir.join("report.csv"))?;
    println!("consistency residual {}", fmt_f64(result.residual));
    Ok(())
}

fn read_frames(path: &Path) -> Result<Vec<Tensor>> {
    if path.is_dir() {
        let files = png_files(path)?;
        ensure!(!files.is_empty(), "no PNG frames in {}", path.display());
        files.iter().map(|p| read_image(p)).collect()
    } else {
        Ok(vec![read_image(path)?])
    }
}

fn parse_identity(text: &str) -> Result<Identity> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [shape, hue, size] = parts.as_slice() else {
        bail!("target_factors must be `shape,hue,size`, got `{text}`");
    };
    Ok(Identity {
        shape: shape.parse()?,
        hue: hue.parse().context("target_factors hue")?,
        size: size.parse().context("target_factors size")?,
    })
}

pub fn reanimate_cmd(cfg: &RunConfig) -> Result<()> {
    cfg.inversion.validate()?;
    cfg.transfer.validate()?;
    let source_dir = cfg.require("source", &cfg.source)?;
    let target_path = cfg.require("target", &cfg.target)?;
    let target_id = cfg.target_factors.as_deref().map(parse_identity).transpose()?;
    let gen = load_generator(cfg)?;
    let r = gen.resolution();
    let source = read_frames(source_dir)?;
    let targets = read_frames(target_path)?;
    for f in source.iter().chain(&targets) {
        check_resolution(f, r, "a frame")?;
    }
    let dir = out_dir(cfg)?.to_path_buf();
    let (phi, _) = extractors(r);
    let traj = build_trajectory(&gen, &source, &phi, &cfg.inversion, cfg.jobs)?;
    let target = target_identity(&gen, &targets, &phi, &cfg.inversion, cfg.jobs)?;
    let codes = reanimate_codes(&traj, &target, &cfg.transfer)?;
    let frames = render_video(&gen, &codes, cfg.jobs)?;
    let frame_dir = dir.join("frames");
    fs::create_dir_all(&frame_dir)?;
    for (i, f) in frames.iter().enumerate() {
        write_png(&frame_dir.join(format!("frame_{i:05}.png")), f)?;
    }
    codes_csv(traj.frames()).write(&dir.join("source_codes.csv"))?;
    codes_csv(&codes).write(&dir.join("output_codes.csv"))?;
    codes_csv(std::slice::from_ref(&target)).write(&dir.join("target_code.csv"))?;
    if let Some(id) = target_id {
        let f = reanimation_fidelity(&source, &frames, &id)?;
        let mut csv = Csv::new(&["pose_r_x", "pose_r_y", "degenerate_x", "degenerate_y", "identity_accuracy"]);
        csv.row(&[
            fmt_f64(f.pose_r_x),
            fmt_f64(f.pose_r_y),
            f.degenerate_x.to_string(),
            f.degenerate_y.to_string(),
            fmt_f64(f.identity_accuracy),
        ]);
        csv.write(&dir.join("fidelity.csv"))?;
        println!(
            "pose r: x {:.3} y {:.3}, identity accuracy {:.3}",
            f.pose_r_x, f.pose_r_y, f.identity_accuracy
        );
    }
    println!("wrote {} frames to {}", frames.len(), frame_dir.display());
    Ok(())
}

pub fn eval_cmd(cfg: &RunConfig) -> Result<()> {
    cfg.inversion.validate()?;
    ensure!(cfg.eval_images > 0, "eval_images must be positive");
    let gen = load_generator(cfg)?;
    let dir = out_dir(cfg)?.to_path_buf();
    let suite = EvalSuite::new(&gen, cfg.eval_images, cfg.suite_seed)?;

    let strategies = strategy_table(&gen, &suite, &cfg.inversion, cfg.jobs)?;
    let inpainting = inpainting_table(&gen, &suite, cfg.mask_seed, &cfg.inversion, cfg.jobs)?;
    let sr = sr_table(&gen, &suite, cfg.sr_factor, &cfg.inversion, cfg.jobs)?;

    strategies.csv().write(&dir.join("strategies.csv"))?;
    strategies.per_image_csv().write(&dir.join("strategies_per_image.csv"))?;
    inpainting.csv().write(&dir.join("inpainting.csv"))?;
    sr.csv().write(&dir.join("sr.csv"))?;
    let text = format!("{}\n{}\n{}", strategies.text(), inpainting.text(), sr.text());
    write_atomic(&dir.join("report.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(())
}
