//! Implementations of the CLI subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};

use bmlkit::detect::{run_pipeline, write_trace, DetectConfig, Inpainter};
use bmlkit::ffc::{train, ClassicalInpainter, InpainterModel, TrainSample};
use bmlkit::image::{BinaryMask, GrayImage};
use bmlkit::io::{load_image, load_mask, save_mask, save_rgb};
use bmlkit::phantom::{gen_dataset, Manifest};
use bmlkit::pipeline::{sweep_report, InpainterProvider};

use crate::config::RunConfig;

pub fn cmd_phantom(cfg: &RunConfig) -> anyhow::Result<()> {
    let dir = cfg.dataset_dir();
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut pc = cfg.phantom.config.clone();
    pc.seed = cfg.seed;
    let manifest = gen_dataset(&pc, &cfg.phantom.dataset, &dir)?;
    println!(
        "wrote {} samples ({} train / {} val / {} test) to {}",
        manifest.entries.len(),
        manifest.split("train").count(),
        manifest.split("val").count(),
        manifest.split("test").count(),
        dir.display()
    );
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<()> {
    let manifest_path = cfg.manifest_path();
    if !manifest_path.exists() {
        bail!(
            "no dataset manifest at {}; run `bmlkit phantom` first",
            manifest_path.display()
        );
    }
    let manifest = Manifest::load(&manifest_path)?;
    let base = cfg.dataset_dir();
    let samples: Vec<TrainSample> = manifest
        .split("train")
        .map(|e| {
            if e.lesion_area_px != 0 {
                bail!("training sample {} is not lesion-free", e.id);
            }
            Ok(TrainSample {
                image: e.load_image(&base)?,
                bone: e.load_bone(&base)?,
            })
        })
        .collect::<anyhow::Result<_>>()?;
    if samples.is_empty() {
        bail!("manifest has no training samples");
    }

    let mut tc = cfg.train.config.clone();
    tc.seed = cfg.seed;
    let mut model = InpainterModel::init(cfg.train.arch.clone(), cfg.seed)?;
    let trace = train(&mut model, &samples, &tc)?;

    let resolution = manifest.size;
    let ckpt = cfg.checkpoint_path(resolution);
    if let Some(parent) = ckpt.parent() {
        std::fs::create_dir_all(parent)?;
    }
    model.save(&ckpt)?;

    let mut csv = String::from("step,loss\n");
    for (i, l) in trace.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l:.9}");
    }
    let trace_path = cfg.out_dir.join("train_trace.csv");
    std::fs::write(&trace_path, csv)?;
    println!(
        "trained {} steps; checkpoint {}, trace {}",
        trace.len(),
        ckpt.display(),
        trace_path.display()
    );
    Ok(())
}

pub struct DetectArgs {
    pub image: Option<PathBuf>,
    pub bone: Option<PathBuf>,
    pub split: Option<String>,
    pub classical: bool,
    pub trace: bool,
    pub overlay: bool,
}

fn build_inpainter(
    cfg: &RunConfig,
    classical_flag: bool,
    resolution: usize,
) -> anyhow::Result<Box<dyn Inpainter + Sync>> {
    let choice = if classical_flag { "classical" } else { cfg.detect.inpainter.as_str() };
    match choice {
        "classical" => Ok(Box::new(ClassicalInpainter {
            tolerance: cfg.detect.classical_tolerance,
            max_iters: cfg.detect.classical_max_iters,
        })),
        "trained" => {
            let path = cfg.checkpoint_path(resolution);
            if !path.exists() {
                bail!(
                    "no checkpoint at {}; run `bmlkit train` or pass --classical",
                    path.display()
                );
            }
            Ok(Box::new(InpainterModel::load(&path)?))
        }
        other => bail!("detect.inpainter must be \"trained\" or \"classical\", got {other:?}"),
    }
}

fn detect_one(
    cfg: &RunConfig,
    id: &str,
    image: &GrayImage,
    bone: &BinaryMask,
    inpainter: &dyn Inpainter,
    args: &DetectArgs,
    truth: Option<&BinaryMask>,
) -> anyhow::Result<()> {
    let detect_cfg = cfg
        .detect
        .config
        .clone()
        .unwrap_or_else(|| DetectConfig::for_size(image.width().max(image.height())));
    let (mask, trace) = run_pipeline(image, bone, inpainter, &detect_cfg)?;
    let out_dir = cfg.out_dir.join("detect");
    std::fs::create_dir_all(&out_dir)?;
    save_mask(&mask, &out_dir.join(format!("{id}_mask.pgm")))?;
    if args.trace {
        write_trace(&trace, &out_dir, id)?;
    }
    if args.overlay {
        let overlay = render_overlay(image, &mask, truth);
        save_rgb(
            &out_dir.join(format!("{id}_overlay.png")),
            image.width(),
            image.height(),
            &overlay,
        )?;
    }
    Ok(())
}

pub fn cmd_detect(cfg: &RunConfig, args: &DetectArgs) -> anyhow::Result<()> {
    match (&args.image, &args.split) {
        (Some(image_path), _) => {
            let bone_path = args
                .bone
                .as_ref()
                .ok_or_else(|| anyhow::anyhow!("--image requires --bone"))?;
            let image = load_image(image_path)?;
            let bone = load_mask(bone_path)?;
            if !bone.same_size_as_image(&image) {
                bail!("image and bone mask dimensions differ");
            }
            let inpainter = build_inpainter(cfg, args.classical, image.width())?;
            let id = image_path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("slice")
                .to_string();
            detect_one(cfg, &id, &image, &bone, inpainter.as_ref(), args, None)?;
            println!("wrote {}", cfg.out_dir.join("detect").display());
            Ok(())
        }
        (None, split) => {
            let split = split.clone().unwrap_or_else(|| "test".to_string());
            let manifest = Manifest::load(&cfg.manifest_path())?;
            let base = cfg.dataset_dir();
            let inpainter = build_inpainter(cfg, args.classical, manifest.size)?;
            let mut n = 0;
            for e in manifest.split(&split) {
                let image = e.load_image(&base)?;
                let bone = e.load_bone(&base)?;
                let truth = e.load_lesion(&base)?;
                detect_one(cfg, &e.id, &image, &bone, inpainter.as_ref(), args, Some(&truth))?;
                n += 1;
            }
            if n == 0 {
                bail!("manifest has no '{split}' entries");
            }
            println!("processed {n} slices into {}", cfg.out_dir.join("detect").display());
            Ok(())
        }
    }
}

/// Grayscale base with the predicted mask contour in red and, when known,
/// the ground-truth contour in green.
fn render_overlay(image: &GrayImage, pred: &BinaryMask, truth: Option<&BinaryMask>) -> Vec<u8> {
    let (w, h) = (image.width(), image.height());
    let mut rgb = vec![0u8; w * h * 3];
    for (i, &v) in image.data().iter().enumerate() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        rgb[3 * i] = g;
        rgb[3 * i + 1] = g;
        rgb[3 * i + 2] = g;
    }
    let contour = |mask: &BinaryMask, x: usize, y: usize| -> bool {
        if !mask.get(x, y) {
            return false;
        }
        let mut edge = x == 0 || y == 0 || x == w - 1 || y == h - 1;
        if !edge {
            edge = !mask.get(x - 1, y) || !mask.get(x + 1, y) || !mask.get(x, y - 1) || !mask.get(x, y + 1);
        }
        edge
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if let Some(t) = truth {
                if contour(t, x, y) {
                    rgb[3 * i] = 0;
                    rgb[3 * i + 1] = 200;
                    rgb[3 * i + 2] = 0;
                }
            }
            if contour(pred, x, y) {
                rgb[3 * i] = 230;
                rgb[3 * i + 1] = 30;
                rgb[3 * i + 2] = 30;
            }
        }
    }
    rgb
}

struct ConfiguredProvider<'a> {
    cfg: &'a RunConfig,
    classical: bool,
}

impl InpainterProvider for ConfiguredProvider<'_> {
    fn for_resolution(&self, resolution: usize) -> bmlkit::Result<Box<dyn Inpainter + Sync>> {
        if self.classical || self.cfg.detect.inpainter == "classical" {
            return Ok(Box::new(ClassicalInpainter {
                tolerance: self.cfg.detect.classical_tolerance,
                max_iters: self.cfg.detect.classical_max_iters,
            }));
        }
        let path = self.cfg.checkpoint_path(resolution);
        if !path.exists() {
            return Err(bmlkit::Error::Config(format!(
                "no checkpoint for resolution {resolution} at {}",
                path.display()
            )));
        }
        Ok(Box::new(InpainterModel::load(&path)?))
    }
}

pub fn cmd_eval(cfg: &RunConfig, classical: bool, resolutions: Option<Vec<usize>>) -> anyhow::Result<()> {
    let manifest = Manifest::load(&cfg.manifest_path())?;
    let base = cfg.dataset_dir();
    let resolutions = resolutions.unwrap_or_else(|| cfg.eval.resolutions.clone());
    let provider = ConfiguredProvider { cfg, classical };
    let report = sweep_report(
        &manifest,
        &base,
        &cfg.eval.split,
        &resolutions,
        &provider,
        cfg.region_full()?,
        cfg.eval.size_groups,
    )?;
    let eval_dir = cfg.out_dir.join("eval");
    std::fs::create_dir_all(&eval_dir)?;
    std::fs::write(eval_dir.join("metrics.csv"), report.per_slice_csv())?;
    std::fs::write(eval_dir.join("summary.csv"), report.summary_csv())?;
    std::fs::write(
        eval_dir.join("report.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    print!("{}", report.render_text());
    println!("reports in {}", eval_dir.display());
    Ok(())
}

pub fn cmd_report(cfg: &RunConfig) -> anyhow::Result<()> {
    let path = cfg.out_dir.join("eval/report.json");
    if !path.exists() {
        bail!("no report at {}; run `bmlkit eval` first", path.display());
    }
    let report: bmlkit::eval::EvalReport = serde_json::from_slice(&std::fs::read(&path)?)?;
    let text = report.render_text();
    std::fs::write(cfg.out_dir.join("eval/report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
