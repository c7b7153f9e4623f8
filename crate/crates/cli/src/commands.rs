use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use gigadetect_core::classifier::{
    ensemble_average, load_model, train_toy as train, ConstantClassifier, OracleClassifier, PatchClassifier, TrainConfig,
};
use gigadetect_core::color_norm::{apply_normalization, fit_color_stats, reference_stats, tissue_pixels, ColorStats};
use gigadetect_core::detection_metrics::{
    evaluate as run_evaluation, froc_svg, roc_svg, write_points_csvs, EvalConfig, SlideTruth,
};
use gigadetect_core::heatmap_engine::{infer_heatmap, Heatmap, InferenceConfig};
use gigadetect_core::patch_pipeline::{
    load_split, parse_magnifications, tissue_grid, write_dump, AugmentParams, Augmenter, TrainingSampler,
};
use gigadetect_core::seeds::derive_seed;
use gigadetect_core::slide_store::{
    generate_synthetic_slide, DatasetManifest, ManifestEntry, RegionMap, SlideLabel, SlidePyramid, Split,
    SyntheticSlideConfig,
};
use gigadetect_core::{Error, Result};
use rayon::prelude::*;

use crate::{ApplyColorArgs, EvalArgs, FitColorArgs, InferArgs, InspectColorArgs, SampleArgs, SynthArgs, TissueArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("value serializes")
}

fn entries(manifest: &DatasetManifest, split: Option<Split>) -> Vec<ManifestEntry> {
    manifest
        .entries()
        .iter()
        .filter(|e| split.map_or(true, |s| e.split == s))
        .cloned()
        .collect()
}

fn synth_config(args: &SynthArgs, slide_id: &str, tumor: bool) -> SyntheticSlideConfig {
    let d = SyntheticSlideConfig::default();
    // shape parameters are tuned for 1024 px slides; scale them with the size
    let s = args.size as f64 / d.width as f64;
    let scale = |v: u32| ((v as f64 * s).round() as u32).max(1);
    SyntheticSlideConfig {
        slide_id: slide_id.to_string(),
        width: args.size,
        height: args.size,
        mpp: args.mpp,
        tissue_radius: d.tissue_radius.map(scale),
        tumor_count: if tumor { args.tumors_per_slide } else { 0 },
        tumor_radius: d.tumor_radius.map(scale),
        tumor_margin: scale(d.tumor_margin),
        min_separation: scale(d.min_separation),
        seed: derive_seed(args.seed, &["synth", slide_id]),
        ..d
    }
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let tumor_slides = args.tumor_slides.unwrap_or(args.slides / 2);
    if tumor_slides > args.slides {
        return Err(Error::Argument(format!(
            "--tumor-slides {tumor_slides} exceeds --slides {}",
            args.slides
        )));
    }
    if args.non_exhaustive > tumor_slides {
        return Err(Error::Argument(format!(
            "--non-exhaustive {} exceeds the {tumor_slides} tumor slides",
            args.non_exhaustive
        )));
    }
    let mut plan = Vec::new();
    for &split in &args.splits {
        let split = Split::from(split);
        for i in 0..args.slides {
            let tumor = i < tumor_slides;
            let kind = if tumor { "tumor" } else { "normal" };
            plan.push((format!("{split}_{kind}_{i:03}"), split, tumor, !(tumor && i < args.non_exhaustive)));
        }
    }
    create_dir(&args.out.join("slides"))?;
    create_dir(&args.out.join("masks"))?;
    let written: Vec<ManifestEntry> = plan
        .par_iter()
        .map(|(id, split, tumor, exhaustive)| {
            let slide = generate_synthetic_slide(&synth_config(&args, id, *tumor))?;
            let image_path = PathBuf::from("slides").join(id);
            slide.pyramid.write(&args.out.join(&image_path), args.tile_size)?;
            let mask_path = if *tumor {
                let p = PathBuf::from("masks").join(format!("{id}.json"));
                slide.mask.save(&args.out.join(&p))?;
                Some(p)
            } else {
                None
            };
            Ok(ManifestEntry {
                slide_id: id.clone(),
                image_path,
                mask_path,
                label: if *tumor { SlideLabel::Tumor } else { SlideLabel::Normal },
                split: *split,
                exhaustive_annotations: *exhaustive,
                mpp: args.mpp,
            })
        })
        .collect::<Result<_>>()?;
    let n = written.len();
    let manifest = DatasetManifest::new(written, &args.out)?;
    manifest.save(&args.out.join("manifest.json"))?;
    println!("wrote {n} slides and manifest.json to {}", args.out.display());
    Ok(())
}

pub fn tissue_mask(args: TissueArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    create_dir(&args.out)?;
    let list = entries(&manifest, args.split.map(Split::from));
    let counts: Vec<(String, usize, usize)> = list
        .par_iter()
        .map(|e| {
            let slide = manifest.open_slide(e)?;
            let grid = tissue_grid(&slide, args.gray_threshold)?;
            write_text(&args.out.join(format!("{}.json", e.slide_id)), &grid.to_json(&e.slide_id, args.gray_threshold))?;
            Ok((e.slide_id.clone(), grid.tissue_count(), grid.rows() * grid.cols()))
        })
        .collect::<Result<_>>()?;
    for (id, tissue, total) in counts {
        println!("{id}: {tissue}/{total} tissue cells");
    }
    Ok(())
}

fn sampler(manifest: &Path, split: Split, gray: f64, seed: u64, jitter: u32) -> Result<TrainingSampler> {
    let manifest = DatasetManifest::load(manifest)?;
    let slides = load_split(&manifest, split, gray)?;
    TrainingSampler::new(slides, derive_seed(seed, &["sampler"]), jitter)
}

fn augmenter(disabled: bool) -> Result<Option<Augmenter>> {
    if disabled {
        Ok(None)
    } else {
        Augmenter::new(AugmentParams::default()).map(Some)
    }
}

pub fn sample_patches(args: SampleArgs) -> Result<()> {
    let mags = parse_magnifications(&args.magnifications)?;
    let sampler = sampler(&args.manifest, args.split.into(), args.gray_threshold, args.seed, args.jitter)?;
    let aug = augmenter(args.no_augment)?;
    let samples = (args.start..args.start + args.count)
        .into_par_iter()
        .map(|i| sampler.sample(i, &mags, aug.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    write_dump(&args.out, &samples)?;
    let positives = samples.iter().filter(|s| s.1.hard_label == 1).count();
    println!("wrote {} patches ({positives} tumor) to {}", samples.len(), args.out.display());
    Ok(())
}

fn slide_stats(slide: &SlidePyramid, gray: f64) -> Result<ColorStats> {
    let grid = tissue_grid(slide, gray)?;
    fit_color_stats(&tissue_pixels(slide, &grid)?)
}

pub fn fit_colornorm(args: FitColorArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    create_dir(&args.out)?;
    let list = entries(&manifest, Some(args.split.into()));
    if list.is_empty() {
        return Err(Error::Argument(format!("split {} has no slides", Split::from(args.split))));
    }
    let stats = list
        .iter()
        .map(|e| {
            let s = slide_stats(&manifest.open_slide(e)?, args.gray_threshold)?;
            s.save(&args.out.join(format!("{}.json", e.slide_id)))?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = reference_stats(&stats)?;
    reference.save(&args.out.join("reference.json"))?;
    println!("{}", to_json(&reference));
    Ok(())
}

pub fn inspect_colornorm(args: InspectColorArgs) -> Result<()> {
    let s = ColorStats::load(&args.stats)?;
    println!("pixels      {}", s.pixel_count);
    println!("mu          ({:.6}, {:.6})", s.mu[0], s.mu[1]);
    println!("sigma       [[{:.6e}, {:.6e}], [{:.6e}, {:.6e}]]", s.sigma[0], s.sigma[1], s.sigma[2], s.sigma[3]);
    println!("density     mean {:.6} var {:.6e}", s.d_mean, s.d_var);
    if s.degenerate {
        println!("degenerate  yes");
    }
    Ok(())
}

fn normalized(slide: &SlidePyramid, stats: &ColorStats, reference: &ColorStats) -> Result<(SlidePyramid, u64)> {
    let base = slide.level_image(1)?;
    let (img, clamped) = apply_normalization(&base, stats, reference)?;
    Ok((SlidePyramid::from_base(slide.slide_id(), img, slide.mpp(), slide.factors())?, clamped))
}

pub fn apply_colornorm(args: ApplyColorArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let entry = manifest
        .get(&args.slide_id)
        .ok_or_else(|| Error::UnknownSlide(args.slide_id.clone()))?;
    let slide = manifest.open_slide(entry)?;
    let reference = ColorStats::load(&args.reference)?;
    let stats = match &args.stats {
        Some(p) => ColorStats::load(p)?,
        None => slide_stats(&slide, args.gray_threshold)?,
    };
    let (out, clamped) = normalized(&slide, &stats, &reference)?;
    out.write(&args.out, slide.meta().tile_size)?;
    println!("wrote {} ({clamped} pixels clamped to the 8-bit gamut)", args.out.display());
    Ok(())
}

pub fn train_toy(args: TrainArgs) -> Result<()> {
    let sampler = sampler(&args.manifest, args.split.into(), args.gray_threshold, args.seed, args.jitter)?;
    let aug = augmenter(args.no_augment)?;
    let config = TrainConfig {
        steps: args.steps,
        batch_size: args.batch_size,
        magnifications: parse_magnifications(&args.magnifications)?,
        lr_decay_examples: args.lr_decay_examples,
        soft_labels: args.soft_labels,
        ..TrainConfig::default()
    };
    let (model, report) = train(&sampler, aug.as_ref(), &config)?;
    model.save(&args.out)?;
    println!("{}", to_json(&report));
    Ok(())
}

fn build_classifier(args: &InferArgs, manifest: &DatasetManifest, split: Split) -> Result<Box<dyn PatchClassifier>> {
    let mags = parse_magnifications(&args.magnifications)?;
    if args.oracle {
        let mut masks = HashMap::new();
        for e in manifest.split(split) {
            masks.insert(e.slide_id.clone(), manifest.load_mask(e)?);
        }
        let sigma = if args.no_noise { 0.0 } else { args.noise_sigma };
        let oracle = OracleClassifier::new(masks, sigma, derive_seed(args.seed, &["infer", "oracle"]))?;
        return Ok(Box::new(oracle.with_magnifications(mags)));
    }
    if !args.model.is_empty() {
        let mut models = args
            .model
            .iter()
            .map(|p| Ok(Box::new(load_model(p)?) as Box<dyn PatchClassifier>))
            .collect::<Result<Vec<_>>>()?;
        if models.len() == 1 {
            return Ok(models.remove(0));
        }
        return Ok(Box::new(ensemble_average(models)?));
    }
    match args.classifier.as_deref() {
        Some(spec) => match spec.split_once(':') {
            Some(("constant", v)) => {
                let p: f32 = v
                    .parse()
                    .map_err(|_| Error::Argument(format!("bad constant probability '{v}'")))?;
                Ok(Box::new(ConstantClassifier::new(p)?.with_magnifications(mags)))
            }
            _ => Err(Error::Argument(format!("unknown classifier '{spec}' (expected constant:<p>)"))),
        },
        None => Err(Error::Argument("choose a classifier: --oracle, --model or --classifier".into())),
    }
}

fn infer_slide(
    args: &InferArgs,
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    classifier: &dyn PatchClassifier,
    reference: Option<&ColorStats>,
    workers: usize,
) -> Result<Heatmap> {
    let slide = manifest.open_slide(entry)?;
    let tissue = tissue_grid(&slide, args.gray_threshold)?;
    let slide = match reference {
        Some(r) => {
            let stats = match &args.color_stats {
                Some(dir) => ColorStats::load(&dir.join(format!("{}.json", entry.slide_id)))?,
                None => slide_stats(&slide, args.gray_threshold)?,
            };
            normalized(&slide, &stats, r)?.0
        }
        None => slide,
    };
    let config = InferenceConfig {
        stride: args.stride,
        tta: args.tta && !args.no_tta,
        workers,
    };
    infer_heatmap(&slide, &tissue, classifier, &config)
}

pub fn infer(args: InferArgs, workers: usize) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let split = Split::from(args.split);
    let list = entries(&manifest, Some(split));
    if list.is_empty() {
        return Err(Error::Argument(format!("split {split} has no slides")));
    }
    let classifier = build_classifier(&args, &manifest, split)?;
    let reference = args.color_reference.as_deref().map(ColorStats::load).transpose()?;
    create_dir(&args.out)?;
    let mut failures = Vec::new();
    for e in &list {
        match infer_slide(&args, &manifest, e, classifier.as_ref(), reference.as_ref(), workers) {
            Ok(h) => {
                h.save(&args.out.join(format!("{}.heatmap", e.slide_id)))?;
                if args.csv {
                    h.save_csv(&args.out.join(format!("{}.csv", e.slide_id)))?;
                }
                println!("{}: {}x{} cells, max {:.4}", e.slide_id, h.rows, h.cols, h.values.iter().fold(0.0f32, |a, &b| a.max(b)));
            }
            Err(err) => {
                eprintln!("{}: {err}", e.slide_id);
                failures.push(err);
            }
        }
    }
    match failures.len() {
        0 => Ok(()),
        n => {
            eprintln!("{n} of {} slides failed", list.len());
            Err(failures.remove(0))
        }
    }
}

pub fn evaluate(args: EvalArgs) -> Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let split = Split::from(args.split);
    let list = entries(&manifest, Some(split));
    let mut truths = Vec::with_capacity(list.len());
    for e in &list {
        truths.push(match e.label {
            SlideLabel::Normal => SlideTruth::normal(&e.slide_id),
            SlideLabel::Tumor => {
                let mask = manifest
                    .load_mask(e)?
                    .ok_or_else(|| Error::Missing(format!("tumor slide '{}' has no mask", e.slide_id)))?;
                SlideTruth::tumor(&e.slide_id, RegionMap::build(&mask, e.mpp))
            }
        });
    }
    let missing: Vec<&str> = list
        .iter()
        .filter(|e| !args.heatmaps.join(format!("{}.heatmap", e.slide_id)).is_file())
        .map(|e| e.slide_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing(format!("no heatmap for slides: {}", missing.join(", "))));
    }
    let heatmaps = list
        .par_iter()
        .map(|e| Heatmap::load(&args.heatmaps.join(format!("{}.heatmap", e.slide_id))))
        .collect::<Result<Vec<_>>>()?;
    let config = EvalConfig {
        points_mode: args.points_mode.into(),
        nms_radius: args.nms_radius,
        threshold: args.threshold,
        fp_denominator: args.fp_denominator.into(),
        froc_resample: args.froc_resample.into(),
        resamples: args.resamples,
        seed: derive_seed(args.seed, &["evaluate"]),
    };
    let eval = run_evaluation(&heatmaps, &truths, &config)?;
    create_dir(&args.out)?;
    eval.report.save(&args.out.join("report.json"))?;
    write_text(&args.out.join("froc.svg"), &froc_svg(&eval.froc_curve, eval.report.froc))?;
    write_text(&args.out.join("roc.svg"), &roc_svg(&eval.roc_curve, eval.report.auc))?;
    let ids: Vec<String> = list.iter().map(|e| e.slide_id.clone()).collect();
    write_points_csvs(&args.out.join("points"), &ids, &eval.points)?;
    let r = &eval.report;
    println!(
        "FROC {:.4} [{:.4}, {:.4}]  @8FP {:.4} [{:.4}, {:.4}]  AUC {:.4} [{:.4}, {:.4}]",
        r.froc,
        r.froc_ci[0],
        r.froc_ci[1],
        r.sensitivity_at_8fp,
        r.sensitivity_at_8fp_ci[0],
        r.sensitivity_at_8fp_ci[1],
        r.auc,
        r.auc_ci[0],
        r.auc_ci[1]
    );
    println!("{} slides, {} tumors, {} points; report in {}", r.n_slides, r.n_tumors, r.n_points, args.out.display());
    Ok(())
}
