use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::patch_pipeline::augment::AugmentDraw;
use crate::patch_pipeline::labels::LabeledPatch;
use crate::patch_pipeline::sampler::TrainingDraw;

#[derive(Serialize)]
struct DumpRecord<'a> {
    index: u64,
    slide_id: &'a str,
    center: (i64, i64),
    class: u8,
    hard_label: u8,
    soft_label: f64,
    augment: Option<&'a AugmentDraw>,
    files: Vec<String>,
}

/// Writes each sample as `{index:06}_{mag}.png` plus one line of
/// `samples.jsonl` describing where it came from.
pub fn write_dump(dir: &Path, samples: &[(TrainingDraw, LabeledPatch, Option<AugmentDraw>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let jsonl = dir.join("samples.jsonl");
    let mut out = std::io::BufWriter::new(fs::File::create(&jsonl).map_err(|e| Error::io(&jsonl, e))?);
    for (draw, patch, aug) in samples {
        let mut files = Vec::new();
        for (mag, p) in &patch.group.members {
            let name = format!("{:06}_{mag}.png", draw.index);
            p.to_rgb8().write_png(&dir.join(&name))?;
            files.push(name);
        }
        let rec = DumpRecord {
            index: draw.index,
            slide_id: &draw.slide_id,
            center: draw.center,
            class: draw.class,
            hard_label: patch.hard_label,
            soft_label: patch.soft_label,
            augment: aug.as_ref(),
            files,
        };
        let line = serde_json::to_string(&rec).map_err(|e| Error::json(&jsonl, e))?;
        writeln!(out, "{line}").map_err(|e| Error::io(&jsonl, e))?;
    }
    out.flush().map_err(|e| Error::io(&jsonl, e))
}
