use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::detection_metrics::points::DetectionPoint;
use crate::error::{Error, Result};
use crate::slide_store::{RegionMap, SizeClass, SlideLabel};

/// False-positive rates averaged by the FROC score.
pub const FROC_FP_RATES: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

/// Which slides divide the false-positive count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FpDenominator {
    /// Tumor-negative slides only.
    #[default]
    Negative,
    /// Every evaluated slide.
    All,
}

/// Ground truth for one evaluated slide. Tumor slides carry their regions.
#[derive(Clone, Debug)]
pub struct SlideTruth {
    pub slide_id: String,
    pub label: SlideLabel,
    pub regions: Option<RegionMap>,
}

impl SlideTruth {
    pub fn normal(slide_id: impl Into<String>) -> Self {
        Self {
            slide_id: slide_id.into(),
            label: SlideLabel::Normal,
            regions: None,
        }
    }

    pub fn tumor(slide_id: impl Into<String>, regions: RegionMap) -> Self {
        Self {
            slide_id: slide_id.into(),
            label: SlideLabel::Tumor,
            regions: Some(regions),
        }
    }

    pub fn is_negative(&self) -> bool {
        self.label == SlideLabel::Normal
    }

    fn region_count(&self) -> usize {
        self.regions.as_ref().map_or(0, |r| r.regions().len())
    }
}

/// One annotated region with the best score among points inside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionHit {
    pub slide_index: usize,
    pub region_id: u32,
    pub size_class: SizeClass,
    pub score: Option<f32>,
}

/// Assignment of one detection point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMatch {
    pub slide_index: usize,
    /// Index into [`Matches::regions`], or `None` for a false positive.
    pub region: Option<usize>,
    pub score: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matches {
    pub regions: Vec<RegionHit>,
    pub points: Vec<PointMatch>,
}

impl Matches {
    pub fn fp_scores(&self) -> Vec<f32> {
        self.points.iter().filter(|p| p.region.is_none()).map(|p| p.score).collect()
    }

    pub fn region_scores(&self) -> Vec<Option<f32>> {
        self.regions.iter().map(|r| r.score).collect()
    }
}

/// Assigns every point to the tumor region whose mask pixel it lands on, or
/// marks it a false positive. Each region keeps its highest score.
pub fn match_points(points: &[DetectionPoint], truths: &[SlideTruth]) -> Result<Matches> {
    let by_id: HashMap<&str, usize> = truths.iter().enumerate().map(|(i, t)| (t.slide_id.as_str(), i)).collect();
    let mut offsets = Vec::with_capacity(truths.len());
    let mut regions = Vec::new();
    for (i, t) in truths.iter().enumerate() {
        offsets.push(regions.len());
        if let Some(map) = &t.regions {
            regions.extend(map.regions().iter().map(|r| RegionHit {
                slide_index: i,
                region_id: r.region_id,
                size_class: r.size_class,
                score: None,
            }));
        }
    }
    let mut matched = Vec::with_capacity(points.len());
    for p in points {
        let &slide_index = by_id
            .get(p.slide_id.as_str())
            .ok_or_else(|| Error::Argument(format!("point on unknown slide '{}'", p.slide_id)))?;
        let local = match &truths[slide_index].regions {
            Some(map) if p.x >= 0 && p.y >= 0 && p.x <= u32::MAX as i64 && p.y <= u32::MAX as i64 => {
                map.region_at(p.x as u32, p.y as u32)
            }
            _ => None,
        };
        let region = local.map(|r| offsets[slide_index] + r);
        if let Some(g) = region {
            let best = &mut regions[g].score;
            *best = Some(best.map_or(p.score, |s| s.max(p.score)));
        }
        matched.push(PointMatch {
            slide_index,
            region,
            score: p.score,
        });
    }
    Ok(Matches {
        regions,
        points: matched,
    })
}

/// Number of slides dividing the FP count.
pub fn fp_denominator_count(truths: &[SlideTruth], mode: FpDenominator) -> usize {
    match mode {
        FpDenominator::Negative => truths.iter().filter(|t| t.is_negative()).count(),
        FpDenominator::All => truths.len(),
    }
}

/// Total annotated regions over `truths`.
pub fn tumor_count(truths: &[SlideTruth]) -> usize {
    truths.iter().map(SlideTruth::region_count).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrocPoint {
    /// Points with score `>= threshold` are kept; infinite for the empty set.
    pub threshold: f64,
    pub fp_rate: f64,
    pub sensitivity: f64,
}

/// Operating points sorted by increasing FP rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrocCurve {
    pub points: Vec<FrocPoint>,
    pub n_tumors: usize,
    pub n_fp_slides: usize,
}

/// Sweeps the threshold over every distinct score. `region_scores` holds the
/// best score of each tumor (`None` if never hit) and `fp_scores` every
/// false-positive score; FP counts are divided by `n_fp_slides`.
pub fn froc_curve(region_scores: &[Option<f32>], fp_scores: &[f32], n_fp_slides: usize) -> Result<FrocCurve> {
    if region_scores.is_empty() {
        return Err(Error::Argument("FROC needs at least one tumor region".into()));
    }
    if n_fp_slides == 0 {
        return Err(Error::Argument("FROC needs at least one slide in the FP denominator".into()));
    }
    // (score, is_hit)
    let mut events: Vec<(f32, bool)> = region_scores
        .iter()
        .flatten()
        .map(|&s| (s, true))
        .chain(fp_scores.iter().map(|&s| (s, false)))
        .collect();
    if events.iter().any(|e| e.0.is_nan()) {
        return Err(Error::Argument("NaN detection score".into()));
    }
    events.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_tumors = region_scores.len();
    let mut points = vec![FrocPoint {
        threshold: f64::INFINITY,
        fp_rate: 0.0,
        sensitivity: 0.0,
    }];
    let (mut hits, mut fps) = (0usize, 0usize);
    let mut i = 0;
    while i < events.len() {
        let s = events[i].0;
        while i < events.len() && events[i].0 == s {
            if events[i].1 {
                hits += 1;
            } else {
                fps += 1;
            }
            i += 1;
        }
        points.push(FrocPoint {
            threshold: s as f64,
            fp_rate: fps as f64 / n_fp_slides as f64,
            sensitivity: hits as f64 / n_tumors as f64,
        });
    }
    Ok(FrocCurve {
        points,
        n_tumors,
        n_fp_slides,
    })
}

/// Largest sensitivity reached at an FP rate of at most `fp_rate`.
pub fn sensitivity_at(curve: &FrocCurve, fp_rate: f64) -> f64 {
    curve
        .points
        .iter()
        .filter(|p| p.fp_rate <= fp_rate)
        .map(|p| p.sensitivity)
        .fold(0.0, f64::max)
}

pub fn froc_sensitivities(curve: &FrocCurve) -> [f64; 6] {
    FROC_FP_RATES.map(|r| sensitivity_at(curve, r))
}

/// Mean sensitivity at the six FROC operating points.
pub fn froc_score(curve: &FrocCurve) -> f64 {
    froc_sensitivities(curve).iter().sum::<f64>() / FROC_FP_RATES.len() as f64
}
