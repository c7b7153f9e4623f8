use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detection_metrics::bootstrap::{bootstrap_ci, bootstrap_cis, DEFAULT_RESAMPLES};
use crate::detection_metrics::froc::{
    fp_denominator_count, froc_curve, froc_score, froc_sensitivities, match_points, sensitivity_at, FpDenominator,
    FrocCurve, Matches, SlideTruth, FROC_FP_RATES,
};
use crate::detection_metrics::points::{cc_points, nms_points, DetectionPoint};
use crate::detection_metrics::roc::{roc_auc, roc_curve};
use crate::error::{Error, Result};
use crate::heatmap_engine::{slide_score, Heatmap};
use crate::slide_store::SizeClass;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointsMode {
    #[default]
    Nms,
    Cc,
}

/// What the FROC bootstrap resamples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleUnit {
    /// Whole slides, carrying their tumors and points.
    #[default]
    Slides,
    /// Individual detection points, with tumors and slide counts held fixed.
    Points,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub points_mode: PointsMode,
    /// NMS radius in heatmap cells.
    pub nms_radius: f64,
    pub threshold: f32,
    pub fp_denominator: FpDenominator,
    pub froc_resample: ResampleUnit,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            points_mode: PointsMode::Nms,
            nms_radius: 6.0,
            threshold: 0.5,
            fp_denominator: FpDenominator::Negative,
            froc_resample: ResampleUnit::Slides,
            resamples: DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nms_radius.is_finite() && self.nms_radius >= 0.0) {
            return Err(Error::Argument(format!("NMS radius must be >= 0, got {}", self.nms_radius)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Argument(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        if self.resamples == 0 {
            return Err(Error::Argument("resamples must be positive".into()));
        }
        Ok(())
    }
}

/// FROC restricted to the tumors of one size class, on the global FP axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeClassResult {
    pub size_class: SizeClass,
    pub n_tumors: usize,
    pub froc: f64,
    pub sensitivity_at_8fp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub n_slides: usize,
    pub n_negative_slides: usize,
    pub n_tumors: usize,
    pub n_points: usize,
    pub fp_rates: [f64; 6],
    pub sensitivities: [f64; 6],
    pub froc: f64,
    pub froc_ci: [f64; 2],
    pub sensitivity_at_8fp: f64,
    pub sensitivity_at_8fp_ci: [f64; 2],
    pub auc: f64,
    pub auc_ci: [f64; 2],
    pub size_classes: Vec<SizeClassResult>,
}

fn unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Format(format!("{name} = {v} is outside [0, 1]")))
    }
}

fn interval(name: &str, ci: [f64; 2]) -> Result<()> {
    unit(name, ci[0])?;
    unit(name, ci[1])?;
    if ci[0] > ci[1] {
        return Err(Error::Format(format!("{name} bounds are reversed: {ci:?}")));
    }
    Ok(())
}

impl EvalReport {
    /// Schema checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        self.config.validate().map_err(|e| Error::Format(e.to_string()))?;
        if self.fp_rates != FROC_FP_RATES {
            return Err(Error::Format(format!("unexpected FP rates {:?}", self.fp_rates)));
        }
        for (i, &s) in self.sensitivities.iter().enumerate() {
            unit("sensitivity", s)?;
            if i > 0 && s < self.sensitivities[i - 1] {
                return Err(Error::Format("sensitivities decrease with FP rate".into()));
            }
        }
        let mean = self.sensitivities.iter().sum::<f64>() / 6.0;
        if (mean - self.froc).abs() > 1e-12 {
            return Err(Error::Format(format!("froc {} is not the mean sensitivity {mean}", self.froc)));
        }
        if self.sensitivity_at_8fp != self.sensitivities[5] {
            return Err(Error::Format("sensitivity_at_8fp differs from the 8 FP sensitivity".into()));
        }
        unit("froc", self.froc)?;
        unit("auc", self.auc)?;
        interval("froc_ci", self.froc_ci)?;
        interval("sensitivity_at_8fp_ci", self.sensitivity_at_8fp_ci)?;
        interval("auc_ci", self.auc_ci)?;
        if self.n_negative_slides > self.n_slides || self.n_tumors == 0 {
            return Err(Error::Format("inconsistent slide or tumor counts".into()));
        }
        for c in &self.size_classes {
            unit("size class froc", c.froc)?;
            unit("size class sensitivity", c.sensitivity_at_8fp)?;
        }
        if self.size_classes.iter().map(|c| c.n_tumors).sum::<usize>() != self.n_tumors {
            return Err(Error::Format("size classes do not partition the tumors".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).map_err(|e| Error::Format(format!("report JSON: {e}")))?;
        r.validate()?;
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Everything `evaluate` computes, beyond the report itself.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub points: Vec<DetectionPoint>,
    pub froc_curve: FrocCurve,
    pub roc_curve: Vec<(f64, f64)>,
    /// `(slide_id, slide score, is tumor slide)` in input order.
    pub slide_scores: Vec<(String, f64, bool)>,
}

pub fn extract_points(h: &Heatmap, config: &EvalConfig) -> Vec<DetectionPoint> {
    match config.points_mode {
        PointsMode::Nms => nms_points(h, config.nms_radius, config.threshold),
        PointsMode::Cc => cc_points(h, config.threshold),
    }
}

fn froc_pair(regions: &[Option<f32>], fps: &[f32], n_fp_slides: usize) -> Result<[f64; 2]> {
    let curve = froc_curve(regions, fps, n_fp_slides)?;
    Ok([froc_score(&curve), sensitivity_at(&curve, 8.0)])
}

fn froc_cis(matches: &Matches, truths: &[SlideTruth], config: &EvalConfig, n_fp_slides: usize) -> Result<[[f64; 2]; 2]> {
    let cis = match config.froc_resample {
        ResampleUnit::Slides => {
            let mut regions: Vec<Vec<Option<f32>>> = vec![Vec::new(); truths.len()];
            for r in &matches.regions {
                regions[r.slide_index].push(r.score);
            }
            let mut fps: Vec<Vec<f32>> = vec![Vec::new(); truths.len()];
            for p in matches.points.iter().filter(|p| p.region.is_none()) {
                fps[p.slide_index].push(p.score);
            }
            bootstrap_cis(truths.len(), config.resamples, config.seed, 2, |idx| {
                let r: Vec<Option<f32>> = idx.iter().flat_map(|&i| regions[i].iter().copied()).collect();
                let f: Vec<f32> = idx.iter().flat_map(|&i| fps[i].iter().copied()).collect();
                let denom = match config.fp_denominator {
                    FpDenominator::Negative => idx.iter().filter(|&&i| truths[i].is_negative()).count(),
                    FpDenominator::All => idx.len(),
                };
                if r.is_empty() || denom == 0 {
                    return Ok(None);
                }
                Ok(Some(froc_pair(&r, &f, denom)?.to_vec()))
            })?
        }
        ResampleUnit::Points if matches.points.is_empty() => {
            // every resample of an empty point set is empty again
            let v = froc_pair(&matches.region_scores(), &[], n_fp_slides)?;
            vec![[v[0], v[0]], [v[1], v[1]]]
        }
        ResampleUnit::Points => {
            let n_regions = matches.regions.len();
            bootstrap_cis(matches.points.len(), config.resamples, config.seed, 2, |idx| {
                let mut r: Vec<Option<f32>> = vec![None; n_regions];
                let mut f = Vec::new();
                for &i in idx {
                    let p = &matches.points[i];
                    match p.region {
                        Some(g) => r[g] = Some(r[g].map_or(p.score, |s| s.max(p.score))),
                        None => f.push(p.score),
                    }
                }
                Ok(Some(froc_pair(&r, &f, n_fp_slides)?.to_vec()))
            })?
        }
    };
    Ok([cis[0], cis[1]])
}

/// Extracts points from every heatmap, matches them against the annotations
/// and computes FROC, slide-level AUC (score = heatmap maximum) and their
/// bootstrap intervals. Heatmaps are looked up by slide id.
pub fn evaluate(heatmaps: &[Heatmap], truths: &[SlideTruth], config: &EvalConfig) -> Result<Evaluation> {
    config.validate()?;
    let by_id: HashMap<&str, &Heatmap> = heatmaps.iter().map(|h| (h.slide_id.as_str(), h)).collect();
    let missing: Vec<&str> = truths
        .iter()
        .map(|t| t.slide_id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Missing(format!("no heatmap for slides: {}", missing.join(", "))));
    }
    let maps: Vec<&Heatmap> = truths.iter().map(|t| by_id[t.slide_id.as_str()]).collect();
    let points: Vec<DetectionPoint> = maps.iter().flat_map(|h| extract_points(h, config)).collect();
    let matches = match_points(&points, truths)?;
    let n_fp_slides = fp_denominator_count(truths, config.fp_denominator);
    let region_scores = matches.region_scores();
    let fp_scores = matches.fp_scores();
    let curve = froc_curve(&region_scores, &fp_scores, n_fp_slides)?;
    let sensitivities = froc_sensitivities(&curve);
    let [froc_ci, sens8_ci] = froc_cis(&matches, truths, config, n_fp_slides)?;

    let slide_scores: Vec<(String, f64, bool)> = maps
        .iter()
        .zip(truths)
        .map(|(h, t)| Ok((t.slide_id.clone(), slide_score(h)? as f64, !t.is_negative())))
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = slide_scores.iter().map(|s| s.1).collect();
    let labels: Vec<bool> = slide_scores.iter().map(|s| s.2).collect();
    let auc = roc_auc(&scores, &labels)?;
    let auc_ci = bootstrap_ci(scores.len(), config.resamples, config.seed, |idx| {
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        if l.iter().all(|&x| x) || l.iter().all(|&x| !x) {
            return Ok(None);
        }
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        Ok(Some(roc_auc(&s, &l)?))
    })?;

    let mut by_class: BTreeMap<SizeClass, Vec<Option<f32>>> = BTreeMap::new();
    for r in &matches.regions {
        by_class.entry(r.size_class).or_default().push(r.score);
    }
    let size_classes = by_class
        .into_iter()
        .map(|(size_class, regions)| {
            let c = froc_curve(&regions, &fp_scores, n_fp_slides)?;
            Ok(SizeClassResult {
                size_class,
                n_tumors: regions.len(),
                froc: froc_score(&c),
                sensitivity_at_8fp: sensitivity_at(&c, 8.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let report = EvalReport {
        config: config.clone(),
        n_slides: truths.len(),
        n_negative_slides: truths.iter().filter(|t| t.is_negative()).count(),
        n_tumors: matches.regions.len(),
        n_points: points.len(),
        fp_rates: FROC_FP_RATES,
        sensitivities,
        froc: froc_score(&curve),
        froc_ci,
        sensitivity_at_8fp: sensitivities[5],
        sensitivity_at_8fp_ci: sens8_ci,
        auc,
        auc_ci,
        size_classes,
    };
    report.validate()?;
    Ok(Evaluation {
        report,
        roc_curve: roc_curve(&scores, &labels)?,
        points,
        froc_curve: curve,
        slide_scores,
    })
}

/// Points of one slide as `probability,x,y` lines.
pub fn points_csv(points: &[DetectionPoint]) -> String {
    let mut out = String::new();
    for p in points {
        writeln!(out, "{},{},{}", p.score, p.x, p.y).expect("write to string");
    }
    out
}

pub fn parse_points_csv(slide_id: &str, text: &str) -> Result<Vec<DetectionPoint>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = || Error::Format(format!("points line {}: '{line}'", n + 1));
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 3 {
                return Err(bad());
            }
            Ok(DetectionPoint {
                slide_id: slide_id.to_string(),
                score: f[0].parse().map_err(|_| bad())?,
                x: f[1].parse().map_err(|_| bad())?,
                y: f[2].parse().map_err(|_| bad())?,
                cell: (0, 0),
            })
        })
        .collect()
}

/// Writes `<slide_id>.csv` for every slide in `slide_ids`, empty when the
/// slide has no points.
pub fn write_points_csvs(dir: &Path, slide_ids: &[String], points: &[DetectionPoint]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for id in slide_ids {
        let mine: Vec<DetectionPoint> = points.iter().filter(|p| &p.slide_id == id).cloned().collect();
        let path = dir.join(format!("{id}.csv"));
        std::fs::write(&path, points_csv(&mine)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

fn plot_svg(title: &str, x_label: &str, y_label: &str, x_max: f64, xy: &[(f64, f64)], step: bool) -> String {
    let sx = |x: f64| PAD + (x.min(x_max) / x_max) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y * (H - 2.0 * PAD);
    let mut path = String::new();
    let mut prev: Option<(f64, f64)> = None;
    for &(x, y) in xy {
        if let (true, Some((_, py))) = (step, prev) {
            write!(path, "{:.2},{:.2} ", sx(x), sy(py)).unwrap();
        }
        write!(path, "{:.2},{:.2} ", sx(x), sy(y)).unwrap();
        prev = Some((x, y));
    }
    if let (true, Some((_, py))) = (step, prev) {
        write!(path, "{:.2},{:.2}", sx(x_max), sy(py)).unwrap();
    }
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{title}</text>"#, W / 2.0).unwrap();
    writeln!(
        s,
        r#"<path d="M{PAD},{} V{} H{}" fill="none" stroke="black"/>"#,
        PAD,
        H - PAD,
        W - PAD
    )
    .unwrap();
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"#, sx(f * x_max), H - PAD + 14.0, f * x_max).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="10">{f}</text>"#, PAD - 4.0, sy(f) + 3.0).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label}</text>"#, W / 2.0, H - 10.0).unwrap();
    writeln!(s, r#"<text x="14" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {})">{y_label}</text>"#, H / 2.0, H / 2.0).unwrap();
    writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, path.trim_end()).unwrap();
    s.push_str("</svg>\n");
    s
}

/// FROC curve up to 8 FPs per slide.
pub fn froc_svg(curve: &FrocCurve, froc: f64) -> String {
    let xy: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.fp_rate, p.sensitivity)).collect();
    plot_svg(&format!("FROC {froc:.3}"), "average FPs per slide", "sensitivity", 8.0, &xy, true)
}

pub fn roc_svg(curve: &[(f64, f64)], auc: f64) -> String {
    plot_svg(&format!("ROC AUC {auc:.3}"), "false positive rate", "true positive rate", 1.0, curve, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide_store::{AnnotationMask, RegionMap};

    fn truths() -> Vec<SlideTruth> {
        let mut m = AnnotationMask::empty("t0", 1024, 1024);
        for y in 200..400 {
            m.set_run(y, 200, 400);
        }
        let mut m1 = AnnotationMask::empty("t1", 1024, 1024);
        for y in 650..760 {
            m1.set_run(y, 650, 760);
        }
        vec![
            SlideTruth::tumor("t0", RegionMap::build(&m, 4.0)),
            SlideTruth::tumor("t1", RegionMap::build(&m1, 4.0)),
            SlideTruth::normal("n0"),
            SlideTruth::normal("n1"),
        ]
    }

    fn flat(id: &str, hot: &[(usize, usize, f32)]) -> Heatmap {
        let mut v = vec![0.0; 64];
        for &(r, c, s) in hot {
            v[r * 8 + c] = s;
        }
        Heatmap::new(id, 8, 8, 128, v).unwrap()
    }

    fn perfect() -> Vec<Heatmap> {
        vec![
            flat("t0", &[(2, 2, 1.0), (2, 3, 1.0)]),
            flat("t1", &[(5, 5, 1.0)]),
            flat("n0", &[]),
            flat("n1", &[]),
        ]
    }

    #[test]
    fn perfect_heatmaps_score_one() {
        let cfg = EvalConfig { resamples: 200, ..Default::default() };
        let e = evaluate(&perfect(), &truths(), &cfg).unwrap();
        let r = &e.report;
        assert_eq!((r.froc, r.sensitivity_at_8fp, r.auc), (1.0, 1.0, 1.0));
        assert_eq!((r.froc_ci, r.sensitivity_at_8fp_ci, r.auc_ci), ([1.0, 1.0], [1.0, 1.0], [1.0, 1.0]));
        assert_eq!((r.n_tumors, r.n_negative_slides, r.n_points), (2, 2, 2));
        let cc = evaluate(&perfect(), &truths(), &EvalConfig { points_mode: PointsMode::Cc, ..cfg.clone() }).unwrap();
        assert_eq!(cc.report.froc, 1.0);
        let pts = evaluate(&perfect(), &truths(), &EvalConfig { froc_resample: ResampleUnit::Points, ..cfg }).unwrap();
        assert!(pts.report.froc_ci[0] < 1.0);
    }

    #[test]
    fn missed_tumor_and_false_positive() {
        let maps = vec![
            flat("t0", &[(2, 2, 0.9)]),
            flat("t1", &[]),
            flat("n0", &[(7, 7, 0.8)]),
            flat("n1", &[]),
        ];
        let e = evaluate(&maps, &truths(), &EvalConfig { resamples: 100, ..Default::default() }).unwrap();
        assert_eq!(e.report.froc, 0.5);
        // slide scores 0.9, 0, 0.8, 0: one of four pairs misordered, one tied
        assert_eq!(e.report.auc, 0.625);
        assert_eq!(e.froc_curve.points.last().unwrap().fp_rate, 0.5);
        let all = EvalConfig { fp_denominator: FpDenominator::All, resamples: 100, ..Default::default() };
        let all = evaluate(&maps, &truths(), &all).unwrap();
        assert_eq!(all.froc_curve.points.last().unwrap().fp_rate, 0.25);
    }

    #[test]
    fn missing_heatmaps_are_listed() {
        let maps = perfect()[..2].to_vec();
        match evaluate(&maps, &truths(), &EvalConfig::default()) {
            Err(Error::Missing(msg)) => assert!(msg.contains("n0") && msg.contains("n1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn report_json_round_trip_and_schema() {
        let e = evaluate(&perfect(), &truths(), &EvalConfig { resamples: 50, ..Default::default() }).unwrap();
        let json = e.report.to_json();
        assert_eq!(EvalReport::from_json(&json).unwrap(), e.report);
        let extra = json.replacen('{', "{\"bogus\": 1,", 1);
        assert!(EvalReport::from_json(&extra).is_err());
        let mut bad = e.report.clone();
        bad.froc = 0.9;
        assert!(EvalReport::from_json(&bad.to_json()).is_err());
    }

    #[test]
    fn points_csv_round_trip() {
        let e = evaluate(&perfect(), &truths(), &EvalConfig { resamples: 10, ..Default::default() }).unwrap();
        let t0: Vec<_> = e.points.iter().filter(|p| p.slide_id == "t0").cloned().collect();
        let text = points_csv(&t0);
        assert_eq!(text, "1,320,320\n");
        let back = parse_points_csv("t0", &text).unwrap();
        assert_eq!((back[0].score, back[0].x, back[0].y), (1.0, 320, 320));
        assert!(parse_points_csv("t0", "0.5,1\n").is_err());
    }

    #[test]
    fn svg_is_well_formed() {
        let e = evaluate(&perfect(), &truths(), &EvalConfig { resamples: 10, ..Default::default() }).unwrap();
        for svg in [froc_svg(&e.froc_curve, e.report.froc), roc_svg(&e.roc_curve, e.report.auc)] {
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
            assert!(svg.contains("<polyline"));
        }
    }
}
