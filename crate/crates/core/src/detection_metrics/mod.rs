//! Detection points from heatmaps, FROC and slide-level ROC AUC with
//! percentile bootstrap intervals.

mod bootstrap;
mod froc;
mod points;
mod report;
mod roc;

pub use bootstrap::{bootstrap_ci, bootstrap_cis, percentile, CI_LEVELS, DEFAULT_RESAMPLES, MAX_DRAWS_PER_RESAMPLE};
pub use froc::{
    fp_denominator_count, froc_curve, froc_score, froc_sensitivities, match_points, sensitivity_at, tumor_count,
    FpDenominator, FrocCurve, FrocPoint, Matches, PointMatch, RegionHit, SlideTruth, FROC_FP_RATES,
};
pub use points::{cc_points, nms_points, DetectionPoint};
pub use report::{
    evaluate, extract_points, froc_svg, parse_points_csv, points_csv, roc_svg, write_points_csvs, EvalConfig,
    EvalReport, Evaluation, PointsMode, ResampleUnit, SizeClassResult,
};
pub use roc::{roc_auc, roc_curve, RocResult};
