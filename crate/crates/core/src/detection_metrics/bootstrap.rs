use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seeds::{derive_seed, stream_rng};

pub const DEFAULT_RESAMPLES: usize = 2000;
/// Attempts allowed per resample before the interval is declared undefined.
pub const MAX_DRAWS_PER_RESAMPLE: usize = 1000;
pub const CI_LEVELS: [f64; 2] = [0.025, 0.975];

/// Linear interpolation between order statistics at rank `p (n - 1)`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let rank = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Percentile bootstrap interval of `estimator` over `n` units.
///
/// Each resample draws `n` unit indices with replacement from its own stream
/// `stream_rng(derive_seed(seed, ["bootstrap"]), k)`, so the result does not
/// depend on thread scheduling. The estimator returns `None` for a degenerate
/// resample (for example a single class), which is redrawn from the same
/// stream up to [`MAX_DRAWS_PER_RESAMPLE`] times.
pub fn bootstrap_ci<F>(n: usize, resamples: usize, seed: u64, estimator: F) -> Result<[f64; 2]>
where
    F: Fn(&[usize]) -> Result<Option<f64>> + Sync,
{
    let cis = bootstrap_cis(n, resamples, seed, 1, |idx| Ok(estimator(idx)?.map(|v| vec![v])))?;
    Ok(cis[0])
}

/// [`bootstrap_ci`] for `k` statistics computed on the same resamples.
pub fn bootstrap_cis<F>(n: usize, resamples: usize, seed: u64, k: usize, estimator: F) -> Result<Vec<[f64; 2]>>
where
    F: Fn(&[usize]) -> Result<Option<Vec<f64>>> + Sync,
{
    if n == 0 {
        return Err(Error::Argument("bootstrap needs a nonempty sample".into()));
    }
    if resamples == 0 {
        return Err(Error::Argument("bootstrap needs at least one resample".into()));
    }
    let base = derive_seed(seed, &["bootstrap"]);
    let draws = (0..resamples as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(base, r);
            let mut idx = vec![0usize; n];
            for _ in 0..MAX_DRAWS_PER_RESAMPLE {
                idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
                if let Some(v) = estimator(&idx)? {
                    if v.len() != k || v.iter().any(|x| x.is_nan()) {
                        return Err(Error::Numeric(format!("bootstrap resample {r} produced an invalid estimate")));
                    }
                    return Ok(v);
                }
            }
            Err(Error::CiUndefined(format!(
                "resample {r} stayed degenerate after {MAX_DRAWS_PER_RESAMPLE} draws"
            )))
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok((0..k)
        .map(|j| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            col.sort_by(f64::total_cmp);
            CI_LEVELS.map(|p| percentile(&col, p))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection_metrics::roc::roc_auc;

    fn mean_of(xs: &[f64]) -> impl Fn(&[usize]) -> Result<Option<f64>> + Sync + '_ {
        move |idx| Ok(Some(idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64))
    }

    #[test]
    fn percentile_interpolates() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&s, 0.0), 1.0);
        assert_eq!(percentile(&s, 1.0), 5.0);
        assert_eq!(percentile(&s, 0.5), 3.0);
        assert_eq!(percentile(&s, 0.1), 1.4);
        assert_eq!(percentile(&[7.0], 0.975), 7.0);
    }

    #[test]
    fn single_unit_gives_point_interval() {
        let ci = bootstrap_ci(1, 200, 3, mean_of(&[0.42])).unwrap();
        assert_eq!(ci, [0.42, 0.42]);
    }

    #[test]
    fn separated_scores_give_unit_interval() {
        let scores = [0.9, 0.8, 0.95, 0.1, 0.2, 0.05];
        let labels = [true, true, true, false, false, false];
        let ci = bootstrap_ci(6, 2000, 1, |idx| {
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            Ok(if l.iter().all(|&x| x) || l.iter().all(|&x| !x) { None } else { Some(roc_auc(&s, &l)?) })
        })
        .unwrap();
        assert_eq!(ci, [1.0, 1.0]);
    }

    #[test]
    fn always_degenerate_is_undefined() {
        let r = bootstrap_ci(3, 10, 0, |_| Ok(None));
        assert!(matches!(r, Err(Error::CiUndefined(_))));
        assert!(matches!(bootstrap_ci(0, 10, 0, |_| Ok(Some(1.0))), Err(Error::Argument(_))));
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let a = bootstrap_ci(xs.len(), 500, 9, mean_of(&xs)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| bootstrap_ci(xs.len(), 500, 9, mean_of(&xs)).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, bootstrap_ci(xs.len(), 500, 10, mean_of(&xs)).unwrap());
    }

    #[test]
    fn interval_covers_full_sample_estimate() {
        // noisy AUC: the full-sample estimate should sit inside the CI for nearly every seed
        let mut covered = 0;
        for seed in 0..100u64 {
            let mut rng = stream_rng(seed, 999);
            let labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
            let scores: Vec<f64> = labels
                .iter()
                .map(|&l| rng.random::<f64>() + if l { 0.3 } else { 0.0 })
                .collect();
            let full = roc_auc(&scores, &labels).unwrap();
            let ci = bootstrap_ci(40, 2000, seed, |idx| {
                let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
                let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
                Ok(if l.iter().all(|&x| x) || l.iter().all(|&x| !x) { None } else { Some(roc_auc(&s, &l)?) })
            })
            .unwrap();
            assert!(ci[0] <= ci[1]);
            covered += (ci[0] <= full && full <= ci[1]) as usize;
        }
        assert!(covered >= 95, "covered {covered} of 100");
    }
}
