use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slide-level AUC with its bootstrap percentile interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub auc: f64,
    pub ci: [f64; 2],
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Argument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("NaN slide score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument("ROC AUC needs both positive and negative slides".into()));
    }
    Ok((pos, neg))
}

/// Indices sorted by ascending score, split into groups of equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Mann-Whitney estimate `P(s+ > s-) + P(s+ = s-) / 2`.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    // twice the count of correctly ordered pairs, ties counting one half
    let mut twice: u128 = 0;
    let mut neg_below: u128 = 0;
    for g in tie_groups(scores) {
        let p = g.iter().filter(|&&i| labels[i]).count() as u128;
        let n = g.len() as u128 - p;
        twice += p * (2 * neg_below + n);
        neg_below += n;
    }
    Ok(twice as f64 / (2.0 * pos as f64 * neg as f64))
}

/// `(false positive rate, true positive rate)` from `(0, 0)` to `(1, 1)`,
/// one step per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check(scores, labels)?;
    let mut out = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for g in tie_groups(scores).into_iter().rev() {
        for i in g {
            if labels[i] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        out.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) fn brute_force_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                if si > sj {
                    num += 1.0;
                } else if si == sj {
                    num += 0.5;
                }
            }
        }
    }
    num / pairs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::stream_rng;
    use rand::Rng;

    #[test]
    fn examples() {
        assert_eq!(roc_auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::Argument(_))));
        assert!(matches!(roc_auc(&[0.1], &[true, false]), Err(Error::Argument(_))));
        assert!(matches!(roc_auc(&[f64::NAN, 0.2], &[true, false]), Err(Error::Argument(_))));
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut checked = 0;
        for k in 0..1000 {
            let mut rng = stream_rng(91, k);
            let n = rng.random_range(2..=200);
            // coarse levels on half the instances to exercise ties
            let levels = if k % 2 == 0 { 0 } else { rng.random_range(2..12) };
            let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
                continue;
            }
            let scores: Vec<f64> = (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    if levels == 0 { u } else { (u * levels as f64).floor() / levels as f64 }
                })
                .collect();
            let fast = roc_auc(&scores, &labels).unwrap();
            assert!((fast - brute_force_auc(&scores, &labels)).abs() <= 1e-12);
            checked += 1;
        }
        assert!(checked > 950);
    }

    #[test]
    fn curve_ends_and_area() {
        let s = [0.8, 0.4, 0.6, 0.2, 0.6];
        let l = [true, true, false, false, true];
        let c = roc_curve(&s, &l).unwrap();
        assert_eq!(c.first(), Some(&(0.0, 0.0)));
        assert_eq!(c.last(), Some(&(1.0, 1.0)));
        // trapezoid area equals the Mann-Whitney estimate
        let area: f64 = c.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
        assert!((area - roc_auc(&s, &l).unwrap()).abs() < 1e-12);
    }
}
