use serde::{Deserialize, Serialize};

use crate::heatmap_engine::Heatmap;

/// A scored location in base pixels, at the center of heatmap cell `cell`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionPoint {
    pub slide_id: String,
    pub x: i64,
    pub y: i64,
    pub score: f32,
    pub cell: (usize, usize),
}

fn point_at(h: &Heatmap, row: usize, col: usize) -> DetectionPoint {
    let (x, y) = h.cell_center(row, col);
    DetectionPoint {
        slide_id: h.slide_id.clone(),
        x,
        y,
        score: h.get(row, col),
        cell: (row, col),
    }
}

/// Non-maxima suppression: repeatedly report the largest value above `t`
/// (ties go to the smallest `(row, col)`) and zero every cell within
/// Euclidean cell distance `r` of it.
///
/// Cells above `t` are visited once in `(score desc, row, col)` order; a
/// visited cell that has not been zeroed is exactly the next global maximum.
pub fn nms_points(h: &Heatmap, r: f64, t: f32) -> Vec<DetectionPoint> {
    let mut cand: Vec<usize> = (0..h.values.len()).filter(|&i| h.values[i] > t).collect();
    cand.sort_by(|&a, &b| h.values[b].total_cmp(&h.values[a]).then(a.cmp(&b)));
    let mut zeroed = vec![false; h.values.len()];
    let reach = r.max(0.0).floor() as i64;
    let r2 = r * r;
    let mut out = Vec::new();
    for i in cand {
        if zeroed[i] {
            continue;
        }
        let (row, col) = (i / h.cols, i % h.cols);
        out.push(point_at(h, row, col));
        for dr in -reach..=reach {
            for dc in -reach..=reach {
                if ((dr * dr + dc * dc) as f64) > r2 {
                    continue;
                }
                let (rr, cc) = (row as i64 + dr, col as i64 + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < h.rows && (cc as usize) < h.cols {
                    zeroed[rr as usize * h.cols + cc as usize] = true;
                }
            }
        }
    }
    out
}

/// One point per 8-connected component of `{cells > threshold}`, placed at
/// the component's maximum. Components come in row-major order of their
/// first cell.
pub fn cc_points(h: &Heatmap, threshold: f32) -> Vec<DetectionPoint> {
    let n = h.values.len();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if seen[start] || h.values[start] <= threshold {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut best = start;
        while let Some(i) = stack.pop() {
            if h.values[i] > h.values[best] || (h.values[i] == h.values[best] && i < best) {
                best = i;
            }
            let (row, col) = ((i / h.cols) as i64, (i % h.cols) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (row + dr, col + dc);
                    if rr < 0 || cc < 0 || rr as usize >= h.rows || cc as usize >= h.cols {
                        continue;
                    }
                    let j = rr as usize * h.cols + cc as usize;
                    if !seen[j] && h.values[j] > threshold {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(point_at(h, best / h.cols, best % h.cols));
    }
    out
}
