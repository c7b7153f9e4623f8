//! Run-length encoded tumor masks and their 8-connected regions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size class of an annotated tumor region, by its largest extent in microns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeClass {
    /// Isolated tumor cells, 200 µm or less.
    Itc,
    /// Micrometastasis, above 200 µm and at most 2000 µm.
    Micro,
    /// Macrometastasis, above 2000 µm.
    Macro,
}

impl SizeClass {
    pub fn from_diameter_um(d: f64) -> Self {
        if d > 2000.0 {
            SizeClass::Macro
        } else if d > 200.0 {
            SizeClass::Micro
        } else {
            SizeClass::Itc
        }
    }
}

/// Binary tumor annotation at base resolution, stored as sorted half-open runs per row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotationMask {
    slide_id: String,
    width: u32,
    height: u32,
    rows: Vec<Vec<(u32, u32)>>,
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    slide_id: String,
    width: u32,
    height: u32,
    /// `[row, start, length]` triples.
    runs: Vec<[u32; 3]>,
}

impl AnnotationMask {
    pub fn empty(slide_id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            slide_id: slide_id.into(),
            width,
            height,
            rows: vec![Vec::new(); height as usize],
        }
    }

    pub fn from_fn(
        slide_id: impl Into<String>,
        width: u32,
        height: u32,
        mut is_set: impl FnMut(u32, u32) -> bool,
    ) -> Self {
        let mut mask = Self::empty(slide_id, width, height);
        for y in 0..height {
            let mut x = 0;
            while x < width {
                if is_set(x, y) {
                    let start = x;
                    while x < width && is_set(x, y) {
                        x += 1;
                    }
                    mask.rows[y as usize].push((start, x));
                } else {
                    x += 1;
                }
            }
        }
        mask
    }

    pub fn from_dense(slide_id: impl Into<String>, width: u32, height: u32, bits: &[bool]) -> Self {
        assert_eq!(bits.len(), width as usize * height as usize);
        Self::from_fn(slide_id, width, height, |x, y| {
            bits[y as usize * width as usize + x as usize]
        })
    }

    pub fn slide_id(&self) -> &str {
        &self.slide_id
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Sorted, disjoint, non-adjacent `[start, end)` runs of row `y`.
    pub fn row_runs(&self, y: u32) -> &[(u32, u32)] {
        &self.rows[y as usize]
    }

    /// Sets `[start, end)` on row `y`, merging with existing runs.
    pub fn set_run(&mut self, y: u32, start: u32, end: u32) {
        assert!(y < self.height && start < end && end <= self.width);
        let row = &mut self.rows[y as usize];
        let (mut s, mut e) = (start, end);
        let mut kept = Vec::with_capacity(row.len() + 1);
        for &(a, b) in row.iter() {
            if b < s || a > e {
                kept.push((a, b));
            } else {
                s = s.min(a);
                e = e.max(b);
            }
        }
        kept.push((s, e));
        kept.sort_unstable();
        *row = kept;
    }

    pub fn is_set(&self, x: u32, y: u32) -> bool {
        if x >= self.width || y >= self.height {
            return false;
        }
        let runs = &self.rows[y as usize];
        let i = runs.partition_point(|&(_, end)| end <= x);
        i < runs.len() && runs[i].0 <= x
    }

    pub fn pixel_count(&self) -> u64 {
        self.rows
            .iter()
            .flatten()
            .map(|&(s, e)| (e - s) as u64)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(Vec::is_empty)
    }

    /// Number of set pixels in the half-open rectangle `[x0, x1) x [y0, y1)`,
    /// clipped to the mask.
    pub fn count_in_rect(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> u64 {
        let cx0 = x0.max(0);
        let cx1 = x1.min(self.width as i64);
        let cy0 = y0.max(0);
        let cy1 = y1.min(self.height as i64);
        if cx0 >= cx1 || cy0 >= cy1 {
            return 0;
        }
        let (cx0, cx1) = (cx0 as u32, cx1 as u32);
        let mut total = 0u64;
        for y in cy0..cy1 {
            let runs = &self.rows[y as usize];
            let first = runs.partition_point(|&(_, end)| end <= cx0);
            for &(s, e) in &runs[first..] {
                if s >= cx1 {
                    break;
                }
                total += (e.min(cx1) - s.max(cx0)) as u64;
            }
        }
        total
    }

    pub fn any_in_rect(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> bool {
        self.count_in_rect(x0, y0, x1, y1) > 0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = MaskFile {
            slide_id: self.slide_id.clone(),
            width: self.width,
            height: self.height,
            runs: self
                .rows
                .iter()
                .enumerate()
                .flat_map(|(y, runs)| runs.iter().map(move |&(s, e)| [y as u32, s, e - s]))
                .collect(),
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Loads an RLE sidecar, checking that every run lies in bounds.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: MaskFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let mut mask = Self::empty(file.slide_id, file.width, file.height);
        for [y, start, len] in file.runs {
            let end = start as u64 + len as u64;
            if y >= file.height || len == 0 || end > file.width as u64 {
                return Err(Error::Format(format!(
                    "{}: run (row {y}, start {start}, length {len}) outside {}x{} mask",
                    path.display(),
                    file.width,
                    file.height
                )));
            }
            mask.set_run(y, start, end as u32);
        }
        Ok(mask)
    }
}

/// One maximal 8-connected component of a mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TumorRegion {
    pub region_id: u32,
    /// Half-open bounding box `[x0, x1) x [y0, y1)` in base pixels.
    pub bbox: [u32; 4],
    pub pixel_count: u64,
    pub diameter_um: f64,
    pub size_class: SizeClass,
}

/// Regions of a mask plus a per-run label table for point lookups.
#[derive(Clone, Debug)]
pub struct RegionMap {
    regions: Vec<TumorRegion>,
    run_labels: Vec<Vec<u32>>,
    mask: AnnotationMask,
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the earlier run as root so labels follow scan order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

impl RegionMap {
    /// Labels 8-connected components. Region ids follow row-major order of each
    /// region's first pixel. Diameter is the longest bounding-box side times `mpp`.
    pub fn build(mask: &AnnotationMask, mpp: f64) -> Self {
        let mut offsets = Vec::with_capacity(mask.rows.len() + 1);
        let mut n = 0usize;
        for runs in &mask.rows {
            offsets.push(n);
            n += runs.len();
        }
        let mut sets = DisjointSets {
            parent: (0..n).collect(),
        };
        for y in 1..mask.rows.len() {
            let (prev, cur) = (&mask.rows[y - 1], &mask.rows[y]);
            let (mut i, mut j) = (0, 0);
            while i < prev.len() && j < cur.len() {
                let (ps, pe) = prev[i];
                let (cs, ce) = cur[j];
                // pixel ranges [ps, pe-1] and [cs, ce-1] touch (incl. diagonally)
                if cs <= pe && ps <= ce {
                    sets.union(offsets[y - 1] + i, offsets[y] + j);
                }
                if pe < ce {
                    i += 1;
                } else {
                    j += 1;
                }
            }
        }

        let mut root_label = vec![u32::MAX; n];
        let mut regions: Vec<TumorRegion> = Vec::new();
        let mut run_labels = Vec::with_capacity(mask.rows.len());
        for (y, runs) in mask.rows.iter().enumerate() {
            let mut labels = Vec::with_capacity(runs.len());
            for (k, &(s, e)) in runs.iter().enumerate() {
                let root = sets.find(offsets[y] + k);
                if root_label[root] == u32::MAX {
                    root_label[root] = regions.len() as u32;
                    regions.push(TumorRegion {
                        region_id: regions.len() as u32,
                        bbox: [s, y as u32, e, y as u32 + 1],
                        pixel_count: 0,
                        diameter_um: 0.0,
                        size_class: SizeClass::Itc,
                    });
                }
                let label = root_label[root];
                let r = &mut regions[label as usize];
                r.bbox[0] = r.bbox[0].min(s);
                r.bbox[2] = r.bbox[2].max(e);
                r.bbox[3] = y as u32 + 1;
                r.pixel_count += (e - s) as u64;
                labels.push(label);
            }
            run_labels.push(labels);
        }
        for r in &mut regions {
            let side = (r.bbox[2] - r.bbox[0]).max(r.bbox[3] - r.bbox[1]);
            r.diameter_um = side as f64 * mpp;
            r.size_class = SizeClass::from_diameter_um(r.diameter_um);
        }
        Self {
            regions,
            run_labels,
            mask: mask.clone(),
        }
    }

    pub fn regions(&self) -> &[TumorRegion] {
        &self.regions
    }

    pub fn mask(&self) -> &AnnotationMask {
        &self.mask
    }

    /// Index of the region containing pixel `(x, y)`, if that pixel is annotated.
    pub fn region_at(&self, x: u32, y: u32) -> Option<usize> {
        if x >= self.mask.width || y >= self.mask.height {
            return None;
        }
        let runs = &self.mask.rows[y as usize];
        let i = runs.partition_point(|&(_, end)| end <= x);
        (i < runs.len() && runs[i].0 <= x).then(|| self.run_labels[y as usize][i] as usize)
    }
}

/// Maximal 8-connected components of `mask`, with size classes computed at `mpp`.
pub fn connected_regions(mask: &AnnotationMask, mpp: f64) -> Vec<TumorRegion> {
    RegionMap::build(mask, mpp).regions
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_mask_has_no_regions() {
        assert!(connected_regions(&AnnotationMask::empty("s", 16, 16), 1.0).is_empty());
    }

    #[test]
    fn diagonal_pixels_form_one_region() {
        let mask = AnnotationMask::from_fn("s", 4, 4, |x, y| (x, y) == (1, 1) || (x, y) == (2, 2));
        let regions = connected_regions(&mask, 1.0);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].pixel_count, 2);
        assert_eq!(regions[0].bbox, [1, 1, 3, 3]);
    }

    #[test]
    fn separated_pixels_form_two_regions() {
        let mask = AnnotationMask::from_fn("s", 5, 5, |x, y| (x, y) == (0, 0) || (x, y) == (2, 0));
        assert_eq!(connected_regions(&mask, 1.0).len(), 2);
    }

    #[test]
    fn diameter_uses_longest_bbox_side() {
        let mask = AnnotationMask::from_fn("s", 1000, 400, |x, y| {
            (50..950).contains(&x) && (20..320).contains(&y)
        });
        let regions = connected_regions(&mask, 0.25);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].diameter_um, 225.0);
        assert_eq!(regions[0].size_class, SizeClass::Micro);
    }

    #[test]
    fn size_class_boundaries() {
        assert_eq!(SizeClass::from_diameter_um(200.0), SizeClass::Itc);
        assert_eq!(SizeClass::from_diameter_um(200.5), SizeClass::Micro);
        assert_eq!(SizeClass::from_diameter_um(2000.0), SizeClass::Micro);
        assert_eq!(SizeClass::from_diameter_um(2000.1), SizeClass::Macro);
    }

    #[test]
    fn rect_counts_clip_to_bounds() {
        let mask = AnnotationMask::from_fn("s", 10, 10, |x, y| x >= 5 && y >= 5);
        assert_eq!(mask.count_in_rect(0, 0, 10, 10), 25);
        assert_eq!(mask.count_in_rect(-100, -100, 6, 6), 1);
        assert_eq!(mask.count_in_rect(7, 7, 100, 100), 9);
        assert_eq!(mask.count_in_rect(0, 0, 5, 10), 0);
    }

    #[test]
    fn set_run_merges_overlaps_and_neighbours() {
        let mut mask = AnnotationMask::empty("s", 20, 1);
        mask.set_run(0, 2, 4);
        mask.set_run(0, 8, 10);
        mask.set_run(0, 4, 8);
        assert_eq!(mask.row_runs(0), &[(2, 10)]);
        mask.set_run(0, 12, 13);
        assert_eq!(mask.row_runs(0), &[(2, 10), (12, 13)]);
    }

    #[test]
    fn file_round_trip_and_bounds_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mask = AnnotationMask::from_fn("s", 30, 20, |x, y| (x * y) % 7 == 1);
        mask.save(&path).unwrap();
        assert_eq!(AnnotationMask::load(&path).unwrap(), mask);

        std::fs::write(&path, r#"{"slide_id":"s","width":4,"height":4,"runs":[[1,3,2]]}"#).unwrap();
        assert!(matches!(AnnotationMask::load(&path), Err(Error::Format(_))));
    }

    /// Per-pixel flood fill, kept independent of the run-based labeler.
    fn brute_force_labels(w: usize, h: usize, bits: &[bool]) -> Vec<Vec<(usize, usize)>> {
        let mut seen = vec![false; w * h];
        let mut comps = Vec::new();
        for start in 0..w * h {
            if !bits[start] || seen[start] {
                continue;
            }
            let mut stack = vec![start];
            seen[start] = true;
            let mut pixels = Vec::new();
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                pixels.push((x, y));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let j = ny as usize * w + nx as usize;
                        if bits[j] && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
            comps.push(pixels);
        }
        comps
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn regions_partition_mask_and_match_flood_fill(
            w in 1usize..96, h in 1usize..96, density in 0.05f64..0.6, seed in any::<u64>(),
            mpp in 0.1f64..40.0,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(density)).collect();
            let mask = AnnotationMask::from_dense("s", w as u32, h as u32, &bits);
            let map = RegionMap::build(&mask, mpp);
            let comps = brute_force_labels(w, h, &bits);
            prop_assert_eq!(map.regions().len(), comps.len());

            let total: u64 = map.regions().iter().map(|r| r.pixel_count).sum();
            prop_assert_eq!(total, mask.pixel_count());
            for comp in &comps {
                let label = map.region_at(comp[0].0 as u32, comp[0].1 as u32).unwrap();
                for &(x, y) in comp {
                    prop_assert_eq!(map.region_at(x as u32, y as u32), Some(label));
                }
                let region = &map.regions()[label];
                prop_assert_eq!(region.pixel_count, comp.len() as u64);
                let x0 = comp.iter().map(|p| p.0).min().unwrap();
                let x1 = comp.iter().map(|p| p.0).max().unwrap() + 1;
                let y0 = comp.iter().map(|p| p.1).min().unwrap();
                let y1 = comp.iter().map(|p| p.1).max().unwrap() + 1;
                let side = (x1 - x0).max(y1 - y0) as f64;
                prop_assert_eq!(region.size_class, SizeClass::from_diameter_um(side * mpp));
            }
            for (i, &b) in bits.iter().enumerate() {
                if !b {
                    prop_assert_eq!(map.region_at((i % w) as u32, (i / w) as u32), None);
                }
            }
        }

        #[test]
        fn rect_count_matches_dense_sum(
            w in 1u32..64, h in 1u32..64, seed in any::<u64>(),
            x0 in -20i64..80, y0 in -20i64..80, rw in 0i64..90, rh in 0i64..90,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.3)).collect();
            let mask = AnnotationMask::from_dense("s", w, h, &bits);
            let mut expected = 0;
            for y in y0.max(0)..(y0 + rh).min(h as i64) {
                for x in x0.max(0)..(x0 + rw).min(w as i64) {
                    expected += bits[(y * w as i64 + x) as usize] as u64;
                }
            }
            prop_assert_eq!(mask.count_in_rect(x0, y0, x0 + rw, y0 + rh), expected);
        }
    }
}
