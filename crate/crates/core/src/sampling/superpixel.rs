//! SLIC-style superpixels over a single scalar feature plane.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use libm::{round, sqrt};

use crate::error::{Error, Result};
use crate::grid::{Cell, Grid};

/// Segment label per cell, in `[0, n_segments)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuperpixelLabels {
    height: usize,
    width: usize,
    labels: Vec<usize>,
    n_segments: usize,
}

impl SuperpixelLabels {
    pub fn new(height: usize, width: usize, labels: Vec<usize>, n_segments: usize) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "{} labels for a {height}x{width} grid",
                labels.len()
            )));
        }
        if let Some(i) = labels.iter().position(|&l| l >= n_segments) {
            return Err(Error::InvalidInput(format!(
                "label {} at index {i} is not below {n_segments}",
                labels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
            n_segments,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, (r, c): Cell) -> usize {
        self.labels[r * self.width + c]
    }

    pub fn areas(&self) -> Vec<usize> {
        let mut a = vec![0; self.n_segments];
        for &l in &self.labels {
            a[l] += 1;
        }
        a
    }

    /// Every segment is nonempty and 4-connected.
    pub fn is_well_formed(&self) -> bool {
        let (_, n_comp) = components(&self.labels, self.height, self.width);
        n_comp == self.n_segments && self.areas().iter().all(|&a| a > 0)
    }
}

/// Labels 4-connected components of equal label; returns (component id per
/// cell, component count). Components are numbered in row-major order of
/// first appearance.
fn components(labels: &[usize], h: usize, w: usize) -> (Vec<usize>, usize) {
    const UNSET: usize = usize::MAX;
    let mut comp = vec![UNSET; h * w];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if comp[start] != UNSET {
            continue;
        }
        let lab = labels[start];
        comp[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if comp[j] == UNSET && labels[j] == lab {
                    comp[j] = next;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
        }
        next += 1;
    }
    (comp, next)
}

struct SeedGrid {
    rows: usize,
    cols: usize,
    step: f64,
}

fn seed_grid(height: usize, width: usize, n_s: usize) -> SeedGrid {
    let step = sqrt((height * width) as f64 / n_s as f64);
    let rows = (round(height as f64 / step) as usize).clamp(1, height);
    let cols = (round(width as f64 / step) as usize).clamp(1, width);
    SeedGrid { rows, cols, step }
}

fn seed_centers(height: usize, width: usize, g: &SeedGrid) -> Vec<(f64, f64)> {
    let mut centers = Vec::with_capacity(g.rows * g.cols);
    for i in 0..g.rows {
        for j in 0..g.cols {
            centers.push((
                (i as f64 + 0.5) * height as f64 / g.rows as f64 - 0.5,
                (j as f64 + 0.5) * width as f64 / g.cols as f64 - 0.5,
            ));
        }
    }
    centers
}

fn nearest_seed(centers: &[(f64, f64)], r: f64, c: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, &(cr, cc)) in centers.iter().enumerate() {
        let d = (r - cr) * (r - cr) + (c - cc) * (c - cc);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Nearest-seed assignment for the regular seed grid used by [`superpixels`].
pub fn voronoi_seed_labels(height: usize, width: usize, n_s: usize) -> Result<SuperpixelLabels> {
    if n_s == 0 || n_s > height * width {
        return Err(Error::Parameter(format!(
            "superpixel count {n_s} must be in [1, {}]",
            height * width
        )));
    }
    let g = seed_grid(height, width, n_s);
    let centers = seed_centers(height, width, &g);
    let labels = (0..height * width)
        .map(|i| nearest_seed(&centers, (i / width) as f64, (i % width) as f64))
        .collect();
    SuperpixelLabels::new(height, width, labels, centers.len())
}

/// SLIC local k-means on `(value / compactness, row / S, col / S)` with
/// `S = sqrt(H W / n_s)`, seeded on a regular grid, followed by connectivity
/// enforcement: every non-largest fragment of a label is merged into its
/// largest adjacent segment. Labels are renumbered in row-major order of first
/// appearance, so the segment count can differ slightly from `n_s`.
pub fn superpixels(
    feature: &Grid,
    n_s: usize,
    compactness: f64,
    iters: usize,
) -> Result<SuperpixelLabels> {
    let (h, w) = feature.dims();
    if n_s < 1 || n_s > h * w {
        return Err(Error::Parameter(format!(
            "superpixel count {n_s} must be in [1, {}]",
            h * w
        )));
    }
    if !(compactness > 0.0 && compactness.is_finite()) {
        return Err(Error::Parameter(format!(
            "compactness must be positive, got {compactness}"
        )));
    }
    let g = seed_grid(h, w, n_s);
    let seeds = seed_centers(h, w, &g);
    let k = seeds.len();
    let s = g.step;
    let inv_m = 1.0 / compactness;

    let mut labels: Vec<usize> = (0..h * w)
        .map(|i| nearest_seed(&seeds, (i / w) as f64, (i % w) as f64))
        .collect();
    // centers as (value, row, col)
    let mut centers: Vec<(f64, f64, f64)> = seeds
        .iter()
        .map(|&(r, c)| {
            let cell = (
                (round(r) as usize).min(h - 1),
                (round(c) as usize).min(w - 1),
            );
            (feature[cell], r, c)
        })
        .collect();

    let mut dist = vec![f64::INFINITY; h * w];
    for _ in 0..iters {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (idx, &(cv, cr, cc)) in centers.iter().enumerate() {
            let r0 = (cr - s).max(0.0) as usize;
            let r1 = ((cr + s).max(0.0) as usize).min(h - 1);
            let c0 = (cc - s).max(0.0) as usize;
            let c1 = ((cc + s).max(0.0) as usize).min(w - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let i = r * w + c;
                    let dv = (feature.values()[i] - cv) * inv_m;
                    let dr = (r as f64 - cr) / s;
                    let dc = (c as f64 - cc) / s;
                    let d = dv * dv + dr * dr + dc * dc;
                    if d < dist[i] {
                        dist[i] = d;
                        labels[i] = idx;
                    }
                }
            }
        }
        let mut acc = vec![(0.0, 0.0, 0.0, 0usize); k];
        for (i, &l) in labels.iter().enumerate() {
            let a = &mut acc[l];
            a.0 += feature.values()[i];
            a.1 += (i / w) as f64;
            a.2 += (i % w) as f64;
            a.3 += 1;
        }
        for (center, a) in centers.iter_mut().zip(&acc) {
            if a.3 > 0 {
                let n = a.3 as f64;
                *center = (a.0 / n, a.1 / n, a.2 / n);
            }
        }
    }

    enforce_connectivity(&mut labels, h, w, k);
    let n_segments = relabel(&mut labels);
    SuperpixelLabels::new(h, w, labels, n_segments)
}

fn enforce_connectivity(labels: &mut [usize], h: usize, w: usize, k: usize) {
    let (comp, n_comp) = components(labels, h, w);
    let mut comp_area = vec![0usize; n_comp];
    let mut comp_label = vec![0usize; n_comp];
    for (i, &cid) in comp.iter().enumerate() {
        comp_area[cid] += 1;
        comp_label[cid] = labels[i];
    }
    // the largest fragment of each label survives; ties go to the first found
    let mut primary = vec![usize::MAX; k];
    for cid in 0..n_comp {
        let l = comp_label[cid];
        if primary[l] == usize::MAX || comp_area[cid] > comp_area[primary[l]] {
            primary[l] = cid;
        }
    }
    // union-find over fragments; an orphan joins the largest adjacent segment
    let mut parent: Vec<usize> = (0..n_comp).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut area = comp_area.clone();
    let mut orphans: Vec<usize> = (0..n_comp)
        .filter(|&cid| primary[comp_label[cid]] != cid)
        .collect();
    orphans.sort_by_key(|&cid| (comp_area[cid], cid));
    let mut cells_of: Vec<Vec<usize>> = vec![Vec::new(); n_comp];
    for (i, &cid) in comp.iter().enumerate() {
        cells_of[cid].push(i);
    }
    for &orphan in &orphans {
        let me = find(&mut parent, orphan);
        let mut best: Option<(usize, usize)> = None;
        for &i in &cells_of[orphan] {
            let (r, c) = (i / w, i % w);
            let mut consider = |j: usize| {
                let other = find(&mut parent, comp[j]);
                if other != me {
                    let a = area[other];
                    if best.is_none_or(|(ba, bo)| a > ba || (a == ba && other < bo)) {
                        best = Some((a, other));
                    }
                }
            };
            if r > 0 {
                consider(i - w);
            }
            if r + 1 < h {
                consider(i + w);
            }
            if c > 0 {
                consider(i - 1);
            }
            if c + 1 < w {
                consider(i + 1);
            }
        }
        if let Some((_, target)) = best {
            parent[me] = target;
            area[target] += area[me];
        }
    }
    for (i, l) in labels.iter_mut().enumerate() {
        let root = find(&mut parent, comp[i]);
        // roots are unique per merged segment; reuse the root id as the label
        *l = root;
    }
}

/// Renumbers labels in row-major order of first appearance; returns the count.
fn relabel(labels: &mut [usize]) -> usize {
    let max = labels.iter().copied().max().unwrap_or(0);
    let mut map = vec![usize::MAX; max + 1];
    let mut next = 0;
    for l in labels.iter_mut() {
        if map[*l] == usize::MAX {
            map[*l] = next;
            next += 1;
        }
        *l = map[*l];
    }
    next
}
