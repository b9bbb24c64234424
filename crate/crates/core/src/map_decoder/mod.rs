//! Per-class logit maps to bounding boxes.
//!
//! Logits are softmaxed across class channels per cell. For every disease
//! channel, a cell is a peak when it reaches the probability floor `tau` and
//! is the maximum of its `(2d+1) x (2d+1)` neighbourhood (ties go to the
//! lowest row-major index). Peaks are visited from most to least probable and
//! each grows an 8-connected region over unclaimed cells whose probability is
//! at least `alpha * peak`. A peak that lands in an earlier region is merged
//! into it. Each region yields one box: its bounding rectangle, scored by the
//! peak probability, with the member centroid recorded alongside.

mod io;
pub mod synthetic;

use std::cmp::Ordering;
use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub use io::{
    read_map_dir, read_npy, write_map, write_npy, DetectionRecord, MapSample, MapSidecar, BACKGROUND_CLASS,
};

use crate::annotation_store::{BoundingBox, CoordSpace};
use crate::error::{Error, Result};

/// Grid cell `(row, col)`.
pub type Cell = (usize, usize);

/// Extent of a `[K, H, W]` map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MapShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl MapShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        MapShape { channels, height, width }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.cells()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn index(&self, k: usize, r: usize, c: usize) -> usize {
        (k * self.height + r) * self.width + c
    }

    fn validate(&self, values: usize, background: usize) -> Result<()> {
        if self.channels < 2 {
            return Err(Error::invalid(format!(
                "maps need a background and at least one class channel, got K={}",
                self.channels
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("maps must have non-zero height and width"));
        }
        if values != self.len() {
            return Err(Error::DimMismatch {
                axis: "values".into(),
                expected: self.len(),
                actual: values,
            });
        }
        if background >= self.channels {
            return Err(Error::invalid(format!("background channel {background} out of range")));
        }
        Ok(())
    }
}

/// Raw class scores, `[K, H, W]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMap {
    shape: MapShape,
    values: Vec<f64>,
    background: usize,
}

impl LogitMap {
    pub fn new(shape: MapShape, values: Vec<f64>, background: usize) -> Result<Self> {
        shape.validate(values.len(), background)?;
        Ok(LogitMap { shape, values, background })
    }

    pub fn shape(&self) -> MapShape {
        self.shape
    }

    pub fn background(&self) -> usize {
        self.background
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize, r: usize, c: usize) -> f64 {
        self.values[self.shape.index(k, r, c)]
    }
}

/// Per-cell class distribution with the same layout as [`LogitMap`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    shape: MapShape,
    values: Vec<f64>,
    background: usize,
}

impl ProbMap {
    /// Wraps probabilities that already sum to one per cell.
    pub fn new(shape: MapShape, values: Vec<f64>, background: usize) -> Result<Self> {
        shape.validate(values.len(), background)?;
        for r in 0..shape.height {
            for c in 0..shape.width {
                let mut sum = 0.0;
                for k in 0..shape.channels {
                    let p = values[shape.index(k, r, c)];
                    if !(0.0..=1.0).contains(&p) {
                        return Err(Error::invalid(format!("probability {p} at ({k}, {r}, {c}) outside [0, 1]")));
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid(format!("probabilities at ({r}, {c}) sum to {sum}")));
                }
            }
        }
        Ok(ProbMap { shape, values, background })
    }

    pub fn shape(&self) -> MapShape {
        self.shape
    }

    pub fn background(&self) -> usize {
        self.background
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize, r: usize, c: usize) -> f64 {
        self.values[self.shape.index(k, r, c)]
    }

    /// The `H x W` plane of channel `k`.
    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.shape.cells();
        &self.values[k * n..(k + 1) * n]
    }

    /// Disease channels, i.e. every channel except the background.
    pub fn class_channels(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.shape.channels).filter(move |&k| k != self.background)
    }
}

pub fn softmax_map(logits: &LogitMap) -> Result<ProbMap> {
    let shape = logits.shape;
    let mut values = vec![0.0; shape.len()];
    let mut scratch = vec![0.0; shape.channels];
    for r in 0..shape.height {
        for c in 0..shape.width {
            let mut max = f64::NEG_INFINITY;
            for k in 0..shape.channels {
                let v = logits.get(k, r, c);
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("logit cell (channel {k}, row {r}, col {c})")));
                }
                max = max.max(v);
            }
            let mut sum = 0.0;
            for (k, slot) in scratch.iter_mut().enumerate() {
                *slot = (logits.get(k, r, c) - max).exp();
                sum += *slot;
            }
            for (k, e) in scratch.iter().enumerate() {
                values[shape.index(k, r, c)] = e / sum;
            }
        }
    }
    Ok(ProbMap {
        shape,
        values,
        background: logits.background,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    /// Chebyshev radius of the maximal filter, in cells.
    pub d: usize,
    /// Absolute probability floor for peaks.
    pub tau: f64,
    /// Region-growing threshold as a fraction of the peak probability.
    pub alpha: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        DecodeParams {
            d: 3,
            tau: 0.5,
            alpha: 0.5,
        }
    }
}

impl DecodeParams {
    pub fn new(d: usize, tau: f64, alpha: f64) -> Result<Self> {
        let p = DecodeParams { d, tau, alpha };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 {
            return Err(Error::invalid("d must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau must lie in [0, 1), got {}", self.tau)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRegion {
    pub class_index: usize,
    pub peak: Cell,
    pub peak_prob: f64,
    /// Row-major sorted member cells.
    pub members: Vec<Cell>,
    pub centroid: (f64, f64),
}

impl PeakRegion {
    pub fn member_count(&self) -> usize {
        self.members.len()
    }
}

/// Sliding maximum over `[i - radius, i + radius]`, clamped to the slice.
fn window_max_1d(values: &[f64], radius: usize, out: &mut [f64]) {
    let n = values.len();
    let mut deque: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for (i, slot) in out.iter_mut().enumerate().take(n) {
        let hi = (i + radius).min(n - 1);
        while next <= hi {
            while deque.back().is_some_and(|&b| values[b] <= values[next]) {
                deque.pop_back();
            }
            deque.push_back(next);
            next += 1;
        }
        while deque.front().is_some_and(|&f| f + radius < i) {
            deque.pop_front();
        }
        *slot = values[*deque.front().expect("window is non-empty")];
    }
}

/// Separable `(2r+1) x (2r+1)` maximum filter over an `h x w` plane.
fn max_filter(plane: &[f64], h: usize, w: usize, radius: usize) -> Vec<f64> {
    let mut rows = vec![0.0; h * w];
    for r in 0..h {
        window_max_1d(&plane[r * w..(r + 1) * w], radius, &mut rows[r * w..(r + 1) * w]);
    }
    let mut out = vec![0.0; h * w];
    let mut col = vec![0.0; h];
    let mut col_max = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            col[r] = rows[r * w + c];
        }
        window_max_1d(&col, radius, &mut col_max);
        for r in 0..h {
            out[r * w + c] = col_max[r];
        }
    }
    out
}

/// Whether an earlier cell (row-major) in the window ties the candidate.
fn has_earlier_tie(plane: &[f64], w: usize, (r, c): Cell, d: usize) -> bool {
    let value = plane[r * w + c];
    let (c0, c1) = (c.saturating_sub(d), (c + d).min(w - 1));
    for rr in r.saturating_sub(d)..=r {
        let last = if rr == r { c } else { c1 + 1 };
        if (c0..last).any(|cc| plane[rr * w + cc] == value) {
            return true;
        }
    }
    false
}

/// Orders by probability descending, then row-major index ascending.
pub(crate) fn peak_order(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn centroid(members: &[Cell]) -> (f64, f64) {
    let n = members.len() as f64;
    let (sr, sc) = members
        .iter()
        .fold((0.0, 0.0), |(sr, sc), &(r, c)| (sr + r as f64, sc + c as f64));
    (sr / n, sc / n)
}

pub fn maximal_filter_regions(map: &ProbMap, class_index: usize, params: &DecodeParams) -> Result<Vec<PeakRegion>> {
    params.validate()?;
    let shape = map.shape;
    if class_index >= shape.channels {
        return Err(Error::invalid(format!(
            "class index {class_index} out of range for {} channels",
            shape.channels
        )));
    }
    if class_index == map.background {
        return Err(Error::invalid("the background channel has no detections"));
    }
    let (h, w) = (shape.height, shape.width);
    let plane = map.channel(class_index);
    let maxima = max_filter(plane, h, w, params.d);

    let mut peaks: Vec<(f64, usize)> = (0..h * w)
        .filter(|&i| plane[i] >= params.tau && plane[i] == maxima[i])
        .filter(|&i| !has_earlier_tie(plane, w, (i / w, i % w), params.d))
        .map(|i| (plane[i], i))
        .collect();
    peaks.sort_by(|a, b| peak_order(*a, *b));

    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for (peak_prob, idx) in peaks {
        if owner[idx].is_some() {
            continue;
        }
        let region_id = regions.len();
        let floor = params.alpha * peak_prob;
        let mut members = Vec::new();
        owner[idx] = Some(region_id);
        queue.push_back(idx);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            members.push((r, c));
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let j = rr * w + cc;
                    if owner[j].is_none() && plane[j] >= floor {
                        owner[j] = Some(region_id);
                        queue.push_back(j);
                    }
                }
            }
        }
        members.sort_unstable();
        regions.push(PeakRegion {
            class_index,
            peak: (idx / w, idx % w),
            peak_prob,
            centroid: centroid(&members),
            members,
        });
    }
    Ok(regions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_index: usize,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
    /// Member centroid `(row, col)` in map cells.
    pub centroid: (f64, f64),
}

/// Bounding rectangle of the region's cells, in map space.
pub fn region_to_detection(region: &PeakRegion) -> Detection {
    let (mut r0, mut c0) = (usize::MAX, usize::MAX);
    let (mut r1, mut c1) = (0, 0);
    for &(r, c) in &region.members {
        r0 = r0.min(r);
        r1 = r1.max(r);
        c0 = c0.min(c);
        c1 = c1.max(c);
    }
    Detection {
        class_index: region.class_index,
        bbox: BoundingBox {
            x: c0 as f64,
            y: r0 as f64,
            w: (c1 - c0 + 1) as f64,
            h: (r1 - r0 + 1) as f64,
            space: CoordSpace::Map,
        },
        confidence: region.peak_prob,
        centroid: region.centroid,
    }
}

/// Sorts by confidence descending, then class, then centroid row and column.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.class_index.cmp(&b.class_index))
            .then(a.centroid.0.total_cmp(&b.centroid.0))
            .then(a.centroid.1.total_cmp(&b.centroid.1))
    });
}

pub fn decode_probs(probs: &ProbMap, params: &DecodeParams) -> Result<Vec<Detection>> {
    let mut dets = Vec::new();
    for k in probs.class_channels() {
        dets.extend(maximal_filter_regions(probs, k, params)?.iter().map(region_to_detection));
    }
    sort_detections(&mut dets);
    Ok(dets)
}

pub fn decode(logits: &LogitMap, params: &DecodeParams) -> Result<Vec<Detection>> {
    params.validate()?;
    decode_probs(&softmax_map(logits)?, params)
}
