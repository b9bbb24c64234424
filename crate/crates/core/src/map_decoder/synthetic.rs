//! Synthetic logit maps with planted boxes and known ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::io::{MapSample, MapSidecar, BACKGROUND_CLASS};
use super::{LogitMap, MapShape};
use crate::annotation_store::{BoundingBox, CoordSpace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub boxes: usize,
    pub min_side: usize,
    pub max_side: usize,
    /// Minimum empty cells between planted boxes and from the border.
    pub gap: usize,
    /// Logit level at the box edge; the center rises by `bump` more.
    pub inside: f64,
    pub bump: f64,
    pub outside: f64,
    pub noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            height: 52,
            width: 52,
            boxes: 1,
            min_side: 6,
            max_side: 14,
            gap: 4,
            inside: 3.0,
            bump: 2.0,
            outside: -4.0,
            noise: 0.05,
        }
    }
}

/// A generated grid and the boxes planted in it.
#[derive(Debug, Clone)]
pub struct PlantedScene {
    pub sample: MapSample,
    /// Class channel of each planted box (never the background).
    pub class_index: usize,
    pub boxes: Vec<BoundingBox>,
}

pub const SYNTHETIC_CLASSES: [&str; 3] = [BACKGROUND_CLASS, "pneumonia", "pneumothorax"];

fn separated(a: &BoundingBox, b: &BoundingBox, gap: f64) -> bool {
    a.right() + gap <= b.x || b.right() + gap <= a.x || a.bottom() + gap <= b.y || b.bottom() + gap <= a.y
}

fn place_boxes(rng: &mut ChaCha8Rng, cfg: &SceneConfig) -> Vec<BoundingBox> {
    let gap = cfg.gap as f64;
    'attempt: for _ in 0..1000 {
        let mut boxes: Vec<BoundingBox> = Vec::with_capacity(cfg.boxes);
        for _ in 0..cfg.boxes {
            let mut placed = false;
            for _ in 0..200 {
                let bw = rng.random_range(cfg.min_side..=cfg.max_side);
                let bh = rng.random_range(cfg.min_side..=cfg.max_side);
                if bw + 2 * cfg.gap > cfg.width || bh + 2 * cfg.gap > cfg.height {
                    continue;
                }
                let x = rng.random_range(cfg.gap..=cfg.width - cfg.gap - bw);
                let y = rng.random_range(cfg.gap..=cfg.height - cfg.gap - bh);
                let candidate = BoundingBox {
                    x: x as f64,
                    y: y as f64,
                    w: bw as f64,
                    h: bh as f64,
                    space: CoordSpace::Map,
                };
                if boxes.iter().all(|b| separated(b, &candidate, gap)) {
                    boxes.push(candidate);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }
        return boxes;
    }
    panic!("cannot place {} boxes in a {}x{} grid", cfg.boxes, cfg.height, cfg.width);
}

/// Raised-cosine bump over the box: 1 at the center, 0 at the border cells.
fn bump(b: &BoundingBox, r: usize, c: usize) -> f64 {
    let u = ((c as f64 + 0.5) - b.x) / b.w;
    let v = ((r as f64 + 0.5) - b.y) / b.h;
    (std::f64::consts::PI * u).sin() * (std::f64::consts::PI * v).sin()
}

/// Generates one scene. Identical `(seed, cfg)` give identical scenes.
pub fn planted_scene(seed: u64, cfg: &SceneConfig) -> PlantedScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = MapShape::new(SYNTHETIC_CLASSES.len(), cfg.height, cfg.width);
    let class_index = rng.random_range(1..SYNTHETIC_CLASSES.len());
    let boxes = place_boxes(&mut rng, cfg);
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("valid noise level");

    let mut values = vec![0.0; shape.len()];
    for k in 0..shape.channels {
        for r in 0..cfg.height {
            for c in 0..cfg.width {
                let idx = (k * cfg.height + r) * cfg.width + c;
                let jitter = noise.sample(&mut rng);
                values[idx] = if k == 0 {
                    jitter
                } else {
                    let inside = (k == class_index)
                        .then(|| {
                            boxes.iter().find(|b| {
                                (c as f64) >= b.x && (c as f64) < b.right() && (r as f64) >= b.y && (r as f64) < b.bottom()
                            })
                        })
                        .flatten();
                    match inside {
                        Some(b) => cfg.inside + cfg.bump * bump(b, r, c) + jitter,
                        None => cfg.outside + jitter,
                    }
                };
            }
        }
    }
    let sidecar = MapSidecar {
        image_id: format!("synthetic-{seed:05}"),
        classes: SYNTHETIC_CLASSES.iter().map(|s| s.to_string()).collect(),
        space: CoordSpace::Map,
        map_to_net_scale: 416.0 / cfg.width as f64,
    };
    let logits = LogitMap::new(shape, values, 0).expect("shape is consistent");
    PlantedScene {
        sample: MapSample::new(sidecar, logits).expect("synthetic sidecar is valid"),
        class_index,
        boxes,
    }
}
