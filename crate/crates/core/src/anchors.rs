//! Anchor generation.
//!
//! Structure-aware generation exploits the fact that the columns of a table
//! share one height and its rows share one width: column anchors keep the
//! level's base extent as their height and vary the width by aspect ratio,
//! row anchors do the opposite. Tables and spanning cells are covered by
//! these two families, so no separate anchors are produced for them.
//!
//! [`generate_typical_anchors`] is the conventional fixed-area baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_size, BBox};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnchorError {
    #[error("anchor config needs at least one level")]
    NoLevels,
    #[error("anchor config needs at least one aspect ratio")]
    NoRatios,
    #[error("level {0}: stride and base extent must be finite and positive")]
    BadLevel(usize),
    #[error("level strides must be strictly increasing (level {0})")]
    StridesNotIncreasing(usize),
    #[error("aspect ratio {0} must be finite and positive")]
    BadRatio(f64),
    #[error("image {width}x{height} is smaller than one stride cell ({stride})")]
    ImageTooSmall {
        width: f64,
        height: f64,
        stride: f64,
    },
    #[error("config mode is {actual:?}, this generator needs {expected:?}")]
    WrongMode {
        expected: AnchorMode,
        actual: AnchorMode,
    },
    #[error("cannot sample {k} proposals from {available}")]
    NotEnoughProposals { k: usize, available: usize },
    #[error("gamma must be finite and >= 0, got {0}")]
    BadGamma(f64),
    #[error("proposal {index}: score {score} must be finite and >= 0")]
    BadScore { index: usize, score: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMode {
    Typical,
    StructureAware,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorRole {
    Column,
    Row,
    Generic,
}

/// One pyramid level: grid stride and the anchor's fixed extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub stride: f64,
    pub base_extent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub mode: AnchorMode,
    pub levels: Vec<Level>,
    pub aspect_ratios: Vec<f64>,
    pub image_width: f64,
    pub image_height: f64,
    pub clip_to_image: bool,
}

pub const DEFAULT_LEVELS: [(f64, f64); 5] = [
    (8.0, 32.0),
    (16.0, 64.0),
    (32.0, 128.0),
    (64.0, 256.0),
    (128.0, 512.0),
];

pub const DEFAULT_RATIOS: [f64; 3] = [0.5, 1.0, 2.0];

impl AnchorConfig {
    /// FPN-style defaults for an image of the given size.
    pub fn new(mode: AnchorMode, image_width: f64, image_height: f64) -> Self {
        Self {
            mode,
            levels: DEFAULT_LEVELS
                .iter()
                .map(|&(stride, base_extent)| Level {
                    stride,
                    base_extent,
                })
                .collect(),
            aspect_ratios: DEFAULT_RATIOS.to_vec(),
            image_width,
            image_height,
            clip_to_image: true,
        }
    }

    pub fn validate(&self) -> Result<(), AnchorError> {
        if self.levels.is_empty() {
            return Err(AnchorError::NoLevels);
        }
        if self.aspect_ratios.is_empty() {
            return Err(AnchorError::NoRatios);
        }
        for (i, level) in self.levels.iter().enumerate() {
            let ok = |v: f64| v.is_finite() && v > 0.0;
            if !ok(level.stride) || !ok(level.base_extent) {
                return Err(AnchorError::BadLevel(i));
            }
            if i > 0 && level.stride <= self.levels[i - 1].stride {
                return Err(AnchorError::StridesNotIncreasing(i));
            }
        }
        if let Some(&r) = self
            .aspect_ratios
            .iter()
            .find(|r| !(r.is_finite() && **r > 0.0))
        {
            return Err(AnchorError::BadRatio(r));
        }
        let finest = self.levels[0].stride;
        if !(self.image_width >= finest && self.image_height >= finest) {
            return Err(AnchorError::ImageTooSmall {
                width: self.image_width,
                height: self.image_height,
                stride: finest,
            });
        }
        Ok(())
    }

    /// Number of anchors produced per role before clipping:
    /// `Σ_levels ⌈W/s⌉·⌈H/s⌉·|ratios|`.
    pub fn expected_count(&self) -> usize {
        self.levels
            .iter()
            .map(|l| {
                grid_len(self.image_width, l.stride)
                    * grid_len(self.image_height, l.stride)
                    * self.aspect_ratios.len()
            })
            .sum()
    }

    fn require(&self, mode: AnchorMode) -> Result<(), AnchorError> {
        if self.mode != mode {
            return Err(AnchorError::WrongMode {
                expected: mode,
                actual: self.mode,
            });
        }
        self.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub bbox: BBox,
    pub level: usize,
    pub role: AnchorRole,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub anchors: Vec<Anchor>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn extend(&mut self, other: AnchorSet) {
        self.anchors.extend(other.anchors);
    }

    /// One JSON object per line: level, role and corner coordinates.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for a in &self.anchors {
            let line = AnchorLine {
                level: a.level,
                role: a.role,
                x_min: a.bbox.x_min(),
                y_min: a.bbox.y_min(),
                x_max: a.bbox.x_max(),
                y_max: a.bbox.y_max(),
            };
            out.push_str(&serde_json::to_string(&line).expect("plain struct serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Serialize)]
struct AnchorLine {
    level: usize,
    role: AnchorRole,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

fn grid_len(extent: f64, stride: f64) -> usize {
    (extent / stride).ceil() as usize
}

/// Cell centers along one axis. Full cells are centered at `(i + ½)·s`; a
/// trailing partial cell is centered on the part inside the image so that
/// every center stays within `[0, extent]`.
fn grid_centers(extent: f64, stride: f64) -> impl Iterator<Item = f64> {
    (0..grid_len(extent, stride)).map(move |i| {
        let lo = i as f64 * stride;
        let hi = (lo + stride).min(extent);
        if hi - lo == stride {
            (i as f64 + 0.5) * stride
        } else {
            (lo + hi) / 2.0
        }
    })
}

/// Grid step for one axis of one level: the spacing of doubles just above the
/// largest coordinate magnitude that axis can reach. Sums and differences of
/// multiples of this step below that bound are exact, so an anchor's size
/// survives the corner round trip bit for bit at every position.
fn axis_quantum(image_extent: f64, max_size: f64) -> f64 {
    let bound = image_extent + max_size;
    let exp = bound.log2().ceil() as i32 + 1;
    2f64.powi(exp - f64::MANTISSA_DIGITS as i32)
}

fn snap(v: f64, q: f64) -> f64 {
    (v / q).round() * q
}

/// Lower and upper corner of a span of `size` centered at `center`, both on
/// the `q` grid (`q == 0` leaves them unsnapped).
fn span(center: f64, size: f64, q: f64) -> (f64, f64) {
    if q == 0.0 {
        let lo = center - size / 2.0;
        return (lo, lo + size);
    }
    let size = snap(size, q);
    let lo = snap(center - size / 2.0, q);
    (lo, lo + size)
}

fn generate<F>(cfg: &AnchorConfig, role: AnchorRole, shape: F) -> AnchorSet
where
    F: Fn(&Level, f64) -> (f64, f64),
{
    let mut anchors = Vec::with_capacity(cfg.expected_count());
    for (li, level) in cfg.levels.iter().enumerate() {
        let sizes: Vec<(f64, f64)> = cfg.aspect_ratios.iter().map(|&r| shape(level, r)).collect();
        let max_w = sizes.iter().fold(0.0_f64, |m, s| m.max(s.0));
        let max_h = sizes.iter().fold(0.0_f64, |m, s| m.max(s.1));
        // typical anchors carry no exact-extent guarantee
        let (qx, qy) = if role == AnchorRole::Generic {
            (0.0, 0.0)
        } else {
            (
                axis_quantum(cfg.image_width, max_w),
                axis_quantum(cfg.image_height, max_h),
            )
        };
        let xs: Vec<f64> = grid_centers(cfg.image_width, level.stride).collect();
        for cy in grid_centers(cfg.image_height, level.stride) {
            for &cx in &xs {
                for &(w, h) in &sizes {
                    let (x0, x1) = span(cx, w, qx);
                    let (y0, y1) = span(cy, h, qy);
                    let mut bbox = BBox::new(x0, y0, x1, y1)
                        .expect("validated config yields finite positive extents");
                    if cfg.clip_to_image {
                        bbox = bbox.clamp_to(cfg.image_width, cfg.image_height);
                    }
                    anchors.push(Anchor {
                        bbox,
                        level: li,
                        role,
                    });
                }
            }
        }
    }
    AnchorSet { anchors }
}

/// Column anchors: height fixed to the level's base extent, width `h·r`.
pub fn generate_column_anchors(cfg: &AnchorConfig) -> Result<AnchorSet, AnchorError> {
    cfg.require(AnchorMode::StructureAware)?;
    Ok(generate(cfg, AnchorRole::Column, |l, r| {
        (l.base_extent * r, l.base_extent)
    }))
}

/// Row anchors: width fixed to the level's base extent, height `w·r`.
pub fn generate_row_anchors(cfg: &AnchorConfig) -> Result<AnchorSet, AnchorError> {
    cfg.require(AnchorMode::StructureAware)?;
    Ok(generate(cfg, AnchorRole::Row, |l, r| {
        (l.base_extent, l.base_extent * r)
    }))
}

/// Column anchors followed by row anchors.
pub fn generate_structure_anchors(cfg: &AnchorConfig) -> Result<AnchorSet, AnchorError> {
    let mut set = generate_column_anchors(cfg)?;
    set.extend(generate_row_anchors(cfg)?);
    Ok(set)
}

/// Fixed-area baseline: width `b·√r`, height `b/√r`.
pub fn generate_typical_anchors(cfg: &AnchorConfig) -> Result<AnchorSet, AnchorError> {
    cfg.require(AnchorMode::Typical)?;
    Ok(generate(cfg, AnchorRole::Generic, |l, r| {
        let s = r.sqrt();
        (l.base_extent * s, l.base_extent / s)
    }))
}

/// Size-prioritized proposal sampling without replacement.
///
/// Each proposal is weighted by `score · (1 / size)^gamma` with size taken as
/// height plus width, floored at one pixel. `gamma = 0` reduces to
/// score-proportional sampling. The result is in draw order; sampling uses
/// exponential keys (`ln(u) / weight`), which is distributionally identical to
/// drawing one item at a time with probability proportional to its weight.
/// Zero-weight proposals are only drawn after every positive-weight one, in
/// input order.
pub fn sample_proposals_size_prioritized(
    proposals: &[(BBox, f64)],
    k: usize,
    gamma: f64,
    seed: u64,
) -> Result<Vec<(BBox, f64)>, AnchorError> {
    if k > proposals.len() {
        return Err(AnchorError::NotEnoughProposals {
            k,
            available: proposals.len(),
        });
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(AnchorError::BadGamma(gamma));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed = Vec::with_capacity(proposals.len());
    for (index, &(bbox, score)) in proposals.iter().enumerate() {
        if !(score.is_finite() && score >= 0.0) {
            return Err(AnchorError::BadScore { index, score });
        }
        let weight = proposal_weight(&bbox, score, gamma);
        // u in (0, 1]
        let u: f64 = 1.0 - rng.random::<f64>();
        let key = if weight > 0.0 {
            u.ln() / weight
        } else {
            f64::NEG_INFINITY
        };
        keyed.push((key, index));
    }
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(keyed
        .into_iter()
        .take(k)
        .map(|(_, i)| proposals[i])
        .collect())
}

/// Sampling weight of one proposal.
pub fn proposal_weight(bbox: &BBox, score: f64, gamma: f64) -> f64 {
    let size = box_size(bbox).max(1.0);
    score * size.powf(-gamma)
}
