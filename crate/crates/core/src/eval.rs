//! COCO-style average precision.
//!
//! Detections are matched greedily in descending score order, each to the
//! still-unmatched ground-truth box of the same category with the highest IoU
//! at or above the threshold (ties go to the earlier box). Precision is made
//! monotone from the right and sampled at 101 recall points. AP is averaged
//! over IoU 0.50:0.05:0.95.
//!
//! Size-restricted APs mark ground truth outside the bucket as ignored.
//! Ignored boxes still take part in matching; a detection matched to one, or
//! unmatched and itself outside the bucket, counts as neither TP nor FP. Buckets use the 32²/64² area limits
//! from [`crate::geometry`].
//!
//! Score ties are broken by input order, so results are deterministic.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{iou, size_bucket, BBox, SizeBucket};
use crate::ingest::{AnnotatedImage, Category, DetectionRecord};

pub const RECALL_POINTS: usize = 101;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Recall grid 0.00, 0.01, ..., 1.00.
pub fn recall_grid() -> [f64; RECALL_POINTS] {
    std::array::from_fn(|i| i as f64 / 100.0)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("predictions reference unknown images: {}", .0.join(", "))]
    UnknownImages(Vec<String>),
    #[error("duplicate ground-truth image id {0:?}")]
    DuplicateImage(String),
    #[error("prediction {index} is for image {found:?}, expected {expected:?}")]
    ImageMismatch {
        index: usize,
        expected: String,
        found: String,
    },
    #[error("IoU threshold {0} outside [0, 1]")]
    BadThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Matching result for one prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchEntry {
    /// Index into the prediction list; also the score tie-break key.
    pub prediction: usize,
    pub category: Category,
    pub score: f64,
    /// Index into the image's object list.
    pub ground_truth: Option<usize>,
    pub iou: f64,
    pub outcome: Outcome,
}

/// Matches for one image at one IoU threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub image_id: String,
    /// In processing order (category code, then descending score).
    pub entries: Vec<MatchEntry>,
    /// Non-ignored ground-truth boxes per category code.
    pub gt_count: [usize; Category::COUNT],
}

impl MatchSet {
    pub fn for_category(&self, category: Category) -> impl Iterator<Item = &MatchEntry> {
        self.entries.iter().filter(move |e| e.category == category)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub recall: Vec<f64>,
    /// Interpolated precision at each recall point; non-increasing.
    pub precision: Vec<f64>,
}

impl PRCurve {
    /// Mean interpolated precision, in percent.
    pub fn average_precision(&self) -> f64 {
        100.0 * self.precision.iter().sum::<f64>() / self.precision.len() as f64
    }
}

/// Builds the interpolated curve from outcomes already in score order.
/// `None` when there is no ground truth to recall.
fn curve_from_outcomes<I>(outcomes: I, gt_count: usize) -> Option<PRCurve>
where
    I: IntoIterator<Item = Outcome>,
{
    if gt_count == 0 {
        return None;
    }
    let mut recall = Vec::new();
    let mut precision = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for o in outcomes {
        match o {
            Outcome::TruePositive => tp += 1,
            Outcome::FalsePositive => fp += 1,
            Outcome::Ignored => continue,
        }
        recall.push(tp as f64 / gt_count as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let grid = recall_grid();
    let sampled = grid
        .iter()
        .map(|&r| {
            let idx = recall.partition_point(|&x| x < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .collect();
    Some(PRCurve {
        recall: grid.to_vec(),
        precision: sampled,
    })
}

/// Precision/recall curve over matched predictions, which may span several
/// images. Entries are ordered by descending score, ties by `prediction`.
pub fn pr_curve(entries: &[MatchEntry], gt_count: usize) -> Option<PRCurve> {
    let mut sorted: Vec<&MatchEntry> = entries.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.prediction.cmp(&b.prediction))
    });
    curve_from_outcomes(sorted.into_iter().map(|e| e.outcome), gt_count)
}

/// Matched ground-truth index, IoU and outcome of one detection.
type Matched = (Option<usize>, f64, Outcome);

/// Precomputed data for one (image, category) pair.
struct Cell {
    /// Ground-truth boxes with their index in the image's object list.
    gts: Vec<(usize, BBox)>,
    /// Predictions sorted by score: (global index, bbox), truncated to the cap.
    dts: Vec<(usize, BBox)>,
    /// `ious[d][g]`.
    ious: Vec<Vec<f64>>,
}

impl Cell {
    fn new(gts: Vec<(usize, BBox)>, dts: Vec<(usize, BBox)>) -> Self {
        let ious = dts
            .iter()
            .map(|(_, d)| gts.iter().map(|(_, g)| iou(d, g)).collect())
            .collect();
        Self { gts, dts, ious }
    }

    fn gt_ignored(&self, bucket: Option<SizeBucket>) -> Vec<bool> {
        self.gts
            .iter()
            .map(|(_, g)| bucket.is_some_and(|b| size_bucket(g) != b))
            .collect()
    }

    /// Returns per-detection (matched gt position, iou, outcome) in `dts` order.
    fn run(&self, threshold: f64, bucket: Option<SizeBucket>) -> Vec<Matched> {
        let ignored = self.gt_ignored(bucket);
        let mut taken = vec![false; self.gts.len()];
        let mut out = Vec::with_capacity(self.dts.len());
        for (d, (_, dbox)) in self.dts.iter().enumerate() {
            // highest IoU at or above the threshold; the first box wins ties
            let mut matched: Option<usize> = None;
            for (g, (&v, &used)) in self.ious[d].iter().zip(&taken).enumerate() {
                if used || v < threshold {
                    continue;
                }
                if matched.is_none_or(|m| v > self.ious[d][m]) {
                    matched = Some(g);
                }
            }
            let result = match matched {
                Some(g) => {
                    taken[g] = true;
                    let outcome = if ignored[g] {
                        Outcome::Ignored
                    } else {
                        Outcome::TruePositive
                    };
                    (Some(g), self.ious[d][g], outcome)
                }
                None => {
                    let outside = bucket.is_some_and(|b| size_bucket(dbox) != b);
                    let outcome = if outside {
                        Outcome::Ignored
                    } else {
                        Outcome::FalsePositive
                    };
                    (None, 0.0, outcome)
                }
            };
            out.push(result);
        }
        out
    }
}

fn sort_by_score(indices: &mut [usize], preds: &[DetectionRecord]) {
    indices.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
}

fn build_cells(
    image: &AnnotatedImage,
    preds: &[DetectionRecord],
    pred_indices: &[usize],
    max_detections: Option<usize>,
) -> [Cell; Category::COUNT] {
    std::array::from_fn(|c| {
        let category = Category::ALL[c];
        let gts = image
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.category == category)
            .map(|(i, o)| (i, o.bbox))
            .collect();
        let mut idx: Vec<usize> = pred_indices
            .iter()
            .copied()
            .filter(|&i| preds[i].category == category)
            .collect();
        sort_by_score(&mut idx, preds);
        if let Some(cap) = max_detections {
            idx.truncate(cap);
        }
        let dts = idx.into_iter().map(|i| (i, preds[i].bbox)).collect();
        Cell::new(gts, dts)
    })
}

/// Matches one image's predictions against its ground truth.
pub fn match_detections(
    gt: &AnnotatedImage,
    preds: &[DetectionRecord],
    iou_threshold: f64,
    bucket_filter: Option<SizeBucket>,
) -> Result<MatchSet, EvalError> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(EvalError::BadThreshold(iou_threshold));
    }
    if let Some((index, p)) = preds
        .iter()
        .enumerate()
        .find(|(_, p)| p.image_id != gt.image_id)
    {
        return Err(EvalError::ImageMismatch {
            index,
            expected: gt.image_id.clone(),
            found: p.image_id.clone(),
        });
    }
    let all: Vec<usize> = (0..preds.len()).collect();
    let cells = build_cells(gt, preds, &all, None);
    let mut entries = Vec::with_capacity(preds.len());
    let mut gt_count = [0; Category::COUNT];
    for (c, cell) in cells.iter().enumerate() {
        gt_count[c] = cell
            .gt_ignored(bucket_filter)
            .iter()
            .filter(|&&i| !i)
            .count();
        for ((pi, _), (g, v, outcome)) in
            cell.dts.iter().zip(cell.run(iou_threshold, bucket_filter))
        {
            entries.push(MatchEntry {
                prediction: *pi,
                category: Category::ALL[c],
                score: preds[*pi].score,
                ground_truth: g.map(|g| cell.gts[g].0),
                iou: v,
                outcome,
            });
        }
    }
    Ok(MatchSet {
        image_id: gt.image_id.clone(),
        entries,
        gt_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalParams {
    /// Per image and category; `None` keeps every detection.
    pub max_detections: Option<usize>,
}

/// AP fields in percent. `None` where no ground truth exists.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub ap_mean: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_small: Option<f64>,
    pub ap_medium: Option<f64>,
    pub ap_large: Option<f64>,
}

impl ApSummary {
    pub fn fields(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("ap_mean", self.ap_mean),
            ("ap50", self.ap50),
            ("ap75", self.ap75),
            ("ap_small", self.ap_small),
            ("ap_medium", self.ap_medium),
            ("ap_large", self.ap_large),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APReport {
    #[serde(flatten)]
    pub overall: ApSummary,
    pub per_category: BTreeMap<Category, ApSummary>,
    /// `ap_by_threshold[t][c]`: AP over all sizes at the t-th IoU threshold.
    pub ap_by_threshold: Vec<[Option<f64>; Category::COUNT]>,
}

const BUCKETS: [Option<SizeBucket>; 4] = [
    None,
    Some(SizeBucket::Small),
    Some(SizeBucket::Medium),
    Some(SizeBucket::Large),
];

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Full report for a detection set against ground truth.
pub fn evaluate(
    gt: &[AnnotatedImage],
    preds: &[DetectionRecord],
    params: EvalParams,
) -> Result<APReport, EvalError> {
    let mut image_index = HashMap::with_capacity(gt.len());
    for (i, img) in gt.iter().enumerate() {
        if image_index.insert(img.image_id.as_str(), i).is_some() {
            return Err(EvalError::DuplicateImage(img.image_id.clone()));
        }
    }
    let mut per_image: Vec<Vec<usize>> = vec![Vec::new(); gt.len()];
    let mut unknown = BTreeSet::new();
    for (i, p) in preds.iter().enumerate() {
        match image_index.get(p.image_id.as_str()) {
            Some(&img) => per_image[img].push(i),
            None => {
                unknown.insert(p.image_id.clone());
            }
        }
    }
    if !unknown.is_empty() {
        return Err(EvalError::UnknownImages(unknown.into_iter().collect()));
    }

    let cells: Vec<[Cell; Category::COUNT]> = gt
        .par_iter()
        .zip(&per_image)
        .map(|(img, idx)| build_cells(img, preds, idx, params.max_detections))
        .collect();

    // Global score order per category, over detections that survived the cap.
    let mut rank = vec![usize::MAX; preds.len()];
    let mut counts = [0usize; Category::COUNT];
    for (c, count) in counts.iter_mut().enumerate() {
        let mut order: Vec<usize> = cells
            .iter()
            .flat_map(|cs| cs[c].dts.iter().map(|(i, _)| *i))
            .collect();
        sort_by_score(&mut order, preds);
        *count = order.len();
        for (pos, i) in order.into_iter().enumerate() {
            rank[i] = pos;
        }
    }

    let thresholds = iou_thresholds();
    // ap[bucket][t][category]
    let mut ap = vec![vec![[None; Category::COUNT]; thresholds.len()]; BUCKETS.len()];
    for (b, &bucket) in BUCKETS.iter().enumerate() {
        let mut gt_count = [0usize; Category::COUNT];
        for cs in &cells {
            for (c, cell) in cs.iter().enumerate() {
                gt_count[c] += cell.gt_ignored(bucket).iter().filter(|&&i| !i).count();
            }
        }
        for (t, &threshold) in thresholds.iter().enumerate() {
            let runs: Vec<Vec<Vec<Matched>>> = cells
                .par_iter()
                .map(|cs| cs.iter().map(|cell| cell.run(threshold, bucket)).collect())
                .collect();
            for c in 0..Category::COUNT {
                let mut outcomes = vec![Outcome::Ignored; counts[c]];
                for (cs, run) in cells.iter().zip(&runs) {
                    for ((pi, _), (_, _, o)) in cs[c].dts.iter().zip(&run[c]) {
                        outcomes[rank[*pi]] = *o;
                    }
                }
                ap[b][t][c] = curve_from_outcomes(outcomes, gt_count[c])
                    .map(|curve| curve.average_precision());
            }
        }
    }

    let table = &ap;
    let summarize = |cats: &[usize]| -> ApSummary {
        let over = |b: usize, ts: &[usize]| {
            mean(
                cats.iter()
                    .flat_map(|&c| ts.iter().filter_map(move |&t| table[b][t][c])),
            )
        };
        let all: Vec<usize> = (0..thresholds.len()).collect();
        ApSummary {
            ap_mean: over(0, &all),
            ap50: over(0, &[0]),
            ap75: over(0, &[5]),
            ap_small: over(1, &all),
            ap_medium: over(2, &all),
            ap_large: over(3, &all),
        }
    };
    let every: Vec<usize> = (0..Category::COUNT).collect();
    let overall = summarize(&every);
    let per_category = Category::ALL
        .iter()
        .map(|&c| (c, summarize(&[c.index()])))
        .collect();
    Ok(APReport {
        overall,
        per_category,
        ap_by_threshold: ap[0].clone(),
    })
}

fn cell_text(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

impl APReport {
    /// Two aligned tables: AP/AP50/AP75/AP_S/AP_M/AP_L, then per-category AP.
    pub fn to_text_table(&self) -> String {
        let mut s = String::new();
        let o = &self.overall;
        let row = |cols: &[String]| {
            let mut line = cols.iter().map(|c| format!("{c:<8}")).collect::<String>();
            line.truncate(line.trim_end().len());
            line
        };
        let head: Vec<String> = ["AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L"]
            .iter()
            .map(|h| h.to_string())
            .collect();
        let _ = writeln!(s, "{}", row(&head));
        let vals: Vec<String> = [
            o.ap_mean,
            o.ap50,
            o.ap75,
            o.ap_small,
            o.ap_medium,
            o.ap_large,
        ]
        .into_iter()
        .map(cell_text)
        .collect();
        let _ = writeln!(s, "{}", row(&vals));
        s.push('\n');
        let head: Vec<String> = Category::ALL
            .iter()
            .map(|c| c.abbreviation().to_string())
            .collect();
        let _ = writeln!(s, "{}", row(&head));
        let vals: Vec<String> = Category::ALL
            .iter()
            .map(|c| cell_text(self.per_category.get(c).and_then(|a| a.ap_mean)))
            .collect();
        let _ = writeln!(s, "{}", row(&vals));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}
