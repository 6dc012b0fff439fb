#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsr_core::geometry::BBox;
use tsr_core::ingest::{AnnotatedImage, AnnotatedObject, Category, DetectionRecord};

pub const FIELD_NAMES: [&str; 6] = [
    "ap_mean",
    "ap50",
    "ap75",
    "ap_small",
    "ap_medium",
    "ap_large",
];

/// Brute-force AP computation, written without reference to the library's
/// matcher or curve code.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub overall: [Option<f64>; 6],
    pub per_category: [[Option<f64>; 6]; 4],
    /// `[threshold][category]`, all sizes.
    pub by_threshold: Vec<[Option<f64>; 4]>,
}

fn area_in(area: f64, bucket: usize) -> bool {
    match bucket {
        0 => true,
        1 => area < 1024.0,
        2 => (1024.0..4096.0).contains(&area),
        _ => area >= 4096.0,
    }
}

fn overlap(a: &BBox, b: &BBox) -> f64 {
    let w = a.x_max().min(b.x_max()) - a.x_min().max(b.x_min());
    let h = a.y_max().min(b.y_max()) - a.y_min().max(b.y_min());
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    let union = a.width() * a.height() + b.width() * b.height() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn oracle_ap(
    gt: &[AnnotatedImage],
    preds: &[DetectionRecord],
    category: usize,
    thr: f64,
    bucket: usize,
    max_dets: Option<usize>,
) -> Option<f64> {
    let mut positives = 0usize;
    // (score, global index, true positive)
    let mut scored: Vec<(f64, usize, bool)> = Vec::new();
    for img in gt {
        let gts: Vec<(BBox, bool)> = img
            .objects
            .iter()
            .filter(|o| o.category.index() == category)
            .map(|o| (o.bbox, !area_in(o.bbox.width() * o.bbox.height(), bucket)))
            .collect();
        positives += gts.iter().filter(|g| !g.1).count();
        let mut dts: Vec<usize> = (0..preds.len())
            .filter(|&j| preds[j].image_id == img.image_id && preds[j].category.index() == category)
            .collect();
        dts.sort_by(|&a, &b| {
            preds[b]
                .score
                .partial_cmp(&preds[a].score)
                .unwrap()
                .then(a.cmp(&b))
        });
        if let Some(m) = max_dets {
            dts.truncate(m);
        }
        let mut taken = vec![false; gts.len()];
        for j in dts {
            let d = &preds[j];
            let ious: Vec<f64> = gts.iter().map(|g| overlap(&d.bbox, &g.0)).collect();
            let mut pick: Option<usize> = None;
            for g in 0..gts.len() {
                if taken[g] || ious[g] < thr {
                    continue;
                }
                let better = match pick {
                    None => true,
                    Some(p) => ious[g] > ious[p],
                };
                if better {
                    pick = Some(g);
                }
            }
            match pick {
                Some(g) => {
                    taken[g] = true;
                    if !gts[g].1 {
                        scored.push((d.score, j, true));
                    }
                }
                None => {
                    if area_in(d.bbox.width() * d.bbox.height(), bucket) {
                        scored.push((d.score, j, false));
                    }
                }
            }
        }
    }
    if positives == 0 {
        return None;
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut tp = 0usize;
    let mut points = Vec::new();
    for (k, s) in scored.iter().enumerate() {
        if s.2 {
            tp += 1;
        }
        points.push((tp as f64 / positives as f64, tp as f64 / (k + 1) as f64));
    }
    let mut total = 0.0;
    for i in 0..=100 {
        let r = i as f64 / 100.0;
        let p = points
            .iter()
            .filter(|pt| pt.0 >= r)
            .map(|pt| pt.1)
            .fold(0.0, f64::max);
        total += p;
    }
    Some(100.0 * total / 101.0)
}

fn average(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn oracle_report(
    gt: &[AnnotatedImage],
    preds: &[DetectionRecord],
    max_dets: Option<usize>,
) -> OracleReport {
    let thresholds: Vec<f64> = (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect();
    // table[bucket][t][c]
    let table: Vec<Vec<[Option<f64>; 4]>> = (0..4)
        .map(|b| {
            thresholds
                .iter()
                .map(|&t| {
                    let mut row = [None; 4];
                    for (c, slot) in row.iter_mut().enumerate() {
                        *slot = oracle_ap(gt, preds, c, t, b, max_dets);
                    }
                    row
                })
                .collect()
        })
        .collect();
    let summary = |cats: &[usize]| -> [Option<f64>; 6] {
        let collect = |b: usize, ts: &[usize]| {
            let mut v = Vec::new();
            for &c in cats {
                for &t in ts {
                    v.push(table[b][t][c]);
                }
            }
            average(&v)
        };
        let all: Vec<usize> = (0..10).collect();
        [
            collect(0, &all),
            collect(0, &[0]),
            collect(0, &[5]),
            collect(1, &all),
            collect(2, &all),
            collect(3, &all),
        ]
    };
    let mut per_category = [[None; 6]; 4];
    for (c, slot) in per_category.iter_mut().enumerate() {
        *slot = summary(&[c]);
    }
    OracleReport {
        overall: summary(&[0, 1, 2, 3]),
        per_category,
        by_threshold: table[0].clone(),
    }
}

pub fn report_fields(s: &tsr_core::eval::ApSummary) -> [Option<f64>; 6] {
    [
        s.ap_mean,
        s.ap50,
        s.ap75,
        s.ap_small,
        s.ap_medium,
        s.ap_large,
    ]
}

/// Largest absolute difference between two optional values; `None` on a
/// presence mismatch.
pub fn diff(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (None, None) => Some(0.0),
        (Some(x), Some(y)) => Some((x - y).abs()),
        _ => None,
    }
}

/// Compares a library report with the oracle; returns a description of the
/// first field off by more than `tol`.
pub fn compare(
    report: &tsr_core::eval::APReport,
    oracle: &OracleReport,
    tol: f64,
) -> Result<(), String> {
    let check = |what: String, a: Option<f64>, b: Option<f64>| match diff(a, b) {
        Some(d) if d <= tol => Ok(()),
        _ => Err(format!("{what}: library {a:?}, oracle {b:?}")),
    };
    for (i, name) in FIELD_NAMES.iter().enumerate() {
        check(
            name.to_string(),
            report_fields(&report.overall)[i],
            oracle.overall[i],
        )?;
    }
    for c in Category::ALL {
        let s = &report.per_category[&c];
        for (i, name) in FIELD_NAMES.iter().enumerate() {
            check(
                format!("{}.{name}", c.abbreviation()),
                report_fields(s)[i],
                oracle.per_category[c.index()][i],
            )?;
        }
    }
    for (t, row) in report.ap_by_threshold.iter().enumerate() {
        for (c, (&lib, &orc)) in row.iter().zip(&oracle.by_threshold[t]).enumerate() {
            check(format!("threshold {t} category {c}"), lib, orc)?;
        }
    }
    Ok(())
}

fn random_box(rng: &mut ChaCha8Rng, w: f64, h: f64) -> BBox {
    let (lo, hi) = match rng.random_range(0..3) {
        0 => (4.0, 31.0),
        1 => (32.0, 63.0),
        _ => (64.0, 150.0),
    };
    let bw: f64 = rng.random_range(lo..hi);
    let bh: f64 = rng.random_range(lo..hi);
    let x = rng.random_range(0.0..(w - bw).max(1.0));
    let y = rng.random_range(0.0..(h - bh).max(1.0));
    BBox::new(x, y, x + bw, y + bh).unwrap()
}

fn nudge(rng: &mut ChaCha8Rng, b: &BBox, amount: f64) -> BBox {
    let mut d = || rng.random_range(-amount..=amount);
    let (x0, x1) = (b.x_min() + d(), b.x_max() + d());
    let (y0, y1) = (b.y_min() + d(), b.y_max() + d());
    BBox::new(x0.min(x1), y0.min(y1), x0.max(x1) + 0.5, y0.max(y1) + 0.5).unwrap()
}

/// A small random scene: at most 5 images and 8 ground-truth boxes per
/// category per image, with near-duplicate boxes, tied scores and false
/// positives.
pub fn random_scene(seed: u64) -> (Vec<AnnotatedImage>, Vec<DetectionRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_images = rng.random_range(1..=5);
    let mut gt = Vec::new();
    let mut preds = Vec::new();
    for i in 0..n_images {
        let (w, h) = (
            rng.random_range(200.0..400.0),
            rng.random_range(200.0..400.0),
        );
        let image_id = format!("img{i}");
        let mut objects: Vec<AnnotatedObject> = Vec::new();
        for c in Category::ALL {
            let n = rng.random_range(0..=8);
            for k in 0..n {
                let bbox = if k > 0 && rng.random_bool(0.25) {
                    let prev = objects.last().unwrap().bbox;
                    nudge(&mut rng, &prev, 6.0)
                } else {
                    random_box(&mut rng, w, h)
                };
                objects.push(AnnotatedObject { category: c, bbox });
            }
        }
        for o in &objects {
            let copies = match rng.random_range(0..10) {
                0..=2 => 0,
                3..=8 => 1,
                _ => 2,
            };
            for _ in 0..copies {
                let amount = rng.random_range(0.0..12.0);
                let category = if rng.random_bool(0.05) {
                    Category::ALL[rng.random_range(0..4)]
                } else {
                    o.category
                };
                preds.push(DetectionRecord {
                    image_id: image_id.clone(),
                    category,
                    bbox: nudge(&mut rng, &o.bbox, amount),
                    score: rng.random_range(1..=10) as f64 / 10.0,
                });
            }
        }
        for c in Category::ALL {
            for _ in 0..rng.random_range(0..=3) {
                preds.push(DetectionRecord {
                    image_id: image_id.clone(),
                    category: c,
                    bbox: random_box(&mut rng, w, h),
                    score: rng.random_range(1..=10) as f64 / 10.0,
                });
            }
        }
        gt.push(AnnotatedImage {
            image_id,
            width: w,
            height: h,
            objects,
        });
    }
    // interleave images so global order differs from per-image order
    let mut order: Vec<usize> = (0..preds.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let preds = order.into_iter().map(|i| preds[i].clone()).collect();
    (gt, preds)
}

/// Occupancy lattice rebuilt from exported HTML, using the standard table
/// layout walk. Entries are cell ordinals in document order; the second
/// value lists each cell's text.
pub fn html_occupancy(html: &str) -> (Vec<Vec<usize>>, Vec<String>) {
    let doc = scraper::Html::parse_document(html);
    let tr = scraper::Selector::parse("table tr").unwrap();
    let td = scraper::Selector::parse("td").unwrap();
    let mut lattice: Vec<Vec<Option<usize>>> = Vec::new();
    let mut texts = Vec::new();
    for (r, row) in doc.select(&tr).enumerate() {
        let mut c = 0;
        for cell in row.select(&td) {
            let span = |name: &str| {
                cell.value()
                    .attr(name)
                    .map_or(1, |v| v.parse::<usize>().unwrap())
            };
            let (rs, cs) = (span("rowspan"), span("colspan"));
            while lattice.len() <= r {
                lattice.push(Vec::new());
            }
            while lattice[r].get(c).is_some_and(|x| x.is_some()) {
                c += 1;
            }
            let id = texts.len();
            texts.push(cell.text().collect::<String>());
            for rr in r..r + rs {
                while lattice.len() <= rr {
                    lattice.push(Vec::new());
                }
                for cc in c..c + cs {
                    if lattice[rr].len() <= cc {
                        lattice[rr].resize(cc + 1, None);
                    }
                    assert!(
                        lattice[rr][cc].is_none(),
                        "HTML cells overlap at ({rr}, {cc})"
                    );
                    lattice[rr][cc] = Some(id);
                }
            }
            c += cs;
        }
    }
    let lattice = lattice
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|x| x.expect("HTML lattice has a hole"))
                .collect()
        })
        .collect();
    (lattice, texts)
}
