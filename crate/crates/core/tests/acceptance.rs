//! Acceptance checks, one line per criterion.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tsr_core::anchors::{self, AnchorConfig, AnchorMode, AnchorRole, Level};
use tsr_core::eval::{self, EvalParams};
use tsr_core::geometry::{self, BBox, SizeBucket};
use tsr_core::ingest::{
    self, AnnotatedImage, AnnotatedObject, Category, DetectionRecord, StatsAccumulator, VocOptions,
};
use tsr_core::loss::{self, BatchClassStats, ClassWeights, HardnessParams};
use tsr_core::structure::{self, SpanBlock, StructureConfig, SynthSpec};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))
}

fn c1_loss_math() -> Result<String, String> {
    let stats = BatchClassStats::new(vec![3, 1], vec![300.0, 100.0]).map_err(|e| e.to_string())?;
    let params = HardnessParams::new(0.5, vec![0.0, 0.0], 1.0).map_err(|e| e.to_string())?;
    let (l, w) = loss::batch_weights(&stats, &params).map_err(|e| e.to_string())?;
    ensure(l.0 == vec![Some(0.75), Some(0.25)], || {
        format!("hardness {:?}", l.0)
    })?;
    let w = w.as_slice();
    ensure(
        (w[0] - 0.37754).abs() < 1e-4 && (w[1] - 0.62246).abs() < 1e-4,
        || format!("weights {w:?}"),
    )?;

    let single = BatchClassStats::new(vec![0, 5, 0], vec![0.0, 42.0, 0.0]).unwrap();
    let (_, w1) = loss::batch_weights(&single, &HardnessParams::new(0.5, vec![], 1.0).unwrap())
        .map_err(|e| e.to_string())?;
    ensure(w1.as_slice()[1] == 1.0, || {
        format!("single-category weight {:?}", w1)
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let k = rng.random_range(1..=8);
        let counts: Vec<usize> = (0..k).map(|_| rng.random_range(0..50)).collect();
        let sizes: Vec<f64> = counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    0.0
                } else {
                    rng.random_range(0.0..2000.0)
                }
            })
            .collect();
        if counts.iter().all(|&c| c == 0) {
            continue;
        }
        let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let lambda = rng.random_range(0.0..=1.0);
        let stats = BatchClassStats::new(counts, sizes).unwrap();
        let (_, w) = loss::batch_weights(&stats, &HardnessParams::new(lambda, alpha, 1.0).unwrap())
            .map_err(|e| e.to_string())?;
        worst = worst.max((w.as_slice().iter().sum::<f64>() - 1.0).abs());
    }
    ensure(worst <= 1e-12, || format!("weight sum off by {worst:e}"))?;
    Ok(format!(
        "w = ({:.5}, {:.5}), max |sum - 1| = {worst:.1e}",
        w[0], w[1]
    ))
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

fn random_weights(rng: &mut ChaCha8Rng, k: usize) -> ClassWeights {
    let counts: Vec<usize> = (0..k).map(|_| rng.random_range(1..20)).collect();
    let sizes: Vec<f64> = (0..k).map(|_| rng.random_range(10.0..1000.0)).collect();
    let stats = BatchClassStats::new(counts, sizes).unwrap();
    let params = HardnessParams::new(rng.random_range(0.0..=1.0), vec![], 1.0).unwrap();
    loss::batch_weights(&stats, &params).unwrap().1
}

fn c2_gradients() -> Result<String, String> {
    let start = Instant::now();
    let h = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let configs = 1000;
    let mut components = 0usize;
    for _ in 0..configs {
        let k = rng.random_range(1..=4);
        let weights = random_weights(&mut rng, k);
        let beta: f64 = rng.random_range(0.1..3.0);

        // regression residuals, kept at least 1e-3 away from the kink
        let residuals: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..rng.random_range(1..=8))
                    .map(|_| loop {
                        let mag = rng.random_range(0.05 * beta..3.0 * beta);
                        if (mag - beta).abs() >= 1e-3 {
                            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                            break sign * mag;
                        }
                    })
                    .collect()
            })
            .collect();
        let grad = loss::cost_sensitive_l1_gradient(&residuals, &weights, beta).unwrap();
        for i in 0..k {
            for j in 0..residuals[i].len() {
                let mut plus = residuals.clone();
                let mut minus = residuals.clone();
                plus[i][j] += h;
                minus[i][j] -= h;
                let fd = (loss::cost_sensitive_l1(&plus, &weights, beta).unwrap()
                    - loss::cost_sensitive_l1(&minus, &weights, beta).unwrap())
                    / (2.0 * h);
                worst = worst.max(rel_err(grad[i][j], fd));
                components += 1;
            }
        }

        // classification logits
        let n = rng.random_range(1..=6);
        let logits: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let grad = loss::weighted_cross_entropy_gradient(&logits, &labels, &weights).unwrap();
        for s in 0..n {
            for j in 0..k {
                let mut plus = logits.clone();
                let mut minus = logits.clone();
                plus[s][j] += h;
                minus[s][j] -= h;
                let fd = (loss::weighted_cross_entropy(&plus, &labels, &weights).unwrap()
                    - loss::weighted_cross_entropy(&minus, &labels, &weights).unwrap())
                    / (2.0 * h);
                worst = worst.max(rel_err(grad[s][j], fd));
                components += 1;
            }
        }
    }
    ensure(worst < 1e-5, || format!("worst relative error {worst:e}"))?;
    within(Duration::from_secs(10), start)?;
    Ok(format!(
        "{configs} configurations, {components} components, worst relative error {worst:.1e}"
    ))
}

fn c3_smooth_l1() -> Result<String, String> {
    let two = loss::smooth_l1(2.0, 1.0).unwrap();
    ensure(two == 1.5, || format!("smooth_l1(2, 1) = {two}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_gap: f64 = 0.0;
    for _ in 0..10_000 {
        let beta: f64 = rng.random_range(1e-3..10.0);
        for edge in [beta, -beta] {
            let below = loss::smooth_l1(edge.next_down(), beta).unwrap();
            let above = loss::smooth_l1(edge.next_up(), beta).unwrap();
            worst_gap = worst_gap.max((below - above).abs());
        }
        let x: f64 = rng.random_range(-50.0..50.0);
        let (p, m) = (
            loss::smooth_l1(x, beta).unwrap(),
            loss::smooth_l1(-x, beta).unwrap(),
        );
        ensure(p == m, || {
            format!("smooth_l1 not even at x = {x}, beta = {beta}")
        })?;
    }
    ensure(worst_gap <= 1e-12, || {
        format!("gap at |x| = beta: {worst_gap:e}")
    })?;
    Ok(format!(
        "smooth_l1(2, 1) = 1.5, worst gap at the kink {worst_gap:.1e}"
    ))
}

fn c4_anchors() -> Result<String, String> {
    let mut cfg = AnchorConfig::new(AnchorMode::StructureAware, 64.0, 64.0);
    cfg.clip_to_image = false;
    cfg.levels = vec![Level {
        stride: 32.0,
        base_extent: 32.0,
    }];
    let cols = anchors::generate_column_anchors(&cfg).map_err(|e| e.to_string())?;
    let shapes: Vec<(f64, f64)> = cols.anchors[..3]
        .iter()
        .map(|a| (a.bbox.width(), a.bbox.height()))
        .collect();
    ensure(
        shapes == vec![(16.0, 32.0), (32.0, 32.0), (64.0, 32.0)],
        || format!("column shapes {shapes:?}"),
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..50 {
        let n_levels = rng.random_range(1..=5);
        let mut stride = rng.random_range(2.0..16.0_f64).round();
        let mut levels = Vec::new();
        for _ in 0..n_levels {
            levels.push(Level {
                stride,
                base_extent: rng.random_range(4.0..600.0),
            });
            stride *= rng.random_range(1.5..3.0);
        }
        let ratios: Vec<f64> = (0..rng.random_range(1..=5))
            .map(|_| rng.random_range(0.2..5.0))
            .collect();
        let (w, h) = (rng.random_range(64.0..900.0), rng.random_range(64.0..900.0));
        for mode in [AnchorMode::Typical, AnchorMode::StructureAware] {
            let cfg = AnchorConfig {
                mode,
                levels: levels.clone(),
                aspect_ratios: ratios.clone(),
                image_width: w,
                image_height: h,
                clip_to_image: false,
            };
            let per_role: usize = levels
                .iter()
                .map(|l| {
                    (w / l.stride).ceil() as usize * (h / l.stride).ceil() as usize * ratios.len()
                })
                .sum();
            let set = match mode {
                AnchorMode::Typical => anchors::generate_typical_anchors(&cfg),
                AnchorMode::StructureAware => anchors::generate_structure_anchors(&cfg),
            }
            .map_err(|e| format!("case {case}: {e}"))?;
            let expected = match mode {
                AnchorMode::Typical => per_role,
                AnchorMode::StructureAware => 2 * per_role,
            };
            ensure(set.len() == expected, || {
                format!(
                    "case {case} {mode:?}: {} anchors, formula {expected}",
                    set.len()
                )
            })?;
            if mode == AnchorMode::StructureAware {
                for (lvl, _) in levels.iter().enumerate() {
                    let mut col_h = set
                        .anchors
                        .iter()
                        .filter(|a| a.level == lvl && a.role == AnchorRole::Column)
                        .map(|a| a.bbox.height().to_bits());
                    let first = col_h.next().unwrap();
                    ensure(col_h.all(|b| b == first), || {
                        format!("case {case} level {lvl}: column heights differ")
                    })?;
                    let mut row_w = set
                        .anchors
                        .iter()
                        .filter(|a| a.level == lvl && a.role == AnchorRole::Row)
                        .map(|a| a.bbox.width().to_bits());
                    let first = row_w.next().unwrap();
                    ensure(row_w.all(|b| b == first), || {
                        format!("case {case} level {lvl}: row widths differ")
                    })?;
                }
            }
        }
    }
    Ok("16x32, 32x32, 64x32 produced; 50 random configs match the count formula".into())
}

fn c5_oracle() -> Result<String, String> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..200u64 {
        let (gt, preds) = common::random_scene(seed);
        let max_dets = if seed % 4 == 3 { Some(3) } else { None };
        let report = eval::evaluate(
            &gt,
            &preds,
            EvalParams {
                max_detections: max_dets,
            },
        )
        .map_err(|e| format!("scene {seed}: {e}"))?;
        let oracle = common::oracle_report(&gt, &preds, max_dets);
        common::compare(&report, &oracle, 1e-9).map_err(|e| format!("scene {seed}: {e}"))?;
        for (a, b) in common::report_fields(&report.overall)
            .iter()
            .zip(oracle.overall)
        {
            if let Some(d) = common::diff(*a, b) {
                worst = worst.max(d);
            }
        }

        let empty = eval::evaluate(&gt, &[], EvalParams::default()).unwrap();
        for (name, v) in empty.overall.fields() {
            ensure(v.is_none() || v == Some(0.0), || {
                format!("scene {seed}: empty predictions give {name} = {v:?}")
            })?;
        }
        let perfect: Vec<DetectionRecord> = gt
            .iter()
            .flat_map(|img| {
                img.objects.iter().map(|o| DetectionRecord {
                    image_id: img.image_id.clone(),
                    category: o.category,
                    bbox: o.bbox,
                    score: 1.0,
                })
            })
            .collect();
        let full = eval::evaluate(&gt, &perfect, EvalParams::default()).unwrap();
        for (name, v) in full.overall.fields() {
            ensure(v.is_none() || v == Some(100.0), || {
                format!("scene {seed}: perfect predictions give {name} = {v:?}")
            })?;
        }
    }
    within(Duration::from_secs(30), start)?;
    Ok(format!(
        "200 scenes agree with the brute-force oracle, worst |diff| {worst:.1e}"
    ))
}

fn c6_monotonicity() -> Result<String, String> {
    let mut pairs = 0usize;
    for seed in 0..200u64 {
        let (gt, preds) = common::random_scene(seed);
        let report = eval::evaluate(&gt, &preds, EvalParams::default()).unwrap();
        for c in 0..Category::COUNT {
            for t in 1..report.ap_by_threshold.len() {
                if let (Some(lo), Some(hi)) = (
                    report.ap_by_threshold[t - 1][c],
                    report.ap_by_threshold[t][c],
                ) {
                    ensure(hi <= lo, || {
                        format!("scene {seed} category {c}: AP rises from {lo} to {hi} at threshold {t}")
                    })?;
                    pairs += 1;
                }
            }
        }
        if let (Some(a50), Some(a75)) = (report.overall.ap50, report.overall.ap75) {
            ensure(a75 <= a50, || {
                format!("scene {seed}: AP75 {a75} > AP50 {a50}")
            })?;
        }

        for (name, f) in [
            ("square", (|s: f64| s * s) as fn(f64) -> f64),
            ("affine", |s: f64| 0.25 * s + 0.5),
            ("sqrt", f64::sqrt),
        ] {
            let moved: Vec<DetectionRecord> = preds
                .iter()
                .map(|p| DetectionRecord {
                    score: f(p.score),
                    ..p.clone()
                })
                .collect();
            let again = eval::evaluate(&gt, &moved, EvalParams::default()).unwrap();
            ensure(again == report, || {
                format!("scene {seed}: report changes under the {name} score transform")
            })?;
        }
    }
    Ok(format!(
        "{pairs} adjacent-threshold pairs non-increasing; reports invariant under 3 monotone score maps"
    ))
}

fn random_spans(rng: &mut ChaCha8Rng, n_rows: usize, n_cols: usize) -> Vec<SpanBlock> {
    let mut taken = vec![vec![false; n_cols]; n_rows];
    let mut spans = Vec::new();
    let want = rng.random_range(0..=3);
    for _ in 0..50 {
        if spans.len() == want {
            break;
        }
        let rowspan = rng.random_range(1..=n_rows.min(3));
        let colspan = rng.random_range(1..=n_cols.min(3));
        if rowspan * colspan == 1 {
            continue;
        }
        let row = rng.random_range(0..=n_rows - rowspan);
        let col = rng.random_range(0..=n_cols - colspan);
        let free = (row..row + rowspan).all(|r| (col..col + colspan).all(|c| !taken[r][c]));
        if free {
            for line in &mut taken[row..row + rowspan] {
                line[col..col + colspan].fill(true);
            }
            spans.push(SpanBlock {
                row,
                col,
                rowspan,
                colspan,
            });
        }
    }
    spans
}

fn random_synth(rng: &mut ChaCha8Rng, seed: u64, jitter: f64) -> SynthSpec {
    let n_rows = rng.random_range(1..=10);
    let n_cols = rng.random_range(1..=10);
    let spans = random_spans(rng, n_rows, n_cols);
    let (x0, y0) = (
        rng.random_range(0..50) as f64,
        rng.random_range(0..50) as f64,
    );
    let w = n_cols as f64 * rng.random_range(24..60) as f64;
    let h = n_rows as f64 * rng.random_range(24..48) as f64;
    SynthSpec {
        image_id: format!("t{seed}"),
        n_rows,
        n_cols,
        spans,
        frame: BBox::new(x0, y0, x0 + w, y0 + h).unwrap(),
        jitter,
        seed,
    }
}

fn check_incremental_cover(
    records: &[DetectionRecord],
    cfg: &StructureConfig,
) -> Result<(), String> {
    let grid = structure::infer_grid(records, cfg).map_err(|e| e.to_string())?;
    let spans: Vec<DetectionRecord> = records
        .iter()
        .filter(|r| r.category == Category::TableSpanningCell)
        .cloned()
        .collect();
    for k in 0..=spans.len() {
        let (g, _) =
            structure::apply_spanning(&grid, &spans[..k], cfg).map_err(|e| e.to_string())?;
        g.check_exact_cover()
            .map_err(|e| format!("after {k} span(s): {e}"))?;
    }
    Ok(())
}

fn c7_structure() -> Result<String, String> {
    let start = Instant::now();
    let cfg = StructureConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut spans_total = 0;
    for seed in 0..100u64 {
        let spec = random_synth(&mut rng, seed, 0.0);
        let (records, expected) = structure::synth_table(&spec).map_err(|e| e.to_string())?;
        spans_total += spec.spans.len();
        let (got, _) =
            structure::infer_table(&records, &cfg).map_err(|e| format!("table {seed}: {e}"))?;
        ensure(got == expected, || {
            format!("table {seed}: jitter-free grid differs")
        })?;
        check_incremental_cover(&records, &cfg).map_err(|e| format!("table {seed}: {e}"))?;

        let jitter = rng.random_range(0.1..=2.0);
        let noisy = SynthSpec { jitter, ..spec };
        let min_extent = expected
            .row_extents
            .iter()
            .chain(&expected.col_extents)
            .map(|e| e.1 - e.0)
            .fold(f64::INFINITY, f64::min);
        ensure(min_extent >= 10.0, || {
            format!("table {seed}: cell extent {min_extent} < 10")
        })?;
        let (records, expected) = structure::synth_table(&noisy).map_err(|e| e.to_string())?;
        let (got, _) =
            structure::infer_table(&records, &cfg).map_err(|e| format!("table {seed}: {e}"))?;
        ensure(got.layout() == expected.layout(), || {
            format!("table {seed}: structure differs under jitter {jitter}")
        })?;
        ensure(
            (got.n_rows, got.n_cols) == (expected.n_rows, expected.n_cols),
            || format!("table {seed}: lattice size differs under jitter"),
        )?;
        check_incremental_cover(&records, &cfg).map_err(|e| format!("table {seed}: {e}"))?;
    }
    within(Duration::from_secs(10), start)?;
    Ok(format!("100 tables ({spans_total} spans) exact at jitter 0 and structurally exact at jitter <= 2 px"))
}

fn c8_exports() -> Result<String, String> {
    let cfg = StructureConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..100u64 {
        let spec = random_synth(&mut rng, seed, 0.0);
        let _ = rng.random_range(0.1..=2.0);
        let (records, _) = structure::synth_table(&spec).map_err(|e| e.to_string())?;
        let (grid, _) = structure::infer_table(&records, &cfg).map_err(|e| e.to_string())?;
        let html = structure::export_html(&grid);
        let (lattice, texts) = common::html_occupancy(&html);
        let occ = grid.occupancy().map_err(|e| e.to_string())?;
        ensure(lattice == occ, || {
            format!("table {seed}: HTML lattice differs")
        })?;
        for (cell, text) in grid.cells.iter().zip(&texts) {
            ensure(*text == cell.bbox.to_string(), || {
                format!("table {seed}: cell text {text:?}")
            })?;
        }
        let back =
            structure::grid_from_json(&structure::export_json(&grid)).map_err(|e| e.to_string())?;
        ensure(back == grid, || {
            format!("table {seed}: JSON parse-back differs")
        })?;
    }
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/structure");
    let mut goldens = 0;
    for name in ["one_by_one", "colspan_top", "mixed_spans"] {
        let json =
            std::fs::read_to_string(dir.join(format!("{name}.json"))).map_err(|e| e.to_string())?;
        let golden =
            std::fs::read_to_string(dir.join(format!("{name}.html"))).map_err(|e| e.to_string())?;
        let records = ingest::parse_detections(&json).map_err(|e| e.to_string())?;
        let (grid, _) = structure::infer_table(&records, &cfg).map_err(|e| e.to_string())?;
        ensure(structure::export_html(&grid) == golden, || {
            format!("{name}: HTML differs from golden")
        })?;
        goldens += 1;
    }
    Ok(format!(
        "100 HTML lattices and JSON round trips identical; {goldens} goldens byte-equal"
    ))
}

fn random_images(rng: &mut ChaCha8Rng, n: usize) -> Vec<AnnotatedImage> {
    (0..n)
        .map(|i| {
            let objects = (0..rng.random_range(0..12))
                .map(|_| {
                    let x = rng.random_range(0.0..500.0);
                    let y = rng.random_range(0.0..500.0);
                    AnnotatedObject {
                        category: Category::ALL[rng.random_range(0..4)],
                        bbox: BBox::new(
                            x,
                            y,
                            x + rng.random_range(0.0..3000.0),
                            y + rng.random_range(0.0..300.0),
                        )
                        .unwrap(),
                    }
                })
                .collect();
            AnnotatedImage {
                image_id: format!("s{i}"),
                width: 4000.0,
                height: 1000.0,
                objects,
            }
        })
        .collect()
}

fn c9_ingestion() -> Result<String, String> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/voc");
    let files = ingest::list_voc_files(&dir).map_err(|e| e.to_string())?;
    ensure(files.len() == 3, || format!("{} VOC fixtures", files.len()))?;
    for f in &files {
        let doc = ingest::read_voc_file(f, VocOptions::default()).map_err(|e| e.to_string())?;
        let back = ingest::parse_voc_xml(&ingest::to_voc_xml(&doc.image), VocOptions::default())
            .map_err(|e| e.to_string())?;
        ensure(back.image == doc.image, || {
            format!("{}: VOC round trip differs", f.display())
        })?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let images = random_images(&mut rng, 4000);
    let mut one = StatsAccumulator::default();
    for img in &images {
        one.push(img);
    }
    let mut shards = vec![StatsAccumulator::default(); 8];
    for (i, img) in images.iter().enumerate() {
        shards[i % 8].push(img);
    }
    let mut left = StatsAccumulator::default();
    for s in &shards {
        left.merge(s);
    }
    let mut right = StatsAccumulator::default();
    for s in shards.iter().rev() {
        right.merge(s);
    }
    // ((s0 s1)(s2 s3))((s4 s5)(s6 s7))
    let mut layer = shards.clone();
    while layer.len() > 1 {
        layer = layer
            .chunks(2)
            .map(|p| {
                let mut a = p[0].clone();
                a.merge(&p[1]);
                a
            })
            .collect();
    }
    let single = one.finish();
    for (name, merged) in [
        ("left fold", &left),
        ("right fold", &right),
        ("tree", &layer[0]),
    ] {
        ensure(merged.finish() == single, || {
            format!("8-shard {name} differs from 1 shard")
        })?;
        ensure(merged.finish().to_json() == single.to_json(), || {
            format!("{name} JSON differs")
        })?;
    }

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for img in &images[..1500] {
        std::fs::write(
            tmp.path().join(format!("{}.xml", img.image_id)),
            ingest::to_voc_xml(img),
        )
        .map_err(|e| e.to_string())?;
    }
    let in_memory = ingest::dataset_stats(&images[..1500]);
    let mut runs = Vec::new();
    for (threads, chunk) in [(1, 1500), (8, 16), (3, 7)] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let res = pool
            .install(|| ingest::stats_for_dir(tmp.path(), VocOptions::default(), chunk))
            .map_err(|e| e.to_string())?;
        ensure(res.files == 1500, || format!("{} files read", res.files))?;
        runs.push(res.stats.finish());
    }
    for r in &runs {
        ensure(*r == in_memory, || {
            "directory stats differ from in-memory stats".into()
        })?;
    }
    Ok("3 VOC fixtures round-trip; 1-shard and 8-shard stats bit-identical; chunked directory streaming matches".into())
}

fn c10_buckets() -> Result<String, String> {
    let b = |w: f64, h: f64| geometry::size_bucket(&BBox::new(0.0, 0.0, w, h).unwrap());
    ensure(b(32.0, 32.0) == SizeBucket::Medium, || {
        "area 1024 not Medium".into()
    })?;
    ensure(b(64.0, 64.0) == SizeBucket::Large, || {
        "area 4096 not Large".into()
    })?;
    ensure(b(16.0, 64.0) == SizeBucket::Medium, || {
        "16x64 not Medium".into()
    })?;
    ensure(b(32.0, 31.999) == SizeBucket::Small, || {
        "area < 1024 not Small".into()
    })?;
    ensure(b(64.0, 63.999) == SizeBucket::Medium, || {
        "area < 4096 not Medium".into()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100_000 {
        let (w, h) = (rng.random_range(0.0..200.0), rng.random_range(0.0..200.0));
        let bucket = b(w, h);
        let area = w * h;
        let matches = SizeBucket::ALL
            .iter()
            .filter(|&&s| {
                let (lo, hi) = match s {
                    SizeBucket::Small => (0.0, 1024.0),
                    SizeBucket::Medium => (1024.0, 4096.0),
                    SizeBucket::Large => (4096.0, f64::INFINITY),
                };
                area >= lo && area < hi
            })
            .count();
        ensure(matches == 1, || format!("area {area} in {matches} ranges"))?;
        let expected = if area < 1024.0 {
            SizeBucket::Small
        } else if area < 4096.0 {
            SizeBucket::Medium
        } else {
            SizeBucket::Large
        };
        ensure(bucket == expected, || {
            format!("{w}x{h} classified {bucket:?}")
        })?;
    }
    Ok("1024 -> Medium, 4096 -> Large; 100000 random boxes land in exactly one bucket".into())
}

fn main() {
    let checks: [(&str, Check); 10] = [
        ("loss math exactness", c1_loss_math),
        ("gradient verification", c2_gradients),
        ("smooth L1", c3_smooth_l1),
        ("anchor invariants", c4_anchors),
        ("evaluator oracle equivalence", c5_oracle),
        ("metric monotonicity", c6_monotonicity),
        ("structure round-trip", c7_structure),
        ("export integrity", c8_exports),
        ("ingestion", c9_ingestion),
        ("size buckets", c10_buckets),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".to_string()));
        let took = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({took:.2}s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({took:.2}s): {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        checks.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
