//! From detections to a logical table grid.
//!
//! Rows give the vertical extents and columns the horizontal extents of the
//! lattice; cell `(r, c)` is the product of row `r`'s y-range and column
//! `c`'s x-range. Spanning-cell detections then merge blocks of unit cells.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{intersect, intersection_area, iou, BBox};
use crate::ingest::{Category, DetectionRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StructureError {
    #[error("no structure: {rows} row(s) and {cols} column(s) survived filtering")]
    NoStructure { rows: usize, cols: usize },
    #[error("no table detection survived filtering")]
    NoTable,
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("grid is not an exact cover: {0}")]
    NotExactCover(String),
    #[error("invalid synthetic table: {0}")]
    BadSynth(String),
    #[error("malformed grid JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StructureConfig {
    /// Minimum score per category code.
    pub score_threshold: [f64; Category::COUNT],
    pub nms_iou: f64,
    /// Fraction of a unit cell a spanning cell must cover to claim it.
    pub span_overlap_tau: f64,
    /// Clip rows and columns to the best table detection, which must exist.
    pub require_table_box: bool,
}

impl Default for StructureConfig {
    fn default() -> Self {
        Self {
            score_threshold: [0.5; Category::COUNT],
            nms_iou: 0.5,
            span_overlap_tau: 0.5,
            require_table_box: false,
        }
    }
}

impl StructureConfig {
    pub fn validate(&self) -> Result<(), StructureError> {
        let bad = |what: &str, v: f64| StructureError::BadConfig(format!("{what} = {v}"));
        for &t in &self.score_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(bad("score_threshold", t));
            }
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(bad("nms_iou", self.nms_iou));
        }
        if !(self.span_overlap_tau > 0.0 && self.span_overlap_tau <= 1.0) {
            return Err(bad("span_overlap_tau", self.span_overlap_tau));
        }
        Ok(())
    }

    fn passes(&self, r: &DetectionRecord) -> bool {
        r.score >= self.score_threshold[r.category.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub row: usize,
    pub col: usize,
    pub rowspan: usize,
    pub colspan: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    pub n_rows: usize,
    pub n_cols: usize,
    /// `(y_min, y_max)` per row, top to bottom.
    pub row_extents: Vec<(f64, f64)>,
    /// `(x_min, x_max)` per column, left to right.
    pub col_extents: Vec<(f64, f64)>,
    /// Row-major by top-left position.
    pub cells: Vec<GridCell>,
}

impl TableGrid {
    /// A grid of unit cells over the given extents.
    pub fn from_extents(row_extents: Vec<(f64, f64)>, col_extents: Vec<(f64, f64)>) -> Self {
        let mut cells = Vec::with_capacity(row_extents.len() * col_extents.len());
        for (r, &(y0, y1)) in row_extents.iter().enumerate() {
            for (c, &(x0, x1)) in col_extents.iter().enumerate() {
                cells.push(GridCell {
                    row: r,
                    col: c,
                    rowspan: 1,
                    colspan: 1,
                    bbox: BBox::new(x0, y0, x1, y1).expect("extents are ordered"),
                });
            }
        }
        Self {
            n_rows: row_extents.len(),
            n_cols: col_extents.len(),
            row_extents,
            col_extents,
            cells,
        }
    }

    /// Pixel box of the block `rows × cols` from the extents.
    pub fn block_bbox(&self, row: usize, col: usize, rowspan: usize, colspan: usize) -> BBox {
        let ys = &self.row_extents[row..row + rowspan];
        let xs = &self.col_extents[col..col + colspan];
        let y0 = ys.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
        let y1 = ys.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        let x0 = xs.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
        let x1 = xs.iter().map(|e| e.1).fold(f64::NEG_INFINITY, f64::max);
        BBox::new(x0, y0, x1, y1).expect("extents are ordered")
    }

    /// Index of the covering cell for every lattice position.
    pub fn occupancy(&self) -> Result<Vec<Vec<usize>>, StructureError> {
        let mut occ = vec![vec![usize::MAX; self.n_cols]; self.n_rows];
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.rowspan == 0
                || cell.colspan == 0
                || cell.row + cell.rowspan > self.n_rows
                || cell.col + cell.colspan > self.n_cols
            {
                return Err(StructureError::NotExactCover(format!(
                    "cell {i} at ({}, {}) span {}x{} leaves the {}x{} lattice",
                    cell.row, cell.col, cell.rowspan, cell.colspan, self.n_rows, self.n_cols
                )));
            }
            for row in occ.iter_mut().skip(cell.row).take(cell.rowspan) {
                for slot in row.iter_mut().skip(cell.col).take(cell.colspan) {
                    if *slot != usize::MAX {
                        return Err(StructureError::NotExactCover(format!(
                            "cells {} and {i} overlap",
                            *slot
                        )));
                    }
                    *slot = i;
                }
            }
        }
        for (r, row) in occ.iter().enumerate() {
            if let Some(c) = row.iter().position(|&s| s == usize::MAX) {
                return Err(StructureError::NotExactCover(format!(
                    "position ({r}, {c}) is uncovered"
                )));
            }
        }
        Ok(occ)
    }

    pub fn check_exact_cover(&self) -> Result<(), StructureError> {
        self.occupancy().map(|_| ())
    }

    /// `(row, col, rowspan, colspan)` per cell; the logical structure
    /// without pixel geometry.
    pub fn layout(&self) -> Vec<(usize, usize, usize, usize)> {
        self.cells
            .iter()
            .map(|c| (c.row, c.col, c.rowspan, c.colspan))
            .collect()
    }

    fn sort_cells(&mut self) {
        self.cells.sort_by_key(|c| (c.row, c.col));
    }
}

fn by_score_desc(records: &[DetectionRecord]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..records.len()).collect();
    idx.sort_by(|&a, &b| {
        records[b]
            .score
            .total_cmp(&records[a].score)
            .then(a.cmp(&b))
    });
    idx
}

/// Greedy per-category non-maximum suppression. Kept records are returned
/// in descending score order, ties by input order.
pub fn nms(records: &[DetectionRecord], iou_threshold: f64) -> Vec<DetectionRecord> {
    let mut kept: Vec<&DetectionRecord> = Vec::new();
    for i in by_score_desc(records) {
        let r = &records[i];
        let suppressed = kept
            .iter()
            .any(|k| k.category == r.category && iou(&k.bbox, &r.bbox) >= iou_threshold);
        if !suppressed {
            kept.push(r);
        }
    }
    kept.into_iter().cloned().collect()
}

fn filter_and_suppress(records: &[DetectionRecord], cfg: &StructureConfig) -> Vec<DetectionRecord> {
    let passing: Vec<DetectionRecord> = records.iter().filter(|r| cfg.passes(r)).cloned().collect();
    nms(&passing, cfg.nms_iou)
}

/// Unit-cell grid from row and column detections.
pub fn infer_grid(
    records: &[DetectionRecord],
    cfg: &StructureConfig,
) -> Result<TableGrid, StructureError> {
    cfg.validate()?;
    let kept = filter_and_suppress(records, cfg);
    let table = kept.iter().find(|r| r.category == Category::Table);
    let frame = match (cfg.require_table_box, table) {
        (true, None) => return Err(StructureError::NoTable),
        (true, Some(t)) => Some(t.bbox),
        (false, _) => None,
    };
    let boxes = |category: Category| -> Vec<BBox> {
        kept.iter()
            .filter(|r| r.category == category)
            .filter_map(|r| match frame {
                Some(f) => intersect(&r.bbox, &f),
                None => Some(r.bbox),
            })
            .collect()
    };
    let mut rows = boxes(Category::TableRow);
    let mut cols = boxes(Category::TableColumn);
    if rows.is_empty() || cols.is_empty() {
        return Err(StructureError::NoStructure {
            rows: rows.len(),
            cols: cols.len(),
        });
    }
    rows.sort_by(|a, b| a.center().1.total_cmp(&b.center().1));
    cols.sort_by(|a, b| a.center().0.total_cmp(&b.center().0));
    Ok(TableGrid::from_extents(
        rows.iter().map(|b| (b.y_min(), b.y_max())).collect(),
        cols.iter().map(|b| (b.x_min(), b.x_max())).collect(),
    ))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanReport {
    pub applied: usize,
    /// Spans that covered no unit cell at the overlap threshold.
    pub dropped_no_overlap: usize,
    /// Spans that touched a block claimed by a higher-scoring span.
    pub dropped_conflict: usize,
    /// Applied spans whose coverage was not rectangular and was snapped to
    /// the enclosing block.
    pub rectangularized: usize,
}

/// Merges unit cells under spanning-cell detections, highest score first.
///
/// Only `TableSpanningCell` records are considered. The input grid must be
/// made of unit cells.
pub fn apply_spanning(
    grid: &TableGrid,
    spans: &[DetectionRecord],
    cfg: &StructureConfig,
) -> Result<(TableGrid, SpanReport), StructureError> {
    cfg.validate()?;
    if grid.cells.iter().any(|c| c.rowspan != 1 || c.colspan != 1) {
        return Err(StructureError::NotExactCover(
            "spanning must start from unit cells".into(),
        ));
    }
    grid.check_exact_cover()?;
    let mut out = grid.clone();
    let mut claimed = vec![vec![false; grid.n_cols]; grid.n_rows];
    let mut report = SpanReport::default();
    for i in by_score_desc(spans) {
        let span = &spans[i];
        if span.category != Category::TableSpanningCell {
            continue;
        }
        let mut covered = Vec::new();
        for (r, &(y0, y1)) in grid.row_extents.iter().enumerate() {
            for (c, &(x0, x1)) in grid.col_extents.iter().enumerate() {
                let cell = BBox::new(x0, y0, x1, y1).expect("extents are ordered");
                let area = cell.area();
                if area > 0.0 && intersection_area(&cell, &span.bbox) / area >= cfg.span_overlap_tau
                {
                    covered.push((r, c));
                }
            }
        }
        if covered.is_empty() {
            report.dropped_no_overlap += 1;
            continue;
        }
        let r0 = covered.iter().map(|p| p.0).min().unwrap();
        let r1 = covered.iter().map(|p| p.0).max().unwrap();
        let c0 = covered.iter().map(|p| p.1).min().unwrap();
        let c1 = covered.iter().map(|p| p.1).max().unwrap();
        let conflict = claimed[r0..=r1]
            .iter()
            .any(|row| row[c0..=c1].iter().any(|&x| x));
        if conflict {
            report.dropped_conflict += 1;
            continue;
        }
        if covered.len() != (r1 - r0 + 1) * (c1 - c0 + 1) {
            report.rectangularized += 1;
        }
        for row in &mut claimed[r0..=r1] {
            row[c0..=c1].iter_mut().for_each(|x| *x = true);
        }
        let (rowspan, colspan) = (r1 - r0 + 1, c1 - c0 + 1);
        out.cells
            .retain(|c| !(c.row >= r0 && c.row <= r1 && c.col >= c0 && c.col <= c1));
        out.cells.push(GridCell {
            row: r0,
            col: c0,
            rowspan,
            colspan,
            bbox: grid.block_bbox(r0, c0, rowspan, colspan),
        });
        out.sort_cells();
        report.applied += 1;
        out.check_exact_cover()?;
    }
    Ok((out, report))
}

/// Whole pipeline: threshold, NMS, grid inference, span merging.
pub fn infer_table(
    records: &[DetectionRecord],
    cfg: &StructureConfig,
) -> Result<(TableGrid, SpanReport), StructureError> {
    let grid = infer_grid(records, cfg)?;
    let kept = filter_and_suppress(records, cfg);
    let spans: Vec<DetectionRecord> = kept
        .into_iter()
        .filter(|r| r.category == Category::TableSpanningCell)
        .collect();
    apply_spanning(&grid, &spans, cfg)
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// A standalone HTML document with one `<table>`. Cell text is the cell's
/// pixel box; positions covered by a span emit no element.
pub fn export_html(grid: &TableGrid) -> String {
    let mut s = String::from(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>table</title>\n</head>\n<body>\n<table>\n",
    );
    let mut cells = grid.cells.iter().peekable();
    for r in 0..grid.n_rows {
        s.push_str("<tr>");
        while let Some(cell) = cells.next_if(|c| c.row == r) {
            s.push_str("<td");
            if cell.rowspan > 1 {
                let _ = write!(s, " rowspan=\"{}\"", cell.rowspan);
            }
            if cell.colspan > 1 {
                let _ = write!(s, " colspan=\"{}\"", cell.colspan);
            }
            let _ = write!(s, ">{}</td>", escape_html(&cell.bbox.to_string()));
        }
        s.push_str("</tr>\n");
    }
    s.push_str("</table>\n</body>\n</html>\n");
    s
}

/// `n_rows` records of `n_cols` fields; a merged cell's value fills its block.
pub fn export_csv(grid: &TableGrid) -> Result<String, StructureError> {
    let occ = grid.occupancy()?;
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for row in &occ {
        w.write_record(row.iter().map(|&i| grid.cells[i].bbox.to_string()))
            .expect("writing to memory");
    }
    let bytes = w.into_inner().expect("writing to memory");
    Ok(String::from_utf8(bytes).expect("ascii output"))
}

pub fn export_json(grid: &TableGrid) -> String {
    let mut s = serde_json::to_string_pretty(grid).expect("plain struct serializes");
    s.push('\n');
    s
}

pub fn grid_from_json(text: &str) -> Result<TableGrid, StructureError> {
    serde_json::from_str(text).map_err(|e| StructureError::Json(e.to_string()))
}

/// A rectangular block of lattice positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanBlock {
    pub row: usize,
    pub col: usize,
    pub rowspan: usize,
    pub colspan: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub image_id: String,
    pub n_rows: usize,
    pub n_cols: usize,
    pub spans: Vec<SpanBlock>,
    pub frame: BBox,
    /// Maximum absolute perturbation of each emitted box edge, in pixels.
    pub jitter: f64,
    pub seed: u64,
}

fn split(rng: &mut ChaCha8Rng, lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let weights: Vec<f64> = (0..n).map(|_| 1.0 + rng.random::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    let mut edges = vec![lo];
    let mut acc = 0.0;
    for w in &weights[..n - 1] {
        acc += w;
        edges.push(lo + ((hi - lo) * acc / total).round());
    }
    edges.push(hi);
    edges.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Perfect detections for a table with the given lattice and spans, plus the
/// grid they should produce. Boxes are emitted with score 1.0 in the order
/// table, rows, columns, spans; with `jitter > 0` every edge moves by up to
/// `jitter` pixels.
pub fn synth_table(spec: &SynthSpec) -> Result<(Vec<DetectionRecord>, TableGrid), StructureError> {
    let bad = |m: String| StructureError::BadSynth(m);
    if spec.n_rows == 0 || spec.n_cols == 0 {
        return Err(bad("at least one row and one column are required".into()));
    }
    if !(spec.jitter.is_finite() && spec.jitter >= 0.0) {
        return Err(bad(format!("jitter {} must be >= 0", spec.jitter)));
    }
    let mut claimed = vec![vec![false; spec.n_cols]; spec.n_rows];
    for (i, s) in spec.spans.iter().enumerate() {
        if s.rowspan == 0
            || s.colspan == 0
            || s.row + s.rowspan > spec.n_rows
            || s.col + s.colspan > spec.n_cols
        {
            return Err(bad(format!("span {i} leaves the lattice")));
        }
        for row in &mut claimed[s.row..s.row + s.rowspan] {
            for x in &mut row[s.col..s.col + s.colspan] {
                if *x {
                    return Err(bad(format!("span {i} overlaps an earlier span")));
                }
                *x = true;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let f = spec.frame;
    let rows = split(&mut rng, f.y_min(), f.y_max(), spec.n_rows);
    let cols = split(&mut rng, f.x_min(), f.x_max(), spec.n_cols);
    if rows.iter().chain(&cols).any(|&(a, b)| b <= a) {
        return Err(bad("frame too small for the requested lattice".into()));
    }

    let mut grid = TableGrid::from_extents(rows.clone(), cols.clone());
    for s in &spec.spans {
        grid.cells.retain(|c| {
            !(c.row >= s.row
                && c.row < s.row + s.rowspan
                && c.col >= s.col
                && c.col < s.col + s.colspan)
        });
        let bbox = grid.block_bbox(s.row, s.col, s.rowspan, s.colspan);
        grid.cells.push(GridCell {
            row: s.row,
            col: s.col,
            rowspan: s.rowspan,
            colspan: s.colspan,
            bbox,
        });
    }
    grid.sort_cells();

    let mut jitter = |b: BBox| -> BBox {
        if spec.jitter == 0.0 {
            return b;
        }
        let mut d = || rng.random_range(-spec.jitter..=spec.jitter);
        let (x0, x1) = (b.x_min() + d(), b.x_max() + d());
        let (y0, y1) = (b.y_min() + d(), b.y_max() + d());
        BBox::new(x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)).expect("finite")
    };
    let record = |category, bbox| DetectionRecord {
        image_id: spec.image_id.clone(),
        category,
        bbox,
        score: 1.0,
    };
    let mut records = vec![record(Category::Table, jitter(f))];
    for &(y0, y1) in &rows {
        let b = BBox::new(f.x_min(), y0, f.x_max(), y1).expect("ordered");
        records.push(record(Category::TableRow, jitter(b)));
    }
    for &(x0, x1) in &cols {
        let b = BBox::new(x0, f.y_min(), x1, f.y_max()).expect("ordered");
        records.push(record(Category::TableColumn, jitter(b)));
    }
    for s in &spec.spans {
        let b = grid.block_bbox(s.row, s.col, s.rowspan, s.colspan);
        records.push(record(Category::TableSpanningCell, jitter(b)));
    }
    Ok((records, grid))
}
