//! C ABI over `tsr-core`.
//!
//! Every fallible call returns a [`TsrStatus`]; on failure the message is
//! available from [`tsr_last_error_message`] on the same thread. Strings
//! returned through out-pointers belong to the caller and are released with
//! [`tsr_string_free`]. Handles are released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tsr_core::eval::{self, EvalParams};
use tsr_core::geometry::{self, BBox};
use tsr_core::ingest::{self, AnnotatedImage, DetectionRecord, VocOptions};
use tsr_core::loss::{self, BatchClassStats, HardnessParams};
use tsr_core::structure::{self, StructureConfig, StructureError, TableGrid};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    NoStructure = 4,
    OutOfRange = 5,
    Internal = 6,
}

/// Corner-form box.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsrBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsrCell {
    pub row: usize,
    pub col: usize,
    pub rowspan: usize,
    pub colspan: usize,
    pub bbox: TsrBox,
}

/// Mirrors the structure settings; one score cutoff per category code.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsrStructureConfig {
    pub score_threshold: [f64; 4],
    pub nms_iou: f64,
    pub span_overlap_tau: f64,
    pub require_table_box: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsrFormat {
    Html = 0,
    Csv = 1,
    Json = 2,
}

/// Opaque inferred table.
pub struct TsrGrid {
    grid: TableGrid,
}

/// Opaque evaluation session: ground truth and detections accumulate until
/// [`tsr_evaluator_run`].
pub struct TsrEvaluator {
    gt: Vec<AnnotatedImage>,
    preds: Vec<DetectionRecord>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: TsrStatus, msg: impl Into<String>) -> TsrStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> TsrStatus) -> TsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == TsrStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            status
        }
        Err(_) => fail(TsrStatus::Internal, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, TsrStatus> {
    if p.is_null() {
        return Err(fail(TsrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TsrStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn to_bbox(b: &TsrBox) -> Result<BBox, TsrStatus> {
    BBox::new(b.x_min, b.y_min, b.x_max, b.y_max)
        .map_err(|e| fail(TsrStatus::InvalidArgument, e.to_string()))
}

fn from_bbox(b: &BBox) -> TsrBox {
    TsrBox {
        x_min: b.x_min(),
        y_min: b.y_min(),
        x_max: b.x_max(),
        y_max: b.y_max(),
    }
}

fn give_string(s: String, out: *mut *mut c_char) -> TsrStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            TsrStatus::Ok
        }
        Err(_) => fail(TsrStatus::Internal, "output contains a NUL byte"),
    }
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(TsrStatus::NullPointer, concat!(stringify!($p), " is null"));
        })+
    };
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tsr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn tsr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tsr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Intersection over union of two boxes.
///
/// # Safety
/// Pointers must be valid for reads (`a`, `b`) and writes (`out`).
#[no_mangle]
pub unsafe extern "C" fn tsr_iou(a: *const TsrBox, b: *const TsrBox, out: *mut f64) -> TsrStatus {
    guard(|| {
        non_null!(a, b, out);
        let a = try_status!(to_bbox(&*a));
        let b = try_status!(to_bbox(&*b));
        *out = geometry::iou(&a, &b);
        TsrStatus::Ok
    })
}

/// Smooth L1 with transition point `beta`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsr_smooth_l1(x: f64, beta: f64, out: *mut f64) -> TsrStatus {
    guard(|| {
        non_null!(out);
        match loss::smooth_l1(x, beta) {
            Ok(v) => {
                *out = v;
                TsrStatus::Ok
            }
            Err(e) => fail(TsrStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Per-category weights from batch counts and mean sizes (height + width).
/// Categories with count 0 get weight 0. `alpha` may be null for all zeros.
///
/// # Safety
/// `counts`, `mean_sizes`, `out_weights` and a non-null `alpha` must each
/// point to `n` elements.
#[no_mangle]
pub unsafe extern "C" fn tsr_class_weights(
    counts: *const usize,
    mean_sizes: *const f64,
    n: usize,
    lambda: f64,
    alpha: *const f64,
    out_weights: *mut f64,
) -> TsrStatus {
    guard(|| {
        non_null!(counts, mean_sizes, out_weights);
        let counts = std::slice::from_raw_parts(counts, n).to_vec();
        let sizes = std::slice::from_raw_parts(mean_sizes, n).to_vec();
        let alpha = if alpha.is_null() {
            Vec::new()
        } else {
            std::slice::from_raw_parts(alpha, n).to_vec()
        };
        let params = try_status!(HardnessParams::new(lambda, alpha, loss::DEFAULT_BETA)
            .map_err(|e| fail(TsrStatus::InvalidArgument, e.to_string())));
        let stats = try_status!(BatchClassStats::new(counts, sizes)
            .map_err(|e| fail(TsrStatus::InvalidArgument, e.to_string())));
        let (_, w) = try_status!(loss::batch_weights(&stats, &params)
            .map_err(|e| fail(TsrStatus::InvalidArgument, e.to_string())));
        std::slice::from_raw_parts_mut(out_weights, n).copy_from_slice(w.as_slice());
        TsrStatus::Ok
    })
}

/// Default structure settings.
#[no_mangle]
pub extern "C" fn tsr_structure_config_default() -> TsrStructureConfig {
    let d = StructureConfig::default();
    TsrStructureConfig {
        score_threshold: d.score_threshold,
        nms_iou: d.nms_iou,
        span_overlap_tau: d.span_overlap_tau,
        require_table_box: d.require_table_box,
    }
}

/// Infers a table from a detections JSON document.
///
/// `image_id` may be null when the document holds one image; `config` may be
/// null for defaults. On success `*out` owns a new grid.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn tsr_grid_infer(
    detections_json: *const c_char,
    image_id: *const c_char,
    config: *const TsrStructureConfig,
    out: *mut *mut TsrGrid,
) -> TsrStatus {
    guard(|| {
        non_null!(out);
        *out = ptr::null_mut();
        let text = try_status!(read_str(detections_json, "detections_json"));
        let records =
            try_status!(ingest::parse_detections(text)
                .map_err(|e| fail(TsrStatus::ParseError, e.to_string())));
        let id = if image_id.is_null() {
            None
        } else {
            Some(try_status!(read_str(image_id, "image_id")))
        };
        let scene: Vec<DetectionRecord> = match id {
            Some(id) => records.into_iter().filter(|r| r.image_id == id).collect(),
            None => {
                if records.windows(2).any(|w| w[0].image_id != w[1].image_id) {
                    return fail(
                        TsrStatus::InvalidArgument,
                        "several images in the document; pass image_id",
                    );
                }
                records
            }
        };
        let cfg = if config.is_null() {
            StructureConfig::default()
        } else {
            let c = &*config;
            StructureConfig {
                score_threshold: c.score_threshold,
                nms_iou: c.nms_iou,
                span_overlap_tau: c.span_overlap_tau,
                require_table_box: c.require_table_box,
            }
        };
        match structure::infer_table(&scene, &cfg) {
            Ok((grid, _)) => {
                *out = Box::into_raw(Box::new(TsrGrid { grid }));
                TsrStatus::Ok
            }
            Err(e @ (StructureError::NoStructure { .. } | StructureError::NoTable)) => {
                fail(TsrStatus::NoStructure, e.to_string())
            }
            Err(e @ StructureError::BadConfig(_)) => {
                fail(TsrStatus::InvalidArgument, e.to_string())
            }
            Err(e) => fail(TsrStatus::Internal, e.to_string()),
        }
    })
}

/// # Safety
/// `grid` must come from [`tsr_grid_infer`] and not have been freed. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn tsr_grid_free(grid: *mut TsrGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Row, column and cell counts. Any out-pointer may be null.
///
/// # Safety
/// `grid` must be a live handle; non-null out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_grid_dims(
    grid: *const TsrGrid,
    n_rows: *mut usize,
    n_cols: *mut usize,
    n_cells: *mut usize,
) -> TsrStatus {
    guard(|| {
        non_null!(grid);
        let g = &(*grid).grid;
        for (p, v) in [
            (n_rows, g.n_rows),
            (n_cols, g.n_cols),
            (n_cells, g.cells.len()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        TsrStatus::Ok
    })
}

/// Cell `index` in row-major order of top-left positions.
///
/// # Safety
/// `grid` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_grid_cell(
    grid: *const TsrGrid,
    index: usize,
    out: *mut TsrCell,
) -> TsrStatus {
    guard(|| {
        non_null!(grid, out);
        let cells = &(*grid).grid.cells;
        match cells.get(index) {
            Some(c) => {
                *out = TsrCell {
                    row: c.row,
                    col: c.col,
                    rowspan: c.rowspan,
                    colspan: c.colspan,
                    bbox: from_bbox(&c.bbox),
                };
                TsrStatus::Ok
            }
            None => fail(
                TsrStatus::OutOfRange,
                format!("cell {index} of {}", cells.len()),
            ),
        }
    })
}

/// Serializes the grid; free the result with [`tsr_string_free`].
///
/// # Safety
/// `grid` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_grid_export(
    grid: *const TsrGrid,
    format: TsrFormat,
    out: *mut *mut c_char,
) -> TsrStatus {
    guard(|| {
        non_null!(grid, out);
        *out = ptr::null_mut();
        let g = &(*grid).grid;
        let text = match format {
            TsrFormat::Html => structure::export_html(g),
            TsrFormat::Csv => try_status!(
                structure::export_csv(g).map_err(|e| fail(TsrStatus::Internal, e.to_string()))
            ),
            TsrFormat::Json => structure::export_json(g),
        };
        give_string(text, out)
    })
}

/// A new, empty evaluation session.
#[no_mangle]
pub extern "C" fn tsr_evaluator_new() -> *mut TsrEvaluator {
    Box::into_raw(Box::new(TsrEvaluator {
        gt: Vec::new(),
        preds: Vec::new(),
    }))
}

/// # Safety
/// `ev` must come from [`tsr_evaluator_new`] and not have been freed. Null
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn tsr_evaluator_free(ev: *mut TsrEvaluator) {
    if !ev.is_null() {
        drop(Box::from_raw(ev));
    }
}

/// Adds one image of ground truth from a VOC XML document.
///
/// # Safety
/// `ev` must be a live handle; `voc_xml` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tsr_evaluator_add_ground_truth(
    ev: *mut TsrEvaluator,
    voc_xml: *const c_char,
) -> TsrStatus {
    guard(|| {
        non_null!(ev);
        let text = try_status!(read_str(voc_xml, "voc_xml"));
        let doc = try_status!(ingest::parse_voc_xml(text, VocOptions::default())
            .map_err(|e| fail(TsrStatus::ParseError, e.to_string())));
        (*ev).gt.push(doc.image);
        TsrStatus::Ok
    })
}

/// Appends every record of a detections JSON document.
///
/// # Safety
/// `ev` must be a live handle; `detections_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tsr_evaluator_add_detections(
    ev: *mut TsrEvaluator,
    detections_json: *const c_char,
) -> TsrStatus {
    guard(|| {
        non_null!(ev);
        let text = try_status!(read_str(detections_json, "detections_json"));
        let records =
            try_status!(ingest::parse_detections(text)
                .map_err(|e| fail(TsrStatus::ParseError, e.to_string())));
        (*ev).preds.extend(records);
        TsrStatus::Ok
    })
}

/// Evaluates everything added so far and writes the report JSON to `*out`.
/// `max_detections` 0 keeps every detection.
///
/// # Safety
/// `ev` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_evaluator_run(
    ev: *const TsrEvaluator,
    max_detections: usize,
    out: *mut *mut c_char,
) -> TsrStatus {
    guard(|| {
        non_null!(ev, out);
        *out = ptr::null_mut();
        let ev = &*ev;
        let params = EvalParams {
            max_detections: (max_detections > 0).then_some(max_detections),
        };
        match eval::evaluate(&ev.gt, &ev.preds, params) {
            Ok(report) => give_string(report.to_json(), out),
            Err(e) => fail(TsrStatus::InvalidArgument, e.to_string()),
        }
    })
}
