//! Annotation and detection ingestion, plus dataset statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{box_size, BBox, GeometryError};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed XML: {0}")]
    Xml(#[from] roxmltree::Error),
    #[error("{element}: {message}")]
    Voc { element: String, message: String },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("detection record {index}: {message}")]
    Detection { index: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<IngestError>,
    },
}

fn voc_err(element: impl Into<String>, message: impl Into<String>) -> IngestError {
    IngestError::Voc {
        element: element.into(),
        message: message.into(),
    }
}

/// The four object classes, with fixed numeric codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum Category {
    Table = 0,
    TableColumn = 1,
    TableRow = 2,
    TableSpanningCell = 3,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Table,
        Category::TableColumn,
        Category::TableRow,
        Category::TableSpanningCell,
    ];
    pub const COUNT: usize = 4;

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: i64) -> Option<Category> {
        match code {
            0 => Some(Category::Table),
            1 => Some(Category::TableColumn),
            2 => Some(Category::TableRow),
            3 => Some(Category::TableSpanningCell),
            _ => None,
        }
    }

    /// Label used in VOC annotations.
    pub fn name(self) -> &'static str {
        match self {
            Category::Table => "table",
            Category::TableColumn => "table column",
            Category::TableRow => "table row",
            Category::TableSpanningCell => "table spanning cell",
        }
    }

    pub fn from_name(name: &str) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.name() == name)
    }

    pub fn abbreviation(self) -> &'static str {
        match self {
            Category::Table => "T",
            Category::TableColumn => "TC",
            Category::TableRow => "TR",
            Category::TableSpanningCell => "TSC",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedObject {
    pub category: Category,
    pub bbox: BBox,
}

/// Ground truth for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub width: f64,
    pub height: f64,
    pub objects: Vec<AnnotatedObject>,
}

/// One scored prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub image_id: String,
    pub category: Category,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocOptions {
    /// Reject unknown object names instead of skipping them.
    pub strict: bool,
    /// Clamp boxes into the image frame.
    pub clamp: bool,
}

impl Default for VocOptions {
    fn default() -> Self {
        Self {
            strict: false,
            clamp: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocDocument {
    pub image: AnnotatedImage,
    /// Objects skipped for an unknown name (lenient mode only).
    pub skipped: usize,
}

const IMAGE_EXTENSIONS: [&str; 6] = [".jpg", ".jpeg", ".png", ".tif", ".tiff", ".bmp"];

fn strip_image_extension(name: &str) -> &str {
    let lower = name.to_ascii_lowercase();
    for ext in IMAGE_EXTENSIONS {
        if lower.ends_with(ext) {
            return &name[..name.len() - ext.len()];
        }
    }
    name
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|n| n.has_tag_name(name))
}

fn number(node: roxmltree::Node, name: &str, path: &str) -> Result<f64, IngestError> {
    let element = format!("{path}/{name}");
    let n = child(node, name).ok_or_else(|| voc_err(&element, "missing"))?;
    let text = n.text().unwrap_or("").trim();
    let v: f64 = text
        .parse()
        .map_err(|_| voc_err(&element, format!("not a number: {text:?}")))?;
    if !v.is_finite() {
        return Err(voc_err(&element, format!("not finite: {text:?}")));
    }
    Ok(v)
}

/// Parses a VOC-style annotation.
///
/// The image id is the `filename` element with any image extension removed,
/// or empty when the element is absent.
pub fn parse_voc_xml(document: &str, opts: VocOptions) -> Result<VocDocument, IngestError> {
    let doc = roxmltree::Document::parse(document)?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(voc_err(
            root.tag_name().name(),
            "root element must be <annotation>",
        ));
    }
    let image_id = child(root, "filename")
        .and_then(|n| n.text())
        .map(|t| strip_image_extension(t.trim()).to_string())
        .unwrap_or_default();
    let size = child(root, "size").ok_or_else(|| voc_err("annotation/size", "missing"))?;
    let width = number(size, "width", "annotation/size")?;
    let height = number(size, "height", "annotation/size")?;
    if width < 0.0 || height < 0.0 {
        return Err(voc_err("annotation/size", "negative image size"));
    }

    let mut objects = Vec::new();
    let mut skipped = 0;
    for (i, obj) in root
        .children()
        .filter(|n| n.has_tag_name("object"))
        .enumerate()
    {
        let path = format!("object[{i}]");
        let name = child(obj, "name")
            .and_then(|n| n.text())
            .map(str::trim)
            .ok_or_else(|| voc_err(format!("{path}/name"), "missing"))?;
        let category = match Category::from_name(name) {
            Some(c) => c,
            None if opts.strict => {
                return Err(voc_err(
                    format!("{path}/name"),
                    format!("unknown category {name:?}"),
                ))
            }
            None => {
                skipped += 1;
                continue;
            }
        };
        let bb_path = format!("{path}/bndbox");
        let bb = child(obj, "bndbox").ok_or_else(|| voc_err(&bb_path, "missing"))?;
        let x_min = number(bb, "xmin", &bb_path)?;
        let y_min = number(bb, "ymin", &bb_path)?;
        let x_max = number(bb, "xmax", &bb_path)?;
        let y_max = number(bb, "ymax", &bb_path)?;
        let mut bbox = BBox::new(x_min, y_min, x_max, y_max).map_err(|e| match e {
            GeometryError::InvertedX { .. } => voc_err(&bb_path, "inverted box (xmax < xmin)"),
            GeometryError::InvertedY { .. } => voc_err(&bb_path, "inverted box (ymax < ymin)"),
            other => voc_err(&bb_path, other.to_string()),
        })?;
        if opts.clamp {
            bbox = bbox.clamp_to(width, height);
        }
        objects.push(AnnotatedObject { category, bbox });
    }
    Ok(VocDocument {
        image: AnnotatedImage {
            image_id,
            width,
            height,
            objects,
        },
        skipped,
    })
}

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Writes a VOC annotation that [`parse_voc_xml`] reads back unchanged.
pub fn to_voc_xml(image: &AnnotatedImage) -> String {
    let mut s = String::new();
    s.push_str("<annotation>\n");
    let _ = writeln!(
        s,
        "  <filename>{}.jpg</filename>",
        escape_xml(&image.image_id)
    );
    let _ = writeln!(
        s,
        "  <size>\n    <width>{:?}</width>\n    <height>{:?}</height>\n    <depth>3</depth>\n  </size>",
        image.width, image.height
    );
    for o in &image.objects {
        let b = &o.bbox;
        let _ = writeln!(
            s,
            "  <object>\n    <name>{}</name>\n    <bndbox>\n      <xmin>{:?}</xmin>\n      <ymin>{:?}</ymin>\n      <xmax>{:?}</xmax>\n      <ymax>{:?}</ymax>\n    </bndbox>\n  </object>",
            o.category.name(),
            b.x_min(),
            b.y_min(),
            b.x_max(),
            b.y_max()
        );
    }
    s.push_str("</annotation>\n");
    s
}

/// Reads one VOC file; an empty `filename` falls back to the file stem.
pub fn read_voc_file(path: &Path, opts: VocOptions) -> Result<VocDocument, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut doc = parse_voc_xml(&text, opts).map_err(|e| IngestError::File {
        path: path.to_path_buf(),
        source: Box::new(e),
    })?;
    if doc.image.image_id.is_empty() {
        doc.image.image_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
    }
    Ok(doc)
}

/// All `*.xml` files directly inside `dir`, sorted by name.
pub fn list_voc_files(dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let io = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("xml"))
            && path.is_file()
        {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ImageIdField {
    Text(String),
    Number(i64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetection {
    image_id: ImageIdField,
    category_id: i64,
    bbox: [f64; 4],
    score: f64,
}

#[derive(Serialize)]
struct DetectionOut<'a> {
    image_id: &'a str,
    category_id: u8,
    bbox: [f64; 4],
    score: f64,
}

/// Parses a COCO-results style array of `{image_id, category_id, bbox: [x, y, w, h], score}`.
/// Integer image ids are accepted and converted to strings.
pub fn parse_detections(document: &str) -> Result<Vec<DetectionRecord>, IngestError> {
    let values: Vec<serde_json::Value> = serde_json::from_str(document)?;
    values
        .into_iter()
        .enumerate()
        .map(|(index, v)| {
            let err = |message: String| IngestError::Detection { index, message };
            let raw: RawDetection = serde_json::from_value(v).map_err(|e| err(e.to_string()))?;
            let category = Category::from_code(raw.category_id)
                .ok_or_else(|| err(format!("unknown category_id {}", raw.category_id)))?;
            if !(0.0..=1.0).contains(&raw.score) {
                return Err(err(format!("score {} outside [0, 1]", raw.score)));
            }
            let [x, y, w, h] = raw.bbox;
            if w < 0.0 || h < 0.0 {
                return Err(err(format!("negative width/height ({w}, {h})")));
            }
            let bbox = BBox::from_xywh(x, y, w, h).map_err(|e| err(e.to_string()))?;
            let image_id = match raw.image_id {
                ImageIdField::Text(s) => s,
                ImageIdField::Number(n) => n.to_string(),
            };
            Ok(DetectionRecord {
                image_id,
                category,
                bbox,
                score: raw.score,
            })
        })
        .collect()
}

/// Serializes detections in the format read by [`parse_detections`].
pub fn detections_to_json(records: &[DetectionRecord]) -> String {
    let out: Vec<DetectionOut> = records
        .iter()
        .map(|r| DetectionOut {
            image_id: &r.image_id,
            category_id: r.category.code(),
            bbox: r.bbox.to_xywh(),
            score: r.score,
        })
        .collect();
    serde_json::to_string_pretty(&out).expect("plain struct serializes")
}

/// Default size-histogram bucket lower edges; the last bucket is open.
pub const DEFAULT_HISTOGRAM_EDGES: [f64; 10] = [
    0.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0, 2048.0, 4096.0,
];

// Sizes are accumulated as integers in units of 2^-32 px so that sums merge
// exactly regardless of order or sharding.
const FIXED_SCALE: f64 = 4294967296.0;

#[derive(Debug, Clone, PartialEq, Eq)]
struct CategoryAccumulator {
    count: u64,
    size_sum: i128,
    histogram: Vec<u64>,
}

/// Streaming accumulator for [`DatasetStats`]. `merge` is associative and
/// commutative, bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsAccumulator {
    images: u64,
    edges: Vec<f64>,
    categories: Vec<CategoryAccumulator>,
}

impl Default for StatsAccumulator {
    fn default() -> Self {
        Self::with_edges(DEFAULT_HISTOGRAM_EDGES.to_vec())
    }
}

impl StatsAccumulator {
    /// `edges` must start at 0 and be strictly increasing.
    pub fn with_edges(edges: Vec<f64>) -> Self {
        assert!(
            edges.first() == Some(&0.0) && edges.windows(2).all(|w| w[0] < w[1]),
            "histogram edges must start at 0 and increase"
        );
        let categories = (0..Category::COUNT)
            .map(|_| CategoryAccumulator {
                count: 0,
                size_sum: 0,
                histogram: vec![0; edges.len()],
            })
            .collect();
        Self {
            images: 0,
            edges,
            categories,
        }
    }

    pub fn push(&mut self, image: &AnnotatedImage) {
        self.images += 1;
        for o in &image.objects {
            let size = box_size(&o.bbox);
            let acc = &mut self.categories[o.category.index()];
            acc.count += 1;
            acc.size_sum += (size * FIXED_SCALE).round() as i128;
            let bucket = self.edges.partition_point(|&e| e <= size).saturating_sub(1);
            acc.histogram[bucket] += 1;
        }
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        assert_eq!(self.edges, other.edges, "histogram edges differ");
        self.images += other.images;
        for (a, b) in self.categories.iter_mut().zip(&other.categories) {
            a.count += b.count;
            a.size_sum += b.size_sum;
            for (x, y) in a.histogram.iter_mut().zip(&b.histogram) {
                *x += y;
            }
        }
    }

    pub fn finish(&self) -> DatasetStats {
        let categories = Category::ALL
            .iter()
            .zip(&self.categories)
            .map(|(&c, acc)| {
                let mean_size =
                    (acc.count > 0).then(|| acc.size_sum as f64 / FIXED_SCALE / acc.count as f64);
                (
                    c,
                    CategoryStats {
                        count: acc.count,
                        mean_size,
                        histogram: Histogram {
                            bucket_edges: self.edges.clone(),
                            counts: acc.histogram.clone(),
                        },
                    },
                )
            })
            .collect();
        DatasetStats {
            images: self.images,
            categories,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Lower edge of each bucket; the last bucket is unbounded above.
    pub bucket_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub count: u64,
    /// Mean of height + width; `None` when the count is zero.
    pub mean_size: Option<f64>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub images: u64,
    pub categories: BTreeMap<Category, CategoryStats>,
}

impl DatasetStats {
    /// `{category key: {count, mean_size, histogram}}` in category-code order,
    /// keyed like the evaluation report (`table_column`, ...).
    pub fn to_json(&self) -> String {
        let mut out = String::from("{");
        for (i, (c, st)) in self.categories.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(
                out,
                "\n  {}: {}",
                serde_json::to_string(c).expect("unit variant"),
                serde_json::to_string(st).expect("plain struct")
            );
        }
        out.push_str("\n}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let categories: BTreeMap<Category, CategoryStats> = serde_json::from_str(text)?;
        Ok(Self {
            images: 0,
            categories,
        })
    }

    pub fn to_text_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<21} {:>10} {:>10}", "category", "count", "mean_size");
        for (c, st) in &self.categories {
            let mean = st
                .mean_size
                .map_or_else(|| "-".to_string(), |m| format!("{m:.2}"));
            let _ = writeln!(s, "{:<21} {:>10} {:>10}", c.name(), st.count, mean);
        }
        let _ = writeln!(s, "{:<21} {:>10}", "images", self.images);
        s
    }
}

/// Single-pass statistics over an image stream.
pub fn dataset_stats<'a, I>(images: I) -> DatasetStats
where
    I: IntoIterator<Item = &'a AnnotatedImage>,
{
    let mut acc = StatsAccumulator::default();
    for image in images {
        acc.push(image);
    }
    acc.finish()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DirStats {
    pub stats: StatsAccumulator,
    pub files: u64,
    pub skipped_objects: u64,
}

/// Streams every `*.xml` file in `dir` through a [`StatsAccumulator`].
///
/// Files are processed in chunks of `chunk` on the current rayon pool, so
/// memory stays bounded by the chunk size rather than the directory size.
/// The result is independent of the pool size.
pub fn stats_for_dir(dir: &Path, opts: VocOptions, chunk: usize) -> Result<DirStats, IngestError> {
    let io = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut total = StatsAccumulator::default();
    let mut files = 0u64;
    let mut skipped = 0u64;
    let mut entries = fs::read_dir(dir).map_err(io)?;
    let chunk = chunk.max(1);
    loop {
        let mut batch = Vec::with_capacity(chunk);
        for entry in entries.by_ref() {
            let path = entry.map_err(io)?.path();
            if path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("xml"))
                && path.is_file()
            {
                batch.push(path);
                if batch.len() == chunk {
                    break;
                }
            }
        }
        if batch.is_empty() {
            break;
        }
        let partial = batch
            .par_iter()
            .map(|p| read_voc_file(p, opts))
            .try_fold(
                || (StatsAccumulator::default(), 0u64),
                |(mut acc, sk), doc| {
                    let doc = doc?;
                    acc.push(&doc.image);
                    Ok::<_, IngestError>((acc, sk + doc.skipped as u64))
                },
            )
            .try_reduce(
                || (StatsAccumulator::default(), 0u64),
                |(mut a, sa), (b, sb)| {
                    a.merge(&b);
                    Ok((a, sa + sb))
                },
            )?;
        files += batch.len() as u64;
        skipped += partial.1;
        total.merge(&partial.0);
    }
    Ok(DirStats {
        stats: total,
        files,
        skipped_objects: skipped,
    })
}
