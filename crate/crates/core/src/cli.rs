//! The `tsr` command line.
//!
//! Precedence for every tunable: built-in default, then the config file
//! (`--config` or `TSR_CONFIG`), then explicit flags.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchors::{self, AnchorConfig, AnchorMode, Level};
use crate::eval::{self, EvalParams};
use crate::geometry::BBox;
use crate::ingest::{self, Category, DetectionRecord, VocOptions};
use crate::loss::{self, BatchClassStats, HardnessParams};
use crate::structure::{self, SpanBlock, StructureConfig, SynthSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

pub const CONFIG_ENV: &str = "TSR_CONFIG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn data(err: impl std::fmt::Display) -> CliError {
    CliError::Data(err.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "tsr", version, about = "Table structure recognition toolkit")]
pub struct Cli {
    /// Write machine output here instead of stdout.
    #[arg(short, long, global = true)]
    pub output: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Defaults file (TOML, flat keys).
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Worker threads for `stats` and `eval`.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Write the human-readable table as the main output.
    #[arg(long, global = true)]
    pub text: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Category counts and size histograms of a VOC annotation directory.
    Stats(StatsArgs),
    /// Anchor listing, or size-prioritized proposal sampling.
    Anchors(AnchorArgs),
    /// Hardness, class weights, losses and gradients for one batch.
    Loss(LossArgs),
    /// COCO-style AP of detections against VOC ground truth.
    Eval(EvalArgs),
    /// Table grid from detections, exported as HTML, CSV or JSON.
    Infer(InferArgs),
    /// Perfect detections and ground-truth grid for a synthetic table.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    pub dir: PathBuf,
    /// Fail on unknown object names instead of skipping them.
    #[arg(long)]
    pub strict: bool,
    /// Files read per parallel batch.
    #[arg(long, default_value_t = 1024)]
    pub chunk: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Typical,
    Structure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Column,
    Row,
    Both,
}

#[derive(Debug, Args)]
pub struct AnchorArgs {
    #[arg(long, value_enum, default_value = "structure")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 800.0)]
    pub width: f64,
    #[arg(long, default_value_t = 800.0)]
    pub height: f64,
    /// Comma-separated `stride:extent` pairs, finest first.
    #[arg(long)]
    pub levels: Option<String>,
    /// Comma-separated aspect ratios.
    #[arg(long)]
    pub ratios: Option<String>,
    #[arg(long)]
    pub no_clip: bool,
    /// Structure mode only.
    #[arg(long, value_enum, default_value = "both")]
    pub role: RoleArg,
    /// Draw this many proposals from `--proposals` instead of listing anchors.
    #[arg(long, requires = "proposals")]
    pub sample: Option<usize>,
    /// Detections JSON used as the proposal pool.
    #[arg(long)]
    pub proposals: Option<PathBuf>,
    /// Small-object priority exponent.
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    pub batch: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Comma-separated per-category offsets.
    #[arg(long)]
    pub alpha: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub gt_dir: PathBuf,
    pub predictions: PathBuf,
    /// Keep at most this many detections per image and category.
    #[arg(long)]
    pub max_dets: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Html,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    pub predictions: PathBuf,
    /// Required when the file holds several images.
    #[arg(long)]
    pub image_id: Option<String>,
    #[arg(long, value_enum, default_value = "html")]
    pub format: FormatArg,
    /// Same cutoff for every category.
    #[arg(long)]
    pub score_threshold: Option<f64>,
    #[arg(long)]
    pub nms_iou: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub require_table_box: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// `row,col,rowspan,colspan`; repeatable.
    #[arg(long = "span")]
    pub spans: Vec<String>,
    /// `x_min,y_min,x_max,y_max`; defaults to 120 px per column and 40 px per row.
    #[arg(long)]
    pub frame: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    #[arg(long, default_value = "synth")]
    pub image_id: String,
    /// Also write the ground-truth grid JSON here.
    #[arg(long)]
    pub grid_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum Thresholds {
    All(f64),
    PerCategory([f64; Category::COUNT]),
}

/// Defaults file contents. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub score_threshold: Option<Thresholds>,
    pub nms_iou: Option<f64>,
    pub span_overlap_tau: Option<f64>,
    pub require_table_box: Option<bool>,
    pub lambda: Option<f64>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub max_detections: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

pub const DEFAULT_GAMMA: f64 = 1.0;

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("--{what}: {s:?} is not a number")))
        })
        .collect()
}

fn parse_levels(text: &str) -> Result<Vec<Level>, CliError> {
    text.split(',')
        .map(|pair| {
            let (s, e) = pair
                .split_once(':')
                .ok_or_else(|| usage(format!("--levels: {pair:?} is not stride:extent")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| usage(format!("--levels: {v:?} is not a number")))
            };
            Ok(Level {
                stride: num(s)?,
                base_extent: num(e)?,
            })
        })
        .collect()
}

fn parse_span(text: &str) -> Result<SpanBlock, CliError> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| usage(format!("--span: {text:?} is not row,col,rowspan,colspan")))?;
    match parts[..] {
        [row, col, rowspan, colspan] => Ok(SpanBlock {
            row,
            col,
            rowspan,
            colspan,
        }),
        _ => Err(usage(format!(
            "--span: {text:?} is not row,col,rowspan,colspan"
        ))),
    }
}

fn parse_frame(text: &str) -> Result<BBox, CliError> {
    let v = parse_list(text, "frame")?;
    if v.len() != 4 {
        return Err(usage("--frame needs four numbers"));
    }
    BBox::new(v[0], v[1], v[2], v[3]).map_err(|e| usage(format!("--frame: {e}")))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))
}

fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>, CliError> {
    ingest::parse_detections(&read_text(path)?)
        .map_err(|e| data(format!("{}: {e}", path.display())))
}

/// Resolved invocation context.
struct Ctx {
    cli_output: Option<PathBuf>,
    text: bool,
    verbose: u8,
    seed: u64,
    file: FileConfig,
}

impl Ctx {
    fn warn(&self, msg: &str) {
        eprintln!("warning: {msg}");
    }

    fn info(&self, msg: &str) {
        if self.verbose > 0 {
            eprintln!("{msg}");
        }
    }

    fn emit(&self, content: &str) -> Result<(), CliError> {
        match &self.cli_output {
            Some(path) => {
                fs::write(path, content).map_err(|e| data(format!("{}: {e}", path.display())))
            }
            None => {
                let mut out = std::io::stdout().lock();
                match out.write_all(content.as_bytes()).and_then(|_| out.flush()) {
                    Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(data(e)),
                    _ => Ok(()),
                }
            }
        }
    }

    /// JSON as the main output and the table on stderr, or the table alone
    /// with `--text`.
    fn emit_report(&self, json: &str, table: &str) -> Result<(), CliError> {
        if self.text {
            self.emit(table)
        } else {
            eprint!("{table}");
            self.emit(json)
        }
    }

    fn structure_config(&self, args: &InferArgs) -> Result<StructureConfig, CliError> {
        let mut cfg = StructureConfig::default();
        match self.file.score_threshold {
            Some(Thresholds::All(t)) => cfg.score_threshold = [t; Category::COUNT],
            Some(Thresholds::PerCategory(t)) => cfg.score_threshold = t,
            None => {}
        }
        if let Some(v) = self.file.nms_iou {
            cfg.nms_iou = v;
        }
        if let Some(v) = self.file.span_overlap_tau {
            cfg.span_overlap_tau = v;
        }
        if let Some(v) = self.file.require_table_box {
            cfg.require_table_box = v;
        }
        if let Some(t) = args.score_threshold {
            cfg.score_threshold = [t; Category::COUNT];
        }
        if let Some(v) = args.nms_iou {
            cfg.nms_iou = v;
        }
        if let Some(v) = args.tau {
            cfg.span_overlap_tau = v;
        }
        if args.require_table_box {
            cfg.require_table_box = true;
        }
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let jobs = cli.jobs.or(file.jobs);
    let ctx = Ctx {
        cli_output: cli.output,
        text: cli.text,
        verbose: cli.verbose,
        seed: cli.seed.or(file.seed).unwrap_or(0),
        file,
    };
    match jobs {
        Some(0) => Err(usage("--jobs must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(data)?;
            pool.install(|| dispatch(&ctx, cli.command))
        }
        None => dispatch(&ctx, cli.command),
    }
}

fn dispatch(ctx: &Ctx, command: Command) -> Result<(), CliError> {
    match command {
        Command::Stats(a) => cmd_stats(ctx, a),
        Command::Anchors(a) => cmd_anchors(ctx, a),
        Command::Loss(a) => cmd_loss(ctx, a),
        Command::Eval(a) => cmd_eval(ctx, a),
        Command::Infer(a) => cmd_infer(ctx, a),
        Command::Synth(a) => cmd_synth(ctx, a),
    }
}

fn cmd_stats(ctx: &Ctx, args: StatsArgs) -> Result<(), CliError> {
    if args.chunk == 0 {
        return Err(usage("--chunk must be at least 1"));
    }
    let opts = VocOptions {
        strict: args.strict,
        ..VocOptions::default()
    };
    let res = ingest::stats_for_dir(&args.dir, opts, args.chunk).map_err(data)?;
    if res.files == 0 {
        ctx.warn(&format!("no annotation files in {}", args.dir.display()));
    }
    if res.skipped_objects > 0 {
        ctx.warn(&format!(
            "{} object(s) with unknown names skipped",
            res.skipped_objects
        ));
    }
    ctx.info(&format!("{} file(s) read", res.files));
    let stats = res.stats.finish();
    ctx.emit_report(&stats.to_json(), &stats.to_text_table())
}

#[derive(Serialize)]
struct SampledProposal {
    bbox: BBox,
    score: f64,
}

fn cmd_anchors(ctx: &Ctx, args: AnchorArgs) -> Result<(), CliError> {
    let gamma = args.gamma.or(ctx.file.gamma).unwrap_or(DEFAULT_GAMMA);
    if let Some(k) = args.sample {
        let path = args
            .proposals
            .as_deref()
            .expect("clap enforces --proposals");
        let records = read_detections(path)?;
        let pool: Vec<(BBox, f64)> = records.iter().map(|r| (r.bbox, r.score)).collect();
        let drawn =
            anchors::sample_proposals_size_prioritized(&pool, k, gamma, ctx.seed).map_err(|e| {
                match e {
                    anchors::AnchorError::BadGamma(_) => usage(e.to_string()),
                    _ => data(e),
                }
            })?;
        let out: Vec<SampledProposal> = drawn
            .into_iter()
            .map(|(bbox, score)| SampledProposal { bbox, score })
            .collect();
        let mut json = serde_json::to_string_pretty(&out).map_err(data)?;
        json.push('\n');
        return ctx.emit(&json);
    }

    let mode = match args.mode {
        ModeArg::Typical => AnchorMode::Typical,
        ModeArg::Structure => AnchorMode::StructureAware,
    };
    let mut cfg = AnchorConfig::new(mode, args.width, args.height);
    if let Some(levels) = &args.levels {
        cfg.levels = parse_levels(levels)?;
    }
    if let Some(ratios) = &args.ratios {
        cfg.aspect_ratios = parse_list(ratios, "ratios")?;
    }
    cfg.clip_to_image = !args.no_clip;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let set = match (mode, args.role) {
        (AnchorMode::Typical, RoleArg::Both) => anchors::generate_typical_anchors(&cfg),
        (AnchorMode::Typical, _) => return Err(usage("--role applies to structure mode only")),
        (AnchorMode::StructureAware, RoleArg::Both) => anchors::generate_structure_anchors(&cfg),
        (AnchorMode::StructureAware, RoleArg::Column) => anchors::generate_column_anchors(&cfg),
        (AnchorMode::StructureAware, RoleArg::Row) => anchors::generate_row_anchors(&cfg),
    }
    .map_err(data)?;
    ctx.info(&format!("{} anchor(s)", set.len()));
    ctx.emit(&set.to_json_lines())
}

/// One batch for `tsr loss`.
///
/// Category statistics come either from `counts` + `mean_sizes` or from
/// `boxes`; `residuals` and `logits` + `labels` are optional.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossBatch {
    pub num_categories: Option<usize>,
    pub counts: Option<Vec<usize>>,
    pub mean_sizes: Option<Vec<f64>>,
    pub boxes: Option<Vec<BatchBox>>,
    pub residuals: Option<Vec<Vec<f64>>>,
    pub logits: Option<Vec<Vec<f64>>>,
    pub labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchBox {
    pub category: usize,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub hardness: Vec<Option<f64>>,
    pub weights: Vec<f64>,
    pub regression_loss: Option<f64>,
    pub regression_gradient: Option<Vec<Vec<f64>>>,
    pub cross_entropy: Option<f64>,
    pub cross_entropy_gradient: Option<Vec<Vec<f64>>>,
}

pub fn loss_report(batch: &LossBatch, params: &HardnessParams) -> Result<LossReport, CliError> {
    let stats = match (&batch.counts, &batch.mean_sizes, &batch.boxes) {
        (Some(c), Some(m), None) => BatchClassStats::new(c.clone(), m.clone()).map_err(data)?,
        (None, None, Some(boxes)) => {
            let n = batch
                .num_categories
                .or_else(|| boxes.iter().map(|b| b.category + 1).max())
                .ok_or_else(|| data("batch has no boxes and no num_categories"))?;
            BatchClassStats::from_boxes(n, boxes.iter().map(|b| (b.category, b.width, b.height)))
                .map_err(data)?
        }
        _ => return Err(data("batch needs either counts + mean_sizes or boxes")),
    };
    let (hardness, weights) = loss::batch_weights(&stats, params).map_err(data)?;
    let (regression_loss, regression_gradient) = match &batch.residuals {
        Some(r) => (
            Some(loss::cost_sensitive_l1(r, &weights, params.beta).map_err(data)?),
            Some(loss::cost_sensitive_l1_gradient(r, &weights, params.beta).map_err(data)?),
        ),
        None => (None, None),
    };
    let (cross_entropy, cross_entropy_gradient) = match (&batch.logits, &batch.labels) {
        (Some(z), Some(y)) => (
            Some(loss::weighted_cross_entropy(z, y, &weights).map_err(data)?),
            Some(loss::weighted_cross_entropy_gradient(z, y, &weights).map_err(data)?),
        ),
        (None, None) => (None, None),
        _ => return Err(data("logits and labels must be given together")),
    };
    Ok(LossReport {
        hardness: hardness.0,
        weights: weights.as_slice().to_vec(),
        regression_loss,
        regression_gradient,
        cross_entropy,
        cross_entropy_gradient,
    })
}

fn cmd_loss(ctx: &Ctx, args: LossArgs) -> Result<(), CliError> {
    let lambda = args
        .lambda
        .or(ctx.file.lambda)
        .unwrap_or(loss::DEFAULT_LAMBDA);
    let beta = args.beta.or(ctx.file.beta).unwrap_or(loss::DEFAULT_BETA);
    let alpha = match &args.alpha {
        Some(a) => parse_list(a, "alpha")?,
        None => ctx.file.alpha.clone().unwrap_or_default(),
    };
    let params = HardnessParams::new(lambda, alpha, beta).map_err(|e| usage(e.to_string()))?;
    let text = read_text(&args.batch)?;
    let batch: LossBatch =
        serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", args.batch.display())))?;
    let report = loss_report(&batch, &params)?;
    let mut json = serde_json::to_string_pretty(&report).map_err(data)?;
    json.push('\n');
    ctx.emit(&json)
}

fn cmd_eval(ctx: &Ctx, args: EvalArgs) -> Result<(), CliError> {
    let max_detections = args.max_dets.or(ctx.file.max_detections);
    if max_detections == Some(0) {
        return Err(usage("--max-dets must be at least 1"));
    }
    let opts = VocOptions::default();
    let files = ingest::list_voc_files(&args.gt_dir).map_err(data)?;
    let docs: Vec<_> = {
        use rayon::prelude::*;
        files
            .par_iter()
            .map(|p| ingest::read_voc_file(p, opts))
            .collect::<Result<Vec<_>, _>>()
            .map_err(data)?
    };
    if docs.is_empty() {
        ctx.warn(&format!("no annotation files in {}", args.gt_dir.display()));
    }
    let gt: Vec<_> = docs.into_iter().map(|d| d.image).collect();
    let preds = read_detections(&args.predictions)?;
    ctx.info(&format!(
        "{} image(s), {} detection(s)",
        gt.len(),
        preds.len()
    ));
    let report = eval::evaluate(&gt, &preds, EvalParams { max_detections }).map_err(data)?;
    ctx.emit_report(&report.to_json(), &report.to_text_table())
}

fn cmd_infer(ctx: &Ctx, args: InferArgs) -> Result<(), CliError> {
    let cfg = ctx.structure_config(&args)?;
    let records = read_detections(&args.predictions)?;
    let image_id = match &args.image_id {
        Some(id) => id.clone(),
        None => {
            let mut ids: Vec<&str> = records.iter().map(|r| r.image_id.as_str()).collect();
            ids.sort_unstable();
            ids.dedup();
            match ids[..] {
                [only] => only.to_string(),
                [] => return Err(data("no structure: the detection file is empty")),
                _ => {
                    return Err(usage(format!(
                        "{} images in the detection file; pick one with --image-id",
                        ids.len()
                    )))
                }
            }
        }
    };
    let scene: Vec<DetectionRecord> = records
        .into_iter()
        .filter(|r| r.image_id == image_id)
        .collect();
    if scene.is_empty() {
        return Err(data(format!("no detections for image {image_id:?}")));
    }
    let (grid, report) = structure::infer_table(&scene, &cfg).map_err(data)?;
    if report.dropped_no_overlap > 0 {
        ctx.warn(&format!(
            "{} spanning cell(s) covered no cell and were dropped",
            report.dropped_no_overlap
        ));
    }
    if report.dropped_conflict > 0 {
        ctx.warn(&format!(
            "{} spanning cell(s) conflicted with a stronger span and were dropped",
            report.dropped_conflict
        ));
    }
    if report.rectangularized > 0 {
        ctx.warn(&format!(
            "{} spanning cell(s) snapped to a rectangular block",
            report.rectangularized
        ));
    }
    ctx.info(&format!(
        "{}x{} grid, {} cell(s), {} span(s) applied",
        grid.n_rows,
        grid.n_cols,
        grid.cells.len(),
        report.applied
    ));
    let out = match args.format {
        FormatArg::Html => structure::export_html(&grid),
        FormatArg::Csv => structure::export_csv(&grid).map_err(data)?,
        FormatArg::Json => structure::export_json(&grid),
    };
    ctx.emit(&out)
}

fn cmd_synth(ctx: &Ctx, args: SynthArgs) -> Result<(), CliError> {
    let spans = args
        .spans
        .iter()
        .map(|s| parse_span(s))
        .collect::<Result<Vec<_>, _>>()?;
    let frame = match &args.frame {
        Some(f) => parse_frame(f)?,
        None => BBox::new(0.0, 0.0, 120.0 * args.cols as f64, 40.0 * args.rows as f64)
            .map_err(|e| usage(e.to_string()))?,
    };
    let spec = SynthSpec {
        image_id: args.image_id,
        n_rows: args.rows,
        n_cols: args.cols,
        spans,
        frame,
        jitter: args.jitter,
        seed: ctx.seed,
    };
    let (records, grid) = structure::synth_table(&spec).map_err(|e| usage(e.to_string()))?;
    if let Some(path) = &args.grid_out {
        fs::write(path, structure::export_json(&grid))
            .map_err(|e| data(format!("{}: {e}", path.display())))?;
    }
    ctx.emit(&ingest::detections_to_json(&records))
}
