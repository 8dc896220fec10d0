//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on domain or format errors, 2 on usage
//! errors. Every output file is written atomically, and JSON keys appear
//! in a fixed order with floats rounded to nine significant digits.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Serialize, Serializer};

use crate::annotations::{
    agreed_mitoses, parse_annotations, read_points, vertical_split, window_count, write_annotations, AnnotationSet,
    ValSide,
};
use crate::density::{self, render_gt_map, stitch_predictions, CircleSpec, OverlapMode, PatchGrid};
use crate::error::{Error, Result};
use crate::geometry::{self, hpf_window_pixels, HpfSpec};
use crate::maskgen::{self, valid_mask_report, MaskParams};
use crate::metrics::{self, binarize, f1_counts, match_detections, pearson_r};
use crate::proposal::{self, mc_distribution, propose_detailed, quartile_placement, Quartile};
use crate::raster::{self, read_fras, read_slide, sample_coord, write_fras, write_mask_pgm, write_pgm, SidecarMeta};
use crate::sampler::{sample_tuples, tuples_to_csv, SamplingMode};
use crate::synth::{corrupt_map, generate, Corruption, SynthSpec};
use crate::Point;

/// Stride (map pixels) of the window-count distribution used for the
/// quartile in `propose` output.
const PROPOSE_MC_STRIDE: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "hpf-roi", version, about = "Mitotic-count region proposal on whole-slide images")]
pub struct Cli {
    /// Worker threads (default: all hardware threads). Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic slide, annotations and ground-truth map from a JSON spec.
    Synth(SynthArgs),
    /// Render the filled-circle ground-truth map of agreed mitoses.
    GtMap(GtMapArgs),
    /// Compute the tissue-coverage valid mask of a slide.
    Mask(MaskArgs),
    /// Propose the counting region of maximal activity.
    Propose(ProposeArgs),
    /// Score predictions against annotations.
    Evaluate(EvaluateArgs),
    /// Emit three-group training patch tuples.
    SamplePatches(SampleArgs),
    /// Assemble per-patch predictions into one activity map.
    Stitch(StitchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct HpfArgs {
    /// Area of one high power field in mm².
    #[arg(long, default_value_t = geometry::HPF_AREA_MM2)]
    pub hpf_area: f64,
    /// Number of fields in the counting region.
    #[arg(long, default_value_t = geometry::HPF_FIELDS)]
    pub n_fields: u32,
    /// Width/height ratio of the counting region.
    #[arg(long, default_value_t = geometry::HPF_ASPECT)]
    pub aspect: f64,
}

impl HpfArgs {
    fn spec(&self) -> Result<HpfSpec> {
        let spec = HpfSpec {
            area_mm2: self.hpf_area,
            n_fields: self.n_fields,
            aspect_w_over_h: self.aspect,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args)]
pub struct MaskArgs_ {
    /// Downsample factor for the mask and activity map.
    #[arg(long, default_value_t = maskgen::DEFAULT_DOWNSAMPLE)]
    pub downsample: u32,
    /// Half-side of the square closing element, in downsampled pixels.
    #[arg(long, default_value_t = maskgen::DEFAULT_CLOSING_RADIUS)]
    pub closing_radius: u32,
    /// Minimum tissue fraction inside a valid window.
    #[arg(long, default_value_t = maskgen::DEFAULT_COVERAGE)]
    pub coverage: f64,
}

impl MaskArgs_ {
    fn params(&self) -> Result<MaskParams> {
        let p = MaskParams {
            downsample: self.downsample,
            closing_radius_px: self.closing_radius,
            coverage_threshold: self.coverage,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic slide description (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Circle radius for the ground-truth map, full-resolution pixels.
    #[arg(long, default_value_t = density::DEFAULT_CIRCLE_RADIUS_PX)]
    pub circle_radius: u32,
    /// Scale of the emitted maps.
    #[arg(long, default_value_t = 1)]
    pub scale: u32,
    /// Also emit a corrupted prediction map with this miss probability.
    #[arg(long)]
    pub pred_fn_rate: Option<f64>,
    /// Spurious circles per megapixel of tissue in the prediction map.
    #[arg(long, default_value_t = 0.0)]
    pub pred_fp_rate: f64,
    /// Box-blur radius of the prediction map, map pixels.
    #[arg(long, default_value_t = 0)]
    pub pred_blur: u32,
    /// Seed for the prediction corruption.
    #[arg(long, default_value_t = 0)]
    pub pred_seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GtMapArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value_t = density::DEFAULT_CIRCLE_RADIUS_PX)]
    pub circle_radius: u32,
    #[arg(long, default_value_t = 1)]
    pub scale: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Slide raster (PGM).
    #[arg(long)]
    pub slide: PathBuf,
    /// Scanner resolution in µm/px; overrides the slide's sidecar.
    #[arg(long)]
    pub resolution: Option<f64>,
    #[command(flatten)]
    pub hpf: HpfArgs,
    #[command(flatten)]
    pub mask: MaskArgs_,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProposeArgs {
    /// Slide raster (PGM).
    #[arg(long)]
    pub slide: PathBuf,
    /// Activity map (FRAS) at the downsample scale.
    #[arg(long)]
    pub activity: PathBuf,
    /// Annotation CSV; adds the ground-truth count and its quartile.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Scanner resolution in µm/px; overrides the slide's sidecar.
    #[arg(long)]
    pub resolution: Option<f64>,
    #[command(flatten)]
    pub hpf: HpfArgs,
    #[command(flatten)]
    pub mask: MaskArgs_,
    #[arg(long)]
    pub out: PathBuf,
    /// Write overlay.pgm with the proposal outlined.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub overlay: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Annotation CSV, one per slide.
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    /// Detected points (CSV `x,y`), one per slide.
    #[arg(long, conflicts_with = "pred_map")]
    pub pred_points: Vec<PathBuf>,
    /// Predicted activity map (FRAS), one per slide.
    #[arg(long)]
    pub pred_map: Vec<PathBuf>,
    /// proposal.json from `propose`, one per slide; enables count correlation.
    #[arg(long)]
    pub proposal: Vec<PathBuf>,
    /// Detection match radius, full-resolution pixels.
    #[arg(long, default_value_t = density::DEFAULT_CIRCLE_RADIUS_PX as f64)]
    pub radius: f64,
    /// Circle radius used to render ground truth and normalise map mass.
    #[arg(long, default_value_t = density::DEFAULT_CIRCLE_RADIUS_PX)]
    pub circle_radius: u32,
    /// Foreground threshold for predicted maps.
    #[arg(long, default_value_t = 0.5)]
    pub map_threshold: f32,
    /// Output directory; metrics go to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Subset {
    All,
    Train,
    Val,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Anchor,
    Rejection,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SideArg {
    Bottom,
    Top,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OverlapArg {
    PerSide,
    Total,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, default_value_t = density::DEFAULT_PATCH_SIZE)]
    pub patch_size: u32,
    /// Number of tuples.
    #[arg(long, default_value_t = 100)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ModeArg::Anchor)]
    pub mode: ModeArg,
    /// Region of the slide to sample from.
    #[arg(long, value_enum, default_value_t = Subset::All)]
    pub subset: Subset,
    /// Height fraction of the validation band.
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long, value_enum, default_value_t = SideArg::Bottom)]
    pub val_side: SideArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    /// Directory of `patch_<x>_<y>.fras` files.
    #[arg(long)]
    pub patch_dir: PathBuf,
    #[arg(long)]
    pub width: u32,
    #[arg(long)]
    pub height: u32,
    #[arg(long, default_value_t = density::DEFAULT_PATCH_SIZE)]
    pub patch_size: u32,
    #[arg(long, default_value_t = density::DEFAULT_PATCH_MARGIN)]
    pub margin: u32,
    #[arg(long, value_enum, default_value_t = OverlapArg::PerSide)]
    pub overlap_mode: OverlapArg,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n as usize);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(&cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::GtMap(a) => cmd_gt_map(a),
        Command::Mask(a) => cmd_mask(a),
        Command::Propose(a) => cmd_propose(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::SamplePatches(a) => cmd_sample(a),
        Command::Stitch(a) => cmd_stitch(a),
    }
}

// ---------------------------------------------------------------------------
// JSON helpers

fn round9(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

fn sig9<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round9(*v))
}

fn sig9_opt<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_some(&round9(*v)),
        None => s.serialize_none(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    raster::write_atomic(path, text.as_bytes())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

// ---------------------------------------------------------------------------
// synth

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let circle = CircleSpec::new(a.circle_radius)?;
    if a.scale == 0 {
        return Err(Error::domain("scale must be >= 1"));
    }
    let text = fs::read_to_string(&a.spec).map_err(|e| Error::io(&a.spec, e))?;
    let spec: SynthSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    let corruption = a
        .pred_fn_rate
        .map(|fn_rate| Corruption {
            fn_rate,
            fp_rate: a.pred_fp_rate,
            blur_radius: a.pred_blur,
            seed: a.pred_seed,
        });

    let (slide, set) = generate(&spec)?;
    let points = agreed_mitoses(&set);
    let gt = render_gt_map(&points, spec.width, spec.height, circle, a.scale)?.to_density();
    let pred = match &corruption {
        Some(c) => Some(corrupt_map(&points, &spec.tissue_mask(), circle, a.scale, c)?),
        None => None,
    };

    ensure_dir(&a.out)?;
    let slide_path = a.out.join("slide.pgm");
    write_pgm(&slide, &slide_path)?;
    raster::write_sidecar(
        &slide_path,
        &SidecarMeta {
            resolution_um_per_px: Some(spec.resolution_um_per_px),
            scale: Some(1),
            width_px: Some(spec.width),
            height_px: Some(spec.height),
        },
    )?;
    write_annotations(&set, &a.out.join("annotations.csv"))?;
    let map_meta = SidecarMeta {
        resolution_um_per_px: Some(spec.resolution_um_per_px * a.scale as f64),
        scale: Some(a.scale),
        ..Default::default()
    };
    let gt_path = a.out.join("gt_map.fras");
    write_fras(&gt, &gt_path)?;
    raster::write_sidecar(&gt_path, &map_meta)?;
    if let Some(pred) = pred {
        let pred_path = a.out.join("pred_map.fras");
        write_fras(&pred, &pred_path)?;
        raster::write_sidecar(&pred_path, &map_meta)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gt-map

fn cmd_gt_map(a: &GtMapArgs) -> Result<()> {
    let circle = CircleSpec::new(a.circle_radius)?;
    if a.scale == 0 {
        return Err(Error::domain("scale must be >= 1"));
    }
    let set = parse_annotations(&a.annotations)?;
    let map = render_gt_map(&agreed_mitoses(&set), set.width_px, set.height_px, circle, a.scale)?;
    ensure_dir(&a.out)?;
    let path = a.out.join("gt_map.fras");
    write_fras(&map.to_density(), &path)?;
    raster::write_sidecar(
        &path,
        &SidecarMeta {
            scale: Some(a.scale),
            ..Default::default()
        },
    )
}

// ---------------------------------------------------------------------------
// mask

#[derive(Serialize)]
struct MaskSummary {
    otsu_threshold: u8,
    #[serde(serialize_with = "sig9")]
    tissue_fraction: f64,
    valid_origins: u64,
    scale: u32,
    window_width_px: u32,
    window_height_px: u32,
    map_window_width_px: u32,
    map_window_height_px: u32,
}

fn cmd_mask(a: &MaskArgs) -> Result<()> {
    let spec = a.hpf.spec()?;
    let params = a.mask.params()?;
    let slide = read_slide(&a.slide, a.resolution)?;
    let window = hpf_window_pixels(&spec, slide.resolution_um_per_px())?;
    let report = valid_mask_report(&slide, window, &params)?;
    ensure_dir(&a.out)?;
    let mask_path = a.out.join("valid_mask.pgm");
    write_mask_pgm(&report.mask, &mask_path)?;
    raster::write_sidecar(
        &mask_path,
        &SidecarMeta {
            resolution_um_per_px: Some(slide.resolution_um_per_px() * params.downsample as f64),
            scale: Some(params.downsample),
            ..Default::default()
        },
    )?;
    write_json(
        &a.out.join("mask_summary.json"),
        &MaskSummary {
            otsu_threshold: report.otsu_threshold,
            tissue_fraction: report.tissue_fraction,
            valid_origins: report.valid_origins,
            scale: params.downsample,
            window_width_px: window.width_px,
            window_height_px: window.height_px,
            map_window_width_px: report.window.width_px,
            map_window_height_px: report.window.height_px,
        },
    )
}

// ---------------------------------------------------------------------------
// propose

/// `proposal.json`.
#[derive(Debug, Serialize, serde::Deserialize)]
pub struct ProposalRecord {
    pub origin_x: u32,
    pub origin_y: u32,
    pub width_px: u32,
    pub height_px: u32,
    #[serde(serialize_with = "sig9")]
    pub activity_score: f64,
    pub gt_mc: Option<u64>,
    pub quartile: Option<Quartile>,
}

fn cmd_propose(a: &ProposeArgs) -> Result<()> {
    let spec = a.hpf.spec()?;
    let params = a.mask.params()?;
    let slide = read_slide(&a.slide, a.resolution)?;
    let activity = read_fras(&a.activity)?;
    let annotations = a.annotations.as_deref().map(parse_annotations).transpose()?;
    let outcome = propose_detailed(&slide, &activity, &spec, &params, annotations.as_ref())?;
    let p = &outcome.proposal;
    let quartile = match (&annotations, p.gt_mc) {
        (Some(set), Some(mc)) => {
            let dist = mc_distribution(&agreed_mitoses(set), &outcome.valid.mask, p.window, PROPOSE_MC_STRIDE)?;
            Some(quartile_placement(mc, &dist.quartiles))
        }
        _ => None,
    };
    ensure_dir(&a.out)?;
    write_json(
        &a.out.join("proposal.json"),
        &ProposalRecord {
            origin_x: p.origin_x,
            origin_y: p.origin_y,
            width_px: p.window.width_px,
            height_px: p.window.height_px,
            activity_score: p.activity_score,
            gt_mc: p.gt_mc,
            quartile,
        },
    )?;
    if a.overlay {
        write_pgm(&proposal::overlay(&slide, p)?, &a.out.join("overlay.pgm"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Serialize)]
struct SlideMetrics {
    slide_id: String,
    gt_count: u64,
    pred_count: u64,
    true_positives: u64,
    false_positives: u64,
    false_negatives: u64,
    #[serde(serialize_with = "sig9")]
    f1: f64,
    #[serde(serialize_with = "sig9_opt")]
    mean_iou: Option<f64>,
    gt_mc: Option<u64>,
    #[serde(serialize_with = "sig9_opt")]
    estimated_mc: Option<f64>,
}

#[derive(Serialize)]
struct MetricsReport {
    #[serde(serialize_with = "sig9")]
    f1: f64,
    #[serde(serialize_with = "sig9_opt")]
    mean_iou: Option<f64>,
    #[serde(serialize_with = "sig9_opt")]
    pearson_r: Option<f64>,
    per_slide: Vec<SlideMetrics>,
}

/// Estimated count in a full-resolution window from a map: the mass of the
/// map pixels whose sample point falls inside, over one circle's mass.
fn map_window_estimate(map: &raster::DensityMap, slide_w: u32, slide_h: u32, origin: Point, w: u32, h: u32, circle: CircleSpec) -> f64 {
    let s = map.scale();
    let mut sum = 0.0f64;
    for y in 0..map.height() {
        let fy = sample_coord(y, s, slide_h);
        if fy < origin.1 || fy >= origin.1 + h {
            continue;
        }
        for x in 0..map.width() {
            let fx = sample_coord(x, s, slide_w);
            if fx >= origin.0 && fx < origin.0 + w {
                sum += map.get(x, y) as f64;
            }
        }
    }
    let circle_mass = circle.pixel_count() as f64 / (s as f64 * s as f64);
    sum / circle_mass
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let circle = CircleSpec::new(a.circle_radius)?;
    let n = a.gt.len();
    let check = |len: usize, what: &str| -> Result<()> {
        if len != 0 && len != n {
            return Err(Error::domain(format!("{len} {what} given for {n} ground-truth files")));
        }
        Ok(())
    };
    check(a.pred_points.len(), "--pred-points")?;
    check(a.pred_map.len(), "--pred-map")?;
    check(a.proposal.len(), "--proposal")?;
    if a.pred_points.is_empty() && a.pred_map.is_empty() {
        return Err(Error::domain("evaluate needs --pred-points or --pred-map"));
    }

    let mut per_slide = Vec::with_capacity(n);
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for i in 0..n {
        let set: AnnotationSet = parse_annotations(&a.gt[i])?;
        let gt = agreed_mitoses(&set);
        let pred_map = a.pred_map.get(i).map(|p| read_fras(p)).transpose()?;
        let pred: Vec<Point> = match (&pred_map, a.pred_points.get(i)) {
            (Some(m), _) => metrics::detections_from_map(m, a.map_threshold),
            (None, Some(p)) => read_points(p)?,
            (None, None) => unreachable!("checked above"),
        };
        let m = match_detections(&gt, &pred, a.radius)?;
        tp += m.true_positives;
        fp += m.false_positives;
        fn_ += m.false_negatives;

        let mean_iou = match &pred_map {
            Some(pm) => {
                let gt_mask = render_gt_map(&gt, set.width_px, set.height_px, circle, pm.scale())?;
                Some(metrics::mean_iou(&gt_mask, &binarize(pm, a.map_threshold))?)
            }
            None => None,
        };

        let (gt_mc, estimated_mc) = match a.proposal.get(i) {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let rec: ProposalRecord = serde_json::from_str(&text)?;
                let origin = (rec.origin_x, rec.origin_y);
                let window = geometry::WindowSize::new(rec.width_px, rec.height_px)?;
                let est = match &pred_map {
                    Some(pm) => map_window_estimate(pm, set.width_px, set.height_px, origin, rec.width_px, rec.height_px, circle),
                    None => window_count(&pred, origin, window) as f64,
                };
                (Some(window_count(&gt, origin, window)), Some(est))
            }
            None => (None, None),
        };

        per_slide.push(SlideMetrics {
            slide_id: set.slide_id.clone(),
            gt_count: gt.len() as u64,
            pred_count: pred.len() as u64,
            true_positives: m.true_positives,
            false_positives: m.false_positives,
            false_negatives: m.false_negatives,
            f1: metrics::f1(&m),
            mean_iou,
            gt_mc,
            estimated_mc,
        });
    }

    let mean_iou = if a.pred_map.is_empty() {
        None
    } else {
        Some(per_slide.iter().filter_map(|s| s.mean_iou).sum::<f64>() / n as f64)
    };
    let pearson = if a.proposal.len() >= 2 {
        let est: Vec<f64> = per_slide.iter().filter_map(|s| s.estimated_mc).collect();
        let gt: Vec<f64> = per_slide.iter().filter_map(|s| s.gt_mc.map(|v| v as f64)).collect();
        match pearson_r(&est, &gt) {
            Ok(r) => Some(r),
            Err(Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let report = MetricsReport {
        f1: f1_counts(tp, fp, fn_),
        mean_iou,
        pearson_r: pearson,
        per_slide,
    };
    match &a.out {
        Some(dir) => {
            ensure_dir(dir)?;
            write_json(&dir.join("metrics.json"), &report)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// sample-patches

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let set = parse_annotations(&a.annotations)?;
    let side = match a.val_side {
        SideArg::Bottom => ValSide::Bottom,
        SideArg::Top => ValSide::Top,
    };
    let region = match a.subset {
        Subset::All => set,
        Subset::Train => vertical_split(&set, a.val_fraction, side)?.0,
        Subset::Val => vertical_split(&set, a.val_fraction, side)?.1,
    };
    let mode = match a.mode {
        ModeArg::Anchor => SamplingMode::Anchor,
        ModeArg::Rejection => SamplingMode::Rejection,
    };
    let tuples = sample_tuples(&region, a.patch_size, a.count, a.seed, mode)?;
    ensure_dir(&a.out)?;
    raster::write_atomic(&a.out.join("patches.csv"), tuples_to_csv(&tuples).as_bytes())
}

// ---------------------------------------------------------------------------
// stitch

pub fn patch_file_name(origin: Point) -> String {
    format!("patch_{}_{}.fras", origin.0, origin.1)
}

fn cmd_stitch(a: &StitchArgs) -> Result<()> {
    let mode = match a.overlap_mode {
        OverlapArg::PerSide => OverlapMode::PerSide,
        OverlapArg::Total => OverlapMode::Total,
    };
    let grid = PatchGrid::new(a.width, a.height, a.patch_size, a.margin, mode)?;
    let patches = grid
        .origins()
        .into_iter()
        .map(|o| read_fras(&a.patch_dir.join(patch_file_name(o))))
        .collect::<Result<Vec<_>>>()?;
    let map = stitch_predictions(&grid, &patches)?;
    ensure_dir(&a.out)?;
    let path = a.out.join("activity.fras");
    write_fras(&map, &path)?;
    raster::write_sidecar(
        &path,
        &SidecarMeta {
            scale: Some(map.scale()),
            ..Default::default()
        },
    )
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round9_keeps_nine_digits() {
        assert_eq!(round9(0.123456789123), 0.123456789);
        assert_eq!(round9(1234567891234.0), 1234567890000.0);
        assert_eq!(round9(0.0), 0.0);
        assert_eq!(round9(-2.5), -2.5);
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["hpf-roi", "propose"]), 2);
        assert_eq!(run(["hpf-roi", "no-such-command"]), 2);
        assert_eq!(run(["hpf-roi", "--threads", "0", "mask", "--slide", "x", "--out", "y"]), 2);
    }

    #[test]
    fn domain_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("o");
        let code = run([
            "hpf-roi".as_ref(),
            "mask".as_ref(),
            "--slide".as_ref(),
            dir.path().join("missing.pgm").as_os_str(),
            "--resolution".as_ref(),
            "0.25".as_ref(),
            "--out".as_ref(),
            out.as_os_str(),
        ]);
        assert_eq!(code, 1);
    }

    #[test]
    fn help_lists_standard_defaults() {
        use clap::CommandFactory;
        let mut cmd = Cli::command();
        let help = cmd
            .find_subcommand_mut("propose")
            .unwrap()
            .render_long_help()
            .to_string();
        for needle in ["0.237", "[default: 10]", "1.3333", "[default: 0.95]", "[default: 32]"] {
            assert!(help.contains(needle), "missing {needle} in\n{help}");
        }
        let help = Cli::command()
            .find_subcommand_mut("sample-patches")
            .unwrap()
            .render_long_help()
            .to_string();
        assert!(help.contains("[default: 0.2]") && help.contains("[default: 512]"));
        let help = Cli::command()
            .find_subcommand_mut("stitch")
            .unwrap()
            .render_long_help()
            .to_string();
        assert!(help.contains("[default: 64]") && help.contains("[default: per-side]"));
    }
}
