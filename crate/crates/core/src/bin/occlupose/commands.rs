use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::Serialize;

use occlupose::augment::{
    appearance_augment, augment_transform, geometric_augment, occlude_frame, occlusion_record, sample_params, AugParams,
};
use occlupose::camera::{back_project, crop_camera, BoundingBox, CameraIntrinsics, CropIntrinsics, CropTransform};
use occlupose::config::RunConfig;
use occlupose::gradcheck::{run_gradcheck, GradcheckOptions};
use occlupose::heatmap::tensor_file::read_batch;
use occlupose::heatmap::CoordinateGrid;
use occlupose::io::{read_jsonl, read_poses, write_json_pretty, write_jsonl, BoxRecord, PoseRecord};
use occlupose::metrics::{ensemble_average, mpjpe as pose_mpjpe, per_action_report, tta_average, EvalRecord, JointFlipMap};
use occlupose::training::{synthetic_targets, toy_train, TrainReport};
use occlupose::voc::{build_library, load_library, FilterRules, OccluderLibrary};
use occlupose::{Error, Pose3D};

use crate::{AugmentArgs, Common, DecodeArgs, GradcheckArgs, IngestArgs, MpjpeArgs, SweepArgs, TrainToyArgs};

pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CmdResult = Result<ExitCode, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(Error::InvalidArgument(format!("{}: {e}", path.display())))
}

/// Loads the config file (if any) and applies the common overrides.
fn base_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| CliError::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(threads) = common.threads {
        config.threads = threads;
    }
    Ok(config)
}

fn finalize(config: RunConfig) -> Result<RunConfig, CliError> {
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn with_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(Error::InvalidArgument(format!("thread pool: {e}"))))?;
    Ok(pool.install(f))
}

fn prepare_out_dir(dir: &Path, config: &RunConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_json_pretty(&dir.join("effective_config.json"), config)?;
    Ok(())
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(Error::InvalidArgument(format!("{}: {e}", path.display()))))?;
    for row in rows {
        w.serialize(row).map_err(|e| CliError::Runtime(Error::InvalidArgument(format!("{}: {e}", path.display()))))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn ingest_voc(args: IngestArgs) -> CmdResult {
    let config = finalize(base_config(&args.common)?)?;
    let rules = FilterRules {
        min_area_px: args.min_area_px,
        ..FilterRules::default()
    };
    let (_, report) = with_pool(config.threads, || build_library(&args.voc_root, &rules, &args.out))??;
    write_json_pretty(&args.out.join("effective_config.json"), &config)?;
    write_json_pretty(&args.out.join("ingest_report.json"), &report)?;

    let b = &report.breakdown;
    let classes: Vec<&str> = rules.exclude_classes.iter().map(String::as_str).collect();
    println!("split: {} ({} images)", report.split, report.images);
    println!("segmented objects: {}", b.total);
    println!("annotated but absent from mask: {}", report.absent_from_mask);
    println!("after excluding {}: {}", classes.join(", "), b.after_class);
    println!("after excluding difficult: {}", b.after_difficult);
    println!("after excluding truncated: {}", b.after_truncated);
    println!("after area >= {} px: {}", rules.min_area_px, b.after_area);
    if let Some(n) = report.retained_train {
        println!("retained (train list only): {n}");
    }
    println!("retained: {}", report.retained);
    Ok(ExitCode::SUCCESS)
}

struct Frame {
    id: String,
    source: FrameSource,
}

enum FrameSource {
    File(PathBuf, BoundingBox),
    Synthetic(BoundingBox),
}

#[derive(Serialize)]
struct ProvenanceLine<'a> {
    frame_id: &'a str,
    params: &'a AugParams,
    covered_fraction: f64,
    crop: CropTransform,
}

const SYNTH_WIDTH: u32 = 640;
const SYNTH_HEIGHT: u32 = 480;

fn synthetic_frame() -> RgbImage {
    RgbImage::from_fn(SYNTH_WIDTH, SYNTH_HEIGHT, |x, y| {
        let v = (x / 16 + y / 16) % 2;
        Rgb([(x % 256) as u8, (y % 256) as u8, if v == 0 { 64 } else { 192 }])
    })
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Lists frames in `images`, pairing each with its best-scoring box. Frames
/// without a box are returned separately.
fn collect_frames(images: &Path, boxes: &Path) -> Result<(Vec<Frame>, Vec<String>), CliError> {
    let mut best: HashMap<String, BoxRecord> = HashMap::new();
    for b in read_jsonl::<BoxRecord>(boxes)? {
        match best.get(&b.frame_id) {
            Some(prev) if prev.score >= b.score => {}
            _ => {
                best.insert(b.frame_id.clone(), b);
            }
        }
    }
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(images).map_err(|e| io_err(images, e))? {
        let path = entry.map_err(|e| io_err(images, e))?.path();
        if path.is_file() && is_image(&path) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                files.insert(stem.to_string(), path);
            }
        }
    }
    let mut frames = Vec::new();
    let mut skipped = Vec::new();
    for (id, path) in files {
        match best.get(&id) {
            Some(b) => frames.push(Frame {
                id,
                source: FrameSource::File(path, b.bbox()),
            }),
            None => skipped.push(id),
        }
    }
    Ok((frames, skipped))
}

fn augment_one(
    frame: &Frame,
    synthetic: &RgbImage,
    config: &RunConfig,
    library: &OccluderLibrary,
    flip_map: &JointFlipMap,
    log_only: bool,
) -> occlupose::Result<(Option<RgbImage>, String, bool)> {
    let params = sample_params(&config.augment_config(), library.len(), config.seed, &frame.id)?;
    let (image, bbox) = match &frame.source {
        FrameSource::File(path, bbox) => {
            let img = image::open(path)
                .map_err(|e| Error::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?
                .to_rgb8();
            (Cow::Owned(img), *bbox)
        }
        FrameSource::Synthetic(bbox) => (Cow::Borrowed(synthetic), *bbox),
    };
    let camera = CameraIntrinsics::centered(config.focal_length, image.width() as f64, image.height() as f64)?;
    let crop = crop_camera(&bbox, &camera, config.out_size, config.fill, config.crop_mode)?;
    // Provenance depends only on parameters and cutout geometry, so the
    // log-only path skips all pixel work.
    let (out, record, crop) = if log_only {
        let record = occlusion_record(crop.out_width, crop.out_height, library, &params, &frame.id)?;
        (None, record, augment_transform(&params, &crop)?)
    } else {
        let (cropped, _, crop) = geometric_augment(&image, None, &params, &crop, flip_map)?;
        let (occluded, record) = occlude_frame(&cropped, library, &params, &frame.id)?;
        (Some(appearance_augment(&occluded, &params)), record, crop)
    };
    let line = serde_json::to_string(&ProvenanceLine {
        frame_id: &frame.id,
        params: &record.params,
        covered_fraction: record.covered_fraction,
        crop,
    })?;
    Ok((out, line, record.params.occlude))
}

fn check_frame_id(id: &str) -> Result<(), CliError> {
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        return Err(CliError::Runtime(Error::InvalidArgument(format!("frame id {id:?} is not a valid file name"))));
    }
    Ok(())
}

pub fn augment(args: AugmentArgs) -> CmdResult {
    let mut config = base_config(&args.common)?;
    if let Some(p) = args.p_occ {
        config.p_occ = p;
    }
    let config = finalize(config)?;
    let flip_map = config.flip_map()?;
    let library = load_library(&args.library)?;

    let (frames, skipped) = match (args.synthetic, &args.images, &args.boxes) {
        (Some(n), _, _) => {
            let bbox = BoundingBox {
                x: 220.0,
                y: 80.0,
                w: 200.0,
                h: 320.0,
            };
            let frames = (0..n)
                .map(|i| Frame {
                    id: format!("synth_{i:06}"),
                    source: FrameSource::Synthetic(bbox),
                })
                .collect();
            (frames, Vec::new())
        }
        (None, Some(images), Some(boxes)) => collect_frames(images, boxes)?,
        _ => return Err(CliError::Usage("--images and --boxes are required without --synthetic".into())),
    };
    for f in &frames {
        check_frame_id(&f.id)?;
    }

    prepare_out_dir(&args.out, &config)?;
    let synthetic = synthetic_frame();
    let results = with_pool(config.threads, || {
        frames
            .par_iter()
            .map(|frame| {
                let (img, line, occluded) = augment_one(frame, &synthetic, &config, &library, &flip_map, args.log_only)?;
                if let Some(img) = img {
                    let path = args.out.join(format!("{}.png", frame.id));
                    img.save(&path).map_err(|e| Error::Image {
                        path: path.clone(),
                        message: e.to_string(),
                    })?;
                }
                Ok((line, occluded))
            })
            .collect::<occlupose::Result<Vec<(String, bool)>>>()
    })??;

    let log_path = args.out.join("provenance.jsonl");
    let occluded = results.iter().filter(|r| r.1).count();
    let mut text = results.iter().map(|r| r.0.as_str()).collect::<Vec<_>>().join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(&log_path, text).map_err(|e| io_err(&log_path, e))?;

    println!("frames: {}", results.len());
    println!("occluded: {occluded}");
    println!("skipped (no box): {}", skipped.len());
    for id in &skipped {
        log::warn!("skipped frame {id}: no detector box");
    }
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(args: GradcheckArgs) -> CmdResult {
    let config = finalize(base_config(&args.common)?)?;
    let opts = GradcheckOptions {
        trials: args.trials as usize,
        seed: config.seed,
        tolerance: args.tolerance,
        inject_bug: args.inject_bug,
    };
    let reports = with_pool(config.threads, || run_gradcheck(&opts))??;
    let mut ok = true;
    for r in &reports {
        println!(
            "{:<16} trials {:>5}  max rel error {:.3e}  {}",
            r.name,
            r.trials,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
        if !r.passed {
            ok = false;
            eprintln!(
                "{} worst trial {}: {}",
                r.name,
                r.worst_trial,
                serde_json::to_string(&r.worst_inputs).unwrap_or_default()
            );
        }
    }
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    println!("max relative error: {worst:.3e} (tolerance {:.1e})", args.tolerance);
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

#[derive(Serialize)]
struct LossRow {
    step: usize,
    loss: f64,
}

fn run_toy(config: &RunConfig) -> occlupose::Result<TrainReport> {
    let targets = synthetic_targets(&config.synthetic_set(), config.joints)?;
    toy_train(&config.toy_config(), &targets)
}

pub fn train_toy(args: TrainToyArgs) -> CmdResult {
    let mut config = base_config(&args.common)?;
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    if args.learn_c {
        config.learn_c = true;
    }
    if args.no_learn_c {
        config.learn_c = false;
    }
    let config = finalize(config)?;
    prepare_out_dir(&args.out, &config)?;
    let report = with_pool(config.threads, || run_toy(&config))??;

    write_json_pretty(&args.out.join("train_report.json"), &report)?;
    let rows: Vec<LossRow> = report
        .loss_curve
        .iter()
        .enumerate()
        .map(|(step, &loss)| LossRow { step, loss })
        .collect();
    write_csv(&args.out.join("loss_curve.csv"), &rows)?;

    println!("initial loss: {:.4} mm", report.initial_loss);
    println!("final loss: {:.4} mm", report.final_loss);
    println!("loss ratio: {:.6}", report.final_loss / report.initial_loss);
    if let Some(e) = report.ensemble_loss {
        println!("snapshot ensemble loss: {e:.4} mm");
    }
    println!("c = {:.2} ({:.6})", report.final_c, report.final_c);
    Ok(ExitCode::SUCCESS)
}

fn index_poses(records: Vec<PoseRecord>, path: &Path) -> Result<BTreeMap<String, (String, Pose3D)>, CliError> {
    let mut map = BTreeMap::new();
    for r in records {
        let pose = r.pose()?;
        if map.insert(r.frame_id.clone(), (r.action, pose)).is_some() {
            return Err(CliError::Runtime(Error::FrameMismatch(format!(
                "{}: duplicate frame {}",
                path.display(),
                r.frame_id
            ))));
        }
    }
    Ok(map)
}

fn load_poses(path: &Path) -> Result<BTreeMap<String, (String, Pose3D)>, CliError> {
    index_poses(read_poses(path)?, path)
}

/// Lists frames present in one map but not the other; `None` when the key sets agree.
fn frame_diff<A, B>(left: &BTreeMap<String, A>, right: &BTreeMap<String, B>) -> Option<(Vec<String>, Vec<String>)> {
    let l: BTreeSet<&String> = left.keys().collect();
    let r: BTreeSet<&String> = right.keys().collect();
    if l == r {
        return None;
    }
    Some((
        l.difference(&r).map(|s| s.to_string()).collect(),
        r.difference(&l).map(|s| s.to_string()).collect(),
    ))
}

fn report_mismatch(name: &Path, other: &Path, diff: (Vec<String>, Vec<String>)) -> ExitCode {
    for id in diff.0 {
        eprintln!("frame {id} in {} but not in {}", name.display(), other.display());
    }
    for id in diff.1 {
        eprintln!("frame {id} in {} but not in {}", other.display(), name.display());
    }
    ExitCode::from(1)
}

#[derive(Serialize)]
struct ActionCsvRow<'a> {
    action: &'a str,
    frames: usize,
    mpjpe_mm: f64,
}

/// Combines `--ensemble` members with `--pred` first, then applies flip
/// averaging with `--tta-flipped`.
fn assemble_predictions(args: &MpjpeArgs, flip_map: &JointFlipMap) -> Result<Result<BTreeMap<String, (String, Pose3D)>, ExitCode>, CliError> {
    let mut pred = load_poses(&args.pred)?;
    let mut members = Vec::new();
    for path in &args.ensemble {
        let m = load_poses(path)?;
        if let Some(diff) = frame_diff(&pred, &m) {
            return Ok(Err(report_mismatch(&args.pred, path, diff)));
        }
        members.push(m);
    }
    if !members.is_empty() {
        for (id, (_, pose)) in pred.iter_mut() {
            let mut all = vec![pose.clone()];
            all.extend(members.iter().map(|m| m[id].1.clone()));
            *pose = ensemble_average(&all)?;
        }
    }
    if let Some(path) = &args.tta_flipped {
        let flipped = load_poses(path)?;
        if let Some(diff) = frame_diff(&pred, &flipped) {
            return Ok(Err(report_mismatch(&args.pred, path, diff)));
        }
        for (id, (_, pose)) in pred.iter_mut() {
            *pose = tta_average(pose, &flipped[id].1, flip_map)?;
        }
    }
    Ok(Ok(pred))
}

pub fn mpjpe(args: MpjpeArgs) -> CmdResult {
    let config = finalize(base_config(&args.common)?)?;
    let flip_map = config.flip_map()?;
    let pred = match assemble_predictions(&args, &flip_map)? {
        Ok(p) => p,
        Err(code) => return Ok(code),
    };
    let gt = load_poses(&args.gt)?;
    if let Some(diff) = frame_diff(&pred, &gt) {
        return Ok(report_mismatch(&args.pred, &args.gt, diff));
    }
    let records: Vec<EvalRecord> = gt
        .into_iter()
        .map(|(frame_id, (action, gt))| EvalRecord {
            pred: pred[&frame_id].1.clone(),
            frame_id,
            action,
            gt,
        })
        .collect();
    let report = per_action_report(&records)?;
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            prepare_out_dir(parent, &config)?;
        }
        let mut rows: Vec<ActionCsvRow> = report
            .rows
            .iter()
            .map(|r| ActionCsvRow {
                action: &r.action,
                frames: r.frames,
                mpjpe_mm: r.mpjpe,
            })
            .collect();
        rows.push(ActionCsvRow {
            action: "ALL",
            frames: records.len(),
            mpjpe_mm: report.frame_mean,
        });
        write_csv(out, &rows)?;
    }
    for r in &report.rows {
        println!("{:<20} {:>7} frames  {:.3} mm", r.action, r.frames, r.mpjpe);
    }
    println!("action mean: {:.3} mm", report.action_mean);
    println!("MPJPE: {:.3} mm", report.frame_mean);
    Ok(ExitCode::SUCCESS)
}

/// Splits a comma list into `(token, value)` pairs, each value in `[0, 1]`.
pub fn parse_p_occ_values(text: &str) -> Result<Vec<(String, f64)>, String> {
    let mut out = Vec::new();
    for raw in text.split(',') {
        let token = raw.trim();
        if token.is_empty() {
            return Err(format!("empty entry in p_occ list {text:?}"));
        }
        let v: f64 = token.parse().map_err(|_| format!("invalid p_occ value {token:?}"))?;
        if !(0.0..=1.0).contains(&v) {
            return Err(format!("p_occ value {token} outside [0, 1]"));
        }
        out.push((token.to_string(), v));
    }
    Ok(out)
}

#[derive(Serialize)]
struct ToySweepRow<'a> {
    p_occ: &'a str,
    final_loss: f64,
    ensemble_loss: Option<f64>,
    final_c: f64,
}

#[derive(Serialize)]
struct ExternalSweepRow<'a> {
    p_occ: &'a str,
    mpjpe_mm: f64,
    frames: usize,
}

pub fn sweep_pocc(args: SweepArgs) -> CmdResult {
    let values = parse_p_occ_values(&args.p_occ_values).map_err(CliError::Usage)?;
    let mut config = base_config(&args.common)?;
    if let Some(steps) = args.steps {
        config.steps = steps;
    }
    let config = finalize(config)?;
    let dir = args.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    prepare_out_dir(dir, &config)?;

    if args.pred.is_empty() {
        let reports = with_pool(config.threads, || {
            values
                .iter()
                .map(|(_, p)| {
                    let mut c = config.clone();
                    c.toy_p_occ = *p;
                    run_toy(&c)
                })
                .collect::<occlupose::Result<Vec<_>>>()
        })??;
        let rows: Vec<ToySweepRow> = values
            .iter()
            .zip(&reports)
            .map(|((token, _), r)| ToySweepRow {
                p_occ: token,
                final_loss: r.final_loss,
                ensemble_loss: r.ensemble_loss,
                final_c: r.final_c,
            })
            .collect();
        for row in &rows {
            println!("p_occ {:<6} final loss {:.4} mm", row.p_occ, row.final_loss);
        }
        write_csv(&args.out, &rows)?;
    } else {
        if args.pred.len() != values.len() {
            return Err(CliError::Usage(format!(
                "{} prediction files for {} p_occ values",
                args.pred.len(),
                values.len()
            )));
        }
        let gt_path = args.gt.as_ref().ok_or_else(|| CliError::Usage("--gt is required with --pred".into()))?;
        let gt = load_poses(gt_path)?;
        let mut rows = Vec::new();
        for ((token, _), path) in values.iter().zip(&args.pred) {
            let pred = load_poses(path)?;
            if let Some(diff) = frame_diff(&pred, &gt) {
                return Ok(report_mismatch(path, gt_path, diff));
            }
            let mut total = 0.0;
            for (id, (_, g)) in &gt {
                total += pose_mpjpe(&pred[id].1, g)?;
            }
            let row = ExternalSweepRow {
                p_occ: token,
                mpjpe_mm: total / gt.len().max(1) as f64,
                frames: gt.len(),
            };
            println!("p_occ {:<6} MPJPE {:.3} mm", row.p_occ, row.mpjpe_mm);
            rows.push(row);
        }
        write_csv(&args.out, &rows)?;
    }
    println!("wrote {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct DecodedLine {
    index: usize,
    xy: Vec<[f64; 2]>,
    dz: Vec<f64>,
    zstar: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    joints: Option<Vec<[f64; 3]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    root_index: Option<usize>,
}

pub fn decode(args: DecodeArgs) -> CmdResult {
    let config = finalize(base_config(&args.common)?)?;
    let grid = CoordinateGrid::new(&config.grid_config())?;
    let batch = read_batch(&args.input)?;
    let decoded = with_pool(config.threads, || batch.decode_all(config.joints, config.depth_bins, &grid))??;
    let camera = args.scale.map(|scale| CropIntrinsics {
        focal: config.focal_length,
        scale,
        correction: args.correction,
        width: config.out_size as f64,
        height: config.out_size as f64,
    });
    let mut lines = Vec::with_capacity(decoded.len());
    for (index, d) in decoded.into_iter().enumerate() {
        let joints = match &camera {
            Some(k) => Some(
                d.xy.iter()
                    .zip(&d.dz)
                    .map(|(xy, &dz)| back_project(xy[0], xy[1], dz, d.zstar, k))
                    .collect::<occlupose::Result<Vec<_>>>()?,
            ),
            None => None,
        };
        if joints.is_some() && args.root_index >= config.joints {
            return Err(CliError::Usage(format!("root index {} out of range", args.root_index)));
        }
        lines.push(DecodedLine {
            index,
            root_index: joints.as_ref().map(|_| args.root_index),
            xy: d.xy,
            dz: d.dz,
            zstar: d.zstar,
            joints,
        });
    }
    write_jsonl(&args.out, &lines)?;
    println!("decoded {} samples", lines.len());
    Ok(ExitCode::SUCCESS)
}
