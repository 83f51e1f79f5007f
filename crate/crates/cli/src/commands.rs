use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::warn;
use pcr_core::eval::{
    ape, confusion, format_trajectory, improvement_report, read_stats_csv, read_trajectory, rpe,
    stats, write_confusion_csv, write_error_csv, write_improvement_csv, write_stats_csv, EvalError,
    TrajectoryFormat,
};
use pcr_core::io::{
    format_outliers, frame_file_name, list_frame_files, list_numbered_files, read_labels,
    read_outliers, read_points, IoError,
};
use pcr_core::masks::{read_detections_jsonl, DetectionRecord};
use pcr_core::runtime::{
    format_timing_csv, run_pipeline, FrameInput, PipelineConfig, RuntimeError,
};
use pcr_core::synth::{export_scene, generate_scene_with, SceneConfig, SynthError};
use pcr_core::Exec;
use toml::Value;

use crate::manifest::RunManifest;
use crate::{Cli, CliError, Command, Format, Metric};

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Reading failures are the caller's inputs; writing failures are ours.
fn eval_err(e: EvalError) -> CliError {
    input(e)
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match cli.threads {
        Some(0) => Err(input("--threads must be at least 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(runtime)?;
            let exec = if n == 1 {
                Exec::Sequential
            } else {
                Exec::default()
            };
            pool.install(|| dispatch(cli, exec))
        }
        None => dispatch(cli, Exec::default()),
    }
}

fn dispatch(cli: &Cli, exec: Exec) -> Result<(), CliError> {
    let start = Instant::now();
    let (out_dir, mut manifest) = match &cli.command {
        Command::Filter {
            points,
            detections,
            out,
        } => (out, cmd_filter(cli, points, detections, out, exec)?),
        Command::Eval {
            est,
            gt,
            mode,
            align,
            scale,
            delta,
            format,
            gt_format,
            out,
        } => {
            let opts = EvalOpts {
                mode: *mode,
                align: *align,
                scale: *scale,
                delta: *delta,
                format: *format,
                gt_format: gt_format.unwrap_or(*format),
            };
            (out, cmd_eval(cli, est, gt, &opts, out)?)
        }
        Command::Synth { scene, out } => (out, cmd_synth(cli, scene.as_deref(), out, exec)?),
        Command::Report {
            baseline,
            ours,
            metric,
            out,
        } => (
            out,
            cmd_report(cli, baseline, ours, metric.as_deref(), out)?,
        ),
        Command::Confusion {
            outliers,
            labels,
            out,
        } => (out, cmd_confusion(cli, outliers, labels, out)?),
    };
    manifest.wall_time_s = start.elapsed().as_secs_f64();
    manifest.write_atomic(out_dir)?;
    Ok(())
}

/// Defaults, then the config file, then `--set` overrides.
pub fn load_pipeline_config(
    cli: &Cli,
    manifest: &mut RunManifest,
) -> Result<PipelineConfig, CliError> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| input(format!("config {}: {e}", path.display())))?;
        cfg.merge_toml_str(&text)
            .map_err(|e| input(format!("{}: {e}", path.display())))?;
        manifest.hash_input(path)?;
    }
    for o in &cli.overrides {
        cfg.apply_override(o).map_err(input)?;
    }
    cfg.validate().map_err(input)?;
    manifest.config = cfg
        .entries()
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    Ok(cfg)
}

fn detections_by_frame(
    path: &Path,
    manifest: &mut RunManifest,
) -> Result<(BTreeMap<i64, Vec<DetectionRecord>>, bool), CliError> {
    if !path.exists() {
        return Err(input(format!("detections not found: {}", path.display())));
    }
    let mut by_frame: BTreeMap<i64, Vec<DetectionRecord>> = BTreeMap::new();
    if path.is_dir() {
        for (id, file) in list_numbered_files(path, "jsonl").map_err(input)? {
            by_frame.insert(id, read_detections_jsonl(&file).map_err(input)?);
            manifest.hash_input(&file)?;
        }
        Ok((by_frame, true))
    } else {
        for d in read_detections_jsonl(path).map_err(input)? {
            by_frame.entry(d.frame_id).or_default().push(d);
        }
        manifest.hash_input(path)?;
        Ok((by_frame, false))
    }
}

/// Aligns point files and detections by frame id. A single detection file
/// covers every frame; in a per-frame directory a missing file means the
/// frame has no detections at all.
pub fn load_frames(
    points: &Path,
    detections: &Path,
    manifest: &mut RunManifest,
) -> Result<Vec<FrameInput>, CliError> {
    if !points.is_dir() {
        return Err(input(format!(
            "points directory not found: {}",
            points.display()
        )));
    }
    let point_files = list_frame_files(points).map_err(input)?;
    let (mut dets, per_frame) = detections_by_frame(detections, manifest)?;
    let ids: std::collections::BTreeSet<i64> =
        point_files.keys().chain(dets.keys()).copied().collect();
    let mut frames = Vec::with_capacity(ids.len());
    for id in ids {
        let pts = match point_files.get(&id) {
            Some(p) => {
                manifest.hash_input(p)?;
                Some(read_points(p, id).map_err(|e: IoError| input(e))?)
            }
            None => None,
        };
        let d = match dets.remove(&id) {
            Some(d) => Some(d),
            None if per_frame => None,
            None => Some(Vec::new()),
        };
        frames.push(FrameInput {
            frame_id: id,
            timestamp: None,
            points: pts,
            detections: d,
        });
    }
    Ok(frames)
}

fn cmd_filter(
    cli: &Cli,
    points: &Path,
    detections: &Path,
    out: &Path,
    exec: Exec,
) -> Result<RunManifest, CliError> {
    let mut manifest = RunManifest::new("filter", cli.threads);
    let cfg = load_pipeline_config(cli, &mut manifest)?;
    let frames = load_frames(points, detections, &mut manifest)?;
    let result = run_pipeline(&frames, &cfg, exec).map_err(|e| match e {
        RuntimeError::Config(_) | RuntimeError::Mask { .. } | RuntimeError::OutOfOrder { .. } => {
            input(e)
        }
        other => runtime(other),
    })?;

    create_dir(&out.join("outliers"))?;
    for f in &result.frames {
        let name = format!("outliers/{}", frame_file_name(f.frame_id));
        write(&out.join(&name), &format_outliers(&f.points, &f.filter))?;
        manifest.outputs.push(name);
    }
    write(
        &out.join("poses.txt"),
        &format_trajectory(&result.trajectory(), TrajectoryFormat::Kitti),
    )?;
    write(&out.join("timing.csv"), &format_timing_csv(&result.timings))?;
    manifest
        .outputs
        .extend(["poses.txt".to_string(), "timing.csv".to_string()]);
    if !result.skipped.is_empty() {
        let text: String = result
            .skipped
            .iter()
            .map(|s| format!("{} {}\n", s.frame_id, s.reason))
            .collect();
        write(&out.join("skipped.txt"), &text)?;
        manifest.outputs.push("skipped.txt".into());
    }
    Ok(manifest)
}

struct EvalOpts {
    mode: Metric,
    align: bool,
    scale: bool,
    delta: usize,
    format: Format,
    gt_format: Format,
}

fn traj_format(f: Format) -> TrajectoryFormat {
    match f {
        Format::Kitti => TrajectoryFormat::Kitti,
        Format::Tum => TrajectoryFormat::Tum,
    }
}

fn cmd_eval(
    cli: &Cli,
    est: &Path,
    gt: &Path,
    o: &EvalOpts,
    out: &Path,
) -> Result<RunManifest, CliError> {
    let mut manifest = RunManifest::new("eval", cli.threads);
    if o.mode == Metric::Rpe && o.delta == 0 {
        return Err(input("--delta must be at least 1"));
    }
    let e = read_trajectory(est, traj_format(o.format)).map_err(eval_err)?;
    let g = read_trajectory(gt, traj_format(o.gt_format)).map_err(eval_err)?;
    manifest.hash_input(est)?;
    manifest.hash_input(gt)?;
    let (name, errors) = match o.mode {
        Metric::Ape => ("ape", ape(&e, &g, o.align, o.scale).map_err(eval_err)?),
        Metric::Rpe => ("rpe", rpe(&e, &g, o.delta).map_err(eval_err)?),
    };
    let st = stats(&errors).map_err(eval_err)?;
    manifest.config = BTreeMap::from([
        ("mode".to_string(), name.to_string()),
        ("align".to_string(), o.align.to_string()),
        ("scale".to_string(), o.scale.to_string()),
        ("delta".to_string(), o.delta.to_string()),
    ]);
    create_dir(out)?;
    write_stats_csv(&out.join("stats.csv"), &[(name, st)]).map_err(runtime)?;
    write_error_csv(&out.join("errors.csv"), &errors).map_err(runtime)?;
    manifest
        .outputs
        .extend(["stats.csv".to_string(), "errors.csv".to_string()]);
    Ok(manifest)
}

/// Parses the value half of a `key=value` override as a TOML scalar, or a string.
fn scalar(text: &str) -> Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    match v {
        Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Scene defaults, then the scene file, then `--set` overrides (dotted keys
/// reach nested tables, e.g. `camera.fx=700`).
pub fn load_scene_config(
    cli: &Cli,
    scene: Option<&Path>,
    manifest: &mut RunManifest,
) -> Result<SceneConfig, CliError> {
    let Value::Table(mut table) = Value::try_from(SceneConfig::default()).map_err(runtime)? else {
        unreachable!("a struct serializes to a table")
    };
    if let Some(path) = scene {
        let text = fs::read_to_string(path)
            .map_err(|e| input(format!("scene {}: {e}", path.display())))?;
        let t: toml::Table = text
            .parse()
            .map_err(|e| input(format!("{}: {e}", path.display())))?;
        merge(&mut table, t);
        manifest.hash_input(path)?;
    }
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| input(format!("override {o:?} is not of the form key=value")))?;
        let mut node = &mut table;
        let parts: Vec<&str> = k.trim().split('.').collect();
        for p in &parts[..parts.len() - 1] {
            node = match node.get_mut(*p) {
                Some(Value::Table(t)) => t,
                _ => return Err(input(format!("unknown scene key {k:?}"))),
            };
        }
        let leaf = parts[parts.len() - 1];
        if !node.contains_key(leaf) {
            return Err(input(format!("unknown scene key {k:?}")));
        }
        node.insert(leaf.to_string(), scalar(v.trim()));
    }
    let flat = Value::Table(table);
    let cfg: SceneConfig = flat
        .clone()
        .try_into()
        .map_err(|e| input(format!("scene config: {e}")))?;
    cfg.validate().map_err(input)?;
    flatten("", &flat, &mut manifest.config);
    Ok(cfg)
}

fn cmd_synth(
    cli: &Cli,
    scene: Option<&Path>,
    out: &Path,
    exec: Exec,
) -> Result<RunManifest, CliError> {
    let mut manifest = RunManifest::new("synth", cli.threads);
    let cfg = load_scene_config(cli, scene, &mut manifest)?;
    let generated = generate_scene_with(&cfg, exec).map_err(|e| match e {
        SynthError::InvalidConfig(_) | SynthError::EmptyView { .. } => input(e),
        other => runtime(other),
    })?;
    let summary = export_scene(&generated, out).map_err(runtime)?;
    manifest.outputs = summary.files;
    Ok(manifest)
}

fn cmd_report(
    cli: &Cli,
    baseline: &Path,
    ours: &Path,
    metric: Option<&str>,
    out: &Path,
) -> Result<RunManifest, CliError> {
    let mut manifest = RunManifest::new("report", cli.threads);
    let pick = |path: &Path| -> Result<_, CliError> {
        let rows = read_stats_csv(path).map_err(eval_err)?;
        match metric {
            None => Ok(rows[0].1),
            Some(m) => rows
                .iter()
                .find(|(n, _)| n == m)
                .map(|r| r.1)
                .ok_or_else(|| input(format!("{}: no row for metric {m:?}", path.display()))),
        }
    };
    let (b, o) = (pick(baseline)?, pick(ours)?);
    manifest.hash_input(baseline)?;
    manifest.hash_input(ours)?;
    if let Some(m) = metric {
        manifest.config.insert("metric".into(), m.into());
    }
    create_dir(out)?;
    write_improvement_csv(
        &out.join("improvement.csv"),
        &b,
        &o,
        &improvement_report(&b, &o),
    )
    .map_err(runtime)?;
    manifest.outputs.push("improvement.csv".into());
    Ok(manifest)
}

fn cmd_confusion(
    cli: &Cli,
    outliers: &Path,
    labels: &Path,
    out: &Path,
) -> Result<RunManifest, CliError> {
    let mut manifest = RunManifest::new("confusion", cli.threads);
    if !outliers.is_dir() {
        return Err(input(format!(
            "outlier directory not found: {}",
            outliers.display()
        )));
    }
    let gt = read_labels(labels).map_err(input)?;
    manifest.hash_input(labels)?;
    let (mut pred, mut truth, mut unlabeled) = (Vec::new(), Vec::new(), 0usize);
    for (frame, path) in list_frame_files(outliers).map_err(input)? {
        manifest.hash_input(&path)?;
        for row in read_outliers(&path).map_err(input)? {
            match gt.get(&(row.track_id, frame)) {
                Some(d) => {
                    pred.push(row.outlier);
                    truth.push(*d);
                }
                None => unlabeled += 1,
            }
        }
    }
    if unlabeled > 0 {
        warn!("{unlabeled} outlier rows have no label and were ignored");
    }
    if pred.is_empty() {
        return Err(input(format!(
            "no outlier row in {} matches a label in {}",
            outliers.display(),
            labels.display()
        )));
    }
    let report = confusion(&pred, &truth).map_err(eval_err)?;
    create_dir(out)?;
    write_confusion_csv(&out.join("confusion.csv"), &report).map_err(runtime)?;
    manifest.outputs.push("confusion.csv".into());
    manifest
        .config
        .insert("unlabeled_rows".into(), unlabeled.to_string());
    Ok(manifest)
}
