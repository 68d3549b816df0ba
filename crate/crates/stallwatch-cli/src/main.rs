//! Command-line surface over the stallwatch library: detections in, tracks
//! or event logs out, plus event scoring, scenario rendering, and
//! annotation-batch curation. Set `RUST_LOG` to control verbosity.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use stallwatch::config::{ConfigError, StallConfig};
use stallwatch::curation::{select_informative, stratified_sample};
use stallwatch::eval::{evaluate, ClipEval, DiffKind, LabeledEvent};
use stallwatch::events::{EventError, EventPipeline};
use stallwatch::formats::{
    events_to_records, latest_tails, read_clip_meta_path, read_detections_path,
    read_embeddings_path, read_events_path, records_to_event_set, write_detections_path,
    write_events, write_events_path, ClipDetections, EventFile, EventRecord, FormatError,
};
use stallwatch::refine::refine;
use stallwatch::sim::{generate, Script, SimError};
use stallwatch::tracking::{ObjectClass, Tracker};

#[derive(Parser)]
#[command(name = "stallwatch", version, about = "Stall monitoring from per-frame detections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Associate detections into per-clip objects and dump them as JSONL
    Track(TrackArgs),
    /// Turn detections into a per-clip, per-class event log
    Events(EventsArgs),
    /// Score a predicted event log against ground truth
    Eval(EvalArgs),
    /// Render a scenario script into detections and ground-truth events
    Synth(SynthArgs),
    /// Pick frames or clips worth annotating
    #[command(subcommand)]
    Curate(CurateCommand),
}

#[derive(Subcommand)]
enum CurateCommand {
    /// Keep the frames least similar to their predecessor
    Select(SelectArgs),
    /// Draw a stratified sample of clips for an annotation batch
    Sample(SampleArgs),
}

/// `--config` plus overrides for the scalar config fields.
#[derive(Args)]
struct ConfigOpts {
    /// Camera configuration (TOML)
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Drop detections below this confidence instead of the configured value
    #[arg(long, value_name = "X")]
    confidence_threshold: Option<f64>,
    /// Detector sampling stride in captured frames
    #[arg(long, value_name = "N")]
    frame_stride: Option<usize>,
    /// Camera capture rate
    #[arg(long, value_name = "HZ")]
    fps: Option<f64>,
    /// Clip length in seconds
    #[arg(long, value_name = "S")]
    clip_len_s: Option<f64>,
    /// Pixels from a frame border that still count as touching it
    #[arg(long, value_name = "PX")]
    edge_margin_px: Option<f64>,
    /// Box-to-entrance distance that counts a disappearance as an exit
    #[arg(long, value_name = "PX")]
    entrance_dist_px: Option<f64>,
    /// Minimum floor-overlap fraction for a box to count as inside
    #[arg(long, value_name = "X")]
    min_area_ratio: Option<f64>,
}

impl ConfigOpts {
    fn load(&self) -> Result<StallConfig, Failure> {
        let mut cfg = StallConfig::from_toml_path(&self.config)
            .map_err(|e| at_path(e.into(), &self.config))?;
        let mut overridden = false;
        macro_rules! apply {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                    overridden = true;
                }
            };
        }
        apply!(confidence_threshold);
        apply!(frame_stride);
        apply!(fps);
        apply!(clip_len_s);
        apply!(edge_margin_px);
        apply!(entrance_dist_px);
        apply!(min_area_ratio);
        if overridden {
            cfg.validate().map_err(Failure::from)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrackArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Detections to read (JSONL)
    #[arg(long, value_name = "FILE")]
    detections: PathBuf,
    /// Objects to write (JSONL); stdout when omitted
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EventsArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Detections to read (JSONL)
    #[arg(long, value_name = "FILE")]
    detections: PathBuf,
    /// Event log to write (JSONL); stdout when omitted
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Carry end-of-clip state over from the existing log and append to it
    #[arg(long, requires = "out")]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted events (JSONL)
    #[arg(long, value_name = "FILE")]
    pred: PathBuf,
    /// Ground-truth events (JSONL)
    #[arg(long, value_name = "FILE")]
    gt: PathBuf,
    /// Minimum t-IoU for two events to match
    #[arg(long, value_name = "X", default_value_t = stallwatch::eval::DEFAULT_T_IOU_THRESHOLD)]
    threshold: f64,
    /// Match on interval overlap alone, ignoring event states
    #[arg(long)]
    state_blind: bool,
    /// Clip length used to check event files for gaps
    #[arg(long, value_name = "S", default_value_t = 60.0)]
    clip_len_s: f64,
    /// Also write the full report as JSON
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigOpts,
    /// Scenario script (TOML)
    #[arg(long, value_name = "FILE")]
    script: PathBuf,
    /// Seed for the detector-noise generator
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Detections to write (JSONL)
    #[arg(long, value_name = "FILE")]
    out_detections: PathBuf,
    /// Ground-truth events to write (JSONL)
    #[arg(long, value_name = "FILE")]
    out_truth: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    /// Per-frame embeddings (JSONL)
    #[arg(long, value_name = "FILE")]
    embeddings: PathBuf,
    /// Fraction of frame transitions to keep
    #[arg(long, value_name = "X", default_value_t = 0.25)]
    keep_fraction: f64,
    /// Manifest to write (JSONL); stdout when omitted
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    /// Clip metadata (JSONL)
    #[arg(long, value_name = "FILE")]
    clips: PathBuf,
    /// Number of clips to draw
    #[arg(long, value_name = "N")]
    n: usize,
    /// Sampling seed
    #[arg(long, value_name = "N", default_value_t = 0)]
    seed: u64,
    /// Manifest to write (JSONL); stdout when omitted
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// Failures split by exit code: bad inputs exit 2, everything else exits 1.
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => Failure::Runtime(e.into()),
            _ => Failure::Validation(e.into()),
        }
    }
}

impl From<FormatError> for Failure {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(_) => Failure::Runtime(e.into()),
            _ => Failure::Validation(e.into()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(_) => Failure::Runtime(e.into()),
            _ => Failure::Validation(e.into()),
        }
    }
}

impl From<EventError> for Failure {
    fn from(e: EventError) -> Self {
        Failure::Validation(e.into())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn at_path(f: Failure, path: &Path) -> Failure {
    let tag = |e: anyhow::Error| e.context(path.display().to_string());
    match f {
        Failure::Validation(e) => Failure::Validation(tag(e)),
        Failure::Runtime(e) => Failure::Runtime(tag(e)),
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(anyhow!(msg.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(e)) => {
            eprintln!("stallwatch: invalid input: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("stallwatch: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Track(args) => track(args),
        Command::Events(args) => events(args),
        Command::Eval(args) => eval(args),
        Command::Synth(args) => synth(args),
        Command::Curate(CurateCommand::Select(args)) => curate_select(args),
        Command::Curate(CurateCommand::Sample(args)) => curate_sample(args),
    }
}

fn out_writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn surface_warnings(warnings: &[String]) {
    for w in warnings {
        log::warn!("{w}");
    }
}

// --- track -----------------------------------------------------------------

#[derive(Serialize)]
struct ObjectBoxRecord {
    frame_idx: usize,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    /// True where the tracker coasted and the box is interpolated.
    bridged: bool,
}

#[derive(Serialize)]
struct ObjectRecord<'a> {
    clip_id: &'a str,
    object_id: u64,
    class: ObjectClass,
    source_track_ids: &'a [u64],
    first_frame: usize,
    last_frame: usize,
    boxes: Vec<ObjectBoxRecord>,
}

fn track(args: TrackArgs) -> Result<(), Failure> {
    let cfg = args.config.load()?;
    let file = read_detections_path(&args.detections, &cfg)
        .map_err(|e| at_path(e.into(), &args.detections))?;
    surface_warnings(&file.warnings);

    let mut out = out_writer(&args.out)?;
    let mut n_objects = 0usize;
    for clip in &file.clips {
        let mut tracker = Tracker::new(cfg.tracker).map_err(|e| Failure::Validation(e.into()))?;
        for (frame_idx, dets) in clip.frames.iter().enumerate() {
            tracker
                .step(frame_idx, dets)
                .map_err(|e| Failure::Validation(e.into()))?;
        }
        for object in refine(tracker.finalize()) {
            let boxes = (object.first_frame()..=object.last_frame())
                .filter_map(|f| object.slot_at(f).map(|slot| (f, slot)))
                .map(|(frame_idx, slot)| {
                    let b = slot.bbox();
                    ObjectBoxRecord {
                        frame_idx,
                        x: b.x,
                        y: b.y,
                        w: b.w,
                        h: b.h,
                        bridged: matches!(slot, stallwatch::refine::TimelineSlot::Bridged(_)),
                    }
                })
                .collect();
            let record = ObjectRecord {
                clip_id: &clip.clip_id,
                object_id: object.id,
                class: object.class,
                source_track_ids: &object.source_track_ids,
                first_frame: object.first_frame(),
                last_frame: object.last_frame(),
                boxes,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n")?;
            n_objects += 1;
        }
    }
    out.flush()?;
    log::info!("{} objects across {} clips", n_objects, file.clips.len());
    Ok(())
}

// --- events ----------------------------------------------------------------

fn events(args: EventsArgs) -> Result<(), Failure> {
    let cfg = args.config.load()?;
    let file = read_detections_path(&args.detections, &cfg)
        .map_err(|e| at_path(e.into(), &args.detections))?;
    surface_warnings(&file.warnings);

    let mut pipeline = if args.resume {
        let log_path = args.out.as_ref().expect("clap enforces --out with --resume");
        let tails = match std::fs::metadata(log_path) {
            Ok(m) if m.len() > 0 => {
                let existing = read_events_path(log_path, cfg.clip_len_s)
                    .map_err(|e| at_path(e.into(), log_path))?;
                surface_warnings(&existing.warnings);
                latest_tails(&existing.records)
            }
            _ => Default::default(),
        };
        EventPipeline::with_tails(&cfg, tails)
    } else {
        EventPipeline::new(&cfg)
    };

    let mut records: Vec<EventRecord> = Vec::new();
    for clip in &file.clips {
        let clip_events = pipeline.process_clip(&clip.frames)?;
        records.extend(events_to_records(
            &cfg.camera_id,
            &clip.clip_id,
            &clip_events,
            &cfg,
        ));
    }

    match (&args.out, args.resume) {
        (Some(path), true) => stallwatch::formats::append_events(path, &records, cfg.clip_len_s)
            .map_err(|e| at_path(e.into(), path))?,
        (Some(path), false) => {
            write_events_path(path, &records).map_err(|e| at_path(e.into(), path))?
        }
        (None, _) => write_events(out_writer(&None)?, &records)?,
    }
    log::info!(
        "{} events across {} clips",
        records.len(),
        file.clips.len()
    );
    Ok(())
}

// --- eval ------------------------------------------------------------------

fn read_event_set(
    path: &Path,
    clip_len_s: f64,
) -> Result<stallwatch::eval::EventSet, Failure> {
    let EventFile { records, warnings } =
        read_events_path(path, clip_len_s).map_err(|e| at_path(e.into(), path))?;
    surface_warnings(&warnings);
    Ok(records_to_event_set(&records))
}

fn format_event(e: &LabeledEvent) -> String {
    format!("({:5.1}, {:5.1}) {}", e.start_s, e.end_s, e.state)
}

fn format_diff(diff: &stallwatch::eval::EventDiff) -> String {
    let mut line = diff.kind.label().to_string();
    if let Some(i) = diff.pred_idx {
        line.push_str(&format!(" pred[{i}]"));
    }
    if let Some(i) = diff.gt_idx {
        line.push_str(&format!(" gt[{i}]"));
    }
    match diff.kind {
        DiffKind::TemporalShift {
            start_delta_s,
            end_delta_s,
        } => {
            line.push_str(&format!(
                " start {start_delta_s:+.1} s, end {end_delta_s:+.1} s"
            ));
        }
        DiffKind::StateMismatch {
            pred_state,
            gt_state,
        } => {
            line.push_str(&format!(" {pred_state} vs {gt_state}"));
        }
        _ => {}
    }
    if let Some(t) = diff.t_iou {
        line.push_str(&format!(" (t-IoU {t:.2})"));
    }
    line
}

fn print_clip_table(
    out: &mut impl Write,
    clip_id: &str,
    class: ObjectClass,
    pred: &[LabeledEvent],
    gt: &[LabeledEvent],
    eval: &ClipEval,
) -> io::Result<()> {
    const COL: usize = 40;
    writeln!(out, "== {clip_id} · {class} ==")?;
    writeln!(out, "  {:<COL$}ground truth", "predicted")?;
    for i in 0..pred.len().max(gt.len()) {
        let left = pred.get(i).map(format_event).unwrap_or_default();
        let right = gt.get(i).map(format_event).unwrap_or_default();
        writeln!(out, "  {left:<COL$}{right}")?;
    }
    if eval.metrics.fully_correct {
        writeln!(out, "  exact match")?;
    }
    for diff in &eval.diffs {
        writeln!(out, "  {}", format_diff(diff))?;
    }
    writeln!(out)
}

fn print_metrics_line(
    out: &mut impl Write,
    label: &str,
    m: &stallwatch::eval::ClassMetrics,
) -> io::Result<()> {
    let mean = m
        .mean_t_iou
        .map_or_else(|| "  n/a".to_string(), |t| format!("{t:.3}"));
    writeln!(
        out,
        "  {label:<8} P {:.3}  R {:.3}  F1 {:.3}  mean t-IoU {mean}  \
         ({} pred / {} gt / {} matched)",
        m.precision, m.recall, m.f1, m.n_pred, m.n_gt, m.n_matched
    )
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    if !(args.threshold > 0.0 && args.threshold <= 1.0) {
        return Err(invalid(format!(
            "threshold must be in (0, 1], got {}",
            args.threshold
        )));
    }
    let pred = read_event_set(&args.pred, args.clip_len_s)?;
    let gt = read_event_set(&args.gt, args.clip_len_s)?;
    let report = evaluate(&pred, &gt, args.threshold, args.state_blind);

    let empty: Vec<LabeledEvent> = Vec::new();
    let mut out = BufWriter::new(io::stdout().lock());
    for (clip_id, classes) in &report.per_clip {
        for (class, clip_eval) in classes {
            let key = (clip_id.clone(), *class);
            print_clip_table(
                &mut out,
                clip_id,
                *class,
                pred.get(&key).unwrap_or(&empty),
                gt.get(&key).unwrap_or(&empty),
                clip_eval,
            )?;
        }
    }

    writeln!(out, "-- per class --")?;
    for (class, metrics) in &report.per_class {
        print_metrics_line(&mut out, &class.to_string(), metrics)?;
        let clips_total = report
            .per_clip
            .values()
            .filter(|c| c.contains_key(class))
            .count();
        let clips_exact = report
            .per_clip
            .values()
            .filter(|c| c.get(class).is_some_and(|e| e.metrics.fully_correct))
            .count();
        writeln!(out, "           exact in {clips_exact}/{clips_total} clips")?;
    }
    writeln!(out, "-- overall (t-IoU >= {:.2}) --", report.threshold)?;
    print_metrics_line(&mut out, "all", &report.overall)?;
    writeln!(
        out,
        "  fully correct: {}",
        if report.overall.fully_correct { "yes" } else { "no" }
    )?;
    if !report.diff_counts.is_empty() {
        let counts = report
            .diff_counts
            .iter()
            .map(|(label, n)| format!("{n} {label}"))
            .collect::<Vec<_>>()
            .join(", ");
        writeln!(out, "  diffs: {counts}")?;
    }
    let sweep = report
        .sweep
        .iter()
        .map(|(t, m)| format!(">= {t:.1}: F1 {:.3}", m.f1))
        .collect::<Vec<_>>()
        .join("  |  ");
    writeln!(out, "  sweep: {sweep}")?;
    out.flush()?;

    if let Some(path) = &args.report {
        let file = File::create(path).map_err(|e| at_path(e.into(), path))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &report)?;
    }
    Ok(())
}

// --- synth -----------------------------------------------------------------

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let cfg = args.config.load()?;
    let script =
        Script::from_toml_path(&args.script).map_err(|e| at_path(e.into(), &args.script))?;
    let clips = generate(&script, &cfg, args.seed)?;

    let detections: Vec<ClipDetections> = clips
        .iter()
        .map(|c| ClipDetections {
            clip_id: c.clip_id.clone(),
            frames: c.frames.clone(),
        })
        .collect();
    write_detections_path(&args.out_detections, &detections)
        .map_err(|e| at_path(e.into(), &args.out_detections))?;

    if let Some(path) = &args.out_truth {
        let mut records = Vec::new();
        for clip in &clips {
            records.extend(events_to_records(
                &cfg.camera_id,
                &clip.clip_id,
                &clip.ground_truth,
                &cfg,
            ));
        }
        write_events_path(path, &records).map_err(|e| at_path(e.into(), path))?;
    }
    log::info!("rendered {} clips", clips.len());
    Ok(())
}

// --- curate ----------------------------------------------------------------

#[derive(Serialize)]
struct FramePick {
    frame_idx: usize,
}

fn curate_select(args: SelectArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&args.keep_fraction) {
        return Err(invalid(format!(
            "keep_fraction must be in [0, 1], got {}",
            args.keep_fraction
        )));
    }
    let records =
        read_embeddings_path(&args.embeddings).map_err(|e| at_path(e.into(), &args.embeddings))?;
    let embeddings: Vec<Vec<f64>> = records.iter().map(|r| r.embedding.clone()).collect();
    let picked = select_informative(&embeddings, args.keep_fraction);

    let mut out = out_writer(&args.out)?;
    for i in &picked {
        // report the frame's own index, not its position in the file
        serde_json::to_writer(&mut out, &FramePick { frame_idx: records[*i].frame_idx })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    log::info!("kept {} of {} frames", picked.len(), records.len());
    Ok(())
}

#[derive(Serialize)]
struct ClipPick<'a> {
    clip_id: &'a str,
}

fn curate_sample(args: SampleArgs) -> Result<(), Failure> {
    let clips = read_clip_meta_path(&args.clips).map_err(|e| at_path(e.into(), &args.clips))?;
    let picked = stratified_sample(&clips, args.n, args.seed);
    if picked.len() < args.n {
        log::warn!(
            "asked for {} clips but only {} exist; returning all of them",
            args.n,
            picked.len()
        );
    }
    let mut out = out_writer(&args.out)?;
    for clip_id in &picked {
        serde_json::to_writer(&mut out, &ClipPick { clip_id })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
