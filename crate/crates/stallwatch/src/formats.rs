//! On-disk formats: JSONL detections, JSONL event runs, JSONL embeddings and
//! clip metadata.
//!
//! Detections arrive one record per sampled frame:
//!
//! ```json
//! {"clip_id":"clip-000","frame_idx":3,"boxes":[{"x":512.0,"y":300.0,"w":80.0,"h":60.0,"scores":{"horse":0.92,"person":0.03},"confidence":0.97}]}
//! ```
//!
//! Event files start with a schema line, then one record per event:
//!
//! ```json
//! {"schema":"stall-events","version":1}
//! {"camera_id":"barn3-cam1","clip_id":"clip-000","class":"horse","state":"inside_visible","start_s":0.0,"end_s":60.0}
//! ```
//!
//! Readers are strict about structure (malformed records, duplicate frames,
//! misordered events are errors) but lenient about measurement mess: boxes
//! poking out of the frame are clamped with a warning, and event runs that
//! fail to tile their clip exactly are reported as warnings so imperfect
//! third-party files can still be evaluated.

use crate::config::StallConfig;
use crate::eval::{EventSet, LabeledEvent};
use crate::events::{Event, EventState};
use crate::geometry::BBox;
use crate::tracking::{Detection, ObjectClass};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {msg}")]
    BadRecord { line: usize, msg: String },
    #[error("duplicate record for clip {clip_id:?} frame {frame_idx}")]
    DuplicateFrame { clip_id: String, frame_idx: usize },
    #[error("clip {clip_id:?} frame {frame_idx} out of range (clips have {frames_per_clip} sampled frames)")]
    FrameOutOfRange {
        clip_id: String,
        frame_idx: usize,
        frames_per_clip: usize,
    },
    #[error("line {line}: events are not sorted by (clip_id, class, start_s)")]
    UnsortedEvents { line: usize },
    #[error("event file {path:?} already covers clip {latest:?}; refusing to append {incoming:?}")]
    AppendOutOfOrder {
        path: String,
        latest: String,
        incoming: String,
    },
}

fn bad(line: usize, msg: impl Into<String>) -> FormatError {
    FormatError::BadRecord {
        line,
        msg: msg.into(),
    }
}

// ---------------------------------------------------------------------------
// detections

/// One box of one detection record, flat on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub scores: BTreeMap<ObjectClass, f64>,
    pub confidence: f64,
}

/// The detections of one sampled frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub clip_id: String,
    pub frame_idx: usize,
    pub boxes: Vec<BoxRecord>,
}

/// One clip's detections, padded to exactly `frames_per_clip` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipDetections {
    pub clip_id: String,
    pub frames: Vec<Vec<Detection>>,
}

/// Parsed detections plus anything worth telling the user about.
#[derive(Debug)]
pub struct DetectionFile {
    pub clips: Vec<ClipDetections>,
    pub warnings: Vec<String>,
}

fn clamp_box_record(b: &BoxRecord, cfg: &StallConfig) -> (BBox, bool) {
    let w = b.w.min(cfg.frame.width);
    let h = b.h.min(cfg.frame.height);
    let x = b.x.clamp(0.0, cfg.frame.width - w);
    let y = b.y.clamp(0.0, cfg.frame.height - h);
    let clamped = x != b.x || y != b.y || w != b.w || h != b.h;
    (BBox::new(x, y, w, h), clamped)
}

/// Read a detections file: drops boxes below the configured confidence,
/// clamps boxes poking out of the frame (with a warning), errors on
/// duplicate or out-of-range frames, and returns clips in ascending
/// `clip_id` order with missing frames left empty.
pub fn read_detections(
    reader: impl BufRead,
    cfg: &StallConfig,
) -> Result<DetectionFile, FormatError> {
    let frames_per_clip = cfg.frames_per_clip();
    let mut clips: BTreeMap<String, Vec<Vec<Detection>>> = BTreeMap::new();
    let mut seen: BTreeSet<(String, usize)> = BTreeSet::new();
    let mut warnings = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord =
            serde_json::from_str(&line).map_err(|source| FormatError::Json {
                line: line_no,
                source,
            })?;
        if rec.frame_idx >= frames_per_clip {
            return Err(FormatError::FrameOutOfRange {
                clip_id: rec.clip_id,
                frame_idx: rec.frame_idx,
                frames_per_clip,
            });
        }
        if !seen.insert((rec.clip_id.clone(), rec.frame_idx)) {
            return Err(FormatError::DuplicateFrame {
                clip_id: rec.clip_id,
                frame_idx: rec.frame_idx,
            });
        }
        let frames = clips
            .entry(rec.clip_id.clone())
            .or_insert_with(|| vec![Vec::new(); frames_per_clip]);
        for (bi, b) in rec.boxes.iter().enumerate() {
            let finite = [b.x, b.y, b.w, b.h, b.confidence]
                .iter()
                .all(|v| v.is_finite())
                && b.scores.values().all(|v| v.is_finite());
            if !finite {
                return Err(bad(
                    line_no,
                    format!("box {bi} of clip {:?} frame {} has non-finite numbers", rec.clip_id, rec.frame_idx),
                ));
            }
            if b.w <= 0.0 || b.h <= 0.0 {
                return Err(bad(
                    line_no,
                    format!("box {bi} of clip {:?} frame {} has non-positive size", rec.clip_id, rec.frame_idx),
                ));
            }
            if b.scores.is_empty() {
                return Err(bad(
                    line_no,
                    format!("box {bi} of clip {:?} frame {} has no class scores", rec.clip_id, rec.frame_idx),
                ));
            }
            if b.confidence < cfg.confidence_threshold {
                continue;
            }
            let (bbox, clamped) = clamp_box_record(b, cfg);
            if clamped {
                let msg = format!(
                    "clip {:?} frame {}: box ({}, {}, {}, {}) clamped into the {}x{} frame",
                    rec.clip_id, rec.frame_idx, b.x, b.y, b.w, b.h, cfg.frame.width, cfg.frame.height
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            frames[rec.frame_idx].push(Detection {
                frame_idx: rec.frame_idx,
                bbox,
                scores: b.scores.clone(),
                confidence: b.confidence,
            });
        }
    }

    Ok(DetectionFile {
        clips: clips
            .into_iter()
            .map(|(clip_id, frames)| ClipDetections { clip_id, frames })
            .collect(),
        warnings,
    })
}

pub fn read_detections_path(
    path: impl AsRef<Path>,
    cfg: &StallConfig,
) -> Result<DetectionFile, FormatError> {
    read_detections(BufReader::new(std::fs::File::open(path)?), cfg)
}

/// Write detections, one record per sampled frame, empty frames included,
/// clips in ascending id order.
pub fn write_detections(
    mut writer: impl Write,
    clips: &[ClipDetections],
) -> Result<(), FormatError> {
    let mut ordered: Vec<&ClipDetections> = clips.iter().collect();
    ordered.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    for clip in ordered {
        for (frame_idx, dets) in clip.frames.iter().enumerate() {
            let rec = DetectionRecord {
                clip_id: clip.clip_id.clone(),
                frame_idx,
                boxes: dets
                    .iter()
                    .map(|d| BoxRecord {
                        x: d.bbox.x,
                        y: d.bbox.y,
                        w: d.bbox.w,
                        h: d.bbox.h,
                        scores: d.scores.clone(),
                        confidence: d.confidence,
                    })
                    .collect(),
            };
            serde_json::to_writer(&mut writer, &rec).map_err(io::Error::from)?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// events

const EVENT_SCHEMA: &str = "stall-events";
const EVENT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventHeader {
    schema: String,
    version: u32,
}

/// One reported event on the wire. Times are clip-relative seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventRecord {
    pub camera_id: String,
    pub clip_id: String,
    pub class: ObjectClass,
    pub state: EventState,
    pub start_s: f64,
    pub end_s: f64,
    /// Wall-clock anchor for `start_s`, ISO-8601. Optional metadata: all
    /// event math stays clip-relative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_start: Option<String>,
}

/// Parsed event file: records in file order plus partition warnings.
#[derive(Debug)]
pub struct EventFile {
    pub records: Vec<EventRecord>,
    pub warnings: Vec<String>,
}

/// Flatten one clip's pipeline output into wire records, classes in order.
pub fn events_to_records(
    camera_id: &str,
    clip_id: &str,
    events: &BTreeMap<ObjectClass, Vec<Event>>,
    cfg: &StallConfig,
) -> Vec<EventRecord> {
    let mut records = Vec::new();
    for (class, evs) in events {
        for e in evs {
            records.push(EventRecord {
                camera_id: camera_id.to_string(),
                clip_id: clip_id.to_string(),
                class: *class,
                state: e.state,
                start_s: cfg.frame_time_s(e.start_frame),
                end_s: cfg.frame_time_s(e.end_frame),
                wall_clock_start: None,
            });
        }
    }
    records
}

/// Group records for the evaluator, keyed by clip and class.
pub fn records_to_event_set(records: &[EventRecord]) -> EventSet {
    let mut set: EventSet = BTreeMap::new();
    for r in records {
        set.entry((r.clip_id.clone(), r.class))
            .or_default()
            .push(LabeledEvent {
                state: r.state,
                start_s: r.start_s,
                end_s: r.end_s,
            });
    }
    set
}

fn record_sort_key(r: &EventRecord) -> (String, ObjectClass, f64) {
    (r.clip_id.clone(), r.class, r.start_s)
}

fn write_event_records(mut writer: impl Write, records: &[EventRecord]) -> Result<(), FormatError> {
    let mut ordered: Vec<&EventRecord> = records.iter().collect();
    ordered.sort_by(|a, b| {
        let (ac, acl, asr) = record_sort_key(a);
        let (bc, bcl, bsr) = record_sort_key(b);
        (ac, acl).cmp(&(bc, bcl)).then(asr.total_cmp(&bsr))
    });
    for r in ordered {
        serde_json::to_writer(&mut writer, r).map_err(io::Error::from)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Write a fresh event file: schema line first, then the records sorted by
/// (clip, class, start).
pub fn write_events(mut writer: impl Write, records: &[EventRecord]) -> Result<(), FormatError> {
    let header = EventHeader {
        schema: EVENT_SCHEMA.to_string(),
        version: EVENT_SCHEMA_VERSION,
    };
    serde_json::to_writer(&mut writer, &header).map_err(io::Error::from)?;
    writer.write_all(b"\n")?;
    write_event_records(writer, records)
}

pub fn write_events_path(
    path: impl AsRef<Path>,
    records: &[EventRecord],
) -> Result<(), FormatError> {
    write_events(io::BufWriter::new(std::fs::File::create(path)?), records)
}

pub fn write_detections_path(
    path: impl AsRef<Path>,
    clips: &[ClipDetections],
) -> Result<(), FormatError> {
    write_detections(io::BufWriter::new(std::fs::File::create(path)?), clips)
}

/// Read an event file. Structural problems are errors; an event run that
/// fails to tile `[0, clip_len_s]` for its clip and class is only warned
/// about, so imperfect files can still be loaded and scored.
pub fn read_events(reader: impl BufRead, clip_len_s: f64) -> Result<EventFile, FormatError> {
    let mut records: Vec<EventRecord> = Vec::new();
    let mut warnings: Vec<String> = Vec::new();
    let mut saw_any_line = false;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if !saw_any_line {
            saw_any_line = true;
            if let Ok(h) = serde_json::from_str::<EventHeader>(&line) {
                if h.schema != EVENT_SCHEMA {
                    return Err(bad(line_no, format!("unknown schema {:?}", h.schema)));
                }
                if h.version != EVENT_SCHEMA_VERSION {
                    return Err(bad(
                        line_no,
                        format!(
                            "unsupported {} version {} (expected {})",
                            h.schema, h.version, EVENT_SCHEMA_VERSION
                        ),
                    ));
                }
                continue;
            }
            let msg = "event file has no schema line".to_string();
            log::warn!("{msg}");
            warnings.push(msg);
        }
        let rec: EventRecord =
            serde_json::from_str(&line).map_err(|source| FormatError::Json {
                line: line_no,
                source,
            })?;
        if !(rec.start_s.is_finite() && rec.end_s.is_finite()) || rec.start_s < 0.0 {
            return Err(bad(line_no, "event times must be finite and non-negative"));
        }
        if rec.end_s <= rec.start_s {
            return Err(bad(
                line_no,
                format!("event ends at {} before it starts at {}", rec.end_s, rec.start_s),
            ));
        }
        if rec.state == EventState::NotLocalized {
            return Err(bad(
                line_no,
                "not_localized is an intermediate state and never valid in a file",
            ));
        }
        if let Some(prev) = records.last() {
            let ord = (prev.clip_id.as_str(), prev.class, prev.start_s);
            let cur = (rec.clip_id.as_str(), rec.class, rec.start_s);
            if (cur.0, cur.1) < (ord.0, ord.1)
                || ((cur.0, cur.1) == (ord.0, ord.1) && cur.2 <= ord.2)
            {
                return Err(FormatError::UnsortedEvents { line: line_no });
            }
        }
        records.push(rec);
    }

    // Partition check per clip and class: warn, never fail.
    let mut by_key: BTreeMap<(&str, ObjectClass), Vec<&EventRecord>> = BTreeMap::new();
    for r in &records {
        by_key.entry((&r.clip_id, r.class)).or_default().push(r);
    }
    for ((clip, class), evs) in by_key {
        let mut complain = |msg: String| {
            log::warn!("{msg}");
            warnings.push(msg);
        };
        if evs[0].start_s != 0.0 {
            complain(format!(
                "clip {clip:?} {class}: first event starts at {}s, not 0",
                evs[0].start_s
            ));
        }
        for pair in evs.windows(2) {
            if pair[0].end_s != pair[1].start_s {
                complain(format!(
                    "clip {clip:?} {class}: gap or overlap between {}s and {}s",
                    pair[0].end_s, pair[1].start_s
                ));
            }
        }
        let last_end = evs[evs.len() - 1].end_s;
        if last_end != clip_len_s {
            complain(format!(
                "clip {clip:?} {class}: last event ends at {last_end}s, not {clip_len_s}"
            ));
        }
    }

    Ok(EventFile { records, warnings })
}

pub fn read_events_path(
    path: impl AsRef<Path>,
    clip_len_s: f64,
) -> Result<EventFile, FormatError> {
    read_events(BufReader::new(std::fs::File::open(path)?), clip_len_s)
}

/// Append records for new clips to an existing event file (or create it,
/// header included). Every incoming clip id must sort after everything
/// already in the file; anything else is refused so files stay in clip
/// order.
pub fn append_events(
    path: impl AsRef<Path>,
    records: &[EventRecord],
    clip_len_s: f64,
) -> Result<(), FormatError> {
    let path = path.as_ref();
    let existing = match std::fs::metadata(path) {
        Ok(m) if m.len() > 0 => read_events_path(path, clip_len_s)?.records,
        _ => Vec::new(),
    };
    if existing.is_empty() {
        return write_events_path(path, records);
    }
    let latest = existing
        .iter()
        .map(|r| r.clip_id.as_str())
        .max()
        .unwrap()
        .to_string();
    if let Some(filed) = records.iter().find(|r| r.clip_id.as_str() <= latest.as_str()) {
        return Err(FormatError::AppendOutOfOrder {
            path: path.display().to_string(),
            latest,
            incoming: filed.clip_id.clone(),
        });
    }
    let file = OpenOptions::new().append(true).open(path)?;
    write_event_records(io::BufWriter::new(file), records)
}

/// How each class ended the newest clip on file — the states to resume
/// from.
pub fn latest_tails(records: &[EventRecord]) -> BTreeMap<ObjectClass, EventState> {
    let mut tails = BTreeMap::new();
    let Some(last_clip) = records.iter().map(|r| r.clip_id.as_str()).max() else {
        return tails;
    };
    let mut best: BTreeMap<ObjectClass, (f64, EventState)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.clip_id == last_clip) {
        let entry = best.entry(r.class).or_insert((r.start_s, r.state));
        if r.start_s >= entry.0 {
            *entry = (r.start_s, r.state);
        }
    }
    for (class, (_, state)) in best {
        tails.insert(class, state);
    }
    tails
}

// ---------------------------------------------------------------------------
// embeddings and clip metadata

/// Per-frame feature vector used for labeling-frame selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub frame_idx: usize,
    pub embedding: Vec<f64>,
}

/// Read embeddings, returned in ascending frame order. Duplicated frames
/// and inconsistent dimensions are errors.
pub fn read_embeddings(reader: impl BufRead) -> Result<Vec<EmbeddingRecord>, FormatError> {
    let mut records: Vec<(usize, EmbeddingRecord)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord =
            serde_json::from_str(&line).map_err(|source| FormatError::Json {
                line: line_no,
                source,
            })?;
        if rec.embedding.is_empty() {
            return Err(bad(line_no, "embedding is empty"));
        }
        if rec.embedding.iter().any(|v| !v.is_finite()) {
            return Err(bad(line_no, "embedding has non-finite values"));
        }
        records.push((line_no, rec));
    }
    if let Some((_, first)) = records.first() {
        let dim = first.embedding.len();
        if let Some((line, r)) = records.iter().find(|(_, r)| r.embedding.len() != dim) {
            return Err(bad(
                *line,
                format!("embedding dimension {} differs from {}", r.embedding.len(), dim),
            ));
        }
    }
    let mut out: Vec<EmbeddingRecord> = records.into_iter().map(|(_, r)| r).collect();
    out.sort_by_key(|r| r.frame_idx);
    if let Some(pair) = out.windows(2).find(|p| p[0].frame_idx == p[1].frame_idx) {
        return Err(FormatError::DuplicateFrame {
            clip_id: String::new(),
            frame_idx: pair[0].frame_idx,
        });
    }
    Ok(out)
}

pub fn read_embeddings_path(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>, FormatError> {
    read_embeddings(BufReader::new(std::fs::File::open(path)?))
}

/// Read clip metadata for sampling. Duplicate clip ids are errors.
pub fn read_clip_meta(
    reader: impl BufRead,
) -> Result<Vec<crate::curation::ClipMeta>, FormatError> {
    let mut out: Vec<crate::curation::ClipMeta> = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: crate::curation::ClipMeta =
            serde_json::from_str(&line).map_err(|source| FormatError::Json {
                line: line_no,
                source,
            })?;
        if !seen.insert(rec.clip_id.clone()) {
            return Err(bad(line_no, format!("duplicate clip_id {:?}", rec.clip_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn read_clip_meta_path(
    path: impl AsRef<Path>,
) -> Result<Vec<crate::curation::ClipMeta>, FormatError> {
    read_clip_meta(BufReader::new(std::fs::File::open(path)?))
}
