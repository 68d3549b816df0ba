//! Stall monitoring from per-frame object detections: who is in the stall,
//! when, and where they went.
//!
//! The input is detector output for one fixed camera — boxes with horse and
//! person scores on a 1 Hz frame grid, one minute of video per clip. The
//! output is an event log per class: maximal runs of a frame state such as
//! `inside_visible` or `outside_invisible`, tiling each clip exactly.
//!
//! The crate is organized along the processing path:
//!
//! - [`config`] — the per-camera description (floor polygon, entrance,
//!   sampling grid, thresholds) everything else consumes.
//! - [`tracking`] — Kalman-filtered, IoU-gated association of detections
//!   into identity-stable tracks, built on [`assignment`].
//! - [`refine`] — per-track class decisions and the merging of tracks that
//!   never coexist into whole objects, with coasted gaps bridged.
//! - [`geometry`] — boxes, polygons, and the point/overlap tests behind
//!   "on the floor or off it".
//! - [`events`] — the per-frame state machine and its run-length encoding
//!   into events, including blind-spot resolution and the carry-over of
//!   state across clip boundaries.
//! - [`eval`] — optimal t-IoU matching of predicted against ground-truth
//!   events, with a diff taxonomy and precision/recall/F1 reporting.
//! - [`sim`] — scripted scenarios rendered into detections plus their true
//!   event log, for end-to-end verification without footage.
//! - [`curation`] — choosing which frames and clips to annotate next.
//! - [`formats`] — the JSONL wire formats and TOML loaders binding it all
//!   to files.
//!
//! The typical loop is [`formats::read_detections_path`] →
//! [`events::EventPipeline::process_clip`] → [`formats::write_events_path`],
//! one clip at a time.

pub mod assignment;
pub mod config;
pub mod curation;
pub mod eval;
pub mod events;
pub mod formats;
pub mod geometry;
pub mod refine;
pub mod sim;
pub mod tracking;
