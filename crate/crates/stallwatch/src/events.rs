//! From per-frame detections to presence events.
//!
//! One clip is processed per class in five stages:
//!
//! 1. **Localize** — every refined object gets a per-frame state from its
//!    first detection to the end of the clip: `Inside` when its box overlaps
//!    the stall floor, `Outside` when it does not, `NotLocalized` when it has
//!    no box (a merge gap, or every frame after its last detection). Frames
//!    before an object's first detection contribute nothing.
//! 2. **Discard** — objects that are never inside during the clip are
//!    dropped wholesale; a passer-by in the aisle should not produce events.
//! 3. **Aggregate** — the surviving per-object states on each frame fold
//!    into one frame state per class ([`aggregate_frame`]).
//! 4. **Resolve gaps** — runs of `NotLocalized` frames become events whose
//!    real state is decided from where each missing object was last seen:
//!    gone near the entrance means it left, gone anywhere else inside means
//!    it is still there but hidden.
//! 5. **Carry over** — a clip that starts empty right after a clip that
//!    ended with something hidden inside keeps the hidden label
//!    ([`correct_inter_clip`]).
//!
//! The result per class is a run of [`Event`]s exactly tiling the clip.

use crate::config::StallConfig;
use crate::geometry::{box_polygon_intersects, dist_to_segment, touches_frame_edge};
use crate::refine::{refine, RefinedObject};
use crate::tracking::{Detection, ObjectClass, TrackError, Tracker};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("clip has {got} sampled frames, config expects {expected}")]
    WrongFrameCount { expected: usize, got: usize },
    #[error("detection at slot {slot} carries frame_idx {found}")]
    FrameIndexMismatch { slot: usize, found: usize },
    #[error(transparent)]
    Track(#[from] TrackError),
}

/// Where one object is on one sampled frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ObjectFrameState {
    /// Has a box overlapping the stall floor.
    Inside,
    /// Has a box clear of the floor.
    Outside,
    /// Known to exist but has no box on this frame.
    NotLocalized,
}

/// Per-class state of one sampled frame, and — once gaps are resolved — of
/// one event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventState {
    /// Nothing of the class anywhere in frame.
    OutsideInvisible,
    /// Present in frame but clear of the stall floor.
    OutsideVisible,
    /// Somebody is unaccounted for; resolved before events are reported.
    NotLocalized,
    /// Exactly one object on the stall floor.
    InsideVisible,
    /// Two or more objects on the stall floor.
    MultipleInsideVisible,
    /// In the stall but hidden (blind spot, occlusion, lying out of view).
    InsideInvisible,
}

impl EventState {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventState::OutsideInvisible => "outside_invisible",
            EventState::OutsideVisible => "outside_visible",
            EventState::NotLocalized => "not_localized",
            EventState::InsideVisible => "inside_visible",
            EventState::MultipleInsideVisible => "multiple_inside_visible",
            EventState::InsideInvisible => "inside_invisible",
        }
    }
}

impl fmt::Display for EventState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "outside_invisible" => Ok(EventState::OutsideInvisible),
            "outside_visible" => Ok(EventState::OutsideVisible),
            "not_localized" => Ok(EventState::NotLocalized),
            "inside_visible" => Ok(EventState::InsideVisible),
            "multiple_inside_visible" => Ok(EventState::MultipleInsideVisible),
            "inside_invisible" => Ok(EventState::InsideInvisible),
            other => Err(format!("unknown event state {other:?}")),
        }
    }
}

/// A maximal run of sampled frames in one state, for one class.
/// `end_frame` is exclusive; consecutive events of a clip abut.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub state: EventState,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl Event {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.end_frame == self.start_frame
    }
}

/// Fold the per-object states present on one frame into the frame's state.
/// Anything inside outranks the rest; an unaccounted-for object outranks
/// everything merely outside.
pub fn aggregate_frame(states: &[ObjectFrameState]) -> EventState {
    let inside = states.iter().filter(|s| **s == ObjectFrameState::Inside).count();
    let not_localized = states
        .iter()
        .filter(|s| **s == ObjectFrameState::NotLocalized)
        .count();
    if inside >= 2 {
        EventState::MultipleInsideVisible
    } else if inside == 1 {
        EventState::InsideVisible
    } else if not_localized >= 1 {
        EventState::NotLocalized
    } else if !states.is_empty() {
        EventState::OutsideVisible
    } else {
        EventState::OutsideInvisible
    }
}

/// Compress a per-frame state sequence into maximal same-state runs.
pub fn merge_temporal(frame_states: &[EventState]) -> Vec<Event> {
    let mut events: Vec<Event> = Vec::new();
    for (f, &state) in frame_states.iter().enumerate() {
        match events.last_mut() {
            Some(last) if last.state == state && last.end_frame == f => last.end_frame = f + 1,
            _ => events.push(Event {
                state,
                start_frame: f,
                end_frame: f + 1,
            }),
        }
    }
    events
}

/// Relabel the leading empty-stall events of a clip when the previous clip
/// ended with something hidden inside: the stall only looks empty. Walks
/// from the first event while states are `OutsideInvisible` and stops at the
/// first event that says otherwise. Only labels change, never boundaries.
pub fn correct_inter_clip(events: &mut [Event], prev_tail: Option<EventState>) {
    if prev_tail != Some(EventState::InsideInvisible) {
        return;
    }
    for e in events.iter_mut() {
        if e.state == EventState::OutsideInvisible {
            e.state = EventState::InsideInvisible;
        } else {
            break;
        }
    }
}

/// Per-frame states of one object, keyed by frame, from its first detection
/// to the end of the clip. Frames after the last detection are
/// `NotLocalized`: until the clip ends we cannot tell "left for good" from
/// "hidden", so the question is kept open for the gap resolver.
fn object_frame_states(
    obj: &RefinedObject,
    n_frames: usize,
    cfg: &StallConfig,
) -> BTreeMap<usize, ObjectFrameState> {
    let mut states = BTreeMap::new();
    for f in obj.first_frame()..n_frames {
        let state = match obj.box_at(f) {
            Some(b) => {
                if box_polygon_intersects(b, &cfg.floor_polygon, cfg.min_area_ratio) {
                    ObjectFrameState::Inside
                } else {
                    ObjectFrameState::Outside
                }
            }
            None => ObjectFrameState::NotLocalized,
        };
        states.insert(f, state);
    }
    states
}

/// Decide what a gap means for one object: `InsideInvisible` if it vanished
/// while on the stall floor away from the entrance (or while touching a
/// border the stall continues past), `OutsideInvisible` otherwise. `None`
/// when the object is accounted for on every frame of the event.
fn resolve_gap_for_object(
    obj: &RefinedObject,
    states: &BTreeMap<usize, ObjectFrameState>,
    event: &Event,
    cfg: &StallConfig,
) -> Option<EventState> {
    let first_missing = (event.start_frame..event.end_frame)
        .find(|f| states.get(f) == Some(&ObjectFrameState::NotLocalized))?;
    let prior = if first_missing == 0 {
        None
    } else {
        obj.last_box_at_or_before(first_missing - 1)
    };
    let Some((_, last_box)) = prior else {
        // Never seen before it went missing: nothing ties it to the stall.
        return Some(EventState::OutsideInvisible);
    };
    if !box_polygon_intersects(last_box, &cfg.floor_polygon, cfg.min_area_ratio) {
        return Some(EventState::OutsideInvisible);
    }
    let touched = touches_frame_edge(last_box, &cfg.frame, cfg.edge_margin_px);
    if cfg.interior_edges.iter().any(|e| touched.contains(e)) {
        // Walked out of frame along a border the stall continues past:
        // still inside, whatever the entrance distance says.
        return Some(EventState::InsideInvisible);
    }
    if dist_to_segment(last_box.bottom_center(), &cfg.entrance) <= cfg.entrance_dist_px {
        return Some(EventState::OutsideInvisible);
    }
    Some(EventState::InsideInvisible)
}

/// Replace every `NotLocalized` event with its resolved state. If any
/// missing object is judged still inside, the event is `InsideInvisible`.
fn resolve_gaps(
    events: &mut [Event],
    objects: &[(&RefinedObject, BTreeMap<usize, ObjectFrameState>)],
    cfg: &StallConfig,
) {
    for event in events.iter_mut() {
        if event.state != EventState::NotLocalized {
            continue;
        }
        let mut resolved = EventState::OutsideInvisible;
        for (obj, states) in objects {
            if resolve_gap_for_object(obj, states, event, cfg)
                == Some(EventState::InsideInvisible)
            {
                resolved = EventState::InsideInvisible;
                break;
            }
        }
        event.state = resolved;
    }
}

fn events_for_class(
    class_objects: &[&RefinedObject],
    n_frames: usize,
    prev_tail: Option<EventState>,
    cfg: &StallConfig,
) -> Vec<Event> {
    let localized: Vec<(&RefinedObject, BTreeMap<usize, ObjectFrameState>)> = class_objects
        .iter()
        .map(|o| (*o, object_frame_states(o, n_frames, cfg)))
        .filter(|(_, states)| states.values().any(|s| *s == ObjectFrameState::Inside))
        .collect();

    let frame_states: Vec<EventState> = (0..n_frames)
        .map(|f| {
            let on_frame: Vec<ObjectFrameState> = localized
                .iter()
                .filter_map(|(_, states)| states.get(&f).copied())
                .collect();
            aggregate_frame(&on_frame)
        })
        .collect();

    let mut events = merge_temporal(&frame_states);
    resolve_gaps(&mut events, &localized, cfg);
    correct_inter_clip(&mut events, prev_tail);
    events
}

/// Run the whole pipeline over one clip's sampled frames.
///
/// `frames[i]` holds the detections of sampled frame `i` (already
/// thresholded); its length must match the clip length in the config.
/// `prev_tails` carries the state each class ended the previous clip in, if
/// any. Returns the per-class event runs; every class is present and its
/// events tile `[0, frames_per_clip)` exactly.
pub fn run_pipeline(
    frames: &[Vec<Detection>],
    prev_tails: &BTreeMap<ObjectClass, EventState>,
    cfg: &StallConfig,
) -> Result<BTreeMap<ObjectClass, Vec<Event>>, EventError> {
    let n = cfg.frames_per_clip();
    if frames.len() != n {
        return Err(EventError::WrongFrameCount {
            expected: n,
            got: frames.len(),
        });
    }
    for (slot, dets) in frames.iter().enumerate() {
        if let Some(d) = dets.iter().find(|d| d.frame_idx != slot) {
            return Err(EventError::FrameIndexMismatch {
                slot,
                found: d.frame_idx,
            });
        }
    }

    let mut tracker = Tracker::new(cfg.tracker)?;
    for (idx, dets) in frames.iter().enumerate() {
        tracker.step(idx, dets)?;
    }
    let objects = refine(tracker.finalize());

    let mut out = BTreeMap::new();
    for class in ObjectClass::ALL {
        let class_objects: Vec<&RefinedObject> =
            objects.iter().filter(|o| o.class == class).collect();
        out.insert(
            class,
            events_for_class(&class_objects, n, prev_tails.get(&class).copied(), cfg),
        );
    }
    Ok(out)
}

/// Clip-by-clip driver that remembers how each class ended the last clip,
/// so hidden-inside labels survive clip boundaries.
pub struct EventPipeline<'a> {
    cfg: &'a StallConfig,
    tails: BTreeMap<ObjectClass, EventState>,
}

impl<'a> EventPipeline<'a> {
    pub fn new(cfg: &'a StallConfig) -> Self {
        Self {
            cfg,
            tails: BTreeMap::new(),
        }
    }

    /// Resume from known end-of-clip states (e.g. read back from an event
    /// file).
    pub fn with_tails(cfg: &'a StallConfig, tails: BTreeMap<ObjectClass, EventState>) -> Self {
        Self { cfg, tails }
    }

    pub fn process_clip(
        &mut self,
        frames: &[Vec<Detection>],
    ) -> Result<BTreeMap<ObjectClass, Vec<Event>>, EventError> {
        let events = run_pipeline(frames, &self.tails, self.cfg)?;
        for (class, evs) in &events {
            if let Some(last) = evs.last() {
                self.tails.insert(*class, last.state);
            }
        }
        Ok(events)
    }

    pub fn tails(&self) -> &BTreeMap<ObjectClass, EventState> {
        &self.tails
    }
}
