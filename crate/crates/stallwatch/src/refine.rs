//! Post-clip track refinement: decide each track's class, then merge tracks
//! that plainly belong to one physical object.
//!
//! The tracker fragments identities whenever an object leaves the frame (or a
//! blind spot) long enough for its track to be retired. Two tracks of the
//! same class that never co-occur on a frame are taken to be the same object;
//! the frames in between stay unexplained ("gaps") for the event stage to
//! reason about.

use crate::geometry::BBox;
use crate::tracking::{ObjectClass, Track};
use std::collections::{BTreeMap, BTreeSet};

/// A track with its final class decided.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifiedTrack {
    pub track: Track,
    pub class: ObjectClass,
}

/// Pick a track's class: highest cumulative score wins; ties fall to the
/// higher single-frame score, then to class name order.
pub fn assign_class(track: &Track) -> ObjectClass {
    let mut best = ObjectClass::ALL[0];
    let mut best_sum = f64::NEG_INFINITY;
    let mut best_single = f64::NEG_INFINITY;
    for class in ObjectClass::ALL {
        let sum = track.class_scores_sum.get(&class).copied().unwrap_or(0.0);
        let single = track.max_single_frame_score(class);
        if sum > best_sum || (sum == best_sum && single > best_single) {
            best = class;
            best_sum = sum;
            best_single = single;
        }
    }
    best
}

/// What a refined object knows about one sampled frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimelineSlot {
    /// A matched detection was observed here.
    Detected(BBox),
    /// The tracker coasted through this frame inside one track; the box is
    /// interpolated between the neighbouring detections.
    Bridged(BBox),
}

impl TimelineSlot {
    pub fn bbox(&self) -> &BBox {
        match self {
            TimelineSlot::Detected(b) | TimelineSlot::Bridged(b) => b,
        }
    }
}

/// One physical object over a clip: merged tracks of one class, with a
/// per-frame timeline from first to last detection. Frames without a slot
/// are gaps — the object was not localized there.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedObject {
    pub id: u64,
    pub class: ObjectClass,
    /// Ids of the merged tracks, in merge order.
    pub source_track_ids: Vec<u64>,
    timeline: BTreeMap<usize, TimelineSlot>,
}

impl RefinedObject {
    pub fn first_frame(&self) -> usize {
        *self.timeline.keys().next().expect("timeline is never empty")
    }

    pub fn last_frame(&self) -> usize {
        *self.timeline.keys().next_back().expect("timeline is never empty")
    }

    pub fn slot_at(&self, frame: usize) -> Option<&TimelineSlot> {
        self.timeline.get(&frame)
    }

    pub fn box_at(&self, frame: usize) -> Option<&BBox> {
        self.timeline.get(&frame).map(TimelineSlot::bbox)
    }

    /// Frames holding a real detection.
    pub fn detected_frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.timeline.iter().filter_map(|(f, s)| match s {
            TimelineSlot::Detected(_) => Some(*f),
            TimelineSlot::Bridged(_) => None,
        })
    }

    /// Most recent frame at or before `frame` that holds a box.
    pub fn last_box_at_or_before(&self, frame: usize) -> Option<(usize, &BBox)> {
        self.timeline
            .range(..=frame)
            .next_back()
            .map(|(f, s)| (*f, s.bbox()))
    }
}

fn track_support(track: &Track) -> BTreeSet<usize> {
    track.observations.iter().map(|d| d.frame_idx).collect()
}

/// Merge same-class tracks with disjoint frame support into single objects.
///
/// Greedy, in ascending first-frame order (ties by track id): each track
/// joins the earliest-created object of its class it never co-occurs with,
/// or founds a new one. Object ids are 1-based in creation order.
pub fn merge_tracks(tracks: Vec<ClassifiedTrack>) -> Vec<RefinedObject> {
    struct Group {
        class: ObjectClass,
        members: Vec<Track>,
        support: BTreeSet<usize>,
    }

    let mut ordered = tracks;
    ordered.sort_by_key(|ct| (ct.track.first_frame(), ct.track.id));

    let mut groups: Vec<Group> = Vec::new();
    for ct in ordered {
        let support = track_support(&ct.track);
        let slot = groups.iter_mut().find(|g| {
            g.class == ct.class && g.support.intersection(&support).next().is_none()
        });
        match slot {
            Some(g) => {
                g.support.extend(support.iter().copied());
                g.members.push(ct.track);
            }
            None => groups.push(Group {
                class: ct.class,
                members: vec![ct.track],
                support,
            }),
        }
    }

    groups
        .into_iter()
        .enumerate()
        .map(|(idx, g)| {
            let mut timeline = BTreeMap::new();
            for track in &g.members {
                for d in &track.observations {
                    let prev = timeline.insert(d.frame_idx, TimelineSlot::Detected(d.bbox));
                    debug_assert!(prev.is_none(), "disjoint supports guarantee one box per frame");
                }
            }
            // Fill the frames a single track coasted through. Such stretches
            // are at most max_age long (the track would have been retired
            // otherwise), so the tracker itself vouches for the identity.
            // Gaps *between* merged tracks are genuine disappearances and
            // stay open.
            for track in &g.members {
                for pair in track.observations.windows(2) {
                    let (f0, b0) = (pair[0].frame_idx, pair[0].bbox);
                    let (f1, b1) = (pair[1].frame_idx, pair[1].bbox);
                    for f in (f0 + 1)..f1 {
                        let t = (f - f0) as f64 / (f1 - f0) as f64;
                        timeline
                            .entry(f)
                            .or_insert_with(|| TimelineSlot::Bridged(lerp_box(&b0, &b1, t)));
                    }
                }
            }
            RefinedObject {
                id: (idx + 1) as u64,
                class: g.class,
                source_track_ids: g.members.iter().map(|t| t.id).collect(),
                timeline,
            }
        })
        .collect()
}

/// Classify every track, then merge. The usual entry point after
/// `Tracker::finalize`.
pub fn refine(tracks: Vec<Track>) -> Vec<RefinedObject> {
    merge_tracks(
        tracks
            .into_iter()
            .map(|track| ClassifiedTrack {
                class: assign_class(&track),
                track,
            })
            .collect(),
    )
}

fn lerp_box(a: &BBox, b: &BBox, t: f64) -> BBox {
    BBox::new(
        a.x + (b.x - a.x) * t,
        a.y + (b.y - a.y) * t,
        a.w + (b.w - a.w) * t,
        a.h + (b.h - a.h) * t,
    )
}
