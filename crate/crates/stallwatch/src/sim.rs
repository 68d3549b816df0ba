//! Scripted stall scenarios: synthetic detections plus the ground-truth
//! events they should decode to.
//!
//! A script places actors (horses, people) on waypoint trajectories over a
//! span of clips. An actor exists from its first waypoint time up to but not
//! including its last; between waypoints its box moves linearly. Actors can
//! carry `hidden` intervals — stretches where they are really there but the
//! detector cannot see them (blind spot, occlusion). Sampling happens at the
//! config's detector stride.
//!
//! Ground truth comes from the unperturbed script, so it stays exact no
//! matter what noise the detections get: per frame, each actor that truly
//! overlaps the stall floor counts as inside, hidden actors count as
//! unaccounted-for, and unaccounted-for runs take their label from where the
//! actor really was while hidden.

use crate::config::StallConfig;
use crate::events::{aggregate_frame, merge_temporal, Event, EventState, ObjectFrameState};
use crate::geometry::{box_polygon_intersects, BBox};
use crate::tracking::{Detection, ObjectClass};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::Deserialize;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("failed to read script")]
    Io(#[from] std::io::Error),
    #[error("failed to parse script")]
    Parse(#[from] toml::de::Error),
    #[error("invalid script: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::Invalid(msg.into())
}

/// A box an actor passes through at a given global time (seconds from the
/// start of the first clip).
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Actor {
    pub name: String,
    pub class: ObjectClass,
    /// At least two, at strictly increasing times. The actor exists over
    /// `[first.t, last.t)` and moves linearly between consecutive boxes.
    pub waypoints: Vec<Waypoint>,
    /// Global-time intervals `[start, end)` during which the actor emits no
    /// detection despite existing.
    #[serde(default)]
    pub hidden: Vec<(f64, f64)>,
}

impl Actor {
    fn exists_at(&self, t: f64) -> bool {
        t >= self.waypoints[0].t && t < self.waypoints[self.waypoints.len() - 1].t
    }

    fn hidden_at(&self, t: f64) -> bool {
        self.hidden.iter().any(|&(a, b)| t >= a && t < b)
    }

    /// The actor's true box at time `t`, `None` when it does not exist.
    fn true_box(&self, t: f64) -> Option<BBox> {
        if !self.exists_at(t) {
            return None;
        }
        let next = self.waypoints.iter().position(|w| w.t > t).unwrap();
        let (w0, w1) = (&self.waypoints[next - 1], &self.waypoints[next]);
        let f = (t - w0.t) / (w1.t - w0.t);
        Some(BBox::new(
            w0.bbox.x + (w1.bbox.x - w0.bbox.x) * f,
            w0.bbox.y + (w1.bbox.y - w0.bbox.y) * f,
            w0.bbox.w + (w1.bbox.w - w0.bbox.w) * f,
            w0.bbox.h + (w1.bbox.h - w0.bbox.h) * f,
        ))
    }
}

/// Detector imperfections, all off by default. Zeroed components draw no
/// randomness, so an all-zero model reproduces the clean detections bit for
/// bit.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Gaussian sigma added to box centers, pixels.
    pub center_jitter_px: f64,
    /// Gaussian sigma on the multiplicative width/height factor.
    pub size_jitter_ratio: f64,
    /// Chance each true detection goes missing.
    pub dropout_prob: f64,
    /// Chance a detection's class scores are swapped.
    pub class_flip_prob: f64,
    /// Expected spurious boxes per sampled frame (Poisson).
    pub spurious_rate: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            center_jitter_px: 0.0,
            size_jitter_ratio: 0.0,
            dropout_prob: 0.0,
            class_flip_prob: 0.0,
            spurious_rate: 0.0,
        }
    }
}

impl NoiseModel {
    fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("center_jitter_px", self.center_jitter_px),
            ("size_jitter_ratio", self.size_jitter_ratio),
            ("spurious_rate", self.spurious_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        for (name, p) in [
            ("dropout_prob", self.dropout_prob),
            ("class_flip_prob", self.class_flip_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

/// A scenario: how many clips to render and who does what.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    pub clips: usize,
    #[serde(default = "default_id_prefix")]
    pub id_prefix: String,
    #[serde(default)]
    pub noise: NoiseModel,
    pub actors: Vec<Actor>,
}

fn default_id_prefix() -> String {
    "clip".to_string()
}

impl Script {
    pub fn from_toml_str(s: &str) -> Result<Self, SimError> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_toml_path(path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self, cfg: &StallConfig) -> Result<(), SimError> {
        if self.clips == 0 {
            return Err(invalid("a script must render at least one clip"));
        }
        if self.id_prefix.is_empty() {
            return Err(invalid("id_prefix must not be empty"));
        }
        self.noise.validate()?;
        for actor in &self.actors {
            if actor.waypoints.len() < 2 {
                return Err(invalid(format!(
                    "actor {:?} needs at least two waypoints",
                    actor.name
                )));
            }
            for pair in actor.waypoints.windows(2) {
                if pair[1].t <= pair[0].t {
                    return Err(invalid(format!(
                        "actor {:?} waypoint times must strictly increase ({} then {})",
                        actor.name, pair[0].t, pair[1].t
                    )));
                }
            }
            for w in &actor.waypoints {
                if !w.t.is_finite() || w.t < 0.0 {
                    return Err(invalid(format!(
                        "actor {:?} has a waypoint at invalid time {}",
                        actor.name, w.t
                    )));
                }
                if !w.bbox.is_valid() {
                    return Err(invalid(format!(
                        "actor {:?} has a degenerate waypoint box at t={}",
                        actor.name, w.t
                    )));
                }
                if w.bbox.x < 0.0
                    || w.bbox.y < 0.0
                    || w.bbox.right() > cfg.frame.width
                    || w.bbox.bottom() > cfg.frame.height
                {
                    return Err(invalid(format!(
                        "actor {:?} waypoint box at t={} leaves the frame",
                        actor.name, w.t
                    )));
                }
            }
            for &(a, b) in &actor.hidden {
                if !(a.is_finite() && b.is_finite() && a < b && a >= 0.0) {
                    return Err(invalid(format!(
                        "actor {:?} hidden interval [{a}, {b}) is malformed",
                        actor.name
                    )));
                }
            }
            for pair in actor.hidden.windows(2) {
                if pair[1].0 < pair[0].1 {
                    return Err(invalid(format!(
                        "actor {:?} hidden intervals overlap or are out of order",
                        actor.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One rendered clip: the (possibly noisy) detections and the events an
/// ideal system would report.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub clip_id: String,
    pub frames: Vec<Vec<Detection>>,
    pub ground_truth: BTreeMap<ObjectClass, Vec<Event>>,
}

fn clean_detection(frame_idx: usize, bbox: BBox, class: ObjectClass) -> Detection {
    let mut scores = BTreeMap::new();
    scores.insert(class, 0.9);
    scores.insert(class.other(), 0.1);
    Detection {
        frame_idx,
        bbox,
        scores,
        confidence: 0.95,
    }
}

fn clamp_into_frame(b: BBox, cfg: &StallConfig) -> BBox {
    let w = b.w.clamp(1.0, cfg.frame.width);
    let h = b.h.clamp(1.0, cfg.frame.height);
    BBox::new(
        b.x.clamp(0.0, cfg.frame.width - w),
        b.y.clamp(0.0, cfg.frame.height - h),
        w,
        h,
    )
}

fn perturb_frame(
    dets: Vec<Detection>,
    frame_idx: usize,
    noise: &NoiseModel,
    cfg: &StallConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Detection> {
    let mut out = Vec::with_capacity(dets.len());
    for mut d in dets {
        if noise.dropout_prob > 0.0 && rng.gen_bool(noise.dropout_prob) {
            continue;
        }
        if noise.center_jitter_px > 0.0 {
            let normal = Normal::new(0.0, noise.center_jitter_px).unwrap();
            d.bbox.x += normal.sample(rng);
            d.bbox.y += normal.sample(rng);
        }
        if noise.size_jitter_ratio > 0.0 {
            let normal = Normal::new(0.0, noise.size_jitter_ratio).unwrap();
            d.bbox.w *= 1.0 + normal.sample(rng);
            d.bbox.h *= 1.0 + normal.sample(rng);
        }
        if noise.center_jitter_px > 0.0 || noise.size_jitter_ratio > 0.0 {
            d.bbox = clamp_into_frame(d.bbox, cfg);
        }
        if noise.class_flip_prob > 0.0 && rng.gen_bool(noise.class_flip_prob) {
            let horse = d.scores.get(&ObjectClass::Horse).copied();
            let person = d.scores.get(&ObjectClass::Person).copied();
            if let Some(s) = person {
                d.scores.insert(ObjectClass::Horse, s);
            }
            if let Some(s) = horse {
                d.scores.insert(ObjectClass::Person, s);
            }
        }
        out.push(d);
    }
    if noise.spurious_rate > 0.0 {
        let n = Poisson::new(noise.spurious_rate).unwrap().sample(rng) as usize;
        for _ in 0..n {
            let w = rng.gen_range(20.0..120.0);
            let h = rng.gen_range(20.0..120.0);
            let x = rng.gen_range(0.0..(cfg.frame.width - w));
            let y = rng.gen_range(0.0..(cfg.frame.height - h));
            let class = if rng.gen_bool(0.5) {
                ObjectClass::Horse
            } else {
                ObjectClass::Person
            };
            out.push(clean_detection(frame_idx, BBox::new(x, y, w, h), class));
        }
    }
    out
}

/// Truth per actor per sampled frame of one clip. `None`: did not exist.
fn truth_states(
    actor: &Actor,
    clip_idx: usize,
    cfg: &StallConfig,
) -> Vec<Option<(ObjectFrameState, BBox)>> {
    let n = cfg.frames_per_clip();
    (0..n)
        .map(|f| {
            let t = clip_idx as f64 * cfg.clip_len_s + cfg.frame_time_s(f);
            actor.true_box(t).map(|b| {
                let state = if actor.hidden_at(t) {
                    ObjectFrameState::NotLocalized
                } else if box_polygon_intersects(&b, &cfg.floor_polygon, cfg.min_area_ratio) {
                    ObjectFrameState::Inside
                } else {
                    ObjectFrameState::Outside
                };
                (state, b)
            })
        })
        .collect()
}

fn ground_truth_for_class(
    actors: &[&Actor],
    clip_idx: usize,
    cfg: &StallConfig,
) -> Vec<Event> {
    let n = cfg.frames_per_clip();
    // An actor matters to this clip only if its true box overlaps the floor
    // at some sampled frame, hidden or not.
    let truths: Vec<Vec<Option<(ObjectFrameState, BBox)>>> = actors
        .iter()
        .map(|a| truth_states(a, clip_idx, cfg))
        .filter(|states| {
            states.iter().flatten().any(|(_, b)| {
                box_polygon_intersects(b, &cfg.floor_polygon, cfg.min_area_ratio)
            })
        })
        .collect();

    let frame_states: Vec<EventState> = (0..n)
        .map(|f| {
            let on_frame: Vec<ObjectFrameState> =
                truths.iter().filter_map(|s| s[f].map(|(st, _)| st)).collect();
            aggregate_frame(&on_frame)
        })
        .collect();
    let mut events = merge_temporal(&frame_states);

    // Unaccounted-for runs resolve from where the hidden actors really are:
    // any of them truly on the floor makes the run hidden-inside.
    for event in events.iter_mut() {
        if event.state != EventState::NotLocalized {
            continue;
        }
        let any_hidden_inside = truths.iter().any(|states| {
            (event.start_frame..event.end_frame).any(|f| match &states[f] {
                Some((ObjectFrameState::NotLocalized, b)) => {
                    box_polygon_intersects(b, &cfg.floor_polygon, cfg.min_area_ratio)
                }
                _ => false,
            })
        });
        event.state = if any_hidden_inside {
            EventState::InsideInvisible
        } else {
            EventState::OutsideInvisible
        };
    }
    events
}

/// Render every clip of the script: detections (with the script's noise,
/// seeded by `seed`) and per-class ground-truth events.
pub fn generate(script: &Script, cfg: &StallConfig, seed: u64) -> Result<Vec<SynthClip>, SimError> {
    script.validate(cfg)?;
    let n = cfg.frames_per_clip();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (script.clips.saturating_sub(1)).to_string().len().max(3);

    let mut out = Vec::with_capacity(script.clips);
    for clip_idx in 0..script.clips {
        let mut frames: Vec<Vec<Detection>> = Vec::with_capacity(n);
        for f in 0..n {
            let t = clip_idx as f64 * cfg.clip_len_s + cfg.frame_time_s(f);
            let clean: Vec<Detection> = script
                .actors
                .iter()
                .filter(|a| !a.hidden_at(t))
                .filter_map(|a| a.true_box(t).map(|b| clean_detection(f, b, a.class)))
                .collect();
            frames.push(perturb_frame(clean, f, &script.noise, cfg, &mut rng));
        }

        let mut ground_truth = BTreeMap::new();
        for class in ObjectClass::ALL {
            let class_actors: Vec<&Actor> =
                script.actors.iter().filter(|a| a.class == class).collect();
            ground_truth.insert(class, ground_truth_for_class(&class_actors, clip_idx, cfg));
        }

        out.push(SynthClip {
            clip_id: format!("{}-{:0width$}", script.id_prefix, clip_idx),
            frames,
            ground_truth,
        });
    }
    Ok(out)
}
