//! Per-camera stall configuration, loaded from TOML.
//!
//! A config describes one fixed camera looking at one stall: the frame size,
//! the stall floor outline in pixel coordinates, where the entrance is, and
//! the sampling/detection parameters the pipeline should assume.
//!
//! ```toml
//! camera_id = "barn3-cam1"
//!
//! [frame]
//! width = 1280.0
//! height = 720.0
//!
//! floor_polygon = [[100.0, 200.0], [1180.0, 200.0], [1180.0, 700.0], [100.0, 700.0]]
//! entrance = [[100.0, 450.0], [100.0, 700.0]]
//! interior_edges = ["right"]
//! ```
//!
//! Everything else has defaults; see the field docs.

use crate::geometry::{Edge, FrameDims, Polygon, Segment};
use crate::tracking::TrackerParams;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Everything the pipeline needs to know about one stall camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStallConfig")]
pub struct StallConfig {
    /// Stable identifier of the camera, echoed into outputs.
    pub camera_id: String,
    /// Pixel dimensions of the camera frame.
    pub frame: FrameDims,
    /// Stall floor outline in pixel coordinates (may be concave).
    pub floor_polygon: Polygon,
    /// The entrance line in pixel coordinates, typically along one polygon
    /// side.
    pub entrance: Segment,
    /// How close (in pixels) a box's bottom-center must be to the entrance
    /// for a disappearance to count as leaving the stall.
    pub entrance_dist_px: f64,
    /// A box within this many pixels of a frame border counts as touching
    /// that border.
    pub edge_margin_px: f64,
    /// Frame borders along which the stall continues out of view (e.g. the
    /// stall extends past the right image edge). An object vanishing while
    /// touching one of these is still inside.
    pub interior_edges: Vec<Edge>,
    /// A box overlaps the floor only if the overlap exceeds this fraction of
    /// the box area. Zero means any positive overlap counts.
    pub min_area_ratio: f64,
    /// Camera capture rate.
    pub fps: f64,
    /// The detector runs every this-many captured frames.
    pub frame_stride: usize,
    /// Detections below this confidence are dropped at load time.
    pub confidence_threshold: f64,
    /// Length of one recorded clip in seconds.
    pub clip_len_s: f64,
    /// NMS IoU threshold the upstream detector was run with. Recorded for
    /// reproducibility; the pipeline itself does not use it.
    pub detector_nms_iou: f64,
    /// Motion-tracker tuning.
    pub tracker: TrackerParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStallConfig {
    camera_id: String,
    frame: FrameDims,
    floor_polygon: Polygon,
    entrance: Segment,
    entrance_dist_px: Option<f64>,
    #[serde(default = "default_edge_margin_px")]
    edge_margin_px: f64,
    #[serde(default)]
    interior_edges: Vec<Edge>,
    #[serde(default)]
    min_area_ratio: f64,
    #[serde(default = "default_fps")]
    fps: f64,
    #[serde(default = "default_frame_stride")]
    frame_stride: usize,
    #[serde(default = "default_confidence_threshold")]
    confidence_threshold: f64,
    #[serde(default = "default_clip_len_s")]
    clip_len_s: f64,
    #[serde(default = "default_detector_nms_iou")]
    detector_nms_iou: f64,
    #[serde(default)]
    tracker: TrackerParams,
}

fn default_edge_margin_px() -> f64 {
    10.0
}
fn default_fps() -> f64 {
    20.0
}
fn default_frame_stride() -> usize {
    20
}
fn default_confidence_threshold() -> f64 {
    0.5
}
fn default_clip_len_s() -> f64 {
    60.0
}
fn default_detector_nms_iou() -> f64 {
    0.5
}

/// Default entrance gate distance, scaled to the frame width so the same
/// config works across camera resolutions (150 px at 1280-wide).
fn default_entrance_dist_px(frame_width: f64) -> f64 {
    150.0 * frame_width / 1280.0
}

impl TryFrom<RawStallConfig> for StallConfig {
    type Error = ConfigError;

    fn try_from(raw: RawStallConfig) -> Result<Self, ConfigError> {
        let entrance_dist_px = raw
            .entrance_dist_px
            .unwrap_or_else(|| default_entrance_dist_px(raw.frame.width));
        let cfg = StallConfig {
            camera_id: raw.camera_id,
            frame: raw.frame,
            floor_polygon: raw.floor_polygon,
            entrance: raw.entrance,
            entrance_dist_px,
            edge_margin_px: raw.edge_margin_px,
            interior_edges: raw.interior_edges,
            min_area_ratio: raw.min_area_ratio,
            fps: raw.fps,
            frame_stride: raw.frame_stride,
            confidence_threshold: raw.confidence_threshold,
            clip_len_s: raw.clip_len_s,
            detector_nms_iou: raw.detector_nms_iou,
            tracker: raw.tracker,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl StallConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(s)?)
    }

    /// Re-check every invariant. Loading validates automatically; call this
    /// after changing fields on an already-loaded config.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.camera_id.is_empty() {
            return Err(invalid("camera_id must not be empty"));
        }
        if !(self.frame.width.is_finite() && self.frame.width > 0.0)
            || !(self.frame.height.is_finite() && self.frame.height > 0.0)
        {
            return Err(invalid(format!(
                "frame dimensions must be positive, got {}x{}",
                self.frame.width, self.frame.height
            )));
        }
        let in_frame = |x: f64, y: f64| {
            (0.0..=self.frame.width).contains(&x) && (0.0..=self.frame.height).contains(&y)
        };
        for &(x, y) in self.floor_polygon.vertices() {
            if !in_frame(x, y) {
                return Err(invalid(format!(
                    "floor_polygon vertex ({x}, {y}) lies outside the frame"
                )));
            }
        }
        for (x, y) in [self.entrance.a, self.entrance.b] {
            if !in_frame(x, y) {
                return Err(invalid(format!(
                    "entrance endpoint ({x}, {y}) lies outside the frame"
                )));
            }
        }
        if !(self.entrance_dist_px.is_finite() && self.entrance_dist_px > 0.0) {
            return Err(invalid(format!(
                "entrance_dist_px must be positive, got {}",
                self.entrance_dist_px
            )));
        }
        if !(self.edge_margin_px.is_finite() && self.edge_margin_px >= 0.0) {
            return Err(invalid(format!(
                "edge_margin_px must be non-negative, got {}",
                self.edge_margin_px
            )));
        }
        if !(0.0..1.0).contains(&self.min_area_ratio) {
            return Err(invalid(format!(
                "min_area_ratio must be in [0, 1), got {}",
                self.min_area_ratio
            )));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(invalid(format!("fps must be positive, got {}", self.fps)));
        }
        if self.frame_stride == 0 {
            return Err(invalid("frame_stride must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(invalid(format!(
                "confidence_threshold must be in [0, 1], got {}",
                self.confidence_threshold
            )));
        }
        if !(self.clip_len_s.is_finite() && self.clip_len_s > 0.0) {
            return Err(invalid(format!(
                "clip_len_s must be positive, got {}",
                self.clip_len_s
            )));
        }
        if !(0.0..=1.0).contains(&self.detector_nms_iou) {
            return Err(invalid(format!(
                "detector_nms_iou must be in [0, 1], got {}",
                self.detector_nms_iou
            )));
        }
        let sampled = self.clip_len_s * self.fps / self.frame_stride as f64;
        if (sampled - sampled.round()).abs() > 1e-9 || sampled.round() < 1.0 {
            return Err(invalid(format!(
                "clip_len_s * fps must be a positive multiple of frame_stride \
                 (got {} sampled frames per clip)",
                sampled
            )));
        }
        self.tracker.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(())
    }

    pub fn from_toml_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Number of detector-sampled frames in one clip.
    pub fn frames_per_clip(&self) -> usize {
        (self.clip_len_s * self.fps / self.frame_stride as f64).round() as usize
    }

    /// Wall-clock seconds between consecutive sampled frames.
    pub fn stride_s(&self) -> f64 {
        self.frame_stride as f64 / self.fps
    }

    /// Seconds into the clip of sampled frame `idx`.
    pub fn frame_time_s(&self, idx: usize) -> f64 {
        idx as f64 * self.stride_s()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        camera_id = "barn3-cam1"
        frame = { width = 1280.0, height = 720.0 }
        floor_polygon = [[100.0, 200.0], [1180.0, 200.0], [1180.0, 700.0], [100.0, 700.0]]
        entrance = [[100.0, 450.0], [100.0, 700.0]]
    "#;

    /// Display plus every `source()` in the chain, the way a CLI would print it.
    fn full_text(err: &ConfigError) -> String {
        let mut text = err.to_string();
        let mut src = std::error::Error::source(err);
        while let Some(e) = src {
            text.push_str(": ");
            text.push_str(&e.to_string());
            src = e.source();
        }
        text
    }

    #[test]
    fn minimal_config_gets_all_defaults() {
        let cfg = StallConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.camera_id, "barn3-cam1");
        assert_eq!(cfg.entrance_dist_px, 150.0);
        assert_eq!(cfg.edge_margin_px, 10.0);
        assert!(cfg.interior_edges.is_empty());
        assert_eq!(cfg.min_area_ratio, 0.0);
        assert_eq!(cfg.fps, 20.0);
        assert_eq!(cfg.frame_stride, 20);
        assert_eq!(cfg.confidence_threshold, 0.5);
        assert_eq!(cfg.clip_len_s, 60.0);
        assert_eq!(cfg.frames_per_clip(), 60);
        assert_eq!(cfg.stride_s(), 1.0);
        assert_eq!(cfg.tracker, TrackerParams::default());
    }

    #[test]
    fn entrance_dist_scales_with_frame_width() {
        let toml = MINIMAL
            .replace("width = 1280.0", "width = 640.0")
            .replace("1180.0", "590.0");
        let cfg = StallConfig::from_toml_str(&toml).unwrap();
        assert_eq!(cfg.entrance_dist_px, 75.0);
    }

    #[test]
    fn explicit_entrance_dist_wins_over_default() {
        let toml = format!("{MINIMAL}\nentrance_dist_px = 42.0");
        let cfg = StallConfig::from_toml_str(&toml).unwrap();
        assert_eq!(cfg.entrance_dist_px, 42.0);
    }

    #[test]
    fn full_config_round_trips_through_toml() {
        let toml = format!(
            r#"{MINIMAL}
            entrance_dist_px = 120.0
            edge_margin_px = 8.0
            interior_edges = ["right", "bottom"]
            min_area_ratio = 0.1
            fps = 30.0
            frame_stride = 30
            confidence_threshold = 0.6
            clip_len_s = 120.0
            detector_nms_iou = 0.45

            [tracker]
            iou_gate = 0.25
            max_age = 4
            "#
        );
        let cfg = StallConfig::from_toml_str(&toml).unwrap();
        assert_eq!(cfg.interior_edges, vec![Edge::Right, Edge::Bottom]);
        assert_eq!(cfg.tracker.iou_gate, 0.25);
        assert_eq!(cfg.tracker.max_age, 4);
        assert_eq!(cfg.tracker.min_hits, TrackerParams::default().min_hits);
        assert_eq!(cfg.frames_per_clip(), 120);

        let serialized = toml::to_string(&cfg).unwrap();
        let back = StallConfig::from_toml_str(&serialized).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn polygon_outside_frame_is_rejected() {
        let toml = MINIMAL.replace("1180.0, 700.0", "1300.0, 700.0");
        let err = StallConfig::from_toml_str(&toml).unwrap_err();
        assert!(full_text(&err).contains("outside the frame"), "{err}");
    }

    #[test]
    fn entrance_outside_frame_is_rejected() {
        let toml = MINIMAL.replace("[100.0, 450.0]", "[-5.0, 450.0]");
        let err = StallConfig::from_toml_str(&toml).unwrap_err();
        assert!(full_text(&err).contains("entrance endpoint"), "{err}");
    }

    #[test]
    fn degenerate_entrance_is_rejected_at_parse() {
        let toml = MINIMAL.replace("[[100.0, 450.0], [100.0, 700.0]]", "[[100.0, 450.0], [100.0, 450.0]]");
        assert!(StallConfig::from_toml_str(&toml).is_err());
    }

    #[test]
    fn indivisible_clip_length_is_rejected() {
        let toml = format!("{MINIMAL}\nclip_len_s = 60.5");
        let err = StallConfig::from_toml_str(&toml).unwrap_err();
        assert!(full_text(&err).contains("multiple of frame_stride"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let toml = format!("{MINIMAL}\nnot_a_real_key = 1");
        assert!(StallConfig::from_toml_str(&toml).is_err());
    }

    #[test]
    fn bad_tracker_params_are_rejected() {
        let toml = format!("{MINIMAL}\n[tracker]\niou_gate = 1.5");
        assert!(StallConfig::from_toml_str(&toml).is_err());
    }

    #[test]
    fn zero_min_area_ratio_is_valid_and_one_is_not() {
        let ok = format!("{MINIMAL}\nmin_area_ratio = 0.0");
        assert!(StallConfig::from_toml_str(&ok).is_ok());
        let bad = format!("{MINIMAL}\nmin_area_ratio = 1.0");
        assert!(StallConfig::from_toml_str(&bad).is_err());
    }
}
