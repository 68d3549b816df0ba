//! Motion-based multi-object tracking over sampled frames.
//!
//! Detections are associated to live tracks frame by frame with an exact
//! max-IoU assignment between predicted and detected boxes; a linear Kalman
//! filter over (cx, cy, area, aspect) with constant-velocity position and
//! area carries each track through brief detector misses.

use crate::assignment::max_weight_matching;
use crate::geometry::{iou, BBox};
use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

type V7 = SVector<f64, 7>;
type M7 = SMatrix<f64, 7, 7>;
type V4 = SVector<f64, 4>;
type M4 = SMatrix<f64, 4, 4>;
type M4x7 = SMatrix<f64, 4, 7>;

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("step frame {got} is not after previous frame {prev}")]
    NonMonotonicFrame { prev: usize, got: usize },
    #[error("invalid tracker parameter: {0}")]
    InvalidParams(String),
    #[error("innovation covariance is singular")]
    SingularInnovation,
}

/// The two object categories the stall cameras report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Horse,
    Person,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 2] = [ObjectClass::Horse, ObjectClass::Person];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Horse => "horse",
            ObjectClass::Person => "person",
        }
    }

    pub fn other(&self) -> ObjectClass {
        match self {
            ObjectClass::Horse => ObjectClass::Person,
            ObjectClass::Person => ObjectClass::Horse,
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "horse" => Ok(ObjectClass::Horse),
            "person" => Ok(ObjectClass::Person),
            other => Err(format!("unknown object class {other:?}")),
        }
    }
}

/// A single detector output on one sampled frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_idx: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    /// Per-class probabilities, e.g. {horse: 0.9, person: 0.1}.
    pub scores: BTreeMap<ObjectClass, f64>,
    pub confidence: f64,
}

/// Knobs for the tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerParams {
    /// Minimum IoU between a predicted track box and a detection for the
    /// pair to be matchable.
    pub iou_gate: f64,
    /// Consecutive missed sampled frames a live track survives.
    pub max_age: usize,
    /// Minimum matched detections for a finalized track to be reported.
    pub min_hits: usize,
    /// Scale on the constant-velocity process noise.
    pub process_noise: f64,
    /// Scale on the measurement noise.
    pub measurement_noise: f64,
}

impl Default for TrackerParams {
    fn default() -> Self {
        Self {
            iou_gate: 0.3,
            max_age: 5,
            min_hits: 1,
            process_noise: 1.0,
            measurement_noise: 1.0,
        }
    }
}

impl TrackerParams {
    pub fn validate(&self) -> Result<(), TrackError> {
        if !(0.0..=1.0).contains(&self.iou_gate) || !self.iou_gate.is_finite() {
            return Err(TrackError::InvalidParams(format!(
                "iou_gate must be in [0, 1], got {}",
                self.iou_gate
            )));
        }
        for (name, v) in [
            ("process_noise", self.process_noise),
            ("measurement_noise", self.measurement_noise),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TrackError::InvalidParams(format!(
                    "{name} must be a positive real, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn process_noise_matrix(&self) -> M7 {
        let mut q = M7::identity();
        q[(4, 4)] = 0.01;
        q[(5, 5)] = 0.01;
        q[(6, 6)] = 1e-4;
        q * self.process_noise
    }

    fn measurement_noise_matrix(&self) -> M4 {
        let mut r = M4::identity();
        r[(2, 2)] = 10.0;
        r[(3, 3)] = 10.0;
        r * self.measurement_noise
    }
}

fn transition_matrix() -> M7 {
    let mut f = M7::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn measurement_matrix() -> M4x7 {
    let mut h = M4x7::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn box_to_measurement(b: &BBox) -> V4 {
    let (cx, cy) = b.center();
    V4::new(cx, cy, b.area(), b.w / b.h)
}

fn measurement_to_box(cx: f64, cy: f64, area: f64, aspect: f64) -> BBox {
    let area = area.max(1e-6);
    let aspect = aspect.max(1e-6);
    let w = (area * aspect).sqrt();
    let h = area / w;
    BBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
}

/// Gaussian belief over (cx, cy, area, aspect, v_cx, v_cy, v_area).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionState {
    mean: V7,
    cov: M7,
}

impl MotionState {
    /// Initial belief for a fresh detection: measured box, zero velocities,
    /// wide velocity uncertainty.
    pub fn from_box(b: &BBox) -> Self {
        let z = box_to_measurement(b);
        let mean = V7::from([z[0], z[1], z[2], z[3], 0.0, 0.0, 0.0]);
        let mut cov = M7::identity() * 10.0;
        for i in 4..7 {
            cov[(i, i)] = 1e4;
        }
        Self { mean, cov }
    }

    /// Advance one sampled frame under the constant-velocity model. A
    /// predicted non-positive area is clamped to 1 px² with its velocity
    /// zeroed.
    pub fn predict(&mut self, params: &TrackerParams) {
        let f = transition_matrix();
        self.mean = f * self.mean;
        if self.mean[2] <= 0.0 {
            self.mean[2] = 1.0;
            self.mean[6] = 0.0;
        }
        self.cov = f * self.cov * f.transpose() + params.process_noise_matrix();
        self.symmetrize();
    }

    /// Fold in a measured box (standard Kalman update, Joseph-form
    /// covariance so the result stays PSD).
    pub fn update(&mut self, b: &BBox, params: &TrackerParams) -> Result<(), TrackError> {
        let h = measurement_matrix();
        let r = params.measurement_noise_matrix();
        let z = box_to_measurement(b);
        let innovation = z - h * self.mean;
        let s = h * self.cov * h.transpose() + r;
        let s_inv = s.try_inverse().ok_or(TrackError::SingularInnovation)?;
        let gain = self.cov * h.transpose() * s_inv;
        if gain.iter().any(|g| !g.is_finite()) {
            return Err(TrackError::SingularInnovation);
        }
        self.mean += gain * innovation;
        self.mean[2] = self.mean[2].max(1e-6);
        self.mean[3] = self.mean[3].max(1e-6);
        let ikh = M7::identity() - gain * h;
        self.cov = ikh * self.cov * ikh.transpose() + gain * r * gain.transpose();
        self.symmetrize();
        Ok(())
    }

    fn symmetrize(&mut self) {
        self.cov = (self.cov + self.cov.transpose()) * 0.5;
    }

    /// Current belief as a box.
    pub fn bbox(&self) -> BBox {
        measurement_to_box(self.mean[0], self.mean[1], self.mean[2], self.mean[3])
    }

    pub fn mean(&self) -> [f64; 7] {
        self.mean.into()
    }

    pub fn covariance(&self) -> [[f64; 7]; 7] {
        let mut out = [[0.0; 7]; 7];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.cov[(i, j)];
            }
        }
        out
    }
}

/// One tracked identity within a clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    /// Sum of detection scores per class over all matched detections.
    pub class_scores_sum: BTreeMap<ObjectClass, f64>,
    /// Matched detections in frame order (strictly increasing frame_idx).
    pub observations: Vec<Detection>,
    /// Matched detection count.
    pub hits: usize,
    /// Consecutive missed sampled frames at the latest step.
    pub misses: usize,
    pub motion: MotionState,
}

impl Track {
    fn new(id: u64, det: &Detection) -> Self {
        Self {
            id,
            class_scores_sum: det.scores.clone(),
            observations: vec![det.clone()],
            hits: 1,
            misses: 0,
            motion: MotionState::from_box(&det.bbox),
        }
    }

    fn absorb(&mut self, det: &Detection, params: &TrackerParams) -> Result<(), TrackError> {
        self.motion.update(&det.bbox, params)?;
        for (class, score) in &det.scores {
            *self.class_scores_sum.entry(*class).or_insert(0.0) += score;
        }
        self.observations.push(det.clone());
        self.hits += 1;
        self.misses = 0;
        Ok(())
    }

    pub fn first_frame(&self) -> usize {
        self.observations[0].frame_idx
    }

    pub fn last_frame(&self) -> usize {
        self.observations[self.observations.len() - 1].frame_idx
    }

    /// Largest single-frame score for a class across the observations.
    pub fn max_single_frame_score(&self, class: ObjectClass) -> f64 {
        self.observations
            .iter()
            .filter_map(|d| d.scores.get(&class))
            .fold(0.0, |acc, &s| acc.max(s))
    }
}

/// Live-track snapshot returned from each step.
#[derive(Debug, Clone, PartialEq)]
pub struct LiveTrack {
    pub id: u64,
    pub bbox: BBox,
    pub hits: usize,
    pub misses: usize,
}

/// Frame-by-frame IoU tracker.
pub struct Tracker {
    params: TrackerParams,
    live: Vec<Track>,
    finalized: Vec<Track>,
    next_id: u64,
    last_frame: Option<usize>,
}

impl Tracker {
    pub fn new(params: TrackerParams) -> Result<Self, TrackError> {
        params.validate()?;
        Ok(Self {
            params,
            live: Vec::new(),
            finalized: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    /// Advance one sampled frame: predict every live track, match detections
    /// by IoU (exact assignment), update matches, age the rest, spawn tracks
    /// for unmatched detections, and retire tracks out of patience.
    ///
    /// Must be called once per sampled frame, in order, with an empty slice
    /// when the frame has no detections.
    pub fn step(&mut self, frame_idx: usize, dets: &[Detection]) -> Result<Vec<LiveTrack>, TrackError> {
        if let Some(prev) = self.last_frame {
            if frame_idx <= prev {
                return Err(TrackError::NonMonotonicFrame {
                    prev,
                    got: frame_idx,
                });
            }
        }
        self.last_frame = Some(frame_idx);

        for t in &mut self.live {
            t.motion.predict(&self.params);
        }

        let weights: Vec<Vec<f64>> = self
            .live
            .iter()
            .map(|t| {
                let pred = t.motion.bbox();
                dets.iter().map(|d| iou(&pred, &d.bbox)).collect()
            })
            .collect();
        let matches = max_weight_matching(&weights, self.params.iou_gate);

        let mut det_matched = vec![false; dets.len()];
        let mut track_matched = vec![false; self.live.len()];
        for &(ti, di) in &matches {
            self.live[ti].absorb(&dets[di], &self.params)?;
            track_matched[ti] = true;
            det_matched[di] = true;
        }
        for (ti, t) in self.live.iter_mut().enumerate() {
            if !track_matched[ti] {
                t.misses += 1;
            }
        }

        let max_age = self.params.max_age;
        let mut still_live = Vec::with_capacity(self.live.len());
        for t in self.live.drain(..) {
            if t.misses > max_age {
                self.finalized.push(t);
            } else {
                still_live.push(t);
            }
        }
        self.live = still_live;

        for (di, det) in dets.iter().enumerate() {
            if !det_matched[di] {
                self.live.push(Track::new(self.next_id, det));
                self.next_id += 1;
            }
        }

        Ok(self
            .live
            .iter()
            .map(|t| LiveTrack {
                id: t.id,
                bbox: t.motion.bbox(),
                hits: t.hits,
                misses: t.misses,
            })
            .collect())
    }

    /// Close the clip: every track (live or retired) with enough hits,
    /// ordered by first frame then id.
    pub fn finalize(mut self) -> Vec<Track> {
        let mut out = self.finalized;
        out.append(&mut self.live);
        out.retain(|t| t.hits >= self.params.min_hits);
        out.sort_by_key(|t| (t.first_frame(), t.id));
        out
    }
}

#[cfg(test)]
// index loops in the hand-rolled matrix oracle mirror the equations under test
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;

    fn det(frame_idx: usize, x: f64, y: f64, w: f64, h: f64) -> Detection {
        Detection {
            frame_idx,
            bbox: BBox::new(x, y, w, h),
            scores: BTreeMap::from([(ObjectClass::Horse, 0.9), (ObjectClass::Person, 0.1)]),
            confidence: 0.9,
        }
    }

    // ---- filter ----

    /// Plain-array mirror of the filter equations, written independently of
    /// the nalgebra implementation, for cross-checking.
    mod oracle {
        pub const N: usize = 7;
        pub type Mat = [[f64; N]; N];
        pub type Vec7 = [f64; N];

        pub fn matmul(a: &Mat, b: &Mat) -> Mat {
            let mut out = [[0.0; N]; N];
            for i in 0..N {
                for j in 0..N {
                    for k in 0..N {
                        out[i][j] += a[i][k] * b[k][j];
                    }
                }
            }
            out
        }

        pub fn matvec(a: &Mat, v: &Vec7) -> Vec7 {
            let mut out = [0.0; N];
            for i in 0..N {
                for k in 0..N {
                    out[i] += a[i][k] * v[k];
                }
            }
            out
        }

        pub fn transpose(a: &Mat) -> Mat {
            let mut out = [[0.0; N]; N];
            for i in 0..N {
                for j in 0..N {
                    out[i][j] = a[j][i];
                }
            }
            out
        }

        /// Gauss-Jordan inverse of the 4x4 top-left block embedded in a 7x7.
        pub fn invert4(s: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
            let mut a = *s;
            let mut inv = [[0.0; 4]; 4];
            for (i, row) in inv.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            for col in 0..4 {
                let pivot = (col..4)
                    .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())
                    .unwrap();
                a.swap(col, pivot);
                inv.swap(col, pivot);
                let d = a[col][col];
                for j in 0..4 {
                    a[col][j] /= d;
                    inv[col][j] /= d;
                }
                for row in 0..4 {
                    if row != col {
                        let f = a[row][col];
                        for j in 0..4 {
                            a[row][j] -= f * a[col][j];
                            inv[row][j] -= f * inv[col][j];
                        }
                    }
                }
            }
            inv
        }
    }

    /// Run the same predict/update recursion with plain arrays.
    struct OracleFilter {
        mean: oracle::Vec7,
        cov: oracle::Mat,
    }

    impl OracleFilter {
        fn from_box(b: &BBox) -> Self {
            let (cx, cy) = b.center();
            let mean = [cx, cy, b.area(), b.w / b.h, 0.0, 0.0, 0.0];
            let mut cov = [[0.0; oracle::N]; oracle::N];
            for (i, row) in cov.iter_mut().enumerate() {
                row[i] = if i < 4 { 10.0 } else { 1e4 };
            }
            Self { mean, cov }
        }

        fn predict(&mut self) {
            let mut f = [[0.0; oracle::N]; oracle::N];
            for (i, row) in f.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            f[0][4] = 1.0;
            f[1][5] = 1.0;
            f[2][6] = 1.0;
            self.mean = oracle::matvec(&f, &self.mean);
            if self.mean[2] <= 0.0 {
                self.mean[2] = 1.0;
                self.mean[6] = 0.0;
            }
            let mut q = [[0.0; oracle::N]; oracle::N];
            let qd = [1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 1e-4];
            for (i, row) in q.iter_mut().enumerate() {
                row[i] = qd[i];
            }
            let fp = oracle::matmul(&f, &self.cov);
            let mut cov = oracle::matmul(&fp, &oracle::transpose(&f));
            for i in 0..oracle::N {
                for j in 0..oracle::N {
                    cov[i][j] += q[i][j];
                }
            }
            self.cov = cov;
        }

        fn update(&mut self, b: &BBox) {
            let (cx, cy) = b.center();
            let z = [cx, cy, b.area(), b.w / b.h];
            let rd = [1.0, 1.0, 10.0, 10.0];
            // S = P[0..4, 0..4] + R for the identity-block measurement model
            let mut s = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    s[i][j] = self.cov[i][j];
                }
                s[i][i] += rd[i];
            }
            let s_inv = oracle::invert4(&s);
            // K = P H' S^-1 is 7x4
            let mut k = [[0.0; 4]; 7];
            for i in 0..7 {
                for j in 0..4 {
                    for l in 0..4 {
                        k[i][j] += self.cov[i][l] * s_inv[l][j];
                    }
                }
            }
            let mut innov = [0.0; 4];
            for i in 0..4 {
                innov[i] = z[i] - self.mean[i];
            }
            for i in 0..7 {
                for (j, iv) in innov.iter().enumerate() {
                    self.mean[i] += k[i][j] * iv;
                }
            }
            // Joseph form: (I-KH) P (I-KH)' + K R K'
            let mut ikh = [[0.0; oracle::N]; oracle::N];
            for (i, row) in ikh.iter_mut().enumerate() {
                row[i] = 1.0;
            }
            for i in 0..7 {
                for j in 0..4 {
                    ikh[i][j] -= k[i][j];
                }
            }
            let p1 = oracle::matmul(&ikh, &self.cov);
            let mut cov = oracle::matmul(&p1, &oracle::transpose(&ikh));
            for i in 0..7 {
                for j in 0..7 {
                    let mut krk = 0.0;
                    for l in 0..4 {
                        krk += k[i][l] * rd[l] * k[j][l];
                    }
                    cov[i][j] += krk;
                }
            }
            for i in 0..oracle::N {
                for j in 0..oracle::N {
                    self.cov[i][j] = (cov[i][j] + cov[j][i]) / 2.0;
                }
            }
        }
    }

    #[test]
    fn predict_keeps_a_zero_velocity_state_in_place() {
        let b = BBox::new(10.0, 20.0, 30.0, 40.0);
        let mut m = MotionState::from_box(&b);
        let before = m.mean();
        m.predict(&TrackerParams::default());
        let after = m.mean();
        for i in 0..4 {
            assert!((before[i] - after[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_moves_center_by_velocity_and_grows_uncertainty() {
        let b = BBox::new(10.0, 20.0, 30.0, 40.0);
        let mut m = MotionState::from_box(&b);
        let params = TrackerParams::default();
        m.mean[4] = 7.0; // v_cx
        let cx_before = m.mean()[0];
        let trace_before: f64 = (0..7).map(|i| m.covariance()[i][i]).sum();
        m.predict(&params);
        let trace_after: f64 = (0..7).map(|i| m.covariance()[i][i]).sum();
        assert!((m.mean()[0] - (cx_before + 7.0)).abs() < 1e-12);
        assert!(trace_after > trace_before);
    }

    #[test]
    fn predict_clamps_non_positive_area() {
        let b = BBox::new(0.0, 0.0, 2.0, 2.0);
        let mut m = MotionState::from_box(&b);
        // force a large negative area velocity, then predict
        m.mean[6] = -100.0;
        m.predict(&TrackerParams::default());
        assert_eq!(m.mean()[2], 1.0);
        assert_eq!(m.mean()[6], 0.0);
    }

    #[test]
    fn update_with_predicted_measurement_leaves_mean_unchanged() {
        let b = BBox::new(10.0, 20.0, 30.0, 40.0);
        let mut m = MotionState::from_box(&b);
        let params = TrackerParams::default();
        m.update(&b, &params).unwrap();
        let mean = m.mean();
        let z = box_to_measurement(&b);
        for i in 0..4 {
            assert!((mean[i] - z[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn update_with_huge_measurement_noise_keeps_the_prior() {
        let b = BBox::new(10.0, 20.0, 30.0, 40.0);
        let mut m = MotionState::from_box(&b);
        let params = TrackerParams {
            measurement_noise: 1e12,
            ..TrackerParams::default()
        };
        let prior = m.mean();
        m.update(&BBox::new(500.0, 500.0, 30.0, 40.0), &params).unwrap();
        let post = m.mean();
        for i in 0..7 {
            let rel = (post[i] - prior[i]).abs() / prior[i].abs().max(1.0);
            assert!(rel < 1e-6, "component {i}: {} vs {}", prior[i], post[i]);
        }
    }

    #[test]
    fn filter_matches_independent_dense_implementation_and_leads_motion() {
        let params = TrackerParams::default();
        let start = BBox::new(100.0, 100.0, 40.0, 40.0);
        let mut m = MotionState::from_box(&start);
        let mut oracle_f = OracleFilter::from_box(&start);
        let mut last_cx = 120.0;
        for k in 1..=5 {
            let b = BBox::new(100.0 + 10.0 * k as f64, 100.0, 40.0, 40.0);
            last_cx = b.center().0;
            m.predict(&params);
            oracle_f.predict();
            m.update(&b, &params).unwrap();
            oracle_f.update(&b);
            let mean = m.mean();
            let cov = m.covariance();
            for i in 0..7 {
                assert!(
                    (mean[i] - oracle_f.mean[i]).abs() < 1e-9,
                    "step {k} mean[{i}]: {} vs {}",
                    mean[i],
                    oracle_f.mean[i]
                );
                for j in 0..7 {
                    assert!((cov[i][j] - oracle_f.cov[i][j]).abs() < 1e-6);
                }
            }
        }
        // the learned velocity should put the next prediction ahead of the
        // last measurement
        m.predict(&params);
        assert!(
            m.bbox().center().0 > last_cx,
            "predicted cx {} should exceed last measured {last_cx}",
            m.bbox().center().0
        );
    }

    #[test]
    fn covariance_stays_symmetric_psd_through_random_sequences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let params = TrackerParams::default();
        for _ in 0..50 {
            let mut m = MotionState::from_box(&BBox::new(
                rng.gen_range(0.0..500.0),
                rng.gen_range(0.0..500.0),
                rng.gen_range(5.0..100.0),
                rng.gen_range(5.0..100.0),
            ));
            for _ in 0..30 {
                m.predict(&params);
                if rng.gen_bool(0.7) {
                    m.update(
                        &BBox::new(
                            rng.gen_range(0.0..500.0),
                            rng.gen_range(0.0..500.0),
                            rng.gen_range(5.0..100.0),
                            rng.gen_range(5.0..100.0),
                        ),
                        &params,
                    )
                    .unwrap();
                }
                let cov = m.cov;
                assert!((cov - cov.transpose()).abs().max() < 1e-9);
                let eigs = cov.symmetric_eigenvalues();
                assert!(
                    eigs.iter().all(|&e| e >= -1e-9),
                    "negative eigenvalue: {eigs:?}"
                );
            }
        }
    }

    // ---- tracker lifecycle ----

    #[test]
    fn first_detection_creates_track_one() {
        let mut tr = Tracker::new(TrackerParams::default()).unwrap();
        let live = tr.step(0, &[det(0, 100.0, 100.0, 50.0, 50.0)]).unwrap();
        assert_eq!(live.len(), 1);
        assert_eq!(live[0].id, 1);
        assert_eq!(live[0].hits, 1);
    }

    #[test]
    fn same_box_next_frame_extends_the_track() {
        let mut tr = Tracker::new(TrackerParams::default()).unwrap();
        tr.step(0, &[det(0, 100.0, 100.0, 50.0, 50.0)]).unwrap();
        let live = tr.step(1, &[det(1, 100.0, 100.0, 50.0, 50.0)]).unwrap();
        assert_eq!(live.len(), 1);
        assert_eq!(live[0].id, 1);
        assert_eq!(live[0].hits, 2);
        assert_eq!(live[0].misses, 0);
    }

    #[test]
    fn long_absence_finalizes_and_reissues_ids() {
        let params = TrackerParams::default();
        let mut tr = Tracker::new(params).unwrap();
        tr.step(0, &[det(0, 100.0, 100.0, 50.0, 50.0)]).unwrap();
        // absent for max_age + 1 = 6 sampled frames
        for f in 1..=6 {
            tr.step(f, &[]).unwrap();
        }
        let live = tr.step(7, &[det(7, 100.0, 100.0, 50.0, 50.0)]).unwrap();
        assert_eq!(live.len(), 1);
        assert_eq!(live[0].id, 2, "old track should have been retired");
        let tracks = tr.finalize();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].id, 1);
        assert_eq!(tracks[1].id, 2);
    }

    #[test]
    fn short_absence_keeps_the_same_id() {
        let params = TrackerParams::default();
        let mut tr = Tracker::new(params).unwrap();
        tr.step(0, &[det(0, 100.0, 100.0, 50.0, 50.0)]).unwrap();
        for f in 1..=5 {
            tr.step(f, &[]).unwrap();
        }
        let live = tr.step(6, &[det(6, 100.0, 100.0, 50.0, 50.0)]).unwrap();
        assert_eq!(live.len(), 1);
        assert_eq!(live[0].id, 1);
        let tracks = tr.finalize();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].observations.len(), 2);
    }

    #[test]
    fn non_monotonic_step_is_an_error() {
        let mut tr = Tracker::new(TrackerParams::default()).unwrap();
        tr.step(3, &[]).unwrap();
        assert_eq!(
            tr.step(3, &[]),
            Err(TrackError::NonMonotonicFrame { prev: 3, got: 3 })
        );
    }

    #[test]
    fn finalize_applies_min_hits() {
        let params = TrackerParams {
            min_hits: 2,
            ..TrackerParams::default()
        };
        let mut tr = Tracker::new(params).unwrap();
        tr.step(0, &[det(0, 100.0, 100.0, 50.0, 50.0), det(0, 400.0, 100.0, 50.0, 50.0)])
            .unwrap();
        tr.step(1, &[det(1, 100.0, 100.0, 50.0, 50.0)]).unwrap();
        let tracks = tr.finalize();
        assert_eq!(tracks.len(), 1, "single-hit track filtered out");
        assert_eq!(tracks[0].hits, 2);
    }

    #[test]
    fn finalize_of_an_empty_tracker_is_empty() {
        let tr = Tracker::new(TrackerParams::default()).unwrap();
        assert!(tr.finalize().is_empty());
    }

    #[test]
    fn crossing_objects_keep_their_ids_via_optimal_assignment() {
        // two boxes drift toward each other's start; exact assignment keeps
        // both tracks alive with consistent ids throughout
        let params = TrackerParams::default();
        let mut tr = Tracker::new(params).unwrap();
        for f in 0..10usize {
            let t = f as f64;
            let a = det(f, 100.0 + 10.0 * t, 100.0, 60.0, 60.0);
            let b = det(f, 200.0 - 10.0 * t, 300.0, 60.0, 60.0);
            let live = tr.step(f, &[a, b]).unwrap();
            assert_eq!(live.len(), 2, "frame {f}");
        }
        let tracks = tr.finalize();
        assert_eq!(tracks.len(), 2);
        for t in &tracks {
            assert_eq!(t.hits, 10);
        }
    }

    #[test]
    fn identical_streams_produce_identical_tracks() {
        let run = || {
            let mut tr = Tracker::new(TrackerParams::default()).unwrap();
            for f in 0..20usize {
                let t = f as f64;
                let dets = vec![
                    det(f, 100.0 + 3.0 * t, 100.0 + 2.0 * t, 50.0, 40.0),
                    det(f, 400.0 - 2.0 * t, 300.0, 80.0, 70.0),
                ];
                tr.step(f, &dets).unwrap();
            }
            tr.finalize()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.len(), b.len());
        for (ta, tb) in a.iter().zip(&b) {
            assert_eq!(ta.id, tb.id);
            assert_eq!(ta.observations, tb.observations);
            assert_eq!(ta.motion.mean(), tb.motion.mean());
        }
    }

    #[test]
    fn rejects_invalid_params() {
        let params = TrackerParams {
            iou_gate: 1.5,
            ..TrackerParams::default()
        };
        assert!(Tracker::new(params).is_err());
        let params = TrackerParams {
            process_noise: 0.0,
            ..TrackerParams::default()
        };
        assert!(Tracker::new(params).is_err());
    }
}
