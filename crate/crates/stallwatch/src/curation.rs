//! Pick what humans should label: the frames within a clip that changed the
//! most, and a clip sample that covers the barn evenly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Indices of every `n`-th frame of a clip with `n_frames` frames, starting
/// at 0.
pub fn subsample_every_n(n_frames: usize, n: usize) -> Vec<usize> {
    assert!(n >= 1, "subsampling step must be at least 1");
    (0..n_frames).step_by(n).collect()
}

/// Cosine similarity, 0.0 when either vector is all zeros.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "embedding dimensions differ");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

/// Frames least similar to their predecessor — the moments something
/// happened. Keeps a `keep_fraction` of the `L - 1` frames that have a
/// predecessor, rounding the count up, and returns their indices in
/// ascending order. Ties fall to the earlier frame.
pub fn select_informative(embeddings: &[Vec<f64>], keep_fraction: f64) -> Vec<usize> {
    assert!(
        (0.0..=1.0).contains(&keep_fraction),
        "keep_fraction must be in [0, 1], got {keep_fraction}"
    );
    if embeddings.len() < 2 {
        return Vec::new();
    }
    let candidates = embeddings.len() - 1;
    // Nudge below the exact product so whole multiples are not rounded up
    // an extra step.
    let k = (keep_fraction * candidates as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut scored: Vec<(f64, usize)> = (1..embeddings.len())
        .map(|i| (cosine_similarity(&embeddings[i - 1], &embeddings[i]), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = scored[..k].iter().map(|&(_, i)| i).collect();
    picked.sort_unstable();
    picked
}

/// Where and when a clip was recorded; the sampling strata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub clip_id: String,
    pub stall_id: String,
    pub time_of_day: String,
    pub season: String,
}

impl ClipMeta {
    fn stratum(&self) -> (&str, &str, &str) {
        (&self.stall_id, &self.time_of_day, &self.season)
    }
}

/// Draw `n` clips so every (stall, time of day, season) stratum is
/// represented in proportion to its size: quotas are the proportional
/// shares rounded down, with the leftover going to the largest remainders
/// (ties in stratum order). Within a stratum the draw is uniform without
/// replacement, deterministic in `seed`. Returns sorted clip ids; all of
/// them when `n` covers the whole population.
pub fn stratified_sample(clips: &[ClipMeta], n: usize, seed: u64) -> Vec<String> {
    if n >= clips.len() {
        let mut all: Vec<String> = clips.iter().map(|c| c.clip_id.clone()).collect();
        all.sort_unstable();
        return all;
    }

    let mut strata: BTreeMap<(&str, &str, &str), Vec<&ClipMeta>> = BTreeMap::new();
    for c in clips {
        strata.entry(c.stratum()).or_default().push(c);
    }

    let total = clips.len() as f64;
    let mut quotas: Vec<usize> = Vec::with_capacity(strata.len());
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(strata.len());
    for (i, members) in strata.values().enumerate() {
        let exact = n as f64 * members.len() as f64 / total;
        let base = exact.floor() as usize;
        quotas.push(base);
        remainders.push((exact - base as f64, i));
    }
    let mut leftover = n - quotas.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &remainders {
        if leftover == 0 {
            break;
        }
        if quotas[i] < strata.values().nth(i).unwrap().len() {
            quotas[i] += 1;
            leftover -= 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = Vec::with_capacity(n);
    for (quota, members) in quotas.iter().zip(strata.values()) {
        let mut ids: Vec<&str> = members.iter().map(|c| c.clip_id.as_str()).collect();
        ids.sort_unstable();
        picked.extend(
            ids.choose_multiple(&mut rng, *quota)
                .map(|s| s.to_string()),
        );
    }
    picked.sort_unstable();
    picked
}
