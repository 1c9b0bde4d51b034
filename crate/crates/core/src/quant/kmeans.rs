//! One-dimensional k-means (Lloyd iterations) for scalar weight sharing.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMethod {
    /// k distinct weights sampled at random.
    Forgy,
    /// Evenly spaced quantiles of the weight distribution.
    Density,
    /// Evenly spaced between the smallest and largest weight.
    Linear,
}

impl InitMethod {
    pub const ALL: [InitMethod; 3] = [InitMethod::Forgy, InitMethod::Density, InitMethod::Linear];

    pub fn name(self) -> &'static str {
        match self {
            InitMethod::Forgy => "forgy",
            InitMethod::Density => "density",
            InitMethod::Linear => "linear",
        }
    }
}

impl std::str::FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forgy" => Ok(InitMethod::Forgy),
            "density" => Ok(InitMethod::Density),
            "linear" => Ok(InitMethod::Linear),
            other => Err(Error::Argument(format!("unknown init method {other:?}"))),
        }
    }
}

/// Initial centroids; `fallback` is set when Forgy had too few distinct weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidInit {
    pub centroids: Vec<f32>,
    pub fallback: Option<String>,
}

fn distinct_sorted(weights: &[f32]) -> Vec<f32> {
    let mut v: Vec<f32> = weights.iter().map(|w| if *w == 0.0 { 0.0 } else { *w }).collect();
    v.sort_by(f32::total_cmp);
    v.dedup();
    v
}

fn linear_span(min: f32, max: f32, k: usize) -> Vec<f32> {
    if k == 1 {
        return vec![min];
    }
    let (lo, hi) = (min as f64, max as f64);
    (0..k)
        .map(|i| {
            if i == k - 1 {
                max
            } else {
                (lo + i as f64 * (hi - lo) / (k - 1) as f64) as f32
            }
        })
        .collect()
}

pub fn init_centroids(weights: &[f32], k: usize, method: InitMethod, seed: u64) -> Result<CentroidInit> {
    if weights.is_empty() {
        return Err(Error::Argument("cannot initialize centroids from no weights".into()));
    }
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite()) {
        return Err(Error::Argument(format!("non-finite weight {w}")));
    }
    let (min, max) = weights
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), w| (lo.min(*w), hi.max(*w)));
    let centroids = match method {
        InitMethod::Linear => linear_span(min, max, k),
        InitMethod::Density => {
            let mut sorted = weights.to_vec();
            sorted.sort_by(f32::total_cmp);
            let n = sorted.len();
            (0..k)
                .map(|i| {
                    let y = (i as f64 + 0.5) / k as f64;
                    sorted[((y * n as f64).floor() as usize).min(n - 1)]
                })
                .collect()
        }
        InitMethod::Forgy => {
            let distinct = distinct_sorted(weights);
            if distinct.len() < k {
                let mut c = distinct.clone();
                c.extend(linear_span(min, max, k - distinct.len()));
                return Ok(CentroidInit {
                    centroids: c,
                    fallback: Some(format!(
                        "only {} distinct weights for k = {k}; padded with linear spacing",
                        distinct.len()
                    )),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut seen = HashSet::with_capacity(k);
            let mut c = Vec::with_capacity(k);
            while c.len() < k {
                let w = weights[rng.random_range(0..weights.len())];
                let w = if w == 0.0 { 0.0 } else { w };
                if seen.insert(w.to_bits()) {
                    c.push(w);
                }
            }
            c
        }
    };
    Ok(CentroidInit {
        centroids,
        fallback: None,
    })
}

/// Nearest-centroid lookup over centroids sorted by value.
///
/// Equal centroid values collapse to their lowest index; equidistant neighbours
/// resolve to the lower index.
struct NearestIndex {
    values: Vec<f64>,
    ids: Vec<usize>,
}

impl NearestIndex {
    fn new(centroids: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..centroids.len()).collect();
        order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]).then(a.cmp(&b)));
        let mut values: Vec<f64> = Vec::with_capacity(order.len());
        let mut ids = Vec::with_capacity(order.len());
        for i in order {
            if values.last() == Some(&centroids[i]) {
                continue;
            }
            values.push(centroids[i]);
            ids.push(i);
        }
        Self { values, ids }
    }

    fn nearest(&self, w: f64) -> usize {
        let j = self.values.partition_point(|c| *c < w);
        if j == 0 {
            return self.ids[0];
        }
        if j == self.values.len() {
            return self.ids[j - 1];
        }
        let left = w - self.values[j - 1];
        let right = self.values[j] - w;
        if left < right {
            self.ids[j - 1]
        } else if right < left {
            self.ids[j]
        } else {
            self.ids[j - 1].min(self.ids[j])
        }
    }
}

fn assign(weights: &[f32], centroids: &[f64], out: &mut [usize]) -> f64 {
    let index = NearestIndex::new(centroids);
    let mut wcss = 0.0;
    for (slot, &w) in out.iter_mut().zip(weights) {
        let c = index.nearest(w as f64);
        *slot = c;
        let d = w as f64 - centroids[c];
        wcss += d * d;
    }
    wcss
}

/// Within-cluster sum of squares for an explicit assignment.
pub fn wcss(weights: &[f32], centroids: &[f32], assignment: &[u16]) -> f64 {
    weights
        .iter()
        .zip(assignment)
        .map(|(&w, &a)| {
            let d = w as f64 - centroids[a as usize] as f64;
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub centroids: Vec<f32>,
    /// Cluster index per weight, in input order.
    pub assignment: Vec<u16>,
    pub wcss: f64,
    pub iterations_run: usize,
    /// WCSS after every assignment step, starting with the initial centroids.
    pub history: Vec<f64>,
}

/// Lloyd iterations until the relative WCSS improvement drops below `rel_tol`,
/// the assignment stops changing, or `max_iters` updates have run.
///
/// An emptied cluster is re-seeded at the point farthest from its own centroid.
pub fn kmeans(weights: &[f32], initial: &[f32], max_iters: usize, rel_tol: f64) -> Result<ClusterResult> {
    if weights.is_empty() || initial.is_empty() {
        return Err(Error::Argument("k-means needs weights and at least one centroid".into()));
    }
    if initial.len() > 1 << 16 {
        return Err(Error::Argument(format!("k = {} exceeds 65536", initial.len())));
    }
    if max_iters == 0 || !(rel_tol >= 0.0) {
        return Err(Error::Argument("max_iters must be >= 1 and rel_tol >= 0".into()));
    }
    let k = initial.len();
    let mut centroids: Vec<f64> = initial.iter().map(|c| *c as f64).collect();
    let mut current = vec![0usize; weights.len()];
    let mut next = vec![0usize; weights.len()];
    let mut prev_wcss = assign(weights, &centroids, &mut current);
    let mut history = vec![prev_wcss];
    let mut iterations_run = 0;

    let mut sums = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    for it in 1..=max_iters {
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for (&w, &a) in weights.iter().zip(&current) {
            sums[a] += w as f64;
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c] / counts[c] as f64;
            }
        }
        if counts.contains(&0) {
            let mut dist: Vec<f64> = weights
                .iter()
                .zip(&current)
                .map(|(&w, &a)| (w as f64 - centroids[a]).abs())
                .collect();
            for c in 0..k {
                if counts[c] == 0 {
                    let far = (0..dist.len())
                        .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                        .expect("weights nonempty");
                    centroids[c] = weights[far] as f64;
                    dist[far] = -1.0;
                }
            }
        }
        let cur_wcss = assign(weights, &centroids, &mut next);
        history.push(cur_wcss);
        iterations_run = it;
        let unchanged = next == current;
        std::mem::swap(&mut current, &mut next);
        let improvement = prev_wcss - cur_wcss;
        prev_wcss = cur_wcss;
        if unchanged || cur_wcss == 0.0 || improvement <= rel_tol * history[history.len() - 2] {
            break;
        }
    }

    // Final nearest assignment against the f32 codebook that will actually be stored.
    let stored: Vec<f32> = centroids.iter().map(|c| *c as f32).collect();
    let stored64: Vec<f64> = stored.iter().map(|c| *c as f64).collect();
    let final_wcss = assign(weights, &stored64, &mut current);
    Ok(ClusterResult {
        centroids: stored,
        assignment: current.iter().map(|a| *a as u16).collect(),
        wcss: final_wcss,
        iterations_run,
        history,
    })
}
