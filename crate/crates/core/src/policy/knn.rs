//! Nearest-neighbour behavioural cloning.

use super::data::Dataset;
use super::{featurize, Observation, Policy, WaypointPrediction};
use crate::error::{Error, Result};
use crate::geometry::Point2;

const DISTANCE_EPS: f64 = 1e-6;
const STD_FLOOR: f64 = 1e-9;

/// Standardised-feature kNN regressor over waypoint offsets.
///
/// A sample with multiplicity `m` behaves exactly like `m` adjacent copies:
/// copies count toward `k` and toward the standardisation statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnBcPolicy {
    k: usize,
    n: usize,
    period: f64,
    dim: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    features: Vec<f64>,
    targets: Vec<Point2>,
    copies: Vec<u32>,
}

impl KnnBcPolicy {
    /// A policy with no training data; every query fails.
    pub fn untrained(n: usize, period: f64) -> Self {
        Self {
            k: 1,
            n,
            period,
            dim: 0,
            mean: Vec::new(),
            scale: Vec::new(),
            features: Vec::new(),
            targets: Vec::new(),
            copies: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.copies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.copies.is_empty()
    }

    /// Prediction for a raw (unstandardised) feature vector.
    pub fn predict_features(&self, query: &[f64]) -> Result<WaypointPrediction> {
        if self.is_empty() {
            return Err(Error::Untrained);
        }
        if query.len() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "query has {} features, policy was fit on {}",
                query.len(),
                self.dim
            )));
        }
        let z: Vec<f64> = query
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(q, (m, s))| (q - m) / s)
            .collect();
        let mut dist: Vec<(f64, usize)> = self
            .features
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, row)| (row.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        let by_key = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        // at most k distinct samples are needed since each holds at least one copy
        let keep = self.k.min(dist.len());
        if keep < dist.len() {
            dist.select_nth_unstable_by(keep - 1, by_key);
            dist.truncate(keep);
        }
        dist.sort_unstable_by(by_key);

        let mut need = self.k;
        let mut acc = vec![Point2::ZERO; self.n];
        let mut wsum = 0.0;
        for (d2, i) in dist {
            if need == 0 {
                break;
            }
            let used = (self.copies[i] as usize).min(need);
            need -= used;
            let w = used as f64 / (d2.sqrt() + DISTANCE_EPS);
            wsum += w;
            for (a, t) in acc.iter_mut().zip(&self.targets[i * self.n..(i + 1) * self.n]) {
                *a += *t * w;
            }
        }
        let offsets = acc.into_iter().map(|a| a * (1.0 / wsum)).collect();
        WaypointPrediction::new(offsets, self.period)
    }
}

impl Policy for KnnBcPolicy {
    fn act(&self, obs: &Observation) -> Result<WaypointPrediction> {
        self.predict_features(&featurize(obs))
    }
}

/// Fits the regressor; `k` larger than the total copy count is capped.
pub fn knn_bc_fit(dataset: &Dataset, k: usize) -> Result<KnnBcPolicy> {
    if dataset.is_empty() {
        return Err(Error::Validation("cannot fit a policy on an empty dataset".into()));
    }
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    let total = dataset.weighted_len();
    let k = if k as u64 > total {
        log::warn!("k = {k} exceeds the {total} weighted samples; using {total}");
        total as usize
    } else {
        k
    };
    let dim = dataset.samples()[0].features.len();
    let mut mean = vec![0.0; dim];
    for s in dataset.samples() {
        for (m, f) in mean.iter_mut().zip(&s.features) {
            *m += s.multiplicity as f64 * f;
        }
    }
    mean.iter_mut().for_each(|m| *m /= total as f64);
    let mut var = vec![0.0; dim];
    for s in dataset.samples() {
        for ((v, f), m) in var.iter_mut().zip(&s.features).zip(&mean) {
            *v += s.multiplicity as f64 * (f - m) * (f - m);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let sd = (v / total as f64).sqrt();
            if sd < STD_FLOOR {
                1.0
            } else {
                sd
            }
        })
        .collect();
    let mut features = Vec::with_capacity(dataset.len() * dim);
    let mut targets = Vec::with_capacity(dataset.len() * dataset.n);
    let mut copies = Vec::with_capacity(dataset.len());
    for s in dataset.samples() {
        features.extend(s.features.iter().zip(mean.iter().zip(&scale)).map(|(f, (m, sd))| (f - m) / sd));
        targets.extend_from_slice(&s.targets);
        copies.push(s.multiplicity);
    }
    Ok(KnnBcPolicy {
        k,
        n: dataset.n,
        period: dataset.period,
        dim,
        mean,
        scale,
        features,
        targets,
        copies,
    })
}
