//! Synthetic identity streams for tests, tuning and benchmarks.
//!
//! Every identity gets a random center on the unit sphere; centers are drawn
//! by rejection so that no two identities are closer than `max_center_cos`.
//! Each identity owns one or more modes placed around its center, and each
//! sample is a mode center plus isotropic gaussian noise, renormalized.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::Sample;
use crate::stream_io::shuffle_order;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SampleOrder {
    /// Uniformly shuffled stream.
    Shuffled,
    /// Identities appear progressively: each one is born at a uniform
    /// position of the stream and its samples follow within `window` (a
    /// fraction of the stream length). The live cluster count then grows
    /// roughly linearly.
    Growth { window: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub dim: usize,
    pub n_identities: usize,
    pub n_samples: usize,
    /// Inclusive range of modes per identity.
    pub min_modes: usize,
    pub max_modes: usize,
    /// Tangent-space offset of each mode center from its identity center.
    pub mode_offset: f64,
    /// Norm of the per-sample tangent noise.
    pub noise: f64,
    /// Relative spread of the per-sample noise norm, in `[0, 1)`.
    pub noise_jitter: f64,
    /// Upper bound on the cosine between two identity centers.
    pub max_center_cos: f64,
    pub order: SampleOrder,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            n_identities: 300,
            n_samples: 30_000,
            min_modes: 1,
            max_modes: 3,
            mode_offset: 0.6,
            noise: 0.7,
            noise_jitter: 0.3,
            max_center_cos: 0.3,
            order: SampleOrder::Shuffled,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub dim: usize,
    pub vectors: Vec<Vec<f32>>,
    pub labels: Vec<i64>,
    /// Global mode index of every sample.
    pub modes: Vec<usize>,
    pub mode_centers: Vec<Vec<f32>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A random unit direction orthogonal to `base`, scaled by `norm`.
fn tangent(rng: &mut ChaCha8Rng, base: &[f64], norm: f64) -> Vec<f64> {
    let g = gaussian(rng, base.len());
    let along = dot(&g, base);
    let t: Vec<f64> = g.iter().zip(base).map(|(x, b)| x - along * b).collect();
    unit(t).into_iter().map(|x| x * norm).collect()
}

impl SynthConfig {
    pub fn generate(&self) -> SynthDataset {
        assert!(self.dim >= 2 && self.n_identities >= 1);
        assert!(self.min_modes >= 1 && self.min_modes <= self.max_modes);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(self.n_identities);
        let mut attempts = 0usize;
        while centers.len() < self.n_identities {
            let c = unit(gaussian(&mut rng, self.dim));
            attempts += 1;
            if attempts > 10_000 * self.n_identities {
                panic!("cannot place {} identity centers with max cos {}", self.n_identities, self.max_center_cos);
            }
            if centers.iter().all(|o| dot(o, &c) <= self.max_center_cos) {
                centers.push(c);
            }
        }

        let mut mode_centers: Vec<Vec<f64>> = Vec::new();
        let mut identity_modes: Vec<Vec<usize>> = Vec::with_capacity(self.n_identities);
        for c in &centers {
            let m = rng.random_range(self.min_modes..=self.max_modes);
            let mut ids = Vec::with_capacity(m);
            for k in 0..m {
                let mu = if m == 1 || (k == 0 && self.mode_offset == 0.0) {
                    c.clone()
                } else {
                    let t = tangent(&mut rng, c, self.mode_offset);
                    unit(c.iter().zip(&t).map(|(a, b)| a + b).collect())
                };
                ids.push(mode_centers.len());
                mode_centers.push(mu);
            }
            identity_modes.push(ids);
        }

        // every identity gets at least one sample when possible
        let mut owner: Vec<usize> = (0..self.n_samples)
            .map(|i| {
                if i < self.n_identities {
                    i
                } else {
                    rng.random_range(0..self.n_identities)
                }
            })
            .collect();
        owner.sort_unstable();

        let mut vectors = Vec::with_capacity(self.n_samples);
        let mut labels = Vec::with_capacity(self.n_samples);
        let mut modes = Vec::with_capacity(self.n_samples);
        for &identity in &owner {
            let choices = &identity_modes[identity];
            let mode = choices[rng.random_range(0..choices.len())];
            let mu = &mode_centers[mode];
            let jitter = if self.noise_jitter > 0.0 {
                rng.random_range(-self.noise_jitter..self.noise_jitter)
            } else {
                0.0
            };
            let norm = self.noise * (1.0 + jitter);
            let g = gaussian(&mut rng, self.dim);
            let scale = norm / (self.dim as f64).sqrt();
            let v: Vec<f64> = mu.iter().zip(&g).map(|(m, x)| m + scale * x).collect();
            vectors.push(unit(v).into_iter().map(|x| x as f32).collect::<Vec<f32>>());
            labels.push(identity as i64);
            modes.push(mode);
        }

        let order: Vec<usize> = match self.order {
            SampleOrder::Shuffled => shuffle_order(self.n_samples, self.seed ^ 0x5eed),
            SampleOrder::Growth { window } => {
                let births: Vec<f64> = (0..self.n_identities).map(|_| rng.random::<f64>()).collect();
                let mut keyed: Vec<(f64, usize)> = owner
                    .iter()
                    .enumerate()
                    .map(|(i, &id)| (births[id] + window * rng.random::<f64>(), i))
                    .collect();
                keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                keyed.into_iter().map(|(_, i)| i).collect()
            }
        };

        SynthDataset {
            dim: self.dim,
            vectors: order.iter().map(|&i| vectors[i].clone()).collect(),
            labels: order.iter().map(|&i| labels[i]).collect(),
            modes: order.iter().map(|&i| modes[i]).collect(),
            mode_centers: mode_centers
                .into_iter()
                .map(|m| m.into_iter().map(|x| x as f32).collect())
                .collect(),
        }
    }
}

impl SynthDataset {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Samples with ids `0..len` in stream order.
    pub fn samples(&self) -> Vec<Sample> {
        self.vectors
            .iter()
            .enumerate()
            .map(|(i, v)| Sample::new(i as u64, v).expect("generated vectors are non-zero"))
            .collect()
    }

    /// Splits off the first `n` samples. Both halves are renumbered from 0.
    pub fn split(&self, n: usize) -> (SynthDataset, SynthDataset) {
        let n = n.min(self.len());
        let part = |range: std::ops::Range<usize>| SynthDataset {
            dim: self.dim,
            vectors: self.vectors[range.clone()].to_vec(),
            labels: self.labels[range.clone()].to_vec(),
            modes: self.modes[range].to_vec(),
            mode_centers: self.mode_centers.clone(),
        };
        (part(0..n), part(n..self.len()))
    }

    pub fn label_pairs(&self) -> impl Iterator<Item = (u64, i64)> + '_ {
        self.labels.iter().enumerate().map(|(i, &l)| (i as u64, l))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            n_identities: 10,
            n_samples: 200,
            ..SynthConfig::default()
        };
        let a = cfg.generate();
        let b = cfg.generate();
        assert_eq!(a.vectors, b.vectors);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.len(), 200);
        for v in &a.vectors {
            let n: f64 = v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn every_identity_is_represented() {
        let cfg = SynthConfig {
            n_identities: 50,
            n_samples: 60,
            ..SynthConfig::default()
        };
        let d = cfg.generate();
        let mut ids: Vec<_> = d.labels.clone();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 50);
    }

    #[test]
    fn growth_order_spreads_identity_births() {
        let cfg = SynthConfig {
            n_identities: 100,
            n_samples: 2000,
            order: SampleOrder::Growth { window: 0.05 },
            ..SynthConfig::default()
        };
        let d = cfg.generate();
        let mut seen = std::collections::BTreeSet::new();
        let mut at_half = 0;
        for (i, l) in d.labels.iter().enumerate() {
            seen.insert(*l);
            if i == d.len() / 2 {
                at_half = seen.len();
            }
        }
        assert!((30..=70).contains(&at_half), "{at_half}");
    }
}
