//! Placement decision-makers: deterministic heuristics and a feature-based
//! stochastic softmax policy.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::ems::ActionCandidate;
use crate::geometry::{ContainerState, Unit};
use crate::stability::{static_stable, support_ratio, StabilityConfig};

pub const FEATURE_COUNT: usize = 7;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no candidates to choose from")]
    NoCandidates,
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint parse error at line {line}: {reason}")]
    CheckpointParse { line: usize, reason: String },
}

/// Per-candidate placement features, all scaled to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureVector {
    /// Container max height after the placement, over container height.
    pub resulting_height: f64,
    /// Exact bottom-face contact area over footprint area.
    pub contact_ratio: f64,
    /// Distance of the pose corner from the container origin, normalized.
    pub corner_distance: f64,
    /// Source EMS volume minus item volume, over container volume.
    pub ems_waste: f64,
    /// Rule-based static stability indicator.
    pub statically_stable: f64,
    /// Fraction of height-map cells under the footprint at support level.
    pub support_cells: f64,
    /// Fraction of neighbouring cells whose top is flush with the item top.
    pub top_flushness: f64,
}

impl FeatureVector {
    pub fn to_array(self) -> [f64; FEATURE_COUNT] {
        [
            self.resulting_height,
            self.contact_ratio,
            self.corner_distance,
            self.ems_waste,
            self.statically_stable,
            self.support_cells,
            self.top_flushness,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        FeatureVector {
            resulting_height: a[0],
            contact_ratio: a[1],
            corner_distance: a[2],
            ems_waste: a[3],
            statically_stable: a[4],
            support_cells: a[5],
            top_flushness: a[6],
        }
    }
}

/// Computes the feature vector of one candidate against the pre-insertion
/// container. Deterministic; every component lies in `[0, 1]`.
pub fn featurize(
    container: &ContainerState,
    cand: &ActionCandidate,
    cfg: &StabilityConfig,
) -> FeatureVector {
    let item = &cand.item;
    let pose = &cand.pose;
    let top_z = pose.pos[2] + item.size[2];
    let hm = &container.height_map;

    let resulting_height = hm.max_height().max(top_z) as f64 / container.dims[2] as f64;

    let contact_ratio = support_ratio(container, item, pose, cfg.contact_tol).min(1.0);

    let pose_norm: f64 = (0..3)
        .map(|a| (pose.pos[a] as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let dims_norm: f64 = (0..3)
        .map(|a| (container.dims[a] as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    let corner_distance = pose_norm / dims_norm;

    let ems_waste = (cand.source_ems.volume() - item.volume_units()).max(0) as f64
        / container.volume_units() as f64;

    let statically_stable = if static_stable(container, item, pose, [0.0; 3], cfg) {
        1.0
    } else {
        0.0
    };

    let (ix0, ix1, iy0, iy1) = hm.cell_range(
        pose.pos[0],
        pose.pos[0] + item.size[0],
        pose.pos[1],
        pose.pos[1] + item.size[1],
    );
    let mut supported = 0usize;
    let mut total = 0usize;
    for iy in iy0..iy1 {
        for ix in ix0..ix1 {
            total += 1;
            if (hm.top_at(ix, iy) - pose.pos[2]).abs() <= cfg.contact_tol {
                supported += 1;
            }
        }
    }
    let support_cells = if total == 0 {
        0.0
    } else {
        supported as f64 / total as f64
    };

    let (nx, ny) = hm.cells();
    let mut flush = 0usize;
    let mut ring = 0usize;
    let rx0 = ix0.saturating_sub(1);
    let ry0 = iy0.saturating_sub(1);
    let rx1 = (ix1 + 1).min(nx);
    let ry1 = (iy1 + 1).min(ny);
    for iy in ry0..ry1 {
        for ix in rx0..rx1 {
            let inside = ix >= ix0 && ix < ix1 && iy >= iy0 && iy < iy1;
            if inside {
                continue;
            }
            ring += 1;
            if (hm.top_at(ix, iy) - top_z).abs() <= cfg.contact_tol {
                flush += 1;
            }
        }
    }
    let top_flushness = if ring == 0 {
        0.0
    } else {
        flush as f64 / ring as f64
    };

    FeatureVector {
        resulting_height,
        contact_ratio,
        corner_distance,
        ems_waste,
        statically_stable,
        support_cells,
        top_flushness,
    }
}

/// Linear softmax policy over placement features.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxPolicy {
    pub weights: [f64; FEATURE_COUNT],
    pub temperature: f64,
}

impl SoftmaxPolicy {
    /// Zero weights: the uniform policy.
    pub fn uniform() -> Self {
        SoftmaxPolicy {
            weights: [0.0; FEATURE_COUNT],
            temperature: 1.0,
        }
    }

    pub fn score(&self, features: &FeatureVector) -> f64 {
        let f = features.to_array();
        self.weights
            .iter()
            .zip(f.iter())
            .map(|(w, x)| w * x)
            .sum::<f64>()
            / self.temperature
    }

    /// Softmax action distribution over the candidate set, stabilized by a
    /// max shift. Every probability is strictly positive.
    pub fn action_probabilities(
        &self,
        features: &[FeatureVector],
    ) -> Result<Vec<f64>, PolicyError> {
        Ok(self
            .log_probabilities(features)?
            .iter()
            .map(|l| l.exp())
            .collect())
    }

    pub fn log_probabilities(&self, features: &[FeatureVector]) -> Result<Vec<f64>, PolicyError> {
        if features.is_empty() {
            return Err(PolicyError::NoCandidates);
        }
        let scores: Vec<f64> = features.iter().map(|f| self.score(f)).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln() + max;
        Ok(scores.iter().map(|s| s - log_z).collect())
    }

    /// Gradient of `log pi(chosen)` with respect to the weights:
    /// `(f_chosen - sum_i p_i f_i) / temperature`.
    pub fn grad_log_prob(
        &self,
        features: &[FeatureVector],
        chosen: usize,
    ) -> Result<[f64; FEATURE_COUNT], PolicyError> {
        let probs = self.action_probabilities(features)?;
        let mut grad = features[chosen].to_array();
        for (f, p) in features.iter().zip(probs.iter()) {
            let fa = f.to_array();
            for (g, x) in grad.iter_mut().zip(fa.iter()) {
                *g -= p * x;
            }
        }
        for g in grad.iter_mut() {
            *g /= self.temperature;
        }
        Ok(grad)
    }

    /// `KL(self || old)` over one candidate set.
    pub fn kl_divergence(
        &self,
        old: &SoftmaxPolicy,
        features: &[FeatureVector],
    ) -> Result<f64, PolicyError> {
        let lp = self.log_probabilities(features)?;
        let lq = old.log_probabilities(features)?;
        Ok(lp
            .iter()
            .zip(lq.iter())
            .map(|(p, q)| p.exp() * (p - q))
            .sum())
    }

    /// Gradient of `KL(self || old)` with respect to this policy's weights:
    /// `sum_i p_i (log p_i - log q_i) (f_i - fbar) / temperature`.
    pub fn grad_kl(
        &self,
        old: &SoftmaxPolicy,
        features: &[FeatureVector],
    ) -> Result<[f64; FEATURE_COUNT], PolicyError> {
        let lp = self.log_probabilities(features)?;
        let lq = old.log_probabilities(features)?;
        let probs: Vec<f64> = lp.iter().map(|l| l.exp()).collect();
        let mut fbar = [0.0; FEATURE_COUNT];
        for (f, p) in features.iter().zip(probs.iter()) {
            let fa = f.to_array();
            for (m, x) in fbar.iter_mut().zip(fa.iter()) {
                *m += p * x;
            }
        }
        let mut grad = [0.0; FEATURE_COUNT];
        for i in 0..features.len() {
            let coeff = probs[i] * (lp[i] - lq[i]);
            let fa = features[i].to_array();
            for a in 0..FEATURE_COUNT {
                grad[a] += coeff * (fa[a] - fbar[a]) / self.temperature;
            }
        }
        Ok(grad)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), PolicyError> {
        let mut text = String::from("softmax-policy v1\n");
        let _ = writeln!(text, "temperature {}", self.temperature);
        let words: Vec<String> = self.weights.iter().map(|w| w.to_string()).collect();
        let _ = writeln!(text, "weights {}", words.join(" "));
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(PolicyError::CheckpointParse {
            line: 1,
            reason: "empty file".into(),
        })?;
        if header.trim() != "softmax-policy v1" {
            return Err(PolicyError::CheckpointParse {
                line: 1,
                reason: format!("unsupported header {header:?}"),
            });
        }
        let mut temperature = None;
        let mut weights = None;
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("temperature") => {
                    let v = parts.next().and_then(|s| s.parse::<f64>().ok()).ok_or(
                        PolicyError::CheckpointParse {
                            line: idx + 1,
                            reason: "bad temperature".into(),
                        },
                    )?;
                    temperature = Some(v);
                }
                Some("weights") => {
                    let vals: Result<Vec<f64>, _> = parts.map(|s| s.parse::<f64>()).collect();
                    let vals = vals.map_err(|_| PolicyError::CheckpointParse {
                        line: idx + 1,
                        reason: "bad weight value".into(),
                    })?;
                    if vals.len() != FEATURE_COUNT {
                        return Err(PolicyError::CheckpointParse {
                            line: idx + 1,
                            reason: format!("expected {FEATURE_COUNT} weights, got {}", vals.len()),
                        });
                    }
                    let mut w = [0.0; FEATURE_COUNT];
                    w.copy_from_slice(&vals);
                    weights = Some(w);
                }
                _ => {
                    return Err(PolicyError::CheckpointParse {
                        line: idx + 1,
                        reason: format!("unknown field {line:?}"),
                    })
                }
            }
        }
        match (temperature, weights) {
            (Some(temperature), Some(weights)) => Ok(SoftmaxPolicy {
                weights,
                temperature,
            }),
            _ => Err(PolicyError::CheckpointParse {
                line: 1,
                reason: "missing temperature or weights".into(),
            }),
        }
    }
}

/// Deepest-bottom-left ordering key: lexicographic (z, y, x).
fn dblf_key(c: &ActionCandidate) -> (Unit, Unit, Unit) {
    (c.pose.pos[2], c.pose.pos[1], c.pose.pos[0])
}

/// Deepest-bottom-left-fill: lexicographically minimal (z, y, x) pose;
/// ties go to the earlier-enumerated candidate.
pub fn heuristic_dblf(candidates: &[ActionCandidate]) -> Result<usize, PolicyError> {
    candidates
        .iter()
        .enumerate()
        .min_by_key(|(i, c)| (dblf_key(c), *i))
        .map(|(i, _)| i)
        .ok_or(PolicyError::NoCandidates)
}

/// Best-fit: minimal source-EMS waste, ties broken in DBLF order.
pub fn heuristic_best_fit(candidates: &[ActionCandidate]) -> Result<usize, PolicyError> {
    candidates
        .iter()
        .enumerate()
        .min_by_key(|(i, c)| {
            (
                c.source_ems.volume() - c.item.volume_units(),
                dblf_key(c),
                *i,
            )
        })
        .map(|(i, _)| i)
        .ok_or(PolicyError::NoCandidates)
}

/// Maximal bottom-contact: highest contact-area ratio, ties in DBLF order.
pub fn heuristic_max_contact(
    candidates: &[ActionCandidate],
    features: &[FeatureVector],
) -> Result<usize, PolicyError> {
    if candidates.is_empty() {
        return Err(PolicyError::NoCandidates);
    }
    debug_assert_eq!(candidates.len(), features.len());
    let mut best = 0usize;
    for i in 1..candidates.len() {
        let better = features[i].contact_ratio > features[best].contact_ratio + 1e-12
            || ((features[i].contact_ratio - features[best].contact_ratio).abs() <= 1e-12
                && dblf_key(&candidates[i]) < dblf_key(&candidates[best]));
        if better {
            best = i;
        }
    }
    Ok(best)
}

/// A chosen action index plus the log-probability the chooser assigned to it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub index: usize,
    pub log_prob: f64,
}

/// Anything that can pick a placement from the pruned candidate list.
/// Implementations must be pure functions of their inputs and the seed.
pub trait PackPolicy {
    fn name(&self) -> &'static str;

    fn decide(
        &self,
        container: &ContainerState,
        candidates: &[ActionCandidate],
        features: &[FeatureVector],
        seed: u64,
    ) -> Result<Decision, PolicyError>;
}

pub struct DblfPolicy;

impl PackPolicy for DblfPolicy {
    fn name(&self) -> &'static str {
        "dblf"
    }

    fn decide(
        &self,
        _container: &ContainerState,
        candidates: &[ActionCandidate],
        _features: &[FeatureVector],
        _seed: u64,
    ) -> Result<Decision, PolicyError> {
        Ok(Decision {
            index: heuristic_dblf(candidates)?,
            log_prob: 0.0,
        })
    }
}

pub struct BestFitPolicy;

impl PackPolicy for BestFitPolicy {
    fn name(&self) -> &'static str {
        "best-fit"
    }

    fn decide(
        &self,
        _container: &ContainerState,
        candidates: &[ActionCandidate],
        _features: &[FeatureVector],
        _seed: u64,
    ) -> Result<Decision, PolicyError> {
        Ok(Decision {
            index: heuristic_best_fit(candidates)?,
            log_prob: 0.0,
        })
    }
}

pub struct MaxContactPolicy;

impl PackPolicy for MaxContactPolicy {
    fn name(&self) -> &'static str {
        "max-contact"
    }

    fn decide(
        &self,
        _container: &ContainerState,
        candidates: &[ActionCandidate],
        features: &[FeatureVector],
        _seed: u64,
    ) -> Result<Decision, PolicyError> {
        Ok(Decision {
            index: heuristic_max_contact(candidates, features)?,
            log_prob: 0.0,
        })
    }
}

impl PackPolicy for SoftmaxPolicy {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn decide(
        &self,
        _container: &ContainerState,
        _candidates: &[ActionCandidate],
        features: &[FeatureVector],
        seed: u64,
    ) -> Result<Decision, PolicyError> {
        let log_probs = self.log_probabilities(features)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut index = log_probs.len() - 1;
        for (i, lp) in log_probs.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                index = i;
                break;
            }
        }
        Ok(Decision {
            index,
            log_prob: log_probs[index],
        })
    }
}
