//! Experiment configuration: a flat `key = value` text format plus the
//! canonical serialization used for config hashing and log embedding.

use thiserror::Error;

use crate::ems::{AnchorMode, GripperSpec};
use crate::geometry::{cm_to_units, ContainerState, Unit};
use crate::stability::{CollapseThresholds, StabilityConfig};

/// Fine-tuning hyper-parameter block of the experiment config.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinetuneSettings {
    pub alpha: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Use the critic's Q in the policy gradient instead of returns.
    pub use_critic_q: bool,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        FinetuneSettings {
            alpha: 0.33,
            epsilon: 0.5,
            beta: 0.1,
            learning_rate: 1e-4,
            epochs: 10,
            batch_size: 16,
            use_critic_q: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// Container dimensions in centimetres.
    pub dims_cm: [f64; 3],
    /// Height-map cell size in centimetres.
    pub cell_cm: f64,
    pub thresholds: CollapseThresholds,
    pub stability: StabilityConfig,
    pub anchor_mode: AnchorMode,
    pub candidate_cap: usize,
    pub gripper_clearance_cm: f64,
    pub approach_height_cm: f64,
    /// Domain randomization of the per-item physics on or off.
    pub randomization: bool,
    /// Divide rewards by the container volume.
    pub normalize_rewards: bool,
    /// Keep packing after a collapse (trajectory-collection mode).
    pub continue_after_collapse: bool,
    /// Whether any picking position is reachable; an empty pick-set file
    /// turns this off and empties every candidate list.
    pub picks_available: bool,
    /// Keep only statically stable candidates (pre-training mode).
    pub static_stable_gate: bool,
    pub parallel: usize,
    pub episodes: usize,
    /// Upper end of the restitution randomization range.
    pub restitution_max: f64,
    pub finetune: FinetuneSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dims_cm: [50.0, 50.0, 50.0],
            cell_cm: 1.0,
            thresholds: CollapseThresholds::default(),
            stability: StabilityConfig::default(),
            anchor_mode: AnchorMode::Corner,
            candidate_cap: 80,
            gripper_clearance_cm: 2.0,
            approach_height_cm: 5.0,
            randomization: true,
            normalize_rewards: false,
            continue_after_collapse: false,
            picks_available: true,
            static_stable_gate: false,
            parallel: 16,
            episodes: 500,
            restitution_max: 0.3,
            finetune: FinetuneSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn container(&self) -> ContainerState {
        ContainerState::with_cell(
            [
                cm_to_units(self.dims_cm[0]),
                cm_to_units(self.dims_cm[1]),
                cm_to_units(self.dims_cm[2]),
            ],
            cm_to_units(self.cell_cm).max(1),
        )
    }

    pub fn dims_units(&self) -> [Unit; 3] {
        [
            cm_to_units(self.dims_cm[0]),
            cm_to_units(self.dims_cm[1]),
            cm_to_units(self.dims_cm[2]),
        ]
    }

    pub fn gripper(&self) -> GripperSpec {
        GripperSpec {
            clearance: cm_to_units(self.gripper_clearance_cm),
            approach: cm_to_units(self.approach_height_cm),
        }
    }

    /// Canonical text form: stable key order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let on_off = |b: bool| if b { "on" } else { "off" };
        let anchor = match self.anchor_mode {
            AnchorMode::Corner => "corner",
            AnchorMode::FourCorners => "corners4",
        };
        format!(
            "container = {} {} {}\n\
             cell = {}\n\
             max_displacement = {}\n\
             max_tilt = {}\n\
             impact_offset_coeff = {}\n\
             impact_tilt_coeff = {}\n\
             contact_tol = {}\n\
             support_ratio = {}\n\
             anchor_mode = {}\n\
             candidate_cap = {}\n\
             gripper_clearance = {}\n\
             approach_height = {}\n\
             randomization = {}\n\
             normalize_rewards = {}\n\
             continue_after_collapse = {}\n\
             picks_available = {}\n\
             static_stable_gate = {}\n\
             parallel = {}\n\
             episodes = {}\n\
             restitution_max = {}\n\
             finetune_alpha = {}\n\
             finetune_epsilon = {}\n\
             finetune_beta = {}\n\
             finetune_lr = {}\n\
             finetune_epochs = {}\n\
             finetune_batch = {}\n\
             finetune_critic_q = {}\n",
            self.dims_cm[0],
            self.dims_cm[1],
            self.dims_cm[2],
            self.cell_cm,
            self.thresholds.max_displacement_cm,
            self.thresholds.max_tilt_deg,
            self.stability.impact_offset_coeff,
            self.stability.impact_tilt_coeff,
            crate::geometry::units_to_cm(self.stability.contact_tol),
            self.stability.support_ratio,
            anchor,
            self.candidate_cap,
            self.gripper_clearance_cm,
            self.approach_height_cm,
            on_off(self.randomization),
            on_off(self.normalize_rewards),
            on_off(self.continue_after_collapse),
            on_off(self.picks_available),
            on_off(self.static_stable_gate),
            self.parallel,
            self.episodes,
            self.restitution_max,
            self.finetune.alpha,
            self.finetune.epsilon,
            self.finetune.beta,
            self.finetune.learning_rate,
            self.finetune.epochs,
            self.finetune.batch_size,
            on_off(self.finetune.use_critic_q),
        )
    }

    /// FNV-1a hash of the canonical text, used to pin reports and logs to
    /// the exact configuration that produced them.
    pub fn hash(&self) -> u64 {
        fnv1a(self.to_text().as_bytes())
    }

    /// Parses the flat key-value format. Unknown keys and malformed values
    /// are errors; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                line: idx + 1,
                reason: "expected `key = value`".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |reason: &str| ConfigError::Parse {
                line: idx + 1,
                reason: reason.to_string(),
            };
            let parse_f64 = |v: &str| v.parse::<f64>().map_err(|_| bad("expected a number"));
            let parse_usize = |v: &str| v.parse::<usize>().map_err(|_| bad("expected an integer"));
            let parse_flag = |v: &str| match v {
                "on" | "true" | "1" => Ok(true),
                "off" | "false" | "0" => Ok(false),
                _ => Err(bad("expected on/off")),
            };
            match key {
                "container" => {
                    let parts: Vec<&str> = value.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(bad("expected three dimensions"));
                    }
                    for (i, p) in parts.iter().enumerate() {
                        cfg.dims_cm[i] = parse_f64(p)?;
                    }
                }
                "cell" => cfg.cell_cm = parse_f64(value)?,
                "max_displacement" => cfg.thresholds.max_displacement_cm = parse_f64(value)?,
                "max_tilt" => cfg.thresholds.max_tilt_deg = parse_f64(value)?,
                "impact_offset_coeff" => cfg.stability.impact_offset_coeff = parse_f64(value)?,
                "impact_tilt_coeff" => cfg.stability.impact_tilt_coeff = parse_f64(value)?,
                "contact_tol" => cfg.stability.contact_tol = cm_to_units(parse_f64(value)?).max(1),
                "support_ratio" => cfg.stability.support_ratio = parse_f64(value)?,
                "anchor_mode" => {
                    cfg.anchor_mode = match value {
                        "corner" => AnchorMode::Corner,
                        "corners4" => AnchorMode::FourCorners,
                        _ => return Err(bad("expected corner or corners4")),
                    }
                }
                "candidate_cap" => cfg.candidate_cap = parse_usize(value)?,
                "gripper_clearance" => cfg.gripper_clearance_cm = parse_f64(value)?,
                "approach_height" => cfg.approach_height_cm = parse_f64(value)?,
                "randomization" => cfg.randomization = parse_flag(value)?,
                "normalize_rewards" => cfg.normalize_rewards = parse_flag(value)?,
                "continue_after_collapse" => cfg.continue_after_collapse = parse_flag(value)?,
                "picks_available" => cfg.picks_available = parse_flag(value)?,
                "static_stable_gate" => cfg.static_stable_gate = parse_flag(value)?,
                "parallel" => cfg.parallel = parse_usize(value)?.max(1),
                "episodes" => cfg.episodes = parse_usize(value)?,
                "restitution_max" => cfg.restitution_max = parse_f64(value)?,
                "finetune_alpha" => cfg.finetune.alpha = parse_f64(value)?,
                "finetune_epsilon" => cfg.finetune.epsilon = parse_f64(value)?,
                "finetune_beta" => cfg.finetune.beta = parse_f64(value)?,
                "finetune_lr" => cfg.finetune.learning_rate = parse_f64(value)?,
                "finetune_epochs" => cfg.finetune.epochs = parse_usize(value)?.max(1),
                "finetune_batch" => cfg.finetune.batch_size = parse_usize(value)?.max(1),
                "finetune_critic_q" => cfg.finetune.use_critic_q = parse_flag(value)?,
                _ => return Err(bad(&format!("unknown key {key:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
