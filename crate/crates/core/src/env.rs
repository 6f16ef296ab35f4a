//! The online-packing MDP: episode lifecycle, reward, trajectory records and
//! parallel batch evaluation.

use rayon::prelude::*;
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::ems::{
    candidate_placements, compute_ems, prune_feasible, update_ems, ActionCandidate, EmsBox,
};
use crate::geometry::{
    space_utilization, units_to_cm, ContainerState, ItemSpec, PlacementError, Pose,
};
use crate::policy::{featurize, FeatureVector, PackPolicy, PolicyError};
use crate::randomizer::{sample_params, ParamTable};
use crate::stability::{settle, PhysicsParams};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("item stream is empty")]
    EmptyStream,
    #[error("action index {index} out of {available} candidates")]
    InvalidAction { index: usize, available: usize },
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

pub const SALT_SETTLE: u64 = 0x5e77;
pub const SALT_PHYSICS: u64 = 0x9b75;
pub const SALT_POLICY: u64 = 0xdec1;

/// Salted seed derivation so the per-step settle, physics and policy draws
/// come from independent deterministic streams.
pub fn derive_seed(seed: u64, index: u64, salt: u64) -> u64 {
    let mut x = seed ^ salt.wrapping_mul(0x9e3779b97f4a7c15);
    x = x.wrapping_add(index.wrapping_mul(0xd1b54a32d192ed03));
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Everything a policy needs to act at one step.
#[derive(Clone, Debug)]
pub struct PackState {
    pub container: ContainerState,
    pub next_item: ItemSpec,
    pub ems: Vec<EmsBox>,
    pub candidates: Vec<ActionCandidate>,
    pub features: Vec<FeatureVector>,
    pub t: usize,
    pub episode_seed: u64,
    stream_pos: usize,
}

/// Compact state digest carried in transitions and logs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateSummary {
    pub t: usize,
    pub items_placed: usize,
    pub su: f64,
    pub max_height_cm: f64,
}

fn summarize(container: &ContainerState, t: usize) -> StateSummary {
    StateSummary {
        t,
        items_placed: container.items.len(),
        su: space_utilization(container),
        max_height_cm: units_to_cm(container.height_map.max_height()),
    }
}

/// One environment step: action, reward and termination flags.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub t: usize,
    pub item: ItemSpec,
    pub action_index: usize,
    pub pose: Pose,
    pub candidate_count: usize,
    pub reward: f64,
    pub done: bool,
    /// Success flag: false only on a collapse transition.
    pub succeeded: bool,
    pub pre: StateSummary,
    pub post: StateSummary,
}

/// Transition plus what is needed to replay and re-weight it.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub transition: Transition,
    pub behavior_log_prob: Option<f64>,
    pub params: PhysicsParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectorySource {
    Simulated,
    RealPhase1,
}

/// A full episode trace, replayable given the same build and config.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub source: TrajectorySource,
    pub episode_seed: u64,
    pub steps: Vec<TrajectoryStep>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TerminalKind {
    Collapse,
    StreamExhausted,
    NoFeasibleAction,
}

/// Episode outcome and bookkeeping for metrics.
#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub su: f64,
    pub terminated_by: TerminalKind,
    /// Items that were placed and stayed stable.
    pub items_placed: usize,
    /// Placement attempts (steps taken).
    pub attempts: usize,
    /// Collapse events (the collapse-causing items).
    pub collapse_item_count: usize,
    pub episode_return: f64,
    pub seed: u64,
    pub trajectory: TrajectoryRecord,
    pub final_container: ContainerState,
}

impl EpisodeResult {
    pub fn terminated_by_collapse(&self) -> bool {
        self.terminated_by == TerminalKind::Collapse
    }
}

fn build_candidates(
    container: &ContainerState,
    ems: &[EmsBox],
    item: &ItemSpec,
    cfg: &ExperimentConfig,
) -> (Vec<ActionCandidate>, Vec<FeatureVector>) {
    if !cfg.picks_available {
        return (Vec::new(), Vec::new());
    }
    let raw = candidate_placements(ems, item, cfg.anchor_mode, cfg.candidate_cap);
    let pruned = prune_feasible(&raw, container, &cfg.gripper());
    let features: Vec<FeatureVector> = pruned
        .iter()
        .map(|c| featurize(container, c, &cfg.stability))
        .collect();
    if cfg.static_stable_gate {
        let mut gated_cands = Vec::new();
        let mut gated_feats = Vec::new();
        for (c, f) in pruned.iter().zip(features.iter()) {
            if f.statically_stable > 0.5 {
                gated_cands.push(*c);
                gated_feats.push(*f);
            }
        }
        return (gated_cands, gated_feats);
    }
    (pruned, features)
}

/// Starts an episode: empty container, first item drawn, EMS covering the
/// whole container.
pub fn reset(
    stream: &[ItemSpec],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<PackState, EnvError> {
    let first = stream.first().copied().ok_or(EnvError::EmptyStream)?;
    let container = cfg.container();
    let ems = compute_ems(&container);
    let (candidates, features) = build_candidates(&container, &ems, &first, cfg);
    Ok(PackState {
        container,
        next_item: first,
        ems,
        candidates,
        features,
        t: 0,
        episode_seed: seed,
        stream_pos: 0,
    })
}

/// What follows a step: the next state, or the reason the episode ended
/// together with the final container.
#[derive(Debug)]
pub enum StepNext {
    Continue(Box<PackState>),
    Terminal {
        kind: TerminalKind,
        container: Box<ContainerState>,
    },
}

/// Applies one action: geometric insert, settle, reward, EMS update and the
/// draw of the next item.
pub fn step(
    mut state: PackState,
    action_index: usize,
    params: &PhysicsParams,
    stream: &[ItemSpec],
    cfg: &ExperimentConfig,
) -> Result<(Transition, StepNext), EnvError> {
    let available = state.candidates.len();
    let cand = *state
        .candidates
        .get(action_index)
        .ok_or(EnvError::InvalidAction {
            index: action_index,
            available,
        })?;
    let pre = summarize(&state.container, state.t);
    state
        .container
        .insert_item(cand.item, cand.pose, params.mass_center_offset)?;
    let outcome = settle(
        &state.container,
        params,
        &cfg.thresholds,
        &cfg.stability,
        derive_seed(state.episode_seed, state.t as u64, SALT_SETTLE),
    );
    for (placed, pose) in state.container.items.iter_mut().zip(outcome.poses.iter()) {
        placed.current = *pose;
    }
    let volume_reward = if cfg.normalize_rewards {
        cand.item.volume_cm3() / state.container.volume_cm3()
    } else {
        cand.item.volume_cm3()
    };

    if !outcome.stable && !cfg.continue_after_collapse {
        let post = summarize(&state.container, state.t + 1);
        let transition = Transition {
            t: state.t,
            item: cand.item,
            action_index,
            pose: cand.pose,
            candidate_count: available,
            reward: 0.0,
            done: true,
            succeeded: false,
            pre,
            post,
        };
        return Ok((
            transition,
            StepNext::Terminal {
                kind: TerminalKind::Collapse,
                container: Box::new(state.container),
            },
        ));
    }

    let succeeded = outcome.stable;
    if !succeeded {
        // Collection mode: the stack is manually repacked to plan.
        for placed in state.container.items.iter_mut() {
            placed.current = placed.planned;
        }
    }
    let reward = if succeeded { volume_reward } else { 0.0 };
    state.ems = update_ems(
        &state.ems,
        &state.container.items.last().unwrap().planned_aabb(),
    );
    state.stream_pos += 1;
    let post = summarize(&state.container, state.t + 1);

    let mut transition = Transition {
        t: state.t,
        item: cand.item,
        action_index,
        pose: cand.pose,
        candidate_count: available,
        reward,
        done: false,
        succeeded,
        pre,
        post,
    };

    let Some(next_item) = stream.get(state.stream_pos).copied() else {
        transition.done = true;
        return Ok((
            transition,
            StepNext::Terminal {
                kind: TerminalKind::StreamExhausted,
                container: Box::new(state.container),
            },
        ));
    };
    let (candidates, features) = build_candidates(&state.container, &state.ems, &next_item, cfg);
    if candidates.is_empty() {
        transition.done = true;
        return Ok((
            transition,
            StepNext::Terminal {
                kind: TerminalKind::NoFeasibleAction,
                container: Box::new(state.container),
            },
        ));
    }
    state.next_item = next_item;
    state.candidates = candidates;
    state.features = features;
    state.t += 1;
    Ok((transition, StepNext::Continue(Box::new(state))))
}

/// Physics for one placement: sampled when randomization is on, nominal
/// otherwise.
pub fn physics_for_step(
    cfg: &ExperimentConfig,
    table: &ParamTable,
    episode_seed: u64,
    t: usize,
) -> PhysicsParams {
    if cfg.randomization {
        sample_params(table, derive_seed(episode_seed, t as u64, SALT_PHYSICS))
    } else {
        PhysicsParams::nominal()
    }
}

/// Runs a whole episode under the policy. Deterministic for a fixed
/// (policy, stream, config, seed).
pub fn run_episode(
    policy: &dyn PackPolicy,
    stream: &[ItemSpec],
    cfg: &ExperimentConfig,
    table: &ParamTable,
    seed: u64,
    source: TrajectorySource,
) -> Result<EpisodeResult, EnvError> {
    let mut state = reset(stream, cfg, seed)?;
    let mut steps: Vec<TrajectoryStep> = Vec::new();
    let mut episode_return = 0.0;
    let mut items_placed = 0usize;
    let mut collapse_item_count = 0usize;
    let (terminated_by, final_container) = loop {
        if state.candidates.is_empty() {
            break (TerminalKind::NoFeasibleAction, state.container);
        }
        let decision = policy.decide(
            &state.container,
            &state.candidates,
            &state.features,
            derive_seed(seed, state.t as u64, SALT_POLICY),
        )?;
        let params = physics_for_step(cfg, table, seed, state.t);
        let (transition, next) = step(state, decision.index, &params, stream, cfg)?;
        episode_return += transition.reward;
        if transition.succeeded {
            items_placed += 1;
        } else {
            collapse_item_count += 1;
        }
        steps.push(TrajectoryStep {
            transition,
            behavior_log_prob: Some(decision.log_prob),
            params,
        });
        match next {
            StepNext::Continue(s) => state = *s,
            StepNext::Terminal { kind, container } => break (kind, *container),
        }
    };
    Ok(EpisodeResult {
        su: space_utilization(&final_container),
        terminated_by,
        items_placed,
        attempts: steps.len(),
        collapse_item_count,
        episode_return,
        seed,
        trajectory: TrajectoryRecord {
            source,
            episode_seed: seed,
            steps,
        },
        final_container,
    })
}

/// Runs one episode per seed on a pool of `n_parallel` workers. Results come
/// back in seed order and are a pure function of the seeds.
pub fn run_batch(
    policy: &(dyn PackPolicy + Sync),
    stream_for: &(dyn Fn(u64) -> Vec<ItemSpec> + Sync),
    cfg: &ExperimentConfig,
    table: &ParamTable,
    n_parallel: usize,
    seeds: &[u64],
) -> Result<Vec<EpisodeResult>, EnvError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n_parallel.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let stream = stream_for(seed);
                run_episode(
                    policy,
                    &stream,
                    cfg,
                    table,
                    seed,
                    TrajectorySource::Simulated,
                )
            })
            .collect()
    })
}
