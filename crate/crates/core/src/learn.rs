//! Training updates: pre-training policy gradient, the off-policy fine-tuning
//! rule with importance sampling and a KL penalty, trajectory similarity
//! filtering, collapse-penalty relabeling, the linear critic and the gradual
//! decay of collapse Q-targets.

use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::env::{self, EnvError, StepNext, TrajectoryRecord, TrajectorySource, Transition};
use crate::geometry::ItemSpec;
use crate::policy::{FeatureVector, PolicyError, SoftmaxPolicy, FEATURE_COUNT};

/// Importance ratios are clipped to this band to bound the variance of
/// retained-but-divergent steps.
pub const RATIO_CLIP: (f64, f64) = (0.1, 10.0);

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("step carries no behavior log-probability")]
    MissingBehaviorProb,
    #[error("empty batch")]
    EmptyBatch,
    #[error("replay diverged at step {t}: {reason}")]
    ReplayMismatch { t: usize, reason: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Next-state data used for critic bootstrapping.
#[derive(Clone, Debug, PartialEq)]
pub struct NextState {
    pub candidate_features: Vec<FeatureVector>,
    pub su: f64,
    /// Action the behavior policy took at the next state, when logged.
    pub logged_action: Option<usize>,
}

/// One logged step re-derived against the current build: the full candidate
/// set with features and normalized poses, the chosen index, and returns.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedStep {
    pub candidate_features: Vec<FeatureVector>,
    /// Candidate poses normalized per axis by the container dimensions.
    pub candidate_poses_norm: Vec<[f64; 3]>,
    pub chosen: usize,
    pub behavior_log_prob: Option<f64>,
    pub reward: f64,
    pub done: bool,
    pub succeeded: bool,
    /// Volume reward of the placed item in the episode's reward scale.
    pub item_volume_reward: f64,
    /// Undiscounted return-to-go from this step.
    pub return_to_go: f64,
    pub su_before: f64,
    pub next: Option<NextState>,
    pub source: TrajectorySource,
}

/// A replayed episode: prepared steps plus the re-derived transitions for
/// bit-exact comparison against the log.
#[derive(Clone, Debug)]
pub struct ReplayedEpisode {
    pub steps: Vec<PreparedStep>,
    pub transitions: Vec<Transition>,
}

fn reward_scale(cfg: &ExperimentConfig, item: &ItemSpec) -> f64 {
    if cfg.normalize_rewards {
        item.volume_cm3() / (cfg.dims_cm[0] * cfg.dims_cm[1] * cfg.dims_cm[2])
    } else {
        item.volume_cm3()
    }
}

/// Collapse-penalty relabeling: if the trajectory terminated in a collapse,
/// the terminal reward becomes `-alpha * r_int` of the final item; every
/// other reward is untouched.
pub fn relabel_collapse_penalty(
    record: &TrajectoryRecord,
    alpha: f64,
    cfg: &ExperimentConfig,
) -> TrajectoryRecord {
    let mut out = record.clone();
    if let Some(last) = out.steps.last_mut() {
        if last.transition.done && !last.transition.succeeded {
            last.transition.reward = -alpha * reward_scale(cfg, &last.transition.item);
        }
    }
    out
}

/// Replays a trajectory through the environment, forcing the logged actions,
/// and re-derives candidate sets, features and transitions.
///
/// The config must be the one the log was recorded under; a divergent
/// candidate list is reported as [`LearnError::ReplayMismatch`].
pub fn replay_record(
    record: &TrajectoryRecord,
    cfg: &ExperimentConfig,
) -> Result<ReplayedEpisode, LearnError> {
    let stream: Vec<ItemSpec> = record.steps.iter().map(|s| s.transition.item).collect();
    if stream.is_empty() {
        return Ok(ReplayedEpisode {
            steps: Vec::new(),
            transitions: Vec::new(),
        });
    }
    let dims = cfg.dims_units();
    let norm_pose = |pose: &crate::geometry::Pose| -> [f64; 3] {
        [
            pose.pos[0] as f64 / dims[0] as f64,
            pose.pos[1] as f64 / dims[1] as f64,
            pose.pos[2] as f64 / dims[2] as f64,
        ]
    };
    let mut state = Some(env::reset(&stream, cfg, record.episode_seed)?);
    let mut steps: Vec<PreparedStep> = Vec::with_capacity(record.steps.len());
    let mut transitions: Vec<Transition> = Vec::with_capacity(record.steps.len());
    for (k, logged) in record.steps.iter().enumerate() {
        let st = state.take().ok_or_else(|| LearnError::ReplayMismatch {
            t: k,
            reason: "environment terminated before the log did".into(),
        })?;
        let idx = logged.transition.action_index;
        let cand = st
            .candidates
            .get(idx)
            .copied()
            .ok_or_else(|| LearnError::ReplayMismatch {
                t: k,
                reason: format!(
                    "logged action {idx} out of {} candidates",
                    st.candidates.len()
                ),
            })?;
        if cand.pose != logged.transition.pose {
            return Err(LearnError::ReplayMismatch {
                t: k,
                reason: format!(
                    "candidate pose {:?} differs from logged {:?}",
                    cand.pose, logged.transition.pose
                ),
            });
        }
        steps.push(PreparedStep {
            candidate_features: st.features.clone(),
            candidate_poses_norm: st.candidates.iter().map(|c| norm_pose(&c.pose)).collect(),
            chosen: idx,
            behavior_log_prob: logged.behavior_log_prob,
            reward: logged.transition.reward,
            done: logged.transition.done,
            succeeded: logged.transition.succeeded,
            item_volume_reward: reward_scale(cfg, &logged.transition.item),
            return_to_go: 0.0,
            su_before: logged.transition.pre.su,
            next: None,
            source: record.source,
        });
        let (transition, next) = env::step(st, idx, &logged.params, &stream, cfg)?;
        transitions.push(transition);
        if let StepNext::Continue(s) = next {
            let su = crate::geometry::space_utilization(&s.container);
            let logged_action = record.steps.get(k + 1).map(|n| n.transition.action_index);
            steps.last_mut().unwrap().next = Some(NextState {
                candidate_features: s.features.clone(),
                su,
                logged_action,
            });
            state = Some(*s);
        }
    }
    let mut acc = 0.0;
    for s in steps.iter_mut().rev() {
        acc += s.reward;
        s.return_to_go = acc;
    }
    Ok(ReplayedEpisode { steps, transitions })
}

/// Prepared steps of a record, for the training ops.
pub fn prepare_steps(
    record: &TrajectoryRecord,
    cfg: &ExperimentConfig,
) -> Result<Vec<PreparedStep>, LearnError> {
    Ok(replay_record(record, cfg)?.steps)
}

/// Bit-exact replay check: re-derives every transition and compares it
/// field-for-field with the log. Returns the first mismatch description.
pub fn replay_matches(
    record: &TrajectoryRecord,
    cfg: &ExperimentConfig,
) -> Result<Option<String>, LearnError> {
    let replayed = replay_record(record, cfg)?;
    for (k, (derived, logged)) in replayed
        .transitions
        .iter()
        .zip(record.steps.iter())
        .enumerate()
    {
        if derived != &logged.transition {
            return Ok(Some(format!(
                "step {k}: derived transition differs from log: {derived:?} vs {:?}",
                logged.transition
            )));
        }
    }
    Ok(None)
}

/// Summed per-step distance between the logged actions and the current
/// policy's argmax actions, with poses normalized per axis.
pub fn trajectory_distance(
    steps: &[PreparedStep],
    policy: &SoftmaxPolicy,
) -> Result<f64, LearnError> {
    let mut total = 0.0;
    for step in steps {
        let probs = policy.action_probabilities(&step.candidate_features)?;
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let a = step.candidate_poses_norm[step.chosen];
        let b = step.candidate_poses_norm[argmax];
        total += (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt();
    }
    Ok(total)
}

/// Retains trajectories whose summed action distance to the current policy
/// stays below `epsilon`.
pub fn filter_trajectories(
    trajectories: Vec<Vec<PreparedStep>>,
    policy: &SoftmaxPolicy,
    epsilon: f64,
) -> Result<Vec<Vec<PreparedStep>>, LearnError> {
    let mut kept = Vec::with_capacity(trajectories.len());
    for traj in trajectories {
        if trajectory_distance(&traj, policy)? < epsilon {
            kept.push(traj);
        }
    }
    Ok(kept)
}

/// Clipped importance ratio `pi_theta(a|s) / pi_old(a|s)` for one step.
pub fn importance_ratio(step: &PreparedStep, policy: &SoftmaxPolicy) -> Result<f64, LearnError> {
    let behavior = step
        .behavior_log_prob
        .ok_or(LearnError::MissingBehaviorProb)?;
    let lp = policy.log_probabilities(&step.candidate_features)?[step.chosen];
    Ok((lp - behavior).exp().clamp(RATIO_CLIP.0, RATIO_CLIP.1))
}

/// Q-value source for the policy-gradient update.
pub enum QEstimator<'a> {
    Critic(&'a Critic),
    MonteCarlo,
}

impl QEstimator<'_> {
    fn q(&self, step: &PreparedStep) -> f64 {
        match self {
            QEstimator::Critic(critic) => critic.q_value(&critic_features(
                &step.candidate_features[step.chosen],
                step.su_before,
            )),
            QEstimator::MonteCarlo => step.return_to_go,
        }
    }
}

fn accumulate_policy_gradient<F>(
    batch: &[PreparedStep],
    policy: &SoftmaxPolicy,
    q_est: &QEstimator,
    mut ratio_of: F,
) -> Result<[f64; FEATURE_COUNT], LearnError>
where
    F: FnMut(&PreparedStep) -> Result<f64, LearnError>,
{
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let mut grad = [0.0; FEATURE_COUNT];
    for step in batch {
        let rho = ratio_of(step)?;
        let glp = policy.grad_log_prob(&step.candidate_features, step.chosen)?;
        let q = q_est.q(step);
        for (g, x) in grad.iter_mut().zip(glp.iter()) {
            *g += rho * x * q;
        }
    }
    for g in grad.iter_mut() {
        *g /= batch.len() as f64;
    }
    Ok(grad)
}

/// Fine-tuning gradient: mean over steps of
/// `rho(s,a) * grad log pi(a|s) * Q(s,a)`, minus `beta` times the gradient
/// of the per-state `KL(pi_theta || pi_old)` averaged over the batch.
pub fn finetune_gradient(
    batch: &[PreparedStep],
    policy: &SoftmaxPolicy,
    old_policy: &SoftmaxPolicy,
    q_est: &QEstimator,
    beta: f64,
) -> Result<[f64; FEATURE_COUNT], LearnError> {
    let mut grad =
        accumulate_policy_gradient(batch, policy, q_est, |s| importance_ratio(s, policy))?;
    if beta != 0.0 {
        let mut kl_grad = [0.0; FEATURE_COUNT];
        for step in batch {
            let g = policy.grad_kl(old_policy, &step.candidate_features)?;
            for (k, x) in kl_grad.iter_mut().zip(g.iter()) {
                *k += x;
            }
        }
        for (g, k) in grad.iter_mut().zip(kl_grad.iter()) {
            *g -= beta * k / batch.len() as f64;
        }
    }
    Ok(grad)
}

/// Pre-training gradient: plain policy-gradient ascent on undiscounted
/// returns. Identical to [`finetune_gradient`] with unit ratios, zero beta
/// and Monte Carlo Q.
pub fn pretrain_gradient(
    batch: &[PreparedStep],
    policy: &SoftmaxPolicy,
) -> Result<[f64; FEATURE_COUNT], LearnError> {
    accumulate_policy_gradient(batch, policy, &QEstimator::MonteCarlo, |_| Ok(1.0))
}

pub const CRITIC_FEATURES: usize = FEATURE_COUNT + 2;

/// State-action features for the linear critic: the chosen candidate's
/// placement features, the pre-step space utilization, and a bias term.
pub fn critic_features(action: &FeatureVector, su: f64) -> [f64; CRITIC_FEATURES] {
    let fa = action.to_array();
    let mut out = [0.0; CRITIC_FEATURES];
    out[..FEATURE_COUNT].copy_from_slice(&fa);
    out[FEATURE_COUNT] = su;
    out[FEATURE_COUNT + 1] = 1.0;
    out
}

/// Linear action-value function with a periodically synced target copy.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub weights: [f64; CRITIC_FEATURES],
    pub target_weights: [f64; CRITIC_FEATURES],
    pub sync_period: usize,
    updates_since_sync: usize,
}

impl Critic {
    pub fn new(sync_period: usize) -> Self {
        Critic {
            weights: [0.0; CRITIC_FEATURES],
            target_weights: [0.0; CRITIC_FEATURES],
            sync_period: sync_period.max(1),
            updates_since_sync: 0,
        }
    }

    pub fn q_value(&self, features: &[f64; CRITIC_FEATURES]) -> f64 {
        self.weights
            .iter()
            .zip(features.iter())
            .map(|(w, x)| w * x)
            .sum()
    }

    pub fn q_target(&self, features: &[f64; CRITIC_FEATURES]) -> f64 {
        self.target_weights
            .iter()
            .zip(features.iter())
            .map(|(w, x)| w * x)
            .sum()
    }

    /// Applies one gradient-descent step; the target copy syncs only at
    /// period boundaries.
    pub fn apply_gradient(&mut self, grad: &[f64; CRITIC_FEATURES], lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(grad.iter()) {
            *w -= lr * g;
        }
        self.updates_since_sync += 1;
        if self.updates_since_sync >= self.sync_period {
            self.sync_target();
        }
    }

    pub fn sync_target(&mut self) {
        self.target_weights = self.weights;
        self.updates_since_sync = 0;
    }

    pub fn save_checkpoint(&self, path: &std::path::Path) -> Result<(), PolicyError> {
        let fmt = |ws: &[f64]| {
            ws.iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let text = format!(
            "linear-critic v1\nsync_period {}\nweights {}\ntarget {}\n",
            self.sync_period,
            fmt(&self.weights),
            fmt(&self.target_weights),
        );
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &std::path::Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(PolicyError::CheckpointParse {
            line: 1,
            reason: "empty file".into(),
        })?;
        if header.trim() != "linear-critic v1" {
            return Err(PolicyError::CheckpointParse {
                line: 1,
                reason: format!("unsupported header {header:?}"),
            });
        }
        let mut critic = Critic::new(10);
        let mut saw_weights = false;
        for (idx, line) in lines {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let field = parts.next().unwrap_or("");
            let rest: Vec<&str> = parts.collect();
            let parse_vec = |vals: &[&str]| -> Result<[f64; CRITIC_FEATURES], PolicyError> {
                let parsed: Result<Vec<f64>, _> = vals.iter().map(|s| s.parse::<f64>()).collect();
                let parsed = parsed.map_err(|_| PolicyError::CheckpointParse {
                    line: idx + 1,
                    reason: "bad weight value".into(),
                })?;
                if parsed.len() != CRITIC_FEATURES {
                    return Err(PolicyError::CheckpointParse {
                        line: idx + 1,
                        reason: format!("expected {CRITIC_FEATURES} values, got {}", parsed.len()),
                    });
                }
                let mut out = [0.0; CRITIC_FEATURES];
                out.copy_from_slice(&parsed);
                Ok(out)
            };
            match field {
                "sync_period" => {
                    critic.sync_period = rest
                        .first()
                        .and_then(|s| s.parse::<usize>().ok())
                        .ok_or(PolicyError::CheckpointParse {
                            line: idx + 1,
                            reason: "bad sync period".into(),
                        })?
                        .max(1);
                }
                "weights" => {
                    critic.weights = parse_vec(&rest)?;
                    saw_weights = true;
                }
                "target" => critic.target_weights = parse_vec(&rest)?,
                _ => {
                    return Err(PolicyError::CheckpointParse {
                        line: idx + 1,
                        reason: format!("unknown field {field:?}"),
                    })
                }
            }
        }
        if !saw_weights {
            return Err(PolicyError::CheckpointParse {
                line: 1,
                reason: "missing weights".into(),
            });
        }
        Ok(critic)
    }
}

/// Which next-state action the critic bootstrap uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NextActionMode {
    /// Argmax of the current policy over the next candidate set.
    CurrentArgmax,
    /// The action the behavior policy actually took.
    Logged,
}

fn next_bootstrap(
    step: &PreparedStep,
    critic: &Critic,
    policy: &SoftmaxPolicy,
    mode: NextActionMode,
) -> Result<f64, LearnError> {
    let Some(next) = &step.next else {
        return Ok(0.0);
    };
    if next.candidate_features.is_empty() {
        return Ok(0.0);
    }
    let idx = match mode {
        NextActionMode::Logged => next
            .logged_action
            .filter(|i| *i < next.candidate_features.len()),
        NextActionMode::CurrentArgmax => None,
    };
    let idx = match idx {
        Some(i) => i,
        None => {
            let probs = policy.action_probabilities(&next.candidate_features)?;
            probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        }
    };
    Ok(critic.q_target(&critic_features(&next.candidate_features[idx], next.su)))
}

/// Per-step TD targets `r + (1 - d) * gamma * Q_target(s', a')`.
pub fn td_targets(
    batch: &[PreparedStep],
    critic: &Critic,
    policy: &SoftmaxPolicy,
    gamma: f64,
    mode: NextActionMode,
) -> Result<Vec<f64>, LearnError> {
    batch
        .iter()
        .map(|step| {
            let not_done = if step.done { 0.0 } else { 1.0 };
            Ok(step.reward + not_done * gamma * next_bootstrap(step, critic, policy, mode)?)
        })
        .collect()
}

/// Mean squared TD error and its gradient with respect to the critic
/// weights, with the targets held fixed.
pub fn critic_loss_with_targets(
    batch: &[PreparedStep],
    critic: &Critic,
    targets: &[f64],
) -> (f64, [f64; CRITIC_FEATURES]) {
    let mut loss = 0.0;
    let mut grad = [0.0; CRITIC_FEATURES];
    for (step, target) in batch.iter().zip(targets.iter()) {
        let phi = critic_features(&step.candidate_features[step.chosen], step.su_before);
        let q = critic.q_value(&phi);
        let err = q - target;
        loss += err * err;
        for (g, x) in grad.iter_mut().zip(phi.iter()) {
            *g += 2.0 * err * x;
        }
    }
    let n = batch.len().max(1) as f64;
    for g in grad.iter_mut() {
        *g /= n;
    }
    (loss / n, grad)
}

/// Policy-evaluation loss `[r + (1 - d) Q_target(s', a') - Q(s, a)]^2`
/// averaged over the batch, and its gradient.
pub fn critic_loss(
    batch: &[PreparedStep],
    critic: &Critic,
    policy: &SoftmaxPolicy,
    gamma: f64,
    mode: NextActionMode,
) -> Result<(f64, [f64; CRITIC_FEATURES]), LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let targets = td_targets(batch, critic, policy, gamma, mode)?;
    Ok(critic_loss_with_targets(batch, critic, &targets))
}

/// Schedule for decaying the Q-target of real-world collapse actions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecaySchedule {
    Linear { total_epochs: usize },
}

impl DecaySchedule {
    /// Fraction of the decay applied at `epoch`: 0 at epoch 0, 1 at the
    /// final epoch.
    pub fn lambda(&self, epoch: usize) -> f64 {
        match self {
            DecaySchedule::Linear { total_epochs } => {
                if *total_epochs <= 1 {
                    1.0
                } else {
                    (epoch as f64 / (*total_epochs as f64 - 1.0)).clamp(0.0, 1.0)
                }
            }
        }
    }
}

/// Decayed Q-target for a collapse-inducing real-world action that is
/// initially treated as a normal (non-terminal) transition:
/// `(1 - lambda(epoch)) * simulated_target`.
pub fn decay_collapse_qtarget(
    simulated_target: f64,
    schedule: &DecaySchedule,
    epoch: usize,
) -> f64 {
    (1.0 - schedule.lambda(epoch)) * simulated_target
}

/// One pre-training update: policy-gradient ascent on undiscounted returns
/// plus a critic fit toward the TD targets. Returns new snapshots.
pub fn pretrain_update(
    batch: &[PreparedStep],
    policy: &SoftmaxPolicy,
    critic: &Critic,
    lr: f64,
) -> Result<(SoftmaxPolicy, Critic), LearnError> {
    let grad = pretrain_gradient(batch, policy)?;
    let mut new_policy = policy.clone();
    for (w, g) in new_policy.weights.iter_mut().zip(grad.iter()) {
        *w += lr * g;
    }
    let mut new_critic = critic.clone();
    let (_, cgrad) = critic_loss(batch, critic, policy, 1.0, NextActionMode::CurrentArgmax)?;
    new_critic.apply_gradient(&cgrad, lr);
    Ok((new_policy, new_critic))
}

/// Fine-tuning hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneConfig {
    /// Collapse penalty strength.
    pub alpha: f64,
    /// Trajectory-filter threshold on the summed action distance.
    pub epsilon: f64,
    /// KL penalty strength.
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub decay: DecaySchedule,
    /// Use the linear critic for Q in the policy gradient; otherwise Monte
    /// Carlo returns.
    pub use_critic_q: bool,
    pub next_action: NextActionMode,
    pub gamma: f64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self::from_settings(&crate::config::FinetuneSettings::default())
    }
}

impl FinetuneConfig {
    /// Builds the runtime fine-tune configuration from the experiment
    /// config's fine-tune block.
    pub fn from_settings(s: &crate::config::FinetuneSettings) -> Self {
        FinetuneConfig {
            alpha: s.alpha,
            epsilon: s.epsilon,
            beta: s.beta,
            learning_rate: s.learning_rate,
            epochs: s.epochs,
            batch_size: s.batch_size,
            decay: DecaySchedule::Linear {
                total_epochs: s.epochs,
            },
            use_critic_q: s.use_critic_q,
            next_action: NextActionMode::CurrentArgmax,
            gamma: 1.0,
        }
    }
}

/// Outcome bookkeeping of one fine-tuning run.
#[derive(Clone, Debug, PartialEq)]
pub struct FinetuneReport {
    pub trajectories_in: usize,
    pub trajectories_kept: usize,
    pub steps_trained: usize,
    pub updates: usize,
    /// KL(pi_new || pi_start) averaged over all retained states.
    pub final_kl: f64,
}

/// Critic targets for the fine-tuning pass: real-world collapse steps with
/// next-state data get the gradually decayed simulated-dynamics target,
/// collapse steps without next-state data fall back to their (relabeled)
/// terminal reward, and everything else is the standard TD target.
fn finetune_targets(
    batch: &[PreparedStep],
    critic: &Critic,
    policy: &SoftmaxPolicy,
    fcfg: &FinetuneConfig,
    epoch: usize,
) -> Result<Vec<f64>, LearnError> {
    batch
        .iter()
        .map(|step| {
            let collapse_step = !step.succeeded;
            if collapse_step && step.source == TrajectorySource::RealPhase1 {
                if step.next.is_some() {
                    let simulated = step.item_volume_reward
                        + fcfg.gamma * next_bootstrap(step, critic, policy, fcfg.next_action)?;
                    return Ok(decay_collapse_qtarget(simulated, &fcfg.decay, epoch));
                }
                return Ok(step.reward);
            }
            let not_done = if step.done { 0.0 } else { 1.0 };
            Ok(step.reward
                + not_done * fcfg.gamma * next_bootstrap(step, critic, policy, fcfg.next_action)?)
        })
        .collect()
}

/// Full fine-tuning pass: relabel, replay, filter, then `epochs` sweeps of
/// policy and critic updates over minibatches. Returns new snapshots.
pub fn finetune(
    records: &[TrajectoryRecord],
    policy: &SoftmaxPolicy,
    critic: &Critic,
    env_cfg: &ExperimentConfig,
    fcfg: &FinetuneConfig,
) -> Result<(SoftmaxPolicy, Critic, FinetuneReport), LearnError> {
    let prepared: Vec<Vec<PreparedStep>> = records
        .iter()
        .map(|r| prepare_steps(&relabel_collapse_penalty(r, fcfg.alpha, env_cfg), env_cfg))
        .collect::<Result<_, _>>()?;
    let total = prepared.len();
    let kept = filter_trajectories(prepared, policy, fcfg.epsilon)?;
    let kept_count = kept.len();
    let steps: Vec<PreparedStep> = kept.into_iter().flatten().collect();
    let old_policy = policy.clone();
    let mut current = policy.clone();
    let mut new_critic = critic.clone();
    let mut updates = 0usize;
    if !steps.is_empty() {
        for epoch in 0..fcfg.epochs {
            for batch in steps.chunks(fcfg.batch_size) {
                let grad = {
                    let q_est = if fcfg.use_critic_q {
                        QEstimator::Critic(&new_critic)
                    } else {
                        QEstimator::MonteCarlo
                    };
                    finetune_gradient(batch, &current, &old_policy, &q_est, fcfg.beta)?
                };
                for (w, g) in current.weights.iter_mut().zip(grad.iter()) {
                    *w += fcfg.learning_rate * g;
                }
                let targets = finetune_targets(batch, &new_critic, &current, fcfg, epoch)?;
                let (_, cgrad) = critic_loss_with_targets(batch, &new_critic, &targets);
                new_critic.apply_gradient(&cgrad, fcfg.learning_rate);
                updates += 1;
            }
        }
    }
    let mut final_kl = 0.0;
    if !steps.is_empty() {
        for step in &steps {
            final_kl += current.kl_divergence(&old_policy, &step.candidate_features)?;
        }
        final_kl /= steps.len() as f64;
    }
    Ok((
        current,
        new_critic,
        FinetuneReport {
            trajectories_in: total,
            trajectories_kept: kept_count,
            steps_trained: steps.len(),
            updates,
            final_kl,
        },
    ))
}
