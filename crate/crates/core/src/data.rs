//! Dataset generation (guillotine-cut and warehouse-like streams),
//! line-delimited trajectory logs, pick-set and measurement-fixture files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::env::{
    derive_seed, StateSummary, TerminalKind, TrajectoryRecord, TrajectorySource, TrajectoryStep,
    Transition,
};
use crate::geometry::{cm_to_units, units_to_cm, ItemId, ItemSpec, Pose, Unit, UNITS_PER_CM};
use crate::stability::PhysicsParams;

/// Nominal parcel density for generated cut items, kg per cm^3.
const CUT_DENSITY: f64 = 1.5e-4;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("unsupported format version: {found:?}")]
    VersionMismatch { found: String },
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
    #[error("no guillotine cut sequence keeps all sides within [{min_side}, {max_side}] cm")]
    UnsatisfiableBounds { min_side: f64, max_side: f64 },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

// ---------------------------------------------------------------------------
// Guillotine-cut datasets
// ---------------------------------------------------------------------------

/// A cut dataset: the item stream in emission order plus the tiling poses
/// that reproduce the container exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct CutDataset {
    pub items: Vec<ItemSpec>,
    pub ground_truth: Vec<(ItemId, Pose)>,
}

struct Piece {
    min: [Unit; 3],
    size: [Unit; 3],
}

fn try_cut(
    dims: [Unit; 3],
    min_side: Unit,
    max_side: Unit,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Piece>> {
    let mut pieces = vec![Piece {
        min: [0, 0, 0],
        size: dims,
    }];
    loop {
        let target = pieces
            .iter()
            .position(|p| p.size.iter().any(|&s| s > max_side));
        let Some(idx) = target else {
            return Some(pieces);
        };
        let piece = &pieces[idx];
        let cuttable: Vec<usize> = (0..3).filter(|&a| piece.size[a] >= 2 * min_side).collect();
        if cuttable.is_empty() {
            return None;
        }
        // Prefer axes that actually violate the bound; fall back to any
        // cuttable axis.
        let violating: Vec<usize> = cuttable
            .iter()
            .copied()
            .filter(|&a| piece.size[a] > max_side)
            .collect();
        let pool = if violating.is_empty() {
            &cuttable
        } else {
            &violating
        };
        let axis = pool[rng.gen_range(0..pool.len())];
        // Integer-centimetre split points leaving at least min_side per part.
        let lo_cm = min_side / UNITS_PER_CM;
        let hi_cm = (piece.size[axis] - min_side) / UNITS_PER_CM;
        let split = rng.gen_range(lo_cm..=hi_cm) * UNITS_PER_CM;
        let piece = pieces.swap_remove(idx);
        let mut low = Piece {
            min: piece.min,
            size: piece.size,
        };
        low.size[axis] = split;
        let mut high = Piece {
            min: piece.min,
            size: piece.size,
        };
        high.min[axis] += split;
        high.size[axis] -= split;
        pieces.push(low);
        pieces.push(high);
    }
}

/// Recursive guillotine cuts of the container until every piece side lies in
/// `[min_side, max_side]` cm. Items come out bottom-up (ascending bottom-z,
/// ties by y then x), which guarantees a collapse-free ground-truth replay.
pub fn gen_cut_dataset(
    container_cm: [f64; 3],
    min_side_cm: f64,
    max_side_cm: f64,
    seed: u64,
) -> Result<CutDataset, DataError> {
    let dims = [
        cm_to_units(container_cm[0]),
        cm_to_units(container_cm[1]),
        cm_to_units(container_cm[2]),
    ];
    let min_side = cm_to_units(min_side_cm);
    let max_side = cm_to_units(max_side_cm);
    let unsat = || DataError::UnsatisfiableBounds {
        min_side: min_side_cm,
        max_side: max_side_cm,
    };
    if min_side <= 0 || max_side < min_side || dims.iter().any(|&d| d < min_side) {
        return Err(unsat());
    }
    // Random cutting can dead-end when max_side < 2 * min_side; retry with
    // derived sub-seeds before declaring the bounds unsatisfiable.
    let mut pieces = None;
    for attempt in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt, 0xc07));
        if let Some(found) = try_cut(dims, min_side, max_side, &mut rng) {
            pieces = Some(found);
            break;
        }
    }
    let mut pieces = pieces.ok_or_else(unsat)?;
    pieces.sort_by_key(|p| (p.min[2], p.min[1], p.min[0]));
    let mut items = Vec::with_capacity(pieces.len());
    let mut ground_truth = Vec::with_capacity(pieces.len());
    for (i, piece) in pieces.iter().enumerate() {
        let volume_cm3 = piece.size.iter().map(|&s| units_to_cm(s)).product::<f64>();
        let item = ItemSpec::from_units(i as u64, piece.size, volume_cm3 * CUT_DENSITY);
        ground_truth.push((
            item.id,
            Pose::level(piece.min[0], piece.min[1], piece.min[2]),
        ));
        items.push(item);
    }
    Ok(CutDataset {
        items,
        ground_truth,
    })
}

// ---------------------------------------------------------------------------
// Warehouse-like streams
// ---------------------------------------------------------------------------

/// Bounds for warehouse-like item streams.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RealworldBounds {
    pub min_side_cm: f64,
    pub max_side_cm: f64,
    pub max_mass_kg: f64,
}

impl Default for RealworldBounds {
    fn default() -> Self {
        RealworldBounds {
            min_side_cm: 5.0,
            max_side_cm: 40.0,
            max_mass_kg: 10.0,
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 kept away from zero.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Item stream with per-axis sizes from a clipped log-normal and masses
/// proportional to volume with density jitter. Deterministic per seed.
pub fn gen_realworld_like(bounds: &RealworldBounds, count: usize, seed: u64) -> Vec<ItemSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mid = 0.5 * (bounds.min_side_cm + bounds.max_side_cm);
    let mu = (mid * 0.65).ln();
    let sigma = 0.45;
    let mut items = Vec::with_capacity(count);
    for i in 0..count {
        let mut size = [0; 3];
        for s in size.iter_mut() {
            let cm = (mu + sigma * standard_normal(&mut rng)).exp();
            *s = cm_to_units(cm.clamp(bounds.min_side_cm, bounds.max_side_cm));
        }
        let volume_cm3 = size.iter().map(|&s| units_to_cm(s)).product::<f64>();
        let density = CUT_DENSITY * (0.35 * standard_normal(&mut rng)).exp();
        let mass = (volume_cm3 * density).clamp(0.05, bounds.max_mass_kg);
        items.push(ItemSpec::from_units(i as u64, size, mass));
    }
    items
}

// ---------------------------------------------------------------------------
// Dataset files
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Cut,
    RealworldLike,
    Fixture,
}

impl DatasetKind {
    fn as_str(&self) -> &'static str {
        match self {
            DatasetKind::Cut => "cut",
            DatasetKind::RealworldLike => "realworld-like",
            DatasetKind::Fixture => "fixture",
        }
    }
}

/// A dataset file: generation parameters plus the concrete sample stream.
///
/// For `cut` and `realworld-like` kinds, evaluation draws a fresh stream per
/// episode from the recorded parameters and the episode seed; a `fixture`
/// dataset replays its item list verbatim.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub container_cm: [f64; 3],
    pub count: usize,
    pub seed: u64,
    pub min_side_cm: f64,
    pub max_side_cm: f64,
    pub max_mass_kg: f64,
    pub items: Vec<ItemSpec>,
}

impl Dataset {
    pub fn cut(
        container_cm: [f64; 3],
        min_side_cm: f64,
        max_side_cm: f64,
        seed: u64,
    ) -> Result<Self, DataError> {
        let sample = gen_cut_dataset(container_cm, min_side_cm, max_side_cm, seed)?;
        Ok(Dataset {
            kind: DatasetKind::Cut,
            container_cm,
            count: sample.items.len(),
            seed,
            min_side_cm,
            max_side_cm,
            max_mass_kg: 0.0,
            items: sample.items,
        })
    }

    pub fn realworld_like(
        container_cm: [f64; 3],
        bounds: RealworldBounds,
        count: usize,
        seed: u64,
    ) -> Self {
        let items = gen_realworld_like(&bounds, count, seed);
        Dataset {
            kind: DatasetKind::RealworldLike,
            container_cm,
            count,
            seed,
            min_side_cm: bounds.min_side_cm,
            max_side_cm: bounds.max_side_cm,
            max_mass_kg: bounds.max_mass_kg,
            items,
        }
    }

    pub fn fixture(container_cm: [f64; 3], items: Vec<ItemSpec>) -> Self {
        Dataset {
            kind: DatasetKind::Fixture,
            container_cm,
            count: items.len(),
            seed: 0,
            min_side_cm: 0.0,
            max_side_cm: 0.0,
            max_mass_kg: 0.0,
            items,
        }
    }

    /// The item stream for one episode.
    pub fn stream_for(&self, episode_seed: u64) -> Vec<ItemSpec> {
        match self.kind {
            DatasetKind::Cut => gen_cut_dataset(
                self.container_cm,
                self.min_side_cm,
                self.max_side_cm,
                derive_seed(self.seed, episode_seed, 0xda7a),
            )
            .map(|d| d.items)
            .unwrap_or_else(|_| self.items.clone()),
            DatasetKind::RealworldLike => gen_realworld_like(
                &RealworldBounds {
                    min_side_cm: self.min_side_cm,
                    max_side_cm: self.max_side_cm,
                    max_mass_kg: self.max_mass_kg,
                },
                self.count,
                derive_seed(self.seed, episode_seed, 0xda7a),
            ),
            DatasetKind::Fixture => self.items.clone(),
        }
    }
}

fn fmt_item_line(item: &ItemSpec) -> String {
    format!(
        "{},{},{},{},{}",
        item.id.0,
        units_to_cm(item.size[0]),
        units_to_cm(item.size[1]),
        units_to_cm(item.size[2]),
        item.mass
    )
}

fn parse_item_line(line: &str, lineno: usize) -> Result<ItemSpec, DataError> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != 5 {
        return Err(DataError::CorruptRecord {
            line: lineno,
            reason: format!("expected id,sx,sy,sz,mass, got {} fields", parts.len()),
        });
    }
    let bad = |what: &str| DataError::CorruptRecord {
        line: lineno,
        reason: format!("bad {what}"),
    };
    let id = parts[0].trim().parse::<u64>().map_err(|_| bad("id"))?;
    let sx = parts[1].trim().parse::<f64>().map_err(|_| bad("sx"))?;
    let sy = parts[2].trim().parse::<f64>().map_err(|_| bad("sy"))?;
    let sz = parts[3].trim().parse::<f64>().map_err(|_| bad("sz"))?;
    let mass = parts[4].trim().parse::<f64>().map_err(|_| bad("mass"))?;
    if sx <= 0.0 || sy <= 0.0 || sz <= 0.0 || mass <= 0.0 {
        return Err(bad("non-positive dimension or mass"));
    }
    Ok(ItemSpec::new(id, sx, sy, sz, mass))
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<(), DataError> {
    let mut text = String::from("binpack-dataset v1\n");
    let _ = writeln!(text, "kind {}", dataset.kind.as_str());
    let _ = writeln!(
        text,
        "container {} {} {}",
        dataset.container_cm[0], dataset.container_cm[1], dataset.container_cm[2]
    );
    let _ = writeln!(text, "count {}", dataset.count);
    let _ = writeln!(text, "seed {}", dataset.seed);
    let _ = writeln!(text, "min_side {}", dataset.min_side_cm);
    let _ = writeln!(text, "max_side {}", dataset.max_side_cm);
    let _ = writeln!(text, "max_mass {}", dataset.max_mass_kg);
    text.push_str("items\n");
    for item in &dataset.items {
        text.push_str(&fmt_item_line(item));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| DataError::CorruptRecord {
        line: 1,
        reason: "empty file".into(),
    })?;
    if header.trim() != "binpack-dataset v1" {
        return Err(DataError::VersionMismatch {
            found: header.trim().to_string(),
        });
    }
    let mut kind = None;
    let mut container = [0.0; 3];
    let mut count = 0usize;
    let mut seed = 0u64;
    let mut min_side = 0.0;
    let mut max_side = 0.0;
    let mut max_mass = 0.0;
    let mut items = Vec::new();
    let mut in_items = false;
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if in_items {
            items.push(parse_item_line(line, idx + 1)?);
            continue;
        }
        if line == "items" {
            in_items = true;
            continue;
        }
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| DataError::CorruptRecord {
                line: idx + 1,
                reason: "expected `key value`".into(),
            })?;
        let bad = |what: &str| DataError::CorruptRecord {
            line: idx + 1,
            reason: format!("bad {what}"),
        };
        match key {
            "kind" => {
                kind = Some(match value.trim() {
                    "cut" => DatasetKind::Cut,
                    "realworld-like" => DatasetKind::RealworldLike,
                    "fixture" => DatasetKind::Fixture,
                    other => {
                        return Err(DataError::CorruptRecord {
                            line: idx + 1,
                            reason: format!("unknown kind {other:?}"),
                        })
                    }
                });
            }
            "container" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(bad("container dims"));
                }
                for (i, p) in parts.iter().enumerate() {
                    container[i] = p.parse::<f64>().map_err(|_| bad("container dims"))?;
                }
            }
            "count" => count = value.trim().parse().map_err(|_| bad("count"))?,
            "seed" => seed = value.trim().parse().map_err(|_| bad("seed"))?,
            "min_side" => min_side = value.trim().parse().map_err(|_| bad("min_side"))?,
            "max_side" => max_side = value.trim().parse().map_err(|_| bad("max_side"))?,
            "max_mass" => max_mass = value.trim().parse().map_err(|_| bad("max_mass"))?,
            other => {
                return Err(DataError::CorruptRecord {
                    line: idx + 1,
                    reason: format!("unknown header field {other:?}"),
                })
            }
        }
    }
    let kind = kind.ok_or_else(|| DataError::CorruptRecord {
        line: 1,
        reason: "missing kind".into(),
    })?;
    Ok(Dataset {
        kind,
        container_cm: container,
        count,
        seed,
        min_side_cm: min_side,
        max_side_cm: max_side,
        max_mass_kg: max_mass,
        items,
    })
}

/// Writes the ground-truth tiling poses that accompany a cut dataset.
pub fn write_ground_truth(path: &Path, gt: &[(ItemId, Pose)]) -> Result<(), DataError> {
    let mut text = String::from("binpack-gt v1\n");
    for (id, pose) in gt {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            id.0,
            units_to_cm(pose.pos[0]),
            units_to_cm(pose.pos[1]),
            units_to_cm(pose.pos[2])
        );
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<(ItemId, Pose)>, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| DataError::CorruptRecord {
        line: 1,
        reason: "empty file".into(),
    })?;
    if header.trim() != "binpack-gt v1" {
        return Err(DataError::VersionMismatch {
            found: header.trim().to_string(),
        });
    }
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(DataError::CorruptRecord {
                line: idx + 1,
                reason: "expected id,px,py,pz".into(),
            });
        }
        let bad = || DataError::CorruptRecord {
            line: idx + 1,
            reason: "bad ground-truth value".into(),
        };
        let id = parts[0].trim().parse::<u64>().map_err(|_| bad())?;
        let px = parts[1].trim().parse::<f64>().map_err(|_| bad())?;
        let py = parts[2].trim().parse::<f64>().map_err(|_| bad())?;
        let pz = parts[3].trim().parse::<f64>().map_err(|_| bad())?;
        out.push((ItemId(id), Pose::from_cm(px, py, pz)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Pick sets and measurement fixtures
// ---------------------------------------------------------------------------

/// Pick poses, one `x,y,z` (cm) line each. Only availability matters to the
/// top-down corridor model: an empty set makes every placement infeasible.
pub fn read_pick_set(path: &Path) -> Result<Vec<Pose>, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(DataError::CorruptRecord {
                line: idx + 1,
                reason: "expected x,y,z".into(),
            });
        }
        let mut vals = [0.0; 3];
        for (i, p) in parts.iter().enumerate() {
            vals[i] = p
                .trim()
                .parse::<f64>()
                .map_err(|_| DataError::CorruptRecord {
                    line: idx + 1,
                    reason: "bad coordinate".into(),
                })?;
        }
        out.push(Pose::from_cm(vals[0], vals[1], vals[2]));
    }
    Ok(out)
}

/// Measurement fixture: `parameter_name,value` lines grouped by name.
pub fn read_measurement_fixture(path: &Path) -> Result<BTreeMap<String, Vec<f64>>, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (name, value) = line
            .split_once(',')
            .ok_or_else(|| DataError::CorruptRecord {
                line: idx + 1,
                reason: "expected name,value".into(),
            })?;
        let value = value
            .trim()
            .parse::<f64>()
            .map_err(|_| DataError::CorruptRecord {
                line: idx + 1,
                reason: "bad value".into(),
            })?;
        out.entry(name.trim().to_string()).or_default().push(value);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Trajectory logs
// ---------------------------------------------------------------------------

/// Per-episode terminal summary stored in the log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub su: f64,
    pub items_placed: usize,
    pub attempts: usize,
    pub collapse_item_count: usize,
    pub terminal: TerminalKind,
    pub episode_return: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoggedEpisode {
    pub record: TrajectoryRecord,
    pub summary: EpisodeSummary,
}

/// A trajectory log file: the exact config it was recorded under plus one or
/// more episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryLog {
    pub config: ExperimentConfig,
    pub episodes: Vec<LoggedEpisode>,
}

fn terminal_str(kind: TerminalKind) -> &'static str {
    match kind {
        TerminalKind::Collapse => "collapse",
        TerminalKind::StreamExhausted => "stream-exhausted",
        TerminalKind::NoFeasibleAction => "no-feasible-action",
    }
}

fn parse_terminal(s: &str, line: usize) -> Result<TerminalKind, DataError> {
    match s {
        "collapse" => Ok(TerminalKind::Collapse),
        "stream-exhausted" => Ok(TerminalKind::StreamExhausted),
        "no-feasible-action" => Ok(TerminalKind::NoFeasibleAction),
        other => Err(DataError::CorruptRecord {
            line,
            reason: format!("unknown terminal kind {other:?}"),
        }),
    }
}

fn fmt_summary(s: &StateSummary) -> String {
    format!("{},{},{},{}", s.t, s.items_placed, s.su, s.max_height_cm)
}

fn fmt_step_line(step: &TrajectoryStep) -> String {
    let t = &step.transition;
    let logp = match step.behavior_log_prob {
        Some(v) => v.to_string(),
        None => "none".to_string(),
    };
    format!(
        "step t={} item={}:{},{},{}:{} pose={},{},{},{} action={} count={} reward={} done={} f={} logp={} pre={} post={} mu_s={} mu_d={} off={},{},{} drop={} rest={}",
        t.t,
        t.item.id.0,
        t.item.size[0],
        t.item.size[1],
        t.item.size[2],
        t.item.mass,
        t.pose.pos[0],
        t.pose.pos[1],
        t.pose.pos[2],
        t.pose.tilt_deg,
        t.action_index,
        t.candidate_count,
        t.reward,
        u8::from(t.done),
        u8::from(t.succeeded),
        logp,
        fmt_summary(&t.pre),
        fmt_summary(&t.post),
        step.params.mu_static,
        step.params.mu_dynamic,
        step.params.mass_center_offset[0],
        step.params.mass_center_offset[1],
        step.params.mass_center_offset[2],
        step.params.drop_height_cm,
        step.params.restitution,
    )
}

/// Writes a trajectory log: version header, embedded config, then per
/// episode a header line, step records and a terminal summary.
pub fn write_log(path: &Path, log: &TrajectoryLog) -> Result<(), DataError> {
    let mut text = String::from("binpack-tlog v1\n");
    for line in log.config.to_text().lines() {
        let _ = writeln!(text, "config {line}");
    }
    for ep in &log.episodes {
        let source = match ep.record.source {
            TrajectorySource::Simulated => "sim",
            TrajectorySource::RealPhase1 => "real-phase1",
        };
        let _ = writeln!(
            text,
            "episode seed={} source={}",
            ep.record.episode_seed, source
        );
        for step in &ep.record.steps {
            text.push_str(&fmt_step_line(step));
            text.push('\n');
        }
        let s = &ep.summary;
        let _ = writeln!(
            text,
            "end su={} placed={} attempts={} collapsed={} terminal={} return={}",
            s.su,
            s.items_placed,
            s.attempts,
            s.collapse_item_count,
            terminal_str(s.terminal),
            s.episode_return
        );
    }
    std::fs::write(path, text)?;
    Ok(())
}

struct FieldParser<'a> {
    line: usize,
    fields: Vec<(&'a str, &'a str)>,
}

impl<'a> FieldParser<'a> {
    fn new(rest: &'a str, line: usize) -> Self {
        let fields = rest
            .split_whitespace()
            .filter_map(|tok| tok.split_once('='))
            .collect();
        FieldParser { line, fields }
    }

    fn get(&self, key: &str) -> Result<&'a str, DataError> {
        self.fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| DataError::CorruptRecord {
                line: self.line,
                reason: format!("missing field {key:?}"),
            })
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, DataError> {
        self.get(key)?
            .parse::<T>()
            .map_err(|_| DataError::CorruptRecord {
                line: self.line,
                reason: format!("bad value for {key:?}"),
            })
    }

    fn parse_list<T: std::str::FromStr>(&self, key: &str, n: usize) -> Result<Vec<T>, DataError> {
        let raw = self.get(key)?;
        let parts: Vec<&str> = raw.split(&[',', ':'][..]).collect();
        if parts.len() != n {
            return Err(DataError::CorruptRecord {
                line: self.line,
                reason: format!("field {key:?} expected {n} values"),
            });
        }
        parts
            .iter()
            .map(|p| {
                p.parse::<T>().map_err(|_| DataError::CorruptRecord {
                    line: self.line,
                    reason: format!("bad value in {key:?}"),
                })
            })
            .collect()
    }
}

fn parse_summary(raw: &str, line: usize) -> Result<StateSummary, DataError> {
    let parts: Vec<&str> = raw.split(',').collect();
    if parts.len() != 4 {
        return Err(DataError::CorruptRecord {
            line,
            reason: "summary expects t,items,su,max_height".into(),
        });
    }
    let bad = || DataError::CorruptRecord {
        line,
        reason: "bad summary value".into(),
    };
    Ok(StateSummary {
        t: parts[0].parse().map_err(|_| bad())?,
        items_placed: parts[1].parse().map_err(|_| bad())?,
        su: parts[2].parse().map_err(|_| bad())?,
        max_height_cm: parts[3].parse().map_err(|_| bad())?,
    })
}

fn parse_step_line(rest: &str, lineno: usize) -> Result<TrajectoryStep, DataError> {
    let p = FieldParser::new(rest, lineno);
    let item_vals: Vec<f64> = p.parse_list("item", 5)?;
    let pose_vals: Vec<f64> = p.parse_list("pose", 4)?;
    let off: Vec<f64> = p.parse_list("off", 3)?;
    let logp_raw = p.get("logp")?;
    let behavior_log_prob = if logp_raw == "none" {
        None
    } else {
        Some(
            logp_raw
                .parse::<f64>()
                .map_err(|_| DataError::CorruptRecord {
                    line: lineno,
                    reason: "bad logp".into(),
                })?,
        )
    };
    let flag = |key: &str| -> Result<bool, DataError> { Ok(p.parse::<u8>(key)? != 0) };
    let item = ItemSpec::from_units(
        item_vals[0] as u64,
        [
            item_vals[1] as Unit,
            item_vals[2] as Unit,
            item_vals[3] as Unit,
        ],
        item_vals[4],
    );
    let pose = Pose {
        pos: [
            pose_vals[0] as Unit,
            pose_vals[1] as Unit,
            pose_vals[2] as Unit,
        ],
        tilt_deg: pose_vals[3],
    };
    Ok(TrajectoryStep {
        transition: Transition {
            t: p.parse("t")?,
            item,
            action_index: p.parse("action")?,
            pose,
            candidate_count: p.parse("count")?,
            reward: p.parse("reward")?,
            done: flag("done")?,
            succeeded: flag("f")?,
            pre: parse_summary(p.get("pre")?, lineno)?,
            post: parse_summary(p.get("post")?, lineno)?,
        },
        behavior_log_prob,
        params: PhysicsParams {
            mu_static: p.parse("mu_s")?,
            mu_dynamic: p.parse("mu_d")?,
            mass_center_offset: [off[0], off[1], off[2]],
            drop_height_cm: p.parse("drop")?,
            restitution: p.parse("rest")?,
        },
    })
}

/// Reads a trajectory log, reporting the first corrupt line.
pub fn read_log(path: &Path) -> Result<TrajectoryLog, DataError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| DataError::CorruptRecord {
        line: 1,
        reason: "empty file".into(),
    })?;
    if header.trim() != "binpack-tlog v1" {
        return Err(DataError::VersionMismatch {
            found: header.trim().to_string(),
        });
    }
    let mut config_lines = String::new();
    let mut episodes: Vec<LoggedEpisode> = Vec::new();
    let mut current: Option<(TrajectoryRecord, usize)> = None;
    for (idx, raw) in lines {
        let lineno = idx + 1;
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("config ") {
            config_lines.push_str(rest);
            config_lines.push('\n');
        } else if let Some(rest) = line.strip_prefix("episode ") {
            if current.is_some() {
                return Err(DataError::CorruptRecord {
                    line: lineno,
                    reason: "episode started before the previous one ended".into(),
                });
            }
            let p = FieldParser::new(rest, lineno);
            let source = match p.get("source")? {
                "sim" => TrajectorySource::Simulated,
                "real-phase1" => TrajectorySource::RealPhase1,
                other => {
                    return Err(DataError::CorruptRecord {
                        line: lineno,
                        reason: format!("unknown source {other:?}"),
                    })
                }
            };
            current = Some((
                TrajectoryRecord {
                    source,
                    episode_seed: p.parse("seed")?,
                    steps: Vec::new(),
                },
                lineno,
            ));
        } else if let Some(rest) = line.strip_prefix("step ") {
            let (record, _) = current.as_mut().ok_or_else(|| DataError::CorruptRecord {
                line: lineno,
                reason: "step outside an episode".into(),
            })?;
            record.steps.push(parse_step_line(rest, lineno)?);
        } else if let Some(rest) = line.strip_prefix("end ") {
            let (record, _) = current.take().ok_or_else(|| DataError::CorruptRecord {
                line: lineno,
                reason: "end outside an episode".into(),
            })?;
            let p = FieldParser::new(rest, lineno);
            let summary = EpisodeSummary {
                su: p.parse("su")?,
                items_placed: p.parse("placed")?,
                attempts: p.parse("attempts")?,
                collapse_item_count: p.parse("collapsed")?,
                terminal: parse_terminal(p.get("terminal")?, lineno)?,
                episode_return: p.parse("return")?,
            };
            episodes.push(LoggedEpisode { record, summary });
        } else {
            return Err(DataError::CorruptRecord {
                line: lineno,
                reason: format!("unrecognized record {line:?}"),
            });
        }
    }
    if let Some((_, started_at)) = current {
        return Err(DataError::CorruptRecord {
            line: started_at,
            reason: "unterminated episode (truncated file?)".into(),
        });
    }
    let config = ExperimentConfig::parse(&config_lines)?;
    Ok(TrajectoryLog { config, episodes })
}

/// Builds a log from episode results.
pub fn log_from_results(
    cfg: &ExperimentConfig,
    results: &[crate::env::EpisodeResult],
) -> TrajectoryLog {
    TrajectoryLog {
        config: cfg.clone(),
        episodes: results
            .iter()
            .map(|r| LoggedEpisode {
                record: r.trajectory.clone(),
                summary: EpisodeSummary {
                    su: r.su,
                    items_placed: r.items_placed,
                    attempts: r.attempts,
                    collapse_item_count: r.collapse_item_count,
                    terminal: r.terminated_by,
                    episode_return: r.episode_return,
                },
            })
            .collect(),
    }
}
