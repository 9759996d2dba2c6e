//! Generation, persistence, and loading of positive (safe goal-reaching) and
//! negative (danger-entering) demonstration trajectories.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmdp::{Trajectory, TrajectoryStep};
use crate::env::{self, Action, DomainTag, GridState, GOAL, MAX_EPISODE_STEPS, START};

/// Probability of taking a random safe detour instead of a shortest-path move
/// while generating positive demonstrations.
pub const DETOUR_EPSILON: f64 = 0.2;

/// A demonstration corpus generated under one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub positives: Vec<Trajectory>,
    pub negatives: Vec<Trajectory>,
    pub domain: DomainTag,
}

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("{kind} demonstration count must be positive")]
    ZeroCount { kind: &'static str },
    #[error("no safe path from start to goal under domain {0:?}")]
    NoSafePath(String),
    #[error("could not produce a violating walk under domain {0:?} (no reachable danger cell?)")]
    NoViolationFound(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: invariant breach: {message}")]
    InvariantBreach { line: usize, message: String },
}

// Substreams of the generation seed; positives and negatives stay independent
// even when generated from the same seed.
const POSITIVE_STREAM: u64 = 0;
const NEGATIVE_STREAM: u64 = 1;

fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Breadth-first distance (in moves) from every cell to the goal through
/// non-danger cells only. `None` marks unreachable or danger cells.
pub(crate) fn safe_distances(domain: &DomainTag) -> Vec<Option<usize>> {
    let mut dist: Vec<Option<usize>> = vec![None; 25];
    if domain.is_danger(GOAL) {
        return dist;
    }
    dist[GOAL.index()] = Some(0);
    let mut queue = VecDeque::from([GOAL]);
    while let Some(cell) = queue.pop_front() {
        let d = dist[cell.index()].unwrap();
        for a in Action::ALL {
            let neighbor = env::step(cell, a);
            if neighbor == cell || domain.is_danger(neighbor) {
                continue;
            }
            if dist[neighbor.index()].is_none() {
                dist[neighbor.index()] = Some(d + 1);
                queue.push_back(neighbor);
            }
        }
    }
    dist
}

fn push_step(traj: &mut Trajectory, s: GridState, a: Action, domain: &DomainTag) -> GridState {
    let next = env::step(s, a);
    let cost = if domain.is_danger(next) { 1.0 } else { 0.0 };
    traj.steps.push(TrajectoryStep {
        state: s,
        action: a,
        next_state: next,
        reward: env::reward(s, a, next),
        costs: vec![cost],
    });
    next
}

/// Generates `n` trajectories that reach the goal within the episode cap and
/// never enter a danger cell. Each follows BFS-shortest safe moves, with an
/// epsilon-probability random safe detour whenever the remaining step budget
/// still guarantees arrival. Deterministic given the seed.
pub fn generate_positive(
    domain: &DomainTag,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, DemoError> {
    if n == 0 {
        return Err(DemoError::ZeroCount { kind: "positive" });
    }
    let dist = safe_distances(domain);
    if dist[START.index()].is_none() {
        return Err(DemoError::NoSafePath(domain.label().to_string()));
    }
    let mut rng = seeded_rng(seed, POSITIVE_STREAM);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut traj = Trajectory::new(domain.clone());
        let mut s = START;
        while s != GOAL {
            let taken = traj.len();
            let budget = MAX_EPISODE_STEPS - taken;
            let shortest: Vec<Action> = Action::ALL
                .into_iter()
                .filter(|&a| {
                    let next = env::step(s, a);
                    !domain.is_danger(next) && dist[next.index()] == dist[s.index()].map(|d| d - 1)
                })
                .collect();
            // A detour is any safe move that still leaves enough budget to
            // reach the goal afterwards.
            let detours: Vec<Action> = Action::ALL
                .into_iter()
                .filter(|&a| {
                    let next = env::step(s, a);
                    !domain.is_danger(next) && dist[next.index()].is_some_and(|d| d + 1 <= budget)
                })
                .collect();
            let choices = if rng.random::<f64>() < DETOUR_EPSILON && !detours.is_empty() {
                &detours
            } else {
                &shortest
            };
            let a = choices[rng.random_range(0..choices.len())];
            s = push_step(&mut traj, s, a, domain);
        }
        traj.terminated_at_goal = true;
        out.push(traj);
    }
    Ok(out)
}

/// Generates `n` trajectories that each enter at least one danger cell:
/// uniform random walks truncated at the first violation plus up to five
/// post-violation steps. Walks that end without violating (goal or cap) are
/// discarded and redrawn. Deterministic given the seed.
pub fn generate_negative(
    domain: &DomainTag,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>, DemoError> {
    if n == 0 {
        return Err(DemoError::ZeroCount { kind: "negative" });
    }
    let mut rng = seeded_rng(seed, NEGATIVE_STREAM);
    let mut out = Vec::with_capacity(n);
    let mut stalled = 0usize;
    while out.len() < n {
        let mut traj = Trajectory::new(domain.clone());
        let mut s = START;
        let mut remaining_after_violation: Option<usize> = None;
        for _ in 0..MAX_EPISODE_STEPS {
            let a = Action::ALL[rng.random_range(0..Action::COUNT)];
            s = push_step(&mut traj, s, a, domain);
            if remaining_after_violation.is_none() && domain.is_danger(s) {
                remaining_after_violation = Some(rng.random_range(0..=5));
            } else if let Some(extra) = remaining_after_violation {
                if extra == 0 {
                    break;
                }
                remaining_after_violation = Some(extra - 1);
            }
            if s == GOAL {
                traj.terminated_at_goal = true;
                break;
            }
        }
        if remaining_after_violation.is_some() {
            out.push(traj);
            stalled = 0;
        } else {
            stalled += 1;
            if stalled > 10_000 {
                return Err(DemoError::NoViolationFound(domain.label().to_string()));
            }
        }
    }
    Ok(out)
}

/// Generates a full corpus; positives and negatives draw from independent
/// substreams of `seed`.
pub fn generate_demo_set(
    domain: &DomainTag,
    n_pos: usize,
    n_neg: usize,
    seed: u64,
) -> Result<DemoSet, DemoError> {
    Ok(DemoSet {
        positives: generate_positive(domain, n_pos, seed)?,
        negatives: generate_negative(domain, n_neg, seed)?,
        domain: domain.clone(),
    })
}

/// Checks the defining invariants of a corpus: structural trajectory validity,
/// positives reach the goal without danger entries, negatives violate at least
/// once. Returns the (1-based) record number and reason of the first breach.
pub fn validate_demo_set(set: &DemoSet) -> Result<(), (usize, String)> {
    let validate = |traj: &Trajectory, record: usize, positive: bool| {
        traj.validate(1).map_err(|e| (record, e.to_string()))?;
        for (i, step) in traj.steps.iter().enumerate() {
            let entered = set.domain.is_danger(step.next_state);
            if step.costs[0] != entered as u8 as f64 {
                return Err((record, format!("step {i}: cost does not match danger entry")));
            }
        }
        if positive {
            if !traj.reaches_goal() {
                return Err((record, "positive does not reach the goal".to_string()));
            }
            if traj.steps.iter().any(|s| set.domain.is_danger(s.next_state)) {
                return Err((record, "positive enters a danger cell".to_string()));
            }
        } else if !traj.steps.iter().any(|s| set.domain.is_danger(s.next_state)) {
            return Err((record, "negative never enters a danger cell".to_string()));
        }
        Ok(())
    };
    for (i, traj) in set.positives.iter().enumerate() {
        validate(traj, i + 1, true)?;
    }
    for (i, traj) in set.negatives.iter().enumerate() {
        validate(traj, set.positives.len() + i + 1, false)?;
    }
    Ok(())
}

/// On-disk form of one trajectory: one JSON object per line with fields
/// `domain`, `kind` ("pos" | "neg"), and `steps`, each step being
/// `[x, y, action, x', y', reward, [costs...]]`.
#[derive(Serialize, Deserialize)]
struct DemoRecord {
    domain: String,
    kind: String,
    steps: Vec<(u8, u8, String, u8, u8, f64, Vec<f64>)>,
}

impl DemoRecord {
    fn from_trajectory(traj: &Trajectory, kind: &str) -> Self {
        Self {
            domain: traj.domain.label().to_string(),
            kind: kind.to_string(),
            steps: traj
                .steps
                .iter()
                .map(|s| {
                    (
                        s.state.x(),
                        s.state.y(),
                        s.action.name().to_string(),
                        s.next_state.x(),
                        s.next_state.y(),
                        s.reward,
                        s.costs.clone(),
                    )
                })
                .collect(),
        }
    }

    fn into_trajectory(self, domain: &DomainTag, line: usize) -> Result<Trajectory, DemoError> {
        let mut traj = Trajectory::new(domain.clone());
        for (x, y, action, nx, ny, reward, costs) in self.steps {
            let state = GridState::new(x, y).ok_or_else(|| DemoError::Schema {
                line,
                message: format!("state ({x}, {y}) out of bounds"),
            })?;
            let next_state = GridState::new(nx, ny).ok_or_else(|| DemoError::Schema {
                line,
                message: format!("next state ({nx}, {ny}) out of bounds"),
            })?;
            let action: Action = action.parse().map_err(|e| DemoError::Schema {
                line,
                message: format!("{e}"),
            })?;
            traj.steps.push(TrajectoryStep {
                state,
                action,
                next_state,
                reward,
                costs,
            });
        }
        traj.terminated_at_goal = traj.reaches_goal();
        Ok(traj)
    }
}

/// Serializes a corpus to its line-delimited form (positives first, then
/// negatives, each in generation order).
pub fn demos_to_string(set: &DemoSet) -> String {
    let mut out = String::new();
    for traj in &set.positives {
        out.push_str(&serde_json::to_string(&DemoRecord::from_trajectory(traj, "pos")).unwrap());
        out.push('\n');
    }
    for traj in &set.negatives {
        out.push_str(&serde_json::to_string(&DemoRecord::from_trajectory(traj, "neg")).unwrap());
        out.push('\n');
    }
    out
}

pub fn save_demos(set: &DemoSet, path: impl AsRef<Path>) -> Result<(), DemoError> {
    let mut file = BufWriter::new(File::create(path)?);
    file.write_all(demos_to_string(set).as_bytes())?;
    file.flush()?;
    Ok(())
}

/// Loads a corpus whose `domain` labels are the defaults (`theta1`/`theta2`).
pub fn load_demos(path: impl AsRef<Path>) -> Result<DemoSet, DemoError> {
    load_demos_with(path, &[DomainTag::pre_shift(), DomainTag::post_shift()])
}

/// Loads a corpus, resolving `domain` labels against the supplied domains.
/// Every record must carry the same label; invariants are re-validated and
/// breaches report the offending line.
pub fn load_demos_with(
    path: impl AsRef<Path>,
    domains: &[DomainTag],
) -> Result<DemoSet, DemoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    let mut domain: Option<DomainTag> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: DemoRecord =
            serde_json::from_str(&text).map_err(|e| DemoError::Schema {
                line: line_no,
                message: e.to_string(),
            })?;
        let resolved = domains
            .iter()
            .find(|d| d.label() == record.domain)
            .ok_or_else(|| DemoError::Schema {
                line: line_no,
                message: format!("unknown domain label {:?}", record.domain),
            })?;
        match &domain {
            None => domain = Some(resolved.clone()),
            Some(existing) if existing.label() != resolved.label() => {
                return Err(DemoError::Schema {
                    line: line_no,
                    message: format!(
                        "mixed domain labels: {:?} after {:?}",
                        record.domain,
                        existing.label()
                    ),
                });
            }
            Some(_) => {}
        }
        let kind = record.kind.clone();
        let traj = record.into_trajectory(resolved, line_no)?;
        traj.validate(1)
            .map_err(|e| DemoError::InvariantBreach { line: line_no, message: e.to_string() })?;
        match kind.as_str() {
            "pos" => {
                if !traj.reaches_goal() {
                    return Err(DemoError::InvariantBreach {
                        line: line_no,
                        message: "positive does not reach the goal".to_string(),
                    });
                }
                if traj.steps.iter().any(|s| resolved.is_danger(s.next_state)) {
                    return Err(DemoError::InvariantBreach {
                        line: line_no,
                        message: "positive enters a danger cell".to_string(),
                    });
                }
                positives.push(traj);
            }
            "neg" => {
                if !traj.steps.iter().any(|s| resolved.is_danger(s.next_state)) {
                    return Err(DemoError::InvariantBreach {
                        line: line_no,
                        message: "negative never enters a danger cell".to_string(),
                    });
                }
                negatives.push(traj);
            }
            other => {
                return Err(DemoError::Schema {
                    line: line_no,
                    message: format!("unknown kind {other:?}, expected \"pos\" or \"neg\""),
                });
            }
        }
    }
    Ok(DemoSet {
        positives,
        negatives,
        domain: domain.unwrap_or_else(DomainTag::pre_shift),
    })
}
