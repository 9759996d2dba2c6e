//! Constraint learning from demonstrations: the tabular sigmoid constraint
//! trained with binary cross-entropy on demonstration labels, and the full
//! maximum-causal-entropy objective with joint reward/constraint learning.

pub mod maxent;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capo::AdamState;
use crate::cmdp::Trajectory;
use crate::env::{Action, GridState};

pub use maxent::{
    clirl_gradient, clirl_gradient_grid, clirl_objective, clirl_objective_grid, index_demos,
    soft_log_partition, ClirlGrad, ClirlHyper, IndexedDemo, SoftDp, TabularMdp,
};

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`] for probabilities strictly inside (0, 1).
pub fn prob_to_logit(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability must be strictly inside (0, 1)");
    (p / (1.0 - p)).ln()
}

/// ln(1 + e^x) without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Per-(state, action) logits for each constraint; the sigmoid of an entry is
/// the learned violation probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintTable {
    n_states: usize,
    n_actions: usize,
    n_constraints: usize,
    logits: Vec<f64>,
}

impl ConstraintTable {
    pub fn new(n_states: usize, n_actions: usize, n_constraints: usize) -> Self {
        Self {
            n_states,
            n_actions,
            n_constraints,
            logits: vec![0.0; n_constraints * n_states * n_actions],
        }
    }

    /// A table over the 25x4 grid, 100 entries per constraint.
    pub fn for_grid(n_constraints: usize) -> Self {
        Self::new(25, Action::COUNT, n_constraints)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_constraints(&self) -> usize {
        self.n_constraints
    }

    fn idx(&self, k: usize, s: usize, a: usize) -> usize {
        assert!(
            k < self.n_constraints && s < self.n_states && a < self.n_actions,
            "constraint table index (k={k}, s={s}, a={a}) out of range"
        );
        (k * self.n_states + s) * self.n_actions + a
    }

    pub fn logit(&self, k: usize, s: usize, a: usize) -> f64 {
        self.logits[self.idx(k, s, a)]
    }

    pub fn set_logit(&mut self, k: usize, s: usize, a: usize, value: f64) {
        let i = self.idx(k, s, a);
        self.logits[i] = value;
    }

    /// Learned violation probability, strictly inside (0, 1).
    pub fn prob(&self, k: usize, s: usize, a: usize) -> f64 {
        sigmoid(self.logit(k, s, a))
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Probabilities of constraint `k` under `action` as rows y = 0..4 of
    /// columns x = 0..4. Grid-shaped tables only.
    pub fn prob_grid(&self, k: usize, action: Action) -> Vec<Vec<f64>> {
        assert_eq!((self.n_states, self.n_actions), (25, 4), "not a grid table");
        (0..5)
            .map(|y| {
                (0..5)
                    .map(|x| self.prob(k, GridState::at(x, y).index(), action.index()))
                    .collect()
            })
            .collect()
    }

    /// Writes the table as `k,x,y,action,logit` lines.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
        if (self.n_states, self.n_actions) != (25, 4) {
            return Err(ModelFileError::NotGridShaped);
        }
        let mut file = BufWriter::new(File::create(path)?);
        for k in 0..self.n_constraints {
            for s in GridState::all() {
                for a in Action::ALL {
                    writeln!(
                        file,
                        "{},{},{},{},{}",
                        k,
                        s.x(),
                        s.y(),
                        a.name(),
                        self.logit(k, s.index(), a.index())
                    )?;
                }
            }
        }
        file.flush()?;
        Ok(())
    }

    /// Reads a table written by [`ConstraintTable::save`]; every
    /// (constraint, state, action) entry must appear exactly once.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelFileError> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries: Vec<(usize, usize, usize, f64)> = Vec::new();
        let mut max_k = 0usize;
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let text = line?;
            if text.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = text.split(',').collect();
            if fields.len() != 5 {
                return Err(ModelFileError::Parse {
                    line: line_no,
                    message: format!("expected 5 fields, found {}", fields.len()),
                });
            }
            let parse_err = |message: String| ModelFileError::Parse { line: line_no, message };
            let k: usize = fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad constraint index {:?}", fields[0])))?;
            let x: u8 = fields[1]
                .parse()
                .map_err(|_| parse_err(format!("bad x {:?}", fields[1])))?;
            let y: u8 = fields[2]
                .parse()
                .map_err(|_| parse_err(format!("bad y {:?}", fields[2])))?;
            let state = GridState::new(x, y)
                .ok_or_else(|| parse_err(format!("cell ({x}, {y}) out of bounds")))?;
            let action: Action = fields[3]
                .parse()
                .map_err(|_| parse_err(format!("bad action {:?}", fields[3])))?;
            let logit: f64 = fields[4]
                .parse()
                .map_err(|_| parse_err(format!("bad logit {:?}", fields[4])))?;
            max_k = max_k.max(k);
            entries.push((k, state.index(), action.index(), logit));
        }
        if entries.is_empty() {
            return Err(ModelFileError::Empty);
        }
        let mut table = Self::for_grid(max_k + 1);
        let mut seen = vec![false; table.logits.len()];
        for (k, s, a, logit) in entries {
            let i = table.idx(k, s, a);
            if seen[i] {
                return Err(ModelFileError::DuplicateEntry { k, s, a });
            }
            seen[i] = true;
            table.logits[i] = logit;
        }
        let missing = seen.iter().filter(|&&s| !s).count();
        if missing > 0 {
            return Err(ModelFileError::Incomplete { missing });
        }
        Ok(table)
    }
}

/// Per-(state, action) reward parameters for the learned reward.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardWeights {
    n_states: usize,
    n_actions: usize,
    weights: Vec<f64>,
}

impl RewardWeights {
    pub fn new(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            weights: vec![0.0; n_states * n_actions],
        }
    }

    pub fn for_grid() -> Self {
        Self::new(25, Action::COUNT)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn weight(&self, s: usize, a: usize) -> f64 {
        self.weights[s * self.n_actions + a]
    }

    pub fn set_weight(&mut self, s: usize, a: usize, value: f64) {
        self.weights[s * self.n_actions + a] = value;
    }

    pub fn params(&self) -> &[f64] {
        &self.weights
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Writes the table as `x,y,action,weight` lines.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
        if (self.n_states, self.n_actions) != (25, 4) {
            return Err(ModelFileError::NotGridShaped);
        }
        let mut file = BufWriter::new(File::create(path)?);
        for s in GridState::all() {
            for a in Action::ALL {
                writeln!(
                    file,
                    "{},{},{},{}",
                    s.x(),
                    s.y(),
                    a.name(),
                    self.weight(s.index(), a.index())
                )?;
            }
        }
        file.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelFileError> {
        let reader = BufReader::new(File::open(path)?);
        let mut table = Self::for_grid();
        let mut seen = vec![false; table.weights.len()];
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let text = line?;
            if text.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = text.split(',').collect();
            if fields.len() != 4 {
                return Err(ModelFileError::Parse {
                    line: line_no,
                    message: format!("expected 4 fields, found {}", fields.len()),
                });
            }
            let parse_err = |message: String| ModelFileError::Parse { line: line_no, message };
            let x: u8 = fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad x {:?}", fields[0])))?;
            let y: u8 = fields[1]
                .parse()
                .map_err(|_| parse_err(format!("bad y {:?}", fields[1])))?;
            let state = GridState::new(x, y)
                .ok_or_else(|| parse_err(format!("cell ({x}, {y}) out of bounds")))?;
            let action: Action = fields[2]
                .parse()
                .map_err(|_| parse_err(format!("bad action {:?}", fields[2])))?;
            let weight: f64 = fields[3]
                .parse()
                .map_err(|_| parse_err(format!("bad weight {:?}", fields[3])))?;
            let idx = state.index() * 4 + action.index();
            if seen[idx] {
                return Err(ModelFileError::DuplicateEntry {
                    k: 0,
                    s: state.index(),
                    a: action.index(),
                });
            }
            seen[idx] = true;
            table.weights[idx] = weight;
        }
        let missing = seen.iter().filter(|&&s| !s).count();
        if missing > 0 {
            return Err(ModelFileError::Incomplete { missing });
        }
        Ok(table)
    }
}

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("model files are defined for 25x4 grid tables only")]
    NotGridShaped,
    #[error("duplicate entry for (k={k}, s={s}, a={a})")]
    DuplicateEntry { k: usize, s: usize, a: usize },
    #[error("model file is missing {missing} entries")]
    Incomplete { missing: usize },
    #[error("model file is empty")]
    Empty,
}

#[derive(Debug, Error, PartialEq)]
pub enum ClirlError {
    #[error("combined batch is empty")]
    EmptyBatch,
    #[error("demonstration set is empty")]
    EmptyDemos,
    #[error("demonstration {demo} has {len} steps, longer than the horizon {horizon}")]
    HorizonTooShort {
        demo: usize,
        len: usize,
        horizon: usize,
    },
    #[error("{field} must have one entry per constraint ({expected}), found {actual}")]
    HyperWidthMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("hyperparameter {field} = {value} is invalid: {reason}")]
    BadHyper {
        field: &'static str,
        value: f64,
        reason: &'static str,
    },
}

/// How demonstration trajectories are turned into per-pair training targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Every pair of a positive gets target 0 and every pair of a negative
    /// gets target 1 (for each constraint the trajectory violates), including
    /// the negative's pre-violation moves.
    #[default]
    Trajectory,
    /// Each pair is labeled by its own transition: the step's recorded cost
    /// indicator is the target, for positives and negatives alike.
    Transition,
}

/// One BCE training item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPair {
    pub constraint: usize,
    pub state: usize,
    pub action: usize,
    pub target: f64,
}

/// Expands demonstration batches into labeled pairs under the given mode.
/// Pairs are emitted per occurrence, so repeated visits weigh more.
pub fn bce_labels(
    positives: &[Trajectory],
    negatives: &[Trajectory],
    n_constraints: usize,
    mode: LabelMode,
) -> Vec<LabeledPair> {
    let mut pairs = Vec::new();
    match mode {
        LabelMode::Trajectory => {
            for traj in positives {
                for step in &traj.steps {
                    for k in 0..n_constraints {
                        pairs.push(LabeledPair {
                            constraint: k,
                            state: step.state.index(),
                            action: step.action.index(),
                            target: 0.0,
                        });
                    }
                }
            }
            for traj in negatives {
                for k in 0..n_constraints {
                    if traj.total_cost(k) == 0.0 {
                        continue;
                    }
                    for step in &traj.steps {
                        pairs.push(LabeledPair {
                            constraint: k,
                            state: step.state.index(),
                            action: step.action.index(),
                            target: 1.0,
                        });
                    }
                }
            }
        }
        LabelMode::Transition => {
            for traj in positives.iter().chain(negatives) {
                for step in &traj.steps {
                    for k in 0..n_constraints {
                        pairs.push(LabeledPair {
                            constraint: k,
                            state: step.state.index(),
                            action: step.action.index(),
                            target: step.costs.get(k).copied().unwrap_or(0.0),
                        });
                    }
                }
            }
        }
    }
    pairs
}

/// Mean binary cross-entropy of the table's predictions against the targets.
pub fn bce_loss(table: &ConstraintTable, pairs: &[LabeledPair]) -> f64 {
    assert!(!pairs.is_empty(), "loss over an empty pair set");
    let total: f64 = pairs
        .iter()
        .map(|p| {
            let z = table.logit(p.constraint, p.state, p.action);
            softplus(z) - p.target * z
        })
        .sum();
    total / pairs.len() as f64
}

/// One Adam step on the mean BCE over the batch's labeled pairs. Returns the
/// post-step loss on the same batch.
pub fn bce_update(
    table: &mut ConstraintTable,
    pos_batch: &[Trajectory],
    neg_batch: &[Trajectory],
    adam: &mut AdamState,
    mode: LabelMode,
) -> Result<f64, ClirlError> {
    let pairs = bce_labels(pos_batch, neg_batch, table.n_constraints(), mode);
    if pairs.is_empty() {
        return Err(ClirlError::EmptyBatch);
    }
    let mut grads = vec![0.0; table.params().len()];
    let scale = 1.0 / pairs.len() as f64;
    for p in &pairs {
        let i = table.idx(p.constraint, p.state, p.action);
        grads[i] += scale * (sigmoid(table.params()[i]) - p.target);
    }
    adam.step(table.params_mut(), &grads);
    Ok(bce_loss(table, &pairs))
}
