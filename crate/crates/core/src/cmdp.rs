//! Constrained-MDP container types, trajectories, discounted aggregation, and
//! the registry that maps rule text to cost functions.

use std::collections::HashMap;

use thiserror::Error;

use crate::env::{self, Action, DomainTag, GridState, GOAL, MAX_EPISODE_STEPS};

/// The constrained MDP tuple for the gridworld: state and action sets, discount,
/// per-constraint cost thresholds, and the domain variants with their sampling
/// weights P(domain).
#[derive(Debug, Clone, PartialEq)]
pub struct Cmdp {
    states: Vec<GridState>,
    gamma: f64,
    thresholds: Vec<f64>,
    domains: Vec<(DomainTag, f64)>,
}

#[derive(Debug, Error, PartialEq)]
pub enum CmdpError {
    #[error("gamma {0} outside [0, 1]")]
    GammaOutOfRange(f64),
    #[error("threshold {0} is negative")]
    NegativeThreshold(f64),
    #[error("domain weights sum to {0}, expected 1")]
    WeightsNotNormalized(f64),
    #[error("at least one domain is required")]
    NoDomains,
}

impl Cmdp {
    pub fn new(
        gamma: f64,
        thresholds: Vec<f64>,
        domains: Vec<(DomainTag, f64)>,
    ) -> Result<Self, CmdpError> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(CmdpError::GammaOutOfRange(gamma));
        }
        if let Some(&h) = thresholds.iter().find(|&&h| h < 0.0) {
            return Err(CmdpError::NegativeThreshold(h));
        }
        if domains.is_empty() {
            return Err(CmdpError::NoDomains);
        }
        let total: f64 = domains.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(CmdpError::WeightsNotNormalized(total));
        }
        Ok(Self {
            states: GridState::all().collect(),
            gamma,
            thresholds,
            domains,
        })
    }

    pub fn states(&self) -> &[GridState] {
        &self.states
    }

    /// The fixed action order used for all tabular indexing.
    pub fn actions(&self) -> [Action; 4] {
        Action::ALL
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn domains(&self) -> &[(DomainTag, f64)] {
        &self.domains
    }
}

/// One transition record: the state, the action taken, the resulting state,
/// the reward, and one cost indicator per registered constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub state: GridState,
    pub action: Action,
    pub next_state: GridState,
    pub reward: f64,
    pub costs: Vec<f64>,
}

/// An ordered list of transitions generated under one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub domain: DomainTag,
    pub terminated_at_goal: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("step {step}: next_state {actual} does not match the environment transition {expected}")]
    TransitionMismatch {
        step: usize,
        expected: GridState,
        actual: GridState,
    },
    #[error("step {step}: expected {expected} cost entries, found {actual}")]
    CostWidthMismatch {
        step: usize,
        expected: usize,
        actual: usize,
    },
    #[error("step {step}: cost {value} is not a 0/1 indicator")]
    NonIndicatorCost { step: usize, value: f64 },
    #[error("trajectory has {len} steps, more than the episode cap {max}", max = MAX_EPISODE_STEPS)]
    TooLong { len: usize },
    #[error("step {step}: state {state} is not consecutive with the previous step")]
    BrokenChain { step: usize, state: GridState },
}

impl Trajectory {
    pub fn new(domain: DomainTag) -> Self {
        Self {
            steps: Vec::new(),
            domain,
            terminated_at_goal: false,
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of cost entries per step (0 for an empty trajectory).
    pub fn n_constraints(&self) -> usize {
        self.steps.first().map_or(0, |s| s.costs.len())
    }

    /// Total (undiscounted) cost recorded for constraint `k`.
    pub fn total_cost(&self, k: usize) -> f64 {
        self.steps.iter().map(|s| s.costs.get(k).copied().unwrap_or(0.0)).sum()
    }

    /// Checks the structural invariants: consecutive states chain together,
    /// every `next_state` matches the environment transition, cost rows are
    /// `expected_constraints` wide with 0/1 entries, and the episode cap holds.
    pub fn validate(&self, expected_constraints: usize) -> Result<(), TrajectoryError> {
        if self.len() > MAX_EPISODE_STEPS {
            return Err(TrajectoryError::TooLong { len: self.len() });
        }
        let mut prev: Option<GridState> = None;
        for (i, step) in self.steps.iter().enumerate() {
            if let Some(prev) = prev {
                if step.state != prev {
                    return Err(TrajectoryError::BrokenChain {
                        step: i,
                        state: step.state,
                    });
                }
            }
            let expected = env::step(step.state, step.action);
            if step.next_state != expected {
                return Err(TrajectoryError::TransitionMismatch {
                    step: i,
                    expected,
                    actual: step.next_state,
                });
            }
            if step.costs.len() != expected_constraints {
                return Err(TrajectoryError::CostWidthMismatch {
                    step: i,
                    expected: expected_constraints,
                    actual: step.costs.len(),
                });
            }
            if let Some(&value) = step.costs.iter().find(|&&c| c != 0.0 && c != 1.0) {
                return Err(TrajectoryError::NonIndicatorCost { step: i, value });
            }
            prev = Some(step.next_state);
        }
        Ok(())
    }

    /// True iff the final transition lands on the goal cell.
    pub fn reaches_goal(&self) -> bool {
        self.steps.last().is_some_and(|s| s.next_state == GOAL)
    }
}

/// Sum of `gamma^t * reward_t` over the trajectory; 0 for an empty trajectory.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> f64 {
    assert!((0.0..=1.0).contains(&gamma), "gamma must be in [0, 1]");
    let mut total = 0.0;
    let mut scale = 1.0;
    for step in &traj.steps {
        total += scale * step.reward;
        scale *= gamma;
    }
    total
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("constraint index {index} is not registered (trajectory records {available} constraints)")]
pub struct UnknownConstraint {
    pub index: usize,
    pub available: usize,
}

/// Sum of `gamma^t * costs_t[k]` over the trajectory.
pub fn discounted_cost(traj: &Trajectory, k: usize, gamma: f64) -> Result<f64, UnknownConstraint> {
    assert!((0.0..=1.0).contains(&gamma), "gamma must be in [0, 1]");
    if !traj.is_empty() && k >= traj.n_constraints() {
        return Err(UnknownConstraint {
            index: k,
            available: traj.n_constraints(),
        });
    }
    let mut total = 0.0;
    let mut scale = 1.0;
    for step in &traj.steps {
        total += scale * step.costs[k];
        scale *= gamma;
    }
    Ok(total)
}

/// The rule pattern accepted by the registry.
pub const RULE_PATTERN: &str = "Do not enter room (x, y)";

/// Renders the forbidden-cell rule for `cell` in the registry's grammar.
pub fn forbidden_cell_rule(cell: GridState) -> String {
    format!("Do not enter room ({}, {})", cell.x(), cell.y())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleError {
    #[error("rule {text:?} does not match the pattern {RULE_PATTERN:?}")]
    UnmatchedPattern { text: String },
    #[error("rule {text:?} names a cell outside the grid")]
    CellOutOfRange { text: String },
}

fn parse_rule(text: &str) -> Result<GridState, RuleError> {
    let inner = text
        .strip_prefix("Do not enter room (")
        .and_then(|rest| rest.strip_suffix(')'))
        .ok_or_else(|| RuleError::UnmatchedPattern {
            text: text.to_string(),
        })?;
    match env::parse_cell_pair(inner, text) {
        Ok((x, y)) => Ok(GridState::new(x, y).expect("bounds checked by parser")),
        Err(crate::env::ParseStateError::OutOfRange { .. }) => Err(RuleError::CellOutOfRange {
            text: text.to_string(),
        }),
        Err(_) => Err(RuleError::UnmatchedPattern {
            text: text.to_string(),
        }),
    }
}

/// A resolved rule: the constraint index it was assigned and the cost function
/// it denotes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostHandle {
    pub constraint_index: usize,
    forbidden: GridState,
}

impl CostHandle {
    /// C(s, a): 1 iff taking `a` from `s` enters the forbidden cell, else 0.
    pub fn cost(&self, s: GridState, a: Action) -> f64 {
        if env::step(s, a) == self.forbidden {
            1.0
        } else {
            0.0
        }
    }

    pub fn forbidden(&self) -> GridState {
        self.forbidden
    }
}

/// Maps rule text to cost functions. Resolving the same text twice yields the
/// same constraint index, so the mapping is idempotent.
#[derive(Debug, Clone, Default)]
pub struct RuleRegistry {
    entries: Vec<(String, GridState)>,
    by_text: HashMap<String, usize>,
}

impl RuleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn resolve(&mut self, text: &str) -> Result<CostHandle, RuleError> {
        if let Some(&index) = self.by_text.get(text) {
            return Ok(CostHandle {
                constraint_index: index,
                forbidden: self.entries[index].1,
            });
        }
        let forbidden = parse_rule(text)?;
        let index = self.entries.len();
        self.entries.push((text.to_string(), forbidden));
        self.by_text.insert(text.to_string(), index);
        Ok(CostHandle {
            constraint_index: index,
            forbidden,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<CostHandle> {
        self.entries.get(index).map(|&(_, forbidden)| CostHandle {
            constraint_index: index,
            forbidden,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{DomainTag, START};

    fn traj_with(rewards: &[f64], costs: &[f64]) -> Trajectory {
        // Walks east along y=0 (clamping at the wall); transition validity is
        // irrelevant for the aggregation ops under test.
        let mut traj = Trajectory::new(DomainTag::pre_shift());
        let mut s = GridState::at(0, 0);
        for (i, &r) in rewards.iter().enumerate() {
            let next = env::step(s, Action::East);
            traj.steps.push(TrajectoryStep {
                state: s,
                action: Action::East,
                next_state: next,
                reward: r,
                costs: vec![costs[i]],
            });
            s = next;
        }
        traj
    }

    #[test]
    fn discounted_return_examples() {
        let traj = traj_with(&[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]);
        assert!((discounted_return(&traj, 0.99) - 0.9801).abs() < 1e-12);

        let zeros = traj_with(&[0.0, 0.0, 0.0], &[0.0; 3]);
        assert_eq!(discounted_return(&zeros, 0.7), 0.0);

        let single = traj_with(&[1.0], &[0.0]);
        assert_eq!(discounted_return(&single, 0.5), 1.0);

        let empty = Trajectory::new(DomainTag::pre_shift());
        assert_eq!(discounted_return(&empty, 0.99), 0.0);
    }

    #[test]
    fn discounted_return_gamma_zero_is_first_reward() {
        let traj = traj_with(&[0.25, 7.0, -3.0], &[0.0; 3]);
        assert_eq!(discounted_return(&traj, 0.0), 0.25);
    }

    #[test]
    fn discounted_return_is_linear_in_rewards() {
        let base = [0.5, -1.0, 2.0, 0.0];
        let traj = traj_with(&base, &[0.0; 4]);
        let scaled = traj_with(&base.map(|r| r * 3.5), &[0.0; 4]);
        let gamma = 0.9;
        assert!(
            (discounted_return(&scaled, gamma) - 3.5 * discounted_return(&traj, gamma)).abs()
                < 1e-12
        );
    }

    #[test]
    fn discounted_return_geometric_bound() {
        let rewards = [1.0, -2.0, 1.5, 0.5, -0.25];
        let traj = traj_with(&rewards, &[0.0; 5]);
        let gamma: f64 = 0.9;
        let max_abs = rewards.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        let bound = max_abs * (1.0 - gamma.powi(rewards.len() as i32)) / (1.0 - gamma);
        assert!(discounted_return(&traj, gamma).abs() <= bound + 1e-12);
    }

    #[test]
    fn discounted_cost_examples() {
        let traj = traj_with(&[0.0; 3], &[0.0, 1.0, 1.0]);
        assert_eq!(discounted_cost(&traj, 0, 1.0), Ok(2.0));

        let zeros = traj_with(&[0.0; 3], &[0.0; 3]);
        assert_eq!(discounted_cost(&zeros, 0, 0.5), Ok(0.0));

        let alt = traj_with(&[0.0; 3], &[1.0, 0.0, 1.0]);
        let value = discounted_cost(&alt, 0, 0.99).unwrap();
        assert!((value - 1.9801).abs() < 1e-12);
    }

    #[test]
    fn discounted_cost_unknown_constraint() {
        let traj = traj_with(&[0.0; 2], &[0.0; 2]);
        assert_eq!(
            discounted_cost(&traj, 3, 0.99),
            Err(UnknownConstraint {
                index: 3,
                available: 1
            })
        );
    }

    #[test]
    fn resolve_rule_examples() {
        let mut registry = RuleRegistry::new();
        let handle = registry.resolve("Do not enter room (2, 2)").unwrap();
        assert_eq!(handle.cost(GridState::at(2, 1), Action::North), 1.0);
        assert_eq!(handle.cost(GridState::at(0, 0), Action::North), 0.0);
        assert!(matches!(
            registry.resolve("Avoid all danger"),
            Err(RuleError::UnmatchedPattern { .. })
        ));
    }

    #[test]
    fn resolve_rule_is_idempotent() {
        let mut registry = RuleRegistry::new();
        let first = registry.resolve("Do not enter room (1, 3)").unwrap();
        let second = registry.resolve("Do not enter room (1, 3)").unwrap();
        assert_eq!(first, second);
        assert_eq!(registry.len(), 1);

        let other = registry.resolve("Do not enter room (3, 1)").unwrap();
        assert_eq!(other.constraint_index, 1);
        assert_eq!(registry.get(1), Some(other));
    }

    #[test]
    fn resolve_rule_rejects_out_of_range_cell() {
        let mut registry = RuleRegistry::new();
        assert!(matches!(
            registry.resolve("Do not enter room (9, 9)"),
            Err(RuleError::CellOutOfRange { .. })
        ));
    }

    #[test]
    fn rule_round_trip_flags_exactly_entries_into_cell() {
        let mut registry = RuleRegistry::new();
        for cell in GridState::all() {
            if cell == START || cell == GOAL {
                continue;
            }
            let handle = registry.resolve(&forbidden_cell_rule(cell)).unwrap();
            for s in GridState::all() {
                for a in Action::ALL {
                    let expected = if env::step(s, a) == cell { 1.0 } else { 0.0 };
                    assert_eq!(handle.cost(s, a), expected, "cell {cell} from {s} {a}");
                }
            }
        }
    }

    #[test]
    fn cmdp_validation() {
        let domains = vec![(DomainTag::pre_shift(), 0.5), (DomainTag::post_shift(), 0.5)];
        let cmdp = Cmdp::new(0.99, vec![0.1], domains.clone()).unwrap();
        assert_eq!(cmdp.states().len(), 25);
        assert_eq!(cmdp.actions(), Action::ALL);

        assert_eq!(
            Cmdp::new(1.5, vec![0.1], domains.clone()),
            Err(CmdpError::GammaOutOfRange(1.5))
        );
        assert_eq!(
            Cmdp::new(0.99, vec![-0.1], domains.clone()),
            Err(CmdpError::NegativeThreshold(-0.1))
        );
        assert_eq!(
            Cmdp::new(0.99, vec![0.1], vec![(DomainTag::pre_shift(), 0.7)]),
            Err(CmdpError::WeightsNotNormalized(0.7))
        );
        assert_eq!(Cmdp::new(0.99, vec![0.1], vec![]), Err(CmdpError::NoDomains));
    }

    #[test]
    fn trajectory_validation_catches_breaches() {
        let mut traj = traj_with(&[0.0, 0.0], &[0.0, 0.0]);
        traj.validate(1).unwrap();

        let mut broken = traj.clone();
        broken.steps[1].next_state = GridState::at(0, 4);
        assert!(matches!(
            broken.validate(1),
            Err(TrajectoryError::TransitionMismatch { step: 1, .. })
        ));

        let mut wide = traj.clone();
        wide.steps[0].costs.push(0.0);
        assert!(matches!(
            wide.validate(1),
            Err(TrajectoryError::CostWidthMismatch { step: 0, .. })
        ));

        traj.steps[0].costs[0] = 0.5;
        assert!(matches!(
            traj.validate(1),
            Err(TrajectoryError::NonIndicatorCost { step: 0, .. })
        ));
    }
}
