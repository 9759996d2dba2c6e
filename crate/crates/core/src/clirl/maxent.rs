//! Maximum-causal-entropy likelihoods over finite deterministic MDPs: the
//! soft log-partition dynamic program, the joint reward/constraint objective
//! over positive and negative demonstrations, and its analytic gradient.
//!
//! A trajectory of length L from state s0 has likelihood
//! `P(tau) = exp(sum_t gamma^t r(s_t, a_t)) / Z(L, s0)` where Z sums the same
//! exponentiated discounted reward over every length-L action sequence from
//! s0. The dynamic program computes log Z exactly by carrying the absolute
//! time index: backups at depth t scale the reward by gamma^t, so the flat
//! sum over trajectories factorizes step by step.

use std::collections::BTreeMap;

use super::{sigmoid, ClirlError, ConstraintTable, RewardWeights};
use crate::demos::DemoSet;
use crate::env::{self, Action, GridState, START};

/// A finite MDP with deterministic transitions, states and actions as indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    next: Vec<usize>,
}

impl TabularMdp {
    /// `next[s * n_actions + a]` is the successor of taking `a` in `s`.
    pub fn new(n_states: usize, n_actions: usize, next: Vec<usize>) -> Self {
        assert_eq!(next.len(), n_states * n_actions, "transition table size mismatch");
        assert!(next.iter().all(|&s| s < n_states), "transition target out of range");
        Self {
            n_states,
            n_actions,
            next,
        }
    }

    /// The 25-state, 4-action grid with clamped moves.
    pub fn from_grid() -> Self {
        let mut next = Vec::with_capacity(100);
        for s in GridState::all() {
            for a in Action::ALL {
                next.push(env::step(s, a).index());
            }
        }
        Self::new(25, 4, next)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn next_state(&self, s: usize, a: usize) -> usize {
        self.next[s * self.n_actions + a]
    }
}

/// Hyperparameters of the full objective.
#[derive(Debug, Clone, PartialEq)]
pub struct ClirlHyper {
    /// Strength of the quadratic constraint-expectation penalty.
    pub lambda: f64,
    /// Per-constraint weight of the cost term inside the negative likelihood.
    pub alphas: Vec<f64>,
    /// Per-constraint cumulative cost thresholds.
    pub thresholds: Vec<f64>,
    pub gamma: f64,
    /// Maximum trajectory length covered by the likelihood model.
    pub horizon: usize,
}

impl ClirlHyper {
    pub fn new(
        lambda: f64,
        alphas: Vec<f64>,
        thresholds: Vec<f64>,
        gamma: f64,
        horizon: usize,
    ) -> Result<Self, ClirlError> {
        let nonneg = |field: &'static str, value: f64| {
            if value < 0.0 {
                Err(ClirlError::BadHyper {
                    field,
                    value,
                    reason: "must be nonnegative",
                })
            } else {
                Ok(())
            }
        };
        nonneg("lambda", lambda)?;
        for &a in &alphas {
            nonneg("alpha", a)?;
        }
        for &h in &thresholds {
            nonneg("threshold", h)?;
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(ClirlError::BadHyper {
                field: "gamma",
                value: gamma,
                reason: "must lie in [0, 1]",
            });
        }
        if horizon == 0 {
            return Err(ClirlError::BadHyper {
                field: "horizon",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        Ok(Self {
            lambda,
            alphas,
            thresholds,
            gamma,
            horizon,
        })
    }

    /// Defaults for the grid experiment: lambda 1, alphas 1, thresholds 0.1,
    /// gamma 0.99, horizon 50.
    pub fn grid_defaults(n_constraints: usize) -> Self {
        Self {
            lambda: 1.0,
            alphas: vec![1.0; n_constraints],
            thresholds: vec![0.1; n_constraints],
            gamma: 0.99,
            horizon: 50,
        }
    }

    fn check_width(&self, n_constraints: usize) -> Result<(), ClirlError> {
        if self.alphas.len() != n_constraints {
            return Err(ClirlError::HyperWidthMismatch {
                field: "alphas",
                expected: n_constraints,
                actual: self.alphas.len(),
            });
        }
        if self.thresholds.len() != n_constraints {
            return Err(ClirlError::HyperWidthMismatch {
                field: "thresholds",
                expected: n_constraints,
                actual: self.thresholds.len(),
            });
        }
        Ok(())
    }
}

/// Result of the soft backup pass: per-time per-state log-partitions and the
/// induced time-indexed soft policy.
#[derive(Debug, Clone)]
pub struct SoftDp {
    pub gamma: f64,
    pub horizon: usize,
    n_states: usize,
    n_actions: usize,
    // values[t * n_states + s] = log-partition over (horizon - t)-step
    // continuations from s, rewards at depth u scaled by gamma^u.
    values: Vec<f64>,
    // policy[(t * n_states + s) * n_actions + a] = soft policy at time t.
    policy: Vec<f64>,
}

fn discount_scales(gamma: f64, horizon: usize) -> Vec<f64> {
    let mut scales = vec![1.0; horizon];
    for t in 1..horizon {
        scales[t] = scales[t - 1] * gamma;
    }
    scales
}

/// Computes the log-partition backups for trajectories of length `horizon`.
/// Log-sum-exp is evaluated with max-subtraction.
pub fn soft_log_partition(
    mdp: &TabularMdp,
    effective_reward: &[f64],
    gamma: f64,
    horizon: usize,
) -> SoftDp {
    assert!(horizon >= 1, "horizon must be at least 1");
    assert!((0.0..=1.0).contains(&gamma), "gamma must be in [0, 1]");
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    assert_eq!(effective_reward.len(), ns * na, "reward table size mismatch");
    let scales = discount_scales(gamma, horizon);
    let mut values = vec![0.0; (horizon + 1) * ns];
    let mut policy = vec![0.0; horizon * ns * na];
    let mut z = vec![0.0; na];
    for t in (0..horizon).rev() {
        for s in 0..ns {
            let mut z_max = f64::NEG_INFINITY;
            for a in 0..na {
                z[a] = scales[t] * effective_reward[s * na + a]
                    + values[(t + 1) * ns + mdp.next_state(s, a)];
                z_max = z_max.max(z[a]);
            }
            let sum: f64 = z.iter().map(|&v| (v - z_max).exp()).sum();
            let lse = z_max + sum.ln();
            values[t * ns + s] = lse;
            for a in 0..na {
                policy[(t * ns + s) * na + a] = (z[a] - lse).exp();
            }
        }
    }
    SoftDp {
        gamma,
        horizon,
        n_states: ns,
        n_actions: na,
        values,
        policy,
    }
}

impl SoftDp {
    /// log Z for full-horizon trajectories starting at `s`.
    pub fn log_partition(&self, s: usize) -> f64 {
        self.values[s]
    }

    pub fn value(&self, t: usize, s: usize) -> f64 {
        self.values[t * self.n_states + s]
    }

    pub fn policy_prob(&self, t: usize, s: usize, a: usize) -> f64 {
        self.policy[(t * self.n_states + s) * self.n_actions + a]
    }

    /// State occupancies rho[t * n_states + s] for t = 0..horizon under the
    /// soft policy from `start`.
    pub fn occupancies(&self, mdp: &TabularMdp, start: usize) -> Vec<f64> {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut rho = vec![0.0; self.horizon * ns];
        rho[start] = 1.0;
        for t in 0..self.horizon - 1 {
            for s in 0..ns {
                let mass = rho[t * ns + s];
                if mass == 0.0 {
                    continue;
                }
                for a in 0..na {
                    rho[(t + 1) * ns + mdp.next_state(s, a)] +=
                        mass * self.policy[(t * ns + s) * na + a];
                }
            }
        }
        rho
    }

    /// Discounted expected visitation `D(s, a) = sum_t gamma^t rho_t(s) pi_t(a | s)`.
    pub fn expected_visitation(&self, mdp: &TabularMdp, start: usize) -> Vec<f64> {
        let rho = self.occupancies(mdp, start);
        self.visitation_from(&rho)
    }

    fn visitation_from(&self, rho: &[f64]) -> Vec<f64> {
        let (ns, na) = (self.n_states, self.n_actions);
        let scales = discount_scales(self.gamma, self.horizon);
        let mut d = vec![0.0; ns * na];
        for t in 0..self.horizon {
            for s in 0..ns {
                let mass = scales[t] * rho[t * ns + s];
                if mass == 0.0 {
                    continue;
                }
                for a in 0..na {
                    d[s * na + a] += mass * self.policy[(t * ns + s) * na + a];
                }
            }
        }
        d
    }
}

/// A demonstration over MDP indices.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedDemo {
    pub steps: Vec<(usize, usize)>,
    pub positive: bool,
}

/// Adapts a gridworld corpus to index form.
pub fn index_demos(set: &DemoSet) -> Vec<IndexedDemo> {
    let convert = |traj: &crate::cmdp::Trajectory, positive: bool| IndexedDemo {
        steps: traj
            .steps
            .iter()
            .map(|s| (s.state.index(), s.action.index()))
            .collect(),
        positive,
    };
    set.positives
        .iter()
        .map(|t| convert(t, true))
        .chain(set.negatives.iter().map(|t| convert(t, false)))
        .collect()
}

/// Gradient of the objective with respect to every reward weight and every
/// constraint logit.
#[derive(Debug, Clone, PartialEq)]
pub struct ClirlGrad {
    pub reward: Vec<f64>,
    pub logits: Vec<Vec<f64>>,
}

struct Prepared {
    reward_pos: Vec<f64>,
    reward_neg: Vec<f64>,
    cost_probs: Vec<Vec<f64>>,
}

fn prepare(
    mdp: &TabularMdp,
    rw: &RewardWeights,
    ct: &ConstraintTable,
    hyper: &ClirlHyper,
    demos: &[IndexedDemo],
) -> Result<Prepared, ClirlError> {
    if demos.is_empty() {
        return Err(ClirlError::EmptyDemos);
    }
    hyper.check_width(ct.n_constraints())?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    assert_eq!((rw.n_states(), rw.n_actions()), (ns, na), "reward table shape mismatch");
    assert_eq!((ct.n_states(), ct.n_actions()), (ns, na), "constraint table shape mismatch");
    for (i, demo) in demos.iter().enumerate() {
        if demo.steps.len() > hyper.horizon {
            return Err(ClirlError::HorizonTooShort {
                demo: i,
                len: demo.steps.len(),
                horizon: hyper.horizon,
            });
        }
        for &(s, a) in &demo.steps {
            assert!(s < ns && a < na, "demo {i} indexes outside the MDP");
        }
    }
    let reward_pos = rw.params().to_vec();
    let cost_probs: Vec<Vec<f64>> = (0..ct.n_constraints())
        .map(|k| {
            (0..ns * na)
                .map(|i| sigmoid(ct.params()[k * ns * na + i]))
                .collect()
        })
        .collect();
    let mut reward_neg = reward_pos.clone();
    for (k, probs) in cost_probs.iter().enumerate() {
        let alpha = hyper.alphas[k];
        for (r, &c) in reward_neg.iter_mut().zip(probs) {
            *r -= alpha * c;
        }
    }
    Ok(Prepared {
        reward_pos,
        reward_neg,
        cost_probs,
    })
}

fn empirical_sum(demo: &IndexedDemo, reward: &[f64], na: usize, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut scale = 1.0;
    for &(s, a) in &demo.steps {
        total += scale * reward[s * na + a];
        scale *= gamma;
    }
    total
}

/// Penalty expectations `E_k = E_pi[sum_t gamma^t C_k]` under the soft policy
/// of the penalized reward, via the discounted visitation.
fn penalty_expectations(d: &[f64], cost_probs: &[Vec<f64>]) -> Vec<f64> {
    cost_probs
        .iter()
        .map(|c| c.iter().zip(d).map(|(&ck, &dv)| ck * dv).sum())
        .collect()
}

/// The joint objective: positive log-likelihoods under the learned reward,
/// minus negative log-likelihoods under the cost-penalized reward, minus the
/// quadratic penalty on constraint expectations.
pub fn clirl_objective(
    mdp: &TabularMdp,
    rw: &RewardWeights,
    ct: &ConstraintTable,
    demos: &[IndexedDemo],
    hyper: &ClirlHyper,
    start: usize,
) -> Result<f64, ClirlError> {
    let prep = prepare(mdp, rw, ct, hyper, demos)?;
    let na = mdp.n_actions;
    let mut pos_cache: BTreeMap<usize, SoftDp> = BTreeMap::new();
    let mut neg_cache: BTreeMap<usize, SoftDp> = BTreeMap::new();
    let mut objective = 0.0;
    for demo in demos {
        if demo.steps.is_empty() {
            continue;
        }
        let len = demo.steps.len();
        let s0 = demo.steps[0].0;
        let (reward, cache) = if demo.positive {
            (&prep.reward_pos, &mut pos_cache)
        } else {
            (&prep.reward_neg, &mut neg_cache)
        };
        let dp = cache
            .entry(len)
            .or_insert_with(|| soft_log_partition(mdp, reward, hyper.gamma, len));
        let log_p = empirical_sum(demo, reward, na, hyper.gamma) - dp.log_partition(s0);
        objective += if demo.positive { log_p } else { -log_p };
    }
    if hyper.lambda > 0.0 {
        let dp = soft_log_partition(mdp, &prep.reward_neg, hyper.gamma, hyper.horizon);
        let d = dp.expected_visitation(mdp, start);
        for (k, e_k) in penalty_expectations(&d, &prep.cost_probs).iter().enumerate() {
            let residual = e_k - hyper.thresholds[k];
            objective -= hyper.lambda * residual * residual;
        }
    }
    Ok(objective)
}

/// Reverse-mode pass through the penalty term. Given the soft DP of the
/// penalized reward, its occupancies, the discounted visitation `d`, and the
/// adjoints `weights[k] = dP/dE_k`, returns the adjoints of the penalized
/// reward table and the direct adjoints of each cost table.
fn penalty_backward(
    mdp: &TabularMdp,
    dp: &SoftDp,
    rho: &[f64],
    d: &[f64],
    cost_probs: &[Vec<f64>],
    weights: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let (ns, na) = (dp.n_states, dp.n_actions);
    let h = dp.horizon;
    let scales = discount_scales(dp.gamma, h);

    // E_k = sum_{s,a} d(s,a) C_k(s,a), so the direct cost adjoint is w_k * d.
    let c_bar: Vec<Vec<f64>> = weights
        .iter()
        .map(|&w| d.iter().map(|&v| w * v).collect())
        .collect();

    // Combined weighted cost, the coefficient shared by the rho and pi adjoints.
    let mut weighted_cost = vec![0.0; ns * na];
    for (k, probs) in cost_probs.iter().enumerate() {
        for (wc, &c) in weighted_cost.iter_mut().zip(probs) {
            *wc += weights[k] * c;
        }
    }

    // Backward sweep over the occupancy recursion: accumulates pi adjoints and
    // propagates rho adjoints from t+1 to t.
    let mut pi_bar = vec![0.0; h * ns * na];
    let mut rho_bar_next = vec![0.0; ns];
    for t in (0..h).rev() {
        let mut rho_bar_t = vec![0.0; ns];
        for s in 0..ns {
            let mass = rho[t * ns + s];
            let mut acc = 0.0;
            for a in 0..na {
                let coupling =
                    scales[t] * weighted_cost[s * na + a] + rho_bar_next[mdp.next_state(s, a)];
                let pi = dp.policy[(t * ns + s) * na + a];
                acc += pi * coupling;
                pi_bar[(t * ns + s) * na + a] = mass * coupling;
            }
            rho_bar_t[s] = acc;
        }
        rho_bar_next = rho_bar_t;
    }

    // Forward sweep over the value recursion: the softmax Jacobian turns pi
    // adjoints into logit adjoints, which split between the reward table and
    // the next level's value adjoints.
    let mut f_bar = vec![0.0; ns * na];
    let mut v_bar = vec![0.0; ns];
    for t in 0..h {
        let mut v_bar_next = vec![0.0; ns];
        for s in 0..ns {
            let base = (t * ns + s) * na;
            let mut sdot = 0.0;
            for a in 0..na {
                sdot += pi_bar[base + a] * dp.policy[base + a];
            }
            for a in 0..na {
                let pi = dp.policy[base + a];
                let z_bar = pi * (pi_bar[base + a] - sdot) + v_bar[s] * pi;
                f_bar[s * na + a] += z_bar * scales[t];
                v_bar_next[mdp.next_state(s, a)] += z_bar;
            }
        }
        v_bar = v_bar_next;
    }
    (f_bar, c_bar)
}

/// Analytic gradient of [`clirl_objective`].
pub fn clirl_gradient(
    mdp: &TabularMdp,
    rw: &RewardWeights,
    ct: &ConstraintTable,
    demos: &[IndexedDemo],
    hyper: &ClirlHyper,
    start: usize,
) -> Result<ClirlGrad, ClirlError> {
    let prep = prepare(mdp, rw, ct, hyper, demos)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let n_constraints = ct.n_constraints();
    let scales = discount_scales(hyper.gamma, hyper.horizon.max(1));

    let mut grad_reward = vec![0.0; ns * na];
    // dObjective/dF for the negative-likelihood part, F = R - sum_k alpha_k C_k.
    let mut neg_f = vec![0.0; ns * na];

    // Empirical discounted visit counts, and demo groups by (length, start).
    let mut pos_groups: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut neg_groups: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for demo in demos {
        if demo.steps.is_empty() {
            continue;
        }
        let key = (demo.steps.len(), demo.steps[0].0);
        let sink = if demo.positive {
            &mut grad_reward
        } else {
            &mut neg_f
        };
        for (t, &(s, a)) in demo.steps.iter().enumerate() {
            let signed = if demo.positive { scales[t] } else { -scales[t] };
            sink[s * na + a] += signed;
        }
        *if demo.positive {
            pos_groups.entry(key).or_default()
        } else {
            neg_groups.entry(key).or_default()
        } += 1;
    }

    // Expected visitation subtracts per group; caches keyed by length.
    let mut pos_cache: BTreeMap<usize, SoftDp> = BTreeMap::new();
    let mut neg_cache: BTreeMap<usize, SoftDp> = BTreeMap::new();
    for (&(len, s0), &count) in &pos_groups {
        let dp = pos_cache
            .entry(len)
            .or_insert_with(|| soft_log_partition(mdp, &prep.reward_pos, hyper.gamma, len));
        let d = dp.expected_visitation(mdp, s0);
        for (g, &dv) in grad_reward.iter_mut().zip(&d) {
            *g -= count as f64 * dv;
        }
    }
    for (&(len, s0), &count) in &neg_groups {
        let dp = neg_cache
            .entry(len)
            .or_insert_with(|| soft_log_partition(mdp, &prep.reward_neg, hyper.gamma, len));
        let d = dp.expected_visitation(mdp, s0);
        for (g, &dv) in neg_f.iter_mut().zip(&d) {
            *g += count as f64 * dv;
        }
    }

    // Penalty adjoints.
    let mut pen_f = vec![0.0; ns * na];
    let mut pen_c: Vec<Vec<f64>> = vec![vec![0.0; ns * na]; n_constraints];
    if hyper.lambda > 0.0 {
        let dp = soft_log_partition(mdp, &prep.reward_neg, hyper.gamma, hyper.horizon);
        let rho = dp.occupancies(mdp, start);
        let d = dp.visitation_from(&rho);
        let expectations = penalty_expectations(&d, &prep.cost_probs);
        let weights: Vec<f64> = expectations
            .iter()
            .zip(&hyper.thresholds)
            .map(|(e, h)| 2.0 * hyper.lambda * (e - h))
            .collect();
        let (f_bar, c_bar) = penalty_backward(mdp, &dp, &rho, &d, &prep.cost_probs, &weights);
        pen_f = f_bar;
        pen_c = c_bar;
    }

    // Assemble: reward feels the positive part, the negative part through F,
    // and the penalty through F; logits feel F scaled by -alpha_k plus the
    // penalty's direct cost adjoint, all through the sigmoid derivative.
    let mut grad_logits = vec![vec![0.0; ns * na]; n_constraints];
    for i in 0..ns * na {
        grad_reward[i] += neg_f[i] - pen_f[i];
        for k in 0..n_constraints {
            let fprime = prep.cost_probs[k][i] * (1.0 - prep.cost_probs[k][i]);
            grad_logits[k][i] =
                fprime * (-hyper.alphas[k] * neg_f[i] - pen_c[k][i] + hyper.alphas[k] * pen_f[i]);
        }
    }
    Ok(ClirlGrad {
        reward: grad_reward,
        logits: grad_logits,
    })
}

/// [`clirl_objective`] over a gridworld corpus, normalizing from the start cell.
pub fn clirl_objective_grid(
    rw: &RewardWeights,
    ct: &ConstraintTable,
    set: &DemoSet,
    hyper: &ClirlHyper,
) -> Result<f64, ClirlError> {
    clirl_objective(
        &TabularMdp::from_grid(),
        rw,
        ct,
        &index_demos(set),
        hyper,
        START.index(),
    )
}

/// [`clirl_gradient`] over a gridworld corpus.
pub fn clirl_gradient_grid(
    rw: &RewardWeights,
    ct: &ConstraintTable,
    set: &DemoSet,
    hyper: &ClirlHyper,
) -> Result<ClirlGrad, ClirlError> {
    clirl_gradient(
        &TabularMdp::from_grid(),
        rw,
        ct,
        &index_demos(set),
        hyper,
        START.index(),
    )
}
