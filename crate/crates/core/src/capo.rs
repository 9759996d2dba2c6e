//! Constraint-aware policy optimization: softmax policy over tabular
//! preferences, rollouts, constraint-penalized advantages, policy-gradient
//! updates, dynamic Lagrange multipliers, and the shared Adam update rule.

use rand::Rng;

use crate::clirl::{ConstraintTable, RewardWeights};
use crate::cmdp::{Trajectory, TrajectoryStep};
use crate::env::{self, Action, DomainTag, GridState, GOAL, START};

/// Tabular action preferences; the policy is the per-state softmax of a row.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    n_states: usize,
    n_actions: usize,
    q: Vec<f64>,
}

impl PolicyTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            q: vec![0.0; n_states * n_actions],
        }
    }

    /// A 25x4 table over the grid.
    pub fn for_grid() -> Self {
        Self::zeros(25, Action::COUNT)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn idx(&self, s: usize, a: usize) -> usize {
        debug_assert!(s < self.n_states && a < self.n_actions);
        s * self.n_actions + a
    }

    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[self.idx(s, a)]
    }

    pub fn set_q(&mut self, s: usize, a: usize, value: f64) {
        let i = self.idx(s, a);
        self.q[i] = value;
    }

    pub fn params(&self) -> &[f64] {
        &self.q
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.q
    }

    /// Softmax of the state's preference row, computed with max-subtraction.
    pub fn probs(&self, s: usize) -> Vec<f64> {
        let row = &self.q[s * self.n_actions..(s + 1) * self.n_actions];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut probs: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        probs
    }

    /// log pi(a | s), stable for large preference values.
    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        let row = &self.q[s * self.n_actions..(s + 1) * self.n_actions];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let log_norm = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
        row[a] - log_norm
    }

    /// Samples an action index by inverse CDF over [`PolicyTable::probs`].
    pub fn sample(&self, s: usize, rng: &mut impl Rng) -> usize {
        let probs = self.probs(s);
        let u: f64 = rng.random();
        let mut cumulative = 0.0;
        for (a, p) in probs.iter().enumerate() {
            cumulative += p;
            if u < cumulative {
                return a;
            }
        }
        self.n_actions - 1
    }
}

/// Dynamic Lagrange multipliers with their dual step size.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub betas: Vec<f64>,
    pub eta: f64,
}

impl Multipliers {
    pub fn new(n_constraints: usize, eta: f64) -> Self {
        Self {
            betas: vec![0.0; n_constraints],
            eta,
        }
    }

    /// Projected dual ascent: `beta_k <- max(0, beta_k + eta * (cost_k - threshold_k))`.
    pub fn update(&mut self, cost_estimates: &[f64], thresholds: &[f64]) {
        assert_eq!(cost_estimates.len(), self.betas.len(), "cost estimates misaligned");
        assert_eq!(thresholds.len(), self.betas.len(), "thresholds misaligned");
        for (k, beta) in self.betas.iter_mut().enumerate() {
            *beta = (*beta + self.eta * (cost_estimates[k] - thresholds[k])).max(0.0);
        }
    }
}

/// Adam with bias correction; beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One descent step. `params` and `grads` must match the state's length.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len(), "params/grads misaligned");
        assert_eq!(params.len(), self.m.len(), "optimizer state misaligned");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }

    /// One ascent step (negates the gradients).
    pub fn ascend(&mut self, params: &mut [f64], grads: &[f64]) {
        let negated: Vec<f64> = grads.iter().map(|g| -g).collect();
        self.step(params, &negated);
    }
}

/// Samples one episode: actions drawn from the softmax policy, transitions from
/// the environment, rewards from goal entry, and a single 0/1 cost indicator
/// per step recording danger-cell entry under `domain`. Ends at the goal or
/// after `max_steps` steps.
pub fn rollout(
    policy: &PolicyTable,
    domain: &DomainTag,
    max_steps: usize,
    rng: &mut impl Rng,
) -> Trajectory {
    let mut traj = Trajectory::new(domain.clone());
    let mut s = START;
    for _ in 0..max_steps {
        let a = Action::from_index(policy.sample(s.index(), rng)).unwrap();
        let next = env::step(s, a);
        let cost = if domain.is_danger(next) { 1.0 } else { 0.0 };
        traj.steps.push(TrajectoryStep {
            state: s,
            action: a,
            next_state: next,
            reward: env::reward(s, a, next),
            costs: vec![cost],
        });
        s = next;
        if s == GOAL {
            traj.terminated_at_goal = true;
            break;
        }
    }
    traj
}

/// Per-step penalized return-to-go:
/// `G_t = sum_{u >= t} gamma^(u-t) * (r_u - sum_k beta_k * C_k(s_u, a_u))`
/// where `C_k` is the learned violation probability. With all-zero betas the
/// table is not consulted.
pub fn penalized_returns(
    batch: &[Trajectory],
    ct: &ConstraintTable,
    gamma: f64,
    betas: &[f64],
) -> Vec<Vec<f64>> {
    let penalize = betas.iter().any(|&b| b != 0.0);
    batch
        .iter()
        .map(|traj| {
            let mut returns = vec![0.0; traj.len()];
            let mut rtg = 0.0;
            for (t, step) in traj.steps.iter().enumerate().rev() {
                let mut value = step.reward;
                if penalize {
                    for (k, &beta) in betas.iter().enumerate() {
                        value -= beta * ct.prob(k, step.state.index(), step.action.index());
                    }
                }
                rtg = value + gamma * rtg;
                returns[t] = rtg;
            }
            returns
        })
        .collect()
}

/// Batch-normalizes per-step values: `(g - mean) / (std + 1e-8)` with the
/// population standard deviation over every step in the batch.
pub fn normalize_advantages(mut returns: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let count: usize = returns.iter().map(Vec::len).sum();
    if count == 0 {
        return returns;
    }
    let mean = returns.iter().flatten().sum::<f64>() / count as f64;
    let variance = returns
        .iter()
        .flatten()
        .map(|g| (g - mean) * (g - mean))
        .sum::<f64>()
        / count as f64;
    let denom = variance.sqrt() + 1e-8;
    for g in returns.iter_mut().flatten() {
        *g = (*g - mean) / denom;
    }
    returns
}

/// Normalized constraint-penalized advantages for a rollout batch.
pub fn penalized_advantages(
    batch: &[Trajectory],
    ct: &ConstraintTable,
    gamma: f64,
    betas: &[f64],
) -> Vec<Vec<f64>> {
    assert!(!batch.is_empty(), "advantage batch is empty");
    normalize_advantages(penalized_returns(batch, ct, gamma, betas))
}

fn accumulate_score(
    policy: &PolicyTable,
    grads: &mut [f64],
    s: usize,
    a: usize,
    weight: f64,
) {
    let probs = policy.probs(s);
    for (b, &p) in probs.iter().enumerate() {
        let indicator = if b == a { 1.0 } else { 0.0 };
        grads[s * policy.n_actions + b] += weight * (indicator - p);
    }
}

/// One Adam ascent step on `sum_steps advantage * grad log pi(a | s)`.
pub fn policy_update(
    policy: &mut PolicyTable,
    batch: &[Trajectory],
    advantages: &[Vec<f64>],
    adam: &mut AdamState,
) {
    assert_eq!(batch.len(), advantages.len(), "advantages misaligned with batch");
    let mut grads = vec![0.0; policy.params().len()];
    for (traj, advs) in batch.iter().zip(advantages) {
        assert_eq!(traj.len(), advs.len(), "advantages misaligned with steps");
        for (step, &adv) in traj.steps.iter().zip(advs) {
            accumulate_score(policy, &mut grads, step.state.index(), step.action.index(), adv);
        }
    }
    adam.ascend(policy.params_mut(), &grads);
}

/// Snapshot of `log pi(a_t | s_t)` for every step, taken before clipped updates.
pub fn log_probs_of(policy: &PolicyTable, batch: &[Trajectory]) -> Vec<Vec<f64>> {
    batch
        .iter()
        .map(|traj| {
            traj.steps
                .iter()
                .map(|step| policy.log_prob(step.state.index(), step.action.index()))
                .collect()
        })
        .collect()
}

/// One Adam ascent step on the PPO clipped surrogate
/// `sum_steps min(r_t * A_t, clip(r_t, 1 - eps, 1 + eps) * A_t)` with
/// `r_t = pi(a|s) / pi_old(a|s)`. Steps where the clip is active contribute no
/// gradient.
pub fn policy_update_clipped(
    policy: &mut PolicyTable,
    batch: &[Trajectory],
    advantages: &[Vec<f64>],
    old_log_probs: &[Vec<f64>],
    clip_epsilon: f64,
    adam: &mut AdamState,
) {
    assert_eq!(batch.len(), advantages.len(), "advantages misaligned with batch");
    assert_eq!(batch.len(), old_log_probs.len(), "old log-probs misaligned with batch");
    let mut grads = vec![0.0; policy.params().len()];
    for ((traj, advs), olds) in batch.iter().zip(advantages).zip(old_log_probs) {
        assert_eq!(traj.len(), advs.len(), "advantages misaligned with steps");
        assert_eq!(traj.len(), olds.len(), "old log-probs misaligned with steps");
        for ((step, &adv), &old) in traj.steps.iter().zip(advs).zip(olds) {
            let s = step.state.index();
            let a = step.action.index();
            let ratio = (policy.log_prob(s, a) - old).exp();
            let clipped_out = (adv >= 0.0 && ratio > 1.0 + clip_epsilon)
                || (adv <= 0.0 && ratio < 1.0 - clip_epsilon);
            if !clipped_out {
                accumulate_score(policy, &mut grads, s, a, ratio * adv);
            }
        }
    }
    adam.ascend(policy.params_mut(), &grads);
}

/// Reward stream used by the policy objective estimate.
#[derive(Clone, Copy)]
pub enum RewardSource<'a> {
    /// The rewards recorded in the trajectories.
    Recorded,
    /// A learned reward table evaluated at each visited pair.
    Learned(&'a RewardWeights),
}

/// Batch estimate of the constraint-aware objective:
/// mean discounted reward minus `sum_k beta_k` times the mean discounted
/// learned violation probability.
pub fn j_capo(
    batch: &[Trajectory],
    reward: RewardSource<'_>,
    ct: &ConstraintTable,
    multipliers: &Multipliers,
    gamma: f64,
) -> f64 {
    assert!(!batch.is_empty(), "objective batch is empty");
    let mut total = 0.0;
    for traj in batch {
        let mut scale = 1.0;
        for step in &traj.steps {
            let r = match reward {
                RewardSource::Recorded => step.reward,
                RewardSource::Learned(rw) => rw.weight(step.state.index(), step.action.index()),
            };
            let mut value = r;
            for (k, &beta) in multipliers.betas.iter().enumerate() {
                value -= beta * ct.prob(k, step.state.index(), step.action.index());
            }
            total += scale * value;
            scale *= gamma;
        }
    }
    total / batch.len() as f64
}

/// Mean discounted learned-constraint cost of the batch for constraint `k`,
/// the residual driving the dual ascent.
pub fn mean_constraint_estimate(
    batch: &[Trajectory],
    ct: &ConstraintTable,
    k: usize,
    gamma: f64,
) -> f64 {
    assert!(!batch.is_empty(), "estimate batch is empty");
    let total: f64 = batch
        .iter()
        .map(|traj| {
            let mut scale = 1.0;
            let mut sum = 0.0;
            for step in &traj.steps {
                sum += scale * ct.prob(k, step.state.index(), step.action.index());
                scale *= gamma;
            }
            sum
        })
        .sum();
    total / batch.len() as f64
}

/// A near-deterministic policy that follows `path` (a list of consecutive
/// cells); all other states keep uniform preferences.
pub fn path_policy(path: &[GridState]) -> PolicyTable {
    let mut policy = PolicyTable::for_grid();
    for window in path.windows(2) {
        let action = Action::ALL
            .into_iter()
            .find(|&a| env::step(window[0], a) == window[1])
            .expect("path cells must be adjacent");
        policy.set_q(window[0].index(), action.index(), 50.0);
    }
    policy
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_examples() {
        let mut pt = PolicyTable::for_grid();
        let probs = pt.probs(0);
        assert_eq!(probs, vec![0.25; 4]);

        pt.set_q(0, 0, 1.0);
        let probs = pt.probs(0);
        assert!((probs[0] - 0.4753668864186717).abs() < 1e-10);
        for &p in &probs[1..] {
            assert!((p - 0.17487770452710946).abs() < 1e-10);
        }
    }

    #[test]
    fn softmax_shift_invariance_is_exact() {
        let mut base = PolicyTable::zeros(1, 4);
        let mut shifted = PolicyTable::zeros(1, 4);
        for (a, &q) in [1.0, 0.0, 0.0, 0.0].iter().enumerate() {
            base.set_q(0, a, q);
            shifted.set_q(0, a, q + 4.0);
        }
        // Dyadic inputs make the subtraction exact, so the vectors match bitwise.
        assert_eq!(base.probs(0), shifted.probs(0));
    }

    #[test]
    fn softmax_sums_to_one_and_stays_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pt = PolicyTable::for_grid();
        for i in 0..pt.params().len() {
            pt.params_mut()[i] = rng.random_range(-30.0..30.0);
        }
        for s in 0..25 {
            let probs = pt.probs(s);
            let total: f64 = probs.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(probs.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn log_prob_matches_probs() {
        let mut pt = PolicyTable::zeros(2, 4);
        pt.set_q(1, 2, 3.5);
        pt.set_q(1, 0, -1.0);
        for a in 0..4 {
            assert!((pt.log_prob(1, a).exp() - pt.probs(1)[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn rollout_is_deterministic_per_seed() {
        let pt = PolicyTable::for_grid();
        let domain = DomainTag::pre_shift();
        let a = rollout(&pt, &domain, 50, &mut ChaCha8Rng::seed_from_u64(11));
        let b = rollout(&pt, &domain, 50, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        assert!(a.len() <= 50);
        a.validate(1).unwrap();
    }

    #[test]
    fn greedy_edge_path_rollout_reaches_goal_safely() {
        let path: Vec<GridState> = (0..=4)
            .map(|x| GridState::at(x, 0))
            .chain((1..=4).map(|y| GridState::at(4, y)))
            .collect();
        let pt = path_policy(&path);
        let traj = rollout(&pt, &DomainTag::pre_shift(), 50, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(traj.terminated_at_goal);
        assert_eq!(traj.len(), 8);
        assert_eq!(traj.total_cost(0), 0.0);
    }

    #[test]
    fn danger_looping_policy_accumulates_multiple_costs() {
        // Oscillates between (2,1) and (2,2): every north step enters the
        // danger cell, so one episode records several violations.
        let mut pt = PolicyTable::for_grid();
        pt.set_q(GridState::at(2, 1).index(), Action::North.index(), 50.0);
        pt.set_q(GridState::at(2, 2).index(), Action::South.index(), 50.0);
        pt.set_q(GridState::at(0, 0).index(), Action::East.index(), 50.0);
        pt.set_q(GridState::at(1, 0).index(), Action::East.index(), 50.0);
        pt.set_q(GridState::at(2, 0).index(), Action::North.index(), 50.0);
        let traj = rollout(&pt, &DomainTag::pre_shift(), 50, &mut ChaCha8Rng::seed_from_u64(5));
        assert!(traj.total_cost(0) > 1.0);
    }

    #[test]
    fn advantage_examples() {
        let ct = ConstraintTable::for_grid(1);

        // All rewards and costs zero: advantages all zero.
        let pt = PolicyTable::for_grid();
        let batch = vec![rollout(
            &pt,
            &DomainTag::pre_shift(),
            3,
            &mut ChaCha8Rng::seed_from_u64(2),
        )];
        let zeroed: Vec<Trajectory> = batch
            .iter()
            .map(|t| {
                let mut t = t.clone();
                for s in &mut t.steps {
                    s.reward = 0.0;
                    s.costs = vec![0.0];
                }
                t
            })
            .collect();
        let advs = penalized_advantages(&zeroed, &ct, 0.99, &[0.0]);
        assert!(advs.iter().flatten().all(|&a| a == 0.0));

        // Two steps with returns {+1, -1} normalize to {+1, -1}.
        let returns = normalize_advantages(vec![vec![1.0], vec![-1.0]]);
        assert!((returns[0][0] - 1.0).abs() < 1e-7);
        assert!((returns[1][0] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn beta_zero_reduces_to_reward_returns() {
        let mut ct = ConstraintTable::for_grid(1);
        for logit in ct.params_mut() {
            *logit = 3.0;
        }
        let pt = PolicyTable::for_grid();
        let traj = rollout(&pt, &DomainTag::pre_shift(), 10, &mut ChaCha8Rng::seed_from_u64(9));
        let batch = vec![traj];
        let with_beta_zero = penalized_returns(&batch, &ct, 0.99, &[0.0]);
        let mut rtg = 0.0;
        let mut expected = vec![0.0; batch[0].len()];
        for (t, step) in batch[0].steps.iter().enumerate().rev() {
            rtg = step.reward + 0.99 * rtg;
            expected[t] = rtg;
        }
        assert_eq!(with_beta_zero[0], expected);
    }

    #[test]
    fn policy_update_zero_advantages_is_identity() {
        let mut pt = PolicyTable::for_grid();
        pt.set_q(3, 1, 0.75);
        let before = pt.clone();
        let batch = vec![rollout(
            &pt,
            &DomainTag::pre_shift(),
            5,
            &mut ChaCha8Rng::seed_from_u64(1),
        )];
        let advs = vec![vec![0.0; batch[0].len()]];
        let mut adam = AdamState::new(pt.params().len(), 0.001);
        policy_update(&mut pt, &batch, &advs, &mut adam);
        assert_eq!(pt, before);
    }

    #[test]
    fn positive_advantage_raises_taken_action() {
        let mut pt = PolicyTable::for_grid();
        let domain = DomainTag::pre_shift();
        let traj = rollout(&pt, &domain, 1, &mut ChaCha8Rng::seed_from_u64(4));
        let s = traj.steps[0].state.index();
        let a = traj.steps[0].action.index();
        let mut adam = AdamState::new(pt.params().len(), 0.001);
        policy_update(&mut pt, &[traj], &[vec![1.0]], &mut adam);
        assert!(pt.q(s, a) > 0.0);
        for b in 0..4 {
            if b != a {
                assert!(pt.q(s, b) < 0.0);
            }
        }
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let mut pt = PolicyTable::zeros(3, 4);
            for i in 0..pt.params().len() {
                pt.params_mut()[i] = rng.random_range(-2.0..2.0);
            }
            let s = rng.random_range(0..3);
            let a = rng.random_range(0..4);
            let probs = pt.probs(s);
            for b in 0..4 {
                let analytic = if b == a { 1.0 - probs[b] } else { -probs[b] };
                let h = 1e-6;
                let mut plus = pt.clone();
                plus.set_q(s, b, pt.q(s, b) + h);
                let mut minus = pt.clone();
                minus.set_q(s, b, pt.q(s, b) - h);
                let numeric = (plus.log_prob(s, a) - minus.log_prob(s, a)) / (2.0 * h);
                assert!(
                    (analytic - numeric).abs() < 1e-6,
                    "state {s} action {a} param {b}: {analytic} vs {numeric}"
                );
            }
        }
    }

    #[test]
    fn clipped_update_with_unit_ratio_matches_plain_update() {
        let domain = DomainTag::pre_shift();
        let base = PolicyTable::for_grid();
        let batch: Vec<Trajectory> = (0..4)
            .map(|i| rollout(&base, &domain, 10, &mut ChaCha8Rng::seed_from_u64(40 + i)))
            .collect();
        let ct = ConstraintTable::for_grid(1);
        let advs = penalized_advantages(&batch, &ct, 0.99, &[0.5]);
        let olds = log_probs_of(&base, &batch);

        let mut plain = base.clone();
        let mut adam_plain = AdamState::new(plain.params().len(), 0.001);
        policy_update(&mut plain, &batch, &advs, &mut adam_plain);

        let mut clipped = base.clone();
        let mut adam_clipped = AdamState::new(clipped.params().len(), 0.001);
        policy_update_clipped(&mut clipped, &batch, &advs, &olds, 0.2, &mut adam_clipped);

        for (p, c) in plain.params().iter().zip(clipped.params()) {
            assert!((p - c).abs() < 1e-12);
        }
    }

    #[test]
    fn multiplier_examples() {
        let mut m = Multipliers {
            betas: vec![0.5],
            eta: 0.1,
        };
        m.update(&[2.0], &[1.0]);
        assert!((m.betas[0] - 0.6).abs() < 1e-12);

        let mut m = Multipliers {
            betas: vec![0.05],
            eta: 0.1,
        };
        m.update(&[0.0], &[1.0]);
        assert_eq!(m.betas[0], 0.0);

        let mut m = Multipliers {
            betas: vec![0.3],
            eta: 0.1,
        };
        m.update(&[1.0], &[1.0]);
        assert!((m.betas[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn adam_examples() {
        let mut adam = AdamState::new(1, 0.001);
        let mut params = vec![0.0];
        adam.step(&mut params, &[1.0]);
        assert!((params[0] + 0.001).abs() < 1e-9);

        let mut adam = AdamState::new(2, 0.001);
        let mut params = vec![0.5, -0.5];
        adam.step(&mut params, &[0.0, 0.0]);
        assert_eq!(params, vec![0.5, -0.5]);

        let mut adam = AdamState::new(2, 0.001);
        let mut params = vec![0.0, 1.0];
        adam.step(&mut params, &[0.7, 0.7]);
        assert!((params[0] - (params[1] - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn j_capo_examples() {
        let domain = DomainTag::pre_shift();
        let pt = PolicyTable::for_grid();
        let batch: Vec<Trajectory> = (0..3)
            .map(|i| rollout(&pt, &domain, 20, &mut ChaCha8Rng::seed_from_u64(60 + i)))
            .collect();
        let mut ct = ConstraintTable::for_grid(1);
        for logit in ct.params_mut() {
            *logit = -1.2;
        }
        let gamma = 0.99;

        // All betas zero: equals the mean discounted return.
        let zero = Multipliers::new(1, 0.01);
        let mean_return: f64 = batch
            .iter()
            .map(|t| crate::cmdp::discounted_return(t, gamma))
            .sum::<f64>()
            / batch.len() as f64;
        let j = j_capo(&batch, RewardSource::Recorded, &ct, &zero, gamma);
        assert!((j - mean_return).abs() < 1e-12);

        // Zero rewards, beta = 1: equals minus the mean discounted learned cost.
        let mut zero_reward = batch.clone();
        for traj in &mut zero_reward {
            for step in &mut traj.steps {
                step.reward = 0.0;
            }
        }
        let one = Multipliers {
            betas: vec![1.0],
            eta: 0.01,
        };
        let j = j_capo(&zero_reward, RewardSource::Recorded, &ct, &one, gamma);
        let mean_cost = mean_constraint_estimate(&zero_reward, &ct, 0, gamma);
        assert!((j + mean_cost).abs() < 1e-12);

        // Mixed batch: matches a direct per-step summation.
        let m = Multipliers {
            betas: vec![0.5],
            eta: 0.01,
        };
        let mut oracle = 0.0;
        for traj in &batch {
            let mut scale = 1.0;
            for step in &traj.steps {
                oracle += scale
                    * (step.reward
                        - 0.5 * ct.prob(0, step.state.index(), step.action.index()));
                scale *= gamma;
            }
        }
        oracle /= batch.len() as f64;
        let j = j_capo(&batch, RewardSource::Recorded, &ct, &m, gamma);
        assert!((j - oracle).abs() < 1e-12);
    }
}
