//! Exact finite-MDP mathematics: policy evaluation, occupancy measures,
//! model-discrepancy tables, and the simulation-lemma bound.
//!
//! All solves are dense LU factorizations; instances are capped at
//! `S <= 64` states, which is the scale everything downstream operates at.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

/// Hard cap on the number of states accepted by the exact solvers.
pub const MAX_STATES: usize = 64;

/// Tolerance used when validating that probability rows sum to one.
pub const DIST_TOL: f64 = 1e-12;

/// A finite MDP: transition tensor `[S x A x S]`, reward table `[S x A]`
/// with entries in `[0, 1]`, discount in `[0, 1)`, and an initial state
/// distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_actions: usize,
    pub transition: Array3<f64>,
    pub reward: Array2<f64>,
    pub discount: f64,
    pub initial_dist: Array1<f64>,
}

/// A stochastic state -> action-distribution table `[S x A]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub probs: Array2<f64>,
}

/// Output of exact policy evaluation.
#[derive(Debug, Clone)]
pub struct ValueResult {
    /// `V(s)` for every state.
    pub state_values: Array1<f64>,
    /// `Q(s, a) = R(s, a) + gamma * sum_s' P(s'|s,a) V(s')`.
    pub q_values: Array2<f64>,
    /// Expected discounted return from the initial distribution.
    pub expected_return: f64,
    /// Upper end of the value range, `1 / (1 - gamma)` by default.
    pub vmax: f64,
}

/// Normalized discounted state-action visitation distribution.
#[derive(Debug, Clone)]
pub struct Occupancy {
    pub dist: Array2<f64>,
}

fn check_dist(row: &[f64], what: &str) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(Error::Parameter(format!("{what} sums to {sum}, expected 1")));
    }
    if row.iter().any(|&p| p < 0.0) {
        return Err(Error::Parameter(format!("{what} has a negative entry")));
    }
    Ok(())
}

/// Default value range for a discount factor: `1 / (1 - gamma)`.
pub fn default_vmax(gamma: f64) -> f64 {
    1.0 / (1.0 - gamma)
}

impl TabularMdp {
    /// Validates all invariants and builds the MDP.
    pub fn new(
        transition: Array3<f64>,
        reward: Array2<f64>,
        discount: f64,
        initial_dist: Array1<f64>,
    ) -> Result<Self> {
        let (s, a, s2) = transition.dim();
        if s != s2 {
            return Err(Error::Shape(format!("transition tensor is [{s} x {a} x {s2}]")));
        }
        if s == 0 || a == 0 {
            return Err(Error::Shape("empty state or action space".into()));
        }
        if s > MAX_STATES {
            return Err(Error::Capacity(format!("{s} states exceeds cap {MAX_STATES}")));
        }
        if reward.dim() != (s, a) {
            return Err(Error::Shape(format!(
                "reward table is {:?}, expected ({s}, {a})",
                reward.dim()
            )));
        }
        if initial_dist.len() != s {
            return Err(Error::Shape(format!(
                "initial distribution has {} entries, expected {s}",
                initial_dist.len()
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::Parameter(format!("discount {discount} outside [0, 1)")));
        }
        for si in 0..s {
            for ai in 0..a {
                let row: Vec<f64> = (0..s).map(|sp| transition[[si, ai, sp]]).collect();
                check_dist(&row, &format!("transition row ({si}, {ai})"))?;
            }
        }
        check_dist(initial_dist.as_slice().unwrap(), "initial distribution")?;
        if reward.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::Parameter("reward outside [0, 1]".into()));
        }
        Ok(Self { num_states: s, num_actions: a, transition, reward, discount, initial_dist })
    }

    /// Default value-range bound for this MDP.
    pub fn vmax(&self) -> f64 {
        default_vmax(self.discount)
    }

    fn check_policy(&self, pi: &PolicyTable) -> Result<()> {
        if pi.probs.dim() != (self.num_states, self.num_actions) {
            return Err(Error::Shape(format!(
                "policy is {:?}, mdp expects ({}, {})",
                pi.probs.dim(),
                self.num_states,
                self.num_actions
            )));
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &TabularMdp) -> Result<()> {
        if self.num_states != other.num_states || self.num_actions != other.num_actions {
            return Err(Error::Shape(format!(
                "models are ({}, {}) vs ({}, {})",
                self.num_states, self.num_actions, other.num_states, other.num_actions
            )));
        }
        Ok(())
    }

    /// State-to-state transition matrix under `pi`:
    /// `P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a)`.
    fn policy_transition(&self, pi: &PolicyTable) -> Array2<f64> {
        let s = self.num_states;
        let mut p = Array2::zeros((s, s));
        for si in 0..s {
            for ai in 0..self.num_actions {
                let w = pi.probs[[si, ai]];
                if w == 0.0 {
                    continue;
                }
                for sp in 0..s {
                    p[[si, sp]] += w * self.transition[[si, ai, sp]];
                }
            }
        }
        p
    }

    /// Exact policy evaluation by direct linear solve of
    /// `(I - gamma P_pi) V = r_pi`.
    pub fn evaluate_policy(&self, pi: &PolicyTable) -> Result<ValueResult> {
        self.check_policy(pi)?;
        let s = self.num_states;
        let p_pi = self.policy_transition(pi);
        let r_pi: Vec<f64> = (0..s)
            .map(|si| (0..self.num_actions).map(|ai| pi.probs[[si, ai]] * self.reward[[si, ai]]).sum())
            .collect();

        let mat = DMatrix::from_fn(s, s, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta - self.discount * p_pi[[i, j]]
        });
        let rhs = DVector::from_iterator(s, r_pi);
        // Strictly diagonally dominant for gamma < 1, so LU cannot fail.
        let v = mat.lu().solve(&rhs).ok_or(Error::Numerical {
            step: 0,
            msg: "singular Bellman system".into(),
        })?;

        let state_values = Array1::from_iter(v.iter().copied());
        let mut q_values = Array2::zeros((s, self.num_actions));
        for si in 0..s {
            for ai in 0..self.num_actions {
                let mut next = 0.0;
                for sp in 0..s {
                    next += self.transition[[si, ai, sp]] * state_values[sp];
                }
                q_values[[si, ai]] = self.reward[[si, ai]] + self.discount * next;
            }
        }
        let expected_return = self.initial_dist.iter().zip(state_values.iter()).map(|(d, v)| d * v).sum();
        Ok(ValueResult { state_values, q_values, expected_return, vmax: self.vmax() })
    }

    /// Expected discounted return `J(pi)` from the initial distribution.
    pub fn expected_return(&self, pi: &PolicyTable) -> Result<f64> {
        Ok(self.evaluate_policy(pi)?.expected_return)
    }

    /// Normalized discounted state-action occupancy
    /// `d(s,a) = (1 - gamma) sum_t gamma^t Pr(s_t = s, a_t = a)`,
    /// computed by solving the flow equations
    /// `rho = (1 - gamma) d0 + gamma P_pi^T rho`.
    pub fn occupancy(&self, pi: &PolicyTable) -> Result<Occupancy> {
        self.check_policy(pi)?;
        let s = self.num_states;
        let p_pi = self.policy_transition(pi);
        let mat = DMatrix::from_fn(s, s, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            delta - self.discount * p_pi[[j, i]]
        });
        let rhs = DVector::from_iterator(s, self.initial_dist.iter().map(|d| (1.0 - self.discount) * d));
        let rho = mat.lu().solve(&rhs).ok_or(Error::Numerical {
            step: 0,
            msg: "singular flow system".into(),
        })?;
        let mut dist = Array2::zeros((s, self.num_actions));
        for si in 0..s {
            for ai in 0..self.num_actions {
                dist[[si, ai]] = rho[si] * pi.probs[[si, ai]];
            }
        }
        Ok(Occupancy { dist })
    }
}

impl PolicyTable {
    /// Validates row distributions and builds the table.
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        let (s, _a) = probs.dim();
        for si in 0..s {
            let row: Vec<f64> = probs.row(si).iter().copied().collect();
            check_dist(&row, &format!("policy row {si}"))?;
        }
        Ok(Self { probs })
    }

    /// One-hot table for a deterministic policy given one action per state.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), num_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::Parameter(format!("action {a} out of range at state {s}")));
            }
            probs[[s, a]] = 1.0;
        }
        Ok(Self { probs })
    }

    /// Uniform policy over all actions.
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self { probs: Array2::from_elem((num_states, num_actions), 1.0 / num_actions as f64) }
    }

    pub fn num_states(&self) -> usize {
        self.probs.dim().0
    }

    pub fn num_actions(&self) -> usize {
        self.probs.dim().1
    }

    /// Most probable action in state `s` (lowest index on ties).
    pub fn greedy_action(&self, s: usize) -> usize {
        let row = self.probs.row(s);
        let mut best = 0;
        for a in 1..row.len() {
            if row[a] > row[best] {
                best = a;
            }
        }
        best
    }

    /// Elementwise comparison within `tol`.
    pub fn approx_eq(&self, other: &PolicyTable, tol: f64) -> bool {
        self.probs.dim() == other.probs.dim()
            && self
                .probs
                .iter()
                .zip(other.probs.iter())
                .all(|(x, y)| (x - y).abs() <= tol)
    }
}

impl Occupancy {
    pub fn total(&self) -> f64 {
        self.dist.sum()
    }
}

/// Total-variation distance between two discrete distributions, half the
/// l1 distance.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Per-cell squared discrepancy between two models:
/// `TV(P_M(.|s,a), P_ref(.|s,a))^2 + (R_M(s,a) - R_ref(s,a))^2 / vmax^2`.
pub fn model_discrepancy(m: &TabularMdp, m_ref: &TabularMdp, vmax: f64) -> Result<Array2<f64>> {
    m.check_same_shape(m_ref)?;
    if vmax < 1.0 {
        return Err(Error::Parameter(format!("vmax {vmax} must be >= 1")));
    }
    let (s, a) = (m.num_states, m.num_actions);
    let mut out = Array2::zeros((s, a));
    for si in 0..s {
        for ai in 0..a {
            let p: Vec<f64> = (0..s).map(|sp| m.transition[[si, ai, sp]]).collect();
            let q: Vec<f64> = (0..s).map(|sp| m_ref.transition[[si, ai, sp]]).collect();
            let tv = tv_distance(&p, &q);
            let dr = m.reward[[si, ai]] - m_ref.reward[[si, ai]];
            out[[si, ai]] = tv * tv + dr * dr / (vmax * vmax);
        }
    }
    Ok(out)
}

/// Return gap between two models under one policy, together with the
/// occupancy-weighted upper bound
/// `vmax/(1-gamma) E_{d_M^pi}[TV] + 1/(1-gamma) E_{d_M^pi}[|R_M - R_M2|]`.
/// The exact gap never exceeds the bound.
pub fn simulation_gap(
    m: &TabularMdp,
    m2: &TabularMdp,
    pi: &PolicyTable,
    vmax: f64,
) -> Result<(f64, f64)> {
    m.check_same_shape(m2)?;
    let exact_gap = (m.expected_return(pi)? - m2.expected_return(pi)?).abs();
    let occ = m.occupancy(pi)?;
    let (s, a) = (m.num_states, m.num_actions);
    let mut e_tv = 0.0;
    let mut e_dr = 0.0;
    for si in 0..s {
        for ai in 0..a {
            let w = occ.dist[[si, ai]];
            if w == 0.0 {
                continue;
            }
            let p: Vec<f64> = (0..s).map(|sp| m.transition[[si, ai, sp]]).collect();
            let q: Vec<f64> = (0..s).map(|sp| m2.transition[[si, ai, sp]]).collect();
            e_tv += w * tv_distance(&p, &q);
            e_dr += w * (m.reward[[si, ai]] - m2.reward[[si, ai]]).abs();
        }
    }
    let bound = vmax / (1.0 - m.discount) * e_tv + e_dr / (1.0 - m.discount);
    Ok((exact_gap, bound))
}

/// JSON document form of [`TabularMdp`] with nested-array tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpDoc {
    pub num_states: usize,
    pub num_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub discount: f64,
    pub initial_dist: Vec<f64>,
}

impl MdpDoc {
    pub fn from_mdp(m: &TabularMdp) -> Self {
        let (s, a) = (m.num_states, m.num_actions);
        Self {
            num_states: s,
            num_actions: a,
            transition: (0..s)
                .map(|si| (0..a).map(|ai| (0..s).map(|sp| m.transition[[si, ai, sp]]).collect()).collect())
                .collect(),
            reward: (0..s).map(|si| (0..a).map(|ai| m.reward[[si, ai]]).collect()).collect(),
            discount: m.discount,
            initial_dist: m.initial_dist.to_vec(),
        }
    }

    pub fn into_mdp(self) -> Result<TabularMdp> {
        let (s, a) = (self.num_states, self.num_actions);
        let mut transition = Array3::zeros((s, a, s));
        if self.transition.len() != s {
            return Err(Error::Shape("transition outer length".into()));
        }
        for (si, per_action) in self.transition.iter().enumerate() {
            if per_action.len() != a {
                return Err(Error::Shape(format!("transition[{si}] length")));
            }
            for (ai, row) in per_action.iter().enumerate() {
                if row.len() != s {
                    return Err(Error::Shape(format!("transition[{si}][{ai}] length")));
                }
                for (sp, &p) in row.iter().enumerate() {
                    transition[[si, ai, sp]] = p;
                }
            }
        }
        if self.reward.len() != s || self.reward.iter().any(|r| r.len() != a) {
            return Err(Error::Shape("reward table shape".into()));
        }
        let mut reward = Array2::zeros((s, a));
        for (si, row) in self.reward.iter().enumerate() {
            for (ai, &r) in row.iter().enumerate() {
                reward[[si, ai]] = r;
            }
        }
        TabularMdp::new(transition, reward, self.discount, Array1::from_vec(self.initial_dist))
    }
}

/// Writes an MDP as a JSON document.
pub fn save_mdp(m: &TabularMdp, path: &std::path::Path) -> Result<()> {
    let doc = MdpDoc::from_mdp(m);
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

/// Reads an MDP from a JSON document.
pub fn load_mdp(path: &std::path::Path) -> Result<TabularMdp> {
    let text = std::fs::read_to_string(path)?;
    let doc: MdpDoc = serde_json::from_str(&text)?;
    doc.into_mdp()
}

/// Two-state chain: action 0 moves s0 -> s1, everything else self-loops.
/// Reward 1 in s1, discount 0.5, start in s0.
#[cfg(test)]
pub(crate) fn two_state_chain() -> TabularMdp {
    let mut t = Array3::zeros((2, 2, 2));
    t[[0, 0, 1]] = 1.0;
    t[[0, 1, 0]] = 1.0;
    t[[1, 0, 1]] = 1.0;
    t[[1, 1, 1]] = 1.0;
    let r = ndarray::arr2(&[[0.0, 0.0], [1.0, 1.0]]);
    TabularMdp::new(t, r, 0.5, Array1::from_vec(vec![1.0, 0.0])).unwrap()
}
