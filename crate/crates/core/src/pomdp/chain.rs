//! The state Markov chain induced by running a memoryless policy, and its
//! stationary and mixing quantities.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::model::{action_given_state, MemorylessPolicy, PomdpModel, STOCHASTIC_TOL};
use crate::error::{Error, Result};

/// Entries at or below this are treated as structural zeros in the support graph.
pub const SUPPORT_TOL: f64 = 1e-12;

/// Above this state count the stationary distribution is found by power iteration.
const DIRECT_SOLVE_LIMIT: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct MarkovChain {
    transition: DMatrix<f64>,
}

impl MarkovChain {
    pub fn new(transition: DMatrix<f64>) -> Result<Self> {
        let (rows, cols) = transition.shape();
        if rows == 0 || rows != cols {
            return Err(Error::Dimension(format!("chain matrix must be square, got {rows}x{cols}")));
        }
        for r in 0..rows {
            let row = transition.row(r);
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidDistribution(format!("chain row {r} has a negative entry")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidDistribution(format!("chain row {r} sums to {total}")));
            }
        }
        Ok(Self { transition })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("chain matrix must be square".into()));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.transition
    }

    fn successors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.states()).filter(move |&j| self.transition[(i, j)] > SUPPORT_TOL)
    }

    /// Checks irreducibility (strong connectivity of the support graph) and
    /// aperiodicity (gcd of cycle lengths through BFS levels equals one).
    pub fn check_ergodic(&self) -> Result<()> {
        let n = self.states();
        let forward = self.bfs_levels(false);
        let backward = self.bfs_levels(true);
        if let Some(i) = (0..n).find(|&i| forward[i].is_none() || backward[i].is_none()) {
            return Err(Error::NotErgodic(format!("reducible: state {i} not strongly connected to state 0")));
        }
        let mut period = 0usize;
        for i in 0..n {
            for j in self.successors(i) {
                let (li, lj) = (forward[i].unwrap(), forward[j].unwrap());
                period = gcd(period, (li + 1).abs_diff(lj));
            }
        }
        if period != 1 {
            return Err(Error::NotErgodic(format!("periodic with period {period}")));
        }
        Ok(())
    }

    fn bfs_levels(&self, reversed: bool) -> Vec<Option<usize>> {
        let n = self.states();
        let mut level = vec![None; n];
        level[0] = Some(0);
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            let next = level[u].unwrap() + 1;
            for v in 0..n {
                let w = if reversed { self.transition[(v, u)] } else { self.transition[(u, v)] };
                if w > SUPPORT_TOL && level[v].is_none() {
                    level[v] = Some(next);
                    queue.push_back(v);
                }
            }
        }
        level
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// `f_{T,π}(x' | x) = Σ_a Σ_y f_π(a | y) f_O(y | x) f_T(x' | x, a)`.
pub fn induced_chain(model: &PomdpModel, policy: &MemorylessPolicy) -> Result<MarkovChain> {
    policy.check_compatible(model)?;
    let x = model.states();
    let p_action = action_given_state(model, policy);
    let mut p = DMatrix::zeros(x, x);
    for i in 0..x {
        for j in 0..x {
            p[(i, j)] = (0..model.actions()).map(|l| p_action[(i, l)] * model.t(i, j, l)).sum();
        }
    }
    MarkovChain::new(p)
}

/// Stationary distribution `ω` with `ω P = ω`, for an ergodic chain.
pub fn stationary_distribution(chain: &MarkovChain) -> Result<DVector<f64>> {
    chain.check_ergodic()?;
    let n = chain.states();
    let omega = if n <= DIRECT_SOLVE_LIMIT {
        solve_direct(chain).unwrap_or_else(|| power_iteration(chain))
    } else {
        power_iteration(chain)
    };
    if omega.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::NotErgodic("stationary distribution has a non-positive entry".into()));
    }
    Ok(omega)
}

/// Solves `(Pᵀ − I) ω = 0` with the last equation replaced by `Σ ω = 1`.
fn solve_direct(chain: &MarkovChain) -> Option<DVector<f64>> {
    let n = chain.states();
    let mut system = chain.matrix().transpose() - DMatrix::identity(n, n);
    system.row_mut(n - 1).fill(1.0);
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let omega = system.lu().solve(&rhs)?;
    let total: f64 = omega.iter().sum();
    omega.iter().all(|v| v.is_finite()).then(|| omega / total)
}

fn power_iteration(chain: &MarkovChain) -> DVector<f64> {
    let n = chain.states();
    let pt = chain.matrix().transpose();
    let mut omega = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..100_000 {
        let next = &pt * &omega;
        let delta = (&next - &omega).amax();
        omega = next;
        if delta < 1e-15 {
            break;
        }
    }
    let total: f64 = omega.iter().sum();
    omega / total
}

/// `ω^{(l)}(i) = P[x = i | a = l] ∝ ω(i) p(l | i)`.
pub fn action_conditional_distribution(
    model: &PomdpModel,
    policy: &MemorylessPolicy,
    l: usize,
) -> Result<DVector<f64>> {
    if l >= model.actions() {
        return Err(Error::IndexOutOfRange { what: "action", index: l, limit: model.actions() });
    }
    let omega = stationary_distribution(&induced_chain(model, policy)?)?;
    Ok(condition_on_action(model, policy, &omega, l))
}

/// Bayes conditioning of a known stationary distribution on action `l`.
pub(crate) fn condition_on_action(
    model: &PomdpModel,
    policy: &MemorylessPolicy,
    omega: &DVector<f64>,
    l: usize,
) -> DVector<f64> {
    let p_action = action_given_state(model, policy);
    let joint = DVector::from_fn(model.states(), |i, _| omega[i] * p_action[(i, l)]);
    let total: f64 = joint.iter().sum();
    joint / total
}

/// Stationary probability that action `l` is played, `P(a = l) = Σ_i ω(i) p(l | i)`.
pub fn action_marginal(model: &PomdpModel, policy: &MemorylessPolicy, omega: &DVector<f64>) -> DVector<f64> {
    let p_action = action_given_state(model, policy);
    p_action.transpose() * omega
}

/// Long-run average reward `η(π; M) = Σ_x ω(x) Σ_a p(a | x) r̄(x, a)`.
pub fn expected_average_reward(model: &PomdpModel, policy: &MemorylessPolicy) -> Result<f64> {
    let omega = stationary_distribution(&induced_chain(model, policy)?)?;
    let p_action = action_given_state(model, policy);
    Ok((0..model.states())
        .map(|x| {
            omega[x] * (0..model.actions()).map(|a| p_action[(x, a)] * model.mean_reward(x, a)).sum::<f64>()
        })
        .sum())
}

/// Mixing constants in `ρ_mix(t) ≤ G θ^{t−1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingConstants {
    pub g: f64,
    pub theta: f64,
    /// Set when the computed θ gives no one-step contraction.
    pub warning: Option<String>,
    /// Whether `g`/`theta` were supplied by the user rather than computed.
    pub overridden: bool,
}

impl MixingConstants {
    pub fn with_overrides(mut self, g: Option<f64>, theta: Option<f64>) -> Self {
        if let Some(g) = g {
            self.g = g;
            self.overridden = true;
        }
        if let Some(theta) = theta {
            self.theta = theta;
            self.overridden = true;
        }
        if self.overridden && self.theta < 1.0 {
            self.warning = None;
        }
        self
    }
}

/// Dobrushin coefficient `θ = ½ max_{i,j} ‖P_i − P_j‖₁`, with `G = 1`.
pub fn contraction_coefficients(chain: &MarkovChain) -> MixingConstants {
    let p = chain.matrix();
    let n = chain.states();
    let mut theta: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = (0..n).map(|k| (p[(i, k)] - p[(j, k)]).abs()).sum();
            theta = theta.max(0.5 * d);
        }
    }
    let theta = theta.min(1.0);
    let warning = (theta >= 1.0 - SUPPORT_TOL).then(|| {
        "no one-step contraction (theta = 1); supply G and theta explicitly".to_string()
    });
    MixingConstants { g: 1.0, theta, warning, overridden: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor3;

    #[test]
    fn single_state_chain() {
        let c = MarkovChain::from_rows(&[&[1.0]]).unwrap();
        assert_eq!(stationary_distribution(&c).unwrap().as_slice(), &[1.0]);
    }

    #[test]
    fn doubly_stochastic_is_uniform() {
        let c = MarkovChain::from_rows(&[&[0.2, 0.5, 0.3], &[0.5, 0.3, 0.2], &[0.3, 0.2, 0.5]]).unwrap();
        let w = stationary_distribution(&c).unwrap();
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-14));
    }

    #[test]
    fn two_state_stationary() {
        let c = MarkovChain::from_rows(&[&[0.9, 0.1], &[0.2, 0.8]]).unwrap();
        let w = stationary_distribution(&c).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-14 && (w[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn power_iteration_agrees_with_direct_solve() {
        let c = MarkovChain::from_rows(&[&[0.5, 0.25, 0.25], &[0.1, 0.6, 0.3], &[0.3, 0.3, 0.4]]).unwrap();
        let direct = solve_direct(&c).unwrap();
        let power = power_iteration(&c);
        assert!((direct - power).amax() < 1e-12);
    }

    #[test]
    fn reducible_and_periodic_chains_rejected() {
        let reducible = MarkovChain::from_rows(&[&[1.0, 0.0], &[0.5, 0.5]]).unwrap();
        assert!(matches!(stationary_distribution(&reducible), Err(Error::NotErgodic(m)) if m.contains("reducible")));
        let periodic = MarkovChain::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        assert!(matches!(stationary_distribution(&periodic), Err(Error::NotErgodic(m)) if m.contains("period 2")));
        let three_cycle = MarkovChain::from_rows(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]).unwrap();
        assert!(three_cycle.check_ergodic().is_err());
    }

    #[test]
    fn chain_rejects_non_stochastic_rows() {
        assert!(MarkovChain::from_rows(&[&[0.5, 0.4], &[0.5, 0.5]]).is_err());
        assert!(MarkovChain::from_rows(&[&[1.5, -0.5], &[0.5, 0.5]]).is_err());
    }

    #[test]
    fn dobrushin_coefficients() {
        let identical = MarkovChain::from_rows(&[&[0.3, 0.7], &[0.3, 0.7]]).unwrap();
        let m = contraction_coefficients(&identical);
        assert_eq!((m.g, m.theta), (1.0, 0.0));
        assert!(m.warning.is_none());

        let identity = MarkovChain::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        let m = contraction_coefficients(&identity);
        assert_eq!(m.theta, 1.0);
        assert!(m.warning.is_some());
        let m = m.with_overrides(Some(3.0), Some(0.9));
        assert_eq!((m.g, m.theta, m.overridden), (3.0, 0.9, true));
        assert!(m.warning.is_none());

        let c = MarkovChain::from_rows(&[&[0.9, 0.1], &[0.2, 0.8]]).unwrap();
        assert!((contraction_coefficients(&c).theta - 0.7).abs() < 1e-15);
    }

    #[test]
    fn single_action_chain_is_the_transition_slice() {
        let t = Tensor3::from_nested(&[
            vec![vec![0.6], vec![0.4]],
            vec![vec![0.25], vec![0.75]],
        ])
        .unwrap();
        let o = DMatrix::from_row_slice(3, 2, &[0.5, 0.1, 0.3, 0.2, 0.2, 0.7]);
        let g = Tensor3::from_fn(2, 1, 1, |_, _, _| 1.0);
        let model = PomdpModel::new(t, o, g, vec![2.0]).unwrap();
        let policy = MemorylessPolicy::uniform(3, 1);
        let chain = induced_chain(&model, &policy).unwrap();
        assert!((chain.matrix()[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((chain.matrix()[(1, 1)] - 0.75).abs() < 1e-15);
        assert!((expected_average_reward(&model, &policy).unwrap() - 2.0).abs() < 1e-14);
    }
}
