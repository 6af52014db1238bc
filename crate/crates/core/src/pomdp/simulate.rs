use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::{induced_chain, stationary_distribution};
use super::model::{MemorylessPolicy, PomdpModel, Step, Trajectory};
use crate::error::{Error, Result};

/// Distribution of the first latent state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    #[default]
    Uniform,
    Stationary,
    Custom(Vec<f64>),
}

impl InitialState {
    pub fn resolve(&self, model: &PomdpModel, policy: &MemorylessPolicy) -> Result<Vec<f64>> {
        let x = model.states();
        match self {
            InitialState::Uniform => Ok(vec![1.0 / x as f64; x]),
            InitialState::Stationary => {
                Ok(stationary_distribution(&induced_chain(model, policy)?)?.iter().copied().collect())
            }
            InitialState::Custom(p) => {
                if p.len() != x {
                    return Err(Error::InvalidDistribution(format!(
                        "initial distribution has {} entries for {x} states",
                        p.len()
                    )));
                }
                let total: f64 = p.iter().sum();
                if p.iter().any(|v| !v.is_finite() || *v < 0.0) || (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidDistribution(format!(
                        "initial distribution must be nonnegative and sum to 1 (sum = {total})"
                    )));
                }
                Ok(p.clone())
            }
        }
    }
}

fn sampler(weights: impl IntoIterator<Item = f64>) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(weights).map_err(|e| Error::InvalidDistribution(e.to_string()))
}

/// Samples an `n`-step trajectory: `y_t ~ f_O(·|x_t)`, `a_t ~ f_π(·|y_t)`,
/// `r_t ~ f_R(·|x_t, a_t)`, `x_{t+1} ~ f_T(·|x_t, a_t)`.
///
/// The output is a pure function of `(model, policy, n, seed, initial)`.
pub fn simulate(
    model: &PomdpModel,
    policy: &MemorylessPolicy,
    n: usize,
    seed: u64,
    initial: &InitialState,
    log_hidden: bool,
) -> Result<Trajectory> {
    policy.check_compatible(model)?;
    let (x, y, a, r) = (model.states(), model.observations(), model.actions(), model.rewards());
    let start = sampler(initial.resolve(model, policy)?)?;

    let emit = (0..x)
        .map(|i| sampler((0..y).map(|k| model.o(k, i))))
        .collect::<Result<Vec<_>>>()?;
    let act = (0..y)
        .map(|k| sampler((0..a).map(|l| policy.prob(k, l))))
        .collect::<Result<Vec<_>>>()?;
    let mut pay = Vec::with_capacity(x * a);
    let mut step = Vec::with_capacity(x * a);
    for i in 0..x {
        for l in 0..a {
            pay.push(sampler((0..r).map(|m| model.gamma(i, l, m)))?);
            step.push(sampler((0..x).map(|j| model.t(i, j, l)))?);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::with_capacity(n);
    let mut hidden = log_hidden.then(|| Vec::with_capacity(n));
    if n > 0 {
        let mut state = start.sample(&mut rng);
        for _ in 0..n {
            let obs = emit[state].sample(&mut rng);
            let action = act[obs].sample(&mut rng);
            let reward = pay[state * a + action].sample(&mut rng);
            steps.push(Step { y: obs, a: action, r: reward });
            if let Some(h) = hidden.as_mut() {
                h.push(state);
            }
            state = step[state * a + action].sample(&mut rng);
        }
    }
    Ok(Trajectory { steps, seed: Some(seed), hidden_states: hidden })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor3;
    use nalgebra::DMatrix;

    fn deterministic_cycle() -> PomdpModel {
        // 0 -> 1 -> 2 -> 0, observation = state, reward = state % 2
        let t = Tensor3::from_fn(3, 3, 1, |i, j, _| if j == (i + 1) % 3 { 1.0 } else { 0.0 });
        let o = DMatrix::identity(3, 3);
        let g = Tensor3::from_fn(3, 1, 2, |i, _, m| if m == i % 2 { 1.0 } else { 0.0 });
        PomdpModel::new(t, o, g, vec![0.0, 1.0]).unwrap()
    }

    #[test]
    fn zero_steps_is_empty() {
        let m = deterministic_cycle();
        let traj = simulate(&m, &MemorylessPolicy::uniform(3, 1), 0, 1, &InitialState::Uniform, true).unwrap();
        assert!(traj.is_empty());
        assert_eq!(traj.hidden_states, Some(vec![]));
    }

    #[test]
    fn deterministic_model_gives_forced_sequence() {
        let m = deterministic_cycle();
        let start = InitialState::Custom(vec![0.0, 1.0, 0.0]);
        let traj = simulate(&m, &MemorylessPolicy::uniform(3, 1), 5, 42, &start, true).unwrap();
        let ys: Vec<usize> = traj.steps.iter().map(|s| s.y).collect();
        let rs: Vec<usize> = traj.steps.iter().map(|s| s.r).collect();
        assert_eq!(ys, vec![1, 2, 0, 1, 2]);
        assert_eq!(rs, vec![1, 0, 0, 1, 0]);
        assert_eq!(traj.hidden_states.unwrap(), ys);
    }

    #[test]
    fn invalid_initial_distribution_rejected() {
        let m = deterministic_cycle();
        let p = MemorylessPolicy::uniform(3, 1);
        let bad = InitialState::Custom(vec![0.5, 0.4, 0.0]);
        assert!(matches!(simulate(&m, &p, 3, 0, &bad, false), Err(Error::InvalidDistribution(_))));
        let short = InitialState::Custom(vec![1.0]);
        assert!(simulate(&m, &p, 3, 0, &short, false).is_err());
    }

    #[test]
    fn same_seed_same_trajectory() {
        let m = deterministic_cycle();
        let p = MemorylessPolicy::uniform(3, 1);
        let a = simulate(&m, &p, 50, 9, &InitialState::Uniform, false).unwrap();
        let b = simulate(&m, &p, 50, 9, &InitialState::Uniform, false).unwrap();
        assert_eq!(a, b);
    }
}
