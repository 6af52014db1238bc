//! Random well-conditioned instances for experiments and tests.
//!
//! Every density fiber is drawn from a symmetric Dirichlet law. Draws are
//! rejected until the model validates, the observation matrix clears the
//! separability and singular-value floors, and every action has full-rank
//! views under the policy.

use nalgebra::DMatrix;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::bounds::compute_gaps;
use crate::error::{Error, Result};
use crate::linalg::kth_singular_value;
use crate::pomdp::{validate_model, MemorylessPolicy, PomdpModel};
use crate::recovery::separability;
use crate::tensor::Tensor3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub states: usize,
    pub observations: usize,
    pub actions: usize,
    pub rewards: usize,
    /// Minimum `d_O`; ignored for a single state.
    pub separability_floor: f64,
    /// Minimum `σ_min(O)`.
    pub sigma_floor: f64,
    /// Dirichlet concentration of every fiber.
    pub concentration: f64,
    pub max_attempts: usize,
}

impl GeneratorSpec {
    pub fn new(states: usize, observations: usize, actions: usize, rewards: usize) -> Self {
        Self {
            states,
            observations,
            actions,
            rewards,
            separability_floor: 0.5,
            sigma_floor: 0.1,
            concentration: 1.0,
            max_attempts: 10_000,
        }
    }

    fn check(&self) -> Result<()> {
        let dims = [self.states, self.observations, self.actions, self.rewards];
        if dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("cardinalities must be positive, got {dims:?}")));
        }
        if self.states > self.observations {
            return Err(Error::RankDeficient {
                what: format!("observation matrix with X = {} > Y = {}", self.states, self.observations),
                rank: self.observations,
                required: self.states,
            });
        }
        if !(self.concentration > 0.0) || self.max_attempts == 0 {
            return Err(Error::InvalidParameter("concentration and max_attempts must be positive".into()));
        }
        if !(self.separability_floor >= 0.0 && self.sigma_floor >= 0.0) {
            return Err(Error::InvalidParameter("floors must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicySpec {
    Uniform,
    /// Rows are `π_min + (1 − A π_min) · Dirichlet(1)`.
    Random { pi_min: f64 },
}

pub fn dirichlet<R: Rng + ?Sized>(rng: &mut R, len: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    loop {
        let draw: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draw.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draw.into_iter().map(|v| v / total).collect();
        }
    }
}

pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, observations: usize, actions: usize, pi_min: f64) -> Result<MemorylessPolicy> {
    if !(pi_min > 0.0 && pi_min * actions as f64 <= 1.0 + 1e-12) {
        return Err(Error::InvalidParameter(format!("pi_min must lie in (0, 1/A], got {pi_min}")));
    }
    let free = (1.0 - actions as f64 * pi_min).max(0.0);
    let mut table = DMatrix::zeros(observations, actions);
    for n in 0..observations {
        let row = dirichlet(rng, actions, 1.0);
        for l in 0..actions {
            table[(n, l)] = pi_min + free * row[l];
        }
        let total: f64 = table.row(n).sum();
        for l in 0..actions {
            table[(n, l)] /= total;
        }
    }
    MemorylessPolicy::new(table)
}

pub fn make_policy<R: Rng + ?Sized>(rng: &mut R, spec: &PolicySpec, observations: usize, actions: usize) -> Result<MemorylessPolicy> {
    match spec {
        PolicySpec::Uniform => Ok(MemorylessPolicy::uniform(observations, actions)),
        PolicySpec::Random { pi_min } => random_policy(rng, observations, actions, *pi_min),
    }
}

/// `R` evenly spaced reward values on `[0, 1]`.
pub fn default_reward_values(rewards: usize) -> Vec<f64> {
    match rewards {
        1 => vec![0.0],
        _ => (0..rewards).map(|m| m as f64 / (rewards - 1) as f64).collect(),
    }
}

fn draw_model<R: Rng + ?Sized>(rng: &mut R, spec: &GeneratorSpec) -> Result<PomdpModel> {
    let (x, y, a, r) = (spec.states, spec.observations, spec.actions, spec.rewards);
    let mut transition = Tensor3::zeros(x, x, a);
    for i in 0..x {
        for l in 0..a {
            for (j, p) in dirichlet(rng, x, spec.concentration).into_iter().enumerate() {
                transition.set(i, j, l, p);
            }
        }
    }
    let mut observation = DMatrix::zeros(y, x);
    for i in 0..x {
        for (n, p) in dirichlet(rng, y, spec.concentration).into_iter().enumerate() {
            observation[(n, i)] = p;
        }
    }
    let mut reward = Tensor3::zeros(x, a, r);
    for i in 0..x {
        for l in 0..a {
            for (m, p) in dirichlet(rng, r, spec.concentration).into_iter().enumerate() {
                reward.set(i, l, m, p);
            }
        }
    }
    PomdpModel::new(transition, observation, reward, default_reward_values(r))
}

/// Why the last rejected draw failed, for the error message.
fn rejection(model: &PomdpModel, policy: &MemorylessPolicy, spec: &GeneratorSpec) -> Option<String> {
    let problems = validate_model(model);
    if let Some(p) = problems.first() {
        return Some(p.clone());
    }
    let sigma = kth_singular_value(model.observation(), model.states());
    if sigma < spec.sigma_floor {
        return Some(format!("sigma_min(O) = {sigma:.4} below floor {}", spec.sigma_floor));
    }
    if model.states() >= 2 {
        let d = separability(model.observation()).ok()?;
        if d < spec.separability_floor {
            return Some(format!("d_O = {d:.4} below floor {}", spec.separability_floor));
        }
    }
    for l in 0..model.actions() {
        if let Err(e) = compute_gaps(model, policy, l) {
            return Some(format!("action {l}: {e}"));
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedInstance {
    pub model: PomdpModel,
    pub policy: MemorylessPolicy,
    pub attempts: usize,
}

/// Draws model and policy from one ChaCha stream seeded with `seed`,
/// redrawing both until the instance is accepted.
pub fn generate_instance(spec: &GeneratorSpec, policy: &PolicySpec, seed: u64) -> Result<GeneratedInstance> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for attempt in 1..=spec.max_attempts {
        let model = draw_model(&mut rng, spec)?;
        let pol = make_policy(&mut rng, policy, spec.observations, spec.actions)?;
        match rejection(&model, &pol, spec) {
            None => return Ok(GeneratedInstance { model, policy: pol, attempts: attempt }),
            Some(reason) => last = reason,
        }
    }
    Err(Error::Generation(format!(
        "no acceptable instance in {} attempts; last rejection: {last}",
        spec.max_attempts
    )))
}

/// The standard two-state fixture: `X=2, Y=4, A=2, R=2`, `d_O ≥ 0.5`,
/// random policy with `π_min = 0.2`, seed 7.
pub fn standard_fixture() -> Result<GeneratedInstance> {
    generate_instance(&GeneratorSpec::new(2, 4, 2, 2), &PolicySpec::Random { pi_min: 0.2 }, 7)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dirichlet_draws_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for alpha in [0.3, 1.0, 5.0] {
            let d = dirichlet(&mut rng, 6, alpha);
            assert!(d.iter().all(|&v| v >= 0.0));
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn random_policy_respects_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_policy(&mut rng, 5, 3, 0.1).unwrap();
        assert!(p.pi_min() >= 0.1 - 1e-12);
        assert!(random_policy(&mut rng, 5, 3, 0.5).is_err());
        let tight = random_policy(&mut rng, 2, 4, 0.25).unwrap();
        assert!((tight.prob(0, 0) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GeneratorSpec::new(2, 4, 2, 2);
        let a = generate_instance(&spec, &PolicySpec::Uniform, 11).unwrap();
        let b = generate_instance(&spec, &PolicySpec::Uniform, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(serde_json::to_string(&a.model).unwrap(), serde_json::to_string(&b.model).unwrap());
    }

    #[test]
    fn floors_hold() {
        let mut spec = GeneratorSpec::new(3, 5, 2, 2);
        spec.separability_floor = 0.5;
        let inst = generate_instance(&spec, &PolicySpec::Random { pi_min: 0.2 }, 3).unwrap();
        assert!(separability(inst.model.observation()).unwrap() >= 0.5);
        assert!(kth_singular_value(inst.model.observation(), 3) >= spec.sigma_floor);
        assert!(validate_model(&inst.model).is_empty());
    }

    #[test]
    fn more_states_than_observations_is_a_rank_error() {
        let spec = GeneratorSpec::new(3, 2, 1, 1);
        assert!(matches!(generate_instance(&spec, &PolicySpec::Uniform, 0), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn impossible_floor_exhausts_budget() {
        let mut spec = GeneratorSpec::new(2, 2, 1, 1);
        spec.separability_floor = 2.5;
        spec.max_attempts = 20;
        assert!(matches!(generate_instance(&spec, &PolicySpec::Uniform, 0), Err(Error::Generation(_))));
    }

    #[test]
    fn standard_fixture_is_well_posed() {
        let f = standard_fixture().unwrap();
        assert_eq!(
            (f.model.states(), f.model.observations(), f.model.actions(), f.model.rewards()),
            (2, 4, 2, 2)
        );
        assert!(separability(f.model.observation()).unwrap() >= 0.5);
    }
}
