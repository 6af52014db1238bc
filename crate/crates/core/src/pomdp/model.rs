use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, matrix_to_rows};
use crate::tensor::Tensor3;

/// Tolerance on the unit-mass constraint of every density fiber.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Singular-value tolerance for the full-column-rank requirement on `O`.
pub const RANK_TOL: f64 = 1e-10;

/// Ground-truth POMDP densities.
///
/// * `transition[(i, j, l)] = f_T(j | i, l)`, shape `X × X × A`
/// * `observation[(n, i)] = f_O(e_n | i)`, shape `Y × X`
/// * `reward[(i, l, m)] = f_R(e_m | i, l)`, shape `X × A × R`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct PomdpModel {
    states: usize,
    observations: usize,
    actions: usize,
    rewards: usize,
    transition: Tensor3,
    observation: DMatrix<f64>,
    reward: Tensor3,
    reward_values: Vec<f64>,
}

impl PomdpModel {
    /// Checks shapes only; stochasticity and rank are reported by [`validate_model`].
    pub fn new(
        transition: Tensor3,
        observation: DMatrix<f64>,
        reward: Tensor3,
        reward_values: Vec<f64>,
    ) -> Result<Self> {
        let [x, x2, a] = transition.dims();
        let (y, xo) = observation.shape();
        let [xr, ar, r] = reward.dims();
        if x == 0 || y == 0 || a == 0 || r == 0 {
            return Err(Error::Dimension("all cardinalities must be positive".into()));
        }
        if x2 != x || xo != x || xr != x {
            return Err(Error::Dimension(format!(
                "state count disagrees: T is {x}x{x2}, O has {xo} columns, Gamma has {xr} rows"
            )));
        }
        if ar != a {
            return Err(Error::Dimension(format!("T has {a} actions but Gamma has {ar}")));
        }
        if reward_values.len() != r {
            return Err(Error::Dimension(format!(
                "{} reward values for {r} reward levels",
                reward_values.len()
            )));
        }
        Ok(Self {
            states: x,
            observations: y,
            actions: a,
            rewards: r,
            transition,
            observation,
            reward,
            reward_values,
        })
    }

    pub fn states(&self) -> usize {
        self.states
    }
    pub fn observations(&self) -> usize {
        self.observations
    }
    pub fn actions(&self) -> usize {
        self.actions
    }
    pub fn rewards(&self) -> usize {
        self.rewards
    }
    pub fn transition(&self) -> &Tensor3 {
        &self.transition
    }
    pub fn observation(&self) -> &DMatrix<f64> {
        &self.observation
    }
    pub fn reward(&self) -> &Tensor3 {
        &self.reward
    }
    pub fn reward_values(&self) -> &[f64] {
        &self.reward_values
    }

    /// `f_T(j | i, l)`
    #[inline]
    pub fn t(&self, i: usize, j: usize, l: usize) -> f64 {
        self.transition.get(i, j, l)
    }

    /// `f_O(e_n | i)`
    #[inline]
    pub fn o(&self, n: usize, i: usize) -> f64 {
        self.observation[(n, i)]
    }

    /// `f_R(e_m | i, l)`
    #[inline]
    pub fn gamma(&self, i: usize, l: usize, m: usize) -> f64 {
        self.reward.get(i, l, m)
    }

    /// Expected scalar reward `r̄(i, l) = Σ_m reward_values[m] · f_R(e_m | i, l)`.
    pub fn mean_reward(&self, i: usize, l: usize) -> f64 {
        (0..self.rewards)
            .map(|m| self.reward_values[m] * self.gamma(i, l, m))
            .sum()
    }

    /// Fails with [`Error::InvalidModel`] listing every violated invariant.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_model(self);
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidModel(report.join("; ")))
        }
    }
}

/// Lists every violated model invariant; an empty list means the model is valid.
pub fn validate_model(model: &PomdpModel) -> Vec<String> {
    let mut problems = Vec::new();
    let (x, y, a) = (model.states, model.observations, model.actions);

    for i in 0..x {
        for l in 0..a {
            let fiber: Vec<f64> = (0..x).map(|j| model.t(i, j, l)).collect();
            check_fiber(&fiber, &format!("T[{i},:,{l}]"), &mut problems);
        }
    }
    for i in 0..x {
        let col: Vec<f64> = (0..y).map(|n| model.o(n, i)).collect();
        check_fiber(&col, &format!("O[:,{i}]"), &mut problems);
    }
    for i in 0..x {
        for l in 0..a {
            check_fiber(model.reward.fiber(i, l), &format!("Gamma[{i},{l},:]"), &mut problems);
        }
    }
    if model.reward_values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        problems.push("reward_values must be finite and nonnegative".into());
    }
    if x > y {
        problems.push(format!("more states than observations (X = {x} > Y = {y})"));
    }
    let rank = rank_at(&model.observation, RANK_TOL);
    if rank < x {
        problems.push(format!("O is rank deficient: numerical rank {rank} < X = {x}"));
    }
    problems
}

fn check_fiber(values: &[f64], label: &str, problems: &mut Vec<String>) {
    if let Some(bad) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        problems.push(format!("{label} has a negative or non-finite entry ({bad})"));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        problems.push(format!("{label} sums to {total}, not 1"));
    }
}

/// Number of singular values above an absolute tolerance.
fn rank_at(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.iter().any(|v| !v.is_finite()) {
        return 0;
    }
    m.singular_values().iter().filter(|&&s| s > tol).count()
}

/// Stochastic memoryless policy `f_π(l | e_n)` as a `Y × A` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyDocument", into = "PolicyDocument")]
pub struct MemorylessPolicy {
    table: DMatrix<f64>,
    pi_min: f64,
}

impl MemorylessPolicy {
    pub fn new(table: DMatrix<f64>) -> Result<Self> {
        let (y, a) = table.shape();
        if y == 0 || a == 0 {
            return Err(Error::InvalidPolicy("empty policy table".into()));
        }
        for n in 0..y {
            let row = table.row(n);
            if let Some(bad) = row.iter().find(|v| !v.is_finite() || **v <= 0.0) {
                return Err(Error::InvalidPolicy(format!(
                    "row {n} has a non-positive entry ({bad}); memoryless policies need pi_min > 0"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::InvalidPolicy(format!("row {n} sums to {total}, not 1")));
            }
        }
        let pi_min = table.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self { table, pi_min })
    }

    pub fn uniform(observations: usize, actions: usize) -> Self {
        Self::new(DMatrix::from_element(observations, actions, 1.0 / actions as f64))
            .expect("uniform table is a valid policy")
    }

    pub fn observations(&self) -> usize {
        self.table.nrows()
    }
    pub fn actions(&self) -> usize {
        self.table.ncols()
    }
    pub fn table(&self) -> &DMatrix<f64> {
        &self.table
    }
    pub fn pi_min(&self) -> f64 {
        self.pi_min
    }

    /// `f_π(l | e_n)`
    #[inline]
    pub fn prob(&self, n: usize, l: usize) -> f64 {
        self.table[(n, l)]
    }

    /// Smallest probability the policy gives to action `l` over all observations.
    pub fn pi_min_for_action(&self, l: usize) -> f64 {
        self.table.column(l).iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn check_compatible(&self, model: &PomdpModel) -> Result<()> {
        if self.observations() != model.observations() || self.actions() != model.actions() {
            return Err(Error::Dimension(format!(
                "policy is {}x{} but model has Y = {}, A = {}",
                self.observations(),
                self.actions(),
                model.observations(),
                model.actions()
            )));
        }
        Ok(())
    }
}

/// `p(l | i) = Σ_n f_O(e_n | i) f_π(l | e_n)`, as an `X × A` matrix.
pub fn action_given_state(model: &PomdpModel, policy: &MemorylessPolicy) -> DMatrix<f64> {
    model.observation().transpose() * policy.table()
}

/// One `(observation, action, reward)` step of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub y: usize,
    pub a: usize,
    pub r: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub seed: Option<u64>,
    /// Debug log of the latent states, same length as `steps` when present.
    pub hidden_states: Option<Vec<usize>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self, observations: usize, actions: usize, rewards: usize) -> Result<()> {
        for step in &self.steps {
            if step.y >= observations {
                return Err(Error::IndexOutOfRange { what: "observation", index: step.y, limit: observations });
            }
            if step.a >= actions {
                return Err(Error::IndexOutOfRange { what: "action", index: step.a, limit: actions });
            }
            if step.r >= rewards {
                return Err(Error::IndexOutOfRange { what: "reward", index: step.r, limit: rewards });
            }
        }
        if let Some(hidden) = &self.hidden_states {
            if hidden.len() != self.steps.len() {
                return Err(Error::Dimension(format!(
                    "{} hidden states for {} steps",
                    hidden.len(),
                    self.steps.len()
                )));
            }
        }
        Ok(())
    }
}

// ---- JSON documents ----

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelDocument {
    version: u32,
    #[serde(rename = "X")]
    x: usize,
    #[serde(rename = "Y")]
    y: usize,
    #[serde(rename = "A")]
    a: usize,
    #[serde(rename = "R")]
    r: usize,
    #[serde(rename = "T")]
    t: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "O")]
    o: Vec<Vec<f64>>,
    #[serde(rename = "Gamma")]
    gamma: Vec<Vec<Vec<f64>>>,
    reward_values: Vec<f64>,
}

impl From<PomdpModel> for ModelDocument {
    fn from(m: PomdpModel) -> Self {
        Self {
            version: FORMAT_VERSION,
            x: m.states,
            y: m.observations,
            a: m.actions,
            r: m.rewards,
            t: m.transition.to_nested(),
            o: matrix_to_rows(&m.observation),
            gamma: m.reward.to_nested(),
            reward_values: m.reward_values,
        }
    }
}

impl TryFrom<ModelDocument> for PomdpModel {
    type Error = Error;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        if doc.version != FORMAT_VERSION {
            return Err(Error::InvalidModel(format!("unsupported model version {}", doc.version)));
        }
        let ragged = || Error::Dimension("ragged array in model document".into());
        let transition = Tensor3::from_nested(&doc.t).ok_or_else(ragged)?;
        let observation = matrix_from_rows(&doc.o).ok_or_else(ragged)?;
        let reward = Tensor3::from_nested(&doc.gamma).ok_or_else(ragged)?;
        let model = PomdpModel::new(transition, observation, reward, doc.reward_values)?;
        if (model.states, model.observations, model.actions, model.rewards) != (doc.x, doc.y, doc.a, doc.r) {
            return Err(Error::Dimension(format!(
                "declared (X, Y, A, R) = ({}, {}, {}, {}) disagrees with array shapes ({}, {}, {}, {})",
                doc.x, doc.y, doc.a, doc.r, model.states, model.observations, model.actions, model.rewards
            )));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicyDocument {
    version: u32,
    #[serde(rename = "Y")]
    y: usize,
    #[serde(rename = "A")]
    a: usize,
    #[serde(rename = "Pi")]
    pi: Vec<Vec<f64>>,
}

impl From<MemorylessPolicy> for PolicyDocument {
    fn from(p: MemorylessPolicy) -> Self {
        Self {
            version: FORMAT_VERSION,
            y: p.observations(),
            a: p.actions(),
            pi: matrix_to_rows(&p.table),
        }
    }
}

impl TryFrom<PolicyDocument> for MemorylessPolicy {
    type Error = Error;

    fn try_from(doc: PolicyDocument) -> Result<Self> {
        if doc.version != FORMAT_VERSION {
            return Err(Error::InvalidPolicy(format!("unsupported policy version {}", doc.version)));
        }
        let table = matrix_from_rows(&doc.pi)
            .ok_or_else(|| Error::Dimension("ragged policy table".into()))?;
        if table.shape() != (doc.y, doc.a) {
            return Err(Error::Dimension(format!(
                "declared policy shape {}x{} disagrees with table {}x{}",
                doc.y,
                doc.a,
                table.nrows(),
                table.ncols()
            )));
        }
        MemorylessPolicy::new(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_model() -> PomdpModel {
        let t = Tensor3::from_fn(2, 2, 1, |_, _, _| 0.5);
        let o = DMatrix::identity(2, 2);
        let g = Tensor3::from_fn(2, 1, 2, |_, _, m| if m == 0 { 0.3 } else { 0.7 });
        PomdpModel::new(t, o, g, vec![0.0, 1.0]).unwrap()
    }

    #[test]
    fn identity_model_is_valid() {
        assert!(validate_model(&identity_model()).is_empty());
    }

    #[test]
    fn duplicate_observation_columns_are_rank_deficient() {
        let m = identity_model();
        let o = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let bad = PomdpModel::new(m.transition.clone(), o, m.reward.clone(), vec![0.0, 1.0]).unwrap();
        let report = validate_model(&bad);
        assert!(report.iter().any(|p| p.contains("rank deficient")), "{report:?}");
    }

    #[test]
    fn short_transition_fiber_is_reported() {
        let m = identity_model();
        let mut t = m.transition.clone();
        t.set(0, 1, 0, 0.4);
        let bad = PomdpModel::new(t, m.observation.clone(), m.reward.clone(), vec![0.0, 1.0]).unwrap();
        let report = validate_model(&bad);
        assert_eq!(report.len(), 1);
        assert!(report[0].contains("T[0,:,0]") && report[0].contains("0.9"));
    }

    #[test]
    fn more_states_than_observations_rejected() {
        let t = Tensor3::from_fn(2, 2, 1, |_, _, _| 0.5);
        let o = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let g = Tensor3::from_fn(2, 1, 1, |_, _, _| 1.0);
        let m = PomdpModel::new(t, o, g, vec![1.0]).unwrap();
        assert!(validate_model(&m).iter().any(|p| p.contains("more states")));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let t = Tensor3::zeros(2, 2, 1);
        let o = DMatrix::identity(3, 3);
        let g = Tensor3::zeros(2, 1, 1);
        assert!(matches!(PomdpModel::new(t, o, g, vec![0.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn policy_rejects_zero_entries_and_bad_rows() {
        assert!(MemorylessPolicy::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).is_err());
        assert!(MemorylessPolicy::new(DMatrix::from_row_slice(1, 2, &[0.6, 0.6])).is_err());
        let p = MemorylessPolicy::new(DMatrix::from_row_slice(2, 2, &[0.2, 0.8, 0.5, 0.5])).unwrap();
        assert_eq!(p.pi_min(), 0.2);
        assert_eq!(p.pi_min_for_action(1), 0.5);
    }

    #[test]
    fn model_json_round_trip_is_exact() {
        let m = identity_model();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.starts_with("{\"version\":1,\"X\":2,\"Y\":2,\"A\":1,\"R\":2,\"T\":"));
        let back: PomdpModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn model_json_with_wrong_declared_size_fails() {
        let mut v = serde_json::to_value(identity_model()).unwrap();
        v["Y"] = serde_json::json!(5);
        assert!(serde_json::from_value::<PomdpModel>(v).is_err());
    }

    #[test]
    fn trajectory_validation() {
        let traj = Trajectory {
            steps: vec![Step { y: 0, a: 1, r: 0 }],
            seed: None,
            hidden_states: Some(vec![0, 1]),
        };
        assert!(matches!(traj.validate(2, 2, 2), Err(Error::Dimension(_))));
        let traj = Trajectory { hidden_states: None, ..traj };
        assert!(traj.validate(2, 2, 2).is_ok());
        assert!(matches!(traj.validate(2, 1, 2), Err(Error::IndexOutOfRange { what: "action", .. })));
    }
}
