//! Three-view encoding of trajectory windows around each occurrence of an action.
//!
//! For a step `t` with `a_t = l`, the views are
//!
//! * `v1`: `(a_{t-1}, y_{t-1}, r_{t-1})`, one-hot in `A·Y·R` coordinates,
//! * `v2`: `(y_t, r_t)`, one-hot in `Y·R` coordinates,
//! * `v3`: `y_{t+1}`, one-hot in `Y` coordinates.
//!
//! Conditionally on the latent state `x_t` and on `a_t = l` the three views are
//! independent, which is what makes the moment method work. Tuple indices are
//! flattened row-major: `s1 = (k·Y + n)·R + m` and `s2 = n·R + m`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kth_singular_value, matrix_to_rows, singular_values};
use crate::pomdp::{
    action_given_state, condition_on_action, induced_chain, stationary_distribution, MemorylessPolicy,
    PomdpModel, Trajectory,
};

/// Tag identifying the `(k, n, m)` row-major flattening in serialized matrices.
pub const ENCODING_TAG: &str = "row-major(k,n,m)/v1";

/// Singular-value floor below which a view matrix counts as rank deficient.
pub const VIEW_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewEncoding {
    pub observations: usize,
    pub actions: usize,
    pub rewards: usize,
}

impl ViewEncoding {
    pub fn new(observations: usize, actions: usize, rewards: usize) -> Self {
        Self { observations, actions, rewards }
    }

    pub fn for_model(model: &PomdpModel) -> Self {
        Self::new(model.observations(), model.actions(), model.rewards())
    }

    /// `A·Y·R`
    pub fn d1(&self) -> usize {
        self.actions * self.observations * self.rewards
    }
    /// `Y·R`
    pub fn d2(&self) -> usize {
        self.observations * self.rewards
    }
    /// `Y`
    pub fn d3(&self) -> usize {
        self.observations
    }

    pub fn dim(&self, view: View) -> usize {
        match view {
            View::First => self.d1(),
            View::Second => self.d2(),
            View::Third => self.d3(),
        }
    }

    fn check(&self, what: &'static str, index: usize, limit: usize) -> Result<()> {
        if index >= limit {
            Err(Error::IndexOutOfRange { what, index, limit })
        } else {
            Ok(())
        }
    }

    pub fn first_view_index(&self, k: usize, n: usize, m: usize) -> Result<usize> {
        self.check("action", k, self.actions)?;
        self.check("observation", n, self.observations)?;
        self.check("reward", m, self.rewards)?;
        Ok((k * self.observations + n) * self.rewards + m)
    }

    pub fn decode_first_view(&self, s: usize) -> Result<(usize, usize, usize)> {
        self.check("first-view index", s, self.d1())?;
        let m = s % self.rewards;
        let n = (s / self.rewards) % self.observations;
        let k = s / (self.rewards * self.observations);
        Ok((k, n, m))
    }

    pub fn second_view_index(&self, n: usize, m: usize) -> Result<usize> {
        self.check("observation", n, self.observations)?;
        self.check("reward", m, self.rewards)?;
        Ok(n * self.rewards + m)
    }

    pub fn decode_second_view(&self, s: usize) -> Result<(usize, usize)> {
        self.check("second-view index", s, self.d2())?;
        Ok((s / self.rewards, s % self.rewards))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum View {
    First,
    Second,
    Third,
}

impl View {
    pub const ALL: [View; 3] = [View::First, View::Second, View::Third];

    pub fn number(self) -> usize {
        match self {
            View::First => 1,
            View::Second => 2,
            View::Third => 3,
        }
    }
}

/// Flattened view indices of one window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ViewTriple {
    pub s1: usize,
    pub s2: usize,
    pub s3: usize,
}

impl ViewTriple {
    pub fn get(&self, view: View) -> usize {
        match view {
            View::First => self.s1,
            View::Second => self.s2,
            View::Third => self.s3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionViewSamples {
    pub action: usize,
    pub encoding: ViewEncoding,
    pub triples: Vec<ViewTriple>,
}

impl ActionViewSamples {
    /// `N(l)`
    pub fn count(&self) -> usize {
        self.triples.len()
    }
}

/// Collects one triple for every zero-based `t ∈ [1, N−2]` with `a_t = l`.
pub fn collect_views(traj: &Trajectory, l: usize, enc: ViewEncoding) -> Result<ActionViewSamples> {
    traj.validate(enc.observations, enc.actions, enc.rewards)?;
    let steps = &traj.steps;
    let triples = if steps.len() < 3 {
        Vec::new()
    } else {
        (1..steps.len() - 1)
            .filter(|&t| steps[t].a == l)
            .map(|t| {
                let (prev, cur, next) = (steps[t - 1], steps[t], steps[t + 1]);
                Ok(ViewTriple {
                    s1: enc.first_view_index(prev.a, prev.y, prev.r)?,
                    s2: enc.second_view_index(cur.y, cur.r)?,
                    s3: next.y,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    Ok(ActionViewSamples { action: l, encoding: enc, triples })
}

/// A finitely supported distribution over view triples: either the empirical
/// frequencies of a sample set or the exact law under a known model.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewDistribution {
    pub encoding: ViewEncoding,
    pub entries: Vec<(ViewTriple, f64)>,
}

impl ViewDistribution {
    pub fn empirical(samples: &ActionViewSamples) -> Result<Self> {
        let count = samples.count();
        if count == 0 {
            return Err(Error::InsufficientSamples {
                action: samples.action,
                reason: "no steps with this action in the interior of the trajectory".into(),
            });
        }
        let mut counts: BTreeMap<ViewTriple, usize> = BTreeMap::new();
        for t in &samples.triples {
            *counts.entry(*t).or_default() += 1;
        }
        let entries = counts.into_iter().map(|(t, c)| (t, c as f64 / count as f64)).collect();
        Ok(Self { encoding: samples.encoding, entries })
    }

    /// `P(s1, s2, s3 | a = l) = Σ_i ω^{(l)}(i) V1[s1,i] V2[s2,i] V3[s3,i]`.
    pub fn exact(views: &ViewMatrices, weights: &DVector<f64>, encoding: ViewEncoding) -> Self {
        let x = weights.len();
        let mut entries = Vec::new();
        for s1 in 0..views.v1.nrows() {
            for s2 in 0..views.v2.nrows() {
                for s3 in 0..views.v3.nrows() {
                    let p: f64 = (0..x)
                        .map(|i| weights[i] * views.v1[(s1, i)] * views.v2[(s2, i)] * views.v3[(s3, i)])
                        .sum();
                    if p > 0.0 {
                        entries.push((ViewTriple { s1, s2, s3 }, p));
                    }
                }
            }
        }
        Self { encoding, entries }
    }
}

/// Columns are the conditional laws of each view given the latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMatrices {
    pub action: usize,
    /// `A·Y·R × X`
    pub v1: DMatrix<f64>,
    /// `Y·R × X`
    pub v2: DMatrix<f64>,
    /// `Y × X`
    pub v3: DMatrix<f64>,
}

impl ViewMatrices {
    pub fn get(&self, view: View) -> &DMatrix<f64> {
        match view {
            View::First => &self.v1,
            View::Second => &self.v2,
            View::Third => &self.v3,
        }
    }

    pub fn to_document(&self, encoding: ViewEncoding) -> ViewMatricesDocument {
        ViewMatricesDocument {
            encoding: ENCODING_TAG.to_string(),
            action: self.action,
            states: self.v3.ncols(),
            observations: encoding.observations,
            actions: encoding.actions,
            rewards: encoding.rewards,
            d1: encoding.d1(),
            d2: encoding.d2(),
            d3: encoding.d3(),
            v1: matrix_to_rows(&self.v1),
            v2: matrix_to_rows(&self.v2),
            v3: matrix_to_rows(&self.v3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMatricesDocument {
    pub encoding: String,
    pub action: usize,
    #[serde(rename = "X")]
    pub states: usize,
    #[serde(rename = "Y")]
    pub observations: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "R")]
    pub rewards: usize,
    pub d1: usize,
    pub d2: usize,
    pub d3: usize,
    #[serde(rename = "V1")]
    pub v1: Vec<Vec<f64>>,
    #[serde(rename = "V2")]
    pub v2: Vec<Vec<f64>>,
    #[serde(rename = "V3")]
    pub v3: Vec<Vec<f64>>,
}

/// Exact view matrices for action `l` under the stationary regime of `policy`.
pub fn true_view_matrices(model: &PomdpModel, policy: &MemorylessPolicy, l: usize) -> Result<ViewMatrices> {
    true_views_and_weights(model, policy, l).map(|(views, _)| views)
}

/// Exact view matrices paired with `ω^{(l)}`, sharing one stationary solve.
pub fn true_views_and_weights(
    model: &PomdpModel,
    policy: &MemorylessPolicy,
    l: usize,
) -> Result<(ViewMatrices, DVector<f64>)> {
    model.ensure_valid()?;
    policy.check_compatible(model)?;
    if l >= model.actions() {
        return Err(Error::IndexOutOfRange { what: "action", index: l, limit: model.actions() });
    }
    let omega = stationary_distribution(&induced_chain(model, policy)?)?;
    let views = view_matrices_given_stationary(model, policy, &omega, l);
    for view in View::ALL {
        let m = views.get(view);
        let sigma = kth_singular_value(m, model.states());
        if sigma <= VIEW_RANK_TOL {
            return Err(Error::RankDeficient {
                what: format!("V{} for action {l} (sigma_X = {sigma:.3e})", view.number()),
                rank: singular_values(m).iter().filter(|&&s| s > VIEW_RANK_TOL).count(),
                required: model.states(),
            });
        }
    }
    Ok((views, condition_on_action(model, policy, &omega, l)))
}

/// View matrices from a known stationary distribution, without rank checks.
pub(crate) fn view_matrices_given_stationary(
    model: &PomdpModel,
    policy: &MemorylessPolicy,
    omega: &DVector<f64>,
    l: usize,
) -> ViewMatrices {
    let (x, y, a, r) = (model.states(), model.observations(), model.actions(), model.rewards());
    let enc = ViewEncoding::for_model(model);
    let p_action = action_given_state(model, policy);

    let v3 = DMatrix::from_fn(y, x, |n, i| (0..x).map(|j| model.o(n, j) * model.t(i, j, l)).sum());

    let mut v2 = DMatrix::zeros(y * r, x);
    for i in 0..x {
        for n in 0..y {
            for m in 0..r {
                v2[(enc.second_view_index(n, m).unwrap(), i)] =
                    model.o(n, i) * policy.prob(n, l) * model.gamma(i, l, m) / p_action[(i, l)];
            }
        }
    }

    let mut v1 = DMatrix::zeros(a * y * r, x);
    for i in 0..x {
        for k in 0..a {
            for n in 0..y {
                for m in 0..r {
                    let mass: f64 = (0..x)
                        .map(|j| omega[j] * model.o(n, j) * policy.prob(n, k) * model.gamma(j, k, m) * model.t(j, i, k))
                        .sum();
                    v1[(enc.first_view_index(k, n, m).unwrap(), i)] = mass / omega[i];
                }
            }
        }
    }
    ViewMatrices { action: l, v1, v2, v3 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pomdp::Step;
    use crate::tensor::Tensor3;
    use proptest::prelude::*;

    #[test]
    fn first_view_index_examples() {
        let enc = ViewEncoding::new(3, 2, 2);
        assert_eq!(enc.first_view_index(0, 0, 0).unwrap(), 0);
        assert_eq!(enc.first_view_index(1, 2, 1).unwrap(), 11);
        assert_eq!(enc.first_view_index(1, 2, 1).unwrap(), enc.d1() - 1);
        assert!(enc.first_view_index(2, 0, 0).is_err());
    }

    #[test]
    fn second_view_index_examples() {
        let enc = ViewEncoding::new(3, 2, 2);
        assert_eq!(enc.second_view_index(0, 0).unwrap(), 0);
        assert_eq!(enc.second_view_index(2, 1).unwrap(), 5);
        assert_eq!(enc.second_view_index(2, 1).unwrap(), enc.d2() - 1);
        assert!(enc.second_view_index(0, 2).is_err());
    }

    proptest! {
        #[test]
        fn encodings_are_bijections(y in 1usize..5, a in 1usize..4, r in 1usize..4) {
            let enc = ViewEncoding::new(y, a, r);
            let mut seen = vec![false; enc.d1()];
            for k in 0..a { for n in 0..y { for m in 0..r {
                let s = enc.first_view_index(k, n, m).unwrap();
                prop_assert!(!seen[s]);
                seen[s] = true;
                prop_assert_eq!(enc.decode_first_view(s).unwrap(), (k, n, m));
            }}}
            for n in 0..y { for m in 0..r {
                let s = enc.second_view_index(n, m).unwrap();
                prop_assert_eq!(enc.decode_second_view(s).unwrap(), (n, m));
            }}
        }
    }

    fn traj(actions: &[usize]) -> Trajectory {
        Trajectory {
            steps: actions.iter().enumerate().map(|(t, &a)| Step { y: t % 2, a, r: (t / 2) % 2 }).collect(),
            seed: None,
            hidden_states: None,
        }
    }

    #[test]
    fn absent_action_gives_no_samples() {
        let enc = ViewEncoding::new(2, 3, 2);
        let s = collect_views(&traj(&[0, 1, 0, 1]), 2, enc).unwrap();
        assert_eq!(s.count(), 0);
        assert!(ViewDistribution::empirical(&s).is_err());
    }

    #[test]
    fn three_step_window() {
        let enc = ViewEncoding::new(2, 2, 2);
        let t = traj(&[1, 0, 1]);
        let s = collect_views(&t, 0, enc).unwrap();
        assert_eq!(s.count(), 1);
        let expected = ViewTriple {
            s1: enc.first_view_index(1, 0, 0).unwrap(),
            s2: enc.second_view_index(1, 0).unwrap(),
            s3: 0,
        };
        assert_eq!(s.triples, vec![expected]);
        // endpoints are never centers
        assert_eq!(collect_views(&t, 1, enc).unwrap().count(), 0);
    }

    #[test]
    fn single_state_views_are_marginals() {
        let t = Tensor3::from_fn(1, 1, 2, |_, _, _| 1.0);
        let o = DMatrix::from_column_slice(3, 1, &[0.2, 0.3, 0.5]);
        let g = Tensor3::from_nested(&[vec![vec![0.4, 0.6], vec![0.9, 0.1]]]).unwrap();
        let model = PomdpModel::new(t, o, g, vec![0.0, 1.0]).unwrap();
        let policy = MemorylessPolicy::new(DMatrix::from_row_slice(3, 2, &[0.5, 0.5, 0.25, 0.75, 0.1, 0.9])).unwrap();
        let v = true_view_matrices(&model, &policy, 1).unwrap();
        for m in [&v.v1, &v.v2, &v.v3] {
            assert_eq!(m.ncols(), 1);
            assert!((m.sum() - 1.0).abs() < 1e-12);
        }
        assert!((v.v3 - model.observation()).norm() < 1e-15);
    }

    #[test]
    fn identity_emission_deterministic_transition() {
        // successor of i under action 0 is (i + 1) mod 2, under action 1 it stays
        let t = Tensor3::from_fn(2, 2, 2, |i, j, l| {
            let succ = if l == 0 { (i + 1) % 2 } else { i };
            if j == succ { 1.0 } else { 0.0 }
        });
        let o = DMatrix::identity(2, 2);
        let g = Tensor3::from_fn(2, 2, 1, |_, _, _| 1.0);
        let model = PomdpModel::new(t, o, g, vec![1.0]).unwrap();
        let policy = MemorylessPolicy::uniform(2, 2);
        let v = true_view_matrices(&model, &policy, 0).unwrap();
        assert_eq!(v.v3, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn document_carries_encoding_metadata() {
        let t = Tensor3::from_fn(1, 1, 1, |_, _, _| 1.0);
        let o = DMatrix::from_column_slice(2, 1, &[0.5, 0.5]);
        let g = Tensor3::from_fn(1, 1, 1, |_, _, _| 1.0);
        let model = PomdpModel::new(t, o, g, vec![0.0]).unwrap();
        let v = true_view_matrices(&model, &MemorylessPolicy::uniform(2, 1), 0).unwrap();
        let doc = v.to_document(ViewEncoding::for_model(&model));
        let json = serde_json::to_value(&doc).unwrap();
        assert_eq!(json["encoding"], ENCODING_TAG);
        assert_eq!(json["d1"], 2);
        assert_eq!(json["V3"].as_array().unwrap().len(), 2);
    }
}
