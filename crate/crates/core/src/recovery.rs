//! From decomposed views to POMDP parameters: second-view inversion, the
//! closed forms for reward and observation densities, cross-action label
//! alignment and transition recovery.

use nalgebra::{DMatrix, DVector};
use pathfinding::kuhn_munkres::kuhn_munkres_min;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::bounds::ConfidenceBounds;
use crate::error::{Error, Result};
use crate::linalg::{clip_and_normalize, column, l1_distance, l2_distance, project_to_simplex, truncated_pinv};
use crate::moments::CovarianceSet;
use crate::pomdp::{MemorylessPolicy, PomdpModel};
use crate::tensor::Tensor3;
use crate::views::{View, ViewEncoding};

/// Assignment costs are rounded to integers at this scale.
const COST_SCALE: f64 = 1e12;

/// How the second view is obtained from the third.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondViewRoute {
    /// `μ̂2 = K21 (K31)† μ̂3`
    #[default]
    Inversion,
    /// `K12 (K32)† μ̂3` as written in the algorithm listing. This reproduces the
    /// first view, so its output has `A·Y·R` rows.
    AsListed,
}

pub fn recover_second_view(v3: &DMatrix<f64>, cov: &CovarianceSet, states: usize) -> Result<DMatrix<f64>> {
    recover_view(v3, cov, states, SecondViewRoute::Inversion)
}

pub fn recover_view(v3: &DMatrix<f64>, cov: &CovarianceSet, states: usize, route: SecondViewRoute) -> Result<DMatrix<f64>> {
    let (target, source, other) = match route {
        SecondViewRoute::Inversion => (View::Second, View::Third, View::First),
        SecondViewRoute::AsListed => (View::First, View::Third, View::Second),
    };
    let what = format!("K_{{{},{}}} for action {}", source.number(), other.number(), cov.action);
    let pinv = truncated_pinv(cov.get(source, other), states, &what)?;
    Ok(cov.get(target, other) * pinv * v3)
}

fn normalized_or_uniform(v: &[f64], flagged: &mut bool) -> Vec<f64> {
    clip_and_normalize(v).unwrap_or_else(|| {
        *flagged = true;
        vec![1.0 / v.len() as f64; v.len()]
    })
}

/// `f_R(m | i, l) = Σ_n V2[(n,m), i]`, before clipping.
pub fn reward_marginal(v2: &DMatrix<f64>, enc: ViewEncoding) -> DMatrix<f64> {
    DMatrix::from_fn(v2.ncols(), enc.rewards, |i, m| {
        (0..enc.observations).map(|n| v2[(n * enc.rewards + m, i)]).sum()
    })
}

/// `X × R` reward table, rows clipped and renormalized. Rows with no positive
/// mass become uniform and are listed in the second return value.
pub fn recover_reward(v2: &DMatrix<f64>, enc: ViewEncoding) -> (DMatrix<f64>, Vec<usize>) {
    let raw = reward_marginal(v2, enc);
    let mut table = DMatrix::zeros(raw.nrows(), raw.ncols());
    let mut degenerate = Vec::new();
    for i in 0..raw.nrows() {
        let row: Vec<f64> = raw.row(i).iter().copied().collect();
        let mut flagged = false;
        let clean = normalized_or_uniform(&row, &mut flagged);
        if flagged {
            degenerate.push(i);
        }
        for (m, v) in clean.into_iter().enumerate() {
            table[(i, m)] = v;
        }
    }
    (table, degenerate)
}

fn policy_column(policy: &MemorylessPolicy, l: usize) -> Result<Vec<f64>> {
    if l >= policy.actions() {
        return Err(Error::IndexOutOfRange { what: "action", index: l, limit: policy.actions() });
    }
    let probs: Vec<f64> = (0..policy.observations()).map(|n| policy.prob(n, l)).collect();
    if let Some(n) = probs.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::InvalidPolicy(format!("f_pi({l} | {n}) = 0, division undefined")));
    }
    Ok(probs)
}

/// `ρ(i,l) = Σ_{n,m} V2[(n,m), i] / f_π(l | n)`, the reciprocal of `P(a = l | x = i)`.
pub fn recover_rho(v2: &DMatrix<f64>, policy: &MemorylessPolicy, enc: ViewEncoding, i: usize, l: usize) -> Result<f64> {
    let probs = policy_column(policy, l)?;
    if i >= v2.ncols() {
        return Err(Error::IndexOutOfRange { what: "state", index: i, limit: v2.ncols() });
    }
    Ok((0..enc.observations)
        .flat_map(|n| (0..enc.rewards).map(move |m| (n, m)))
        .map(|(n, m)| v2[(n * enc.rewards + m, i)] / probs[n])
        .sum())
}

/// Observation estimate from one action's second view.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecovery {
    /// `Y × X`, columns clipped and renormalized.
    pub observation: DMatrix<f64>,
    pub rho: Vec<f64>,
    /// Columns whose `ρ` was not positive or that carried no positive mass.
    pub degenerate: Vec<usize>,
}

/// `f_O(n | i) = Σ_m V2[(n,m), i] / (f_π(l | n) ρ(i,l))`.
pub fn recover_observation(v2: &DMatrix<f64>, policy: &MemorylessPolicy, enc: ViewEncoding, l: usize) -> Result<ObservationRecovery> {
    let probs = policy_column(policy, l)?;
    let x = v2.ncols();
    let mut observation = DMatrix::zeros(enc.observations, x);
    let mut rho = Vec::with_capacity(x);
    let mut degenerate = Vec::new();
    for i in 0..x {
        let r = recover_rho(v2, policy, enc, i, l)?;
        rho.push(r);
        let mut flagged = !(r > 0.0);
        let scale = if flagged { 1.0 } else { r };
        let raw: Vec<f64> = (0..enc.observations)
            .map(|n| (0..enc.rewards).map(|m| v2[(n * enc.rewards + m, i)]).sum::<f64>() / (probs[n] * scale))
            .collect();
        let clean = normalized_or_uniform(&raw, &mut flagged);
        if flagged {
            degenerate.push(i);
        }
        observation.set_column(i, &DVector::from_vec(clean));
    }
    Ok(ObservationRecovery { observation, rho, degenerate })
}

/// `d_O = min_{x≠x'} ‖f_O(·|x) − f_O(·|x')‖₁`.
pub fn separability(o: &DMatrix<f64>) -> Result<f64> {
    let x = o.ncols();
    if x < 2 {
        return Err(Error::InvalidParameter(format!("separability needs at least 2 states, got {x}")));
    }
    let cols: Vec<Vec<f64>> = (0..x).map(|i| column(o, i)).collect();
    let mut best = f64::INFINITY;
    for i in 0..x {
        for j in i + 1..x {
            best = best.min(l1_distance(&cols[i], &cols[j]));
        }
    }
    Ok(best)
}

/// Reference action `argmin_l B_O^{(l)}` over actions with a defined bound;
/// ties go to the smaller index. Actions without a bound are reported.
pub fn select_reference_action(bounds: &[Option<f64>]) -> Result<(usize, Vec<String>)> {
    let warnings = bounds
        .iter()
        .enumerate()
        .filter(|(_, b)| b.is_none())
        .map(|(l, _)| format!("action {l} has no observation bound and is not a reference candidate"))
        .collect();
    let best = bounds
        .iter()
        .enumerate()
        .filter_map(|(l, b)| b.map(|b| (l, b)))
        .fold(None, |acc: Option<(usize, f64)>, (l, b)| match acc {
            Some((_, best)) if best <= b => acc,
            _ => Some((l, b)),
        });
    match best {
        Some((l, _)) => Ok((l, warnings)),
        None => Err(Error::InvalidParameter("no action has a defined observation bound".into())),
    }
}

/// Column matching of one action's observation estimate onto the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// `permutation[j]` is the column of this action's estimate matched to reference column `j`.
    pub permutation: Vec<usize>,
    /// Total ℓ1 cost of the matching.
    pub cost: f64,
    pub warning: Option<String>,
}

/// Minimum-cost bijection between the columns of `estimate` and `reference` under ℓ1.
pub fn match_columns(estimate: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<(Vec<usize>, f64)> {
    if estimate.shape() != reference.shape() {
        return Err(Error::Dimension(format!(
            "cannot match {:?} columns against {:?}",
            estimate.shape(),
            reference.shape()
        )));
    }
    let x = reference.ncols();
    if x == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let est: Vec<Vec<f64>> = (0..x).map(|i| column(estimate, i)).collect();
    let refs: Vec<Vec<f64>> = (0..x).map(|i| column(reference, i)).collect();
    let costs: Vec<Vec<f64>> = refs.iter().map(|r| est.iter().map(|e| l1_distance(r, e)).collect()).collect();
    let weights = Matrix::from_rows(costs.iter().map(|row| row.iter().map(|c| (c * COST_SCALE).round() as i64)))
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let (_, permutation) = kuhn_munkres_min(&weights);
    let cost = permutation.iter().enumerate().map(|(j, &i)| costs[j][i]).sum();
    Ok((permutation, cost))
}

/// Aligns every action's observation estimate to that of `reference`; the
/// reference action gets the identity. A warning is attached when the total
/// cost exceeds `X·d_O/4`, with `d_O` taken from the reference estimate.
pub fn align_permutations(observations: &[DMatrix<f64>], reference: usize) -> Result<Vec<Alignment>> {
    let Some(target) = observations.get(reference) else {
        return Err(Error::IndexOutOfRange { what: "reference action", index: reference, limit: observations.len() });
    };
    let x = target.ncols();
    let d_o = if x >= 2 { Some(separability(target)?) } else { None };
    observations
        .iter()
        .enumerate()
        .map(|(l, est)| {
            if l == reference {
                return Ok(Alignment { permutation: (0..x).collect(), cost: 0.0, warning: None });
            }
            let (permutation, cost) = match_columns(est, target)?;
            let warning = d_o.and_then(|d| {
                let limit = x as f64 * d / 4.0;
                (cost > limit).then(|| {
                    format!("action {l}: alignment cost {cost:.4} exceeds X*d_O/4 = {limit:.4}, labels may be unreliable")
                })
            });
            Ok(Alignment { permutation, cost, warning })
        })
        .collect()
}

/// Reorders columns so that new column `j` is old column `permutation[j]`.
pub fn permute_columns(m: &DMatrix<f64>, permutation: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), permutation.len(), |r, c| m[(r, permutation[c])])
}

pub fn permute_rows(m: &DMatrix<f64>, permutation: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(permutation.len(), m.ncols(), |r, c| m[(permutation[r], c)])
}

pub fn permute_vector(v: &DVector<f64>, permutation: &[usize]) -> DVector<f64> {
    DVector::from_iterator(permutation.len(), permutation.iter().map(|&i| v[i]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecovery {
    /// Row `i` is `Ô† V̂3[:, i]`.
    pub raw: DMatrix<f64>,
    /// Rows projected onto the probability simplex.
    pub projected: DMatrix<f64>,
}

/// `T[i, :, l] = Ô† V3[:, i]` for every state `i`.
pub fn recover_transition(v3: &DMatrix<f64>, observation: &DMatrix<f64>) -> Result<TransitionRecovery> {
    if v3.nrows() != observation.nrows() || v3.ncols() != observation.ncols() {
        return Err(Error::Dimension(format!(
            "V3 is {:?} but the observation estimate is {:?}",
            v3.shape(),
            observation.shape()
        )));
    }
    let x = observation.ncols();
    let pinv = truncated_pinv(observation, x, "estimated observation matrix")?;
    let raw = (pinv * v3).transpose();
    let mut projected = DMatrix::zeros(x, x);
    for i in 0..x {
        let row: Vec<f64> = raw.row(i).iter().copied().collect();
        for (j, v) in project_to_simplex(&row).into_iter().enumerate() {
            projected[(i, j)] = v;
        }
    }
    Ok(TransitionRecovery { raw, projected })
}

/// Everything recovered for one action, in that action's own latent labeling
/// until [`ActionEstimate::permuted`] is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEstimate {
    pub action: usize,
    pub samples: Option<usize>,
    /// `(Y·R) × X`
    pub v2: DMatrix<f64>,
    /// `Y × X`, unnormalized output of the decomposition.
    pub v3: DMatrix<f64>,
    pub weights: DVector<f64>,
    /// `Y × X`
    pub observation: DMatrix<f64>,
    /// `X × R`
    pub reward: DMatrix<f64>,
    pub rho: Vec<f64>,
    pub diagnostics: Vec<String>,
}

impl ActionEstimate {
    /// Recovers the second view and the reward and observation densities.
    pub fn recover(
        action: usize,
        samples: Option<usize>,
        v3: DMatrix<f64>,
        weights: DVector<f64>,
        cov: &CovarianceSet,
        policy: &MemorylessPolicy,
        enc: ViewEncoding,
    ) -> Result<Self> {
        let x = v3.ncols();
        let v2 = recover_second_view(&v3, cov, x)?;
        let (reward, bad_rewards) = recover_reward(&v2, enc);
        let obs = recover_observation(&v2, policy, enc, action)?;
        let mut diagnostics = Vec::new();
        if !bad_rewards.is_empty() {
            diagnostics.push(format!("action {action}: reward rows {bad_rewards:?} had no mass, set to uniform"));
        }
        if !obs.degenerate.is_empty() {
            diagnostics.push(format!(
                "action {action}: observation columns {:?} were degenerate, set to uniform or rescaled",
                obs.degenerate
            ));
        }
        Ok(Self {
            action,
            samples,
            v2,
            v3,
            weights,
            observation: obs.observation,
            reward,
            rho: obs.rho,
            diagnostics,
        })
    }

    /// Relabels the latent states: new state `j` is old state `permutation[j]`.
    pub fn permuted(&self, permutation: &[usize]) -> Self {
        Self {
            v2: permute_columns(&self.v2, permutation),
            v3: permute_columns(&self.v3, permutation),
            weights: permute_vector(&self.weights, permutation),
            observation: permute_columns(&self.observation, permutation),
            reward: permute_rows(&self.reward, permutation),
            rho: permutation.iter().map(|&i| self.rho[i]).collect(),
            ..self.clone()
        }
    }
}

/// A complete model estimate in the reference action's labeling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PomdpEstimate {
    /// Projected transitions, the reference observation estimate and the rewards.
    pub model: PomdpModel,
    pub reference_action: usize,
    /// Per action, `permutation[j]` is that action's original label of state `j`.
    pub permutations: Vec<Vec<usize>>,
    pub alignment_costs: Vec<f64>,
    /// `f̂_O^{(l)}` for every action after alignment, rows of `Y × X` tables.
    pub observation_per_action: Vec<Vec<Vec<f64>>>,
    /// Transition rows before simplex projection.
    pub transition_raw: Tensor3,
    pub bounds: Vec<Option<ConfidenceBounds>>,
    pub warnings: Vec<String>,
}

impl PomdpEstimate {
    pub fn observation_for_action(&self, l: usize) -> DMatrix<f64> {
        crate::linalg::matrix_from_rows(&self.observation_per_action[l]).expect("rectangular by construction")
    }
}

/// Aligns, recovers transitions against the reference observation estimate and
/// collates everything into one model. `estimates[l]` must belong to action `l`.
pub fn assemble_estimate(
    estimates: &[ActionEstimate],
    reference: usize,
    bounds: Vec<Option<ConfidenceBounds>>,
    reward_values: Vec<f64>,
) -> Result<PomdpEstimate> {
    let a = estimates.len();
    if a == 0 {
        return Err(Error::InvalidParameter("no action estimates to assemble".into()));
    }
    if let Some((l, e)) = estimates.iter().enumerate().find(|(l, e)| e.action != *l) {
        return Err(Error::InvalidParameter(format!("estimate in slot {l} belongs to action {}", e.action)));
    }
    if bounds.len() != a {
        return Err(Error::Dimension(format!("{} bounds for {a} actions", bounds.len())));
    }
    let x = estimates[0].v3.ncols();
    let y = estimates[0].observation.nrows();
    let r = estimates[0].reward.ncols();
    if reward_values.len() != r {
        return Err(Error::Dimension(format!("{} reward values for R = {r}", reward_values.len())));
    }
    let observations: Vec<DMatrix<f64>> = estimates.iter().map(|e| e.observation.clone()).collect();
    let alignments = align_permutations(&observations, reference)?;
    let aligned: Vec<ActionEstimate> =
        estimates.iter().zip(&alignments).map(|(e, al)| e.permuted(&al.permutation)).collect();

    let o_hat = aligned[reference].observation.clone();
    let mut transition = Tensor3::zeros(x, x, a);
    let mut transition_raw = Tensor3::zeros(x, x, a);
    let mut reward = Tensor3::zeros(x, a, r);
    for (l, est) in aligned.iter().enumerate() {
        let tr = recover_transition(&est.v3, &o_hat)?;
        for i in 0..x {
            for j in 0..x {
                transition.set(i, j, l, tr.projected[(i, j)]);
                transition_raw.set(i, j, l, tr.raw[(i, j)]);
            }
            for m in 0..r {
                reward.set(i, l, m, est.reward[(i, m)]);
            }
        }
    }
    let mut warnings: Vec<String> = aligned.iter().flat_map(|e| e.diagnostics.iter().cloned()).collect();
    warnings.extend(alignments.iter().filter_map(|al| al.warning.clone()));
    debug_assert_eq!(o_hat.nrows(), y);
    let model = PomdpModel::new(transition, o_hat, reward, reward_values)?;
    Ok(PomdpEstimate {
        model,
        reference_action: reference,
        permutations: alignments.iter().map(|al| al.permutation.clone()).collect(),
        alignment_costs: alignments.iter().map(|al| al.cost).collect(),
        observation_per_action: aligned.iter().map(|e| crate::linalg::matrix_to_rows(&e.observation)).collect(),
        transition_raw,
        bounds,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub state: usize,
    pub action: usize,
    pub err_o_l1: f64,
    pub err_r_l1: f64,
    pub err_t_l2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// `permutation[j]` is the estimated state matched to true state `j`.
    pub permutation: Vec<usize>,
    /// Errors of each action's own observation estimate sit in `err_o_l1`.
    pub entries: Vec<ErrorEntry>,
    /// Per true state, ℓ1 error of the selected observation estimate.
    pub selected_o: Vec<f64>,
    /// Maximum of `selected_o`.
    pub max_o: f64,
    pub max_r: f64,
    pub max_t: f64,
}

impl ErrorReport {
    pub fn max_for_action(&self, l: usize) -> (f64, f64, f64) {
        self.entries.iter().filter(|e| e.action == l).fold((0.0, 0.0, 0.0), |(o, r, t), e| {
            (o.max(e.err_o_l1), r.max(e.err_r_l1), t.max(e.err_t_l2))
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("state,action,err_O_l1,err_R_l1,err_T_l2\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{},{},{}\n", e.state, e.action, e.err_o_l1, e.err_r_l1, e.err_t_l2));
        }
        out
    }
}

/// Per-(state, action) errors after matching the estimated states to the true
/// ones by minimum ℓ1 cost on the observation columns.
pub fn evaluate_errors(estimate: &PomdpEstimate, truth: &PomdpModel) -> Result<ErrorReport> {
    let est = &estimate.model;
    let dims = |m: &PomdpModel| (m.states(), m.observations(), m.actions(), m.rewards());
    if dims(est) != dims(truth) {
        return Err(Error::Dimension(format!(
            "estimate has (X,Y,A,R) = {:?}, truth has {:?}",
            dims(est),
            dims(truth)
        )));
    }
    let (x, y, a, r) = dims(truth);
    let (permutation, _) = match_columns(est.observation(), truth.observation())?;
    let mut entries = Vec::with_capacity(x * a);
    for l in 0..a {
        let o_l = estimate.observation_for_action(l);
        for j in 0..x {
            let p = permutation[j];
            let o_true: Vec<f64> = (0..y).map(|n| truth.o(n, j)).collect();
            let r_hat: Vec<f64> = (0..r).map(|m| est.gamma(p, l, m)).collect();
            let r_true: Vec<f64> = (0..r).map(|m| truth.gamma(j, l, m)).collect();
            let t_hat: Vec<f64> = (0..x).map(|k| est.t(p, permutation[k], l)).collect();
            let t_true: Vec<f64> = (0..x).map(|k| truth.t(j, k, l)).collect();
            entries.push(ErrorEntry {
                state: j,
                action: l,
                err_o_l1: l1_distance(&column(&o_l, p), &o_true),
                err_r_l1: l1_distance(&r_hat, &r_true),
                err_t_l2: l2_distance(&t_hat, &t_true),
            });
        }
    }
    let selected_o: Vec<f64> = (0..x)
        .map(|j| {
            let o_true: Vec<f64> = (0..y).map(|n| truth.o(n, j)).collect();
            l1_distance(&column(est.observation(), permutation[j]), &o_true)
        })
        .collect();
    let max = |f: fn(&ErrorEntry) -> f64| entries.iter().map(f).fold(0.0, f64::max);
    Ok(ErrorReport {
        max_o: selected_o.iter().copied().fold(0.0, f64::max),
        selected_o,
        max_r: max(|e| e.err_r_l1),
        max_t: max(|e| e.err_t_l2),
        permutation,
        entries,
    })
}
