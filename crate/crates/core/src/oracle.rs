//! Exact quantities of a known model under a known policy, bundled for
//! fixtures and for checking the estimators against ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bounds::{compute_gaps, compute_lambda, SpectralGaps};
use crate::error::Result;
use crate::linalg::matrix_to_rows;
use crate::moments::{moments_from_components, CovarianceSet, MomentDocument};
use crate::pomdp::{
    action_marginal, contraction_coefficients, expected_average_reward, induced_chain, stationary_distribution,
    MemorylessPolicy, MixingConstants, PomdpModel, FORMAT_VERSION,
};
use crate::views::{true_views_and_weights, ViewEncoding, ViewMatricesDocument};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionOracle {
    pub action: usize,
    /// `P(a = l)` under the stationary regime.
    pub probability: f64,
    /// `ω^{(l)}`
    pub weights: Vec<f64>,
    pub views: ViewMatricesDocument,
    /// `K_{ν,ν'}` keyed `"K12"`, `"K21"`, ...
    pub covariances: BTreeMap<String, Vec<Vec<f64>>>,
    pub moments: MomentDocument,
    pub gaps: SpectralGaps,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleBundle {
    pub version: u32,
    /// Induced state chain, row-stochastic.
    pub chain: Vec<Vec<f64>>,
    /// `ω_π`
    pub stationary: Vec<f64>,
    pub mixing: MixingConstants,
    /// `η(π; M)`
    pub average_reward: f64,
    pub actions: Vec<ActionOracle>,
}

pub fn oracle_bundle(model: &PomdpModel, policy: &MemorylessPolicy) -> Result<OracleBundle> {
    model.ensure_valid()?;
    policy.check_compatible(model)?;
    let chain = induced_chain(model, policy)?;
    let omega = stationary_distribution(&chain)?;
    let marginal = action_marginal(model, policy, &omega);
    let encoding = ViewEncoding::for_model(model);
    let actions = (0..model.actions())
        .map(|l| {
            let (views, weights) = true_views_and_weights(model, policy, l)?;
            let cov = CovarianceSet::exact(&views, &weights);
            let covariances = cov
                .pairs()
                .map(|((a, b), k)| (format!("K{}{}", a.number(), b.number()), matrix_to_rows(k)))
                .collect();
            let gaps = compute_gaps(model, policy, l)?;
            let lambda = compute_lambda(&gaps)?;
            Ok(ActionOracle {
                action: l,
                probability: marginal[l],
                weights: weights.iter().copied().collect(),
                moments: moments_from_components(l, &weights, &views.v3).to_document(),
                views: views.to_document(encoding),
                covariances,
                gaps,
                lambda,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(OracleBundle {
        version: FORMAT_VERSION,
        chain: matrix_to_rows(chain.matrix()),
        stationary: omega.iter().copied().collect(),
        mixing: contraction_coefficients(&chain),
        average_reward: expected_average_reward(model, policy)?,
        actions,
    })
}
