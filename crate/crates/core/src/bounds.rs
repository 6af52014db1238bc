//! Problem-dependent conditioning quantities, per-action confidence radii,
//! the sample-size condition and the Markov-chain matrix concentration bound.
//!
//! The numerical constants `C_O`, `C_R`, `C_T` and the scale `Θ^{(l)}` are
//! inputs. With their defaults of 1 the radii are structural quantities: they
//! scale correctly in `N(l)`, `λ^{(l)}` and the cardinalities but are not
//! calibrated coverage statements.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::kth_singular_value;
use crate::moments::CovarianceSet;
use crate::pomdp::{MemorylessPolicy, PomdpModel};
use crate::recovery::separability;
use crate::views::{true_views_and_weights, View};

/// Gaps at or below this are treated as a degenerate instance.
pub const GAP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapSource {
    /// Computed from the true model.
    Oracle,
    /// Computed from estimated covariances and views.
    PlugIn,
}

/// Singular-value gaps and floors entering `λ^{(l)}` and the sample-size condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralGaps {
    pub action: usize,
    pub source: GapSource,
    /// `σ_X(K_{ν,ν'})` for the six tracked pairs, keyed `"12"`, `"21"`, ...
    pub sigma_k12: f64,
    pub sigma_k21: f64,
    pub sigma_k13: f64,
    pub sigma_k31: f64,
    pub sigma_k23: f64,
    pub sigma_k32: f64,
    pub sigma_min_v1: f64,
    pub sigma_min_v2: f64,
    pub sigma_min_v3: f64,
    pub omega_min: f64,
    /// `min_n f_π(l | e_n)`
    pub pi_min: f64,
    pub sigma_min_o: f64,
    /// Column separability of `O`; undefined for a single state.
    pub separability: Option<f64>,
}

impl SpectralGaps {
    pub fn min_view_sigma(&self) -> f64 {
        self.sigma_min_v1.min(self.sigma_min_v2).min(self.sigma_min_v3)
    }

    fn named(&self) -> [(&'static str, f64); 12] {
        [
            ("sigma_X(K_12)", self.sigma_k12),
            ("sigma_X(K_21)", self.sigma_k21),
            ("sigma_X(K_13)", self.sigma_k13),
            ("sigma_X(K_31)", self.sigma_k31),
            ("sigma_X(K_23)", self.sigma_k23),
            ("sigma_X(K_32)", self.sigma_k32),
            ("sigma_min(V1)", self.sigma_min_v1),
            ("sigma_min(V2)", self.sigma_min_v2),
            ("sigma_min(V3)", self.sigma_min_v3),
            ("omega_min", self.omega_min),
            ("pi_min", self.pi_min),
            ("sigma_min(O)", self.sigma_min_o),
        ]
    }

    fn ensure_positive(self) -> Result<Self> {
        for (name, value) in self.named() {
            if !(value > GAP_TOL) {
                return Err(Error::DegenerateInstance {
                    quantity: format!("{name} for action {}", self.action),
                    value,
                });
            }
        }
        Ok(self)
    }
}

/// Everything [`gaps_from_parts`] needs; the same routine serves oracle and plug-in modes.
pub struct GapInputs<'a> {
    pub action: usize,
    pub states: usize,
    pub covariances: &'a CovarianceSet,
    pub v1: &'a DMatrix<f64>,
    pub v2: &'a DMatrix<f64>,
    pub v3: &'a DMatrix<f64>,
    pub weights: &'a DVector<f64>,
    pub policy: &'a MemorylessPolicy,
    pub observation: &'a DMatrix<f64>,
}

pub fn gaps_from_parts(inputs: &GapInputs<'_>, source: GapSource) -> Result<SpectralGaps> {
    let x = inputs.states;
    let k = |a, b| kth_singular_value(inputs.covariances.get(a, b), x);
    let separability = if x >= 2 { Some(separability(inputs.observation)?) } else { None };
    SpectralGaps {
        action: inputs.action,
        source,
        sigma_k12: k(View::First, View::Second),
        sigma_k21: k(View::Second, View::First),
        sigma_k13: k(View::First, View::Third),
        sigma_k31: k(View::Third, View::First),
        sigma_k23: k(View::Second, View::Third),
        sigma_k32: k(View::Third, View::Second),
        sigma_min_v1: kth_singular_value(inputs.v1, x),
        sigma_min_v2: kth_singular_value(inputs.v2, x),
        sigma_min_v3: kth_singular_value(inputs.v3, x),
        omega_min: inputs.weights.min(),
        pi_min: inputs.policy.pi_min_for_action(inputs.action),
        sigma_min_o: kth_singular_value(inputs.observation, x),
        separability,
    }
    .ensure_positive()
}

/// Oracle-mode gaps from the true model.
pub fn compute_gaps(model: &PomdpModel, policy: &MemorylessPolicy, l: usize) -> Result<SpectralGaps> {
    let (views, weights) = true_views_and_weights(model, policy, l)?;
    let covariances = CovarianceSet::exact(&views, &weights);
    gaps_from_parts(
        &GapInputs {
            action: l,
            states: model.states(),
            covariances: &covariances,
            v1: &views.v1,
            v2: &views.v2,
            v3: &views.v3,
            weights: &weights,
            policy,
            observation: model.observation(),
        },
        GapSource::Oracle,
    )
}

/// `λ^{(l)} = σ_min(O) (π_min^{(l)})² σ_{1,3} (ω_min · min_ν σ²_min(V_ν))^{3/2}`.
pub fn compute_lambda(gaps: &SpectralGaps) -> Result<f64> {
    let factors = [
        ("sigma_min(O)", gaps.sigma_min_o),
        ("pi_min", gaps.pi_min),
        ("sigma_X(K_13)", gaps.sigma_k13),
        ("omega_min", gaps.omega_min),
        ("min sigma_min(V)", gaps.min_view_sigma()),
    ];
    if let Some((name, value)) = factors.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::DegenerateInstance { quantity: (*name).into(), value: *value });
    }
    let view_term = gaps.omega_min * gaps.min_view_sigma().powi(2);
    Ok(gaps.sigma_min_o * gaps.pi_min.powi(2) * gaps.sigma_k13 * view_term.powf(1.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c_o: f64,
    pub c_r: f64,
    pub c_t: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self { c_o: 1.0, c_r: 1.0, c_t: 1.0 }
    }
}

/// Confidence radii for one action, with every input echoed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceBounds {
    pub b_o: f64,
    pub b_r: f64,
    pub b_t: f64,
    pub lambda: f64,
    pub samples: usize,
    pub delta: f64,
    pub constants: BoundConstants,
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// `B_O = (C_O/λ) √(Y R log(1/δ) / N)`, `B_R` likewise with `C_R`,
/// `B_T = (C_T/λ) √(Y R X² log(1/δ) / N)`.
pub fn confidence_bounds(
    lambda: f64,
    samples: usize,
    delta: f64,
    observations: usize,
    rewards: usize,
    states: usize,
    constants: BoundConstants,
) -> Result<ConfidenceBounds> {
    check_delta(delta)?;
    if samples == 0 {
        return Err(Error::InvalidParameter("bounds need N(l) >= 1".into()));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
    }
    let base = ((observations * rewards) as f64 * (1.0 / delta).ln() / samples as f64).sqrt() / lambda;
    Ok(ConfidenceBounds {
        b_o: constants.c_o * base,
        b_r: constants.c_r * base,
        b_t: constants.c_t * base * states as f64,
        lambda,
        samples,
        delta,
        constants,
    })
}

/// Inputs of the sample-size condition beyond the gaps themselves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeInputs {
    pub g: f64,
    pub theta: f64,
    /// Externally supplied scale `Θ^{(l)}` of the mixing branch.
    pub big_theta: f64,
    pub observations: usize,
    pub actions: usize,
    pub rewards: usize,
    pub separability: f64,
    pub delta: f64,
    pub c_o: f64,
}

/// Minimum `N(l)`:
/// `max{4/σ_{3,1}², 16 C_O² Y R/(λ² d_O²), (G (2√2+1)/(1−θ) / (ω_min min σ²(V)))² Θ}
///  · log(2(Y² + A Y R)/δ)`.
pub fn sample_size_threshold(gaps: &SpectralGaps, inputs: &SampleSizeInputs) -> Result<f64> {
    if !(inputs.delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {}", inputs.delta)));
    }
    if !(inputs.theta >= 0.0 && inputs.theta < 1.0) {
        return Err(Error::InvalidParameter(format!("theta must lie in [0, 1), got {}", inputs.theta)));
    }
    if !(inputs.g >= 1.0) || !(inputs.big_theta > 0.0) || !(inputs.separability > 0.0) {
        return Err(Error::InvalidParameter("G >= 1, Theta > 0 and d_O > 0 are required".into()));
    }
    let lambda = compute_lambda(gaps)?;
    let (y, a, r) = (inputs.observations as f64, inputs.actions as f64, inputs.rewards as f64);
    let covariance_branch = 4.0 / gaps.sigma_k31.powi(2);
    let separation_branch =
        16.0 * inputs.c_o.powi(2) * y * r / (lambda.powi(2) * inputs.separability.powi(2));
    let mixing = inputs.g * (2.0 * 2f64.sqrt() + 1.0) / (1.0 - inputs.theta);
    let mixing_branch = (mixing / (gaps.omega_min * gaps.min_view_sigma().powi(2))).powi(2) * inputs.big_theta;
    let log_factor = (2.0 * (y * y + a * y * r) / inputs.delta).ln();
    if !(log_factor > 0.0) {
        return Err(Error::InvalidParameter(format!("log(2(Y^2+AYR)/delta) = {log_factor} must be positive")));
    }
    Ok(covariance_branch.max(separation_branch).max(mixing_branch) * log_factor)
}

/// Spectral-norm deviation bound for a `c`-Lipschitz matrix function of `n`
/// samples from a geometrically ergodic hidden chain:
/// `G (1 + 1/(√2 c n^{3/2})) / (1−θ) · √(8 c² n log((d1+d2)/δ))`.
pub fn hmm_concentration_bound(g: f64, theta: f64, c: f64, n: f64, d1: usize, d2: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    if !(theta >= 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter(format!("theta must lie in [0, 1), got {theta}")));
    }
    if !(g >= 1.0) || !(c > 0.0) || !(n > 0.0) || d1 == 0 || d2 == 0 {
        return Err(Error::InvalidParameter("G >= 1, c > 0, n > 0 and positive dimensions are required".into()));
    }
    let log_term = ((d1 + d2) as f64 / delta).ln();
    if !(log_term > 0.0) {
        return Err(Error::InvalidParameter(format!("log((d1+d2)/delta) = {log_term} must be positive")));
    }
    let prefactor = g * (1.0 + 1.0 / (2f64.sqrt() * c * n.powf(1.5))) / (1.0 - theta);
    Ok(prefactor * (8.0 * c * c * n * log_term).sqrt())
}

/// The same bound applied to the `N(l)` windows centred on action `l`.
pub fn pomdp_concentration_bound(
    g: f64,
    theta: f64,
    c: f64,
    samples_for_action: usize,
    d1: usize,
    d2: usize,
    delta: f64,
) -> Result<f64> {
    hmm_concentration_bound(g, theta, c, samples_for_action as f64, d1, d2, delta)
}
