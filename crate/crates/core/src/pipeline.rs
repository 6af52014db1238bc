//! The full estimator: per-action moments, decomposition and recovery, then
//! reference selection, alignment and assembly, with bounds and diagnostics
//! collected into one report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    compute_gaps, compute_lambda, confidence_bounds, gaps_from_parts, sample_size_threshold, BoundConstants,
    ConfidenceBounds, GapInputs, GapSource, SampleSizeInputs, SpectralGaps,
};
use crate::decomposition::{decompose, ComponentDiagnostics, PowerIterationConfig};
use crate::error::{Error, Result};
use crate::moments::{empirical_moments, exact_view_distribution, symmetrize, CovarianceSet};
use crate::pomdp::{
    contraction_coefficients, induced_chain, MemorylessPolicy, MixingConstants, PomdpModel, Trajectory,
    FORMAT_VERSION,
};
use crate::recovery::{assemble_estimate, recover_view, select_reference_action, ActionEstimate, PomdpEstimate, SecondViewRoute};
use crate::views::{collect_views, ViewDistribution, ViewEncoding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    /// Number of hidden states `X`.
    pub states: usize,
    pub power: PowerIterationConfig,
    pub delta: f64,
    pub constants: BoundConstants,
    /// Scale `Θ^{(l)}` of the mixing branch of the sample-size condition.
    pub big_theta: f64,
    pub g_override: Option<f64>,
    pub theta_override: Option<f64>,
    /// Fail actions whose `N(l)` is below the sample-size condition.
    pub enforce_sample_size: bool,
    /// Reward values of the estimated model; defaults to `0, 1, …, R−1`.
    pub reward_values: Option<Vec<f64>>,
}

impl EstimateConfig {
    pub fn new(states: usize) -> Self {
        Self {
            states,
            power: PowerIterationConfig::default(),
            delta: 0.05,
            constants: BoundConstants::default(),
            big_theta: 1.0,
            g_override: None,
            theta_override: None,
            enforce_sample_size: false,
            reward_values: None,
        }
    }

    fn power_for_action(&self, l: usize) -> PowerIterationConfig {
        PowerIterationConfig { seed: self.power.seed.wrapping_add(l as u64), ..self.power }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Empirical,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionReport {
    pub action: usize,
    /// `N(l)`; absent in exact mode.
    pub samples: Option<usize>,
    pub ok: bool,
    pub error: Option<String>,
    pub gaps: Option<SpectralGaps>,
    pub lambda: Option<f64>,
    pub bounds: Option<ConfidenceBounds>,
    pub sample_size_threshold: Option<f64>,
    /// `ω̂^{(l)}` in this action's own labeling.
    pub weights: Option<Vec<f64>>,
    pub decomposition: Vec<ComponentDiagnostics>,
    pub diagnostics: Vec<String>,
}

impl ActionReport {
    fn failed(action: usize, samples: Option<usize>, error: &Error) -> Self {
        Self {
            action,
            samples,
            ok: false,
            error: Some(error.to_string()),
            gaps: None,
            lambda: None,
            bounds: None,
            sample_size_threshold: None,
            weights: None,
            decomposition: Vec::new(),
            diagnostics: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub version: u32,
    pub mode: Mode,
    pub states: usize,
    #[serde(rename = "Y")]
    pub observations: usize,
    #[serde(rename = "A")]
    pub actions_count: usize,
    #[serde(rename = "R")]
    pub rewards: usize,
    pub trajectory_length: Option<usize>,
    pub config: EstimateConfig,
    pub mixing: Option<MixingConstants>,
    pub actions: Vec<ActionReport>,
    pub estimate: Option<PomdpEstimate>,
    pub warnings: Vec<String>,
    pub success: bool,
}

impl EstimateReport {
    pub fn failed_actions(&self) -> Vec<usize> {
        self.actions.iter().filter(|a| !a.ok).map(|a| a.action).collect()
    }
}

struct ActionOutcome {
    estimate: ActionEstimate,
    report: ActionReport,
}

enum GapMode<'a> {
    Oracle(&'a PomdpModel),
    PlugIn,
}

fn run_action(
    dist: &ViewDistribution,
    samples: Option<usize>,
    l: usize,
    policy: &MemorylessPolicy,
    cfg: &EstimateConfig,
    gap_mode: &GapMode<'_>,
) -> Result<ActionOutcome> {
    let x = cfg.states;
    let enc = dist.encoding;
    let cov = CovarianceSet::from_distribution(l, dist);
    let ops = symmetrize(&cov, x)?;
    let moments = empirical_moments(&ops, dist, l, samples);
    let dec = decompose(&moments, x, &cfg.power_for_action(l))?;
    let weights = dec.recovered.weights.clone();
    let estimate = ActionEstimate::recover(l, samples, dec.recovered.v3_raw.clone(), weights.clone(), &cov, policy, enc)?;

    let mut diagnostics = estimate.diagnostics.clone();
    if !dec.recovered.degenerate_columns.is_empty() {
        diagnostics.push(format!(
            "action {l}: third-view columns {:?} had no positive mass, set to uniform",
            dec.recovered.degenerate_columns
        ));
    }
    let gaps = match gap_mode {
        GapMode::Oracle(model) => compute_gaps(model, policy, l),
        GapMode::PlugIn => recover_view(&dec.recovered.v3_raw, &cov, x, SecondViewRoute::AsListed).and_then(|v1| {
            gaps_from_parts(
                &GapInputs {
                    action: l,
                    states: x,
                    covariances: &cov,
                    v1: &v1,
                    v2: &estimate.v2,
                    v3: &dec.recovered.v3_raw,
                    weights: &weights,
                    policy,
                    observation: &estimate.observation,
                },
                GapSource::PlugIn,
            )
        }),
    };
    let gaps = match gaps {
        Ok(g) => Some(g),
        Err(e) => {
            diagnostics.push(format!("action {l}: gaps unavailable: {e}"));
            None
        }
    };
    let lambda = gaps.as_ref().and_then(|g| compute_lambda(g).ok());
    let bounds = match (lambda, samples) {
        (Some(lam), Some(n)) => {
            match confidence_bounds(lam, n, cfg.delta, enc.observations, enc.rewards, x, cfg.constants) {
                Ok(b) => Some(b),
                Err(e) => {
                    diagnostics.push(format!("action {l}: bounds unavailable: {e}"));
                    None
                }
            }
        }
        _ => None,
    };
    let report = ActionReport {
        action: l,
        samples,
        ok: true,
        error: None,
        gaps,
        lambda,
        bounds,
        sample_size_threshold: None,
        weights: Some(weights.iter().copied().collect()),
        decomposition: dec.components.diagnostics.clone(),
        diagnostics,
    };
    Ok(ActionOutcome { estimate, report })
}

struct Inputs<'a> {
    mode: Mode,
    encoding: ViewEncoding,
    trajectory_length: Option<usize>,
    /// Per action: the view law (or why it is unavailable) and `N(l)`.
    distributions: Vec<(Result<ViewDistribution>, Option<usize>)>,
    policy: &'a MemorylessPolicy,
    truth: Option<&'a PomdpModel>,
}

fn run(inputs: Inputs<'_>, cfg: &EstimateConfig) -> Result<EstimateReport> {
    if cfg.states == 0 {
        return Err(Error::InvalidParameter("the number of states must be positive".into()));
    }
    if cfg.states > inputs.encoding.observations {
        return Err(Error::RankDeficient {
            what: format!("observation matrix with X = {} > Y = {}", cfg.states, inputs.encoding.observations),
            rank: inputs.encoding.observations,
            required: cfg.states,
        });
    }
    let gap_mode = match (inputs.mode, inputs.truth) {
        (Mode::Exact, Some(model)) => GapMode::Oracle(model),
        _ => GapMode::PlugIn,
    };
    let outcomes: Vec<std::result::Result<ActionOutcome, ActionReport>> = inputs
        .distributions
        .par_iter()
        .enumerate()
        .map(|(l, (dist, samples))| {
            let result = match dist {
                Ok(d) => run_action(d, *samples, l, inputs.policy, cfg, &gap_mode),
                Err(e) => Err(Error::InsufficientSamples { action: l, reason: e.to_string() }),
            };
            result.map_err(|e| ActionReport::failed(l, *samples, &e))
        })
        .collect();

    let mut warnings = Vec::new();
    let mut reports: Vec<ActionReport> = outcomes
        .iter()
        .map(|o| match o {
            Ok(out) => out.report.clone(),
            Err(rep) => rep.clone(),
        })
        .collect();
    let estimates: Option<Vec<ActionEstimate>> =
        outcomes.into_iter().map(|o| o.ok().map(|out| out.estimate)).collect();

    let enc = inputs.encoding;
    let reward_values = match (&cfg.reward_values, inputs.truth) {
        (Some(v), _) => v.clone(),
        (None, Some(model)) => model.reward_values().to_vec(),
        (None, None) => (0..enc.rewards).map(|m| m as f64).collect(),
    };
    let mut estimate = match estimates {
        Some(estimates) => {
            let scores: Vec<Option<f64>> = reports
                .iter()
                .map(|r| match inputs.mode {
                    Mode::Empirical => r.bounds.as_ref().map(|b| b.b_o),
                    Mode::Exact => r.lambda.map(|lam| 1.0 / lam),
                })
                .collect();
            let reference = match select_reference_action(&scores) {
                Ok((l, w)) => {
                    warnings.extend(w);
                    l
                }
                Err(e) => {
                    warnings.push(format!("{e}; using action 0 as reference"));
                    0
                }
            };
            let bounds = reports.iter().map(|r| r.bounds.clone()).collect();
            match assemble_estimate(&estimates, reference, bounds, reward_values) {
                Ok(est) => Some(est),
                Err(e) => {
                    warnings.push(format!("assembly failed: {e}"));
                    None
                }
            }
        }
        None => None,
    };

    let mixing = match inputs.truth {
        Some(model) => induced_chain(model, inputs.policy).ok().map(|c| contraction_coefficients(&c)),
        None => estimate
            .as_ref()
            .and_then(|e| induced_chain(&e.model, inputs.policy).ok())
            .map(|c| contraction_coefficients(&c)),
    }
    .map(|m| m.with_overrides(cfg.g_override, cfg.theta_override));
    if let Some(w) = mixing.as_ref().and_then(|m| m.warning.clone()) {
        warnings.push(w);
    }
    if (cfg.big_theta - 1.0).abs() == 0.0 {
        warnings.push("sample-size condition uses the default scale Theta = 1, which is not calibrated".into());
    }

    for rep in reports.iter_mut().filter(|r| r.ok) {
        let (Some(gaps), Some(mix)) = (&rep.gaps, &mixing) else { continue };
        let Some(d_o) = gaps.separability else { continue };
        let inputs = SampleSizeInputs {
            g: mix.g,
            theta: mix.theta,
            big_theta: cfg.big_theta,
            observations: enc.observations,
            actions: enc.actions,
            rewards: enc.rewards,
            separability: d_o,
            delta: cfg.delta,
            c_o: cfg.constants.c_o,
        };
        match sample_size_threshold(gaps, &inputs) {
            Ok(n_min) => {
                rep.sample_size_threshold = Some(n_min);
                if let Some(n) = rep.samples.filter(|&n| (n as f64) < n_min) {
                    let msg = format!("action {}: N(l) = {n} is below the sample-size condition {n_min:.3e}", rep.action);
                    if cfg.enforce_sample_size {
                        rep.ok = false;
                        rep.error = Some(
                            Error::InsufficientSamples { action: rep.action, reason: msg }.to_string(),
                        );
                    } else {
                        rep.diagnostics.push(msg);
                    }
                }
            }
            Err(e) => rep.diagnostics.push(format!("sample-size condition unavailable: {e}")),
        }
    }

    let success = reports.iter().all(|r| r.ok) && estimate.is_some();
    if !success {
        estimate = None;
    }
    Ok(EstimateReport {
        version: FORMAT_VERSION,
        mode: inputs.mode,
        states: cfg.states,
        observations: enc.observations,
        actions_count: enc.actions,
        rewards: enc.rewards,
        trajectory_length: inputs.trajectory_length,
        config: cfg.clone(),
        mixing,
        actions: reports,
        estimate,
        warnings,
        success,
    })
}

/// Estimates the model from one trajectory. `truth`, when given, only supplies
/// the mixing constants and reward values; it is never used for estimation.
///
/// Returns `Err` for invalid inputs. Estimation failures are recorded in the
/// report, which then has `success == false` and no estimate.
pub fn estimate_from_trajectory(
    trajectory: &Trajectory,
    policy: &MemorylessPolicy,
    encoding: ViewEncoding,
    cfg: &EstimateConfig,
    truth: Option<&PomdpModel>,
) -> Result<EstimateReport> {
    if policy.observations() != encoding.observations || policy.actions() != encoding.actions {
        return Err(Error::Dimension(format!(
            "policy is {}x{} but the encoding has Y = {}, A = {}",
            policy.observations(),
            policy.actions(),
            encoding.observations,
            encoding.actions
        )));
    }
    trajectory.validate(encoding.observations, encoding.actions, encoding.rewards)?;
    let distributions = (0..encoding.actions)
        .map(|l| {
            let samples = collect_views(trajectory, l, encoding)?;
            Ok((ViewDistribution::empirical(&samples), Some(samples.count())))
        })
        .collect::<Result<Vec<_>>>()?;
    run(
        Inputs {
            mode: Mode::Empirical,
            encoding,
            trajectory_length: Some(trajectory.len()),
            distributions,
            policy,
            truth,
        },
        cfg,
    )
}

/// Runs the estimator on the exact view law of a known model, so that every
/// moment is exact and the result isolates the algebra from sampling error.
pub fn estimate_exact(model: &PomdpModel, policy: &MemorylessPolicy, cfg: &EstimateConfig) -> Result<EstimateReport> {
    model.ensure_valid()?;
    policy.check_compatible(model)?;
    let distributions = (0..model.actions()).map(|l| (exact_view_distribution(model, policy, l), None)).collect();
    run(
        Inputs {
            mode: Mode::Exact,
            encoding: ViewEncoding::for_model(model),
            trajectory_length: None,
            distributions,
            policy,
            truth: Some(model),
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::standard_fixture;
    use crate::pomdp::{simulate, InitialState, Step};
    use crate::recovery::evaluate_errors;

    #[test]
    fn exact_mode_recovers_the_fixture() {
        let f = standard_fixture().unwrap();
        let report = estimate_exact(&f.model, &f.policy, &EstimateConfig::new(2)).unwrap();
        assert!(report.success, "{:?}", report.actions);
        let errors = evaluate_errors(report.estimate.as_ref().unwrap(), &f.model).unwrap();
        assert!(errors.max_o < 1e-8 && errors.max_r < 1e-8 && errors.max_t < 1e-8, "{errors:?}");
    }

    #[test]
    fn missing_action_fails_that_action() {
        let f = standard_fixture().unwrap();
        let steps = (0..200).map(|t| Step { y: t % 4, a: 0, r: t % 2 }).collect();
        let traj = Trajectory { steps, seed: None, hidden_states: None };
        let enc = ViewEncoding::for_model(&f.model);
        let report = estimate_from_trajectory(&traj, &f.policy, enc, &EstimateConfig::new(2), None).unwrap();
        assert!(!report.success);
        assert!(report.failed_actions().contains(&1));
        assert!(report.estimate.is_none());
    }

    #[test]
    fn too_many_states_is_rejected() {
        let f = standard_fixture().unwrap();
        assert!(matches!(
            estimate_exact(&f.model, &f.policy, &EstimateConfig::new(5)),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn empirical_runs_are_reproducible() {
        let f = standard_fixture().unwrap();
        let traj = simulate(&f.model, &f.policy, 20_000, 5, &InitialState::Uniform, false).unwrap();
        let enc = ViewEncoding::for_model(&f.model);
        let cfg = EstimateConfig::new(2);
        let a = estimate_from_trajectory(&traj, &f.policy, enc, &cfg, None).unwrap();
        let b = estimate_from_trajectory(&traj, &f.policy, enc, &cfg, None).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.success, "{:?}", a.actions);
    }
}
