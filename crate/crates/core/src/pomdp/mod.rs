//! POMDP models, memoryless policies, trajectory simulation and the induced
//! state Markov chain.

mod chain;
mod model;
mod simulate;

pub use chain::{
    action_conditional_distribution, action_marginal, contraction_coefficients, expected_average_reward,
    induced_chain, stationary_distribution, MarkovChain, MixingConstants, SUPPORT_TOL,
};
pub(crate) use chain::condition_on_action;
pub use model::{
    action_given_state, validate_model, MemorylessPolicy, PomdpModel, Step, Trajectory, FORMAT_VERSION, RANK_TOL,
    STOCHASTIC_TOL,
};
pub use simulate::{simulate, InitialState};
