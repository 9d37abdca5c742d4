//! Load restoration with mobile energy storage: transport network, fleet and
//! microgrid models, the restoration environment, and a TD3 learner.

pub mod baselines;
pub mod env;
pub mod fleet;
pub mod grid;
pub mod nn;
pub mod rollout;
pub mod scenario;
pub mod td3;
pub mod transport;
