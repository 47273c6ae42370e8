//! Plant, network and terminal-ingredient models for the two setups.

pub mod actuator;
pub mod fixtures;
pub mod ingredients;
pub mod token_bucket;

pub use actuator::{act_omega, act_pi, act_stage_cost, act_step, ActuatorParams};
pub use ingredients::{PeriodicTerminalIngredients, RegionFamily, TerminalGain};
pub use token_bucket::{
    next_bucket_level, tb_stage_cost, tb_step, tb_storage, tb_terminal_controller, tb_terminal_membership,
    TokenBucketInput, TokenBucketParams, TokenBucketState,
};
