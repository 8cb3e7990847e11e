//! Noise schedules, DDPM and flow-matching samplers, and the flow-matching objective.

mod sample;
mod schedule;

pub use sample::{
    adaptive_sample, ddpm_sample_scaled, flow_match_loss, flow_match_sample, gaussian, initial_noise,
    sample_actions_ddpm, sample_actions_flow, AdaptiveBranch, AdaptiveScheduleConfig, Denoiser, FlowMatchConfig,
    FlowSample,
};
pub use schedule::{
    ddpm_reverse_step, ddpm_reverse_step_scaled, default_schedule, forward_diffuse, linear_schedule, NoiseSchedule,
};
