//! Colored-noise generation and the linear stochastic Schrödinger equation.

pub mod noise;
pub mod sse;

pub use noise::{
    noise_statistics, sample_colored_noise, ColoredNoise, EntryEstimate, NoiseSpec,
    NoiseStatistics, DEFAULT_RIDGE,
};
pub use sse::{
    ensemble_run, sse_trajectory, EnsembleComparison, Estimator, Observable, SSEConfig,
    SseTrajectory, TrajectoryEnsemble, MAX_DUMPED_TRAJECTORIES,
};
