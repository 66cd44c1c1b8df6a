//! Estimation of [`HdMedModel`](crate::mixture::HdMedModel): batch EM for
//! initialization, spectral initialization, and online EM over streams.

pub mod batch;
pub mod init;
pub mod kneedle;
pub mod mstep;
pub mod online;
pub mod stats;
pub mod student;

pub use batch::{fit_batch, BatchConfig, BatchFit, DenseComponent, DenseMixture};
pub use init::{choose_dimension, from_dense, spectral_init, DimensionRule, InitSpec, SpectralInit};
pub use kneedle::{kneedle, kneedle_xy};
pub use mstep::{collapsed_components, m_step, MStep, Repair, COLLAPSE_FLOOR};
pub use online::{fit_online, FitConfig, FitReport, LearningRateSchedule, ReportRow};
pub use stats::{batch_stats, expected_stats, sa_update, ComponentStats, SuffStats};
pub use student::{dof_residual, solve_student_dof};
