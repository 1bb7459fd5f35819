//! Identification and control of linear time-varying systems through the
//! information state: a finite window of past outputs and inputs that
//! replaces the unobserved plant state.
//!
//! Outline:
//! - [`plants`] simulates benchmark and user-supplied plants and provides
//!   oracle quantities computed from known matrices;
//! - [`arma`] fits time-varying ARMA coefficients from rollout batches;
//! - [`realization`] turns coefficients into information-state models;
//! - [`noise`] corrects the fit for known noise covariances;
//! - [`control`] synthesizes LQR policies on the realized models;
//! - [`okid`] implements the observer/Kalman-filter identification baseline.

pub mod arma;
pub mod control;
pub mod error;
pub mod io;
pub mod noise;
pub mod numerics;
pub mod okid;
pub mod plants;
pub mod realization;
pub mod system;
pub mod validation;

pub use nalgebra::{DMatrix, DVector};

pub use arma::{ArmaCoefficients, DataMatrix, OrderEstimate, TvArmaModel};
pub use error::{Error, Result};
pub use plants::{LtvSystem, NoiseSpec, Rollout, RolloutBatch};
pub use realization::{InfoState, InfoStateModel, LtiCanonicalModel, MarkovSequence};
pub use system::LinearModel;
