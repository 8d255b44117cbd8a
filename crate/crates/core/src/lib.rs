//! Closed-loop incentive regulation of parking-location choice.
//!
//! A population of drivers picks, at every time step, one of `M` suburban
//! park-and-ride sites or the City according to a multinomial logit model.
//! Each suburb runs its own linear shift-invariant controller that turns the
//! (filtered) occupancy error into an incentive offered to every driver. The
//! crate simulates single runs, Monte Carlo ensembles, checks the stability
//! hypotheses of the loop and compares long-run ensemble behaviour against a
//! mean-field prediction.

pub mod choice_model;
pub mod ensemble;
pub mod error;
pub mod feedback_loop;
pub mod lti_blocks;
pub mod scenario_io;

pub use choice_model::{
    aggregate_counts, sample_choice, AttributeBundle, ChoiceOutcome, ChoiceProbabilities,
    DriverProfile, LocationUtilityParams,
};
pub use ensemble::{
    ergodicity_check, fixed_point, run_ensemble, ConvergenceReport, EnsembleConfig,
    EnsembleStats, FixedPointPrediction, Quantity,
};
pub use error::{Error, Result};
pub use feedback_loop::{run, InitialConditionPolicy, LoopState, Scenario, SimulationRun};
pub use lti_blocks::{
    spectral_radius, BlockSpec, ControllerBank, FilterBank, LagControllerParams, StateSpaceSiso,
};
