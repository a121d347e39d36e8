//! Simulation harness: adaptive test sessions, cohort experiments and their
//! reports.

pub mod cohort;
pub mod error;
pub mod selector;
pub mod session;

pub use cohort::{oracle_posterior, run_cohort, write_outputs, CohortConfig, CohortReport, CohortRun, SelectorReport};
pub use error::{HarnessError, Result};
pub use selector::Selector;
pub use session::{
    run_session, Observation, PosteriorSummary, Responder, SessionConfig, SessionEngine, SessionRecord,
    SimulatedExaminee,
};
