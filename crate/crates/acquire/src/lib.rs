//! Adaptive initialization of `k` services for a population of users whose
//! losses are only observed through bandit feedback.

pub mod dynamics;
pub mod error;
pub mod feedback;
pub mod harness;
pub mod linalg;
pub mod linreg;
pub mod losses;
pub mod oracle;
pub mod population;
pub mod rng;
pub mod seeding;

pub use error::{Error, Result};
pub use losses::{LossFamily, LossModel, LossSpec};
pub use population::{PreferenceVector, Population, UserProfile};
pub use feedback::{Environment, FeedbackRound, QueryLedger, ServiceSet};
pub use seeding::{SeedingRun, SeedingTrace, Strategy};
