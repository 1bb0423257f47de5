//! Four-player environmental policy game and an evaluation harness for
//! agents playing it: scenario tables, prompt construction under persona
//! and payoff-visibility conditions, scripted and remote agents, a
//! resumable experiment runner, significance tests, and rationale keyword
//! analysis.

pub mod agents;
pub mod cot;
pub mod game;
pub mod prompting;
pub mod report;
pub mod runner;
pub mod scalar;
pub mod scenarios;
pub mod stats;

use num_rational::Ratio;

pub use agents::{Agent, AgentKind, AgentSpec, DecodeParams, RemoteSpec};
pub use game::{
    classify_dominance, classify_outcome, enumerate_nash, Action, DominanceClass, OutcomeType, PayoffTable, Profile,
    ProfileSet, Role,
};
pub use prompting::{Condition, Persona, PromptBuilder, VariantId, Visibility};
pub use runner::{CellAggregate, RunRecord};
pub use scalar::{Payoff, Real};
pub use scenarios::{Family, Scenario, ScenarioBundle};

pub type PayoffTable64 = PayoffTable<f64>;
pub type PayoffTable32 = PayoffTable<f32>;
/// Payoffs as exact rationals, for checks free of rounding.
pub type ExactPayoffTable = PayoffTable<Ratio<i64>>;
