//! Sequential sampling equilibria of finite normal-form games.
//!
//! Each player samples opponents' actions at a cost, updates a Dirichlet belief,
//! stops optimally, and best-responds to the posterior. This crate solves the
//! stopping problems exactly on the belief-count lattice, computes the induced
//! action/time distributions, and finds equilibrium fixed points.

pub mod analysis;
pub mod belief;
pub mod corpus;
pub mod equilibrium;
pub mod game;
mod lattice;
pub mod stopping;

pub use analysis::{
    abee_sweep, analogy_game, analogy_transform, comparative_statics_payoff, comparative_statics_prior,
    comparative_statics_sigma, misspec_detector, time_revealed_indifference, AnalysisError, MisspecReport,
    StaticsReport,
};
pub use belief::{ssd_compare, BeliefError, DirichletPrior, FiniteSupportPrior, PosteriorState, Prior, SsdOrder};
pub use game::{matching_pennies, Game, GameError, MixedProfile};
pub use lattice::Lattice;
pub use stopping::{
    ActionTimeDistribution, BernsteinPoly, Boundaries, Decision, PolicyKind, StopBelief, StoppingError,
    StoppingPolicy, StoppingProblem,
};
pub use equilibrium::{
    cost_sweep, dynamics_run, dynamics_run_until, rationalizability_sweep, reachability_experiment, sse_solve,
    stability_check, BestResponseMap, DynamicsTrace, DynamicsVariant, EquilibriumError, EquilibriumResult,
    ExtendedGame, SolveMethod, SolveOptions, SolveStatus,
};
