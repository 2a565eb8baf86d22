//! Centroidal momentum trajectory optimization with optional time
//! optimization.
//!
//! The bilinear terms of the discrete centroidal dynamics (lever-arm cross
//! products and products with the timestep duration) are split into
//! differences of convex quadratics ([`dc`]), relaxed into a second-order cone
//! program ([`relax`]) and refined with trust regions or soft penalties until
//! the relaxed trajectory agrees with an exact forward integration of the
//! optimized controls ([`dynamics`]). Cone programs are solved by the in-repo
//! interior-point solver in [`conic`].

pub mod conic;
pub mod dc;
pub mod dynamics;
pub mod model;
pub mod relax;

pub use conic::{ConicProgram, ConicSolution, KktStats, SolveStatus};
pub use dynamics::{
    CentroidalState, CentroidalTrajectory, ContactControl, ControlStep, ViolationReport,
};
pub use model::{
    load_scenario, ContactPhase, ContactPlan, CostWeights, InitialState, Interval, RelaxationMode,
    Scenario, ScenarioConfig, TimeMode,
};
pub use relax::{refine, RefineOutcome, RefineStatus, RefinementSettings, SolveReport};
