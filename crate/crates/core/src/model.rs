//! Scenario description: robot constants, bounds, cost weights, the contact
//! plan and the initial/desired momentum state.
//!
//! Scenarios are stored as TOML documents with the sections `[robot]`,
//! `[time]`, `[costs]`, `[[contacts]]` and `[initial]`. The schema is
//! documented in `scenarios/SCHEMA.md`; [`load_scenario`] parses and validates
//! a document and [`Scenario::to_document`] writes one back.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Current scenario document version.
pub const SCHEMA_VERSION: u32 = 1;

const QUATERNION_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("timestep {t} out of range [0, {n})")]
    StepOutOfRange { t: usize, n: usize },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Closed interval `[min, max]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    /// Distance from `v` to the interval, zero inside.
    pub fn excess(&self, v: f64) -> f64 {
        if v < self.min {
            self.min - v
        } else if v > self.max {
            v - self.max
        } else {
            0.0
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    fn validate(&self, field: &str) -> Result<(), ModelError> {
        if !self.min.is_finite() || !self.max.is_finite() {
            return Err(invalid(field, "bounds must be finite"));
        }
        if self.min > self.max {
            return Err(invalid(field, "min > max"));
        }
        Ok(())
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.min, i.max]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    #[default]
    FixedTime,
    TimeOptFreeHorizon,
    TimeOptFixedHorizon,
}

impl TimeMode {
    pub fn optimizes_time(self) -> bool {
        !matches!(self, TimeMode::FixedTime)
    }
}

impl fmt::Display for TimeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TimeMode::FixedTime => "fixed_time",
            TimeMode::TimeOptFreeHorizon => "time_opt_free_horizon",
            TimeMode::TimeOptFixedHorizon => "time_opt_fixed_horizon",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelaxationMode {
    #[default]
    TrustRegion,
    SoftConstraint,
}

impl fmt::Display for RelaxationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelaxationMode::TrustRegion => "trust_region",
            RelaxationMode::SoftConstraint => "soft_constraint",
        })
    }
}

/// Weights of the terminal and running cost.
///
/// Momentum-like quantities (linear/angular momentum, forces, torques) enter
/// the cost normalized by the robot mass, so the same weights behave alike
/// across robots of different size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    /// Weights on `(r, l, k)` of the last state against the terminal target.
    pub terminal_state: [f64; 9],
    /// Weights on `(r, l, k)` against the desired trajectory at every other step.
    pub running_momentum_tracking: [f64; 9],
    pub force_reg: f64,
    pub torque_reg: f64,
    pub cop_reg: f64,
    /// Pulls each timestep duration towards the nominal one.
    pub dt_reg: f64,
    /// Starting values for the refinement, see `RefinementSettings::for_scenario`.
    pub soft_penalty_w0: f64,
    pub trust_sigma0: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            terminal_state: [1e3, 1e3, 1e3, 1e2, 1e2, 1e2, 1e2, 1e2, 1e2],
            running_momentum_tracking: [0.0, 0.0, 0.0, 1e-1, 1e-1, 1e-1, 1.0, 1.0, 1.0],
            force_reg: 1e-3,
            torque_reg: 1e-2,
            cop_reg: 1e-1,
            dt_reg: 1.0,
            soft_penalty_w0: 0.05,
            trust_sigma0: 1.0,
        }
    }
}

impl CostWeights {
    fn validate(&self) -> Result<(), ModelError> {
        let check = |name: &str, v: f64| {
            if !v.is_finite() || v < 0.0 {
                Err(invalid(format!("costs.{name}"), "weight must be finite and >= 0"))
            } else {
                Ok(())
            }
        };
        for (i, &w) in self.terminal_state.iter().enumerate() {
            check(&format!("terminal_state[{i}]"), w)?;
        }
        for (i, &w) in self.running_momentum_tracking.iter().enumerate() {
            check(&format!("running_momentum_tracking[{i}]"), w)?;
        }
        check("force_reg", self.force_reg)?;
        check("torque_reg", self.torque_reg)?;
        check("cop_reg", self.cop_reg)?;
        check("dt_reg", self.dt_reg)?;
        check("soft_penalty_w0", self.soft_penalty_w0)?;
        if !self.trust_sigma0.is_finite() || self.trust_sigma0 <= 0.0 {
            return Err(invalid("costs.trust_sigma0", "must be > 0"));
        }
        Ok(())
    }
}

/// Reach limit of one end-effector: `|p_e - r| <= max_length + length_offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndEffector {
    pub id: String,
    pub max_length: f64,
    /// Constant added to the reach, used for arms whose contact point is
    /// offset from the limb chain.
    #[serde(default)]
    pub length_offset: f64,
}

impl EndEffector {
    pub fn reach(&self) -> f64 {
        self.max_length + self.length_offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub mass: f64,
    pub gravity: Vector3<f64>,
    pub friction_mu: f64,
    /// CoP bounds in the contact frame, `[x, y]`.
    pub cop_bounds: [Interval; 2],
    pub torque_bounds: Interval,
    pub dt_bounds: Interval,
    /// Ordered like [`ContactPlan::eef_ids`].
    pub end_effectors: Vec<EndEffector>,
    pub n_timesteps: usize,
    pub nominal_dt: f64,
    pub time_mode: TimeMode,
    pub relaxation_mode: RelaxationMode,
    pub cost_weights: CostWeights,
}

impl ScenarioConfig {
    /// Horizon with every step at the nominal duration.
    pub fn nominal_horizon(&self) -> f64 {
        self.n_timesteps as f64 * self.nominal_dt
    }

    pub fn end_effector(&self, id: &str) -> Option<&EndEffector> {
        self.end_effectors.iter().find(|e| e.id == id)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(invalid("robot.mass", "must be > 0"));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(invalid("robot.gravity", "must be finite"));
        }
        if !(self.friction_mu.is_finite() && self.friction_mu > 0.0) {
            return Err(invalid("robot.friction_mu", "must be > 0"));
        }
        self.cop_bounds[0].validate("robot.cop_bounds_x")?;
        self.cop_bounds[1].validate("robot.cop_bounds_y")?;
        self.torque_bounds.validate("robot.torque_bounds")?;
        self.dt_bounds.validate("time.dt_bounds")?;
        if self.dt_bounds.min <= 0.0 {
            return Err(invalid("time.dt_bounds", "min must be > 0"));
        }
        if self.n_timesteps == 0 {
            return Err(invalid("time.n_timesteps", "must be >= 1"));
        }
        if !self.nominal_dt.is_finite() || !self.dt_bounds.contains(self.nominal_dt) {
            return Err(invalid("time.nominal_dt", "must lie within dt_bounds"));
        }
        let mut seen = BTreeSet::new();
        for e in &self.end_effectors {
            if !seen.insert(e.id.as_str()) {
                return Err(invalid("robot.end_effectors", format!("duplicate id '{}'", e.id)));
            }
            if !(e.max_length.is_finite() && e.max_length > 0.0) {
                return Err(invalid(
                    format!("robot.end_effectors.{}.max_length", e.id),
                    "must be > 0",
                ));
            }
            if !e.length_offset.is_finite() || e.reach() <= 0.0 {
                return Err(invalid(
                    format!("robot.end_effectors.{}.length_offset", e.id),
                    "reach must stay > 0",
                ));
            }
        }
        self.cost_weights.validate()
    }
}

/// One contact of one end-effector over a range of timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPhase {
    pub eef_id: String,
    /// First active step.
    pub start_step: usize,
    /// One past the last active step.
    pub end_step: usize,
    pub position: Vector3<f64>,
    /// `(w, x, y, z)`, unit norm.
    pub orientation: Quaternion<f64>,
}

impl ContactPhase {
    pub fn is_active(&self, t: usize) -> bool {
        t >= self.start_step && t < self.end_step
    }

    /// Contact frame to world frame.
    pub fn rotation(&self) -> Matrix3<f64> {
        UnitQuaternion::from_quaternion(self.orientation)
            .to_rotation_matrix()
            .into_inner()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContactPlan {
    pub eef_ids: Vec<String>,
    pub phases: Vec<ContactPhase>,
    pub n_timesteps: usize,
}

impl ContactPlan {
    pub fn eef_index(&self, id: &str) -> Option<usize> {
        self.eef_ids.iter().position(|e| e == id)
    }

    /// Phases active at step `t`, ordered like `eef_ids`.
    pub fn active_phases(&self, t: usize) -> Vec<&ContactPhase> {
        let mut active: Vec<&ContactPhase> =
            self.phases.iter().filter(|p| p.is_active(t)).collect();
        active.sort_by_key(|p| self.eef_index(&p.eef_id));
        active
    }

    /// Number of (step, end-effector) pairs in contact over the horizon.
    pub fn active_step_count(&self) -> usize {
        (0..self.n_timesteps).map(|t| self.active_phases(t).len()).sum()
    }

    fn validate(&self) -> Result<(), ModelError> {
        let mut ids = BTreeSet::new();
        for id in &self.eef_ids {
            if !ids.insert(id) {
                return Err(invalid("robot.end_effectors", format!("duplicate id '{id}'")));
            }
        }
        for (i, p) in self.phases.iter().enumerate() {
            let field = |f: &str| format!("contacts[{i}].{f}");
            if !ids.contains(&p.eef_id) {
                return Err(invalid(field("eef"), format!("unknown end-effector '{}'", p.eef_id)));
            }
            if p.start_step >= p.end_step {
                return Err(invalid(field("start"), "start must be < end"));
            }
            if p.end_step > self.n_timesteps {
                return Err(invalid(field("end"), "end exceeds n_timesteps"));
            }
            if !p.position.iter().all(|v| v.is_finite()) {
                return Err(invalid(field("position"), "must be finite"));
            }
            let norm = p.orientation.norm();
            if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_NORM_TOL {
                return Err(invalid(field("orientation"), "quaternion must have unit norm"));
            }
        }
        for (i, a) in self.phases.iter().enumerate() {
            for b in &self.phases[i + 1..] {
                if a.eef_id == b.eef_id
                    && a.start_step < b.end_step
                    && b.start_step < a.end_step
                {
                    return Err(invalid(
                        format!("contacts.{}", a.eef_id),
                        "phases of one end-effector overlap",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// End-effectors in contact at step `t`, ordered like `plan.eef_ids`.
pub fn active_contacts(plan: &ContactPlan, t: usize) -> Result<Vec<String>, ModelError> {
    if t >= plan.n_timesteps {
        return Err(ModelError::StepOutOfRange {
            t,
            n: plan.n_timesteps,
        });
    }
    Ok(plan
        .active_phases(t)
        .into_iter()
        .map(|p| p.eef_id.clone())
        .collect())
}

/// `(r, l, k)` stacked.
pub type MomentumState = [f64; 9];

#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub com: Vector3<f64>,
    pub lin_momentum: Vector3<f64>,
    pub ang_momentum: Vector3<f64>,
    /// One desired `(r, l, k)` per timestep.
    pub desired: Vec<MomentumState>,
    pub terminal: MomentumState,
}

impl InitialState {
    fn validate(&self, n: usize) -> Result<(), ModelError> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(self.com.as_slice()) {
            return Err(invalid("initial.com", "must be finite"));
        }
        if !finite(self.lin_momentum.as_slice()) {
            return Err(invalid("initial.lin_momentum", "must be finite"));
        }
        if !finite(self.ang_momentum.as_slice()) {
            return Err(invalid("initial.ang_momentum", "must be finite"));
        }
        if !finite(&self.terminal) {
            return Err(invalid("initial.terminal", "must be finite"));
        }
        if self.desired.len() != n {
            return Err(invalid(
                "initial.desired",
                format!("expected {n} rows, got {}", self.desired.len()),
            ));
        }
        if !self.desired.iter().all(|h| finite(h)) {
            return Err(invalid("initial.desired", "must be finite"));
        }
        Ok(())
    }
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub plan: ContactPlan,
    pub initial: InitialState,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ModelError> {
        self.config.validate()?;
        if self.plan.n_timesteps != self.config.n_timesteps {
            return Err(invalid("contacts", "plan horizon differs from time.n_timesteps"));
        }
        let cfg_ids: Vec<&str> = self.config.end_effectors.iter().map(|e| e.id.as_str()).collect();
        let plan_ids: Vec<&str> = self.plan.eef_ids.iter().map(String::as_str).collect();
        if cfg_ids != plan_ids {
            return Err(invalid("robot.end_effectors", "plan and config disagree on ids"));
        }
        self.plan.validate()?;
        self.initial.validate(self.config.n_timesteps)
    }

    /// Serializes into the scenario document format.
    pub fn to_document(&self) -> String {
        let doc = ScenarioDocument::from(self);
        toml::to_string(&doc).expect("scenario document is always serializable")
    }
}

/// Parses and validates a scenario document.
pub fn load_scenario(text: &str) -> Result<Scenario, ModelError> {
    let doc: ScenarioDocument =
        toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    doc.into_scenario()
}

// ---------------------------------------------------------------------------
// Document layer

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDocument {
    schema_version: u32,
    name: String,
    robot: RobotSection,
    time: TimeSection,
    #[serde(default)]
    costs: CostsSection,
    #[serde(default)]
    contacts: Vec<ContactEntry>,
    initial: InitialSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotSection {
    mass: f64,
    #[serde(default = "default_gravity")]
    gravity: [f64; 3],
    friction_mu: f64,
    cop_bounds_x: Interval,
    cop_bounds_y: Interval,
    torque_bounds: Interval,
    end_effectors: Vec<EndEffector>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimeSection {
    n_timesteps: usize,
    nominal_dt: f64,
    dt_bounds: Interval,
    #[serde(default)]
    time_mode: TimeMode,
}

#[derive(Debug, Clone, Default, Serialize)]
struct CostsSection {
    relaxation_mode: RelaxationMode,
    #[serde(flatten)]
    weights: CostWeights,
}

// Split by hand: `flatten` would silently accept unknown weight names.
impl<'de> Deserialize<'de> for CostsSection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut table = toml::Table::deserialize(d)?;
        let relaxation_mode = match table.remove("relaxation_mode") {
            Some(v) => v.try_into().map_err(D::Error::custom)?,
            None => RelaxationMode::default(),
        };
        let weights = toml::Value::Table(table).try_into().map_err(D::Error::custom)?;
        Ok(Self { relaxation_mode, weights })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactEntry {
    eef: String,
    start: usize,
    end: usize,
    position: [f64; 3],
    #[serde(default = "identity_quaternion")]
    orientation: [f64; 4],
}

fn identity_quaternion() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialSection {
    com: [f64; 3],
    #[serde(default)]
    lin_momentum: [f64; 3],
    #[serde(default)]
    ang_momentum: [f64; 3],
    terminal: [f64; 9],
    /// Omitted: linear interpolation from the initial to the terminal state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    desired: Option<Vec<[f64; 9]>>,
}

impl ScenarioDocument {
    fn into_scenario(self) -> Result<Scenario, ModelError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        let n = self.time.n_timesteps;
        let config = ScenarioConfig {
            name: self.name,
            mass: self.robot.mass,
            gravity: Vector3::from(self.robot.gravity),
            friction_mu: self.robot.friction_mu,
            cop_bounds: [self.robot.cop_bounds_x, self.robot.cop_bounds_y],
            torque_bounds: self.robot.torque_bounds,
            dt_bounds: self.time.dt_bounds,
            end_effectors: self.robot.end_effectors.clone(),
            n_timesteps: n,
            nominal_dt: self.time.nominal_dt,
            time_mode: self.time.time_mode,
            relaxation_mode: self.costs.relaxation_mode,
            cost_weights: self.costs.weights,
        };
        let plan = ContactPlan {
            eef_ids: self.robot.end_effectors.iter().map(|e| e.id.clone()).collect(),
            phases: self
                .contacts
                .into_iter()
                .map(|c| {
                    let [w, x, y, z] = c.orientation;
                    ContactPhase {
                        eef_id: c.eef,
                        start_step: c.start,
                        end_step: c.end,
                        position: Vector3::from(c.position),
                        orientation: Quaternion::new(w, x, y, z),
                    }
                })
                .collect(),
            n_timesteps: n,
        };
        let init = self.initial;
        let start: MomentumState = {
            let mut h = [0.0; 9];
            h[0..3].copy_from_slice(&init.com);
            h[3..6].copy_from_slice(&init.lin_momentum);
            h[6..9].copy_from_slice(&init.ang_momentum);
            h
        };
        let desired = match init.desired {
            Some(d) => d,
            None => interpolate_desired(&start, &init.terminal, n),
        };
        let scenario = Scenario {
            config,
            plan,
            initial: InitialState {
                com: Vector3::from(init.com),
                lin_momentum: Vector3::from(init.lin_momentum),
                ang_momentum: Vector3::from(init.ang_momentum),
                desired,
                terminal: init.terminal,
            },
        };
        scenario.validate()?;
        Ok(scenario)
    }
}

fn interpolate_desired(start: &MomentumState, end: &MomentumState, n: usize) -> Vec<MomentumState> {
    (1..=n)
        .map(|t| {
            let s = t as f64 / n as f64;
            let mut h = [0.0; 9];
            for i in 0..9 {
                h[i] = start[i] + s * (end[i] - start[i]);
            }
            h
        })
        .collect()
}

impl From<&Scenario> for ScenarioDocument {
    fn from(s: &Scenario) -> Self {
        let c = &s.config;
        let v3 = |v: &Vector3<f64>| [v.x, v.y, v.z];
        ScenarioDocument {
            schema_version: SCHEMA_VERSION,
            name: c.name.clone(),
            robot: RobotSection {
                mass: c.mass,
                gravity: v3(&c.gravity),
                friction_mu: c.friction_mu,
                cop_bounds_x: c.cop_bounds[0],
                cop_bounds_y: c.cop_bounds[1],
                torque_bounds: c.torque_bounds,
                end_effectors: c.end_effectors.clone(),
            },
            time: TimeSection {
                n_timesteps: c.n_timesteps,
                nominal_dt: c.nominal_dt,
                dt_bounds: c.dt_bounds,
                time_mode: c.time_mode,
            },
            costs: CostsSection {
                relaxation_mode: c.relaxation_mode,
                weights: c.cost_weights.clone(),
            },
            contacts: s
                .plan
                .phases
                .iter()
                .map(|p| ContactEntry {
                    eef: p.eef_id.clone(),
                    start: p.start_step,
                    end: p.end_step,
                    position: v3(&p.position),
                    orientation: [p.orientation.w, p.orientation.i, p.orientation.j, p.orientation.k],
                })
                .collect(),
            initial: InitialSection {
                com: v3(&s.initial.com),
                lin_momentum: v3(&s.initial.lin_momentum),
                ang_momentum: v3(&s.initial.ang_momentum),
                terminal: s.initial.terminal,
                desired: Some(s.initial.desired.clone()),
            },
        }
    }
}
