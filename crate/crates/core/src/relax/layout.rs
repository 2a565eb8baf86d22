//! Variable layout of the relaxed program.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dc::DcPair;

/// Quantity multiplied by the timestep in the state update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeProduct {
    /// `l̂_t Δ_t` in the CoM update.
    Lin,
    /// `l̂̇_t Δ_t` in the linear momentum update.
    LinRate,
    /// `k̂̇_t Δ_t` in the angular momentum update.
    AngRate,
}

/// Identifies one split bilinear term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairKey {
    /// Component `axis` of `ℓ × f` for end-effector `eef` at step `t`.
    Cross { t: usize, eef: usize, axis: usize },
    Time { t: usize, product: TimeProduct, axis: usize },
}

impl PairKey {
    pub fn step(&self) -> usize {
        match *self {
            Self::Cross { t, .. } | Self::Time { t, .. } => t,
        }
    }

    pub fn is_time(&self) -> bool {
        matches!(self, Self::Time { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Epigraph {
    Running(usize),
    Terminal,
}

/// Every decision variable of the relaxed program. Momenta, rates, forces and
/// torques are divided by the robot mass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKey {
    Com { t: usize, axis: usize },
    Lin { t: usize, axis: usize },
    Ang { t: usize, axis: usize },
    LinRate { t: usize, axis: usize },
    AngRate { t: usize, axis: usize },
    Force { t: usize, eef: usize, axis: usize },
    Torque { t: usize, eef: usize },
    Cop { t: usize, eef: usize, axis: usize },
    Dt { t: usize },
    Aux { pair: PairKey, side: Side },
    Epigraph(Epigraph),
}

const AXES: [&str; 3] = ["x", "y", "z"];

impl fmt::Display for VarKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Com { t, axis } => write!(f, "r[{t}].{}", AXES[axis]),
            Self::Lin { t, axis } => write!(f, "l[{t}].{}", AXES[axis]),
            Self::Ang { t, axis } => write!(f, "k[{t}].{}", AXES[axis]),
            Self::LinRate { t, axis } => write!(f, "ldot[{t}].{}", AXES[axis]),
            Self::AngRate { t, axis } => write!(f, "kdot[{t}].{}", AXES[axis]),
            Self::Force { t, eef, axis } => write!(f, "f[{t},{eef}].{}", AXES[axis]),
            Self::Torque { t, eef } => write!(f, "tau[{t},{eef}]"),
            Self::Cop { t, eef, axis } => write!(f, "z[{t},{eef}].{}", AXES[axis]),
            Self::Dt { t } => write!(f, "dt[{t}]"),
            Self::Aux { pair, side } => {
                let s = match side {
                    Side::Plus => "pbar",
                    Side::Minus => "qbar",
                };
                match pair {
                    PairKey::Cross { t, eef, axis } => {
                        write!(f, "{s}[cross {t},{eef}].{}", AXES[axis])
                    }
                    PairKey::Time { t, product, axis } => {
                        write!(f, "{s}[time {t},{product:?}].{}", AXES[axis])
                    }
                }
            }
            Self::Epigraph(Epigraph::Running(t)) => write!(f, "cost[{t}]"),
            Self::Epigraph(Epigraph::Terminal) => write!(f, "cost[terminal]"),
        }
    }
}

/// Maps each [`VarKey`] to its column of the program and keeps the split
/// bilinear terms.
#[derive(Debug, Clone, Default)]
pub struct RelaxedProblemLayout {
    pub n_steps: usize,
    pub keys: Vec<VarKey>,
    index: HashMap<VarKey, usize>,
    pub pairs: Vec<(PairKey, DcPair)>,
    /// Active end-effector indices per step, in plan order.
    pub active: Vec<Vec<usize>>,
    pub has_dt: bool,
    /// Equality rows of the dynamics (15 per step).
    pub dynamics_rows: usize,
}

impl RelaxedProblemLayout {
    pub(crate) fn new(n_steps: usize, active: Vec<Vec<usize>>, has_dt: bool) -> Self {
        Self {
            n_steps,
            active,
            has_dt,
            ..Self::default()
        }
    }

    pub(crate) fn push(&mut self, key: VarKey) -> usize {
        let i = self.keys.len();
        let old = self.index.insert(key, i);
        assert!(old.is_none(), "variable {key} allocated twice");
        self.keys.push(key);
        i
    }

    pub fn n_vars(&self) -> usize {
        self.keys.len()
    }

    pub fn get(&self, key: &VarKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Column of `key`; panics if the layout has no such variable.
    pub fn idx(&self, key: VarKey) -> usize {
        self.index[&key]
    }

    pub fn vec3(&self, key: impl Fn(usize) -> VarKey) -> [usize; 3] {
        [0, 1, 2].map(|a| self.idx(key(a)))
    }

    pub fn aux_count(&self) -> usize {
        2 * self.pairs.len()
    }

    pub fn time_pair_count(&self) -> usize {
        self.pairs.iter().filter(|(k, _)| k.is_time()).count()
    }

    /// Reads values by key from another layout's solution vector. Keys absent
    /// from `other` are filled with zero.
    pub fn project(&self, other: &RelaxedProblemLayout, x: &[f64]) -> Vec<f64> {
        self.keys
            .iter()
            .map(|k| other.get(k).map_or(0.0, |i| x[i]))
            .collect()
    }

    /// True when every column has exactly one key and vice versa.
    pub fn is_bijective(&self) -> bool {
        self.index.len() == self.keys.len()
            && self.keys.iter().enumerate().all(|(i, k)| self.index.get(k) == Some(&i))
    }
}
