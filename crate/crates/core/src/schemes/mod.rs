//! Stochastic Runge-Kutta Lawson schemes.
//!
//! A scheme is a tableau together with a [`LawsonMode`]. The mode decides how
//! much of the linear part is integrated exactly: the SDE is rewritten so that
//! the remaining linear parts live in the remainders `g_m`, and the generic
//! stepper then applies
//!
//! ```text
//! H_i     = Y + sum_j sum_m Z[m][i][j] e^{-dL_j} g~_m(t + c0_j, e^{dL_j} H_j)
//! V       = Y + sum_i sum_m z[m][i]    e^{-dL_i} g~_m(t + c0_i, e^{dL_i} H_i)
//! Y_{n+1} = e^{dL} V
//! ```
//!
//! With [`LawsonMode::None`] every exponential is the identity and the
//! underlying Runge-Kutta method is recovered.

mod implicit;
mod lawson;
mod tableau;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::{LinalgError, Vector};
use crate::model::{LawsonMode, ModelError};
use crate::noise::NoiseError;

pub use implicit::implicit_platen_step;
pub use lawson::{
    em_sl_step, integrate, integrate_final, integrate_global, integrate_observed, platen_sl_step,
    srk_lawson_step, Stepper,
};
pub use tableau::{
    tableau_euler_maruyama, tableau_midpoint, tableau_platen, tableau_platen_strong_15,
    tableau_platen_weak_2, Coefficients, SrkTableau, TableauKind, ALL_TABLEAUS,
};

/// States with a larger Euclidean norm count as blown up.
pub const BLOWUP_NORM: f64 = 1e12;
/// Newton stops once the residual max-norm is below `NEWTON_TOL (1 + |Y_n|)`.
pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("scheme {scheme} needs exactly one Wiener channel, SDE has {channels}")]
    Channels { scheme: &'static str, channels: usize },
    #[error("scheme needs the mixed integral dZ but the noise grid has none")]
    MissingDz,
    #[error("invalid tableau: {0}")]
    Tableau(String),
    #[error("Newton iteration did not converge: residual {residual:.3e} after {iterations} iterations")]
    NewtonFailed { residual: f64, iterations: usize },
    #[error("non-finite state")]
    NonFinite,
    #[error("state norm {norm:.3e} exceeded the blow-up threshold at step {step}")]
    Diverged { step: usize, norm: f64 },
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<SchemeError>,
    },
    #[error("{0}")]
    Mismatch(String),
    #[error("unknown scheme '{0}'")]
    UnknownScheme(String),
}

impl SchemeError {
    /// Blow-up, possibly wrapped in a step error.
    pub fn is_divergence(&self) -> bool {
        match self {
            SchemeError::Diverged { .. } | SchemeError::NonFinite => true,
            SchemeError::Step { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}

/// A tableau and how much of the linear part sits in the exponential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchemeSpec {
    pub tableau: SrkTableau,
    pub mode: LawsonMode,
}

impl SchemeSpec {
    pub fn new(kind: TableauKind, mode: LawsonMode) -> Self {
        SchemeSpec {
            tableau: SrkTableau::new(kind),
            mode,
        }
    }
}

/// Everything the integrators can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Lawson(SchemeSpec),
    /// Drift-implicit Platen order 1.0 comparator (no exponentials).
    ImplicitPlaten,
}

impl Scheme {
    pub fn lawson(kind: TableauKind, mode: LawsonMode) -> Self {
        Scheme::Lawson(SchemeSpec::new(kind, mode))
    }

    pub fn needs_dz(&self) -> bool {
        matches!(self, Scheme::Lawson(s) if s.tableau.needs_dz())
    }

    pub fn strong_order(&self) -> f64 {
        match self {
            Scheme::Lawson(s) => s.tableau.strong_order(),
            Scheme::ImplicitPlaten => 1.0,
        }
    }

    pub fn weak_order(&self) -> f64 {
        match self {
            Scheme::Lawson(s) => s.tableau.weak_order(),
            Scheme::ImplicitPlaten => 1.0,
        }
    }

    /// Every registered name.
    pub fn registry() -> Vec<Scheme> {
        let mut out = Vec::new();
        for kind in ALL_TABLEAUS {
            for mode in [LawsonMode::None, LawsonMode::Drift, LawsonMode::Full] {
                out.push(Scheme::lawson(kind, mode));
            }
        }
        out.push(Scheme::ImplicitPlaten);
        out
    }
}

fn mode_suffix(mode: LawsonMode) -> &'static str {
    match mode {
        LawsonMode::None => "raw",
        LawsonMode::Drift => "dsl",
        LawsonMode::Full => "fsl",
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Lawson(s) => write!(f, "{}-{}", s.tableau.name(), mode_suffix(s.mode)),
            Scheme::ImplicitPlaten => f.write_str("implicit-platen"),
        }
    }
}

impl FromStr for Scheme {
    type Err = SchemeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let name = s.trim().to_ascii_lowercase();
        if name == "implicit-platen" || name == "implicit-platen-raw" {
            return Ok(Scheme::ImplicitPlaten);
        }
        Scheme::registry()
            .into_iter()
            .find(|sch| sch.to_string() == name)
            .ok_or_else(|| SchemeError::UnknownScheme(s.to_string()))
    }
}

/// Time points and states `Y_0..Y_N` of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
}

impl Trajectory {
    pub fn last(&self) -> &Vector {
        self.states.last().expect("trajectory holds the initial state")
    }
}
