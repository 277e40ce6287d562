//! Trust-region optimization on the reduced model, plus a full-order baseline.
//!
//! The trust region is measured in the model's own error: a point is admissible
//! when q(μ) = Δ_Ĵ(μ)/Ĵ_r(μ) ≤ δ. The outer loop ([`run_trrb`]) decides acceptance
//! from cheap certified bounds first and falls back to FOM values only when they
//! are inconclusive.

mod fom_tr;
mod subproblem;
mod trrb;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EPS_ACTIVE;
use crate::rom::EnrichmentStrategy;

pub use fom_tr::{run_fom_tr_newton_cg, FomIterationRecord, FomReport};
pub use subproblem::{
    backtrack, compute_agc, evaluate_model, newton_direction, projected_bfgs_subproblem, solve_subproblem, ModelEval,
    Step, SubproblemExit, SubproblemResult,
};
pub use trrb::{
    rho, run_trrb, run_trrb_from, skip_enrichment_flag, Branch, IterationRecord, SkipInputs, TrAudit, TrReport, TrRun,
};

/// |predicted decrease| below this makes ρ = +∞.
pub const RHO_GUARD: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubproblemSolver {
    ProjectedNewton,
    ProjectedBfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// g_h ≤ τ_FOC at the last iterate.
    Converged,
    MaxIterations,
    /// δ fell below τ_mac.
    RadiusCollapse,
    /// Too many consecutive rejections.
    RejectionGuard,
}

impl Termination {
    pub fn converged(self) -> bool {
        self == Termination::Converged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrConfig {
    pub delta0: f64,
    pub beta1: f64,
    /// Backtracking factor.
    pub kappa: f64,
    pub beta2: f64,
    pub eta_rho: f64,
    pub tau_sub: f64,
    pub k_max: usize,
    pub k_sub_max: usize,
    pub armijo_max: usize,
    pub kappa_arm: f64,
    pub eps_active: f64,
    pub beta3: f64,
    pub tau_grad: f64,
    pub tau_foc: f64,
    pub delta_min: f64,
    pub tau_mac: f64,
    pub enrichment_strategy: EnrichmentStrategy,
    pub skip_enrichment_enabled: bool,
    pub subproblem: SubproblemSolver,
}

impl Default for TrConfig {
    fn default() -> Self {
        Self {
            delta0: 0.1,
            beta1: 0.5,
            kappa: 0.5,
            beta2: 0.95,
            eta_rho: 0.75,
            tau_sub: 1e-8,
            k_max: 60,
            k_sub_max: 400,
            armijo_max: 50,
            kappa_arm: 1e-4,
            eps_active: EPS_ACTIVE,
            beta3: 0.5,
            tau_grad: 0.01,
            tau_foc: 1e-5,
            delta_min: 1e-6,
            tau_mac: 2.22e-16,
            enrichment_strategy: EnrichmentStrategy::TaylorDirectional,
            skip_enrichment_enabled: true,
            subproblem: SubproblemSolver::ProjectedNewton,
        }
    }
}

impl TrConfig {
    /// Projected Newton, directional enrichment, enrichment skipped when allowed.
    pub fn newton_oe(tau_foc: f64) -> Self {
        Self { tau_foc, ..Self::default() }
    }

    /// Projected Newton enriching after every accepted step.
    pub fn newton_ue(tau_foc: f64) -> Self {
        Self { tau_foc, skip_enrichment_enabled: false, ..Self::default() }
    }

    /// Projected BFGS on Lagrangian bases, enriching after every accepted step.
    pub fn bfgs_ue(tau_foc: f64) -> Self {
        Self {
            tau_foc,
            skip_enrichment_enabled: false,
            enrichment_strategy: EnrichmentStrategy::Lagrangian,
            subproblem: SubproblemSolver::ProjectedBfgs,
            ..Self::default()
        }
    }

    /// Tolerance on the relative gap between g_h and g_r.
    pub fn tau_g(&self) -> f64 {
        self.tau_foc / self.tau_sub
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("kappa", self.kappa),
            ("eta_rho", self.eta_rho),
            ("tau_sub", self.tau_sub),
            ("tau_grad", self.tau_grad),
        ];
        for (name, v) in open_unit {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Configuration(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        let positive = [
            ("delta0", self.delta0),
            ("kappa_arm", self.kappa_arm),
            ("tau_foc", self.tau_foc),
            ("delta_min", self.delta_min),
            ("tau_mac", self.tau_mac),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Configuration(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.eps_active >= 0.0) {
            return Err(Error::Configuration(format!("eps_active must be nonnegative, got {}", self.eps_active)));
        }
        if self.k_max == 0 || self.k_sub_max == 0 {
            return Err(Error::Configuration("iteration limits must be at least 1".into()));
        }
        Ok(())
    }
}
