//! Run configuration as read from JSON.

use std::path::Path;
use std::sync::Arc;

use rdueq_core::equilibrium::SearchConfig;
use rdueq_core::hfun::{h_for, HFunction, PhiH};
use rdueq_core::model::{MarketParams, MarketSpec};
use rdueq_core::par::Execution;
use rdueq_core::problem::Problem;
use rdueq_core::timevar::{default_eps_ladder, SolverConfig};
use rdueq_core::weighting::{PhiFamily, PhiShift, Weighting};
use serde::Deserialize;

use crate::Failure;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketSpec,
    pub utility: UtilityBlock,
    pub weighting: WeightingBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityBlock {
    pub gamma: f64,
}

/// `phi` takes `lambda` and exactly one of `nu` (constant shift) or
/// `beta` (ν(t) = −β√(T−t)).
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WeightingBlock {
    Identity,
    Phi { lambda: f64, nu: Option<f64>, beta: Option<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverBlock {
    /// RK4 steps on [0, T].
    pub steps: usize,
    pub eps_ladder: Vec<f64>,
    /// Uniform η grid of the optimiser.
    pub eta_grid_points: usize,
    /// Checked times kT/n, k < n.
    pub verify_points: usize,
    pub wealth: f64,
    pub execution: Execution,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            steps: 20_000,
            eps_ladder: default_eps_ladder(),
            eta_grid_points: 201,
            verify_points: 50,
            wealth: 1.0,
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputBlock {
    pub format: Format,
    pub path: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
    }

    pub fn weighting(&self) -> Result<Arc<dyn Weighting>, Failure> {
        match self.weighting {
            WeightingBlock::Identity => Ok(Arc::new(rdueq_core::weighting::Identity)),
            WeightingBlock::Phi { lambda, nu, beta } => {
                let shift = match (nu, beta) {
                    (Some(nu), None) => PhiShift::Constant { nu },
                    (None, Some(beta)) => PhiShift::SqrtDecay { beta, horizon: self.market.horizon },
                    (None, None) => PhiShift::Constant { nu: 0.0 },
                    (Some(_), Some(_)) => return Err(Failure::Input("weighting takes nu or beta, not both".into())),
                };
                Ok(Arc::new(PhiFamily::new(lambda, shift)?))
            }
        }
    }

    pub fn h(&self) -> Result<HFunction, Failure> {
        match self.weighting {
            // the identity is the Φ-family member λ = 1, ν = 0; the closed
            // backend is exact
            WeightingBlock::Identity => Ok(Arc::new(PhiH::new(PhiFamily::constant(1.0, 0.0)?))),
            _ => Ok(h_for(self.weighting()?)),
        }
    }

    pub fn problem(&self) -> Result<Problem, Failure> {
        let market = MarketParams::from_spec(self.market.clone())?;
        Ok(Problem::new(market, self.h()?, self.utility.gamma)?)
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig { steps: self.solver.steps, eps_ladder: self.solver.eps_ladder.clone(), execution: self.solver.execution }
    }

    pub fn search(&self) -> SearchConfig {
        SearchConfig {
            grid_points: self.solver.eta_grid_points,
            wealth: self.solver.wealth,
            steps: self.solver.steps,
            execution: self.solver.execution,
        }
    }
}
