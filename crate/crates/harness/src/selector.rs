use std::fmt;
use std::sync::Arc;

use deepcat_core::{Criterion, ParamEnsemble};
use deepcat_rl::QNetwork;

use crate::error::{HarnessError, Result};

/// An item-selection strategy.
#[derive(Debug, Clone)]
pub enum Selector {
    Heuristic(Criterion),
    QLearning(Arc<QNetwork>),
    /// Criterion integrated over posterior draws of the item parameters.
    Ensemble {
        ensemble: Arc<ParamEnsemble>,
        criterion: Criterion,
    },
}

impl Selector {
    /// Stable identifier used in reports and requests.
    pub fn id(&self) -> String {
        match self {
            Selector::Heuristic(c) => c.as_str().to_string(),
            Selector::QLearning(_) => "qlearning".into(),
            Selector::Ensemble { criterion, .. } => format!("ensemble_{}", criterion.as_str()),
        }
    }

    /// Parse a heuristic id or `qlearning` (which needs a loaded policy).
    pub fn parse(id: &str, policy: Option<Arc<QNetwork>>) -> Result<Self> {
        if id == "qlearning" {
            return policy
                .map(Selector::QLearning)
                .ok_or_else(|| HarnessError::PolicyNotLoaded);
        }
        id.parse::<Criterion>()
            .map(Selector::Heuristic)
            .map_err(|_| HarnessError::UnknownSelector(id.to_string()))
    }

    pub fn n_factors(&self) -> Option<usize> {
        match self {
            Selector::Heuristic(_) => None,
            Selector::QLearning(net) => Some(net.config.n_factors),
            Selector::Ensemble { ensemble, .. } => Some(ensemble.n_factors()),
        }
    }

    pub fn n_members(&self) -> usize {
        match self {
            Selector::Ensemble { ensemble, .. } => ensemble.len(),
            _ => 1,
        }
    }
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}
