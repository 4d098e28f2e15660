use serde::{Deserialize, Serialize};

use crate::attack::AttackConfig;
use crate::cvar::{alpha_from_gamma, CVaRLevel};
use crate::error::{Error, Result};
use crate::learner::{Architecture, OptimizerState};

pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Erm,
    Cfol,
    CfolReweighted,
    Fol,
    Lcvar,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Erm,
        Method::Cfol,
        Method::CfolReweighted,
        Method::Fol,
        Method::Lcvar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Erm => "erm",
            Method::Cfol => "cfol",
            Method::CfolReweighted => "cfol_reweighted",
            Method::Fol => "fol",
            Method::Lcvar => "lcvar",
        }
    }

    pub fn uses_bandit(self) -> bool {
        matches!(self, Method::Cfol | Method::CfolReweighted | Method::Fol)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Bounded loss reported to the adversary for each attacked example.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryLoss {
    #[default]
    ZeroOne,
    ClippedCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EarlyStopMetric {
    #[default]
    AverageRobust,
    WorstClassRobust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs at which the learning rate is multiplied by `decay_factor`.
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            decay_epochs: vec![100, 150],
            decay_factor: 0.1,
        }
    }
}

impl OptimizerConfig {
    /// Optimizer with epoch boundaries converted to steps `floor(e * n / batch)`.
    pub fn build(&self, n: usize, batch_size: usize) -> Result<OptimizerState> {
        let schedule = self
            .decay_epochs
            .iter()
            .map(|&e| (((e * n) / batch_size) as u64, self.decay_factor))
            .collect();
        OptimizerState::new(self.learning_rate, self.momentum, self.weight_decay, schedule)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Method,
    /// Adversary step size (cfol, cfol_reweighted, fol).
    pub eta: Option<f64>,
    /// Uniform mixing (cfol, cfol_reweighted, fol; lcvar uses it to derive alpha).
    pub gamma: Option<f64>,
    /// CVaR level (lcvar).
    pub alpha: Option<f64>,
    pub adversary_loss: AdversaryLoss,
    pub architecture: Architecture,
    pub optimizer: OptimizerConfig,
    pub train_attack: AttackConfig,
    pub eval_attack: AttackConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stop_metric: EarlyStopMetric,
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Snapshot cadence in steps; defaults to `ceil(T / 200)`.
    pub snapshot_every: Option<usize>,
    pub ensemble_n: usize,
    pub failure_delta: f64,
    /// Also evaluate the training split every epoch.
    pub train_metrics: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: Method::Erm,
            eta: None,
            gamma: None,
            alpha: None,
            adversary_loss: AdversaryLoss::ZeroOne,
            architecture: Architecture::Linear,
            optimizer: OptimizerConfig::default(),
            train_attack: AttackConfig::disabled(),
            eval_attack: AttackConfig::disabled(),
            epochs: 10,
            batch_size: 32,
            early_stop_metric: EarlyStopMetric::AverageRobust,
            holdout_fraction: 0.2,
            seed: 0,
            snapshot_every: None,
            ensemble_n: 1,
            failure_delta: 0.05,
            train_metrics: true,
        }
    }
}

/// Method-specific settings after validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodSettings {
    Erm,
    Bandit { eta: f64, gamma: f64 },
    Lcvar { alpha: Option<f64> },
}

impl RunConfig {
    /// Parses a JSON run config; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::InvalidConfig(format!("{path}: {}", e.into_inner()))
        })
    }

    /// Checks the config and returns the settings the chosen method needs.
    /// Fields irrelevant to the method are ignored with a warning.
    pub fn validate(&self) -> Result<MethodSettings> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidConfig(format!(
                "holdout_fraction {} not in [0, 1)",
                self.holdout_fraction
            )));
        }
        if !(self.failure_delta > 0.0 && self.failure_delta < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "failure_delta {} not in (0, 1)",
                self.failure_delta
            )));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::InvalidConfig("snapshot_every must be >= 1".into()));
        }
        if self.ensemble_n == 0 {
            return Err(Error::InvalidConfig("ensemble_n must be >= 1".into()));
        }
        self.train_attack
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("train_attack: {e}")))?;
        self.eval_attack
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("eval_attack: {e}")))?;
        self.optimizer
            .build(1, 1)
            .map_err(|e| Error::InvalidConfig(format!("optimizer: {e}")))?;

        let warn_unused = |field: &str, set: bool| {
            if set {
                log::warn!("{field} is ignored by method {}", self.method);
            }
        };
        match self.method {
            Method::Erm => {
                warn_unused("eta", self.eta.is_some());
                warn_unused("gamma", self.gamma.is_some());
                warn_unused("alpha", self.alpha.is_some());
                Ok(MethodSettings::Erm)
            }
            Method::Cfol | Method::CfolReweighted | Method::Fol => {
                warn_unused("alpha", self.alpha.is_some());
                let eta = self.eta.ok_or_else(|| {
                    Error::InvalidConfig(format!("method {} requires eta", self.method))
                })?;
                if !(eta > 0.0 && eta.is_finite()) {
                    return Err(Error::InvalidConfig(format!("eta {eta} must be positive")));
                }
                let gamma = self.gamma.unwrap_or(DEFAULT_GAMMA);
                if !(gamma > 0.0 && gamma < 1.0) {
                    return Err(Error::InvalidConfig(format!("gamma {gamma} not in (0, 1)")));
                }
                Ok(MethodSettings::Bandit { eta, gamma })
            }
            Method::Lcvar => {
                warn_unused("eta", self.eta.is_some());
                if let Some(alpha) = self.alpha {
                    CVaRLevel::new(alpha).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                    warn_unused("gamma", self.gamma.is_some());
                } else if let Some(gamma) = self.gamma {
                    if !(gamma > 0.0 && gamma < 1.0) {
                        return Err(Error::InvalidConfig(format!("gamma {gamma} not in (0, 1)")));
                    }
                }
                Ok(MethodSettings::Lcvar { alpha: self.alpha })
            }
        }
    }

    /// CVaR level for LCVaR over `k` classes: `alpha` if given, otherwise the
    /// level matching the Exp3 mixing cap for `gamma`.
    pub fn lcvar_level(&self, k: usize) -> Result<CVaRLevel> {
        match self.alpha {
            Some(a) => CVaRLevel::new(a),
            None => alpha_from_gamma(self.gamma.unwrap_or(DEFAULT_GAMMA), k),
        }
    }
}
