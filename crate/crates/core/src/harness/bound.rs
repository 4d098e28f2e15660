//! Runs CFOL with the theoretical step size and compares the ensemble
//! worst-class risk with the high-probability bound.

use serde::{Deserialize, Serialize};

use crate::adversary::theoretical_eta;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SeededRng};

use super::config::{Method, RunConfig};
use super::evaluate::{ensemble_risk, theorem_bound_terms, TheoremBound};
use super::{split_dataset, train, TrainResult};

const STREAM_ENSEMBLE: u64 = 3 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundMonitorReport {
    /// Mistake bound the accepted run was tuned for; never below its realized loss.
    pub mistake_bound: f64,
    pub realized_loss: f64,
    pub eta: f64,
    pub total_steps: u64,
    pub ensemble_n: usize,
    pub ensemble_worst_class: f64,
    pub bound: TheoremBound,
    pub bound_total: f64,
    pub holds: bool,
    /// Training runs performed while searching for a consistent `C`.
    pub runs: usize,
}

/// Trains CFOL with `eta = theoretical_eta(k, C)` and `gamma = 1/2`, and checks
/// the ensemble worst-class training risk against the bound.
///
/// `C` must bound the realized cumulative loss of the run it tunes. The search
/// starts from `C = max(k log k, T)`, which holds for any run, then retries with
/// the realized loss as long as the retried run stays below its own `C`.
pub fn bound_monitor(
    config: &RunConfig,
    dataset: &LabeledDataset,
    max_runs: usize,
) -> Result<(BoundMonitorReport, TrainResult)> {
    if config.method != Method::Cfol {
        return Err(Error::InvalidConfig("the bound monitor runs method cfol".into()));
    }
    if config.batch_size != 1 {
        return Err(Error::InvalidConfig("the bound monitor needs batch_size 1".into()));
    }
    if max_runs == 0 {
        return Err(Error::InvalidArgument("max_runs must be >= 1".into()));
    }
    let k = dataset.num_classes();
    let floor = k as f64 * (k as f64).ln();

    let run_with = |c: f64| -> Result<(TrainResult, f64, f64)> {
        let eta = theoretical_eta(k, c)?;
        let mut cfg = config.clone();
        cfg.eta = Some(eta);
        cfg.gamma = Some(0.5);
        let result = train(&cfg, dataset)?;
        let realized = result
            .regret
            .as_ref()
            .map_or(0.0, |trace| trace.total_loss());
        Ok((result, eta, realized))
    };

    let steps = (config.epochs * split_dataset(config, dataset)?.0.len()) as u64;
    if steps == 0 {
        return Err(Error::InvalidConfig("the bound monitor needs at least one step".into()));
    }

    let mut c = floor.max(steps as f64);
    let (mut accepted, mut eta, mut realized) = run_with(c)?;
    let mut runs = 1;
    while runs < max_runs {
        let next = floor.max(realized);
        if next >= c {
            break;
        }
        let (result, next_eta, next_realized) = run_with(next)?;
        runs += 1;
        if floor.max(next_realized) > next {
            break;
        }
        c = next;
        accepted = result;
        eta = next_eta;
        realized = next_realized;
    }

    let mut rng = SeededRng::new(derive_seed(config.seed, STREAM_ENSEMBLE));
    let ensemble = ensemble_risk(
        &accepted.snapshots,
        config.ensemble_n,
        &accepted.train_data,
        &config.train_attack,
        &mut rng,
    )?;
    let bound = theorem_bound_terms(c, k, steps, config.ensemble_n, config.failure_delta)?;
    let total = bound.total();
    Ok((
        BoundMonitorReport {
            mistake_bound: c,
            realized_loss: realized,
            eta,
            total_steps: steps,
            ensemble_n: config.ensemble_n,
            ensemble_worst_class: ensemble.worst_class,
            bound,
            bound_total: total,
            holds: ensemble.worst_class <= total,
            runs,
        },
        accepted,
    ))
}
