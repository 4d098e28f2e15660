//! Recorded adversary traces and the empirical Exp3 regret check.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::adversary::LossEstimateVector;
use crate::error::{Error, Result};
use crate::simplex::SimplexDistribution;

/// Slack on `lhs <= rhs`.
pub const REGRET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub step: u64,
    pub arm: usize,
    /// Observed bounded loss of the sampled arm.
    pub loss: f64,
    /// Probability with which `arm` was drawn.
    pub p_arm: f64,
    /// `<q, L~>` with `q` the learned distribution before the update.
    pub q_dot_estimate: f64,
}

/// Per-update records plus the running totals the regret is built from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegretTrace {
    arms: usize,
    rows: Vec<RegretRow>,
    cumulative_estimate: Vec<f64>,
    total_q_dot: f64,
    total_loss: f64,
}

impl RegretTrace {
    pub fn new(arms: usize) -> Self {
        Self {
            arms,
            rows: Vec::new(),
            cumulative_estimate: vec![0.0; arms],
            total_q_dot: 0.0,
            total_loss: 0.0,
        }
    }

    /// Records one update. `estimate` must be the single-entry estimate the
    /// adversary is about to apply and `q` its learned distribution beforehand.
    pub fn record(
        &mut self,
        step: u64,
        arm: usize,
        loss: f64,
        p_arm: f64,
        q: &SimplexDistribution,
        estimate: &LossEstimateVector,
    ) -> Result<()> {
        if arm >= self.arms || q.len() != self.arms || estimate.len() != self.arms {
            return Err(Error::ShapeMismatch(format!(
                "trace over {} arms got arm {arm}, q of length {}, estimate of length {}",
                self.arms,
                q.len(),
                estimate.len()
            )));
        }
        let q_dot = estimate
            .entry()
            .map_or(0.0, |(i, value)| q[i] * value);
        self.push(RegretRow {
            step,
            arm,
            loss,
            p_arm,
            q_dot_estimate: q_dot,
        });
        Ok(())
    }

    fn push(&mut self, row: RegretRow) {
        if row.loss != 0.0 {
            self.cumulative_estimate[row.arm] += row.loss / row.p_arm;
        }
        self.total_q_dot += row.q_dot_estimate;
        self.total_loss += row.loss;
        self.rows.push(row);
    }

    /// Rebuilds the running totals from stored rows.
    pub fn from_rows(arms: usize, rows: Vec<RegretRow>) -> Result<Self> {
        let mut trace = Self::new(arms);
        for row in rows {
            if row.arm >= arms {
                return Err(Error::IndexOutOfRange {
                    index: row.arm,
                    len: arms,
                });
            }
            if !(row.p_arm > 0.0 && row.p_arm <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "step {}: p_arm {} not in (0, 1]",
                    row.step, row.p_arm
                )));
            }
            trace.push(row);
        }
        Ok(trace)
    }

    pub fn arms(&self) -> usize {
        self.arms
    }

    pub fn rows(&self) -> &[RegretRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `sum_t <e_u, L~^t>` for every arm `u`.
    pub fn cumulative_estimate(&self) -> &[f64] {
        &self.cumulative_estimate
    }

    pub fn total_q_dot(&self) -> f64 {
        self.total_q_dot
    }

    /// `sum_t` of observed losses (the realized mistake count for 0-1 losses).
    pub fn total_loss(&self) -> f64 {
        self.total_loss
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,arm,loss,p_arm,q_dot_estimate")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:?},{:?},{:?}",
                r.step, r.arm, r.loss, r.p_arm, r.q_dot_estimate
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(arms: usize, input: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            let lineno = n + 1;
            if n == 0 {
                if line.trim() != "step,arm,loss,p_arm,q_dot_estimate" {
                    return Err(Error::Parse {
                        line: 1,
                        column: 1,
                        message: format!("unexpected header {line:?}"),
                    });
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 5 {
                return Err(Error::Parse {
                    line: lineno,
                    column: cells.len().min(5) + 1,
                    message: format!("expected 5 columns, found {}", cells.len()),
                });
            }
            let parse_err = |column: usize, cell: &str| Error::Parse {
                line: lineno,
                column,
                message: format!("cannot parse {cell:?}"),
            };
            let int = |c: usize| cells[c].trim().parse::<u64>().map_err(|_| parse_err(c + 1, cells[c]));
            let real = |c: usize| cells[c].trim().parse::<f64>().map_err(|_| parse_err(c + 1, cells[c]));
            rows.push(RegretRow {
                step: int(0)?,
                arm: int(1)? as usize,
                loss: real(2)?,
                p_arm: real(3)?,
                q_dot_estimate: real(4)?,
            });
        }
        Self::from_rows(arms, rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegretStatus {
    Pass,
    Fail,
    /// `eta > gamma / m`: the bound does not apply.
    PreconditionViolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    /// Regret against each vertex `e_u`.
    pub lhs: Vec<f64>,
    pub rhs: f64,
    pub status: RegretStatus,
}

impl RegretReport {
    pub fn max_regret(&self) -> f64 {
        self.lhs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Compares the recorded regret against `ln(m)/eta + eta m / ((1-gamma) gamma) * sum loss`
/// for every comparator vertex.
pub fn regret_check(trace: &RegretTrace, eta: f64, gamma: f64, m: usize) -> Result<RegretReport> {
    if trace.arms() != m {
        return Err(Error::ShapeMismatch(format!(
            "trace over {} arms checked with m = {m}",
            trace.arms()
        )));
    }
    if !(eta > 0.0 && gamma > 0.0 && gamma < 1.0 && m >= 2) {
        return Err(Error::InvalidArgument(format!("eta {eta}, gamma {gamma}, m {m}")));
    }
    let mf = m as f64;
    let lhs: Vec<f64> = trace
        .cumulative_estimate()
        .iter()
        .map(|c| c - trace.total_q_dot())
        .collect();
    let rhs = mf.ln() / eta + eta * mf / ((1.0 - gamma) * gamma) * trace.total_loss();
    let status = if eta > gamma / mf {
        RegretStatus::PreconditionViolated
    } else if lhs.iter().all(|&l| l <= rhs + REGRET_TOLERANCE) {
        RegretStatus::Pass
    } else {
        RegretStatus::Fail
    };
    Ok(RegretReport { lhs, rhs, status })
}
