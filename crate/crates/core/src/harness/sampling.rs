//! How the bandit methods draw examples, weight gradients and feed the adversary.

use crate::adversary::{reweighted_estimator, AdversaryState, LossEstimateVector};
use crate::data::{sample_example, ClassPartition};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::simplex::sample_index;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingScheme {
    /// Class drawn from `p`, example uniform within the class (CFOL).
    ClassAdaptive,
    /// Class drawn uniformly, gradient scaled by `k p_y` (reweighted CFOL).
    ClassReweighted,
    /// Example drawn from `p` over all `N` rows (FOL).
    ExampleAdaptive,
}

/// A drawn pair: the adversary arm and the dataset row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub arm: usize,
    pub row: usize,
}

impl SamplingScheme {
    pub fn draw(
        self,
        adversary: &AdversaryState,
        partition: &ClassPartition,
        rng: &mut SeededRng,
    ) -> Result<Draw> {
        match self {
            SamplingScheme::ClassAdaptive => {
                let arm = sample_index(adversary.p(), rng);
                Ok(Draw {
                    arm,
                    row: sample_example(partition, arm, rng)?,
                })
            }
            SamplingScheme::ClassReweighted => {
                let arm = rng.below(partition.num_classes());
                Ok(Draw {
                    arm,
                    row: sample_example(partition, arm, rng)?,
                })
            }
            SamplingScheme::ExampleAdaptive => {
                let arm = sample_index(adversary.p(), rng);
                Ok(Draw { arm, row: arm })
            }
        }
    }

    /// Probability that `draw` would be produced from `adversary`.
    pub fn draw_probability(
        self,
        adversary: &AdversaryState,
        partition: &ClassPartition,
        labels: &[usize],
        draw: Draw,
    ) -> f64 {
        match self {
            SamplingScheme::ClassAdaptive | SamplingScheme::ClassReweighted => {
                if labels[draw.row] != draw.arm {
                    return 0.0;
                }
                self.arm_probability(adversary, draw.arm) / partition.class(draw.arm).len() as f64
            }
            SamplingScheme::ExampleAdaptive => {
                if draw.arm == draw.row {
                    adversary.p()[draw.arm]
                } else {
                    0.0
                }
            }
        }
    }

    /// Probability with which `arm` is drawn.
    pub fn arm_probability(self, adversary: &AdversaryState, arm: usize) -> f64 {
        match self {
            SamplingScheme::ClassAdaptive | SamplingScheme::ExampleAdaptive => adversary.p()[arm],
            SamplingScheme::ClassReweighted => 1.0 / adversary.num_arms() as f64,
        }
    }

    /// Scale applied to the model gradient of a drawn example.
    pub fn gradient_weight(self, adversary: &AdversaryState, arm: usize) -> Result<f64> {
        match self {
            SamplingScheme::ClassReweighted => adversary.reweight_factor(arm),
            _ => Ok(1.0),
        }
    }

    /// Adversary estimate for an observed loss; `sampling_state` is the state
    /// the arm was drawn from.
    pub fn estimate(
        self,
        sampling_state: &AdversaryState,
        arm: usize,
        loss: f64,
    ) -> Result<LossEstimateVector> {
        match self {
            SamplingScheme::ClassReweighted => {
                reweighted_estimator(arm, loss, sampling_state.num_arms())
            }
            _ => sampling_state.build_estimator(arm, loss),
        }
    }

    pub fn num_arms(self, partition: &ClassPartition) -> usize {
        match self {
            SamplingScheme::ExampleAdaptive => partition.total(),
            _ => partition.num_classes(),
        }
    }
}

impl TryFrom<super::Method> for SamplingScheme {
    type Error = Error;
    fn try_from(m: super::Method) -> Result<Self> {
        match m {
            super::Method::Cfol => Ok(SamplingScheme::ClassAdaptive),
            super::Method::CfolReweighted => Ok(SamplingScheme::ClassReweighted),
            super::Method::Fol => Ok(SamplingScheme::ExampleAdaptive),
            other => Err(Error::InvalidArgument(format!("{other} has no bandit sampler"))),
        }
    }
}
