//! Inference-time merging of the masks decoded from `K` sampled prompts.
//!
//! Besides decoding the mean prompt alone, five rules combine the `K` masks:
//! per-pixel max or mean of the logits, per-pixel max or mean of the
//! thresholded masks, and a majority vote.

use thiserror::Error;

use crate::decoder::{iou, DecoderError, MaskGrid, ToyTask};
use crate::dist::{DistError, PromptDistribution};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Samples drawn at inference; matches the training default.
pub const DEFAULT_MERGE_SAMPLES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error("unknown merge strategy `{0}`")]
    InvalidStrategy(String),
    #[error("merge needs at least one mask")]
    Empty,
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

pub type Result<T> = std::result::Result<T, MergeError>;

pub trait MergeStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    /// `false` for the strategy that decodes only the mean prompt.
    fn uses_samples(&self) -> bool {
        true
    }

    /// Combines logit grids into one binary mask.
    fn merge(&self, logits: &[MaskGrid], threshold: f64) -> Result<MaskGrid>;
}

fn pixelwise(grids: &[MaskGrid], fold: impl Fn(&[f64]) -> f64) -> Result<Tensor> {
    let first = grids.first().ok_or(MergeError::Empty)?;
    let len = first.values().len();
    let mut column = vec![0.0; grids.len()];
    let data = (0..len)
        .map(|p| {
            for (slot, g) in column.iter_mut().zip(grids) {
                *slot = g.values().data()[p];
            }
            fold(&column)
        })
        .collect();
    Ok(Tensor::new(first.values().shape().to_vec(), data).map_err(DecoderError::from)?)
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn mean_of(xs: &[f64]) -> f64 {
    // Equal inputs must give back exactly that value.
    if xs.iter().all(|&x| x == xs[0]) {
        return xs[0];
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn binaries(logits: &[MaskGrid], threshold: f64) -> Result<Vec<MaskGrid>> {
    logits
        .iter()
        .map(|g| g.to_binary(threshold).map_err(MergeError::from))
        .collect()
}

pub struct MeanPromptOnly;

impl MergeStrategy for MeanPromptOnly {
    fn name(&self) -> &'static str {
        "mean-prompt-only"
    }

    fn uses_samples(&self) -> bool {
        false
    }

    fn merge(&self, logits: &[MaskGrid], threshold: f64) -> Result<MaskGrid> {
        Ok(logits.first().ok_or(MergeError::Empty)?.to_binary(threshold)?)
    }
}

pub struct MaxLogit;

impl MergeStrategy for MaxLogit {
    fn name(&self) -> &'static str {
        "max-logit"
    }

    fn merge(&self, logits: &[MaskGrid], threshold: f64) -> Result<MaskGrid> {
        Ok(MaskGrid::logits(pixelwise(logits, max_of)?)?.to_binary(threshold)?)
    }
}

pub struct MeanLogit;

impl MergeStrategy for MeanLogit {
    fn name(&self) -> &'static str {
        "mean-logit"
    }

    fn merge(&self, logits: &[MaskGrid], threshold: f64) -> Result<MaskGrid> {
        Ok(MaskGrid::logits(pixelwise(logits, mean_of)?)?.to_binary(threshold)?)
    }
}

pub struct MaxBinary;

impl MergeStrategy for MaxBinary {
    fn name(&self) -> &'static str {
        "max-binary"
    }

    fn merge(&self, logits: &[MaskGrid], threshold: f64) -> Result<MaskGrid> {
        Ok(MaskGrid::binary(pixelwise(&binaries(logits, threshold)?, max_of)?)?)
    }
}

pub struct MeanBinary;

impl MergeStrategy for MeanBinary {
    fn name(&self) -> &'static str {
        "mean-binary"
    }

    fn merge(&self, logits: &[MaskGrid], threshold: f64) -> Result<MaskGrid> {
        let votes = pixelwise(&binaries(logits, threshold)?, mean_of)?;
        Ok(MaskGrid::binary(
            votes.map(|v| if v >= 0.5 { 1.0 } else { 0.0 }).map_err(DecoderError::from)?,
        )?)
    }
}

/// Strict majority of the binary masks; an even split goes to the mean
/// probability compared against the threshold.
pub struct MajorityVote;

impl MergeStrategy for MajorityVote {
    fn name(&self) -> &'static str {
        "majority-vote"
    }

    fn merge(&self, logits: &[MaskGrid], threshold: f64) -> Result<MaskGrid> {
        let k = logits.len();
        let votes = pixelwise(&binaries(logits, threshold)?, |c| c.iter().sum())?;
        let probs = logits
            .iter()
            .map(|g| g.sigmoid().map_err(MergeError::from))
            .collect::<Result<Vec<_>>>()?;
        let mean_prob = pixelwise(&probs, mean_of)?;
        let data = votes
            .data()
            .iter()
            .zip(mean_prob.data())
            .map(|(&v, &p)| {
                let twice = 2.0 * v;
                let positive = if twice > k as f64 {
                    true
                } else if twice < k as f64 {
                    false
                } else {
                    p >= threshold
                };
                if positive { 1.0 } else { 0.0 }
            })
            .collect();
        Ok(MaskGrid::binary(
            Tensor::new(votes.shape().to_vec(), data).map_err(DecoderError::from)?,
        )?)
    }
}

static STRATEGIES: [&dyn MergeStrategy; 6] = [
    &MeanPromptOnly,
    &MaxLogit,
    &MeanLogit,
    &MaxBinary,
    &MeanBinary,
    &MajorityVote,
];

pub fn strategies() -> &'static [&'static dyn MergeStrategy] {
    &STRATEGIES
}

pub fn strategy(name: &str) -> Result<&'static dyn MergeStrategy> {
    STRATEGIES
        .iter()
        .copied()
        .find(|s| s.name() == name)
        .ok_or_else(|| MergeError::InvalidStrategy(name.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub mask: MaskGrid,
    pub iou: f64,
}

/// Decodes the mean prompt or `k` samples from `d` and merges the masks.
pub fn infer(
    d: &PromptDistribution,
    task: &ToyTask,
    s: &dyn MergeStrategy,
    k: usize,
    threshold: f64,
    rng: &mut Rng,
) -> Result<Inference> {
    let logits = if s.uses_samples() {
        if k == 0 {
            return Err(MergeError::Empty);
        }
        (0..k)
            .map(|_| Ok(task.decoder.decode(&d.sample(rng)?)?))
            .collect::<Result<Vec<_>>>()?
    } else {
        vec![task.decoder.decode(&d.mu)?]
    };
    let mask = s.merge(&logits, threshold)?;
    let iou = iou(&mask, &task.target)?;
    Ok(Inference { mask, iou })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(v: &[f64]) -> MaskGrid {
        MaskGrid::logits(Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()).unwrap()
    }

    fn bits(m: &MaskGrid) -> Vec<f64> {
        m.values().data().to_vec()
    }

    #[test]
    fn registry_has_six_names() {
        let names: Vec<_> = strategies().iter().map(|s| s.name()).collect();
        assert_eq!(
            names,
            ["mean-prompt-only", "max-logit", "mean-logit", "max-binary", "mean-binary", "majority-vote"]
        );
        assert!(matches!(strategy("median"), Err(MergeError::InvalidStrategy(_))));
    }

    #[test]
    fn hand_cases() {
        let gs = [grid(&[3.0, -1.0, -2.0, 0.5]), grid(&[-1.0, -1.0, 1.0, 0.5]), grid(&[-1.0, 2.0, -2.0, -4.0])];
        assert_eq!(bits(&MaxLogit.merge(&gs, 0.5).unwrap()), [1.0, 1.0, 1.0, 1.0]);
        // Means: 1/3, 0, −1, −1.
        assert_eq!(bits(&MeanLogit.merge(&gs, 0.5).unwrap()), [1.0, 1.0, 0.0, 0.0]);
        assert_eq!(bits(&MaxBinary.merge(&gs, 0.5).unwrap()), [1.0, 1.0, 1.0, 1.0]);
        // Votes: 1, 1, 1, 2 of 3.
        assert_eq!(bits(&MeanBinary.merge(&gs, 0.5).unwrap()), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(bits(&MajorityVote.merge(&gs, 0.5).unwrap()), [0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn majority_tie_uses_mean_probability() {
        let gs = [grid(&[5.0, 0.1]), grid(&[-1.0, -3.0])];
        // Each pixel has one vote of two; mean probability decides.
        assert_eq!(bits(&MajorityVote.merge(&gs, 0.5).unwrap()), [1.0, 0.0]);
        // mean-binary counts a tie as positive.
        assert_eq!(bits(&MeanBinary.merge(&gs, 0.5).unwrap()), [1.0, 1.0]);
    }

    #[test]
    fn single_sample_logit_merges_agree() {
        let g = [grid(&[0.3, -0.2, 4.0, -9.0])];
        let single = g[0].to_binary(0.5).unwrap();
        for s in strategies() {
            assert_eq!(s.merge(&g, 0.5).unwrap(), single, "{}", s.name());
        }
    }

    #[test]
    fn max_binary_dominates_mean_binary() {
        let mut rng = Rng::new(4, 0);
        for _ in 0..50 {
            let k = 1 + rng.below(6);
            let gs: Vec<_> = (0..k)
                .map(|_| MaskGrid::logits(rng.normal(vec![4, 4])).unwrap())
                .collect();
            let hi = MaxBinary.merge(&gs, 0.5).unwrap();
            let lo = MeanBinary.merge(&gs, 0.5).unwrap();
            let maj = MajorityVote.merge(&gs, 0.5).unwrap();
            for ((h, l), m) in bits(&hi).iter().zip(bits(&lo)).zip(bits(&maj)) {
                assert!(h >= &l && l >= m);
            }
        }
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(MaxLogit.merge(&[], 0.5), Err(MergeError::Empty)));
    }
}
