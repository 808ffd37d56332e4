//! A frozen, seeded, differentiable mask decoder and the mask losses.
//!
//! The decoder maps `m` prompt embeddings (rows of `z`, each of length `n`)
//! to an `H × W` grid of logits. Pixel `p` carries a frozen feature vector
//! `F[p] ∈ R^f`; its logit for prompt `i` is `(F[p] · proj) · (mix · z_i)` and
//! the prompts are combined by max or sum. The feature grid is i.i.d. noise
//! plus a few low-frequency sinusoids per channel, which makes targets
//! spatially coherent blobs.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::objective::Objective;
use crate::rng::{Lane, Rng};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const DEFAULT_PROMPTS: usize = 4;
pub const DEFAULT_DIM: usize = 16;
pub const DEFAULT_HEIGHT: usize = 32;
pub const DEFAULT_WIDTH: usize = 32;
pub const DEFAULT_FEATURES: usize = 8;
pub const DICE_SMOOTHING: f64 = 1.0;

const MAX_TASK_ATTEMPTS: usize = 1000;
const MIN_POSITIVE_FRACTION: f64 = 0.05;
const MAX_POSITIVE_FRACTION: f64 = 0.95;
const SINUSOIDS_PER_CHANNEL: usize = 3;
const SINUSOID_AMPLITUDE: f64 = 1.5;
/// Spatial frequencies are drawn uniformly in cycles per grid side.
const MAX_CYCLES: f64 = 1.5;
/// Standard deviation of oracle prompt entries.
pub const ORACLE_STD: f64 = 25.0;
/// Oracle rows are a shared direction plus this much per-row deviation, so
/// the union of their masks is one coherent object rather than nearly the
/// whole grid.
pub const ORACLE_SPREAD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("task generation failed after {attempts} attempts")]
    TaskGenerationFailed { attempts: usize },
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("mask kind mismatch: expected {expected:?}, got {got:?}")]
    KindMismatch { expected: MaskKind, got: MaskKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Logits,
    Probabilities,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskGrid {
    values: Tensor,
    kind: MaskKind,
}

impl MaskGrid {
    pub fn logits(values: Tensor) -> Result<Self, DecoderError> {
        Self::checked(values, MaskKind::Logits)
    }

    pub fn binary(values: Tensor) -> Result<Self, DecoderError> {
        if values.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(DecoderError::InvalidSpec("binary mask holds non-0/1 value".into()));
        }
        Self::checked(values, MaskKind::Binary)
    }

    fn checked(values: Tensor, kind: MaskKind) -> Result<Self, DecoderError> {
        if values.rank() != 2 {
            return Err(TensorError::ShapeMismatch {
                lhs: values.shape().to_vec(),
                rhs: vec![0, 0],
            }
            .into());
        }
        Ok(Self { values, kind })
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn sigmoid(&self) -> Result<MaskGrid, DecoderError> {
        self.expect(MaskKind::Logits)?;
        let values = self.values.map(|x| {
            if x >= 0.0 {
                1.0 / (1.0 + (-x).exp())
            } else {
                let e = x.exp();
                e / (1.0 + e)
            }
        })?;
        Ok(Self {
            values,
            kind: MaskKind::Probabilities,
        })
    }

    /// Pixels with probability `>= threshold` become 1.
    pub fn threshold(&self, threshold: f64) -> Result<MaskGrid, DecoderError> {
        self.expect(MaskKind::Probabilities)?;
        let values = self
            .values
            .map(|p| if p >= threshold { 1.0 } else { 0.0 })?;
        Ok(Self {
            values,
            kind: MaskKind::Binary,
        })
    }

    /// Logits → probabilities → binary at `threshold`.
    pub fn to_binary(&self, threshold: f64) -> Result<MaskGrid, DecoderError> {
        self.sigmoid()?.threshold(threshold)
    }

    pub fn positive_fraction(&self) -> f64 {
        self.values.mean()
    }

    fn expect(&self, kind: MaskKind) -> Result<(), DecoderError> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(DecoderError::KindMismatch {
                expected: kind,
                got: self.kind,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    Max,
    Sum,
}

impl FromStr for Combine {
    type Err = DecoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max" => Ok(Self::Max),
            "sum" => Ok(Self::Sum),
            other => Err(DecoderError::InvalidSpec(format!("unknown combine `{other}`"))),
        }
    }
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Max => "max",
            Self::Sum => "sum",
        })
    }
}

#[derive(Debug, Clone)]
pub struct ToyDecoder {
    height: usize,
    width: usize,
    feature_grid: Tensor,
    proj: Tensor,
    mix: Tensor,
    combine: Combine,
    /// `(F · proj · mix)ᵀ`, shape `n × HW`.
    effective_t: Tensor,
}

impl ToyDecoder {
    pub fn generate(
        rng: &mut Rng,
        height: usize,
        width: usize,
        features: usize,
        dim: usize,
        combine: Combine,
    ) -> Result<Self, DecoderError> {
        if height == 0 || width == 0 || features == 0 || dim == 0 {
            return Err(DecoderError::InvalidSpec("extents must be positive".into()));
        }
        let pixels = height * width;
        let mut grid = rng.normal(vec![pixels, features]);
        for c in 0..features {
            for _ in 0..SINUSOIDS_PER_CHANNEL {
                let ky = rng.uniform_range(-MAX_CYCLES, MAX_CYCLES);
                let kx = rng.uniform_range(-MAX_CYCLES, MAX_CYCLES);
                let phase = rng.uniform_range(0.0, std::f64::consts::TAU);
                for y in 0..height {
                    for x in 0..width {
                        let arg = std::f64::consts::TAU
                            * (ky * y as f64 / height as f64 + kx * x as f64 / width as f64)
                            + phase;
                        grid.data_mut()[(y * width + x) * features + c] +=
                            SINUSOID_AMPLITUDE * arg.sin();
                    }
                }
            }
        }
        let proj = rng
            .normal(vec![features, dim])
            .map(|v| v / (features as f64).sqrt())?;
        let mix = rng
            .normal(vec![dim, dim])
            .map(|v| v / (dim as f64).sqrt())?;
        // (F[p] · proj) · (mix · z_i) = (F[p] · proj · mix) · z_i
        let effective = grid.matmul(&proj)?.matmul(&mix)?;
        let effective_t = effective.transpose()?;
        let feature_grid = grid.reshape(vec![height, width, features])?;
        Ok(Self {
            height,
            width,
            feature_grid,
            proj,
            mix,
            combine,
            effective_t,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.effective_t.rows()
    }

    pub fn combine(&self) -> Combine {
        self.combine
    }

    pub fn feature_grid(&self) -> &Tensor {
        &self.feature_grid
    }

    pub fn proj(&self) -> &Tensor {
        &self.proj
    }

    pub fn mix(&self) -> &Tensor {
        &self.mix
    }

    /// Per-pixel effective directions, `HW × n`.
    pub fn pixel_directions(&self) -> Tensor {
        self.effective_t.transpose().expect("rank 2")
    }

    /// Logit grid `H × W` on the tape.
    pub fn decode_var<'t>(&self, z: Var<'t>) -> Result<Var<'t>, TensorError> {
        let shape = z.shape();
        if shape.len() != 2 || shape[1] != self.dim() {
            return Err(TensorError::ShapeMismatch {
                lhs: shape,
                rhs: vec![0, self.dim()],
            });
        }
        let e = z.tape().constant(self.effective_t.clone());
        let per_prompt = z.matmul(e)?;
        let combined = match self.combine {
            Combine::Max => per_prompt.max_axis(0)?,
            Combine::Sum => per_prompt.sum_axis(0)?,
        };
        combined.reshape(vec![self.height, self.width])
    }

    pub fn decode(&self, z: &Tensor) -> Result<MaskGrid, DecoderError> {
        if z.rank() != 2 || z.cols() != self.dim() {
            return Err(TensorError::ShapeMismatch {
                lhs: z.shape().to_vec(),
                rhs: vec![0, self.dim()],
            }
            .into());
        }
        let per_prompt = z.matmul(&self.effective_t)?;
        let pixels = self.height * self.width;
        let mut out = match self.combine {
            Combine::Max => vec![f64::NEG_INFINITY; pixels],
            Combine::Sum => vec![0.0; pixels],
        };
        for r in 0..z.rows() {
            for (o, &v) in out.iter_mut().zip(per_prompt.row(r)) {
                match self.combine {
                    Combine::Max => *o = o.max(v),
                    Combine::Sum => *o += v,
                }
            }
        }
        MaskGrid::logits(Tensor::new(vec![self.height, self.width], out)?)
    }
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean binary cross-entropy of logits against a 0/1 target, in the stable
/// form `softplus(x) − x·t`.
pub fn bce_loss_var<'t>(logits: Var<'t>, target: &Tensor) -> Result<Var<'t>, TensorError> {
    let lv = logits.value();
    check_same_shape(&lv, target)?;
    let t = logits.tape().constant(target.clone());
    logits.softplus()?.sub(logits.mul(t)?)?.mean()
}

/// Soft Dice loss `1 − (2Σpt + s)/(Σp + Σt + s)` with `p = σ(logits)`.
pub fn dice_loss_var<'t>(logits: Var<'t>, target: &Tensor) -> Result<Var<'t>, TensorError> {
    let lv = logits.value();
    check_same_shape(&lv, target)?;
    let tape = logits.tape();
    let t = tape.constant(target.clone());
    let p = logits.sigmoid()?;
    let inter = p.mul(t)?.sum()?;
    let num = inter.mul_scalar(2.0)?.add_scalar(DICE_SMOOTHING)?;
    let den = p
        .sum()?
        .add_scalar(target.sum() + DICE_SMOOTHING)?;
    tape.scalar(1.0).sub(num.div(den)?)
}

/// BCE + Dice.
pub fn mask_loss_var<'t>(logits: Var<'t>, target: &Tensor) -> Result<Var<'t>, TensorError> {
    bce_loss_var(logits, target)?.add(dice_loss_var(logits, target)?)
}

fn eval_loss(
    pred: &MaskGrid,
    target: &MaskGrid,
    f: for<'t> fn(Var<'t>, &Tensor) -> Result<Var<'t>, TensorError>,
) -> Result<f64, DecoderError> {
    pred.expect(MaskKind::Logits)?;
    target.expect(MaskKind::Binary)?;
    let tape = Tape::new();
    let x = tape.constant(pred.values.clone());
    Ok(f(x, &target.values)?.item())
}

pub fn bce_loss(pred: &MaskGrid, target: &MaskGrid) -> Result<f64, DecoderError> {
    eval_loss(pred, target, bce_loss_var)
}

pub fn dice_loss(pred: &MaskGrid, target: &MaskGrid) -> Result<f64, DecoderError> {
    eval_loss(pred, target, dice_loss_var)
}

/// `|pred ∧ target| / |pred ∨ target|`, 1 when both are empty.
pub fn iou(pred: &MaskGrid, target: &MaskGrid) -> Result<f64, DecoderError> {
    pred.expect(MaskKind::Binary)?;
    target.expect(MaskKind::Binary)?;
    check_same_shape(&pred.values, &target.values)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.values.data().iter().zip(target.values.data()) {
        let (a, b) = (a > 0.5, b > 0.5);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// The `(seed, extents)` that regenerate a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskSpec {
    pub seed: u64,
    pub prompts: usize,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub features: usize,
    pub combine: Combine,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            seed: crate::rng::DEFAULT_SEED,
            prompts: DEFAULT_PROMPTS,
            dim: DEFAULT_DIM,
            height: DEFAULT_HEIGHT,
            width: DEFAULT_WIDTH,
            features: DEFAULT_FEATURES,
            combine: Combine::Max,
        }
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seed={} m={} n={} height={} width={} features={} combine={}",
            self.seed, self.prompts, self.dim, self.height, self.width, self.features, self.combine
        )
    }
}

impl FromStr for TaskSpec {
    type Err = DecoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut spec = TaskSpec::default();
        let bad = |msg: String| DecoderError::InvalidSpec(msg);
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{tok}`")))?;
            let num = || v.parse::<usize>().map_err(|e| bad(format!("{k}: {e}")));
            match k {
                "seed" => spec.seed = v.parse().map_err(|e| bad(format!("seed: {e}")))?,
                "m" => spec.prompts = num()?,
                "n" => spec.dim = num()?,
                "height" => spec.height = num()?,
                "width" => spec.width = num()?,
                "features" => spec.features = num()?,
                "combine" => spec.combine = v.parse()?,
                other => return Err(bad(format!("unknown key `{other}`"))),
            }
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct ToyTask {
    pub spec: TaskSpec,
    pub decoder: ToyDecoder,
    pub target: MaskGrid,
    pub oracle_prompt: Tensor,
}

/// Builds a realizable task: the target is the thresholded decode of a hidden
/// oracle prompt, redrawn until 5–95% of pixels are positive.
pub fn make_task(spec: TaskSpec) -> Result<ToyTask, DecoderError> {
    if spec.prompts == 0 {
        return Err(DecoderError::InvalidSpec("extents must be positive".into()));
    }
    let mut rng = Rng::new(spec.seed, Lane::Task as u64);
    let decoder = ToyDecoder::generate(
        &mut rng,
        spec.height,
        spec.width,
        spec.features,
        spec.dim,
        spec.combine,
    )?;
    for _ in 0..MAX_TASK_ATTEMPTS {
        let shared = rng.normal(vec![1, spec.dim]);
        let own = rng.normal(vec![spec.prompts, spec.dim]);
        let scale = ORACLE_STD / (1.0 + ORACLE_SPREAD * ORACLE_SPREAD).sqrt();
        let data = own
            .data()
            .chunks(spec.dim)
            .flat_map(|row| {
                row.iter()
                    .zip(shared.data())
                    .map(|(b, a)| scale * (a + ORACLE_SPREAD * b))
            })
            .collect();
        let oracle = Tensor::new(vec![spec.prompts, spec.dim], data)?;
        let target = decoder.decode(&oracle)?.to_binary(0.5)?;
        let frac = target.positive_fraction();
        if (MIN_POSITIVE_FRACTION..=MAX_POSITIVE_FRACTION).contains(&frac) {
            return Ok(ToyTask {
                spec,
                decoder,
                target,
                oracle_prompt: oracle,
            });
        }
    }
    Err(DecoderError::TaskGenerationFailed {
        attempts: MAX_TASK_ATTEMPTS,
    })
}

impl ToyTask {
    pub fn loss_at(&self, z: &Tensor) -> Result<f64, DecoderError> {
        Ok(self.value(z)?)
    }

    pub fn binary_mask(&self, z: &Tensor) -> Result<MaskGrid, DecoderError> {
        self.decoder.decode(z)?.to_binary(0.5)
    }

    pub fn iou_at(&self, z: &Tensor) -> Result<f64, DecoderError> {
        iou(&self.binary_mask(z)?, &self.target)
    }
}

impl Objective for ToyTask {
    fn name(&self) -> &str {
        "mask-loss"
    }

    fn shape(&self) -> (usize, usize) {
        (self.spec.prompts, self.spec.dim)
    }

    fn loss<'t>(&self, _tape: &'t Tape, z: Var<'t>) -> Result<Var<'t>, TensorError> {
        mask_loss_var(self.decoder.decode_var(z)?, self.target.values())
    }

    fn metrics(&self, z: &Tensor) -> Result<Vec<(&'static str, f64)>, TensorError> {
        let to_t = |e: DecoderError| match e {
            DecoderError::Tensor(t) => t,
            _ => TensorError::NonFinite("metrics"),
        };
        let logits = self.decoder.decode(z).map_err(to_t)?;
        Ok(vec![
            ("iou", self.iou_at(z).map_err(to_t)?),
            ("bce", bce_loss(&logits, &self.target).map_err(to_t)?),
            ("dice", dice_loss(&logits, &self.target).map_err(to_t)?),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize, d: Vec<f64>) -> Tensor {
        Tensor::new(vec![h, w], d).unwrap()
    }

    #[test]
    fn bce_at_zero_logits_is_ln2() {
        let pred = MaskGrid::logits(Tensor::zeros(vec![3, 3])).unwrap();
        let target = MaskGrid::binary(grid(3, 3, vec![1., 0., 1., 0., 0., 1., 1., 1., 0.])).unwrap();
        let l = bce_loss(&pred, &target).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_saturated_correct() {
        let t = vec![1., 0., 0., 1.];
        let logits: Vec<f64> = t.iter().map(|&v| if v > 0.5 { 40.0 } else { -40.0 }).collect();
        let l = bce_loss(
            &MaskGrid::logits(grid(2, 2, logits)).unwrap(),
            &MaskGrid::binary(grid(2, 2, t)).unwrap(),
        )
        .unwrap();
        assert!(l < 1e-10);
    }

    #[test]
    fn bce_two_by_two_by_hand() {
        // Per-pixel oracle: -ln σ(1), -ln(1-σ(-1)), -ln σ(2), -ln(1-σ(0)).
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        let expect = (-(s(1.0)).ln() - (1.0 - s(-1.0)).ln() - s(2.0).ln() - (1.0 - s(0.0)).ln()) / 4.0;
        let l = bce_loss(
            &MaskGrid::logits(grid(2, 2, vec![1., -1., 2., 0.])).unwrap(),
            &MaskGrid::binary(grid(2, 2, vec![1., 0., 1., 0.])).unwrap(),
        )
        .unwrap();
        assert!((l - expect).abs() < 1e-14, "{l} vs {expect}");
    }

    #[test]
    fn dice_cases() {
        let t: Vec<f64> = (0..16).map(|i| (i % 2) as f64).collect();
        let target = MaskGrid::binary(grid(4, 4, t.clone())).unwrap();
        let perfect: Vec<f64> = t.iter().map(|&v| if v > 0.5 { 50.0 } else { -50.0 }).collect();
        let l = dice_loss(&MaskGrid::logits(grid(4, 4, perfect.clone())).unwrap(), &target).unwrap();
        assert!(l <= 1e-6);
        let wrong: Vec<f64> = perfect.iter().map(|v| -v).collect();
        let l = dice_loss(&MaskGrid::logits(grid(4, 4, wrong)).unwrap(), &target).unwrap();
        assert!((l - 16.0 / 17.0).abs() < 1e-12, "{l}");
        let empty = MaskGrid::binary(Tensor::zeros(vec![4, 4])).unwrap();
        let l = dice_loss(&MaskGrid::logits(Tensor::full(vec![4, 4], -800.0)).unwrap(), &empty).unwrap();
        assert!(l.abs() < 1e-12);
    }

    #[test]
    fn loss_shape_mismatch() {
        let pred = MaskGrid::logits(Tensor::zeros(vec![2, 3])).unwrap();
        let target = MaskGrid::binary(Tensor::zeros(vec![3, 2])).unwrap();
        assert!(matches!(
            bce_loss(&pred, &target),
            Err(DecoderError::Tensor(TensorError::ShapeMismatch { .. }))
        ));
        assert!(dice_loss(&pred, &target).is_err());
        assert!(iou(&target, &MaskGrid::binary(Tensor::zeros(vec![2, 3])).unwrap()).is_err());
    }

    #[test]
    fn iou_cases() {
        let a = MaskGrid::binary(grid(2, 2, vec![1., 1., 0., 0.])).unwrap();
        let b = MaskGrid::binary(grid(2, 2, vec![0., 0., 1., 1.])).unwrap();
        let e = MaskGrid::binary(Tensor::zeros(vec![2, 2])).unwrap();
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        // 8×8: target is the top-left 4×4 block, prediction adds the 4×4 block
        // to its right. |∩| = 16, |∪| = 32.
        let mut t = vec![0.0; 64];
        let mut p = vec![0.0; 64];
        for y in 0..4 {
            for x in 0..4 {
                t[y * 8 + x] = 1.0;
                p[y * 8 + x] = 1.0;
                p[y * 8 + x + 4] = 1.0;
            }
        }
        let t = MaskGrid::binary(grid(8, 8, t)).unwrap();
        let p = MaskGrid::binary(grid(8, 8, p)).unwrap();
        assert_eq!(iou(&p, &t).unwrap(), 0.5);
    }

    #[test]
    fn kind_transitions() {
        let l = MaskGrid::logits(Tensor::zeros(vec![1, 2])).unwrap();
        assert!(l.threshold(0.5).is_err());
        let p = l.sigmoid().unwrap();
        assert_eq!(p.kind(), MaskKind::Probabilities);
        assert!(p.sigmoid().is_err());
        assert_eq!(p.threshold(0.5).unwrap().kind(), MaskKind::Binary);
        assert!(MaskGrid::binary(grid(1, 2, vec![0.5, 1.0])).is_err());
    }

    #[test]
    fn task_is_deterministic_and_realizable() {
        let spec = TaskSpec::default();
        let a = make_task(spec).unwrap();
        let b = make_task(spec).unwrap();
        assert_eq!(a.target, b.target);
        assert_eq!(a.binary_mask(&a.oracle_prompt).unwrap(), a.target);
        assert_eq!(a.iou_at(&a.oracle_prompt).unwrap(), 1.0);
    }

    #[test]
    fn zero_prompt_sum_combine_is_half() {
        let spec = TaskSpec {
            combine: Combine::Sum,
            ..TaskSpec::default()
        };
        let task = make_task(spec).unwrap();
        let z = Tensor::zeros(vec![spec.prompts, spec.dim]);
        let p = task.decoder.decode(&z).unwrap().sigmoid().unwrap();
        assert!(p.values().data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn output_shape_independent_of_prompt_count() {
        let task = make_task(TaskSpec::default()).unwrap();
        for m in [1, 3, 9] {
            let z = Rng::new(m as u64, 0).normal(vec![m, DEFAULT_DIM]);
            let g = task.decoder.decode(&z).unwrap();
            assert_eq!((g.height(), g.width()), (DEFAULT_HEIGHT, DEFAULT_WIDTH));
        }
        let bad = Tensor::zeros(vec![2, DEFAULT_DIM + 1]);
        assert!(task.decoder.decode(&bad).is_err());
    }

    #[test]
    fn task_spec_round_trip() {
        let spec = TaskSpec {
            seed: 99,
            combine: Combine::Sum,
            ..TaskSpec::default()
        };
        assert_eq!(spec.to_string().parse::<TaskSpec>().unwrap(), spec);
        assert!("bogus=1".parse::<TaskSpec>().is_err());
    }

    #[test]
    fn tape_and_plain_decode_agree() {
        let task = make_task(TaskSpec::default()).unwrap();
        let z = Rng::new(4, 0).normal(vec![DEFAULT_PROMPTS, DEFAULT_DIM]);
        let tape = Tape::new();
        let v = task.decoder.decode_var(tape.constant(z.clone())).unwrap().value();
        assert_eq!(&v, task.decoder.decode(&z).unwrap().values());
    }
}
