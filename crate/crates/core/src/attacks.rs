//! l-infinity bounded gradient-sign attacks.
//!
//! [`fgsm`] and [`pgd`] attack a single model's loss; [`bv_fgsm`] and
//! [`bv_pgd`] ascend the ensemble objective `B + lambda * V` from
//! [`bv`](crate::bv). All of them start from the clean input and project
//! every iterate back onto `{x' : ||x' - x||_inf <= epsilon}`, then onto the
//! data range `[0, 1]` when clipping is enabled.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bv::{EnsembleView, Tradeoff};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::{LossKind, ModelState, OneHot};
use crate::seed::{self, Stream};
use crate::tensor::TensorBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Fgsm,
    Pgd,
    BvFgsm,
    BvPgd,
}

impl AttackKind {
    pub fn uses_ensemble(self) -> bool {
        matches!(self, AttackKind::BvFgsm | AttackKind::BvPgd)
    }

    pub fn is_single_step(self) -> bool {
        matches!(self, AttackKind::Fgsm | AttackKind::BvFgsm)
    }
}

/// The feasible set: an l-infinity ball, optionally intersected with `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinfBall {
    pub epsilon: f64,
    pub clip: bool,
}

/// Iteration schedule of a projected attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdSchedule {
    pub steps: usize,
    pub step_size: f64,
    /// Start from a uniform point in the ball instead of the clean input.
    pub random_start: bool,
}

/// Loss kind and bias/variance weighting of an ensemble attack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvObjective {
    pub tradeoff: Tradeoff,
    pub loss: LossKind,
}

/// Full description of one attack, as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub kind: AttackKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "one")]
    pub steps: usize,
    /// Per-step size; `None` means `epsilon` for single-step kinds and
    /// `epsilon / 4` for multi-step kinds.
    #[serde(default)]
    pub step_size: Option<f64>,
    #[serde(default = "one_f64")]
    pub lambda: f64,
    #[serde(default)]
    pub variance_only: bool,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default = "yes")]
    pub clip: bool,
    #[serde(default)]
    pub random_start: bool,
}

fn default_epsilon() -> f64 {
    0.3
}
fn one() -> usize {
    1
}
fn one_f64() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

impl AttackConfig {
    pub fn new(kind: AttackKind, epsilon: f64) -> Self {
        Self {
            kind,
            epsilon,
            steps: 1,
            step_size: None,
            lambda: 1.0,
            variance_only: false,
            loss: LossKind::CrossEntropy,
            clip: true,
            random_start: false,
        }
    }

    pub fn pgd(epsilon: f64, steps: usize) -> Self {
        Self {
            steps,
            ..Self::new(AttackKind::Pgd, epsilon)
        }
    }

    pub fn tradeoff(&self) -> Tradeoff {
        if self.variance_only {
            Tradeoff::VarianceOnly
        } else {
            Tradeoff::Lambda(self.lambda)
        }
    }

    pub fn ball(&self) -> LinfBall {
        LinfBall {
            epsilon: self.epsilon,
            clip: self.clip,
        }
    }

    pub fn schedule(&self) -> PgdSchedule {
        let default = if self.kind.is_single_step() {
            self.epsilon
        } else {
            self.epsilon / 4.0
        };
        PgdSchedule {
            steps: self.steps,
            step_size: self.step_size.unwrap_or(default),
            random_start: self.random_start,
        }
    }

    pub fn objective(&self) -> BvObjective {
        BvObjective {
            tradeoff: self.tradeoff(),
            loss: self.loss,
        }
    }

    /// Default short name used for metric columns, e.g. `fgsm` or `pgd10`.
    pub fn default_name(&self) -> String {
        match self.kind {
            AttackKind::Fgsm => "fgsm".into(),
            AttackKind::Pgd => format!("pgd{}", self.steps),
            AttackKind::BvFgsm => "bv_fgsm".into(),
            AttackKind::BvPgd => format!("bv_pgd{}", self.steps),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::AttackConfig(m));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
        }
        if self.clip && self.epsilon > 1.0 {
            return bad(format!("epsilon {} exceeds the [0, 1] data range", self.epsilon));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.kind.is_single_step() && self.steps != 1 {
            return bad(format!("{:?} is single-step; steps must be 1", self.kind));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("step_size must be > 0, got {s}"));
            }
        }
        self.tradeoff().validate()
    }
}

/// `sign` with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clamps `x_hat` into the ball around `x`, then into `[0, 1]` if `clip`.
pub fn project_linf(x_hat: &TensorBuffer, x: &TensorBuffer, ball: LinfBall) -> Result<TensorBuffer> {
    x_hat.check_shape(x.shape())?;
    let data = x_hat
        .data()
        .iter()
        .zip(x.data())
        .map(|(&v, &c)| {
            let v = v.clamp(c - ball.epsilon, c + ball.epsilon);
            if ball.clip {
                v.clamp(0.0, 1.0)
            } else {
                v
            }
        })
        .collect();
    TensorBuffer::new(x.shape().to_vec(), data)
}

/// One signed step of size `step` from `current`, projected around `origin`.
fn ascend(current: &TensorBuffer, grad: &TensorBuffer, step: f64, origin: &TensorBuffer, ball: LinfBall) -> Result<TensorBuffer> {
    grad.check_shape(current.shape())?;
    let moved = current
        .data()
        .iter()
        .zip(grad.data())
        .map(|(v, g)| v + step * sign(*g))
        .collect();
    project_linf(&TensorBuffer::new(current.shape().to_vec(), moved)?, origin, ball)
}

fn start_point(x: &TensorBuffer, ball: LinfBall, schedule: &PgdSchedule, rng: &mut Stream) -> Result<TensorBuffer> {
    if !schedule.random_start || ball.epsilon == 0.0 {
        return Ok(x.clone());
    }
    let jittered = x
        .data()
        .iter()
        .map(|v| v + rng.random_range(-ball.epsilon..=ball.epsilon))
        .collect();
    project_linf(&TensorBuffer::new(x.shape().to_vec(), jittered)?, x, ball)
}

/// `x + epsilon * sign(grad_x L(f(x), t))`, projected.
pub fn fgsm(model: &ModelState, x: &TensorBuffer, t: &OneHot, ball: LinfBall, loss: LossKind) -> Result<TensorBuffer> {
    let g = model.grad_input(x, t, loss)?.grad;
    ascend(x, &g, ball.epsilon, x, ball)
}

/// Projected sign-gradient ascent on a single model's loss.
pub fn pgd(
    model: &ModelState,
    x: &TensorBuffer,
    t: &OneHot,
    ball: LinfBall,
    schedule: PgdSchedule,
    loss: LossKind,
    rng: &mut Stream,
) -> Result<TensorBuffer> {
    check_steps(&schedule)?;
    let mut cur = start_point(x, ball, &schedule, rng)?;
    for _ in 0..schedule.steps {
        let g = model.grad_input(&cur, t, loss)?.grad;
        cur = ascend(&cur, &g, schedule.step_size, x, ball)?;
    }
    Ok(cur)
}

/// One-step sign ascent on the ensemble objective.
pub fn bv_fgsm(
    ensemble: &EnsembleView<'_>,
    x: &TensorBuffer,
    t: &OneHot,
    ball: LinfBall,
    objective: BvObjective,
) -> Result<TensorBuffer> {
    let g = ensemble.objective_grad(x, t, objective.tradeoff, objective.loss)?;
    ascend(x, &g, ball.epsilon, x, ball)
}

/// Projected multi-step sign ascent on the ensemble objective.
pub fn bv_pgd(
    ensemble: &EnsembleView<'_>,
    x: &TensorBuffer,
    t: &OneHot,
    ball: LinfBall,
    schedule: PgdSchedule,
    objective: BvObjective,
    rng: &mut Stream,
) -> Result<TensorBuffer> {
    check_steps(&schedule)?;
    let mut cur = start_point(x, ball, &schedule, rng)?;
    for _ in 0..schedule.steps {
        let g = ensemble.objective_grad(&cur, t, objective.tradeoff, objective.loss)?;
        cur = ascend(&cur, &g, schedule.step_size, x, ball)?;
    }
    Ok(cur)
}

fn check_steps(schedule: &PgdSchedule) -> Result<()> {
    if schedule.steps == 0 {
        return Err(Error::AttackConfig("steps must be at least 1".into()));
    }
    Ok(())
}

/// What an attack is aimed at.
#[derive(Debug, Clone, Copy)]
pub enum AttackTarget<'a> {
    Model(&'a ModelState),
    Ensemble(EnsembleView<'a>),
}

/// Where a perturbed set came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub config: AttackConfig,
    pub round: usize,
}

/// Adversarial counterparts of a labeled set, in source order.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedSet {
    pub examples: LabeledSet,
    pub provenance: Option<Provenance>,
}

impl PerturbedSet {
    pub fn empty(classes: usize) -> Self {
        Self {
            examples: LabeledSet::empty(classes),
            provenance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Attacks every example of `set`, in parallel, preserving order and labels.
///
/// Example `i` draws any randomness from its own stream derived from `seed`
/// and `i`, so the result does not depend on scheduling.
pub fn attack_set(
    target: AttackTarget<'_>,
    set: &LabeledSet,
    cfg: &AttackConfig,
    round: usize,
    seed: u64,
) -> Result<PerturbedSet> {
    cfg.validate()?;
    match (&target, cfg.kind.uses_ensemble()) {
        (AttackTarget::Model(_), true) => {
            return Err(Error::AttackConfig(format!("{:?} needs an ensemble target", cfg.kind)))
        }
        (AttackTarget::Ensemble(_), false) => {
            return Err(Error::AttackConfig(format!("{:?} needs a single-model target", cfg.kind)))
        }
        _ => {}
    }
    let ball = cfg.ball();
    let schedule = cfg.schedule();
    let features = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let x = &set.features()[i];
            let t = set.target(i);
            let mut rng = Stream::seed_from_u64(seed::derive(seed, &[i as u64]));
            match (target, cfg.kind) {
                (AttackTarget::Model(m), AttackKind::Fgsm) => fgsm(m, x, &t, ball, cfg.loss),
                (AttackTarget::Model(m), _) => pgd(m, x, &t, ball, schedule, cfg.loss, &mut rng),
                (AttackTarget::Ensemble(e), AttackKind::BvFgsm) => bv_fgsm(&e, x, &t, ball, cfg.objective()),
                (AttackTarget::Ensemble(e), _) => bv_pgd(&e, x, &t, ball, schedule, cfg.objective(), &mut rng),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PerturbedSet {
        examples: LabeledSet::new(features, set.labels().to_vec(), set.classes())?,
        provenance: Some(Provenance {
            config: cfg.clone(),
            round,
        }),
    })
}
