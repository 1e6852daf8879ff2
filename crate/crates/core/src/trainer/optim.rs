//! Optimizers and learning-rate schedules.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LrSchedule {
    /// ×0.1 at 50% and again at 75% of the run.
    Multistep,
    Cosine,
    Constant,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 2] = [OptimizerKind::Sgd, OptimizerKind::Adam];

    pub fn tag(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl LrSchedule {
    pub const ALL: [LrSchedule; 3] = [LrSchedule::Multistep, LrSchedule::Cosine, LrSchedule::Constant];

    pub fn tag(self) -> &'static str {
        match self {
            LrSchedule::Multistep => "multistep",
            LrSchedule::Cosine => "cosine",
            LrSchedule::Constant => "constant",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown optimizer '{s}' (sgd, adam)")))
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::Config(format!("unknown schedule '{s}' (multistep, cosine, constant)")))
    }
}

/// Learning rate at the start of `epoch` (0-based) of a `total_epochs` run.
pub fn lr_at(schedule: LrSchedule, base_lr: f64, epoch: usize, total_epochs: usize) -> Result<f64> {
    if total_epochs == 0 || epoch > total_epochs {
        return Err(Error::Config(format!("epoch {epoch} outside 0..={total_epochs}")));
    }
    Ok(match schedule {
        LrSchedule::Constant => base_lr,
        LrSchedule::Cosine => {
            let t = epoch as f64 / total_epochs as f64;
            base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
        }
        LrSchedule::Multistep => {
            let passed = [0.5, 0.75]
                .iter()
                .filter(|&&m| epoch as f64 >= m * total_epochs as f64)
                .count();
            base_lr * 0.1f64.powi(passed as i32)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    /// L2 penalty folded into the gradient before the update.
    pub weight_decay: f64,
}

/// Per-tensor optimizer memory: SGD velocity, or Adam moments and step count.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState<T> {
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: Vec<u32>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            first: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            second: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            steps: vec![0; params.len()],
        }
    }
}

/// Updates every parameter that has a gradient; `None` leaves it untouched.
pub fn optimizer_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Option<Tensor<T>>],
    state: &mut OptimizerState<T>,
    config: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.steps.len() {
        return Err(Error::shape(
            "optimizer_step",
            format!("{} params, {} grads, {} state slots", params.len(), grads.len(), state.steps.len()),
        ));
    }
    let lr_t = T::of(lr);
    let wd = T::of(config.weight_decay);
    for (j, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        g.expect_shape("optimizer_step", p.shape())?;
        state.steps[j] += 1;
        let first = &mut state.first[j];
        match config.kind {
            OptimizerKind::Sgd => {
                let mu = T::of(config.momentum);
                for ((w, &gi), v) in p.data_mut().iter_mut().zip(g.data()).zip(first.iter_mut()) {
                    let gi = gi + wd * *w;
                    *v = mu * *v + gi;
                    *w = *w - lr_t * *v;
                }
            }
            OptimizerKind::Adam => {
                let t = state.steps[j] as i32;
                let (b1, b2) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2));
                let c1 = T::of(1.0 - ADAM_BETA1.powi(t));
                let c2 = T::of(1.0 - ADAM_BETA2.powi(t));
                let eps = T::of(ADAM_EPS);
                let second = &mut state.second[j];
                for (((w, &gi), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(first.iter_mut()).zip(second.iter_mut()) {
                    let gi = gi + wd * *w;
                    *m = b1 * *m + (T::one() - b1) * gi;
                    *v = b2 * *v + (T::one() - b2) * gi * gi;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *w = *w - lr_t * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sgd(momentum: f64) -> OptimizerConfig {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            momentum,
            weight_decay: 0.0,
        }
    }

    fn step1(config: OptimizerConfig, p: f64, g: f64, lr: f64) -> f64 {
        let mut params = vec![Tensor::from_vec(&[1], vec![p]).unwrap()];
        let mut state = OptimizerState::new(&params);
        let grads = vec![Some(Tensor::from_vec(&[1], vec![g]).unwrap())];
        optimizer_step(&mut params, &grads, &mut state, &config, lr).unwrap();
        params[0].data()[0]
    }

    #[test]
    fn plain_sgd_step() {
        assert!((step1(sgd(0.0), 1.0, 0.5, 0.1) - 0.95).abs() < 1e-15);
        assert_eq!(step1(sgd(0.0), 1.0, 0.0, 0.1), 1.0);
    }

    #[test]
    fn momentum_accumulates() {
        let mut params = vec![Tensor::from_vec(&[1], vec![0.0f64]).unwrap()];
        let mut state = OptimizerState::new(&params);
        let grads = vec![Some(Tensor::from_vec(&[1], vec![1.0]).unwrap())];
        for _ in 0..2 {
            optimizer_step(&mut params, &grads, &mut state, &sgd(0.9), 1.0).unwrap();
        }
        // v1 = 1, v2 = 1.9
        assert!((params[0].data()[0] + 2.9).abs() < 1e-12);
    }

    #[test]
    fn first_adam_step_has_magnitude_lr() {
        let config = OptimizerConfig {
            kind: OptimizerKind::Adam,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let lr = 0.01;
        let moved = 3.0 - step1(config, 3.0, 1.0, lr);
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + ε).
        assert!((moved - lr / (1.0 + ADAM_EPS)).abs() < 1e-15);
        assert!((3.0 - step1(config, 3.0, -250.0, lr) + lr).abs() < 1e-9);
    }

    #[test]
    fn missing_gradient_leaves_parameter() {
        let mut params = vec![Tensor::from_vec(&[2], vec![1.0f32, 2.0]).unwrap()];
        let mut state = OptimizerState::new(&params);
        optimizer_step(&mut params, &[None], &mut state, &sgd(0.9), 0.1).unwrap();
        assert_eq!(params[0].data(), &[1.0, 2.0]);
    }

    #[test]
    fn schedules() {
        let c = LrSchedule::Cosine;
        assert_eq!(lr_at(c, 0.1, 0, 10).unwrap(), 0.1);
        assert!(lr_at(c, 0.1, 10, 10).unwrap().abs() < 1e-18);
        assert!((lr_at(c, 0.1, 5, 10).unwrap() - 0.05).abs() < 1e-17);
        assert_eq!(lr_at(LrSchedule::Constant, 0.3, 7, 10).unwrap(), 0.3);
        let m = |e| lr_at(LrSchedule::Multistep, 1.0, e, 8).unwrap();
        assert_eq!([m(0), m(3), m(4), m(5), m(6), m(8)], [1.0, 1.0, 0.1, 0.1, 0.1f64 * 0.1, 0.1f64 * 0.1]);
        assert!(lr_at(c, 0.1, 11, 10).is_err());
    }

    #[test]
    fn tags_round_trip() {
        for k in OptimizerKind::ALL {
            assert_eq!(k.tag().parse::<OptimizerKind>().unwrap(), k);
        }
        for s in LrSchedule::ALL {
            assert_eq!(s.to_string().parse::<LrSchedule>().unwrap(), s);
        }
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
