//! Standard and relativistic-average GAN losses on raw discriminator
//! scores, with their analytic gradients with respect to every score.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Discriminator scores for the real and the fake half of an iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreBatch {
    pub real: Vec<f64>,
    pub fake: Vec<f64>,
}

impl ScoreBatch {
    pub fn new(real: Vec<f64>, fake: Vec<f64>) -> Self {
        Self { real, fake }
    }

    fn validate(&self) -> Result<()> {
        if self.real.is_empty() || self.fake.is_empty() {
            return Err(Error::Argument(format!(
                "losses need non-empty score batches (real {}, fake {})",
                self.real.len(),
                self.fake.len()
            )));
        }
        if let Some(v) = self.real.iter().chain(&self.fake).find(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite discriminator score {v}")));
        }
        Ok(())
    }

    /// `D̃(x_r) = D(x_r) − mean D(x_f)`.
    pub fn relative_real(&self) -> Vec<f64> {
        let m = mean(&self.fake);
        self.real.iter().map(|r| r - m).collect()
    }

    /// `D̃(x_f) = D(x_f) − mean D(x_r)`.
    pub fn relative_fake(&self) -> Vec<f64> {
        let m = mean(&self.real);
        self.fake.iter().map(|f| f - m).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Standard,
    #[default]
    Relativistic,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Standard => "standard",
            LossKind::Relativistic => "relativistic",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(LossKind::Standard),
            "relativistic" => Ok(LossKind::Relativistic),
            _ => Err(Error::config(
                "training.loss",
                format!("unknown loss {s:?}; expected standard or relativistic"),
            )),
        }
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Gradient of a loss with respect to the real and fake scores.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreGrad {
    pub real: Vec<f64>,
    pub fake: Vec<f64>,
}

/// Loss values and score gradients for both networks.
#[derive(Clone, Debug, PartialEq)]
pub struct LossEval {
    pub d_loss: f64,
    pub g_loss: f64,
    pub d_grad: ScoreGrad,
    pub g_grad: ScoreGrad,
}

/// `−mean log σ(x) − mean log(1 − σ(y))` and its gradient in `(x, y)`.
fn two_sided(x: &[f64], y: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let loss = x.iter().map(|&v| softplus(-v)).sum::<f64>() / nx
        + y.iter().map(|&v| softplus(v)).sum::<f64>() / ny;
    let gx = x.iter().map(|&v| -sigmoid(-v) / nx).collect();
    let gy = y.iter().map(|&v| sigmoid(v) / ny).collect();
    (loss, gx, gy)
}

/// Relativistic loss with `x` as the class pushed up: the terms use
/// `x − mean y` and `y − mean x`. Gradients are with respect to raw `x`, `y`.
fn relativistic_term(x: &[f64], y: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (mx, my) = (mean(x), mean(y));
    let xr: Vec<f64> = x.iter().map(|v| v - my).collect();
    let yr: Vec<f64> = y.iter().map(|v| v - mx).collect();
    let (loss, a, b) = two_sided(&xr, &yr);
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    let (nx, ny) = (x.len() as f64, y.len() as f64);
    let gx = a.iter().map(|ai| ai - sb / nx).collect();
    let gy = b.iter().map(|bj| bj - sa / ny).collect();
    (loss, gx, gy)
}

pub fn standard_gan_losses(scores: &ScoreBatch) -> Result<(f64, f64)> {
    let e = evaluate(LossKind::Standard, scores)?;
    Ok((e.d_loss, e.g_loss))
}

pub fn relativistic_losses(scores: &ScoreBatch) -> Result<(f64, f64)> {
    let e = evaluate(LossKind::Relativistic, scores)?;
    Ok((e.d_loss, e.g_loss))
}

pub fn evaluate(kind: LossKind, scores: &ScoreBatch) -> Result<LossEval> {
    scores.validate()?;
    let (r, f) = (&scores.real, &scores.fake);
    Ok(match kind {
        LossKind::Standard => {
            let (d_loss, dr, df) = two_sided(r, f);
            let nf = f.len() as f64;
            let g_loss = f.iter().map(|&v| softplus(-v)).sum::<f64>() / nf;
            LossEval {
                d_loss,
                g_loss,
                d_grad: ScoreGrad { real: dr, fake: df },
                g_grad: ScoreGrad {
                    real: vec![0.0; r.len()],
                    fake: f.iter().map(|&v| -sigmoid(-v) / nf).collect(),
                },
            }
        }
        LossKind::Relativistic => {
            let (d_loss, dr, df) = relativistic_term(r, f);
            let (g_loss, gf, gr) = relativistic_term(f, r);
            LossEval {
                d_loss,
                g_loss,
                d_grad: ScoreGrad { real: dr, fake: df },
                g_grad: ScoreGrad { real: gr, fake: gf },
            }
        }
    })
}
