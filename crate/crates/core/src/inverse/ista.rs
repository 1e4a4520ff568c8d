//! ISTA for `1/2 |y - Hs|^2 + g (l1 TV(s) + l2 |W^T s|_1)`.
//!
//! `g` is the root-mean-square of `H^T y`, the data-term gradient at zero.
//! Tying the weights to it keeps the minimizer equivariant under rescaling
//! of either `y` or `H`, so `l1` and `l2` are dimensionless.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::tv::{total_variation, tv_prox, TvDual};
use super::wavelet::{Wavelet, Wavelet2d};
use crate::error::{Error, Result};
use crate::forward::ForwardOperator;
use crate::model::{ImageGrid, RawFrame};

/// Dual steps of the TV proximal map per outer iteration.
pub const TV_ITERATIONS: usize = 10;

/// Step halvings tried before a non-descending iteration ends the solve.
const MAX_HALVINGS: usize = 40;

/// Linear map from images to data with its adjoint.
pub trait LinearOperator: Sync {
    fn image_shape(&self) -> (usize, usize);
    fn apply(&self, image: &Array2<f64>) -> Result<Array2<f64>>;
    fn adjoint(&self, data: &Array2<f64>) -> Result<Array2<f64>>;
    /// `sigma_max^2`.
    fn lipschitz(&self) -> Result<f64>;
}

impl LinearOperator for ForwardOperator {
    fn image_shape(&self) -> (usize, usize) {
        self.grid().shape()
    }

    fn apply(&self, image: &Array2<f64>) -> Result<Array2<f64>> {
        ForwardOperator::apply(self, image)
    }

    fn adjoint(&self, data: &Array2<f64>) -> Result<Array2<f64>> {
        ForwardOperator::adjoint(self, data)
    }

    fn lipschitz(&self) -> Result<f64> {
        ForwardOperator::lipschitz(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    /// `1 / L` from power iteration.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsConfig {
    pub tv_weight: f64,
    pub wavelet_weight: f64,
    pub wavelet: Wavelet,
    pub levels: usize,
    pub step: StepSize,
    /// 0 returns the starting point `tau H^T y`.
    pub max_iters: usize,
    /// Stop once `|H^T (Hs - y)| / |H^T y|` falls below this.
    pub grad_norm_tol: f64,
}

impl Default for CsConfig {
    fn default() -> Self {
        Self {
            tv_weight: 0.02,
            wavelet_weight: 0.005,
            wavelet: Wavelet::Daubechies4,
            levels: 3,
            step: StepSize::Auto,
            max_iters: 300,
            grad_norm_tol: 1e-4,
        }
    }
}

impl CsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tv_weight >= 0.0 && self.tv_weight.is_finite()) {
            return Err(Error::param("tv_weight", "must be finite and >= 0"));
        }
        if !(self.wavelet_weight >= 0.0 && self.wavelet_weight.is_finite()) {
            return Err(Error::param("wavelet_weight", "must be finite and >= 0"));
        }
        if let StepSize::Fixed(t) = self.step {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::param("step", "fixed step must be > 0"));
            }
        }
        if !(self.grad_norm_tol >= 0.0) {
            return Err(Error::param("grad_norm_tol", "must be >= 0"));
        }
        Ok(())
    }
}

pub fn soft_threshold(x: f64, alpha: f64) -> f64 {
    x.signum() * (x.abs() - alpha).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: f64,
    pub data_term: f64,
    pub tv_term: f64,
    pub wavelet_term: f64,
    /// Relative data-gradient norm at the accepted iterate.
    pub gradient_norm: f64,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct IstaOutput {
    pub image: Array2<f64>,
    /// Iteration 0 is the starting point.
    pub log: Vec<IterationRecord>,
    pub lipschitz: f64,
    /// Multiplier `g` of the regularization weights.
    pub weight_scale: f64,
    /// Step in force at the end; smaller than the initial one after halvings.
    pub step: f64,
    pub halvings: usize,
}

impl IstaOutput {
    pub fn log_csv(&self) -> String {
        let mut out =
            String::from("iteration,objective,data_term,tv_term,wavelet_term,gradient_norm,step\n");
        for r in &self.log {
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{:e}",
                r.iteration,
                r.objective,
                r.data_term,
                r.tv_term,
                r.wavelet_term,
                r.gradient_norm,
                r.step
            );
        }
        out
    }
}

struct Terms {
    data: f64,
    tv: f64,
    wavelet: f64,
}

impl Terms {
    fn total(&self) -> f64 {
        self.data + self.tv + self.wavelet
    }
}

struct Problem<'a> {
    y: &'a Array2<f64>,
    cfg: &'a CsConfig,
    transform: Wavelet2d,
    scale: f64,
}

impl Problem<'_> {
    fn terms(&self, s: &Array2<f64>, hs: &Array2<f64>) -> Result<Terms> {
        let data = 0.5 * (hs - self.y).mapv(|v| v * v).sum();
        let tv = if self.cfg.tv_weight > 0.0 {
            self.scale * self.cfg.tv_weight * total_variation(s)
        } else {
            0.0
        };
        let wavelet = if self.cfg.wavelet_weight > 0.0 {
            let a = self.transform.forward(s)?;
            self.scale * self.cfg.wavelet_weight * a.iter().map(|v| v.abs()).sum::<f64>()
        } else {
            0.0
        };
        let t = Terms { data, tv, wavelet };
        if !t.total().is_finite() {
            return Err(Error::Numerical(format!(
                "ISTA objective is not finite (data {data}, tv {tv}, wavelet {wavelet})"
            )));
        }
        Ok(t)
    }

    /// Wavelet shrinkage followed by the TV prox, both at step `tau`.
    fn prox(&self, z: &Array2<f64>, tau: f64, dual: &mut TvDual) -> Result<Array2<f64>> {
        let mut s = if self.cfg.wavelet_weight > 0.0 {
            let alpha = tau * self.scale * self.cfg.wavelet_weight;
            let a = self
                .transform
                .forward(z)?
                .mapv(|v| soft_threshold(v, alpha));
            self.transform.inverse(&a)?
        } else {
            z.clone()
        };
        if self.cfg.tv_weight > 0.0 {
            s = tv_prox(
                &s,
                tau * self.scale * self.cfg.tv_weight,
                TV_ITERATIONS,
                dual,
            );
        }
        Ok(s)
    }
}

fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Runs ISTA from `tau H^T y`. A step that would raise the objective is
/// rejected and retried with half the step, so the logged objective never
/// increases.
pub fn ista<O: LinearOperator>(op: &O, y: &Array2<f64>, cfg: &CsConfig) -> Result<IstaOutput> {
    cfg.validate()?;
    let transform = Wavelet2d::new(cfg.wavelet, cfg.levels);
    transform.check_shape(op.image_shape())?;
    let lipschitz = op.lipschitz()?;
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::Numerical(format!(
            "operator Lipschitz estimate {lipschitz}"
        )));
    }
    let mut tau = match cfg.step {
        StepSize::Auto => 1.0 / lipschitz,
        StepSize::Fixed(t) => t,
    };
    let back = op.adjoint(y)?;
    let scale = norm(&back) / (back.len() as f64).sqrt();
    let problem = Problem {
        y,
        cfg,
        transform,
        scale,
    };

    let back_norm = norm(&back).max(f64::MIN_POSITIVE);
    let mut s = &back * tau;
    let mut hs = op.apply(&s)?;
    let mut grad = op.adjoint(&(&hs - y))?;
    let mut terms = problem.terms(&s, &hs)?;
    let mut dual = TvDual::zeros(s.dim());
    let record = |iteration, t: &Terms, g: &Array2<f64>, tau| IterationRecord {
        iteration,
        objective: t.total(),
        data_term: t.data,
        tv_term: t.tv,
        wavelet_term: t.wavelet,
        gradient_norm: norm(g) / back_norm,
        step: tau,
    };
    let mut log = vec![record(0, &terms, &grad, tau)];
    let mut halvings = 0;

    'outer: for iteration in 1..=cfg.max_iters {
        if log.last().unwrap().gradient_norm < cfg.grad_norm_tol {
            break;
        }
        for _ in 0..=MAX_HALVINGS {
            let mut trial_dual = dual.clone();
            let z = &s - &(&grad * tau);
            let candidate = problem.prox(&z, tau, &mut trial_dual)?;
            let h_candidate = op.apply(&candidate)?;
            let t = problem.terms(&candidate, &h_candidate)?;
            if t.total() <= terms.total() {
                s = candidate;
                hs = h_candidate;
                terms = t;
                dual = trial_dual;
                grad = op.adjoint(&(&hs - y))?;
                log.push(record(iteration, &terms, &grad, tau));
                continue 'outer;
            }
            tau *= 0.5;
            halvings += 1;
            log::info!("ISTA iteration {iteration}: objective rose, step halved to {tau:e}");
        }
        log::warn!("ISTA stalled at iteration {iteration}: no descending step found");
        break;
    }
    Ok(IstaOutput {
        image: s,
        log,
        lipschitz,
        weight_scale: scale,
        step: tau,
        halvings,
    })
}

/// ISTA on a measured frame with the forward model as `H`.
pub fn ista_reconstruct(
    frame: &RawFrame,
    op: &ForwardOperator,
    cfg: &CsConfig,
) -> Result<(ImageGrid, IstaOutput)> {
    if frame.geometry != *op.geometry() || frame.acquisition != *op.acquisition() {
        return Err(Error::GeometryMismatch(
            "frame and forward operator describe different acquisitions".into(),
        ));
    }
    let out = ista(op, &frame.data, cfg)?;
    let image = ImageGrid {
        data: out.image.clone(),
        grid: *op.grid(),
    };
    Ok((image, out))
}
