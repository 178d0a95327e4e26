//! Gradient-ascent estimation of the best warp parameters with a
//! from-scratch Adam optimizer.

use crate::error::{Error, Result};
use crate::event::EventSlice;
use crate::objective;
use crate::warp::{MotionModel, WarpKind};

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub max_iters: usize,
    /// Stop when the gradient norm falls below this.
    pub grad_tol: f64,
    /// Stop after this many iterations without contrast improvement.
    pub patience: usize,
    pub epsilon: f64,
    pub use_polarity: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            max_iters: 100,
            grad_tol: 1e-6,
            patience: 10,
            epsilon: objective::DEFAULT_EPSILON,
            use_polarity: false,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Spec("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Spec("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Spec("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradTol,
    Patience,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct TracePoint {
    pub theta: Vec<f64>,
    pub contrast: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    /// Best-contrast parameters seen over the whole trace.
    pub theta_star: Vec<f64>,
    pub final_contrast: f64,
    pub trace: Vec<TracePoint>,
    pub converged: bool,
    pub reason: StopReason,
}

/// Maximize the contrast over the model parameters by Adam ascent, starting
/// from `theta_init`. Returns the best parameters visited, never a worse
/// point than the start.
pub fn maximize(
    slice: &EventSlice,
    kind: WarpKind,
    theta_init: &[f64],
    config: &OptimizerConfig,
) -> Result<OptimizeResult> {
    config.validate()?;
    if kind == WarpKind::DenseFlow {
        return Err(Error::Model("denseflow is not optimizable".into()));
    }
    if theta_init.len() != kind.dof() {
        return Err(Error::Model(format!(
            "theta has {} components, {kind:?} needs {}",
            theta_init.len(),
            kind.dof()
        )));
    }
    if !theta_init.iter().all(|v| v.is_finite()) {
        return Err(Error::Model("theta_init must be finite".into()));
    }

    let dof = kind.dof();
    let mut theta = theta_init.to_vec();
    let mut m = vec![0.0f64; dof];
    let mut v = vec![0.0f64; dof];
    let mut trace: Vec<TracePoint> = Vec::new();
    let mut best_contrast = f64::NEG_INFINITY;
    let mut best_theta = theta.clone();
    let mut since_improvement = 0usize;
    let mut reason = StopReason::MaxIters;

    for iter in 1..=config.max_iters {
        let model = MotionModel::from_params(kind, &theta)?;
        let (c, grad) =
            objective::contrast_and_param_grad(slice, &model, config.epsilon, config.use_polarity)?;
        trace.push(TracePoint {
            theta: theta.clone(),
            contrast: c,
        });
        if c > best_contrast {
            best_contrast = c;
            best_theta = theta.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
        }

        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if grad_norm < config.grad_tol {
            reason = StopReason::GradTol;
            break;
        }
        if since_improvement >= config.patience {
            reason = StopReason::Patience;
            break;
        }

        let bc1 = 1.0 - config.beta1.powi(iter as i32);
        let bc2 = 1.0 - config.beta2.powi(iter as i32);
        for j in 0..dof {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * grad[j];
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * grad[j] * grad[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            theta[j] += config.learning_rate * m_hat / (v_hat.sqrt() + config.eps_adam);
        }
    }

    // The final theta after the last update is unevaluated when the loop ran
    // out of iterations; score it so the trace covers every visited point.
    if reason == StopReason::MaxIters {
        let model = MotionModel::from_params(kind, &theta)?;
        let c = objective::contrast_of(slice, &model, config.epsilon, config.use_polarity)?.value;
        trace.push(TracePoint {
            theta: theta.clone(),
            contrast: c,
        });
        if c > best_contrast {
            best_contrast = c;
            best_theta = theta;
        }
    }

    Ok(OptimizeResult {
        theta_star: best_theta,
        final_contrast: best_contrast,
        trace,
        converged: reason != StopReason::MaxIters,
        reason,
    })
}
