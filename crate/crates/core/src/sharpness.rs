//! Single-level sharpness-aware optimization: SAM perturbation, the SAGM
//! gradient-matching objective, surrogate gap, gradient alignment, and the
//! plain SGD / Adam update rules.
//!
//! Gradients of perturbed losses are first-order: the probe point
//! `theta + (alpha/||g|| - delta) g` is held constant when differentiating,
//! so each probe costs exactly one extra gradient evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::scalar::Real;
use crate::vector::{check_dim, norm2, GradVector, ParamVector, Perturbation};

/// Radii, rates and schedule shared by the single- and bi-level optimizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharpnessConfig<S = f64> {
    /// Lower-level (inner) perturbation radius.
    pub alpha_l: S,
    /// Upper-level (outer) perturbation radius.
    pub alpha_u: S,
    /// Gradient-matching shift coefficient.
    pub delta: S,
    /// Meta (outer) learning rate.
    pub gamma: S,
    /// Inner learning rate.
    pub beta: S,
    pub inner_steps: usize,
    /// When set, every task gradient is clipped to `||g||_inf <= clip_c`.
    #[serde(default)]
    pub clip_c: Option<S>,
}

impl<S: Real> SharpnessConfig<S> {
    /// Equal radii, `beta == gamma`.
    pub fn new(alpha: S, delta: S, gamma: S, inner_steps: usize) -> Self {
        Self {
            alpha_l: alpha,
            alpha_u: alpha,
            delta,
            gamma,
            beta: gamma,
            inner_steps,
            clip_c: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: S| Error::InvalidArgument(format!("{name} = {v} is out of range"));
        for (name, v) in [
            ("alpha_l", self.alpha_l),
            ("alpha_u", self.alpha_u),
            ("delta", self.delta),
        ] {
            if !(v >= S::zero()) || !v.is_finite() {
                return Err(bad(name, v));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("beta", self.beta)] {
            if !(v > S::zero()) || !v.is_finite() {
                return Err(bad(name, v));
            }
        }
        if let Some(c) = self.clip_c {
            if !(c > S::zero()) {
                return Err(bad("clip_c", c));
            }
        }
        Ok(())
    }
}

/// `epsilon = alpha * g / ||g||`, or zero when `g == 0`.
pub fn sam_perturbation<S: Real>(g: &[S], alpha: S) -> Perturbation<S> {
    let n = norm2(g);
    if n == S::zero() || !n.is_finite() {
        return Perturbation::zeros(g.len());
    }
    let c = alpha / n;
    Perturbation::new(g.iter().map(|&v| c * v).collect())
}

/// `theta + (eps - delta g)` with `eps = alpha g / ||g||`, i.e.
/// `theta + (alpha/||g|| - delta) g`; `theta` itself when `g == 0`.
///
/// The shift is formed as `eps_i - delta g_i` so that `delta = 0` lands
/// exactly on the SAM point and the bi-level probes reuse the same rounding.
pub fn sagm_inner_point<S: Real>(theta: &ParamVector<S>, g: &[S], alpha: S, delta: S) -> Result<ParamVector<S>> {
    check_dim("sagm_inner_point", theta.dim(), g.len())?;
    let eps = sam_perturbation(g, alpha);
    shifted_probe(theta, &eps, g, delta)
}

/// `theta + (eps - delta g)`, elementwise.
pub fn shifted_probe<S: Real>(theta: &ParamVector<S>, eps: &[S], g: &[S], delta: S) -> Result<ParamVector<S>> {
    check_dim("shifted_probe", theta.dim(), g.len())?;
    check_dim("shifted_probe", theta.dim(), eps.len())?;
    Ok(ParamVector::new(
        theta
            .iter()
            .zip(eps)
            .zip(g)
            .map(|((&t, &e), &gi)| t + (e - delta * gi))
            .collect(),
    ))
}

/// Everything one SAGM evaluation at `theta` produces.
#[derive(Debug, Clone)]
pub struct SagmProbe<S = f64> {
    pub loss: S,
    pub grad: GradVector<S>,
    pub point: ParamVector<S>,
    pub perturbed_loss: S,
    /// Gradient evaluated at `point` (first-order convention).
    pub perturbed_grad: GradVector<S>,
}

impl<S: Real> SagmProbe<S> {
    pub fn surrogate_gap(&self) -> S {
        self.perturbed_loss - self.loss
    }

    pub fn gm_loss(&self) -> S {
        self.loss + self.perturbed_loss
    }

    pub fn gm_grad(&self) -> GradVector<S> {
        self.grad.sum(&self.perturbed_grad).expect("same dimension")
    }

    pub fn alignment(&self) -> S {
        alignment_cosine(&self.grad, &self.perturbed_grad)
    }
}

/// Evaluates `L`, `grad L` at `theta` and at the SAGM probe point.
pub fn sagm_probe<S: Real, O: Objective<S> + ?Sized>(
    obj: &O,
    theta: &ParamVector<S>,
    alpha: S,
    delta: S,
) -> Result<SagmProbe<S>> {
    let (loss, grad) = obj.loss_grad(theta)?;
    sagm_probe_from(obj, theta, loss, grad, alpha, delta)
}

/// As [`sagm_probe`] when `L(theta)` and its gradient are already known.
pub fn sagm_probe_from<S: Real, O: Objective<S> + ?Sized>(
    obj: &O,
    theta: &ParamVector<S>,
    loss: S,
    grad: GradVector<S>,
    alpha: S,
    delta: S,
) -> Result<SagmProbe<S>> {
    let point = sagm_inner_point(theta, &grad, alpha, delta)?;
    let (perturbed_loss, perturbed_grad) = obj.loss_grad(&point)?;
    Ok(SagmProbe {
        loss,
        grad,
        point,
        perturbed_loss,
        perturbed_grad,
    })
}

/// `L_p(theta)` and its gradient at the probe point.
pub fn perturbed_loss<S: Real, O: Objective<S> + ?Sized>(
    obj: &O,
    theta: &ParamVector<S>,
    alpha: S,
    delta: S,
) -> Result<(S, GradVector<S>)> {
    let p = sagm_probe(obj, theta, alpha, delta)?;
    Ok((p.perturbed_loss, p.perturbed_grad))
}

/// `h(theta) = L_p(theta) - L(theta)`.
pub fn surrogate_gap<S: Real, O: Objective<S> + ?Sized>(
    obj: &O,
    theta: &ParamVector<S>,
    alpha: S,
    delta: S,
) -> Result<S> {
    Ok(sagm_probe(obj, theta, alpha, delta)?.surrogate_gap())
}

/// `L_GM = L(theta) + L(theta + eps - delta grad L(theta))` and its
/// first-order gradient `grad L(theta) + grad L(probe)`.
pub fn gm_loss<S: Real, O: Objective<S> + ?Sized>(
    obj: &O,
    theta: &ParamVector<S>,
    alpha: S,
    delta: S,
) -> Result<(S, GradVector<S>)> {
    let p = sagm_probe(obj, theta, alpha, delta)?;
    Ok((p.gm_loss(), p.gm_grad()))
}

/// Cosine of the angle between two gradients; 0 if either is zero.
pub fn alignment_cosine<S: Real>(a: &[S], b: &[S]) -> S {
    if a.len() != b.len() {
        return S::zero();
    }
    let (sa, sb) = (crate::vector::dot(a, a), crate::vector::dot(b, b));
    if sa == S::zero() || sb == S::zero() {
        return S::zero();
    }
    let c = crate::vector::dot(a, b) / (sa * sb).sqrt();
    c.max(-S::one()).min(S::one())
}

/// `theta - rate * g`.
pub fn sgd_step<S: Real>(theta: &ParamVector<S>, g: &[S], rate: S) -> Result<ParamVector<S>> {
    let mut out = theta.clone();
    out.descend(g, rate)?;
    Ok(out)
}

/// Adam moment decay and stability constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state carried across outer steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptState<S = f64> {
    pub t: u64,
    pub first_moment: Option<Vec<S>>,
    pub second_moment: Option<Vec<S>>,
}

/// Bias-corrected Adam update with learning rate `rate`.
pub fn adam_step<S: Real>(
    theta: &ParamVector<S>,
    g: &[S],
    rate: S,
    params: &AdamParams,
    state: &OptState<S>,
) -> Result<(ParamVector<S>, OptState<S>)> {
    check_dim("adam_step", theta.dim(), g.len())?;
    let (b1, b2, eps) = (S::lit(params.beta1), S::lit(params.beta2), S::lit(params.eps));
    let t = state.t + 1;
    let mut m = state.first_moment.clone().unwrap_or_else(|| vec![S::zero(); g.len()]);
    let mut v = state.second_moment.clone().unwrap_or_else(|| vec![S::zero(); g.len()]);
    check_dim("adam_step moments", g.len(), m.len())?;
    let c1 = S::one() - b1.powi(t as i32);
    let c2 = S::one() - b2.powi(t as i32);
    let mut out = theta.clone();
    for i in 0..g.len() {
        m[i] = b1 * m[i] + (S::one() - b1) * g[i];
        v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        out[i] -= rate * m_hat / (v_hat.sqrt() + eps);
    }
    Ok((
        out,
        OptState {
            t,
            first_moment: Some(m),
            second_moment: Some(v),
        },
    ))
}

/// One SAGM descent step `theta - gamma (grad L + grad L_p)`.
pub fn sagm_step<S: Real, O: Objective<S> + ?Sized>(
    obj: &O,
    theta: &ParamVector<S>,
    alpha: S,
    delta: S,
    gamma: S,
) -> Result<(ParamVector<S>, SagmProbe<S>)> {
    let probe = sagm_probe(obj, theta, alpha, delta)?;
    let next = sgd_step(theta, &probe.gm_grad(), gamma)?;
    Ok((next, probe))
}

/// One SAM descent step `theta - gamma grad L(theta + eps)`.
pub fn sam_step<S: Real, O: Objective<S> + ?Sized>(
    obj: &O,
    theta: &ParamVector<S>,
    alpha: S,
    gamma: S,
) -> Result<ParamVector<S>> {
    let (_, g) = obj.loss_grad(theta)?;
    let eps = sam_perturbation(&g, alpha);
    let (_, gp) = obj.loss_grad(&theta.perturbed(&eps)?)?;
    sgd_step(theta, &gp, gamma)
}
