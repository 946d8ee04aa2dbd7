//! Convergence constants and bounds, lemma checks over recorded traces,
//! empirical smoothness estimates, and the Gaussian PAC-Bayes bound.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::TraceRow;
use crate::objective::Objective;
use crate::scalar::Real;
use crate::vector::{norm2, ParamVector};

/// Inputs shared by the two convergence theorems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    /// Gradient infinity-norm bound.
    pub c: f64,
    /// Parameter dimension.
    pub d: usize,
    /// Smoothness constant.
    pub l_lip: f64,
    pub alpha: f64,
    pub delta: f64,
    pub gamma: f64,
    pub t: usize,
    pub l0: f64,
    pub l_star: f64,
    #[serde(default)]
    pub sigma1_sq: f64,
    #[serde(default)]
    pub sigma2_sq: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("c", self.c),
            ("l_lip", self.l_lip),
            ("alpha", self.alpha),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("sigma1_sq", self.sigma1_sq),
            ("sigma2_sq", self.sigma2_sq),
        ];
        if let Some((n, v)) = named.iter().find(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{n} = {v} must be finite and nonnegative"
            )));
        }
        if self.t == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("t and d must be at least 1".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> f64 {
        k_constant(self.c, self.d, self.alpha, self.delta)
    }

    fn c_sqrt_d(&self) -> f64 {
        self.c * (self.d as f64).sqrt()
    }

    fn as_map(&self) -> BTreeMap<String, f64> {
        [
            ("C", self.c),
            ("d", self.d as f64),
            ("L", self.l_lip),
            ("alpha", self.alpha),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("T", self.t as f64),
            ("L0", self.l0),
            ("L_star", self.l_star),
            ("sigma1_sq", self.sigma1_sq),
            ("sigma2_sq", self.sigma2_sq),
            ("k", self.k()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// `k = C sqrt(d) (1 + alpha / (C sqrt(d)) - delta) = C sqrt(d) + alpha - delta C sqrt(d)`.
pub fn k_constant(c: f64, d: usize, alpha: f64, delta: f64) -> f64 {
    let csd = c * (d as f64).sqrt();
    csd + alpha - delta * csd
}

/// Additive pieces of the single-level (SAGM) bound. `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem1Terms {
    /// `(L0 - L*) / T`
    pub initial_gap: f64,
    /// `gamma C sqrt(d) k / T`
    pub cross: f64,
    /// `(gamma^2 L + gamma) C^2 d / T`
    pub grad_sq: f64,
    /// `gamma^2 L k^2 / T`
    pub perturbed_sq: f64,
    /// `-(gamma^2 L / 2)(k^2 + C^2 d - 2 k C sqrt(d)) / T`
    pub gap_correction: f64,
    pub total: f64,
}

pub fn theorem1_terms(b: &BoundInputs) -> Theorem1Terms {
    let (g, l, t) = (b.gamma, b.l_lip, b.t as f64);
    let csd = b.c_sqrt_d();
    let c2d = b.c * b.c * b.d as f64;
    let k = b.k();
    let initial_gap = (b.l0 - b.l_star) / t;
    let cross = g * csd * k / t;
    let grad_sq = (g * g * l + g) * c2d / t;
    let perturbed_sq = g * g * l * k * k / t;
    let gap_correction = -(g * g * l / 2.0) * (k * k + c2d - 2.0 * k * csd) / t;
    Theorem1Terms {
        initial_gap,
        cross,
        grad_sq,
        perturbed_sq,
        gap_correction,
        total: initial_gap + cross + grad_sq + perturbed_sq + gap_correction,
    }
}

/// Right side of the SAGM convergence bound on `(1/T) sum ||grad L(theta_t)||^2`.
pub fn theorem1_rhs(b: &BoundInputs) -> f64 {
    theorem1_terms(b).total
}

/// Additive pieces of the bi-level (DGS-MAML) bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem2Terms {
    /// `(L0 - L*) / T`
    pub initial_gap: f64,
    /// `gamma (C^2 d + s1 + sqrt((C^2 d + s1)(k^2 + s2))) / T`
    pub first_order: f64,
    /// `L gamma^2 (C^2 d + s1 + k^2 + s2 + 2 sqrt((C^2 d + s1)(k^2 + s2))) / T`
    pub second_order: f64,
    pub total: f64,
}

pub fn theorem2_terms(b: &BoundInputs) -> Theorem2Terms {
    let (g, l, t) = (b.gamma, b.l_lip, b.t as f64);
    let k = b.k();
    let a = b.c * b.c * b.d as f64 + b.sigma1_sq;
    let p = k * k + b.sigma2_sq;
    let root = (a * p).sqrt();
    let initial_gap = (b.l0 - b.l_star) / t;
    let first_order = g * (a + root) / t;
    let second_order = l * g * g * (a + p + 2.0 * root) / t;
    Theorem2Terms {
        initial_gap,
        first_order,
        second_order,
        total: initial_gap + first_order + second_order,
    }
}

/// Right side of the DGS-MAML convergence bound, variance terms included.
pub fn theorem2_rhs(b: &BoundInputs) -> f64 {
    theorem2_terms(b).total
}

/// Worst case of one per-iteration inequality `lhs <= rhs` over a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaCheck {
    /// `min_t (rhs - lhs_t)`; negative when violated.
    pub min_margin: f64,
    /// `max(0, -min_margin)`.
    pub max_violation: f64,
    /// Iteration attaining `min_margin`.
    pub worst_t: usize,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LemmaReport {
    pub k: f64,
    /// `||grad L_p|| <= k`.
    pub lemma3: LemmaCheck,
    /// `||grad h||^2 <= k^2 - 2 k C sqrt(d) + C^2 d`.
    pub lemma4: LemmaCheck,
    /// `||grad h||^2 <= C^2 d + k^2 + s1 + s2 - 2 sqrt((C^2 d + s1)(k^2 + s2))`.
    pub lemma5: LemmaCheck,
}

/// `||grad h||^2 = ||g_p||^2 + ||g||^2 - 2 ||g|| ||g_p|| cos`, from one trace row.
pub fn grad_h_norm_sq(row: &TraceRow) -> f64 {
    let g = row.grad_norm_sq.max(0.0).sqrt();
    let gp = row.perturbed_grad_norm;
    (gp * gp + row.grad_norm_sq - 2.0 * g * gp * row.align_cos).max(0.0)
}

fn check(rows: &[TraceRow], rhs: f64, lhs: impl Fn(&TraceRow) -> f64) -> LemmaCheck {
    let mut min_margin = f64::INFINITY;
    let mut worst_t = 0;
    for r in rows {
        let l = lhs(r);
        let mut m = rhs - l;
        // equality up to rounding is equality
        if m.abs() <= 8.0 * f64::EPSILON * rhs.abs().max(l.abs()) {
            m = 0.0;
        }
        if m < min_margin {
            min_margin = m;
            worst_t = r.t;
        }
    }
    LemmaCheck {
        min_margin,
        max_violation: (-min_margin).max(0.0),
        worst_t,
        rhs,
    }
}

/// Checks the three lemma inequalities at every iteration of a trace.
pub fn lemma_bound_report(
    rows: &[TraceRow],
    c: f64,
    d: usize,
    alpha: f64,
    delta: f64,
    sigma1_sq: f64,
    sigma2_sq: f64,
) -> Result<LemmaReport> {
    if rows.is_empty() {
        return Err(Error::MissingField("trace rows".into()));
    }
    if let Some(r) = rows
        .iter()
        .find(|r| !(r.grad_norm_sq.is_finite() && r.perturbed_grad_norm.is_finite() && r.align_cos.is_finite()))
    {
        return Err(Error::InvalidArgument(format!(
            "trace row t={} has non-finite gradient fields",
            r.t
        )));
    }
    let k = k_constant(c, d, alpha, delta);
    let csd = c * (d as f64).sqrt();
    let a = csd * csd + sigma1_sq;
    let p = k * k + sigma2_sq;
    Ok(LemmaReport {
        k,
        lemma3: check(rows, k, |r| r.perturbed_grad_norm),
        lemma4: check(rows, k * k - 2.0 * k * csd + csd * csd, grad_h_norm_sq),
        lemma5: check(rows, a + p - 2.0 * (a * p).sqrt(), grad_h_norm_sq),
    })
}

/// Empirical gradient and smoothness constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constants {
    /// Largest observed `||grad L||_inf`.
    pub c_hat: f64,
    /// Largest observed `||grad L(x1) - grad L(x2)|| / ||x1 - x2||`.
    pub l_hat: f64,
    /// Pairs that contributed to `l_hat`.
    pub pairs: usize,
}

/// Estimates `C` and `L` from gradients of every objective at every sample.
/// Coincident sample pairs are skipped.
pub fn estimate_constants<S: Real, O: Objective<S>>(objectives: &[O], samples: &[ParamVector<S>]) -> Result<Constants> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "estimate_constants needs at least 2 parameter samples".into(),
        ));
    }
    if objectives.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut c_hat = 0.0f64;
    let mut l_hat = 0.0f64;
    let mut pairs = 0;
    for obj in objectives {
        let grads: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| obj.loss_grad(s).map(|(_, g)| g.iter().map(|v| v.as_f64()).collect()))
            .collect::<Result<_>>()?;
        for g in &grads {
            c_hat = c_hat.max(g.iter().fold(0.0, |m, v| m.max(v.abs())));
        }
        for i in 0..samples.len() {
            for j in i + 1..samples.len() {
                let dx: Vec<f64> = samples[i]
                    .iter()
                    .zip(samples[j].iter())
                    .map(|(a, b)| (*a - *b).as_f64())
                    .collect();
                let nx = norm2(&dx);
                if nx == 0.0 {
                    continue;
                }
                let dg: Vec<f64> = grads[i].iter().zip(&grads[j]).map(|(a, b)| a - b).collect();
                l_hat = l_hat.max(norm2(&dg) / nx);
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::InvalidArgument("all parameter samples coincide".into()));
    }
    Ok(Constants { c_hat, l_hat, pairs })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("slope needs at least two points".into()));
    }
    if let Some(p) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::InvalidArgument(format!("log-log point {p:?} is not positive")));
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x.ln() / n, b + y.ln() / n));
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in points {
        let (dx, dy) = (x.ln() - mx, y.ln() - my);
        sxy += dx * dy;
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all x coordinates coincide".into()));
    }
    Ok(sxy / sxx)
}

/// Running means `(1/T) sum_{t<T} v_t` at `T = 16, 32, 64, ...` and at the full
/// length.
pub fn prefix_means(values: &[f64]) -> Vec<(f64, f64)> {
    let mut cum = Vec::with_capacity(values.len());
    let mut s = 0.0;
    for v in values {
        s += v;
        cum.push(s);
    }
    let mut out = Vec::new();
    let mut t = 16;
    while t <= values.len() {
        out.push((t as f64, cum[t - 1] / t as f64));
        t *= 2;
    }
    if let Some(&(last, _)) = out.last() {
        if last as usize != values.len() {
            out.push((values.len() as f64, s / values.len() as f64));
        }
    }
    out
}

/// Slope of `ln((1/T) sum_{t<T} ||grad L_t||^2)` against `ln T` over dyadic
/// prefix lengths of one trace.
pub fn convergence_slope(grad_norm_sq: &[f64]) -> Result<f64> {
    if grad_norm_sq.len() < 16 {
        return Err(Error::InvalidArgument(format!(
            "convergence_slope needs at least 16 iterations, got {}",
            grad_norm_sq.len()
        )));
    }
    if let Some((t, v)) = grad_norm_sq.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "nonpositive squared gradient norm {v} at t={t}"
        )));
    }
    loglog_slope(&prefix_means(grad_norm_sq))
}

/// The three groups of `2 KL` between posterior `N(theta, (alpha^2+delta^2) I)`
/// and prior `N(0, sigma_p^2 I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlTerms {
    /// `(alpha^2 + delta^2) d / sigma_p^2`
    pub variance_ratio: f64,
    /// `||theta||^2 / sigma_p^2`
    pub mean_shift: f64,
    /// `d (ln(sigma_p^2 / (alpha^2 + delta^2)) - 1)`
    pub log_ratio: f64,
}

impl KlTerms {
    pub fn kl(&self) -> f64 {
        0.5 * (self.variance_ratio + self.mean_shift + self.log_ratio)
    }

    pub fn all_nonnegative(&self) -> bool {
        self.variance_ratio >= 0.0 && self.mean_shift >= 0.0 && self.log_ratio >= 0.0
    }
}

pub fn kl_terms(theta_hat: &[f64], sigma_p_sq: f64, alpha: f64, delta: f64) -> Result<KlTerms> {
    let q = alpha * alpha + delta * delta;
    if !(sigma_p_sq > 0.0) || !(q > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "variances must be positive (prior {sigma_p_sq}, posterior {q})"
        )));
    }
    let d = theta_hat.len() as f64;
    let sq: f64 = theta_hat.iter().map(|v| v * v).sum();
    Ok(KlTerms {
        variance_ratio: d * (q / sigma_p_sq),
        mean_shift: sq / sigma_p_sq,
        log_ratio: d * ((sigma_p_sq / q).ln() - 1.0),
    })
}

/// `KL(N(theta, (alpha^2+delta^2) I) || N(0, sigma_p^2 I))`; `d = theta_hat.len()`.
pub fn kl_gaussians(theta_hat: &[f64], sigma_p_sq: f64, alpha: f64, delta: f64) -> Result<f64> {
    Ok(kl_terms(theta_hat, sigma_p_sq, alpha, delta)?.kl())
}

/// Smallest prior variance making every KL term group nonnegative:
/// `(alpha^2 + delta^2) e`.
pub fn min_prior_variance(alpha: f64, delta: f64) -> f64 {
    (alpha * alpha + delta * delta) * std::f64::consts::E
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacInputs {
    pub theta_hat: Vec<f64>,
    pub alpha: f64,
    pub delta: f64,
    pub sigma_p_sq: f64,
    /// Number of training tasks.
    pub k: usize,
    pub psi: f64,
    /// Uniform-stability constant.
    pub u: f64,
    /// Empirical task losses, each in `[0, 1]`.
    pub losses: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PacReport {
    pub mean_loss: f64,
    pub kl: f64,
    /// `sqrt((KL + ln(2 sqrt(K) / psi)) / (2K))`
    pub complexity: f64,
    pub u: f64,
    pub bound: f64,
}

pub fn pac_report(p: &PacInputs) -> Result<PacReport> {
    if !(p.psi > 0.0 && p.psi < 1.0) {
        return Err(Error::InvalidArgument(format!("psi = {} must lie in (0, 1)", p.psi)));
    }
    if p.k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if let Some(l) = p.losses.iter().find(|l| !(**l >= 0.0 && **l <= 1.0)) {
        return Err(Error::InvalidArgument(format!("loss {l} is outside [0, 1]")));
    }
    if !(p.u >= 0.0) {
        return Err(Error::InvalidArgument(format!("U = {} must be nonnegative", p.u)));
    }
    let kl = kl_gaussians(&p.theta_hat, p.sigma_p_sq, p.alpha, p.delta)?;
    let mean_loss = if p.losses.is_empty() {
        0.0
    } else {
        p.losses.iter().sum::<f64>() / p.losses.len() as f64
    };
    let k = p.k as f64;
    let complexity = ((kl + (2.0 * k.sqrt() / p.psi).ln()) / (2.0 * k)).sqrt();
    Ok(PacReport {
        mean_loss,
        kl,
        complexity,
        u: p.u,
        bound: mean_loss + complexity + p.u,
    })
}

/// Mean empirical loss plus the KL complexity term plus `U`.
pub fn pac_bound(p: &PacInputs) -> Result<f64> {
    Ok(pac_report(p)?.bound)
}

/// One entry of a structured bound report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub name: String,
    /// Measured side, when the bound has one.
    pub lhs: Option<f64>,
    pub rhs: f64,
    /// `rhs - lhs`.
    pub margin: Option<f64>,
    pub inputs: BTreeMap<String, f64>,
}

impl BoundRecord {
    pub fn new(name: &str, lhs: Option<f64>, rhs: f64, inputs: BTreeMap<String, f64>) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            margin: lhs.map(|l| rhs - l),
            inputs,
        }
    }
}

/// Records for both theorems with `lhs = (1/T) sum ||grad L_t||^2`.
pub fn theorem_records(b: &BoundInputs, lhs: Option<f64>) -> Vec<BoundRecord> {
    let inputs = b.as_map();
    vec![
        BoundRecord::new("theorem1", lhs, theorem1_rhs(b), inputs.clone()),
        BoundRecord::new("theorem2", lhs, theorem2_rhs(b), inputs),
    ]
}

/// Records for the three lemmas; `lhs` is the worst observed value.
pub fn lemma_records(r: &LemmaReport, c: f64, d: usize, alpha: f64, delta: f64) -> Vec<BoundRecord> {
    let inputs: BTreeMap<String, f64> = [
        ("C", c),
        ("d", d as f64),
        ("alpha", alpha),
        ("delta", delta),
        ("k", r.k),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    [("lemma3", r.lemma3), ("lemma4", r.lemma4), ("lemma5", r.lemma5)]
        .into_iter()
        .map(|(name, chk)| {
            let mut rec = BoundRecord::new(name, Some(chk.rhs - chk.min_margin), chk.rhs, inputs.clone());
            rec.margin = Some(chk.min_margin);
            rec.inputs.insert("worst_t".into(), chk.worst_t as f64);
            rec
        })
        .collect()
}

pub fn pac_record(p: &PacInputs) -> Result<BoundRecord> {
    let r = pac_report(p)?;
    let inputs = [
        ("alpha", p.alpha),
        ("delta", p.delta),
        ("sigma_p_sq", p.sigma_p_sq),
        ("K", p.k as f64),
        ("psi", p.psi),
        ("U", p.u),
        ("d", p.theta_hat.len() as f64),
        ("kl", r.kl),
        ("mean_loss", r.mean_loss),
        ("complexity", r.complexity),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    Ok(BoundRecord::new("pac_bayes", None, r.bound, inputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ones() -> BoundInputs {
        BoundInputs {
            c: 1.0,
            d: 1,
            l_lip: 1.0,
            alpha: 1.0,
            delta: 1.0,
            gamma: 1.0,
            t: 1,
            l0: 1.0,
            l_star: 1.0,
            sigma1_sq: 1.0,
            sigma2_sq: 1.0,
        }
    }

    #[test]
    fn k_examples() {
        assert_eq!(k_constant(1.5, 9, 0.0, 0.0), 4.5);
        assert_abs_diff_eq!(k_constant(1.0, 4, 0.2, 0.1), 2.0, epsilon = 1e-15);
        let (c, d, a) = (0.7, 5usize, 0.3);
        let root = 1.0 + a / (c * (d as f64).sqrt());
        assert_abs_diff_eq!(k_constant(c, d, a, root), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn sagm_bound_all_ones_terms() {
        let t = theorem1_terms(&ones());
        assert_eq!(
            (t.initial_gap, t.cross, t.grad_sq, t.perturbed_sq),
            (0.0, 1.0, 2.0, 1.0)
        );
        assert_eq!(t.gap_correction, 0.0);
        assert_eq!(t.total, 4.0);
    }

    #[test]
    fn sagm_bound_gamma_zero_and_scaling() {
        let mut b = ones();
        b.gamma = 0.0;
        b.l0 = 5.0;
        b.t = 10;
        assert_abs_diff_eq!(theorem1_rhs(&b), 0.4, epsilon = 1e-15);
        let mut b = ones();
        b.t = 100;
        let r1 = theorem1_rhs(&b);
        b.t = 200;
        assert_abs_diff_eq!(r1 / theorem1_rhs(&b), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn bilevel_bound_all_ones_and_monotone() {
        let t = theorem2_terms(&ones());
        assert_eq!((t.first_order, t.second_order, t.total), (4.0, 8.0, 12.0));
        let mut b = ones();
        let base = theorem2_rhs(&b);
        b.sigma1_sq = 2.0;
        assert!(theorem2_rhs(&b) > base);
    }

    #[test]
    fn perturbed_norm_constructed_violation() {
        let k = k_constant(1.0, 4, 0.2, 0.1);
        let row = TraceRow {
            t: 3,
            outer_loss: 0.0,
            grad_norm_sq: 1.0,
            perturbed_grad_norm: k + 1.0,
            surrogate_gap: 0.0,
            align_cos: 1.0,
            step_ns: 0,
        };
        let r = lemma_bound_report(&[row], 1.0, 4, 0.2, 0.1, 0.0, 0.0).unwrap();
        assert_abs_diff_eq!(r.lemma3.max_violation, 1.0, epsilon = 1e-12);
        assert_eq!(r.lemma3.worst_t, 3);
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(
            kl_gaussians(&[0.0, 0.0, 0.0], 0.2 * 0.2 + 0.1 * 0.1, 0.2, 0.1).unwrap(),
            0.0
        );
        let (a, dl) = (0.3, 0.4);
        let v = min_prior_variance(a, dl);
        let kl = kl_gaussians(&[0.0], v, a, dl).unwrap();
        assert_abs_diff_eq!(kl, 1.0 / (2.0 * std::f64::consts::E), epsilon = 1e-12);
        assert_abs_diff_eq!(
            min_prior_variance(0.05, 0.1),
            0.0125 * std::f64::consts::E,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(min_prior_variance(0.05, 0.1), 0.033979, epsilon = 1e-6);
        assert!(kl_gaussians(&[1.0], 0.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn pac_hand_value() {
        let p = PacInputs {
            theta_hat: vec![0.0; 2],
            alpha: 0.1,
            delta: 0.0,
            sigma_p_sq: 0.01,
            k: 4,
            psi: 0.5,
            u: 0.0,
            losses: vec![0.0; 4],
        };
        assert_abs_diff_eq!(pac_bound(&p).unwrap(), (8f64.ln() / 8.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(pac_bound(&p).unwrap(), 0.509833, epsilon = 1e-6);
        let shifted = PacInputs { u: 0.125, ..p.clone() };
        assert_abs_diff_eq!(
            pac_bound(&shifted).unwrap() - pac_bound(&p).unwrap(),
            0.125,
            epsilon = 1e-15
        );
        assert!(pac_bound(&PacInputs { psi: 1.0, ..p }).is_err());
    }

    #[test]
    fn slopes() {
        assert_abs_diff_eq!(convergence_slope(&[3.0; 64]).unwrap(), 0.0, epsilon = 1e-12);
        let pts: Vec<(f64, f64)> = [8.0, 16.0, 32.0].iter().map(|&x: &f64| (x, 5.0 / x)).collect();
        assert_abs_diff_eq!(loglog_slope(&pts).unwrap(), -1.0, epsilon = 1e-12);
        assert!(convergence_slope(&[1.0; 8]).is_err());
        let mut v = vec![1.0; 32];
        v[5] = 0.0;
        assert!(convergence_slope(&v).is_err());
    }
}
