use metasharp::meta::{read_trace_csv, train, write_trace_csv, Algorithm, TrainOptions};
use metasharp::objective::{FnObjective, Objective, Quadratic};
use metasharp::sharpness::SharpnessConfig;
use metasharp::tasks::QuadraticFamily;
use metasharp::theory::{
    convergence_slope, estimate_constants, k_constant, kl_gaussians, kl_terms, lemma_bound_report, loglog_slope,
    min_prior_variance, pac_bound, theorem1_rhs, theorem1_terms, theorem2_rhs, theorem2_terms, BoundInputs, PacInputs,
};
use metasharp::vector::{GradVector, ParamVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn inputs() -> BoundInputs {
    BoundInputs {
        c: 0.5,
        d: 9,
        l_lip: 2.0,
        alpha: 0.05,
        delta: 0.1,
        gamma: 0.01,
        t: 100,
        l0: 3.0,
        l_star: 0.5,
        sigma1_sq: 0.2,
        sigma2_sq: 0.3,
    }
}

#[test]
fn sagm_bound_terms_match_hand_substitution() {
    // C sqrt(d) = 1.5, k = 1.5 + 0.05 - 0.15 = 1.4, C^2 d = 2.25
    let t = theorem1_terms(&inputs());
    assert!((t.initial_gap - 0.025).abs() <= 1e-15);
    assert!((t.cross - 0.01 * 1.5 * 1.4 / 100.0).abs() <= 1e-15);
    assert!((t.grad_sq - (0.0002 + 0.01) * 2.25 / 100.0).abs() <= 1e-15);
    assert!((t.perturbed_sq - 0.0002 * 1.96 / 100.0).abs() <= 1e-15);
    assert!((t.gap_correction + 0.0001 * (1.96 + 2.25 - 4.2) / 100.0).abs() <= 1e-15);
    let sum = t.initial_gap + t.cross + t.grad_sq + t.perturbed_sq + t.gap_correction;
    assert_eq!(theorem1_rhs(&inputs()), sum);
}

#[test]
fn bilevel_bound_reduces_without_variance_and_grows_with_it() {
    let mut b = inputs();
    let with = theorem2_rhs(&b);
    b.sigma1_sq = 0.0;
    b.sigma2_sq = 0.0;
    let without = theorem2_rhs(&b);
    assert!(with > without);
    let t = theorem2_terms(&b);
    // sqrt(A P) = C sqrt(d) k without variance
    assert!((t.total - theorem2_rhs(&b)).abs() <= 1e-15);
    let mut doubled = inputs();
    doubled.sigma1_sq *= 2.0;
    assert!(theorem2_rhs(&doubled) > with);
}

#[test]
fn convergence_bounds_scale_as_one_over_t() {
    let mut b = inputs();
    let r1 = theorem1_rhs(&b);
    b.t *= 2;
    assert!((r1 / theorem1_rhs(&b) - 2.0).abs() <= 1e-12);
}

#[test]
fn k_root_of_affine_form() {
    let (c, d, a) = (0.7, 5usize, 0.3);
    let delta = 1.0 + a / (c * (d as f64).sqrt());
    assert!(k_constant(c, d, a, delta).abs() <= 1e-15);
}

#[test]
fn kl_matches_monte_carlo_in_two_dimensions() {
    let theta = [0.3, -0.4];
    let (alpha, delta, sp) = (0.2, 0.1, 0.09);
    let q = alpha * alpha + delta * delta;
    let exact = kl_gaussians(&theta, sp, alpha, delta).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n01 = Normal::new(0.0, 1.0).unwrap();
    let n = 200_000;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n {
        let x: Vec<f64> = theta.iter().map(|m| m + q.sqrt() * n01.sample(&mut rng)).collect();
        let log_q: f64 = x
            .iter()
            .zip(&theta)
            .map(|(x, m)| -0.5 * (x - m).powi(2) / q - 0.5 * q.ln())
            .sum();
        let log_p: f64 = x.iter().map(|x| -0.5 * x * x / sp - 0.5 * sp.ln()).sum();
        let v = log_q - log_p;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} exact {exact} se {se}");
}

#[test]
fn kl_special_values() {
    let (a, d) = (0.2f64, 0.1f64);
    assert_eq!(kl_gaussians(&[0.0, 0.0, 0.0], a * a + d * d, a, d).unwrap(), 0.0);
    let v = kl_gaussians(&[0.0], std::f64::consts::E * (a * a + d * d), a, d).unwrap();
    assert!((v - 1.0 / (2.0 * std::f64::consts::E)).abs() <= 1e-12);
    assert!(kl_gaussians(&[0.0], 0.0, a, d).is_err());
    assert!(kl_gaussians(&[0.0], 1.0, 0.0, 0.0).is_err());
}

#[test]
fn term_groups_are_nonnegative_exactly_above_the_threshold() {
    for (a, d) in [(0.05, 0.1), (0.2, 0.0), (1.0, 2.0)] {
        let thr = min_prior_variance(a, d);
        for f in [0.25, 0.5, 0.9, 0.99, 0.999, 1.001, 1.01, 1.1, 2.0, 10.0] {
            let terms = kl_terms(&[0.5, -1.0, 0.0], thr * f, a, d).unwrap();
            assert_eq!(terms.all_nonnegative(), f >= 1.0, "alpha {a} delta {d} factor {f}");
        }
    }
    assert_eq!(min_prior_variance(0.0, 0.0), 0.0);
    assert!((min_prior_variance(0.05, 0.1) - 0.033979).abs() <= 1e-6);
}

fn pac(k: usize, u: f64) -> PacInputs {
    PacInputs {
        theta_hat: vec![0.1, 0.2],
        alpha: 0.05,
        delta: 0.01,
        sigma_p_sq: 0.05,
        k,
        psi: 0.1,
        u,
        losses: vec![0.2, 0.4, 0.3],
    }
}

#[test]
fn pac_bound_is_nonincreasing_in_task_count() {
    let grid: Vec<f64> = (1..200).map(|k| pac_bound(&pac(k, 0.0)).unwrap()).collect();
    assert!(grid.windows(2).all(|w| w[1] <= w[0]));
    let mut bad = pac(4, 0.0);
    bad.psi = 1.0;
    assert!(pac_bound(&bad).is_err());
    bad.psi = 0.5;
    bad.losses = vec![1.5];
    assert!(pac_bound(&bad).is_err());
}

#[test]
fn estimated_smoothness_never_exceeds_top_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        // A = R diag(l) R^T with a random rotation in the plane
        let (l1, l2) = (rng.random_range(0.1..3.0), rng.random_range(0.1..3.0));
        let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (c, s) = (t.cos(), t.sin());
        let a = vec![
            l1 * c * c + l2 * s * s,
            (l1 - l2) * c * s,
            (l1 - l2) * c * s,
            l1 * s * s + l2 * c * c,
        ];
        let q = Quadratic::new(a, vec![0.0, 0.0]).unwrap();
        let samples: Vec<ParamVector> = (0..30)
            .map(|_| ParamVector::new(vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]))
            .collect();
        let est = estimate_constants(&[&q], &samples).unwrap();
        assert!(est.l_hat <= l1.max(l2) * (1.0 + 1e-12));
        assert!(est.l_hat >= 0.5 * l1.min(l2));
    }
}

#[test]
fn linear_loss_has_zero_smoothness_and_growing_c() {
    let lin = FnObjective(|th: &[f64]| Ok((3.0 * th[0] - th[1], GradVector::new(vec![3.0, -1.0]))));
    let samples = vec![ParamVector::new(vec![0.0, 0.0]), ParamVector::new(vec![1.0, 2.0])];
    let est = estimate_constants(&[&lin], &samples).unwrap();
    assert_eq!(est.l_hat, 0.0);
    assert_eq!(est.c_hat, 3.0);
    let coincident = vec![ParamVector::new(vec![1.0, 1.0]); 3];
    assert!(estimate_constants(&[&lin], &coincident).is_err());
    assert!(estimate_constants(&[&lin], &samples[..1]).is_err());

    let q = Quadratic::isotropic(2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut samples = vec![ParamVector::new(vec![0.1, 0.1])];
    let mut last = 0.0;
    for _ in 0..20 {
        samples.push(ParamVector::new(vec![
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        ]));
        let c = estimate_constants(&[&q], &samples).unwrap().c_hat;
        assert!(c >= last);
        last = c;
    }
}

#[test]
fn harmonic_trace_slope_matches_analytic_value() {
    let n = 4096;
    let values: Vec<f64> = (1..=n).map(|t| 1.0 / t as f64).collect();
    let got = convergence_slope(&values).unwrap();
    // (1/T) H_T with the asymptotic expansion of the harmonic number
    let euler = 0.5772156649015329;
    let pts: Vec<(f64, f64)> = (4..=12)
        .map(|e| {
            let t = 2f64.powi(e);
            (t, (t.ln() + euler + 0.5 / t - 1.0 / (12.0 * t * t)) / t)
        })
        .collect();
    let want = loglog_slope(&pts).unwrap();
    assert!((got - want).abs() <= 1e-6, "{got} vs {want}");
    assert!((-1.3..=-0.7).contains(&got));
    assert!(convergence_slope(&[2.5; 64]).unwrap().abs() <= 1e-12);
    assert!(convergence_slope(&[1.0; 8]).is_err());
    let mut bad = vec![1.0; 32];
    bad[5] = 0.0;
    assert!(convergence_slope(&bad).is_err());
}

#[test]
fn per_step_margins_recomputed_from_csv() {
    let fam = QuadraticFamily {
        dim: 4,
        scale: 1.0,
        curvature_low: 0.5,
        center_std: 1.0,
    };
    let mut cfg = SharpnessConfig::new(0.05, 0.01, 0.05, 2);
    cfg.clip_c = Some(0.5);
    let mut i = 0u64;
    let mut src = |m: usize| {
        let v: Vec<_> = (0..m).map(|j| fam.task::<f64>(100 + 8 * i + j as u64)).collect();
        i += 1;
        Some(v)
    };
    let theta = ParamVector::new(vec![2.0, -2.0, 1.0, 0.0]);
    let (_, trace) = train(&theta, &mut src, &cfg, &TrainOptions::new(Algorithm::Dgs, 60, 1)).unwrap();
    let mut csv = Vec::new();
    write_trace_csv(&trace.reports, &mut csv).unwrap();
    let rows = read_trace_csv(csv.as_slice()).unwrap();
    assert_eq!(rows.len(), 60);

    let (c, d) = (0.5, 4usize);
    let rep = lemma_bound_report(&rows, c, d, 0.05, 0.01, 0.0, 0.0).unwrap();
    // independent re-scan of the text columns
    let text = String::from_utf8(csv).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let k = c * 2.0 + 0.05 - 0.01 * c * 2.0;
    let (mut m3, mut m4) = (f64::INFINITY, f64::INFINITY);
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let (g2, gp, cos) = (
            f[col("grad_norm_sq")],
            f[col("perturbed_grad_norm")],
            f[col("align_cos")],
        );
        m3 = m3.min(k - gp);
        let gh = (gp * gp + g2 - 2.0 * g2.sqrt() * gp * cos).max(0.0);
        m4 = m4.min((k - c * 2.0).powi(2) - gh);
    }
    assert!((rep.k - k).abs() <= 1e-15);
    assert!((rep.lemma3.min_margin - m3).abs() <= 1e-12);
    assert!((rep.lemma4.min_margin - m4).abs() <= 1e-12);
    assert!(rep.lemma3.min_margin >= 0.0);
}

#[test]
fn perturbed_norm_bound_holds_without_perturbation_on_clipped_gradients() {
    let q = Quadratic::diagonal(&[3.0, 2.0, 1.0], vec![0.0; 3]).unwrap();
    let mut cfg = SharpnessConfig::new(0.0, 0.0, 0.05, 0);
    cfg.clip_c = Some(0.3);
    let task = metasharp::tasks::QuadraticTask::shared(q);
    let mut src = |m: usize| Some(vec![task.clone(); m]);
    let (_, trace) = train(
        &ParamVector::new(vec![4.0, -3.0, 2.0]),
        &mut src,
        &cfg,
        &TrainOptions::new(Algorithm::Dgs, 40, 1),
    )
    .unwrap();
    let mut csv = Vec::new();
    write_trace_csv(&trace.reports, &mut csv).unwrap();
    let rows = read_trace_csv(csv.as_slice()).unwrap();
    let rep = lemma_bound_report(&rows, 0.3, 3, 0.0, 0.0, 0.0, 0.0).unwrap();
    assert!(rep.lemma3.min_margin >= 0.0, "{:?}", rep);
}

proptest! {
    #[test]
    fn kl_is_nonnegative(
        theta in prop::collection::vec(-3.0f64..3.0, 1..10),
        sp in 1e-3f64..10.0,
        alpha in 1e-3f64..2.0,
        delta in 0.0f64..2.0,
    ) {
        prop_assert!(kl_gaussians(&theta, sp, alpha, delta).unwrap() >= -1e-12);
    }

    #[test]
    fn u_enters_additively(u in 0.0f64..5.0, k in 1usize..100) {
        let diff = pac_bound(&pac(k, u)).unwrap() - pac_bound(&pac(k, 0.0)).unwrap();
        prop_assert!((diff - u).abs() <= 1e-14);
    }

    #[test]
    fn min_prior_variance_is_homogeneous(a in 0.0f64..2.0, d in 0.0f64..2.0, c in 0.1f64..10.0) {
        let base = min_prior_variance(a, d);
        prop_assert!((min_prior_variance(c * a, c * d) - c * c * base).abs() <= 1e-12 * (1.0 + c * c * base));
    }

    #[test]
    fn clipped_gradients_respect_the_two_norm_bound(g in prop::collection::vec(-100.0f64..100.0, 1..50), c in 0.01f64..10.0) {
        let clipped = metasharp::nn::clip_grad_inf(&GradVector::new(g.clone()), c);
        prop_assert!(clipped.norm_inf() <= c);
        prop_assert!(clipped.norm2() <= c * (g.len() as f64).sqrt() * (1.0 + 1e-15));
        for (a, b) in g.iter().zip(clipped.iter()) {
            if a.abs() <= c {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn quadratic_constants_are_bounded(x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let q = Quadratic::diagonal(&[0.5, 2.0], vec![0.0, 0.0]).unwrap();
        let s = vec![ParamVector::new(vec![x, y]), ParamVector::new(vec![y, x + 0.5])];
        let est = estimate_constants(&[&q], &s).unwrap();
        prop_assert!(est.l_hat <= 2.0 * (1.0 + 1e-12));
        let (_, g) = q.loss_grad(&s[0]).unwrap();
        prop_assert!(est.c_hat >= g.norm_inf());
    }
}
