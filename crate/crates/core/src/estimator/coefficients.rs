//! Closed-form optimal coefficients for the biased sampler and for gradient
//! averaging.

/// Optimal bias `lambda` for full-space sampling given `alpha^2`, `q` samples
/// and ambient dimension `D >= 2`.
pub fn lambda_star(alpha2: f64, q: usize, dim: usize) -> f64 {
    let a2 = alpha2.clamp(0.0, 1.0);
    let q = q.max(1) as f64;
    let d = dim.max(2) as f64;
    let m = d + 2.0 * q - 2.0;
    if a2 <= 1.0 / m {
        return 0.0;
    }
    if a2 >= (2.0 * q - 1.0) / m {
        return 1.0;
    }
    let num = (1.0 - a2) * (a2 * m - 1.0);
    let den = 2.0 * a2 * d * q - a2 * a2 * d * m - 1.0;
    (num / den).clamp(0.0, 1.0)
}

/// Optimal bias `lambda` for subspace sampling, given `alpha^2`, the
/// subspace share `A^2`, `q` samples and subspace dimension `d`.
pub fn lambda_star_subspace(alpha2: f64, a2: f64, q: usize, d: usize) -> f64 {
    let al2 = alpha2.clamp(0.0, 1.0);
    let a2 = a2.clamp(0.0, 1.0);
    let q = q.max(1) as f64;
    let d = d.max(1) as f64;
    let m = d + 2.0 * q - 2.0;
    if al2 <= a2 / m {
        return 0.0;
    }
    if al2 >= a2 * (2.0 * q - 1.0) / d {
        return 1.0;
    }
    let num = a2 * (a2 - al2 * m);
    let den = a2 * a2 + al2 * al2 * d * d - 2.0 * a2 * al2 * (q + d * q - 1.0);
    (num / den).clamp(0.0, 1.0)
}

/// Approximate expected cosine between a uniform RGF estimate and the
/// gradient: `sqrt(q / (D + q - 1))`.
pub fn expected_beta(q: usize, dim: usize) -> f64 {
    let q = q as f64;
    (q / (dim as f64 + q - 1.0)).sqrt()
}

/// Subspace analog: `sqrt(A^2 q / (d + q - 1))`.
pub fn expected_beta_subspace(q: usize, d: usize, a2: f64) -> f64 {
    let q = q as f64;
    (a2.clamp(0.0, 1.0) * q / (d as f64 + q - 1.0)).sqrt()
}

/// Optimal weight on the normalized RGF direction when averaging it with
/// the prior:
/// `(1 - a^2) b / ((1 - a^2) b + a (1 - b^2))` with `a = alpha`, `b = E[beta]`.
pub fn mu_star(alpha: f64, e_beta: f64) -> f64 {
    let a = alpha.clamp(0.0, 1.0);
    let b = e_beta.clamp(0.0, 1.0);
    if a == 0.0 && b == 0.0 {
        return 1.0;
    }
    let num = (1.0 - a * a) * b;
    let den = num + a * (1.0 - b * b);
    if den <= 0.0 {
        // a = b = 1: both directions are exact.
        return 0.5;
    }
    (num / den).clamp(0.0, 1.0)
}

/// Subspace averaging weight when the prior's in-subspace cosine `alpha1`
/// is known: `(A^2 - alpha1 a) b / ((A^2 - alpha1 b)(a + b))`.
///
/// Attacks cannot observe `alpha1`; this form exists for verification.
pub fn mu_star_subspace(alpha: f64, alpha1: f64, a2: f64, e_beta: f64) -> f64 {
    let a = alpha.clamp(0.0, 1.0);
    let b = e_beta.clamp(0.0, 1.0);
    let den = (a2 - alpha1 * b) * (a + b);
    if den <= 0.0 || !den.is_finite() {
        return mu_star(a, b);
    }
    ((a2 - alpha1 * a) * b / den).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lambda_branches() {
        assert_eq!(lambda_star(0.005, 10, 100), 0.0);
        assert_eq!(lambda_star(0.2, 10, 100), 1.0);
        let mid = lambda_star(0.05, 10, 100);
        assert!(mid > 0.0 && mid < 1.0);
        assert_eq!(lambda_star(1.0, 50, 512), 1.0);
        assert_eq!(lambda_star(0.0, 50, 512), 0.0);
    }

    #[test]
    fn lambda_at_one_over_d() {
        for d in [8usize, 64, 256, 1000] {
            for q in [2usize, 5, 20, 50] {
                let l = lambda_star(1.0 / d as f64, q, d);
                assert!((l - 1.0 / d as f64).abs() < 1e-12, "D={d} q={q} {l}");
            }
        }
    }

    #[test]
    fn middle_branch_meets_thresholds() {
        for d in [2usize, 8, 64, 256, 3072] {
            for q in [2usize, 5, 20, 50] {
                let (df, qf) = (d as f64, q as f64);
                let m = df + 2.0 * qf - 2.0;
                let mid = |a2: f64| (1.0 - a2) * (a2 * m - 1.0) / (2.0 * a2 * df * qf - a2 * a2 * df * m - 1.0);
                assert!(mid(1.0 / m).abs() < 1e-9);
                assert!((mid((2.0 * qf - 1.0) / m) - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn subspace_branches() {
        assert_eq!(lambda_star_subspace(0.0, 0.0, 10, 100), 0.0);
        assert_eq!(lambda_star_subspace(0.2, 0.5, 10, 100), 1.0);
        let mid = lambda_star_subspace(0.05, 0.5, 10, 100);
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn beta_examples() {
        assert!((expected_beta(1, 100) - 0.1).abs() < 1e-12);
        assert!((expected_beta(1, 101) - (1.0f64 / 101.0).sqrt()).abs() < 1e-12);
        let q = 1000;
        assert!((expected_beta(q, q) - (q as f64 / (2.0 * q as f64 - 1.0)).sqrt()).abs() < 1e-12);
        assert_eq!(expected_beta_subspace(5, 20, 0.0), 0.0);
        assert!((expected_beta_subspace(5, 20, 1.0) - expected_beta(5, 20)).abs() < 1e-12);
    }

    #[test]
    fn mu_examples() {
        assert_eq!(mu_star(0.0, 0.3), 1.0);
        assert_eq!(mu_star(0.3, 0.0), 0.0);
        assert_eq!(mu_star(0.0, 0.0), 1.0);
        for t in [0.01, 0.2, 0.5, 0.77, 0.99] {
            assert!((mu_star(t, t) - 0.5).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn lambda_in_unit_interval_and_monotone(a in 0.0f64..1.0, da in 0.0f64..0.2, q in 1usize..60, d in 2usize..600) {
            let l0 = lambda_star(a, q, d);
            let l1 = lambda_star((a + da).min(1.0), q, d);
            prop_assert!((0.0..=1.0).contains(&l0));
            prop_assert!(l1 >= l0 - 1e-12);
        }

        #[test]
        fn subspace_form_reparameterizes_full_form(a2 in 0.0f64..1.0, q in 1usize..60, d in 2usize..600) {
            let full = lambda_star(a2, q, d);
            let sub = lambda_star_subspace(a2, 1.0 - a2, q, d - 1);
            prop_assert!((full - sub).abs() < 1e-9, "{} vs {}", full, sub);
        }

        #[test]
        fn mu_subspace_reduces_when_alpha1_is_proportional(a in 0.0f64..1.0, b in 0.01f64..1.0) {
            // alpha1 = alpha A^2 with A = 1 recovers the full-space weight.
            prop_assert!((mu_star_subspace(a, a, 1.0, b) - mu_star(a, b)).abs() < 1e-9);
        }
    }
}
