//! Self-testing verdicts for XOR games.
//!
//! A game is a self-test exactly when (A) some global maximum of `Z_f` has
//! no coordinate `alpha_1..alpha_n` at a multiple of pi and (B) all maxima
//! are congruent mod 2*pi to that witness or its negation. Adding (C),
//! nonsingular Hessians at the maxima, upgrades the verdict to a
//! second-order robust self-test, with the explicit constant
//! `K_2 = 2 / sqrt(q_f - q'_f)`.
//!
//! Condition (C) is implemented as Hessian *nonsingularity* (smallest
//! absolute eigenvalue bounded away from zero): the literal reading "nonzero
//! matrix" would accept maxima manifolds whose Hessians are singular but not
//! zero, and those are precisely the non-robust degenerate cases.

use serde::Serialize;
use std::f64::consts::PI;

use crate::error::Result;
use crate::game::{transform_game, wrap_angle, TorusPoint, XorGame};
use crate::optimizer::{compute_qf_prime_opts, find_global_maxima, MaximaSet, OptimizerConfig};

/// Default absolute tolerance for the pi-multiple and congruence tests.
/// Newton polishes maxima to ~1e-10, so 1e-6 cleanly separates numerical
/// noise from genuine boundary maxima.
pub const ANGLE_TOL: f64 = 1e-6;

/// Relative tolerance for Hessian nonsingularity.
pub const HESSIAN_TOL: f64 = 1e-6;

/// The rendered verdict for a game.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub condition_a: bool,
    /// Index into the maxima list of the condition-(A) witness.
    pub witness_index: Option<usize>,
    pub condition_b: bool,
    pub condition_c: bool,
    /// Smallest absolute Hessian eigenvalue per maximum.
    pub min_abs_hessian_eigenvalues: Vec<f64>,
    pub is_self_test: bool,
    pub is_robust_self_test: bool,
    pub q_f: f64,
    pub q_f_prime: Option<f64>,
    pub k2: Option<f64>,
    /// The game transformation applied before computing `q'_f` so that the
    /// witness lies in the positive quadrant slab.
    pub normalization_b0: bool,
    pub normalization_b: Vec<bool>,
    /// Maxima formed a manifold rather than a small isolated set.
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

/// Wrapped distance from an angle to the nearest multiple of pi.
fn dist_to_pi_multiple(a: f64) -> f64 {
    let w = wrap_angle(a).abs();
    w.min(PI - w)
}

/// Condition (A): some maximum has every coordinate `alpha_1..alpha_n`
/// farther than `tol` from a multiple of pi. Returns the first witness.
/// Degenerate maxima sets fail unconditionally.
pub fn check_condition_a(maxima: &MaximaSet, tol: f64) -> (bool, Option<usize>) {
    if maxima.degenerate {
        return (false, None);
    }
    for (idx, m) in maxima.maxima.iter().enumerate() {
        let ok = m.point.angles[1..]
            .iter()
            .all(|&a| dist_to_pi_multiple(a) > tol);
        if ok {
            return (true, Some(idx));
        }
    }
    (false, None)
}

/// True when `p` is congruent mod 2*pi to `q` or to `-q` within `tol`.
pub fn equivalent_maxima(p: &TorusPoint, q: &TorusPoint, tol: f64) -> bool {
    p.wrapped_inf_dist(q) <= tol || p.wrapped_inf_dist(&q.negated()) <= tol
}

/// Condition (B): every maximum is equivalent to the witness.
pub fn check_condition_b(maxima: &MaximaSet, witness: &TorusPoint, tol: f64) -> bool {
    if maxima.degenerate {
        return false;
    }
    maxima
        .maxima
        .iter()
        .all(|m| equivalent_maxima(&m.point, witness, tol))
}

/// Condition (C): every maximum's Hessian is nonsingular, i.e. the smallest
/// absolute eigenvalue exceeds `tol * max(1, largest absolute eigenvalue)`.
/// Returns the per-maximum minima alongside the flag.
pub fn check_condition_c(maxima: &MaximaSet, tol: f64) -> (bool, Vec<f64>) {
    let mins: Vec<f64> = maxima
        .maxima
        .iter()
        .map(|m| m.min_abs_hessian_eigenvalue())
        .collect();
    if maxima.degenerate {
        return (false, mins);
    }
    let ok = maxima
        .maxima
        .iter()
        .all(|m| m.min_abs_hessian_eigenvalue() > tol * m.max_abs_hessian_eigenvalue().max(1.0));
    (ok, mins)
}

/// The normalization `(b0, b)` that moves a witness with coordinates off the
/// pi-grid into the positive slab `0 < beta_j < pi`: flip exactly the
/// players whose witness angle is negative, keep the sign (`b0 = 0`) so the
/// transformed maximum still attains `+q_f`.
pub fn normalization_for_witness(witness: &TorusPoint) -> (bool, Vec<bool>) {
    let b: Vec<bool> = witness.angles[1..]
        .iter()
        .map(|&a| wrap_angle(a) < 0.0)
        .collect();
    (false, b)
}

/// Map a torus point through the angle relation of the game transformation:
/// the point `t` of the original game corresponds to the point of the
/// transformed game with `beta_j = (-1)^{b_j} t_j` and
/// `beta_0 = t_0 + sum_{b_k = 1} t_k`.
pub fn map_point_through_transform(point: &TorusPoint, b: &[bool]) -> TorusPoint {
    let mut beta0 = point.angles[0];
    for (k, &flip) in b.iter().enumerate() {
        if flip {
            beta0 += point.angles[k + 1];
        }
    }
    let mut angles = vec![beta0];
    for (k, &flip) in b.iter().enumerate() {
        let s = if flip { -1.0 } else { 1.0 };
        angles.push(s * point.angles[k + 1]);
    }
    TorusPoint::new(angles).wrapped()
}

/// Full classification result: the verdict plus the maxima it was rendered
/// from.
#[derive(Debug, Clone)]
pub struct Classification {
    pub verdict: Verdict,
    pub maxima: MaximaSet,
}

/// Render the verdict for a game: find the global maxima, check (A), (B),
/// (C), and when the game is a robust self-test normalize it and compute
/// `q'_f` and `K_2 = 2 / sqrt(q_f - q'_f)`.
pub fn classify_full(game: &XorGame, config: &OptimizerConfig) -> Result<Classification> {
    let maxima = find_global_maxima(game, config)?;
    let (cond_a, witness_index) = check_condition_a(&maxima, ANGLE_TOL);
    let (cond_c, min_eigs) = check_condition_c(&maxima, HESSIAN_TOL);

    let mut cond_b = false;
    let mut b0 = false;
    let mut b = vec![false; game.players()];
    let mut q_f_prime = None;
    let mut k2 = None;
    let mut warnings = maxima.warnings.clone();

    if let Some(idx) = witness_index {
        let witness = &maxima.maxima[idx].point;
        cond_b = check_condition_b(&maxima, witness, ANGLE_TOL);
        let (nb0, nb) = normalization_for_witness(witness);
        b0 = nb0;
        b = nb;

        if cond_b && cond_c {
            let normalized = transform_game(game, b0, &b)?;
            match compute_qf_prime_opts(&normalized, config, true) {
                Ok(qp) => {
                    if maxima.q_f - qp > 0.0 {
                        k2 = Some(2.0 / (maxima.q_f - qp).sqrt());
                    } else {
                        warnings.push(format!(
                            "q'_f = {qp} is not strictly below q_f = {}; K_2 undefined",
                            maxima.q_f
                        ));
                    }
                    q_f_prime = Some(qp);
                }
                Err(e) => warnings.push(format!("q'_f computation failed: {e}")),
            }
        }
    }

    let is_self_test = cond_a && cond_b;
    let is_robust = cond_a && cond_b && cond_c && k2.is_some();

    let verdict = Verdict {
        condition_a: cond_a,
        witness_index,
        condition_b: cond_b,
        condition_c: cond_c,
        min_abs_hessian_eigenvalues: min_eigs,
        is_self_test,
        is_robust_self_test: is_robust,
        q_f: maxima.q_f,
        q_f_prime,
        k2: if is_robust { k2 } else { None },
        normalization_b0: b0,
        normalization_b: b,
        degenerate: maxima.degenerate,
        warnings,
    };
    Ok(Classification { verdict, maxima })
}

/// Verdict-only convenience wrapper around [`classify_full`].
pub fn classify(game: &XorGame, config: &OptimizerConfig) -> Result<Verdict> {
    Ok(classify_full(game, config)?.verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn equivalent_maxima_examples() {
        let p = TorusPoint::new(vec![-FRAC_PI_4, FRAC_PI_2, FRAC_PI_2]);
        let neg = TorusPoint::new(vec![FRAC_PI_4, -FRAC_PI_2, -FRAC_PI_2]);
        let shifted = TorusPoint::new(vec![
            -FRAC_PI_4 + 2.0 * PI,
            FRAC_PI_2 - 2.0 * PI,
            FRAC_PI_2,
        ]);
        let other = TorusPoint::new(vec![FRAC_PI_4, FRAC_PI_2, FRAC_PI_2]);
        assert!(equivalent_maxima(&p, &neg, 1e-9));
        assert!(equivalent_maxima(&p, &shifted, 1e-9));
        assert!(!equivalent_maxima(&p, &other, 1e-9));
    }

    #[test]
    fn chsh_is_a_robust_self_test() {
        let cls = classify_full(&XorGame::chsh(), &OptimizerConfig::default()).unwrap();
        let v = &cls.verdict;
        assert!(v.condition_a && v.condition_b && v.condition_c);
        assert!(v.is_self_test && v.is_robust_self_test);
        assert_relative_eq!(v.q_f, 2.0 * 2.0f64.sqrt(), epsilon = 1e-10);
        assert_relative_eq!(v.q_f_prime.unwrap(), 2.0, epsilon = 1e-8);
        let expect_k2 = 2.0 / (2.0 * 2.0f64.sqrt() - 2.0).sqrt();
        assert_relative_eq!(v.k2.unwrap(), expect_k2, epsilon = 1e-6);
        // The witness is in the positive quadrant already: no flips.
        assert!(!v.normalization_b0);
        assert_eq!(v.normalization_b, vec![false, false]);
        // Determinant of the witness Hessian is -sqrt(2): product of
        // eigenvalues.
        let witness = &cls.maxima.maxima[v.witness_index.unwrap()];
        let det: f64 = witness.hessian_eigenvalues.iter().product();
        assert_relative_eq!(det, -2.0f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn ghz_is_a_robust_self_test() {
        let v = classify(&XorGame::ghz3(), &OptimizerConfig::default()).unwrap();
        assert!(v.is_robust_self_test);
        assert_relative_eq!(v.q_f, 4.0, epsilon = 1e-9);
        assert!(v.q_f_prime.unwrap() < 4.0 - 1e-9);
    }

    #[test]
    fn h_alpha_family_is_robust() {
        for alpha in [1.5, 2.0, 3.0] {
            let v = classify(&XorGame::h_alpha(alpha), &OptimizerConfig::default()).unwrap();
            assert!(v.is_robust_self_test, "alpha = {alpha}");
            assert_relative_eq!(v.q_f, 2.0 * (alpha * alpha + 1.0).sqrt(), epsilon = 1e-9);
        }
    }

    #[test]
    fn constant_game_fails_condition_a() {
        let v = classify(&XorGame::constant(2, 1.0), &OptimizerConfig::default()).unwrap();
        assert!(!v.condition_a);
        assert!(!v.is_self_test);
        assert!(v.k2.is_none());
    }

    #[test]
    fn all_zero_game_is_degenerate_not_a_self_test() {
        let v = classify(&XorGame::all_zero(2), &OptimizerConfig::default()).unwrap();
        assert!(v.degenerate);
        assert!(!v.condition_a);
        assert!(!v.condition_c);
        assert!(!v.is_self_test && !v.is_robust_self_test);
    }

    #[test]
    fn padded_chsh_with_idle_player_is_not_a_self_test() {
        // f(i1, i2, 0) = CHSH(i1, i2), f(i1, i2, 1) = 0: the third angle is a
        // free direction, so the maxima form manifolds.
        let padded = XorGame::new(3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0]).unwrap();
        let v = classify(&padded, &OptimizerConfig::default()).unwrap();
        assert!(!v.is_self_test);
        assert!(!v.is_robust_self_test);
    }

    #[test]
    fn verdict_invariant_under_game_transformations() {
        let cfg = OptimizerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        for game in [
            XorGame::chsh(),
            XorGame::h_alpha(2.0),
            XorGame::constant(2, 1.0),
        ] {
            let base = classify(&game, &cfg).unwrap();
            for _ in 0..4 {
                let b0 = rng.gen_bool(0.5);
                let b: Vec<bool> = (0..game.players()).map(|_| rng.gen_bool(0.5)).collect();
                let t = transform_game(&game, b0, &b).unwrap();
                let v = classify(&t, &cfg).unwrap();
                assert_eq!(v.is_self_test, base.is_self_test, "b0={b0} b={b:?}");
                assert_eq!(v.is_robust_self_test, base.is_robust_self_test);
            }
        }
    }

    #[test]
    fn k2_matches_definition_exactly() {
        let v = classify(&XorGame::h_alpha(2.0), &OptimizerConfig::default()).unwrap();
        let (qf, qp, k2) = (v.q_f, v.q_f_prime.unwrap(), v.k2.unwrap());
        assert!(qp < qf);
        assert_eq!(k2, 2.0 / (qf - qp).sqrt());
    }

    #[test]
    fn witness_maps_through_normalization_to_a_maximum() {
        // Flip the CHSH game so its witness acquires negative coordinates,
        // classify, and verify the normalized witness is a maximum of the
        // normalized game with the same value.
        let cfg = OptimizerConfig::default();
        let flipped = transform_game(&XorGame::chsh(), false, &[true, false]).unwrap();
        let cls = classify_full(&flipped, &cfg).unwrap();
        let v = &cls.verdict;
        assert!(v.is_robust_self_test);
        let witness = &cls.maxima.maxima[v.witness_index.unwrap()].point;
        // Exactly one player needs flipping: the witness pair is
        // (pi/4, -pi/2, pi/2) and (-pi/4, pi/2, -pi/2).
        assert_eq!(v.normalization_b.iter().filter(|&&f| f).count(), 1);
        let normalized = transform_game(&flipped, v.normalization_b0, &v.normalization_b).unwrap();
        let mapped = map_point_through_transform(witness, &v.normalization_b);
        assert!(mapped.angles[1..].iter().all(|&a| a > 0.0 && a < PI));
        let z = crate::game::eval_z(&normalized, &mapped).unwrap();
        assert!((z - v.q_f).abs() < 1e-8);
    }

    #[test]
    fn condition_a_tolerance_respects_pi_grid() {
        assert_relative_eq!(dist_to_pi_multiple(PI), 0.0, epsilon = 1e-12);
        assert_relative_eq!(dist_to_pi_multiple(-PI), 0.0, epsilon = 1e-12);
        assert_relative_eq!(dist_to_pi_multiple(0.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(dist_to_pi_multiple(FRAC_PI_2), FRAC_PI_2, epsilon = 1e-12);
        assert_relative_eq!(dist_to_pi_multiple(3.0 * PI + 0.01), 0.01, epsilon = 1e-10);
    }
}
