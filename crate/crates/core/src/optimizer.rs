//! Global maximization of `Z_f` over the torus.
//!
//! The production path is multi-start damped Newton ascent seeded from a
//! uniform grid plus random draws, with deduplication of converged points up
//! to angle wrapping. A brute-force grid scan (`grid_oracle_qf`) serves as an
//! independent cross-check for small player counts, and `compute_qf_prime`
//! maximizes `Z_f` over the complement of the two open sign-definite
//! quadrant slabs, which yields the explicit robustness constant
//! `K_2 = 2 / sqrt(q_f - q'_f)`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::game::{eval_z, grad_z, hess_z, CriticalPoint, TorusPoint, XorGame};
use crate::linalg::{RMat, RVec};

/// Knobs for the multi-start optimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Seed-grid resolution per torus dimension.
    pub grid_points_per_dim: usize,
    pub newton_max_iters: usize,
    /// Accept a critical point when the gradient norm falls below this.
    pub gradient_tol: f64,
    /// Wrapped infinity-distance under which two maxima are the same point.
    pub dedup_angle_tol: f64,
    /// Relative tolerance (vs `max(1, |q_f|)`) for membership in the set of
    /// global maxima.
    pub global_value_tol: f64,
    /// Random multi-start seeds per torus dimension, on top of the grid.
    pub random_starts_per_dim: usize,
    pub rng_seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grid_points_per_dim: 12,
            newton_max_iters: 100,
            gradient_tol: 1e-10,
            dedup_angle_tol: 1e-6,
            global_value_tol: 1e-8,
            random_starts_per_dim: 10,
            rng_seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points_per_dim < 4 {
            return Err(Error::InvalidInput(
                "grid_points_per_dim must be at least 4".into(),
            ));
        }
        if self.gradient_tol <= 0.0 || self.dedup_angle_tol <= 0.0 || self.global_value_tol <= 0.0
        {
            return Err(Error::InvalidInput("tolerances must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

/// The set of global maxima found for a game.
#[derive(Debug, Clone)]
pub struct MaximaSet {
    pub q_f: f64,
    /// Distinct global maxima, best first; canonical wrapped representatives.
    pub maxima: Vec<CriticalPoint>,
    /// Fraction of multi-start seeds whose refinement converged.
    pub converged_fraction: f64,
    /// Set when the maxima do not form a small isolated set (maxima
    /// manifolds, e.g. the all-zero game). Degenerate sets force the
    /// self-test conditions to fail downstream.
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

/// Maxima count beyond which the set is treated as a manifold rather than
/// isolated points.
const DEGENERATE_MAXIMA_CAP: usize = 128;

/// Exhaustive evaluation of `Z_f` on the uniform grid
/// `theta_a = -pi + j * 2*pi/points`, `j = 0..points`. Returns the best value
/// and its grid point. This is the independent oracle for optimizer results.
pub fn grid_oracle_qf(game: &XorGame, points_per_dim: usize) -> Result<(f64, TorusPoint)> {
    if points_per_dim < 4 {
        return Err(Error::InvalidInput("grid needs at least 4 points".into()));
    }
    let n = game.players();
    let dims = n + 1;
    let total = (points_per_dim as f64).powi(dims as i32);
    if total > 1e9 {
        return Err(Error::SizeLimit(format!(
            "grid of {points_per_dim}^{dims} exceeds 1e9 evaluations"
        )));
    }
    let h = 2.0 * PI / points_per_dim as f64;
    let node = |j: usize| -PI + j as f64 * h;

    // For fixed (t_1..t_n) the table phases are constant, so
    // Z(t_0) = A cos t_0 - B sin t_0 with A, B accumulated once. This is an
    // exact factoring of the defining sum, evaluated at every grid node.
    let outer_total = points_per_dim.pow(n as u32);
    let best = (0..outer_total)
        .into_par_iter()
        .map(|flat| {
            let mut idx = vec![0usize; n];
            let mut rem = flat;
            for k in (0..n).rev() {
                idx[k] = rem % points_per_dim;
                rem /= points_per_dim;
            }
            let thetas: Vec<f64> = idx.iter().map(|&j| node(j)).collect();
            let mut a = 0.0;
            let mut b = 0.0;
            for (i, &f) in game.table().iter().enumerate() {
                if f == 0.0 {
                    continue;
                }
                let mut s = 0.0;
                for k in 0..n {
                    if game.bit(i, k) == 1 {
                        s += thetas[k];
                    }
                }
                a += f * s.cos();
                b += f * s.sin();
            }
            let mut local_best = f64::NEG_INFINITY;
            let mut local_j = 0;
            for j in 0..points_per_dim {
                let t0 = node(j);
                let z = a * t0.cos() - b * t0.sin();
                if z > local_best {
                    local_best = z;
                    local_j = j;
                }
            }
            (local_best, local_j, thetas)
        })
        .reduce(
            || (f64::NEG_INFINITY, 0usize, Vec::new()),
            |x, y| if x.0 >= y.0 { x } else { y },
        );

    let mut angles = vec![node(best.1)];
    angles.extend_from_slice(&best.2);
    Ok((best.0, TorusPoint::new(angles)))
}

/// Damped Newton ascent on `Z_f` from a seed point.
///
/// Newton steps fall back to gradient ascent when the Newton system is
/// singular or points downhill; each step is halved until `Z` increases or
/// the gradient norm contracts. Returns the polished critical point with its
/// angles wrapped to `(-pi, pi]`, or a non-convergence error after
/// `newton_max_iters`.
pub fn refine_maximum(
    game: &XorGame,
    seed: &TorusPoint,
    config: &OptimizerConfig,
) -> Result<CriticalPoint> {
    config.validate()?;
    let dims = game.players() + 1;
    if seed.len() != dims {
        return Err(Error::DimensionMismatch {
            expected: dims,
            got: seed.len(),
            context: "seed length must be players + 1",
        });
    }

    let mut x = seed.clone();
    let mut z = eval_z(game, &x)?;
    for _ in 0..config.newton_max_iters {
        let grad = grad_z(game, &x)?;
        let gnorm = grad.norm();
        if gnorm <= config.gradient_tol {
            return CriticalPoint::at(game, x.wrapped());
        }

        let hess = hess_z(game, &x)?;
        let newton_dir = solve_newton(&hess, &grad);
        let mut stepped = false;
        for dir in [newton_dir, Some(grad.clone())].into_iter().flatten() {
            if let Some((nx, nz)) = line_search(game, &x, z, gnorm, &dir) {
                x = nx;
                z = nz;
                stepped = true;
                break;
            }
        }
        if !stepped {
            return Err(Error::NonConvergence(format!(
                "stalled at gradient norm {gnorm:.3e}"
            )));
        }
    }
    let grad = grad_z(game, &x)?;
    if grad.norm() <= config.gradient_tol {
        return CriticalPoint::at(game, x.wrapped());
    }
    Err(Error::NonConvergence(format!(
        "gradient norm {:.3e} after {} iterations",
        grad.norm(),
        config.newton_max_iters
    )))
}

/// Newton direction `-H^{-1} g`, or `None` when the system is singular or
/// the solution is not an ascent direction.
fn solve_newton(hess: &RMat, grad: &RVec) -> Option<RVec> {
    let lu = hess.clone().lu();
    let dir = lu.solve(&(-grad))?;
    if !dir.iter().all(|v| v.is_finite()) {
        return None;
    }
    if dir.dot(grad) <= 0.0 {
        return None;
    }
    Some(dir)
}

/// Backtracking line search: halve the step until `Z` increases or the
/// gradient norm contracts by half (which handles steps inside the rounding
/// plateau of a maximum).
fn line_search(
    game: &XorGame,
    x: &TorusPoint,
    z: f64,
    gnorm: f64,
    dir: &RVec,
) -> Option<(TorusPoint, f64)> {
    let mut t = 1.0;
    for _ in 0..60 {
        let cand = TorusPoint::new(
            x.angles
                .iter()
                .enumerate()
                .map(|(a, &v)| v + t * dir[a])
                .collect(),
        );
        let cz = eval_z(game, &cand).expect("candidate has matching length");
        if cz > z {
            return Some((cand, cz));
        }
        let cg = grad_z(game, &cand).expect("candidate has matching length");
        if cg.norm() < 0.5 * gnorm && cz >= z - 1e-13 * (1.0 + z.abs()) {
            return Some((cand, cz));
        }
        t *= 0.5;
    }
    None
}

/// Multi-start search for all global maxima of `Z_f`.
pub fn find_global_maxima(game: &XorGame, config: &OptimizerConfig) -> Result<MaximaSet> {
    use rand::{Rng, SeedableRng};
    config.validate()?;
    let n = game.players();
    if n > 6 {
        return Err(Error::SizeLimit(
            "grid seeding is limited to n <= 6 players".into(),
        ));
    }
    let dims = n + 1;
    let points = config.grid_points_per_dim;
    let h = 2.0 * PI / points as f64;

    let grid_total = points.pow(dims as u32);
    let random_count = config.random_starts_per_dim * dims;
    let mut seeds: Vec<TorusPoint> = Vec::with_capacity(grid_total + random_count);
    for flat in 0..grid_total {
        let mut rem = flat;
        let mut angles = vec![0.0; dims];
        for a in (0..dims).rev() {
            angles[a] = -PI + (rem % points) as f64 * h;
            rem /= points;
        }
        seeds.push(TorusPoint::new(angles));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.rng_seed);
    for _ in 0..random_count {
        seeds.push(TorusPoint::new(
            (0..dims).map(|_| rng.gen_range(-PI..PI)).collect(),
        ));
    }

    let refined: Vec<Option<CriticalPoint>> = seeds
        .par_iter()
        .map(|seed| refine_maximum(game, seed, config).ok())
        .collect();
    let converged: Vec<CriticalPoint> = refined.into_iter().flatten().collect();
    let converged_fraction = converged.len() as f64 / seeds.len() as f64;

    let mut warnings = Vec::new();
    if converged_fraction < 0.5 {
        warnings.push(format!(
            "only {:.0}% of seeds converged",
            100.0 * converged_fraction
        ));
    }
    if converged.is_empty() {
        return Err(Error::NonConvergence(
            "no multi-start seed converged to a critical point".into(),
        ));
    }

    let mut candidates = converged;

    // Cross-check against the brute-force grid for small n; refine the
    // oracle's argmax and add it to the pool so a missed basin still
    // surfaces.
    if n <= 3 {
        let oracle_points = match n {
            1 => 200,
            2 => 100,
            _ => 40,
        };
        let (oracle_val, oracle_arg) = grid_oracle_qf(game, oracle_points)?;
        if let Ok(polished) = refine_maximum(game, &oracle_arg, config) {
            candidates.push(polished);
        }
        let best_so_far = candidates
            .iter()
            .map(|c| c.value)
            .fold(f64::NEG_INFINITY, f64::max);
        let slack = game.abs_sum() * (n as f64 + 1.0) * h;
        if oracle_val > best_so_far + slack.max(1e-6) {
            warnings.push(format!(
                "grid oracle value {oracle_val} exceeds refined best {best_so_far}"
            ));
        }
    }

    let q_f = candidates
        .iter()
        .map(|c| c.value)
        .fold(f64::NEG_INFINITY, f64::max);
    let cutoff = q_f - config.global_value_tol * q_f.abs().max(1.0);
    let mut global: Vec<CriticalPoint> =
        candidates.into_iter().filter(|c| c.value >= cutoff).collect();

    // Deterministic order: best value first, then lexicographic angles.
    global.sort_by(|a, b| {
        b.value
            .partial_cmp(&a.value)
            .unwrap()
            .then_with(|| lex_cmp(&a.point, &b.point))
    });

    let mut reps: Vec<CriticalPoint> = Vec::new();
    let mut overflow = false;
    for cand in global {
        if reps
            .iter()
            .all(|r| r.point.wrapped_inf_dist(&cand.point) > config.dedup_angle_tol)
        {
            if reps.len() >= DEGENERATE_MAXIMA_CAP {
                overflow = true;
                break;
            }
            reps.push(cand);
        }
    }

    // A manifold of maxima shows up either as an overflowing representative
    // list or as several representatives that all carry singular Hessians.
    let singular = |c: &CriticalPoint| {
        c.min_abs_hessian_eigenvalue() <= 1e-8 * c.max_abs_hessian_eigenvalue().max(1.0)
    };
    let degenerate = overflow || (reps.len() > 2 && reps.iter().all(singular));
    if degenerate {
        warnings.push("maxima do not form a small isolated set (degenerate game)".into());
    }

    Ok(MaximaSet {
        q_f,
        maxima: reps,
        converged_fraction,
        degenerate,
        warnings,
    })
}

fn lex_cmp(a: &TorusPoint, b: &TorusPoint) -> std::cmp::Ordering {
    for (x, y) in a.angles.iter().zip(&b.angles) {
        match x.partial_cmp(y).unwrap() {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    std::cmp::Ordering::Equal
}

/// The optimal score `q_f` with the default configuration.
pub fn compute_qf(game: &XorGame) -> Result<f64> {
    Ok(find_global_maxima(game, &OptimizerConfig::default())?.q_f)
}

/// Maximum of `Z_f` over `[-pi, pi]^{n+1}` minus the two open slabs
/// `A = {0 < t_j < pi for all j >= 1}` and `A' = -A` (with `t_0` free in
/// both). The caller must have normalized the game so a condition-(A)
/// witness maximum lies in `A`.
///
/// The complement decomposes into the `2^n - 2` closed mixed sign-pattern
/// boxes plus the faces with one coordinate pinned to `{-pi, 0, pi}`; each
/// piece is maximized by seeded projected Newton ascent on
/// `|P_f(e^{i t_1}, ..., e^{i t_n})|^2` (the angle `t_0` maximizes out
/// analytically to the modulus of `P_f`).
pub fn compute_qf_prime(game: &XorGame, config: &OptimizerConfig) -> Result<f64> {
    compute_qf_prime_opts(game, config, false)
}

pub fn compute_qf_prime_opts(
    game: &XorGame,
    config: &OptimizerConfig,
    allow_large: bool,
) -> Result<f64> {
    config.validate()?;
    let n = game.players();
    if n > 4 && !allow_large {
        return Err(Error::SizeLimit(format!(
            "q'_f region enumeration is exponential; n = {n} > 4 requires the override flag"
        )));
    }

    let pieces = complement_pieces(n);
    let best_sq = pieces
        .par_iter()
        .map(|(lo, hi)| maximize_modulus_in_box(game, lo, hi, config))
        .reduce(|| 0.0, f64::max);
    Ok(best_sq.sqrt())
}

/// The closed pieces covering `[-pi, pi]^n` minus the two open sign-definite
/// boxes: mixed sign-pattern boxes plus pinned faces.
pub fn complement_pieces(n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut pieces: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for pattern in 0..(1usize << n) {
        if pattern == 0 || pattern == (1 << n) - 1 {
            continue;
        }
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for k in 0..n {
            if (pattern >> (n - 1 - k)) & 1 == 0 {
                lo[k] = 0.0;
                hi[k] = PI;
            } else {
                lo[k] = -PI;
                hi[k] = 0.0;
            }
        }
        pieces.push((lo, hi));
    }
    for j in 0..n {
        for v in [-PI, 0.0, PI] {
            let mut lo = vec![-PI; n];
            let mut hi = vec![PI; n];
            lo[j] = v;
            hi[j] = v;
            pieces.push((lo, hi));
        }
    }
    pieces
}

/// `P_f` at unit-modulus arguments together with its first and second
/// phase-derivative building blocks: `P_k` sums entries with `i_k = 1` and
/// `P_kl` sums entries with `i_k = i_l = 1`.
fn eval_p_with_derivs(
    game: &XorGame,
    thetas: &[f64],
) -> (Complex64, Vec<Complex64>, Vec<Vec<Complex64>>) {
    let n = game.players();
    let zero = Complex64::new(0.0, 0.0);
    let mut p = zero;
    let mut pk = vec![zero; n];
    let mut pkl = vec![vec![zero; n]; n];
    let mut bits = Vec::with_capacity(n);
    for (i, &f) in game.table().iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let mut s = 0.0;
        bits.clear();
        for k in 0..n {
            if game.bit(i, k) == 1 {
                s += thetas[k];
                bits.push(k);
            }
        }
        let e = Complex64::from_polar(1.0, s) * f;
        p += e;
        for &k in &bits {
            pk[k] += e;
            for &l in &bits {
                pkl[k][l] += e;
            }
        }
    }
    (p, pk, pkl)
}

/// `|P|^2` and its gradient/Hessian in the angles `t_1..t_n`.
fn modulus_sq_with_derivs(game: &XorGame, thetas: &[f64]) -> (f64, RVec, RMat) {
    let n = game.players();
    let (p, pk, pkl) = eval_p_with_derivs(game, thetas);
    let g = p.norm_sqr();
    let mut grad = RVec::zeros(n);
    let mut hess = RMat::zeros(n, n);
    for k in 0..n {
        grad[k] = -2.0 * (p.conj() * pk[k]).im;
        for l in 0..n {
            hess[(k, l)] = 2.0 * (pk[l].conj() * pk[k]).re - 2.0 * (p.conj() * pkl[k][l]).re;
        }
    }
    (g, grad, hess)
}

/// Seeded projected Newton ascent of `|P|^2` over a box (possibly with
/// pinned coordinates). Returns the best value found.
fn maximize_modulus_in_box(
    game: &XorGame,
    lo: &[f64],
    hi: &[f64],
    config: &OptimizerConfig,
) -> f64 {
    let n = game.players();
    let free: Vec<usize> = (0..n).filter(|&k| hi[k] > lo[k]).collect();

    // Seed grid over the free coordinates, value-only scan.
    let per_dim: usize = match free.len() {
        0 => 1,
        1 => 64,
        2 => 24,
        3 => 12,
        _ => 8,
    };
    let mut seeds: Vec<(f64, Vec<f64>)> = Vec::new();
    let total = per_dim.pow(free.len() as u32);
    for flat in 0..total {
        let mut theta: Vec<f64> = lo.to_vec();
        let mut rem = flat;
        for &k in free.iter().rev() {
            let j = rem % per_dim;
            rem /= per_dim;
            theta[k] = lo[k] + (j as f64 + 0.5) * (hi[k] - lo[k]) / per_dim as f64;
        }
        let (val, _, _) = modulus_sq_with_derivs(game, &theta);
        seeds.push((val, theta));
    }
    seeds.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    seeds.truncate(10);

    let mut best = 0.0f64;
    for (_, seed) in seeds {
        let polished = projected_newton_box(game, seed, lo, hi, &free, config);
        best = best.max(polished);
    }
    best
}

fn projected_newton_box(
    game: &XorGame,
    mut x: Vec<f64>,
    lo: &[f64],
    hi: &[f64],
    free: &[usize],
    config: &OptimizerConfig,
) -> f64 {
    let eps = 1e-12;
    let clamp = |x: &mut Vec<f64>| {
        for (k, v) in x.iter_mut().enumerate() {
            *v = v.clamp(lo[k], hi[k]);
        }
    };
    clamp(&mut x);
    let (mut val, _, _) = modulus_sq_with_derivs(game, &x);

    for _ in 0..(2 * config.newton_max_iters) {
        let (_, grad, hess) = modulus_sq_with_derivs(game, &x);
        // Inactive free coordinates: not pressed against a bound in the
        // uphill direction.
        let inactive: Vec<usize> = free
            .iter()
            .copied()
            .filter(|&k| {
                !((x[k] <= lo[k] + eps && grad[k] < 0.0)
                    || (x[k] >= hi[k] - eps && grad[k] > 0.0))
            })
            .collect();
        if inactive.is_empty() {
            break;
        }
        let pg_norm: f64 = inactive
            .iter()
            .map(|&k| grad[k] * grad[k])
            .sum::<f64>()
            .sqrt();
        if pg_norm <= 1e-11 * val.abs().max(1.0) {
            break;
        }

        let m = inactive.len();
        let mut h_red = RMat::zeros(m, m);
        let mut g_red = RVec::zeros(m);
        for (a, &k) in inactive.iter().enumerate() {
            g_red[a] = grad[k];
            for (b, &l) in inactive.iter().enumerate() {
                h_red[(a, b)] = hess[(k, l)];
            }
        }
        let newton = solve_newton(&h_red, &g_red);
        let mut improved = false;
        for dir in [newton, Some(g_red.clone())].into_iter().flatten() {
            let mut t = 1.0;
            for _ in 0..50 {
                let mut cand = x.clone();
                for (a, &k) in inactive.iter().enumerate() {
                    cand[k] += t * dir[a];
                }
                clamp(&mut cand);
                let (cval, _, _) = modulus_sq_with_derivs(game, &cand);
                if cval > val {
                    x = cand;
                    val = cval;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if improved {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    val
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    const SQRT8: f64 = 2.8284271247461903;

    fn chsh_max() -> TorusPoint {
        TorusPoint::new(vec![-FRAC_PI_4, FRAC_PI_2, FRAC_PI_2])
    }

    #[test]
    fn grid_oracle_chsh() {
        let g = XorGame::chsh();
        let (val, arg) = grid_oracle_qf(&g, 400).unwrap();
        assert!((val - SQRT8).abs() < 1e-3, "oracle value {val}");
        // Independent re-evaluation at the argmax agrees with the scan value.
        assert_relative_eq!(eval_z(&g, &arg).unwrap(), val, epsilon = 1e-10);
    }

    #[test]
    fn grid_oracle_degenerate_and_constant_games() {
        let z = XorGame::all_zero(2);
        let (val, _) = grid_oracle_qf(&z, 40).unwrap();
        assert_eq!(val, 0.0);

        let ones = XorGame::constant(2, 1.0);
        let (val, arg) = grid_oracle_qf(&ones, 400).unwrap();
        assert!((val - 4.0).abs() < 1e-3);
        let origin = TorusPoint::new(vec![0.0, 0.0, 0.0]);
        assert!(arg.wrapped_inf_dist(&origin) < 2.0 * PI / 400.0 + 1e-12);
    }

    #[test]
    fn grid_oracle_rejects_oversized_grids() {
        let g = XorGame::random(4, &mut ChaCha8Rng::seed_from_u64(1));
        assert!(matches!(grid_oracle_qf(&g, 1000), Err(Error::SizeLimit(_))));
    }

    #[test]
    fn refine_converges_to_chsh_maximum() {
        let g = XorGame::chsh();
        let seed = TorusPoint::new(vec![-0.7, 1.6, 1.5]);
        let cp = refine_maximum(&g, &seed, &OptimizerConfig::default()).unwrap();
        assert!(cp.point.wrapped_inf_dist(&chsh_max()) < 1e-9);
        assert_relative_eq!(cp.value, SQRT8, epsilon = 1e-12);
        assert!(cp.gradient_norm <= 1e-10);
    }

    #[test]
    fn refine_fixed_point_and_all_zero() {
        let g = XorGame::chsh();
        let cp = refine_maximum(&g, &chsh_max(), &OptimizerConfig::default()).unwrap();
        assert!(cp.point.wrapped_inf_dist(&chsh_max()) < 1e-10);

        let z = XorGame::all_zero(2);
        let seed = TorusPoint::new(vec![0.3, -2.0, 1.1]);
        let cp = refine_maximum(&z, &seed, &OptimizerConfig::default()).unwrap();
        assert_eq!(cp.value, 0.0);
        assert!(cp.point.wrapped_inf_dist(&seed.wrapped()) < 1e-12);
    }

    #[test]
    fn chsh_global_maxima_are_the_plus_minus_pair() {
        let g = XorGame::chsh();
        let set = find_global_maxima(&g, &OptimizerConfig::default()).unwrap();
        assert_relative_eq!(set.q_f, SQRT8, epsilon = 1e-10);
        assert_eq!(set.maxima.len(), 2);
        assert!(!set.degenerate);
        let want = chsh_max();
        let found_plus = set
            .maxima
            .iter()
            .any(|m| m.point.wrapped_inf_dist(&want) < 1e-6);
        let found_minus = set
            .maxima
            .iter()
            .any(|m| m.point.wrapped_inf_dist(&want.negated()) < 1e-6);
        assert!(found_plus && found_minus);
        // Every global maximum has a negative semidefinite Hessian.
        for m in &set.maxima {
            let scale = m.max_abs_hessian_eigenvalue().max(1.0);
            assert!(m.hessian_eigenvalues.iter().all(|&e| e <= 1e-8 * scale));
        }
    }

    #[test]
    fn ghz_maxima_value_four() {
        let g = XorGame::ghz3();
        let set = find_global_maxima(&g, &OptimizerConfig::default()).unwrap();
        assert_relative_eq!(set.q_f, 4.0, epsilon = 1e-9);
        assert_eq!(set.maxima.len(), 2);
        let want = TorusPoint::new(vec![PI, FRAC_PI_2, FRAC_PI_2, FRAC_PI_2]);
        assert!(set
            .maxima
            .iter()
            .any(|m| m.point.wrapped_inf_dist(&want) < 1e-6));
        assert!(set
            .maxima
            .iter()
            .any(|m| m.point.wrapped_inf_dist(&want.negated()) < 1e-6));
    }

    #[test]
    fn h_alpha_single_pair_and_score() {
        for alpha in [1.5, 2.0, 3.0] {
            let g = XorGame::h_alpha(alpha);
            let set = find_global_maxima(&g, &OptimizerConfig::default()).unwrap();
            assert_relative_eq!(set.q_f, 2.0 * (alpha * alpha + 1.0).sqrt(), epsilon = 1e-9);
            assert_eq!(set.maxima.len(), 2, "alpha = {alpha}");
        }
    }

    #[test]
    fn all_zero_game_is_degenerate() {
        let z = XorGame::all_zero(2);
        let set = find_global_maxima(&z, &OptimizerConfig::default()).unwrap();
        assert_eq!(set.q_f, 0.0);
        assert!(set.degenerate);
    }

    #[test]
    fn find_global_maxima_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let g = XorGame::random(2, &mut rng);
        let cfg = OptimizerConfig::default().with_seed(42);
        let a = find_global_maxima(&g, &cfg).unwrap();
        let b = find_global_maxima(&g, &cfg).unwrap();
        assert_eq!(a.q_f.to_bits(), b.q_f.to_bits());
        assert_eq!(a.maxima.len(), b.maxima.len());
        for (x, y) in a.maxima.iter().zip(&b.maxima) {
            assert_eq!(x.point.angles, y.point.angles);
        }
    }

    #[test]
    fn compute_qf_examples() {
        assert_relative_eq!(compute_qf(&XorGame::chsh()).unwrap(), SQRT8, epsilon = 1e-9);
        assert_eq!(compute_qf(&XorGame::all_zero(2)).unwrap(), 0.0);
        for alpha in [1.5, 2.0, 3.0] {
            assert_relative_eq!(
                compute_qf(&XorGame::h_alpha(alpha)).unwrap(),
                2.0 * (alpha * alpha + 1.0).sqrt(),
                epsilon = 1e-9
            );
        }
    }

    /// Brute-force constrained oracle for q'_f: scan each complement piece on
    /// a dense grid of the `(t_1..t_n)` angles, taking `|P|` as the value
    /// (the exact maximum over `t_0`).
    fn qf_prime_grid_oracle(game: &XorGame, points: usize) -> f64 {
        let n = game.players();
        let mut best = 0.0f64;
        for (lo, hi) in complement_pieces(n) {
            let free: Vec<usize> = (0..n).filter(|&k| hi[k] > lo[k]).collect();
            let total = points.pow(free.len() as u32);
            for flat in 0..total {
                let mut theta = lo.clone();
                let mut rem = flat;
                for &k in free.iter().rev() {
                    let j = rem % points;
                    rem /= points;
                    theta[k] = lo[k] + j as f64 * (hi[k] - lo[k]) / (points - 1) as f64;
                }
                let lambdas: Vec<Complex64> = theta
                    .iter()
                    .map(|&t| Complex64::from_polar(1.0, t))
                    .collect();
                best = best.max(crate::game::eval_p(game, &lambdas).unwrap().norm());
            }
        }
        best
    }

    #[test]
    fn qf_prime_chsh_is_two() {
        let g = XorGame::chsh();
        let cfg = OptimizerConfig::default();
        let qp = compute_qf_prime(&g, &cfg).unwrap();
        // Analytic: |P|^2 = 4 + 4 sin a sin b, which is at most 4 off the
        // open (+,+) and (-,-) quadrants.
        assert_relative_eq!(qp, 2.0, epsilon = 1e-9);
        let oracle = qf_prime_grid_oracle(&g, 301);
        assert!((qp - oracle).abs() < 1e-4);
    }

    #[test]
    fn qf_prime_all_zero_and_h2() {
        let cfg = OptimizerConfig::default();
        assert_eq!(compute_qf_prime(&XorGame::all_zero(2), &cfg).unwrap(), 0.0);
        let h2 = XorGame::h_alpha(2.0);
        let qp = compute_qf_prime(&h2, &cfg).unwrap();
        let qf = 2.0 * 5.0f64.sqrt();
        assert!(qp < qf - 1e-9, "q' = {qp} not strictly below q_f = {qf}");
        let oracle = qf_prime_grid_oracle(&h2, 301);
        assert!((qp - oracle).abs() < 1e-4, "qp {qp} oracle {oracle}");
    }

    #[test]
    fn qf_prime_below_qf_for_random_games() {
        let cfg = OptimizerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = rng.gen_range(2..=3);
            let g = XorGame::random(n, &mut rng);
            let qf = find_global_maxima(&g, &cfg).unwrap().q_f;
            let qp = compute_qf_prime(&g, &cfg).unwrap();
            assert!(qp <= qf + 1e-8, "q' {qp} must not exceed q_f {qf}");
        }
    }

    #[test]
    fn qf_prime_refuses_large_n_without_override() {
        let g = XorGame::random(5, &mut ChaCha8Rng::seed_from_u64(3));
        let cfg = OptimizerConfig::default();
        assert!(matches!(
            compute_qf_prime(&g, &cfg),
            Err(Error::SizeLimit(_))
        ));
    }

    #[test]
    fn modulus_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..40 {
            let n = rng.gen_range(1..=3);
            let g = XorGame::random(n, &mut rng);
            let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-PI..PI)).collect();
            let (_, grad, hess) = modulus_sq_with_derivs(&g, &theta);
            let h = 1e-5;
            for k in 0..n {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] += h;
                dn[k] -= h;
                let (vu, gu, _) = modulus_sq_with_derivs(&g, &up);
                let (vd, gd, _) = modulus_sq_with_derivs(&g, &dn);
                assert!((grad[k] - (vu - vd) / (2.0 * h)).abs() < 1e-6);
                for l in 0..n {
                    assert!((hess[(l, k)] - (gu[l] - gd[l]) / (2.0 * h)).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn oracle_agreement_for_random_games() {
        // Newton-refined oracle argmax agrees with the multi-start result.
        let cfg = OptimizerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..8 {
            let n = rng.gen_range(2..=3);
            let g = XorGame::random(n, &mut rng);
            let set = find_global_maxima(&g, &cfg).unwrap();
            let points = if n == 2 { 400 } else { 60 };
            let (_, arg) = grid_oracle_qf(&g, points).unwrap();
            let refined = refine_maximum(&g, &arg, &cfg).unwrap();
            assert!(
                (refined.value - set.q_f).abs() <= 1e-6,
                "refined {} vs q_f {}",
                refined.value,
                set.q_f
            );
        }
    }

    #[test]
    fn transform_preserves_qf() {
        let cfg = OptimizerConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..6 {
            let g = XorGame::random(2, &mut rng);
            let b0 = rng.gen_bool(0.5);
            let b: Vec<bool> = (0..2).map(|_| rng.gen_bool(0.5)).collect();
            let t = crate::game::transform_game(&g, b0, &b).unwrap();
            let qa = find_global_maxima(&g, &cfg).unwrap().q_f;
            let qb = find_global_maxima(&t, &cfg).unwrap().q_f;
            assert!((qa - qb).abs() < 1e-8);
        }
    }
}
