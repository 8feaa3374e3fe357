//! Empirical verification of the square-root robustness law.
//!
//! For a game that passes the robust self-test criterion, every strategy
//! scoring `q_f - eps` must lie within `C sqrt(eps)` of the optimal pair for
//! some constant `C`. The constant is not constructive, so this module
//! estimates it as an envelope over randomized near-optimal strategies of a
//! chosen class and fits the scaling exponent on a log-log grid; a slope
//! near 1/2 and a stable envelope constant are the observable content of
//! the law.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::game::{eval_z, TorusPoint, XorGame};
use crate::jordan::{canonical_score, nearest_ideal_product, CanonicalStrategy};
use crate::linalg::{symmetric_eigen, CVec, C64, RMat, RVec};
use crate::optimizer::{MaximaSet, OptimizerConfig};
use crate::strategy::{
    antidiag, apply_local_operators, canonicalize_qubit_strategy, distance_to_optimal,
    make_t_strategy, perturb_t, random_unitary_2x2, score, sigma_x, QubitStrategy,
};
use crate::verdict::classify_full;

/// Strategy classes for the robustness experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyClass {
    /// The optimal family with jittered angles.
    T,
    /// Canonical-form qubit strategies: jittered angles plus a state kick.
    S,
    /// Class S dressed with random local unitaries.
    Qubit,
    /// Higher-dimensional canonical strategies with two blocks per player.
    Canonical,
}

impl std::str::FromStr for StrategyClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t" => Ok(Self::T),
            "s" => Ok(Self::S),
            "qubit" => Ok(Self::Qubit),
            "canonical" => Ok(Self::Canonical),
            other => Err(Error::InvalidInput(format!(
                "unknown strategy class '{other}' (expected t, s, qubit, canonical)"
            ))),
        }
    }
}

impl std::fmt::Display for StrategyClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = match self {
            Self::T => "t",
            Self::S => "s",
            Self::Qubit => "qubit",
            Self::Canonical => "canonical",
        };
        write!(f, "{tag}")
    }
}

/// Outcome of a robustness experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RobustnessCertificate {
    pub game_id: String,
    pub q_f: f64,
    pub q_f_prime: Option<f64>,
    pub k2: Option<f64>,
    pub strategy_class: StrategyClass,
    pub seed: u64,
    /// `(epsilon, distance)` pairs, ordered by target then sample index.
    pub samples: Vec<(f64, f64)>,
    /// Envelope constant `max distance / sqrt(epsilon)`.
    pub fitted_c: f64,
    /// Log-log envelope slope over the epsilon bins; absent with fewer than
    /// three populated bins.
    pub fitted_slope: Option<f64>,
    /// `max (distance - fitted_c sqrt(eps))`; nonpositive by construction.
    pub max_violation: f64,
    pub warnings: Vec<String>,
}

impl RobustnessCertificate {
    /// Plot-ready CSV with the envelope bound column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,distance,bound_C_sqrt_eps\n");
        for (eps, dist) in &self.samples {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e}\n",
                eps,
                dist,
                self.fitted_c * eps.max(0.0).sqrt()
            ));
        }
        out
    }
}

/// Project a unit vector onto the top eigenspace of a real symmetric matrix.
///
/// Returns the normalized projection `z` (which satisfies `Q(z) = h_1`) and
/// the bound `sqrt(2 (Q(z) - Q(y)) / (h_1 - h_2))` on `||z - y||`, where
/// `h_1 > h_2` are the two largest distinct eigenvalues.
pub fn quadform_project(h: &RMat, y: &RVec) -> Result<(RVec, f64)> {
    let m = h.nrows();
    if y.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: y.len(),
            context: "vector length must match the matrix",
        });
    }
    if (y.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::Validation("y must be a unit vector".into()));
    }
    let (vals, vecs) = symmetric_eigen(h);
    let h1 = vals[m - 1];
    let scale = vals.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
    let top_tol = 1e-10 * scale;
    // The next distinct eigenvalue below the top one.
    let mut h2 = None;
    for i in (0..m).rev() {
        if h1 - vals[i] > top_tol {
            h2 = Some(vals[i]);
            break;
        }
    }
    let h2 =
        h2.ok_or_else(|| Error::Degenerate("matrix has a single distinct eigenvalue".into()))?;
    if h1 - h2 <= 1e-10 {
        return Err(Error::Degenerate(
            "top eigenvalue gap below tolerance".into(),
        ));
    }

    let mut z = RVec::zeros(m);
    for i in 0..m {
        if h1 - vals[i] <= top_tol {
            let coord = vecs.column(i).dot(y);
            z += vecs.column(i) * coord;
        }
    }
    let norm = z.norm();
    if norm < 1e-12 {
        return Err(Error::Degenerate(
            "input is orthogonal to the top eigenspace".into(),
        ));
    }
    z = z.unscale(norm);

    let q = |x: &RVec| (x.transpose() * h * x)[(0, 0)];
    let bound = (2.0 * (q(&z) - q(y)).max(0.0) / (h1 - h2)).sqrt();
    Ok((z, bound))
}

/// Sample the witness's quadrant box and estimate the constant in the
/// near-maximum inequality
/// `||y - z||_inf <= C_3 sqrt(Z(z) - Z(y))` (the value at the maximum minus
/// the value at the sample, which is the nonnegative orientation of the
/// radicand). Returns the envelope estimate and the number of violations of
/// `Z(y) <= q_f + 1e-10`.
pub fn near_maximum_check(
    game: &XorGame,
    maxima: &MaximaSet,
    samples: usize,
    seed: u64,
) -> Result<(f64, usize)> {
    if maxima.degenerate || maxima.maxima.is_empty() {
        return Err(Error::Precondition(
            "near-maximum check needs an isolated witness maximum".into(),
        ));
    }
    let witness = &maxima.maxima[0];
    let alpha = &witness.point;
    let n = game.players();

    // Box with the witness as its unique global maximum: sign-respecting
    // intervals on the player angles, a half-width pi/2 window on t_0.
    let mut lo = vec![alpha.angles[0] - PI / 2.0];
    let mut hi = vec![alpha.angles[0] + PI / 2.0];
    for j in 1..=n {
        if alpha.angles[j] >= 0.0 {
            lo.push(0.0);
            hi.push(PI);
        } else {
            lo.push(-PI);
            hi.push(0.0);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c3: f64 = 0.0;
    let mut violations = 0usize;
    for _ in 0..samples {
        let y = TorusPoint::new((0..=n).map(|a| rng.gen_range(lo[a]..hi[a])).collect());
        let zy = eval_z(game, &y)?;
        if zy > witness.value + 1e-10 {
            violations += 1;
            continue;
        }
        let dist = y.wrapped_inf_dist(alpha);
        if dist <= 1e-12 {
            // Exact maximum hits give a 0/0 ratio and are excluded.
            continue;
        }
        let gap = (witness.value - zy).max(0.0);
        if gap == 0.0 {
            violations += 1;
            continue;
        }
        c3 = c3.max(dist / gap.sqrt());
    }
    Ok((c3, violations))
}

/// Envelope fit: `C = max distance / sqrt(eps)` and the least-squares slope
/// of `log(per-bin max distance)` against `log(eps)` over logarithmic bins
/// (at least three populated bins, otherwise the slope is absent).
pub fn fit_envelope(samples: &[(f64, f64)]) -> Result<(f64, Option<f64>)> {
    let positive: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|(eps, _)| *eps > 1e-15)
        .collect();
    if positive.len() < 2 {
        return Err(Error::Precondition(
            "need at least two samples with positive epsilon".into(),
        ));
    }
    let c = positive
        .iter()
        .map(|(eps, d)| d / eps.sqrt())
        .fold(0.0f64, f64::max);

    let log_min = positive
        .iter()
        .map(|(e, _)| e.ln())
        .fold(f64::INFINITY, f64::min);
    let log_max = positive
        .iter()
        .map(|(e, _)| e.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    if log_max - log_min < 0.5 {
        return Ok((c, None));
    }
    let nbins = 8usize;
    let width = (log_max - log_min) / nbins as f64;
    let mut bins: Vec<(f64, f64, usize)> = vec![(0.0, f64::NEG_INFINITY, 0); nbins];
    for (eps, d) in &positive {
        let mut b = ((eps.ln() - log_min) / width) as usize;
        if b >= nbins {
            b = nbins - 1;
        }
        bins[b].0 += eps.ln();
        bins[b].1 = bins[b].1.max(*d);
        bins[b].2 += 1;
    }
    let points: Vec<(f64, f64)> = bins
        .iter()
        .filter(|(_, env, count)| *count > 0 && *env > 0.0)
        .map(|(logsum, env, count)| (logsum / *count as f64, env.ln()))
        .collect();
    if points.len() < 3 {
        return Ok((c, None));
    }
    let nn = points.len() as f64;
    let sx: f64 = points.iter().map(|(x, _)| x).sum();
    let sy: f64 = points.iter().map(|(_, y)| y).sum();
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let slope = (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
    Ok((c, Some(slope)))
}

/// Precomputed per-game sampling data.
struct BaseData {
    q_f: f64,
    witness: TorusPoint,
    /// Canonical angles of the witness strategy, all in [0, pi].
    thetas: Vec<f64>,
    /// Canonical witness state (nonnegative leading amplitude).
    ideal_state: CVec,
}

/// One strategy sample: the realized score gap and the distance to the
/// optimal orbit.
fn draw_sample(
    game: &XorGame,
    class: StrategyClass,
    maxima: &MaximaSet,
    base: &BaseData,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64)> {
    match class {
        StrategyClass::T => {
            let s = perturb_t(&base.witness, sigma, false, rng);
            let eps = base.q_f - score(game, &s)?;
            let dist = distance_to_optimal(game, &s, maxima)?;
            Ok((eps, dist))
        }
        StrategyClass::S | StrategyClass::Qubit => {
            let s = sample_sclass(base, sigma, rng);
            let s = if class == StrategyClass::Qubit {
                dress_with_local_unitaries(&s, rng)
            } else {
                s
            };
            let eps = base.q_f - score(game, &s)?;
            let dist = distance_to_optimal(game, &s, maxima)?;
            Ok((eps, dist))
        }
        StrategyClass::Canonical => {
            let cs = sample_canonical(base, sigma, rng);
            let eps = base.q_f - canonical_score(game, &cs)?;
            let (_, dist) = nearest_ideal_product(game, &cs, maxima)?;
            Ok((eps, dist))
        }
    }
}

/// A canonical-class qubit strategy near the witness: jittered angles and a
/// Gaussian tangent kick on the state.
fn sample_sclass(base: &BaseData, sigma: f64, rng: &mut ChaCha8Rng) -> QubitStrategy {
    let normal = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    let thetas: Vec<f64> = base
        .thetas
        .iter()
        .map(|&t| (t + normal.sample(rng)).clamp(0.0, PI))
        .collect();
    let dim = base.ideal_state.len();
    let unit = Normal::new(0.0, 1.0).unwrap();
    let mut kick = CVec::from_iterator(
        dim,
        (0..dim).map(|_| C64::new(unit.sample(rng), unit.sample(rng))),
    );
    let overlap = base.ideal_state.dotc(&kick);
    kick -= base.ideal_state.clone() * overlap;
    let knorm = kick.norm();
    let state = if knorm > 1e-12 {
        let s = &base.ideal_state + kick.unscale(knorm).scale(sigma);
        s.clone().unscale(s.norm())
    } else {
        base.ideal_state.clone()
    };
    let measurements = thetas.iter().map(|&t| [sigma_x(), antidiag(t)]).collect();
    QubitStrategy::new(state, measurements).expect("sampled strategy is valid")
}

fn dress_with_local_unitaries(s: &QubitStrategy, rng: &mut ChaCha8Rng) -> QubitStrategy {
    let us: Vec<_> = (0..s.players()).map(|_| random_unitary_2x2(rng)).collect();
    let state = apply_local_operators(s.state(), &us);
    let measurements = s
        .measurements()
        .iter()
        .zip(&us)
        .map(|(pair, u)| {
            let conj = |m: &crate::strategy::Mat2| {
                let raw = u * m * u.adjoint();
                // Symmetrize away rounding so the validator is happy.
                (raw + raw.adjoint()).map(|c: C64| c * C64::new(0.5, 0.0))
            };
            [conj(&pair[0]), conj(&pair[1])]
        })
        .collect();
    let norm = state.norm();
    QubitStrategy::new(state.unscale(norm), measurements).expect("dressed strategy is valid")
}

/// A canonical strategy with two blocks per player: each block angle is a
/// jittered copy of the witness angle, each component state is a kicked
/// copy of the ideal state, and the block tuples carry random complex
/// weights.
fn sample_canonical(base: &BaseData, sigma: f64, rng: &mut ChaCha8Rng) -> CanonicalStrategy {
    let n = base.thetas.len();
    let normal = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    let unit = Normal::new(0.0, 1.0).unwrap();
    let m = 2usize;
    let angles: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..m)
                .map(|_| (base.thetas[k] + normal.sample(rng)).clamp(0.0, PI))
                .collect()
        })
        .collect();

    let tuple_total = m.pow(n as u32);
    let qdim = 1usize << n;
    let mut weights = CVec::from_iterator(
        tuple_total,
        (0..tuple_total).map(|_| C64::new(unit.sample(rng), unit.sample(rng))),
    );
    let wnorm = weights.norm();
    weights = weights.unscale(wnorm);

    let dims: Vec<usize> = vec![2 * m; n];
    let mut strides = vec![1usize; n];
    for k in (0..n.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let total: usize = dims.iter().product();
    let mut state = CVec::zeros(total);
    for flat in 0..tuple_total {
        // Kicked copy of the ideal qubit state for this tuple.
        let mut kick = CVec::from_iterator(
            qdim,
            (0..qdim).map(|_| C64::new(unit.sample(rng), unit.sample(rng))),
        );
        let overlap = base.ideal_state.dotc(&kick);
        kick -= base.ideal_state.clone() * overlap;
        let knorm = kick.norm();
        let lambda = if sigma > 0.0 && knorm > 1e-12 {
            let s = &base.ideal_state + kick.unscale(knorm).scale(sigma);
            s.clone().unscale(s.norm())
        } else {
            base.ideal_state.clone()
        };
        let mut rem = flat;
        let mut block_idx = vec![0usize; n];
        for k in (0..n).rev() {
            block_idx[k] = rem % m;
            rem /= m;
        }
        for q in 0..qdim {
            let mut idx = 0usize;
            for k in 0..n {
                let qk = (q >> (n - 1 - k)) & 1;
                idx += (qk * m + block_idx[k]) * strides[k];
            }
            state[idx] += weights[flat] * lambda[q];
        }
    }
    let norm = state.norm();
    CanonicalStrategy::new(angles, state.unscale(norm)).expect("sampled canonical strategy")
}

/// Run the robustness experiment for one game and strategy class.
///
/// The game must pass the robust verdict; for each epsilon target the
/// sampler adapts the perturbation magnitude until the realized score gap
/// lands within 20% of the target, and records the distance to the optimal
/// orbit. Deterministic for a fixed seed.
pub fn run_robustness_experiment(
    game: &XorGame,
    class: StrategyClass,
    eps_grid: &[f64],
    samples_per_eps: usize,
    seed: u64,
    config: &OptimizerConfig,
) -> Result<RobustnessCertificate> {
    let cls = classify_full(game, config)?;
    run_robustness_experiment_classified(game, &cls, class, eps_grid, samples_per_eps, seed)
}

/// Variant of [`run_robustness_experiment`] for callers that already hold
/// the classification.
pub fn run_robustness_experiment_classified(
    game: &XorGame,
    cls: &crate::verdict::Classification,
    class: StrategyClass,
    eps_grid: &[f64],
    samples_per_eps: usize,
    seed: u64,
) -> Result<RobustnessCertificate> {
    if !cls.verdict.is_robust_self_test {
        return Err(Error::Precondition(
            "robustness experiments require a robust self-test verdict".into(),
        ));
    }
    let maxima = &cls.maxima;
    let witness = maxima.maxima[cls.verdict.witness_index.unwrap()]
        .point
        .clone();
    let canon = canonicalize_qubit_strategy(&make_t_strategy(&witness))?;
    let base = BaseData {
        q_f: cls.verdict.q_f,
        witness: witness.clone(),
        thetas: canon.sclass.thetas().to_vec(),
        ideal_state: canon.sclass.strategy().state().clone(),
    };

    // Scale sigma guesses by the witness curvature.
    let curvature = maxima.maxima[0].max_abs_hessian_eigenvalue().max(1e-6);
    let mut warnings = cls.verdict.warnings.clone();
    let attempts_per_sample = (100_000 / samples_per_eps.max(1)).max(50);

    let mut samples: Vec<(f64, f64)> = Vec::new();
    for (eps_idx, &target) in eps_grid.iter().enumerate() {
        if target <= 0.0 {
            warnings.push(format!("skipping nonpositive epsilon target {target}"));
            continue;
        }
        let drawn: Vec<Option<(f64, f64)>> = (0..samples_per_eps)
            .into_par_iter()
            .map(|sample_idx| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(((eps_idx as u64) << 32) | sample_idx as u64);
                let mut sigma = (2.0 * target / curvature).sqrt();
                for _ in 0..attempts_per_sample {
                    let (eps, dist) =
                        draw_sample(game, class, maxima, &base, sigma, &mut rng).ok()?;
                    if eps >= 0.8 * target && eps <= 1.2 * target {
                        return Some((eps, dist));
                    }
                    if eps > 1.2 * target {
                        sigma *= 0.8;
                    } else {
                        sigma *= 1.25;
                    }
                    sigma = sigma.clamp(1e-12, 2.0);
                }
                None
            })
            .collect();
        let accepted: Vec<(f64, f64)> = drawn.iter().flatten().copied().collect();
        if accepted.is_empty() {
            warnings.push(format!(
                "epsilon target {target} skipped: rejection sampling failed"
            ));
            continue;
        }
        samples.extend(accepted);
    }

    for (eps, _) in &samples {
        if *eps < -1e-10 {
            return Err(Error::Validation(format!(
                "sampled score exceeded q_f by {:.3e}",
                -eps
            )));
        }
    }

    let (fitted_c, fitted_slope) = fit_envelope(&samples)?;
    let max_violation = samples
        .iter()
        .filter(|(eps, _)| *eps > 1e-15)
        .map(|(eps, d)| d - fitted_c * eps.sqrt())
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(RobustnessCertificate {
        game_id: format!("{:?}", game.table()),
        q_f: cls.verdict.q_f,
        q_f_prime: cls.verdict.q_f_prime,
        k2: cls.verdict.k2,
        strategy_class: class,
        seed,
        samples,
        fitted_c,
        fitted_slope,
        max_violation,
        warnings,
    })
}
