//! Qubit strategies for XOR games: construction, scoring, perturbation, and
//! canonicalization into the class of strategies with antidiagonal
//! measurements and nonnegative leading amplitude.
//!
//! The central family is `T(t_0, ..., t_n)`: the state
//! `(|0...0> + e^{i t_0} |1...1>) / sqrt(2)` with per-player measurements
//! `M^(0) = antidiag(1, 1)` and `M^(1) = antidiag(e^{i t_j}, e^{-i t_j})`.
//! Its score at a game `f` equals `Z_f(t_0, ..., t_n)`.

use nalgebra::Matrix2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{eval_p, eval_z, TorusPoint, XorGame};
use crate::linalg::{hermitian_eigen, CMat, CVec, C64};
use crate::optimizer::MaximaSet;

pub type Mat2 = Matrix2<Complex64>;

const HERMITIAN_TOL: f64 = 1e-12;
const INVOLUTION_TOL: f64 = 1e-10;
const STATE_NORM_TOL: f64 = 1e-12;

pub fn sigma_x() -> Mat2 {
    Mat2::new(
        C64::new(0.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
    )
}

/// The antidiagonal involution `[[0, e^{i t}], [e^{-i t}, 0]]`.
pub fn antidiag(theta: f64) -> Mat2 {
    Mat2::new(
        C64::new(0.0, 0.0),
        C64::from_polar(1.0, theta),
        C64::from_polar(1.0, -theta),
        C64::new(0.0, 0.0),
    )
}

fn mat2_hermiticity_defect(m: &Mat2) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn mat2_involution_defect(m: &Mat2) -> f64 {
    let sq = m * m;
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let t = if i == j {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            };
            worst = worst.max((sq[(i, j)] - t).norm());
        }
    }
    worst
}

/// Spectral norm of a 2x2 matrix.
pub fn mat2_opnorm(m: &Mat2) -> f64 {
    let d = CMat::from_fn(2, 2, |i, j| m[(i, j)]);
    crate::linalg::opnorm(&d)
}

/// Whether a 2x2 operator is within `tol` of a scalar multiple of the
/// identity.
fn is_scalar(m: &Mat2, tol: f64) -> bool {
    let s = (m[(0, 0)] + m[(1, 1)]) * C64::new(0.5, 0.0);
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let t = if i == j { s } else { C64::new(0.0, 0.0) };
            worst = worst.max((m[(i, j)] - t).norm());
        }
    }
    worst <= tol
}

/// An `n`-qubit strategy: a unit state in `(C^2)^{tensor n}` and one pair of
/// Hermitian involutions per player.
#[derive(Debug, Clone)]
pub struct QubitStrategy {
    state: CVec,
    measurements: Vec<[Mat2; 2]>,
}

impl QubitStrategy {
    pub fn new(state: CVec, measurements: Vec<[Mat2; 2]>) -> Result<Self> {
        let n = measurements.len();
        if n == 0 || state.len() != 1 << n {
            return Err(Error::DimensionMismatch {
                expected: 1 << n,
                got: state.len(),
                context: "state dimension must be 2^players",
            });
        }
        if (state.norm() - 1.0).abs() > STATE_NORM_TOL {
            return Err(Error::Validation(format!(
                "state norm {} is not 1",
                state.norm()
            )));
        }
        for (j, pair) in measurements.iter().enumerate() {
            for m in pair {
                if mat2_hermiticity_defect(m) > HERMITIAN_TOL {
                    return Err(Error::Validation(format!(
                        "measurement of player {j} is not Hermitian"
                    )));
                }
                if mat2_involution_defect(m) > INVOLUTION_TOL {
                    return Err(Error::Validation(format!(
                        "measurement of player {j} does not square to identity"
                    )));
                }
            }
        }
        Ok(Self {
            state,
            measurements,
        })
    }

    pub fn players(&self) -> usize {
        self.measurements.len()
    }

    pub fn state(&self) -> &CVec {
        &self.state
    }

    pub fn measurements(&self) -> &[[Mat2; 2]] {
        &self.measurements
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&StrategyFile::from(self)).expect("strategy serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: StrategyFile = serde_json::from_str(text)?;
        raw.build()
    }
}

/// JSON schema: state as `[re, im]` pairs, measurements as row-major 2x2
/// matrices of `[re, im]` pairs.
#[derive(Serialize, Deserialize)]
struct StrategyFile {
    state: Vec<[f64; 2]>,
    measurements: Vec<[Vec<[f64; 2]>; 2]>,
}

impl From<&QubitStrategy> for StrategyFile {
    fn from(s: &QubitStrategy) -> Self {
        let state = s.state.iter().map(|c| [c.re, c.im]).collect();
        let measurements = s
            .measurements
            .iter()
            .map(|pair| {
                let dump = |m: &Mat2| -> Vec<[f64; 2]> {
                    [(0, 0), (0, 1), (1, 0), (1, 1)]
                        .iter()
                        .map(|&(i, j)| [m[(i, j)].re, m[(i, j)].im])
                        .collect()
                };
                [dump(&pair[0]), dump(&pair[1])]
            })
            .collect();
        Self {
            state,
            measurements,
        }
    }
}

impl StrategyFile {
    fn build(&self) -> Result<QubitStrategy> {
        let state = CVec::from_iterator(
            self.state.len(),
            self.state.iter().map(|[re, im]| C64::new(*re, *im)),
        );
        let measurements = self
            .measurements
            .iter()
            .map(|pair| {
                let load = |flat: &Vec<[f64; 2]>| -> Result<Mat2> {
                    if flat.len() != 4 {
                        return Err(Error::InvalidInput(
                            "measurement matrix must have 4 entries".into(),
                        ));
                    }
                    Ok(Mat2::new(
                        C64::new(flat[0][0], flat[0][1]),
                        C64::new(flat[1][0], flat[1][1]),
                        C64::new(flat[2][0], flat[2][1]),
                        C64::new(flat[3][0], flat[3][1]),
                    ))
                };
                Ok([load(&pair[0])?, load(&pair[1])?])
            })
            .collect::<Result<Vec<_>>>()?;
        QubitStrategy::new(state, measurements)
    }
}

/// A strategy in canonical class form: every `M^(0)` is `antidiag(1,1)`,
/// every `M^(1)` is `antidiag(e^{i theta_j}, e^{-i theta_j})` with
/// `theta_j` in `[0, pi]`, and the leading amplitude is nonnegative.
#[derive(Debug, Clone)]
pub struct SClassStrategy {
    strategy: QubitStrategy,
    thetas: Vec<f64>,
    /// Players whose original measurement pair contained a scalar operator;
    /// for those the canonical measurement form is a convention, not a
    /// unitary conjugation, and scores are not preserved.
    pub scalar_players: Vec<usize>,
}

impl SClassStrategy {
    /// Wrap an existing canonical-form strategy, validating the shape.
    pub fn new(strategy: QubitStrategy, thetas: Vec<f64>) -> Result<Self> {
        let n = strategy.players();
        if thetas.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: thetas.len(),
                context: "one angle per player",
            });
        }
        for (j, &theta) in thetas.iter().enumerate() {
            if !(0.0..=std::f64::consts::PI).contains(&theta) {
                return Err(Error::Validation(format!(
                    "theta_{j} = {theta} outside [0, pi]"
                )));
            }
            let pair = &strategy.measurements[j];
            if mat2_opnorm(&(pair[0] - sigma_x())) > 1e-10
                || mat2_opnorm(&(pair[1] - antidiag(theta))) > 1e-10
            {
                return Err(Error::Validation(format!(
                    "player {j} measurements are not in canonical form"
                )));
            }
        }
        if strategy.state[0].re < -1e-12 || strategy.state[0].im.abs() > 1e-10 {
            return Err(Error::Validation(
                "leading amplitude must be nonnegative real".into(),
            ));
        }
        Ok(Self {
            strategy,
            thetas,
            scalar_players: Vec::new(),
        })
    }

    pub fn strategy(&self) -> &QubitStrategy {
        &self.strategy
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    /// Polar amplitude data `(r_i, t_i)` with `r_i >= 0`, `t_i` in
    /// `(-pi, pi]`, and `t_i = 0` where `r_i` vanishes.
    pub fn polar(&self) -> Vec<(f64, f64)> {
        self.strategy
            .state
            .iter()
            .map(|c| {
                let r = c.norm();
                let t = if r > 1e-15 { c.arg() } else { 0.0 };
                (r, t)
            })
            .collect()
    }
}

/// The strategy `T(t_0, ..., t_n)`.
pub fn make_t_strategy(angles: &TorusPoint) -> QubitStrategy {
    let n = angles.len() - 1;
    assert!(n >= 1, "T strategy needs at least one player");
    let dim = 1usize << n;
    let mut state = CVec::zeros(dim);
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    state[0] = C64::new(inv_sqrt2, 0.0);
    state[dim - 1] = C64::from_polar(inv_sqrt2, angles.angles[0]);
    let measurements = (0..n)
        .map(|j| [sigma_x(), antidiag(angles.angles[j + 1])])
        .collect();
    QubitStrategy::new(state, measurements).expect("T strategy is valid by construction")
}

/// The tensor game operator
/// `M = sum_i f(i) M_1^{(i_1)} (x) ... (x) M_n^{(i_n)}`.
pub fn build_game_operator(game: &XorGame, strategy: &QubitStrategy) -> Result<CMat> {
    let n = game.players();
    if strategy.players() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: strategy.players(),
            context: "strategy player count must match game",
        });
    }
    let dim = 1usize << n;
    let mut acc = CMat::zeros(dim, dim);
    for (i, &f) in game.table().iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let mut term =
            CMat::from_fn(2, 2, |r, c| strategy.measurements[0][game.bit(i, 0)][(r, c)]);
        for k in 1..n {
            let m = &strategy.measurements[k][game.bit(i, k)];
            let small = CMat::from_fn(2, 2, |r, c| m[(r, c)]);
            term = term.kronecker(&small);
        }
        acc += term.scale(f);
    }
    Ok(acc)
}

/// The score `<psi| M |psi>`; the imaginary part must vanish to 1e-10.
pub fn score(game: &XorGame, strategy: &QubitStrategy) -> Result<f64> {
    let m = build_game_operator(game, strategy)?;
    let val = strategy.state.dotc(&(&m * &strategy.state));
    if val.im.abs() > 1e-10 {
        return Err(Error::Validation(format!(
            "score has imaginary part {}",
            val.im
        )));
    }
    Ok(val.re)
}

/// The reverse-diagonal entries of the game operator for canonical
/// measurements at angles `t_1..t_n`: the entry indexed by `(a_1..a_n)` is
/// `P_f(e^{i (-1)^{a_1} t_1}, ..., e^{i (-1)^{a_n} t_n})`.
pub fn reverse_diagonal_entries(game: &XorGame, thetas: &[f64]) -> Result<Vec<C64>> {
    let n = game.players();
    if thetas.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: thetas.len(),
            context: "one angle per player",
        });
    }
    let mut out = Vec::with_capacity(1 << n);
    for a in 0..(1usize << n) {
        let lambdas: Vec<C64> = (0..n)
            .map(|k| {
                let sign = if (a >> (n - 1 - k)) & 1 == 1 {
                    -1.0
                } else {
                    1.0
                };
                C64::from_polar(1.0, sign * thetas[k])
            })
            .collect();
        out.push(eval_p(game, &lambdas)?);
    }
    Ok(out)
}

/// The smallest `delta` such that the two strategies are `delta`-close:
/// `max(||psi_1 - psi_2||, max_{j,i} ||M_j^{(i)} - N_j^{(i)}||)` with the
/// spectral norm on operators.
pub fn strategy_distance(s1: &QubitStrategy, s2: &QubitStrategy) -> Result<f64> {
    if s1.players() != s2.players() {
        return Err(Error::DimensionMismatch {
            expected: s1.players(),
            got: s2.players(),
            context: "strategies must have the same player count",
        });
    }
    let mut d = (&s1.state - &s2.state).norm();
    for (p1, p2) in s1.measurements.iter().zip(&s2.measurements) {
        for i in 0..2 {
            d = d.max(mat2_opnorm(&(p1[i] - p2[i])));
        }
    }
    Ok(d)
}

/// Apply one 2x2 operator per player to a `2^n`-dimensional state.
pub fn apply_local_operators(state: &CVec, ops: &[Mat2]) -> CVec {
    let n = ops.len();
    let dim = 1usize << n;
    assert_eq!(state.len(), dim);
    let mut cur = state.clone();
    for (k, u) in ops.iter().enumerate() {
        let pos = n - 1 - k; // player k owns the most significant bit
        let mask = 1usize << pos;
        let mut next = CVec::zeros(dim);
        for i in 0..dim {
            if i & mask != 0 {
                continue;
            }
            let j = i | mask;
            next[i] = u[(0, 0)] * cur[i] + u[(0, 1)] * cur[j];
            next[j] = u[(1, 0)] * cur[i] + u[(1, 1)] * cur[j];
        }
        cur = next;
    }
    cur
}

/// Multiply a vector's phase so the largest-modulus component is real
/// positive.
fn phase_fix(v: &mut CVec) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].norm() > v[best].norm() {
            best = i;
        }
    }
    let c = v[best];
    if c.norm() > 1e-15 {
        let ph = c.conj() / c.norm();
        for x in v.iter_mut() {
            *x *= ph;
        }
    }
}

/// Per-player canonicalizing unitary and angle for a pair of 2x2 Hermitian
/// involutions: `U M0 U^* = antidiag(1,1)` and
/// `U M1 U^* = antidiag(e^{i theta}, e^{-i theta})` with `theta` in `[0, pi]`.
///
/// Writing the pair in the eigenbasis `u+, u-` of `M0`, the off-diagonal of
/// `M1` is `b = <u+, M1 u->`; the basis `v = (u+ + z u-)/sqrt(2)`,
/// `w = M0 v` with `z = -i conj(b)/|b|` makes both operators antidiagonal
/// exactly (for `b = 0` the operators commute and `z = 1` works).
fn canonicalize_pair_2x2(m0: &Mat2, m1: &Mat2) -> Result<(Mat2, f64)> {
    if is_scalar(m0, 1e-10) || is_scalar(m1, 1e-10) {
        return Err(Error::Degenerate("scalar measurement operator".into()));
    }
    let d0 = CMat::from_fn(2, 2, |i, j| m0[(i, j)]);
    let (_, vecs) = hermitian_eigen(&d0);
    // Ascending eigenvalues: column 0 is the -1 eigenvector.
    let mut u_minus = CVec::from_iterator(2, vecs.column(0).iter().cloned());
    let mut u_plus = CVec::from_iterator(2, vecs.column(1).iter().cloned());
    phase_fix(&mut u_plus);
    phase_fix(&mut u_minus);

    let apply = |m: &Mat2, x: &CVec| -> CVec {
        CVec::from_vec(vec![
            m[(0, 0)] * x[0] + m[(0, 1)] * x[1],
            m[(1, 0)] * x[0] + m[(1, 1)] * x[1],
        ])
    };

    let b = u_plus.dotc(&apply(m1, &u_minus));
    let z = if b.norm() < 1e-13 {
        C64::new(1.0, 0.0)
    } else {
        C64::new(0.0, -1.0) * b.conj() / b.norm()
    };
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    let v = CVec::from_vec(vec![
        (u_plus[0] + z * u_minus[0]) * inv_sqrt2,
        (u_plus[1] + z * u_minus[1]) * inv_sqrt2,
    ]);
    let w = apply(m0, &v);

    // U has rows v*, w*: (U M U*)_{ab} = <basis_a, M basis_b>.
    let u = Mat2::new(v[0].conj(), v[1].conj(), w[0].conj(), w[1].conj());

    let phase = v.dotc(&apply(m1, &w));
    let theta = phase.arg().clamp(0.0, std::f64::consts::PI);
    Ok((u, theta))
}

/// Outcome of canonicalizing a qubit strategy: the canonical-class
/// representative, the per-player unitaries, and the global phase that was
/// applied to the state.
pub struct Canonicalized {
    pub sclass: SClassStrategy,
    pub unitaries: Vec<Mat2>,
    pub global_phase: C64,
}

/// Conjugate a qubit strategy by local unitaries into the canonical class:
/// antidiagonal measurements with angles in `[0, pi]` and nonnegative
/// leading amplitude. The score is preserved.
///
/// A player whose pair contains a (+/-)identity operator cannot be
/// conjugated to the antidiagonal form; such players keep an identity
/// unitary, receive the angle implied by the sign relation of the pair, and
/// are flagged in `scalar_players` (scores are then not comparable).
pub fn canonicalize_qubit_strategy(strategy: &QubitStrategy) -> Result<Canonicalized> {
    let n = strategy.players();
    let mut unitaries = Vec::with_capacity(n);
    let mut thetas = Vec::with_capacity(n);
    let mut scalar_players = Vec::new();

    for (j, pair) in strategy.measurements.iter().enumerate() {
        match canonicalize_pair_2x2(&pair[0], &pair[1]) {
            Ok((u, theta)) => {
                unitaries.push(u);
                thetas.push(theta);
            }
            Err(Error::Degenerate(_)) => {
                // Convention for scalar pairs: identity unitary; theta from
                // the sign relation of the two operators.
                let prod = pair[0] * pair[1];
                let trace_half = 0.5 * (prod[(0, 0)] + prod[(1, 1)]).re;
                let theta = trace_half.clamp(-1.0, 1.0).acos();
                unitaries.push(Mat2::identity());
                thetas.push(theta);
                scalar_players.push(j);
            }
            Err(e) => return Err(e),
        }
    }

    let mut state = apply_local_operators(&strategy.state, &unitaries);
    let leading = state[0];
    let global_phase = if leading.norm() > 1e-14 {
        leading.conj() / leading.norm()
    } else {
        C64::new(1.0, 0.0)
    };
    for x in state.iter_mut() {
        *x *= global_phase;
    }
    // Rounding can leave the norm 1 +/- a few eps after the unitaries.
    let norm = state.norm();
    if (norm - 1.0).abs() > 1e-13 {
        state = state.unscale(norm);
    }

    let measurements = thetas.iter().map(|&t| [sigma_x(), antidiag(t)]).collect();
    let canonical = QubitStrategy::new(state, measurements)?;
    let mut sclass = SClassStrategy::new(canonical, thetas)?;
    sclass.scalar_players = scalar_players;
    Ok(Canonicalized {
        sclass,
        unitaries,
        global_phase,
    })
}

/// The score decomposition of a canonical-class strategy: one term per index
/// `i` with `i_1 = 0`, carrying weight `2 r_i r_{1-i}` and value
/// `Z_f(t_{1-i} - t_i, (-1)^{i_1} t_1, ..., (-1)^{i_n} t_n)`. The weighted
/// sum equals the score and the weights sum to at most 1.
pub fn s_score_decomposition(game: &XorGame, s: &SClassStrategy) -> Result<Vec<(f64, f64)>> {
    let n = game.players();
    if s.strategy.players() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: s.strategy.players(),
            context: "strategy player count must match game",
        });
    }
    let polar = s.polar();
    let full = (1usize << n) - 1;
    let mut out = Vec::with_capacity(1 << (n - 1));
    for i in 0..(1usize << (n - 1)) {
        let comp = full ^ i;
        let (r_i, t_i) = polar[i];
        let (r_c, t_c) = polar[comp];
        let weight = 2.0 * r_i * r_c;
        let mut angles = vec![t_c - t_i];
        for k in 0..n {
            let sign = if game.bit(i, k) == 1 { -1.0 } else { 1.0 };
            angles.push(sign * s.thetas[k]);
        }
        let z = eval_z(game, &TorusPoint::new(angles))?;
        out.push((weight, z));
    }
    Ok(out)
}

/// A `T` strategy with Gaussian-perturbed angles and, optionally, a
/// normalized Gaussian tangent kick of magnitude `sigma` on the state.
pub fn perturb_t<R: Rng + ?Sized>(
    angles: &TorusPoint,
    sigma: f64,
    kick_state: bool,
    rng: &mut R,
) -> QubitStrategy {
    assert!(sigma >= 0.0);
    if sigma == 0.0 {
        return make_t_strategy(angles);
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    let jittered = TorusPoint::new(angles.angles.iter().map(|&a| a + normal.sample(rng)).collect());
    let base = make_t_strategy(&jittered);
    if !kick_state {
        return base;
    }
    let unit = Normal::new(0.0, 1.0).unwrap();
    let dim = base.state.len();
    let mut kick = CVec::from_iterator(
        dim,
        (0..dim).map(|_| C64::new(unit.sample(rng), unit.sample(rng))),
    );
    // Tangent component only.
    let overlap = base.state.dotc(&kick);
    kick -= base.state.clone() * overlap;
    let knorm = kick.norm();
    if knorm > 1e-12 {
        let state = &base.state + kick.unscale(knorm).scale(sigma);
        let state = state.clone().unscale(state.norm());
        return QubitStrategy::new(state, base.measurements.clone())
            .expect("perturbed state stays valid");
    }
    base
}

/// State distance minimized over a global phase. The minimizing phase
/// aligns the overlap to the positive real axis; the residual is computed
/// as an actual vector difference, which stays accurate near zero where
/// `sqrt(2 - 2|<a,b>|)` would cancel catastrophically.
fn state_distance_mod_phase(a: &CVec, b: &CVec) -> f64 {
    let overlap = a.dotc(b);
    if overlap.norm() < 1e-15 {
        return (&(a - b)).norm().min((a + b).norm());
    }
    let phase = overlap.conj() / overlap.norm();
    let aligned = b.map(|x| x * phase);
    (a - aligned).norm()
}

/// Distance from a strategy to the optimal pair `T(alpha), T(-alpha)`:
/// canonicalize both sides, take the measurement distance in spectral norm
/// and the state distance minimized over a global phase, and minimize over
/// the two equivalent maxima.
pub fn distance_to_optimal(
    game: &XorGame,
    strategy: &QubitStrategy,
    maxima: &MaximaSet,
) -> Result<f64> {
    let _ = game;
    if maxima.maxima.is_empty() {
        return Err(Error::Precondition("maxima set is empty".into()));
    }
    let canon = canonicalize_qubit_strategy(strategy)?;
    if !canon.sclass.scalar_players.is_empty() {
        return Err(Error::Degenerate(
            "strategy has scalar measurement operators".into(),
        ));
    }
    let witness = &maxima.maxima[0].point;
    let mut best = f64::INFINITY;
    for cand in [witness.clone(), witness.negated()] {
        let ideal = canonicalize_qubit_strategy(&make_t_strategy(&cand))?;
        let mut d =
            state_distance_mod_phase(&canon.sclass.strategy.state, &ideal.sclass.strategy.state);
        for (a, b) in canon.sclass.thetas.iter().zip(ideal.sclass.thetas.iter()) {
            // antidiag(a) - antidiag(b) has spectral norm |e^{ia} - e^{ib}|.
            let m_dist = (C64::from_polar(1.0, *a) - C64::from_polar(1.0, *b)).norm();
            d = d.max(m_dist);
        }
        best = best.min(d);
    }
    Ok(best)
}

/// Haar-like random 2x2 unitary: a random unit vector and its orthonormal
/// completion.
pub fn random_unitary_2x2<R: Rng + ?Sized>(rng: &mut R) -> Mat2 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut a = CVec::from_vec(vec![
        C64::new(normal.sample(rng), normal.sample(rng)),
        C64::new(normal.sample(rng), normal.sample(rng)),
    ]);
    let na = a.norm();
    a = a.unscale(na);
    let b = CVec::from_vec(vec![-a[1].conj(), a[0].conj()]);
    Mat2::new(a[0], b[0], a[1], b[1])
}

/// Random trace-zero Hermitian involution `V diag(1,-1) V^*`.
pub fn random_involution_2x2<R: Rng + ?Sized>(rng: &mut R) -> Mat2 {
    let v = random_unitary_2x2(rng);
    let d = Mat2::new(
        C64::new(1.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(0.0, 0.0),
        C64::new(-1.0, 0.0),
    );
    let m = v * d * v.adjoint();
    (m + m.adjoint()).map(|c| c * C64::new(0.5, 0.0))
}

/// Random qubit strategy: Gaussian unit state and independent random
/// involution pairs.
pub fn random_qubit_strategy<R: Rng + ?Sized>(n: usize, rng: &mut R) -> QubitStrategy {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let dim = 1usize << n;
    let mut state = CVec::from_iterator(
        dim,
        (0..dim).map(|_| C64::new(normal.sample(rng), normal.sample(rng))),
    );
    let norm = state.norm();
    state = state.unscale(norm);
    let measurements = (0..n)
        .map(|_| [random_involution_2x2(rng), random_involution_2x2(rng)])
        .collect();
    QubitStrategy::new(state, measurements).expect("random strategy is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{find_global_maxima, OptimizerConfig};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    const SQRT8: f64 = 2.8284271247461903;

    fn chsh_max() -> TorusPoint {
        TorusPoint::new(vec![-FRAC_PI_4, FRAC_PI_2, FRAC_PI_2])
    }

    #[test]
    fn t_strategy_scores_equal_z() {
        let g = XorGame::chsh();
        let t = make_t_strategy(&chsh_max());
        assert_relative_eq!(score(&g, &t).unwrap(), SQRT8, epsilon = 1e-12);
        assert_relative_eq!(
            score(&g, &make_t_strategy(&TorusPoint::new(vec![0.0; 3]))).unwrap(),
            2.0,
            epsilon = 1e-12
        );

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            use rand::Rng;
            let n = rng.gen_range(1..=4);
            let game = XorGame::random(n, &mut rng);
            let p = TorusPoint::new((0..=n).map(|_| rng.gen_range(-PI..PI)).collect());
            let s = score(&game, &make_t_strategy(&p)).unwrap();
            assert!((s - eval_z(&game, &p).unwrap()).abs() <= 1e-10);
        }
    }

    #[test]
    fn t_strategy_zero_angles() {
        let t = make_t_strategy(&TorusPoint::new(vec![0.0, 0.0, 0.0]));
        for pair in t.measurements() {
            assert!(mat2_opnorm(&(pair[0] - sigma_x())) < 1e-15);
            assert!(mat2_opnorm(&(pair[1] - sigma_x())) < 1e-15);
        }
    }

    #[test]
    fn game_operator_examples() {
        let g = XorGame::chsh();
        let t = make_t_strategy(&chsh_max());
        let m = build_game_operator(&g, &t).unwrap();
        assert!(crate::linalg::hermiticity_defect(&m) < 1e-10);
        assert_relative_eq!(opnorm_hermitian(&m), SQRT8, epsilon = 1e-10);

        let z = XorGame::all_zero(2);
        assert_eq!(build_game_operator(&z, &t).unwrap().norm(), 0.0);

        let single = XorGame::new(1, vec![1.0, 0.0]).unwrap();
        let s1 = make_t_strategy(&TorusPoint::new(vec![0.0, 0.3]));
        let m1 = build_game_operator(&single, &s1).unwrap();
        assert!((m1[(0, 1)] - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!((m1[(0, 0)]).norm() < 1e-15);
    }

    #[test]
    fn score_of_any_strategy_on_zero_game_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let s = random_qubit_strategy(2, &mut rng);
        assert_eq!(score(&XorGame::all_zero(2), &s).unwrap(), 0.0);
    }

    #[test]
    fn reverse_diagonal_entries_chsh() {
        let g = XorGame::chsh();
        let entries = reverse_diagonal_entries(&g, &[FRAC_PI_2, FRAC_PI_2]).unwrap();
        // Max modulus is the optimal score.
        let max_mod = entries.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert_relative_eq!(max_mod, SQRT8, epsilon = 1e-12);
        // Entry for a = (0,0) is P(i, i) = 2 + 2i.
        assert_relative_eq!(entries[0].re, 2.0, epsilon = 1e-12);
        assert_relative_eq!(entries[0].im, 2.0, epsilon = 1e-12);

        // All-zero angles collapse every entry to P(1, ..., 1).
        let flat = reverse_diagonal_entries(&g, &[0.0, 0.0]).unwrap();
        for e in &flat {
            assert!((e - flat[0]).norm() < 1e-15);
        }
    }

    #[test]
    fn operator_norm_formula_and_eigenvalue_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..25 {
            use rand::Rng;
            let n = rng.gen_range(1..=3);
            let game = XorGame::random(n, &mut rng);
            let thetas: Vec<f64> = (0..n).map(|_| rng.gen_range(-PI..PI)).collect();
            let mut angles = vec![0.0];
            angles.extend_from_slice(&thetas);
            let strat = make_t_strategy(&TorusPoint::new(angles));
            let op = build_game_operator(&game, &strat).unwrap();
            let entries = reverse_diagonal_entries(&game, &thetas).unwrap();

            let max_mod = entries.iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!((opnorm_hermitian(&op) - max_mod).abs() < 1e-10);

            // Eigenvalues are the +/- moduli over the conjugate entry pairs
            // (entries indexed by a and by its complement are conjugate, so
            // the half with a_1 = 0 enumerates the pairs).
            let (eigs, _) = hermitian_eigen(&op);
            let mut expected: Vec<f64> = Vec::new();
            for (a, e) in entries.iter().enumerate() {
                if a < (1 << (n - 1)) {
                    expected.push(e.norm());
                    expected.push(-e.norm());
                }
            }
            let mut got: Vec<f64> = eigs.iter().cloned().collect();
            expected.sort_by(|x, y| x.partial_cmp(y).unwrap());
            got.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for (x, y) in expected.iter().zip(&got) {
                assert!((x - y).abs() < 1e-9, "eig {x} vs {y}");
            }
        }
    }

    #[test]
    fn strategy_distance_examples() {
        let a = make_t_strategy(&chsh_max());
        assert_eq!(strategy_distance(&a, &a).unwrap(), 0.0);

        // Shift of t_0 moves only the state.
        let mut shifted = chsh_max();
        shifted.angles[0] += 0.01;
        let b = make_t_strategy(&shifted);
        let expected_state = (C64::from_polar(1.0, -FRAC_PI_4)
            - C64::from_polar(1.0, -FRAC_PI_4 + 0.01))
        .norm()
            / 2.0f64.sqrt();
        assert_relative_eq!(
            strategy_distance(&a, &b).unwrap(),
            expected_state,
            epsilon = 1e-12
        );

        // Shift of t_1 moves only player 1's second measurement.
        let h = 0.2;
        let mut shifted1 = chsh_max();
        shifted1.angles[1] += h;
        let c = make_t_strategy(&shifted1);
        assert_relative_eq!(
            strategy_distance(&a, &c).unwrap(),
            2.0 * (h / 2.0).sin().abs(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn canonicalize_is_identity_on_class_members() {
        let t = make_t_strategy(&TorusPoint::new(vec![0.7, 1.1, 2.3]));
        let canon = canonicalize_qubit_strategy(&t).unwrap();
        for u in &canon.unitaries {
            assert!(mat2_opnorm(&(u - Mat2::identity())) < 1e-12);
        }
        assert!((canon.global_phase - C64::new(1.0, 0.0)).norm() < 1e-12);
        assert_relative_eq!(canon.sclass.thetas()[0], 1.1, epsilon = 1e-12);
        assert_relative_eq!(canon.sclass.thetas()[1], 2.3, epsilon = 1e-12);
        assert!(
            (canon.sclass.strategy().state() - t.state()).norm() < 1e-12,
            "state must be unchanged"
        );
    }

    #[test]
    fn canonicalize_random_strategies_preserves_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..100 {
            use rand::Rng;
            let n = rng.gen_range(1..=3);
            let game = XorGame::random(n, &mut rng);
            let s = random_qubit_strategy(n, &mut rng);
            let canon = canonicalize_qubit_strategy(&s).unwrap();
            assert!(canon.sclass.scalar_players.is_empty());
            for &theta in canon.sclass.thetas() {
                assert!((0.0..=PI).contains(&theta));
            }
            let lead = canon.sclass.strategy().state()[0];
            assert!(lead.re >= -1e-12 && lead.im.abs() < 1e-10);
            let s1 = score(&game, &s).unwrap();
            let s2 = score(&game, canon.sclass.strategy()).unwrap();
            assert!(
                (s1 - s2).abs() < 1e-10,
                "trial {trial}: score changed {s1} -> {s2}"
            );
        }
    }

    #[test]
    fn canonicalize_flags_scalar_pairs() {
        let id = Mat2::identity();
        let state = CVec::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
        ]);
        let s = QubitStrategy::new(state, vec![[id, -id], [sigma_x(), antidiag(0.4)]]).unwrap();
        let canon = canonicalize_qubit_strategy(&s).unwrap();
        assert_eq!(canon.sclass.scalar_players, vec![0]);
        // Scalar pair with opposite signs maps to theta = pi.
        assert_relative_eq!(canon.sclass.thetas()[0], PI, epsilon = 1e-12);
    }

    #[test]
    fn score_decomposition_t_strategy() {
        let g = XorGame::chsh();
        let t = make_t_strategy(&chsh_max());
        let canon = canonicalize_qubit_strategy(&t).unwrap();
        let terms = s_score_decomposition(&g, &canon.sclass).unwrap();
        let nonzero: Vec<_> = terms.iter().filter(|(w, _)| *w > 1e-12).collect();
        assert_eq!(nonzero.len(), 1);
        assert_relative_eq!(nonzero[0].0, 1.0, epsilon = 1e-12);
        assert_relative_eq!(nonzero[0].1, SQRT8, epsilon = 1e-10);
    }

    #[test]
    fn score_decomposition_basis_state() {
        let g = XorGame::chsh();
        let mut state = CVec::zeros(4);
        state[0] = C64::new(1.0, 0.0);
        let s = QubitStrategy::new(state, vec![[sigma_x(), antidiag(0.3)]; 2]).unwrap();
        let sclass = SClassStrategy::new(s.clone(), vec![0.3, 0.3]).unwrap();
        let terms = s_score_decomposition(&g, &sclass).unwrap();
        assert!(terms.iter().all(|(w, _)| *w == 0.0));
        assert_eq!(score(&g, &s).unwrap(), 0.0);
    }

    #[test]
    fn score_decomposition_sums_to_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..60 {
            use rand::Rng;
            let n = rng.gen_range(1..=3);
            let game = XorGame::random(n, &mut rng);
            let s = random_qubit_strategy(n, &mut rng);
            let canon = canonicalize_qubit_strategy(&s).unwrap();
            let terms = s_score_decomposition(&game, &canon.sclass).unwrap();
            let total: f64 = terms.iter().map(|(w, z)| w * z).sum();
            let weight_sum: f64 = terms.iter().map(|(w, _)| w).sum();
            let direct = score(&game, canon.sclass.strategy()).unwrap();
            assert!((total - direct).abs() < 1e-10, "{total} vs {direct}");
            assert!(weight_sum <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn perturb_t_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let exact = perturb_t(&chsh_max(), 0.0, true, &mut rng);
        assert_eq!(
            strategy_distance(&exact, &make_t_strategy(&chsh_max())).unwrap(),
            0.0
        );

        // Determinism under a fixed seed.
        let a = perturb_t(&chsh_max(), 0.05, true, &mut ChaCha8Rng::seed_from_u64(9));
        let b = perturb_t(&chsh_max(), 0.05, true, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(strategy_distance(&a, &b).unwrap(), 0.0);

        // Second-order score drop: at sigma = 0.01 nearly all samples stay
        // above q_f - 10 sigma^2.
        let g = XorGame::chsh();
        let sigma = 0.01;
        let mut ok = 0;
        let samples = 1000;
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..samples {
            let s = perturb_t(&chsh_max(), sigma, false, &mut rng);
            if score(&g, &s).unwrap() >= SQRT8 - 10.0 * sigma * sigma {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.85 * samples as f64, "only {ok} in bound");
    }

    #[test]
    fn distance_to_optimal_vanishes_on_the_orbit() {
        let g = XorGame::chsh();
        let maxima = find_global_maxima(&g, &OptimizerConfig::default()).unwrap();
        let plus = make_t_strategy(&chsh_max());
        let minus = make_t_strategy(&chsh_max().negated());
        assert!(distance_to_optimal(&g, &plus, &maxima).unwrap() < 1e-10);
        assert!(distance_to_optimal(&g, &minus, &maxima).unwrap() < 1e-10);
    }

    #[test]
    fn strategy_json_round_trip() {
        let t = make_t_strategy(&chsh_max());
        let back = QubitStrategy::from_json_str(&t.to_json()).unwrap();
        assert_eq!(strategy_distance(&t, &back).unwrap(), 0.0);
    }

    #[test]
    fn rejects_invalid_strategies() {
        let state = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
        assert!(QubitStrategy::new(state, vec![[sigma_x(), sigma_x()]]).is_err());

        let not_involution = Mat2::new(
            C64::new(0.5, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.0, 0.0),
            C64::new(0.5, 0.0),
        );
        let unit = CVec::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        assert!(QubitStrategy::new(unit, vec![[not_involution, sigma_x()]]).is_err());
    }
}
