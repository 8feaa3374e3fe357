//! Binary nonlocal XOR games and the score functions attached to them.
//!
//! A game on `n` players is a real table `f` over the `2^n` input strings.
//! Two derived objects drive everything else in the crate:
//!
//! * the polynomial `P_f(l_1, ..., l_n) = sum_i f(i) l_1^{i_1} ... l_n^{i_n}`,
//! * the torus function `Z_f(t_0, ..., t_n) = sum_i f(i) cos(t_0 + sum_k i_k t_k)`,
//!
//! linked by `Z_f(t) = Re[e^{i t_0} P_f(e^{i t_1}, ..., e^{i t_n})]`.
//!
//! Table indexing convention: input bit `i_1` is the most significant bit of
//! the table index, i.e. `index = sum_k i_k 2^{n-k}`. Every module and file
//! format in this crate shares that convention.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{RMat, RVec};

/// Hard cap on player count; tensor operators are `2^n x 2^n`.
pub const MAX_PLAYERS: usize = 12;

/// A binary nonlocal XOR game: `n` players and a `2^n` score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XorGame {
    players: usize,
    table: Vec<f64>,
}

impl XorGame {
    pub fn new(players: usize, table: Vec<f64>) -> Result<Self> {
        if players == 0 || players > MAX_PLAYERS {
            return Err(Error::InvalidInput(format!(
                "players must be in 1..={MAX_PLAYERS}, got {players}"
            )));
        }
        let expected = 1usize << players;
        if table.len() != expected {
            return Err(Error::InvalidInput(format!(
                "table length {} does not match 2^{} = {}",
                table.len(),
                players,
                expected
            )));
        }
        if let Some(bad) = table.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "table entry {bad} is not finite"
            )));
        }
        Ok(Self { players, table })
    }

    pub fn players(&self) -> usize {
        self.players
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    /// Bit of input string `index` belonging to player `k` (0-based);
    /// player 0 owns the most significant bit.
    #[inline]
    pub fn bit(&self, index: usize, k: usize) -> usize {
        (index >> (self.players - 1 - k)) & 1
    }

    /// The CHSH game: `f(1,1) = -1`, all other entries `+1`.
    pub fn chsh() -> Self {
        Self::new(2, vec![1.0, 1.0, 1.0, -1.0]).unwrap()
    }

    /// The 3-player GHZ game: `f(000) = -1`, `f(011) = f(101) = f(110) = 1`,
    /// all other entries `0`.
    pub fn ghz3() -> Self {
        Self::new(3, vec![-1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    /// The two-player family `h_alpha` with table `{alpha, alpha, 1, -1}`.
    pub fn h_alpha(alpha: f64) -> Self {
        Self::new(2, vec![alpha, alpha, 1.0, -1.0]).unwrap()
    }

    /// Game with every table entry zero.
    pub fn all_zero(players: usize) -> Self {
        Self::new(players, vec![0.0; 1 << players]).unwrap()
    }

    /// Game with every table entry equal to `value`.
    pub fn constant(players: usize, value: f64) -> Self {
        Self::new(players, vec![value; 1 << players]).unwrap()
    }

    /// Uniform random table with entries in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(players: usize, rng: &mut R) -> Self {
        let table = (0..1usize << players)
            .map(|_| rng.gen_range(-1.0..=1.0))
            .collect();
        Self::new(players, table).unwrap()
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: XorGame = serde_json::from_str(text)?;
        Self::new(raw.players, raw.table)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("game serializes")
    }

    /// `sum_i |f(i)|`; a Lipschitz constant for `Z_f` in each coordinate.
    pub fn abs_sum(&self) -> f64 {
        self.table.iter().map(|v| v.abs()).sum()
    }
}

/// A point on the `(n+1)`-torus: angles `(t_0, t_1, ..., t_n)` in radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    pub angles: Vec<f64>,
}

/// Reduce an angle to the canonical representative in `(-pi, pi]`.
pub fn wrap_angle(x: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let y = x.rem_euclid(tau);
    if y > std::f64::consts::PI {
        y - tau
    } else {
        y
    }
}

impl TorusPoint {
    pub fn new(angles: Vec<f64>) -> Self {
        Self { angles }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    /// Canonical representative with every angle in `(-pi, pi]`.
    pub fn wrapped(&self) -> Self {
        Self::new(self.angles.iter().map(|&a| wrap_angle(a)).collect())
    }

    pub fn negated(&self) -> Self {
        Self::new(self.angles.iter().map(|&a| -a).collect())
    }

    /// Wrapped infinity-distance: `max_k |wrap(a_k - b_k)|`.
    pub fn wrapped_inf_dist(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len(), "torus points of equal length");
        self.angles
            .iter()
            .zip(&other.angles)
            .map(|(&a, &b)| wrap_angle(a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A critical point of `Z_f` with its local data.
#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub point: TorusPoint,
    pub value: f64,
    pub gradient_norm: f64,
    pub hessian: RMat,
    /// Hessian eigenvalues sorted ascending.
    pub hessian_eigenvalues: Vec<f64>,
}

impl CriticalPoint {
    /// Build from a point, computing value, gradient norm, Hessian and its
    /// spectrum.
    pub fn at(game: &XorGame, point: TorusPoint) -> Result<Self> {
        let value = eval_z(game, &point)?;
        let grad = grad_z(game, &point)?;
        let hessian = hess_z(game, &point)?;
        let (vals, _) = crate::linalg::symmetric_eigen(&hessian);
        Ok(Self {
            point,
            value,
            gradient_norm: grad.norm(),
            hessian,
            hessian_eigenvalues: vals.iter().cloned().collect(),
        })
    }

    pub fn min_abs_hessian_eigenvalue(&self) -> f64 {
        self.hessian_eigenvalues
            .iter()
            .map(|v| v.abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs_hessian_eigenvalue(&self) -> f64 {
        self.hessian_eigenvalues
            .iter()
            .map(|v| v.abs())
            .fold(0.0, f64::max)
    }
}

fn check_point_len(game: &XorGame, point: &TorusPoint) -> Result<()> {
    if point.len() != game.players() + 1 {
        return Err(Error::DimensionMismatch {
            expected: game.players() + 1,
            got: point.len(),
            context: "torus point length must be players + 1",
        });
    }
    Ok(())
}

/// Evaluate `P_f` at arbitrary complex arguments.
pub fn eval_p(game: &XorGame, lambdas: &[Complex64]) -> Result<Complex64> {
    let n = game.players();
    if lambdas.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: lambdas.len(),
            context: "one lambda per player",
        });
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, &f) in game.table().iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let mut mono = Complex64::new(f, 0.0);
        for (k, &l) in lambdas.iter().enumerate() {
            if game.bit(i, k) == 1 {
                mono *= l;
            }
        }
        acc += mono;
    }
    Ok(acc)
}

/// Phase `t_0 + sum_k i_k t_k` of table entry `i` at `point`.
#[inline]
fn entry_phase(game: &XorGame, point: &TorusPoint, i: usize) -> f64 {
    let mut phase = point.angles[0];
    for k in 0..game.players() {
        if game.bit(i, k) == 1 {
            phase += point.angles[k + 1];
        }
    }
    phase
}

/// Evaluate `Z_f` at a torus point.
pub fn eval_z(game: &XorGame, point: &TorusPoint) -> Result<f64> {
    check_point_len(game, point)?;
    let mut acc = 0.0;
    for (i, &f) in game.table().iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        acc += f * entry_phase(game, point, i).cos();
    }
    Ok(acc)
}

/// Analytic gradient of `Z_f`. Component `a` is
/// `-sum_i f(i) m_a(i) sin(phase_i)` where `m_0 = 1` and `m_a(i) = i_a` for
/// `a >= 1` (the constant-offset convention for `t_0`, which enters every
/// cosine term).
pub fn grad_z(game: &XorGame, point: &TorusPoint) -> Result<RVec> {
    check_point_len(game, point)?;
    let n = game.players();
    let mut grad = RVec::zeros(n + 1);
    for (i, &f) in game.table().iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let s = f * entry_phase(game, point, i).sin();
        grad[0] -= s;
        for k in 0..n {
            if game.bit(i, k) == 1 {
                grad[k + 1] -= s;
            }
        }
    }
    Ok(grad)
}

/// Analytic Hessian of `Z_f`: entry `(a, b)` is
/// `-sum_i f(i) m_a(i) m_b(i) cos(phase_i)`. Symmetric by construction.
pub fn hess_z(game: &XorGame, point: &TorusPoint) -> Result<RMat> {
    check_point_len(game, point)?;
    let n = game.players();
    let mut hess = RMat::zeros(n + 1, n + 1);
    for (i, &f) in game.table().iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let c = f * entry_phase(game, point, i).cos();
        // Multiplier vector (1, i_1, ..., i_n); accumulate its outer product.
        let mut idx = [0usize; MAX_PLAYERS + 1];
        let mut len = 1;
        idx[0] = 0;
        for k in 0..n {
            if game.bit(i, k) == 1 {
                idx[len] = k + 1;
                len += 1;
            }
        }
        for a in 0..len {
            for b in 0..len {
                hess[(idx[a], idx[b])] -= c;
            }
        }
    }
    Ok(hess)
}

/// The transformed game `g(i) = (-1)^{b0} f(b xor i)`.
///
/// Applying the same `(b0, b)` twice returns the original game, and the
/// torus functions are related by
/// `Z_g(t_0, ..., t_n) = (-1)^{b0} Z_f(t_0 + sum b_k t_k, (-1)^{b_1} t_1, ...)`.
pub fn transform_game(game: &XorGame, b0: bool, b: &[bool]) -> Result<XorGame> {
    let n = game.players();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
            context: "one flip bit per player",
        });
    }
    let mut mask = 0usize;
    for (k, &bit) in b.iter().enumerate() {
        if bit {
            mask |= 1 << (n - 1 - k);
        }
    }
    let sign = if b0 { -1.0 } else { 1.0 };
    let table = (0..1usize << n)
        .map(|i| sign * game.table()[mask ^ i])
        .collect();
    XorGame::new(n, table)
}
