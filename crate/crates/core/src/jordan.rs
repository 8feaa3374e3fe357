//! Simultaneous block decomposition of two Hermitian involutions.
//!
//! Two Hermitian operators with eigenvalues in `{-1, 1}` share an orthogonal
//! decomposition into invariant subspaces of dimension at most 2. In a
//! suitable basis the pair takes the canonical form of 2x2 blocks
//! `antidiag(1, 1)` and `antidiag(e^{i theta_l}, e^{-i theta_l})` with
//! `theta_l` in `[0, pi]`, possibly after embedding one-dimensional
//! simultaneous eigenvectors into 2x2 blocks.
//!
//! The production path is spectral: the product `X1 X2` is unitary and
//! commutes with its Hermitian part, so one Hermitian eigendecomposition
//! (plus a compression per eigenphase cluster) reveals the rotation angles
//! and the block bases. The iterative subspace construction
//! ([`invariant_subspace`]) is kept alongside as the reference route.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::{eval_p, XorGame};
use crate::linalg::{
    hermitian_eigen, hermiticity_defect, involution_defect, opnorm, CMat, CVec, C64,
};
use crate::optimizer::MaximaSet;
use crate::strategy::{antidiag, sigma_x};

const HERMITIAN_TOL: f64 = 1e-12;
const INVOLUTION_TOL: f64 = 1e-10;
/// Eigenphase clusters closer than this are orthonormalized together.
const CLUSTER_TOL: f64 = 1e-8;
/// Cosine this close to +/-1 marks a simultaneous-eigenvector cluster.
const SIGN_TOL: f64 = 1e-12;

/// A pair of Hermitian involutions on `C^d`.
#[derive(Debug, Clone)]
pub struct InvolutionPair {
    dim: usize,
    x1: CMat,
    x2: CMat,
}

impl InvolutionPair {
    pub fn new(x1: CMat, x2: CMat) -> Result<Self> {
        let dim = x1.nrows();
        if dim == 0 || x1.ncols() != dim || x2.nrows() != dim || x2.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: x2.nrows(),
                context: "involution pair must be square of equal dimension",
            });
        }
        for (name, m) in [("X1", &x1), ("X2", &x2)] {
            if hermiticity_defect(m) > HERMITIAN_TOL {
                return Err(Error::Validation(format!("{name} is not Hermitian")));
            }
            let defect = involution_defect(m);
            if defect > INVOLUTION_TOL {
                return Err(Error::Validation(format!(
                    "{name} is not an involution (defect {defect:.3e})"
                )));
            }
        }
        Ok(Self { dim, x1, x2 })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x1(&self) -> &CMat {
        &self.x1
    }

    pub fn x2(&self) -> &CMat {
        &self.x2
    }
}

/// Where a canonical 2x2 block came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum BlockOrigin {
    /// A genuine two-dimensional rotation block with `theta` in `(0, pi)`.
    Genuine2D,
    /// One or two one-dimensional simultaneous eigenvectors embedded into a
    /// 2x2 block; `signs` lists the hosted `(x1, x2)` eigenvalue pairs.
    Embedded1D { signs: Vec<(i8, i8)> },
}

#[derive(Debug, Clone, Serialize)]
pub struct Block {
    pub theta: f64,
    pub origin: BlockOrigin,
}

/// The canonical decomposition of an involution pair: an isometry
/// `U: C^d -> C^{2m}` and the per-block angles, such that the canonical
/// block matrices `X'_i` satisfy `U^* X'_i U = X_i`.
#[derive(Debug, Clone)]
pub struct BlockDecomposition {
    /// 2m x d isometry (`U^* U = I_d`).
    pub embedding: CMat,
    pub blocks: Vec<Block>,
}

impl BlockDecomposition {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn thetas(&self) -> Vec<f64> {
        self.blocks.iter().map(|b| b.theta).collect()
    }

    /// The canonical first operator: 2x2 diagonal blocks `antidiag(1, 1)`.
    pub fn canonical_x1(&self) -> CMat {
        let m = self.blocks.len();
        let mut out = CMat::zeros(2 * m, 2 * m);
        for l in 0..m {
            out[(2 * l, 2 * l + 1)] = C64::new(1.0, 0.0);
            out[(2 * l + 1, 2 * l)] = C64::new(1.0, 0.0);
        }
        out
    }

    /// The canonical second operator: 2x2 diagonal blocks
    /// `antidiag(e^{i theta_l}, e^{-i theta_l})`.
    pub fn canonical_x2(&self) -> CMat {
        let m = self.blocks.len();
        let mut out = CMat::zeros(2 * m, 2 * m);
        for (l, b) in self.blocks.iter().enumerate() {
            out[(2 * l, 2 * l + 1)] = C64::from_polar(1.0, b.theta);
            out[(2 * l + 1, 2 * l)] = C64::from_polar(1.0, -b.theta);
        }
        out
    }

    /// Isometry defect `||U^* U - I||`.
    pub fn isometry_defect(&self) -> f64 {
        let d = self.embedding.ncols();
        opnorm(&(self.embedding.adjoint() * &self.embedding - CMat::identity(d, d)))
    }

    /// `max_i ||U^* X'_i U - X_i||`.
    pub fn reconstruction_residual(&self, pair: &InvolutionPair) -> f64 {
        let back1 = self.embedding.adjoint() * self.canonical_x1() * &self.embedding;
        let back2 = self.embedding.adjoint() * self.canonical_x2() * &self.embedding;
        opnorm(&(back1 - pair.x1())).max(opnorm(&(back2 - pair.x2())))
    }
}

/// A nonzero invariant subspace of dimension at most 2 common to two
/// projectors, following the maximal-overlap construction: the top singular
/// pair of the compression of one range onto the other spans the subspace,
/// with the three cases (overlap 0, 1, or strictly between) dispatched by
/// tolerance.
pub fn invariant_subspace(p1: &CMat, p2: &CMat) -> Result<Vec<CVec>> {
    let dim = p1.nrows();
    if dim == 0 || p1.ncols() != dim || p2.nrows() != dim || p2.ncols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: p2.nrows(),
            context: "projectors must be square of equal dimension",
        });
    }
    for (name, p) in [("P1", p1), ("P2", p2)] {
        if hermiticity_defect(p) > 1e-10 || opnorm(&(p * p - p)) > 1e-10 {
            return Err(Error::Validation(format!(
                "{name} is not an orthogonal projector"
            )));
        }
    }

    let range = |p: &CMat| -> Vec<CVec> {
        let (vals, vecs) = hermitian_eigen(p);
        (0..dim)
            .filter(|&i| vals[i] > 0.5)
            .map(|i| CVec::from_iterator(dim, vecs.column(i).iter().cloned()))
            .collect()
    };
    let v1 = range(p1);
    let v2 = range(p2);

    // Zero-range projectors: fall back to a 1D eigenvector of the other.
    if v1.is_empty() && v2.is_empty() {
        let mut e = CVec::zeros(dim);
        e[0] = C64::new(1.0, 0.0);
        return Ok(vec![e]);
    }
    if v1.is_empty() {
        return Ok(vec![v2[0].clone()]);
    }
    if v2.is_empty() {
        return Ok(vec![v1[0].clone()]);
    }

    // B = V2^* V1; its top singular pair realizes the maximal overlap.
    let mut b = CMat::zeros(v2.len(), v1.len());
    for (r, u) in v2.iter().enumerate() {
        for (c, v) in v1.iter().enumerate() {
            b[(r, c)] = u.dotc(v);
        }
    }
    let gram = b.adjoint() * &b;
    let (vals, vecs) = hermitian_eigen(&gram);
    let top = v1.len() - 1;
    let sigma = vals[top].max(0.0).sqrt();
    let right = CVec::from_iterator(v1.len(), vecs.column(top).iter().cloned());

    let mut best1 = CVec::zeros(dim);
    for (c, v) in v1.iter().enumerate() {
        best1 += v * right[c];
    }
    let n1 = best1.norm();
    best1 = best1.unscale(n1);

    let case_tol = 1e-8;
    if sigma <= case_tol || sigma >= 1.0 - case_tol {
        // Orthogonal ranges (P2 kills the line) or a common range vector:
        // either way the single line is invariant under both.
        return Ok(vec![best1]);
    }

    // Strict overlap: the span of the pair is invariant.
    let left = &b * &right;
    let mut best2 = CVec::zeros(dim);
    for (r, u) in v2.iter().enumerate() {
        best2 += u * (left[r] / C64::new(sigma, 0.0));
    }
    let overlap = best1.dotc(&best2);
    let mut ortho = best2 - best1.map(|x| x * overlap);
    let n2 = ortho.norm();
    ortho = ortho.unscale(n2);
    Ok(vec![best1, ortho])
}

enum RawBlock {
    Genuine { v: CVec, w: CVec, theta: f64 },
    Embedded { hosts: Vec<(CVec, i8, i8)>, theta: f64 },
}

impl RawBlock {
    fn theta(&self) -> f64 {
        match self {
            RawBlock::Genuine { theta, .. } => *theta,
            RawBlock::Embedded { theta, .. } => *theta,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            RawBlock::Genuine { .. } => 0,
            RawBlock::Embedded { .. } => 1,
        }
    }
}

/// Decompose an involution pair into canonical blocks.
///
/// `U = X1 X2` is unitary and commutes with its Hermitian part
/// `H = (U + U^*)/2`; the eigenvalues of `H` are `cos theta`. Clusters with
/// `|cos theta| < 1` split into `e^{+/- i theta}` eigenspaces of `U` via the
/// compressed skew part, and each `e^{-i theta}` eigenvector `v` spans a
/// genuine block together with `X1 v`. Clusters at `+/-1` consist of
/// simultaneous eigenvectors of `X1` and `X2`; these are paired two at a
/// time into embedded 2x2 blocks (an odd leftover gets a padding
/// dimension).
pub fn block_decompose(pair: &InvolutionPair) -> Result<BlockDecomposition> {
    let d = pair.dim;
    let u_prod = pair.x1() * pair.x2();
    let h = (&u_prod + u_prod.adjoint()).scale(0.5);
    let k = (&u_prod - u_prod.adjoint()).map(|c| c / C64::new(0.0, 2.0));
    let (hvals, hvecs) = hermitian_eigen(&h);

    // Group eigenvalues into clusters of equal cos(theta).
    let mut clusters: Vec<(f64, Vec<usize>)> = Vec::new();
    for i in 0..d {
        match clusters.last_mut() {
            Some((c, idx)) if (hvals[i] - *c).abs() <= CLUSTER_TOL => {
                idx.push(i);
                *c = (*c * (idx.len() - 1) as f64 + hvals[i]) / idx.len() as f64;
            }
            _ => clusters.push((hvals[i], vec![i])),
        }
    }

    let mut raw: Vec<RawBlock> = Vec::new();
    let mut plus_pool: Vec<(CVec, i8, i8)> = Vec::new(); // x1 x2 = +1, theta 0
    let mut minus_pool: Vec<(CVec, i8, i8)> = Vec::new(); // x1 x2 = -1, theta pi

    for (c, idx) in clusters {
        let span = CMat::from_fn(d, idx.len(), |r, j| hvecs[(r, idx[j])]);
        let span = crate::linalg::orthonormalize(&span, 1e-10);
        let width = span.ncols();
        if width == 0 {
            continue;
        }
        if c.abs() >= 1.0 - SIGN_TOL {
            // Simultaneous eigenvectors: compress X1 onto the cluster.
            let x1c = span.adjoint() * pair.x1() * &span;
            let (svals, svecs) = hermitian_eigen(&x1c);
            for j in 0..width {
                let y = CVec::from_iterator(width, svecs.column(j).iter().cloned());
                let u = &span * &y;
                let x1_sign = if svals[j] >= 0.0 { 1i8 } else { -1i8 };
                let prod_sign = if c >= 0.0 { 1i8 } else { -1i8 };
                let x2_sign = x1_sign * prod_sign;
                if prod_sign == 1 {
                    plus_pool.push((u, x1_sign, x2_sign));
                } else {
                    minus_pool.push((u, x1_sign, x2_sign));
                }
            }
        } else {
            // Rotation cluster: split by the sign of the compressed skew
            // part; negative eigenvalues mark the e^{-i theta} eigenspace.
            let kc = span.adjoint() * &k * &span;
            let (kvals, kvecs) = hermitian_eigen(&kc);
            for j in 0..width {
                if kvals[j] >= 0.0 {
                    continue;
                }
                let y = CVec::from_iterator(width, kvecs.column(j).iter().cloned());
                let v = &span * &y;
                // Rayleigh-refined angle of this particular eigenvector.
                let sin_t = -(v.dotc(&(&k * &v))).re;
                let cos_t = (v.dotc(&(&h * &v))).re;
                let theta = sin_t.atan2(cos_t).clamp(0.0, std::f64::consts::PI);
                let w = pair.x1() * &v;
                raw.push(RawBlock::Genuine { v, w, theta });
            }
        }
    }

    // Pair up 1D pieces: a theta = 0 block hosts one (+,+) and one (-,-)
    // eigenvector, a theta = pi block hosts one (+,-) and one (-,+).
    for (pool, theta) in [(plus_pool, 0.0), (minus_pool, std::f64::consts::PI)] {
        let (mut ups, mut downs): (Vec<_>, Vec<_>) =
            pool.into_iter().partition(|(_, x1, _)| *x1 == 1);
        while !ups.is_empty() || !downs.is_empty() {
            let mut hosts = Vec::new();
            if let Some(h) = ups.pop() {
                hosts.push(h);
            }
            if let Some(h) = downs.pop() {
                hosts.push(h);
            }
            raw.push(RawBlock::Embedded { hosts, theta });
        }
    }

    raw.sort_by(|a, b| {
        a.theta()
            .partial_cmp(&b.theta())
            .unwrap()
            .then(a.rank().cmp(&b.rank()))
    });

    let m = raw.len();
    let mut embedding = CMat::zeros(2 * m, d);
    let mut blocks = Vec::with_capacity(m);
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    for (l, rb) in raw.iter().enumerate() {
        match rb {
            RawBlock::Genuine { v, w, theta } => {
                for col in 0..d {
                    embedding[(2 * l, col)] = v[col].conj();
                    embedding[(2 * l + 1, col)] = w[col].conj();
                }
                blocks.push(Block {
                    theta: *theta,
                    origin: BlockOrigin::Genuine2D,
                });
            }
            RawBlock::Embedded { hosts, theta } => {
                let mut signs = Vec::new();
                for (u, x1_sign, x2_sign) in hosts {
                    let s = *x1_sign as f64;
                    for col in 0..d {
                        embedding[(2 * l, col)] += u[col].conj() * inv_sqrt2;
                        embedding[(2 * l + 1, col)] += u[col].conj() * s * inv_sqrt2;
                    }
                    signs.push((*x1_sign, *x2_sign));
                }
                blocks.push(Block {
                    theta: *theta,
                    origin: BlockOrigin::Embedded1D { signs },
                });
            }
        }
    }

    Ok(BlockDecomposition { embedding, blocks })
}

/// The canonical pair form: the embedding together with the canonical
/// matrices themselves.
pub fn canonicalize_pair(pair: &InvolutionPair) -> Result<(CMat, CMat, CMat)> {
    let decomp = block_decompose(pair)?;
    let x1 = decomp.canonical_x1();
    let x2 = decomp.canonical_x2();
    Ok((decomp.embedding, x1, x2))
}

/// An arbitrary-dimension strategy: per-player involution pairs and a joint
/// unit state on the tensor product of the player spaces.
#[derive(Debug, Clone)]
pub struct GeneralStrategy {
    pub pairs: Vec<InvolutionPair>,
    pub state: CVec,
}

impl GeneralStrategy {
    pub fn new(pairs: Vec<InvolutionPair>, state: CVec) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidInput("at least one player".into()));
        }
        let mut total = 1usize;
        for p in &pairs {
            if p.dim() > 32 {
                return Err(Error::SizeLimit("player dimension above 32".into()));
            }
            total = total.saturating_mul(p.dim());
        }
        if total > 1 << 16 {
            return Err(Error::SizeLimit("joint dimension above 2^16".into()));
        }
        if state.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: state.len(),
                context: "state length must equal product of player dimensions",
            });
        }
        if (state.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Validation("state is not a unit vector".into()));
        }
        Ok(Self { pairs, state })
    }

    pub fn players(&self) -> usize {
        self.pairs.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.dim()).collect()
    }
}

/// A strategy in canonical form: per player a qubit factor tensor a
/// multiplicity space `C^{m_k}` (qubit index major), block angles in
/// `[0, pi]`, and a joint unit state.
#[derive(Debug, Clone)]
pub struct CanonicalStrategy {
    /// Per-player block angles; player `k` has `m_k = angles[k].len()`.
    pub angles: Vec<Vec<f64>>,
    /// Unit state over the tensor product of the `2 m_k`-dimensional player
    /// spaces, each indexed as `q * m_k + l`.
    pub state: CVec,
}

impl CanonicalStrategy {
    pub fn new(angles: Vec<Vec<f64>>, state: CVec) -> Result<Self> {
        let total: usize = angles.iter().map(|a| 2 * a.len()).product();
        if state.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: state.len(),
                context: "canonical state length",
            });
        }
        for a in angles.iter().flatten() {
            if !(0.0..=std::f64::consts::PI).contains(a) {
                return Err(Error::Validation(format!("angle {a} outside [0, pi]")));
            }
        }
        if (state.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Validation("state is not a unit vector".into()));
        }
        Ok(Self { angles, state })
    }

    pub fn players(&self) -> usize {
        self.angles.len()
    }

    pub fn block_counts(&self) -> Vec<usize> {
        self.angles.iter().map(|a| a.len()).collect()
    }

    pub fn player_dims(&self) -> Vec<usize> {
        self.angles.iter().map(|a| 2 * a.len()).collect()
    }

    /// The measurement operator of player `k` on input `i`, in the
    /// qubit-major layout.
    pub fn player_operator(&self, k: usize, input: usize) -> CMat {
        let m = self.angles[k].len();
        let mut out = CMat::zeros(2 * m, 2 * m);
        for (l, &theta) in self.angles[k].iter().enumerate() {
            let blk = if input == 0 {
                sigma_x()
            } else {
                antidiag(theta)
            };
            for q in 0..2 {
                for qq in 0..2 {
                    out[(q * m + l, qq * m + l)] = blk[(q, qq)];
                }
            }
        }
        out
    }
}

/// Apply a rectangular operator to one tensor factor of a state.
fn apply_to_factor(state: &CVec, dims: &[usize], k: usize, op: &CMat) -> (CVec, Vec<usize>) {
    let d_in = dims[k];
    let d_out = op.nrows();
    assert_eq!(op.ncols(), d_in);
    let stride_after: usize = dims[k + 1..].iter().product();
    let stride_before: usize = dims[..k].iter().product();
    let mut new_dims = dims.to_vec();
    new_dims[k] = d_out;
    let total_out: usize = new_dims.iter().product();
    let mut out = CVec::zeros(total_out);
    for pre in 0..stride_before {
        for post in 0..stride_after {
            for r in 0..d_out {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..d_in {
                    let idx_in = (pre * d_in + c) * stride_after + post;
                    acc += op[(r, c)] * state[idx_in];
                }
                let idx_out = (pre * d_out + r) * stride_after + post;
                out[idx_out] = acc;
            }
        }
    }
    (out, new_dims)
}

/// Embed an arbitrary-dimension strategy into canonical form: decompose each
/// player's pair, push the joint state through the per-player isometries
/// (reordered to the qubit-major layout), and collect the block angles.
/// Scores are preserved.
pub fn to_canonical_form(gs: &GeneralStrategy) -> Result<CanonicalStrategy> {
    let mut state = gs.state.clone();
    let mut dims = gs.dims();
    let mut angles = Vec::with_capacity(gs.players());
    for (k, pair) in gs.pairs.iter().enumerate() {
        let decomp = block_decompose(pair)?;
        let m = decomp.block_count();
        // Reorder rows from interleaved (2l + q) to qubit-major (q m + l).
        let mut reordered = CMat::zeros(2 * m, pair.dim());
        for l in 0..m {
            for q in 0..2 {
                for col in 0..pair.dim() {
                    reordered[(q * m + l, col)] = decomp.embedding[(2 * l + q, col)];
                }
            }
        }
        let (next, next_dims) = apply_to_factor(&state, &dims, k, &reordered);
        state = next;
        dims = next_dims;
        angles.push(decomp.thetas());
    }
    // Isometries preserve the norm up to rounding.
    let norm = state.norm();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Validation(format!(
            "embedding drifted the state norm to {norm}"
        )));
    }
    let state = state.unscale(norm);
    CanonicalStrategy::new(angles, state)
}

/// Score of an arbitrary-dimension strategy by direct expectation of the
/// tensor game operator. Dense; intended for desk-scale dimensions.
pub fn general_score(game: &XorGame, gs: &GeneralStrategy) -> Result<f64> {
    let n = game.players();
    if gs.players() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: gs.players(),
            context: "strategy player count must match game",
        });
    }
    let mut acc = C64::new(0.0, 0.0);
    for (i, &f) in game.table().iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let mut applied = gs.state.clone();
        let mut dims = gs.dims();
        for k in 0..n {
            let op = if game.bit(i, k) == 0 {
                gs.pairs[k].x1().clone()
            } else {
                gs.pairs[k].x2().clone()
            };
            let (next, nd) = apply_to_factor(&applied, &dims, k, &op);
            applied = next;
            dims = nd;
        }
        acc += gs.state.dotc(&applied) * f;
    }
    if acc.im.abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "score has imaginary part {}",
            acc.im
        )));
    }
    Ok(acc.re)
}

/// Score of a canonical strategy by direct expectation.
pub fn canonical_score(game: &XorGame, cs: &CanonicalStrategy) -> Result<f64> {
    let n = game.players();
    if cs.players() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cs.players(),
            context: "strategy player count must match game",
        });
    }
    let mut acc = C64::new(0.0, 0.0);
    for (i, &f) in game.table().iter().enumerate() {
        if f == 0.0 {
            continue;
        }
        let mut applied = cs.state.clone();
        let mut dims = cs.player_dims();
        for k in 0..n {
            let op = cs.player_operator(k, game.bit(i, k));
            let (next, nd) = apply_to_factor(&applied, &dims, k, &op);
            applied = next;
            dims = nd;
        }
        acc += cs.state.dotc(&applied) * f;
    }
    if acc.im.abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "score has imaginary part {}",
            acc.im
        )));
    }
    Ok(acc.re)
}

/// One weighted qubit sub-strategy of a canonical strategy.
#[derive(Debug, Clone)]
pub struct QubitComponent {
    /// Block index per player.
    pub indices: Vec<usize>,
    /// `|p|^2` for the component amplitude `p`.
    pub weight: f64,
    /// Unit phase of `p`.
    pub phase: C64,
    /// Unit qubit state with nonnegative leading amplitude (an arbitrary
    /// basis state when the weight vanishes).
    pub lambda: CVec,
    /// Score of the component's qubit strategy.
    pub score: f64,
}

/// Split a canonical strategy into its weighted qubit components, one per
/// block index tuple. The component weights form a probability distribution
/// and the weighted component scores reproduce the strategy score.
pub fn decompose_canonical(game: &XorGame, cs: &CanonicalStrategy) -> Result<Vec<QubitComponent>> {
    let n = game.players();
    if cs.players() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: cs.players(),
            context: "strategy player count must match game",
        });
    }
    let counts = cs.block_counts();
    let dims = cs.player_dims();
    let tuple_total: usize = counts.iter().product();
    let qdim = 1usize << n;

    let mut strides = vec![1usize; n];
    for k in (0..n.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }

    let mut out = Vec::with_capacity(tuple_total);
    for flat in 0..tuple_total {
        let mut rem = flat;
        let mut indices = vec![0usize; n];
        for k in (0..n).rev() {
            indices[k] = rem % counts[k];
            rem /= counts[k];
        }
        // Extract the qubit-slice vector for this block tuple.
        let mut v = CVec::zeros(qdim);
        for q in 0..qdim {
            let mut idx = 0usize;
            for k in 0..n {
                let qk = (q >> (n - 1 - k)) & 1;
                idx += (qk * counts[k] + indices[k]) * strides[k];
            }
            v[q] = cs.state[idx];
        }
        let r = v.norm();
        let (phase, lambda) = if r > 1e-15 {
            let lead = v[0];
            let ph = if lead.norm() > 1e-15 {
                lead / lead.norm()
            } else {
                C64::new(1.0, 0.0)
            };
            (ph, v.map(|x| x * ph.conj()).unscale(r))
        } else {
            let mut e = CVec::zeros(qdim);
            e[0] = C64::new(1.0, 0.0);
            (C64::new(1.0, 0.0), e)
        };
        let thetas: Vec<f64> = (0..n).map(|k| cs.angles[k][indices[k]]).collect();
        let measurements = thetas.iter().map(|&t| [sigma_x(), antidiag(t)]).collect();
        let strat = crate::strategy::QubitStrategy::new(lambda.clone(), measurements)?;
        let score = crate::strategy::score(game, &strat)?;
        out.push(QubitComponent {
            indices,
            weight: r * r,
            phase,
            lambda,
            score,
        });
    }
    Ok(out)
}

/// The nearest ideal product approximation of a canonical strategy: the
/// vector `gamma` over the multiplicity spaces built from the component
/// amplitudes, and the exact distance `||state - g (x) gamma||`, where
/// `g = (|0...0> + (P_f(alpha)/|P_f(alpha)|) |1...1>) / sqrt(2)` is the
/// ideal qubit state of the witness maximum. Minimized over the two
/// equivalent maxima.
pub fn nearest_ideal_product(
    game: &XorGame,
    cs: &CanonicalStrategy,
    maxima: &MaximaSet,
) -> Result<(CVec, f64)> {
    if maxima.maxima.is_empty() {
        return Err(Error::Precondition("maxima set is empty".into()));
    }
    let components = decompose_canonical(game, cs)?;
    let n = game.players();
    let counts = cs.block_counts();
    let dims = cs.player_dims();
    let tuple_total: usize = counts.iter().product();
    let qdim = 1usize << n;

    // gamma collects the component amplitudes p = phase * sqrt(weight).
    let mut gamma = CVec::zeros(tuple_total);
    for (flat, comp) in components.iter().enumerate() {
        gamma[flat] = comp.phase * comp.weight.sqrt();
    }

    let mut strides = vec![1usize; n];
    for k in (0..n.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }

    let witness = &maxima.maxima[0].point;
    let mut best: Option<(CVec, f64)> = None;
    for cand in [witness.clone(), witness.negated()] {
        let lambdas: Vec<C64> = cand.angles[1..]
            .iter()
            .map(|&t| C64::from_polar(1.0, t))
            .collect();
        let p_val = eval_p(game, &lambdas)?;
        if p_val.norm() < 1e-9 {
            return Err(Error::Degenerate(
                "P_f vanishes at the witness maximum".into(),
            ));
        }
        let phase = p_val / p_val.norm();
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        let mut g = CVec::zeros(qdim);
        g[0] = C64::new(inv_sqrt2, 0.0);
        g[qdim - 1] = phase * inv_sqrt2;

        // Assemble g (x) gamma in the qubit-major canonical layout.
        let mut product = CVec::zeros(cs.state.len());
        for q in 0..qdim {
            if g[q].norm() == 0.0 {
                continue;
            }
            for flat in 0..tuple_total {
                let mut rem = flat;
                let mut idx = 0usize;
                for k in (0..n).rev() {
                    let lk = rem % counts[k];
                    rem /= counts[k];
                    let qk = (q >> (n - 1 - k)) & 1;
                    idx += (qk * counts[k] + lk) * strides[k];
                }
                product[idx] += g[q] * gamma[flat];
            }
        }
        let dist = (&cs.state - &product).norm();
        if best.as_ref().map_or(true, |(_, d)| dist < *d) {
            best = Some((gamma.clone(), dist));
        }
    }
    Ok(best.unwrap())
}

/// Random involution pair of dimension `d`, built by conjugating a known
/// block form by a Haar-like random unitary. Returns the pair and the
/// planted rotation angles (the multiset of genuine block thetas plus 0/pi
/// entries for the simultaneous eigenvectors).
pub fn random_involution_pair<R: rand::Rng + ?Sized>(
    d: usize,
    rng: &mut R,
) -> (InvolutionPair, Vec<f64>) {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, 1.0).unwrap();
    let gauss = CMat::from_fn(d, d, |_, _| C64::new(normal.sample(rng), normal.sample(rng)));
    let q = crate::linalg::orthonormalize(&gauss, 1e-12);
    assert_eq!(q.ncols(), d, "random Gaussian matrix is full rank");

    let mut x1 = CMat::zeros(d, d);
    let mut x2 = CMat::zeros(d, d);
    let mut thetas = Vec::new();
    let mut pos = 0usize;
    while pos < d {
        if d - pos >= 2 && rng.gen_bool(0.7) {
            let theta = rng.gen_range(0.05..std::f64::consts::PI - 0.05);
            x1[(pos, pos + 1)] = C64::new(1.0, 0.0);
            x1[(pos + 1, pos)] = C64::new(1.0, 0.0);
            x2[(pos, pos + 1)] = C64::from_polar(1.0, theta);
            x2[(pos + 1, pos)] = C64::from_polar(1.0, -theta);
            thetas.push(theta);
            pos += 2;
        } else {
            let s1 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let s2 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            x1[(pos, pos)] = C64::new(s1, 0.0);
            x2[(pos, pos)] = C64::new(s2, 0.0);
            thetas.push(if s1 == s2 { 0.0 } else { std::f64::consts::PI });
            pos += 1;
        }
    }
    let x1 = &q * x1 * q.adjoint();
    let x2 = &q * x2 * q.adjoint();
    let sym = |m: CMat| (m.clone() + m.adjoint()).scale(0.5);
    let pair = InvolutionPair::new(sym(x1), sym(x2)).expect("conjugated pair stays valid");
    (pair, thetas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::TorusPoint;
    use crate::strategy::{make_t_strategy, score};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn pauli_x() -> CMat {
        CMat::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
    }

    // The antidiagonal phase convention: [[0, i], [-i, 0]].
    fn pauli_y() -> CMat {
        CMat::from_row_slice(2, 2, &[c(0., 0.), c(0., 1.), c(0., -1.), c(0., 0.)])
    }

    #[test]
    fn invariant_subspace_cases() {
        // Case 2: equal rank-one projectors.
        let e0 = CVec::from_vec(vec![c(1., 0.), c(0., 0.)]);
        let p0 = crate::linalg::outer(&e0);
        let basis = invariant_subspace(&p0, &p0).unwrap();
        assert_eq!(basis.len(), 1);
        assert!((basis[0][0].norm() - 1.0).abs() < 1e-12);

        // Case 1: orthogonal ranges.
        let e1 = CVec::from_vec(vec![c(0., 0.), c(1., 0.)]);
        let p1 = crate::linalg::outer(&e1);
        let basis = invariant_subspace(&p0, &p1).unwrap();
        assert_eq!(basis.len(), 1);

        // Case 3: strict overlap spans the plane.
        let plus = CVec::from_vec(vec![c(1. / 2.0f64.sqrt(), 0.), c(1. / 2.0f64.sqrt(), 0.)]);
        let pp = crate::linalg::outer(&plus);
        let basis = invariant_subspace(&p0, &pp).unwrap();
        assert_eq!(basis.len(), 2);
        assert!(basis[0].dotc(&basis[1]).norm() < 1e-10);
    }

    #[test]
    fn invariant_subspace_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..50 {
            let d = rng.gen_range(1..=6);
            let mut mk_proj = |rng: &mut ChaCha8Rng| {
                let rank = rng.gen_range(0..=d);
                let gauss = CMat::from_fn(d, rank, |_, _| {
                    C64::new(normal.sample(rng), normal.sample(rng))
                });
                let q = crate::linalg::orthonormalize(&gauss, 1e-10);
                &q * q.adjoint()
            };
            let p1 = mk_proj(&mut rng);
            let p2 = mk_proj(&mut rng);
            let basis = invariant_subspace(&p1, &p2).unwrap();
            assert!(!basis.is_empty() && basis.len() <= 2);
            let mut span = CMat::zeros(d, basis.len());
            for (j, v) in basis.iter().enumerate() {
                span.set_column(j, v);
            }
            let proj = &span * span.adjoint();
            let eye = CMat::identity(d, d);
            for p in [&p1, &p2] {
                let leak = (&eye - &proj) * p * &proj;
                assert!(opnorm(&leak) <= 1e-9, "invariance defect {}", opnorm(&leak));
            }
        }
    }

    #[test]
    fn block_decompose_pauli_pair() {
        let pair = InvolutionPair::new(pauli_x(), pauli_y()).unwrap();
        let decomp = block_decompose(&pair).unwrap();
        assert_eq!(decomp.block_count(), 1);
        assert_relative_eq!(decomp.blocks[0].theta, FRAC_PI_2, epsilon = 1e-12);
        assert_eq!(decomp.blocks[0].origin, BlockOrigin::Genuine2D);
        assert!(decomp.isometry_defect() < 1e-10);
        assert!(decomp.reconstruction_residual(&pair) < 1e-9);
        // The canonical second operator of a pi/2 block is sigma_y itself.
        let x2 = decomp.canonical_x2();
        assert!(opnorm(&(x2 - pauli_y())) < 1e-12);
    }

    #[test]
    fn block_decompose_identical_operators() {
        let pair = InvolutionPair::new(pauli_x(), pauli_x()).unwrap();
        let decomp = block_decompose(&pair).unwrap();
        assert_eq!(decomp.block_count(), 1);
        assert_eq!(decomp.blocks[0].theta, 0.0);
        match &decomp.blocks[0].origin {
            BlockOrigin::Embedded1D { signs } => {
                let mut s = signs.clone();
                s.sort();
                assert_eq!(s, vec![(-1, -1), (1, 1)]);
            }
            other => panic!("expected embedded block, got {other:?}"),
        }
        assert!(decomp.reconstruction_residual(&pair) < 1e-9);
    }

    #[test]
    fn canonicalize_one_dimensional_pair() {
        let x1 = CMat::from_row_slice(1, 1, &[c(1., 0.)]);
        let x2 = CMat::from_row_slice(1, 1, &[c(-1., 0.)]);
        let pair = InvolutionPair::new(x1, x2).unwrap();
        let (u, cx1, cx2) = canonicalize_pair(&pair).unwrap();
        assert_eq!(u.nrows(), 2);
        assert!(opnorm(&(cx2.clone() + cx1.clone())) < 1e-12, "X'2 = -X'1");
        // The image is the positive eigenspace of X'1.
        let img = CVec::from_vec(vec![u[(0, 0)], u[(1, 0)]]);
        let applied = &cx1 * &img;
        assert!((applied - img).norm() < 1e-10);
        let res = u.adjoint() * cx2 * &u;
        assert!((res[(0, 0)] - c(-1., 0.)).norm() < 1e-12);
    }

    #[test]
    fn build_then_recover_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let d = rng.gen_range(1..=16);
            let (pair, mut planted) = random_involution_pair(d, &mut rng);
            let decomp = block_decompose(&pair).unwrap();
            assert!(decomp.isometry_defect() < 1e-10);
            let residual = decomp.reconstruction_residual(&pair);
            assert!(residual < 1e-9, "residual {residual} at d = {d}");

            let mut recovered = Vec::new();
            for b in &decomp.blocks {
                match &b.origin {
                    BlockOrigin::Genuine2D => recovered.push(b.theta),
                    BlockOrigin::Embedded1D { signs } => {
                        for _ in signs {
                            recovered.push(b.theta);
                        }
                    }
                }
            }
            planted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            recovered.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(planted.len(), recovered.len());
            for (p, r) in planted.iter().zip(&recovered) {
                assert!((p - r).abs() < 1e-9, "theta {p} vs {r}");
            }
            for b in &decomp.blocks {
                assert!((0.0..=PI).contains(&b.theta));
            }
        }
    }

    #[test]
    fn eigenphases_match_product_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let d = rng.gen_range(2..=10);
            let (pair, _) = random_involution_pair(d, &mut rng);
            let decomp = block_decompose(&pair).unwrap();
            // cos(theta) with the right multiplicities reproduces the
            // spectrum of the Hermitian part of X1 X2.
            let u_prod = pair.x1() * pair.x2();
            let h = (&u_prod + u_prod.adjoint()).scale(0.5);
            let (hvals, _) = hermitian_eigen(&h);
            let mut expected: Vec<f64> = Vec::new();
            for b in &decomp.blocks {
                match &b.origin {
                    BlockOrigin::Genuine2D => {
                        expected.push(b.theta.cos());
                        expected.push(b.theta.cos());
                    }
                    BlockOrigin::Embedded1D { signs } => {
                        for (s1, s2) in signs {
                            expected.push((s1 * s2) as f64);
                        }
                    }
                }
            }
            expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (e, h) in expected.iter().zip(hvals.iter()) {
                assert!((e - h).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_non_involutions() {
        let bad = CMat::from_row_slice(2, 2, &[c(0.5, 0.), c(0., 0.), c(0., 0.), c(0.5, 0.)]);
        assert!(InvolutionPair::new(bad, pauli_x()).is_err());
    }

    /// A qubit strategy viewed as a general strategy.
    fn qubit_as_general(t: &crate::strategy::QubitStrategy) -> GeneralStrategy {
        let pairs = t
            .measurements()
            .iter()
            .map(|pair| {
                let to_mat = |m: &crate::strategy::Mat2| CMat::from_fn(2, 2, |i, j| m[(i, j)]);
                InvolutionPair::new(to_mat(&pair[0]), to_mat(&pair[1])).unwrap()
            })
            .collect();
        GeneralStrategy::new(pairs, t.state().clone()).unwrap()
    }

    #[test]
    fn canonical_form_of_class_strategy_is_trivial() {
        let t = make_t_strategy(&TorusPoint::new(vec![0.4, 1.0, 2.0]));
        let gs = qubit_as_general(&t);
        let cs = to_canonical_form(&gs).unwrap();
        assert_eq!(cs.block_counts(), vec![1, 1]);
        assert_relative_eq!(cs.angles[0][0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(cs.angles[1][0], 2.0, epsilon = 1e-10);
        let g = XorGame::chsh();
        let direct = score(&g, &t).unwrap();
        assert_relative_eq!(canonical_score(&g, &cs).unwrap(), direct, epsilon = 1e-9);
    }

    #[test]
    fn canonical_form_with_idle_ancilla() {
        // Each player holds a qubit plus an idle 2-dimensional ancilla: the
        // measurements act as two identical blocks.
        let t = make_t_strategy(&TorusPoint::new(vec![0.3, 0.9, 1.7]));
        let mut pairs = Vec::new();
        for pair in t.measurements() {
            let to_mat = |m: &crate::strategy::Mat2| CMat::from_fn(2, 2, |i, j| m[(i, j)]);
            let eye = CMat::identity(2, 2);
            pairs.push(
                InvolutionPair::new(
                    to_mat(&pair[0]).kronecker(&eye),
                    to_mat(&pair[1]).kronecker(&eye),
                )
                .unwrap(),
            );
        }
        // Joint state psi with each player's ancilla in |0>: player index
        // is qubit * 2 + ancilla.
        let mut state = CVec::zeros(16);
        let psi = t.state();
        for q1 in 0..2 {
            for q2 in 0..2 {
                state[(q1 * 2) * 4 + q2 * 2] = psi[q1 * 2 + q2];
            }
        }
        let gs = GeneralStrategy::new(pairs, state).unwrap();
        let cs = to_canonical_form(&gs).unwrap();
        assert_eq!(cs.block_counts(), vec![2, 2]);
        let g = XorGame::chsh();
        let want = score(&g, &t).unwrap();
        assert_relative_eq!(canonical_score(&g, &cs).unwrap(), want, epsilon = 1e-9);
    }

    #[test]
    fn canonical_form_random_high_dimensional() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        let g = XorGame::chsh();
        for _ in 0..15 {
            let d1 = 2 * rng.gen_range(1..=2);
            let d2 = 2 * rng.gen_range(1..=2);
            let (p1, _) = random_involution_pair(d1, &mut rng);
            let (p2, _) = random_involution_pair(d2, &mut rng);
            let mut state = CVec::from_iterator(
                d1 * d2,
                (0..d1 * d2).map(|_| C64::new(normal.sample(&mut rng), normal.sample(&mut rng))),
            );
            let norm = state.norm();
            state = state.unscale(norm);
            let gs = GeneralStrategy::new(vec![p1, p2], state).unwrap();
            let want = general_score(&g, &gs).unwrap();
            let cs = to_canonical_form(&gs).unwrap();
            let got = canonical_score(&g, &cs).unwrap();
            assert!((want - got).abs() < 1e-9, "{want} vs {got}");
            assert!((cs.state.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decompose_canonical_single_block() {
        let t = make_t_strategy(&TorusPoint::new(vec![0.2, 0.8, 1.9]));
        let cs = to_canonical_form(&qubit_as_general(&t)).unwrap();
        let g = XorGame::chsh();
        let comps = decompose_canonical(&g, &cs).unwrap();
        assert_eq!(comps.len(), 1);
        assert_relative_eq!(comps[0].weight, 1.0, epsilon = 1e-12);
        assert_relative_eq!(comps[0].score, score(&g, &t).unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn decompose_canonical_weighted_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        let g = XorGame::chsh();
        for _ in 0..20 {
            let m1 = rng.gen_range(1..=2);
            let m2 = rng.gen_range(1..=2);
            let angles = vec![
                (0..m1).map(|_| rng.gen_range(0.0..PI)).collect::<Vec<_>>(),
                (0..m2).map(|_| rng.gen_range(0.0..PI)).collect::<Vec<_>>(),
            ];
            let total = 4 * m1 * m2;
            let mut state = CVec::from_iterator(
                total,
                (0..total).map(|_| C64::new(normal.sample(&mut rng), normal.sample(&mut rng))),
            );
            let norm = state.norm();
            state = state.unscale(norm);
            let cs = CanonicalStrategy::new(angles, state).unwrap();
            let comps = decompose_canonical(&g, &cs).unwrap();
            let total_weight: f64 = comps.iter().map(|c| c.weight).sum();
            assert!((total_weight - 1.0).abs() < 1e-10);
            for comp in &comps {
                assert!(comp.lambda[0].re >= -1e-12);
            }
            let avg: f64 = comps.iter().map(|c| c.weight * c.score).sum();
            let direct = canonical_score(&g, &cs).unwrap();
            assert!((avg - direct).abs() < 1e-9, "{avg} vs {direct}");
        }
    }

    #[test]
    fn nearest_ideal_product_exact_and_chsh_phase() {
        let g = XorGame::chsh();
        let maxima = crate::optimizer::find_global_maxima(
            &g,
            &crate::optimizer::OptimizerConfig::default(),
        )
        .unwrap();

        // State = g (x) gamma exactly: distance 0. The ideal qubit state has
        // phase P(i, i)/|P(i, i)| = e^{i pi/4} on |11>.
        let ideal_g = {
            let mut v = CVec::zeros(4);
            v[0] = c(1.0 / 2.0f64.sqrt(), 0.0);
            v[3] = C64::from_polar(1.0 / 2.0f64.sqrt(), FRAC_PI_4);
            v
        };
        let gamma0 = CVec::from_vec(vec![c(0.6, 0.0), c(0.0, 0.8)]);
        // m = (2, 1): player-1 index is q1 * 2 + l1, player-2 index is q2.
        let mut state = CVec::zeros(8);
        for q1 in 0..2 {
            for l1 in 0..2 {
                for q2 in 0..2 {
                    state[(q1 * 2 + l1) * 2 + q2] = ideal_g[q1 * 2 + q2] * gamma0[l1];
                }
            }
        }
        let angles = vec![vec![FRAC_PI_2, FRAC_PI_2], vec![FRAC_PI_2]];
        let cs = CanonicalStrategy::new(angles, state).unwrap();
        let (gamma, dist) = nearest_ideal_product(&g, &cs, &maxima).unwrap();
        assert!(dist < 1e-9, "distance {dist}");
        assert_relative_eq!(gamma[0].norm(), 0.6, epsilon = 1e-9);
        assert_relative_eq!(gamma[1].norm(), 0.8, epsilon = 1e-9);
    }

    #[test]
    fn nearest_ideal_distance_matches_component_identity() {
        // ||state - g (x) gamma||^2 equals the weighted sum of
        // ||lambda - g||^2 over components when gamma is built from the
        // component amplitudes and g matches the winning witness.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, 1.0).unwrap();
        let g = XorGame::chsh();
        let maxima = crate::optimizer::find_global_maxima(
            &g,
            &crate::optimizer::OptimizerConfig::default(),
        )
        .unwrap();
        for _ in 0..10 {
            let angles = vec![
                vec![rng.gen_range(0.0..PI), rng.gen_range(0.0..PI)],
                vec![rng.gen_range(0.0..PI)],
            ];
            let total = 8;
            let mut state = CVec::from_iterator(
                total,
                (0..total).map(|_| C64::new(normal.sample(&mut rng), normal.sample(&mut rng))),
            );
            let norm = state.norm();
            state = state.unscale(norm);
            let cs = CanonicalStrategy::new(angles, state).unwrap();
            let (gamma, dist) = nearest_ideal_product(&g, &cs, &maxima).unwrap();
            assert!(gamma.norm() <= 1.0 + 1e-10);

            let comps = decompose_canonical(&g, &cs).unwrap();
            let mut best_identity = f64::INFINITY;
            let witness = &maxima.maxima[0].point;
            for cand in [witness.clone(), witness.negated()] {
                let lambdas: Vec<C64> = cand.angles[1..]
                    .iter()
                    .map(|&t| C64::from_polar(1.0, t))
                    .collect();
                let p_val = eval_p(&g, &lambdas).unwrap();
                let phase = p_val / p_val.norm();
                let mut ideal = CVec::zeros(4);
                ideal[0] = c(1.0 / 2.0f64.sqrt(), 0.0);
                ideal[3] = phase * (1.0 / 2.0f64.sqrt());
                // The amplitude phase multiplies both lambda and the gamma
                // entry, so it cancels in the per-component residual.
                let total: f64 = comps
                    .iter()
                    .map(|comp| comp.weight * (&comp.lambda - &ideal).norm_squared())
                    .sum();
                best_identity = best_identity.min(total.sqrt());
            }
            assert!(
                (dist - best_identity).abs() < 1e-9,
                "distance {dist} vs identity {best_identity}"
            );
        }
    }
}
