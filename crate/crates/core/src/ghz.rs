//! Three-part randomness-expansion devices and the GHZ test.
//!
//! A device has three components, each measuring a qubit (or a qubit tensor
//! a multiplicity space in the canonical higher-dimensional form) with
//! `antidiag(1,1)` on input 0 and `antidiag(phase)` on input 1. On inputs
//! drawn uniformly from `{000, 011, 101, 110}` the device passes the GHZ
//! test when `o1 ^ o2 ^ o3 ^ (i1 | i2 | i3) = 1`; the ideal device (GHZ
//! state with x/y measurements) passes with probability one.
//!
//! A device passing with probability `1 - eps` is close to ideal in every
//! explicit sense checked here: phases within `16 eps` of `i`, state overlap
//! at least `1 - 7 eps`, state distance squared at most `14 eps`,
//! post-measurement state within `150 eps`, and the post-measurement state
//! of an entangled canonical device within trace-norm-squared `600 eps` of
//! the best product (and `2400 eps` of the product with its own marginal).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jordan::{block_decompose, InvolutionPair};
use crate::linalg::{
    hermiticity_defect, outer, partial_trace, trace_norm_hermitian, CMat, CVec, C64,
};
use crate::strategy::{sigma_x, Mat2};

/// The four input strings with even parity, in the fixed register order.
pub const VALID_INPUTS: [usize; 4] = [0b000, 0b011, 0b101, 0b110];

/// GHZ test predicate. Inputs must have even parity.
pub fn ghz_test(inputs: [bool; 3], outputs: [bool; 3]) -> Result<bool> {
    if inputs[0] ^ inputs[1] ^ inputs[2] {
        return Err(Error::Precondition(
            "GHZ test inputs must have even parity".into(),
        ));
    }
    let or = inputs[0] | inputs[1] | inputs[2];
    Ok(outputs[0] ^ outputs[1] ^ outputs[2] ^ or)
}

/// A three-qubit randomness-expansion device: joint state coefficients
/// `c_klm` and the input-1 measurement phases of the three components.
#[derive(Debug, Clone)]
pub struct Qubit222Device {
    pub c: CVec,
    pub lambda: C64,
    pub gamma: C64,
    pub phi: C64,
}

impl Qubit222Device {
    pub fn new(c: CVec, lambda: C64, gamma: C64, phi: C64) -> Result<Self> {
        if c.len() != 8 {
            return Err(Error::DimensionMismatch {
                expected: 8,
                got: c.len(),
                context: "three-qubit state has 8 coefficients",
            });
        }
        if (c.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Validation("state is not a unit vector".into()));
        }
        for (name, p) in [("lambda", lambda), ("gamma", gamma), ("phi", phi)] {
            if (p.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::Validation(format!("{name} is not unit modulus")));
            }
            if p.im < -1e-12 {
                return Err(Error::Validation(format!(
                    "{name} has negative imaginary part"
                )));
            }
        }
        Ok(Self {
            c,
            lambda,
            gamma,
            phi,
        })
    }

    pub fn phases(&self) -> [C64; 3] {
        [self.lambda, self.gamma, self.phi]
    }

    /// The measurement of component `j` on input `i`.
    pub fn measurement(&self, j: usize, input: usize) -> Mat2 {
        if input == 0 {
            sigma_x()
        } else {
            let p = self.phases()[j];
            Mat2::new(
                C64::new(0.0, 0.0),
                p,
                p.conj(),
                C64::new(0.0, 0.0),
            )
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&DeviceFile::from(self)).expect("device serializes")
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: DeviceFile = serde_json::from_str(text)?;
        raw.build()
    }
}

#[derive(Serialize, Deserialize)]
struct DeviceFile {
    c: Vec<[f64; 2]>,
    lambda: [f64; 2],
    gamma: [f64; 2],
    phi: [f64; 2],
}

impl From<&Qubit222Device> for DeviceFile {
    fn from(d: &Qubit222Device) -> Self {
        Self {
            c: d.c.iter().map(|z| [z.re, z.im]).collect(),
            lambda: [d.lambda.re, d.lambda.im],
            gamma: [d.gamma.re, d.gamma.im],
            phi: [d.phi.re, d.phi.im],
        }
    }
}

impl DeviceFile {
    fn build(&self) -> Result<Qubit222Device> {
        let c = CVec::from_iterator(self.c.len(), self.c.iter().map(|[r, i]| C64::new(*r, *i)));
        Qubit222Device::new(
            c,
            C64::new(self.lambda[0], self.lambda[1]),
            C64::new(self.gamma[0], self.gamma[1]),
            C64::new(self.phi[0], self.phi[1]),
        )
    }
}

/// The ideal GHZ device: state `(|000> - |111>)/sqrt(2)` and phases `i`
/// (x measurements on input 0, y measurements on input 1).
pub fn ideal_device() -> Qubit222Device {
    let mut c = CVec::zeros(8);
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    c[0] = C64::new(inv_sqrt2, 0.0);
    c[7] = C64::new(-inv_sqrt2, 0.0);
    let i = C64::new(0.0, 1.0);
    Qubit222Device::new(c, i, i, i).expect("ideal device is valid")
}

/// Closed-form pass probability in the state coefficients and phases.
///
/// Each conjugate index pair contributes
/// `Re[conj(c_low) c_high (-1 + ab + bc + ca)/4]`; expanding the projector
/// expectation term by term puts the conjugation on the lower index, which
/// is what makes this expression agree with the direct operator evaluation
/// for complex amplitudes (for the closeness bounds only the modulus of the
/// coefficient product matters, so they are unaffected).
pub fn pass_probability_formula(device: &Qubit222Device) -> f64 {
    let c = &device.c;
    let (l, g, p) = (device.lambda, device.gamma, device.phi);
    let quarter = C64::new(0.25, 0.0);
    let term = |hi: usize, lo: usize, factor: C64| (c[lo].conj() * c[hi] * factor * quarter).re;
    let minus_one = C64::new(-1.0, 0.0);
    0.5 + term(0b111, 0b000, minus_one + l * g + g * p + p * l)
        + term(0b110, 0b001, minus_one + l * g + g * p.conj() + p.conj() * l)
        + term(0b101, 0b010, minus_one + l * g.conj() + g.conj() * p + p * l)
        + term(0b100, 0b011, minus_one + l * g.conj() + g.conj() * p.conj() + p.conj() * l)
}

fn kron3(a: &Mat2, b: &Mat2, c: &Mat2) -> CMat {
    let to = |m: &Mat2| CMat::from_fn(2, 2, |i, j| m[(i, j)]);
    to(a).kronecker(&to(b)).kronecker(&to(c))
}

fn expectation(op: &CMat, state: &CVec) -> f64 {
    state.dotc(&(op * state)).re
}

/// Pass probability by direct evaluation of the projector expectations over
/// the uniform valid-input distribution.
pub fn pass_probability_direct(device: &Qubit222Device) -> f64 {
    let s0 = |j: usize| device.measurement(j, 0);
    let s1 = |j: usize| device.measurement(j, 1);
    let a = &device.c;
    0.5 - 0.125 * expectation(&kron3(&s0(0), &s0(1), &s0(2)), a)
        + 0.125 * expectation(&kron3(&s0(0), &s1(1), &s1(2)), a)
        + 0.125 * expectation(&kron3(&s1(0), &s0(1), &s1(2)), a)
        + 0.125 * expectation(&kron3(&s1(0), &s1(1), &s0(2)), a)
}

/// One side of an inequality check.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub satisfied: bool,
}

impl BoundCheck {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            rhs,
            slack: rhs - lhs,
            satisfied: lhs <= rhs + 1e-12,
        }
    }
}

/// Phase closeness: `|phase - i|^2 <= 16 eps` for each component.
pub fn check_phase_bounds(device: &Qubit222Device) -> Vec<BoundCheck> {
    let eps = 1.0 - pass_probability_formula(device);
    let i = C64::new(0.0, 1.0);
    [
        ("lambda", device.lambda),
        ("gamma", device.gamma),
        ("phi", device.phi),
    ]
    .iter()
    .map(|(name, p)| BoundCheck::new(&format!("|{name} - i|^2 <= 16 eps"), (p - i).norm_sqr(), 16.0 * eps))
    .collect()
}

/// The ideal GHZ state vector.
pub fn ghz_state() -> CVec {
    let mut g = CVec::zeros(8);
    let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
    g[0] = C64::new(inv_sqrt2, 0.0);
    g[7] = C64::new(-inv_sqrt2, 0.0);
    g
}

/// State closeness: `|<alpha, g>| >= 1 - 7 eps` and, with the aligning phase
/// `zeta`, `||alpha - zeta g||^2 <= 14 eps`.
pub fn check_state_bounds(device: &Qubit222Device) -> Vec<BoundCheck> {
    let eps = 1.0 - pass_probability_formula(device);
    let g = ghz_state();
    let overlap = device.c.dotc(&g).norm();
    // zeta aligns <alpha, zeta g> to the positive reals, so the distance is
    // 2 - 2 overlap exactly.
    let dist_sq = (2.0 - 2.0 * overlap).max(0.0);
    vec![
        BoundCheck::new("|<alpha, g>| >= 1 - 7 eps", 1.0 - 7.0 * eps, overlap),
        BoundCheck::new("||alpha - zeta g||^2 <= 14 eps", dist_sq, 14.0 * eps),
    ]
}

/// The post-measurement pure state over input (4), outcome (8), and qubit
/// (8) registers: inputs enter with amplitude 1/2 (uniform probability over
/// the four valid strings) and only test-passing outcome branches are kept,
/// so the squared norm equals the pass probability.
pub fn post_measurement_state(device: &Qubit222Device) -> CVec {
    let mut v = CVec::zeros(4 * 8 * 8);
    for (i_idx, &input) in VALID_INPUTS.iter().enumerate() {
        let bits = |x: usize| [(x >> 2) & 1 == 1, (x >> 1) & 1 == 1, x & 1 == 1];
        let in_bits = bits(input);
        for outcome in 0..8usize {
            let out_bits = bits(outcome);
            if !ghz_test(in_bits, out_bits).expect("valid inputs") {
                continue;
            }
            let proj = |j: usize| -> Mat2 {
                let s = device.measurement(j, if in_bits[j] { 1 } else { 0 });
                let sign = if out_bits[j] { -1.0 } else { 1.0 };
                (Mat2::identity() + s * C64::new(sign, 0.0)) * C64::new(0.5, 0.0)
            };
            let op = kron3(&proj(0), &proj(1), &proj(2));
            let branch = (&op * &device.c).scale(0.5);
            for r in 0..8 {
                v[(i_idx * 8 + outcome) * 8 + r] += branch[r];
            }
        }
    }
    v
}

/// The ideal post-measurement state and its input/outcome marginal.
#[derive(Debug, Clone)]
pub struct IdealPostState {
    pub vector: CVec,
    /// 32 x 32 density operator over the input and outcome registers.
    pub gamma_io: CMat,
}

pub fn ideal_post_state() -> IdealPostState {
    let vector = post_measurement_state(&ideal_device());
    let rho = outer(&vector);
    let gamma_io = partial_trace(&rho, &[4, 8, 8], &[2]);
    IdealPostState { vector, gamma_io }
}

/// Post-measurement closeness: `min_zeta ||v - zeta v_ideal||^2 <= 150 eps`.
pub fn check_post_state_bound(device: &Qubit222Device) -> BoundCheck {
    let eps = 1.0 - pass_probability_formula(device);
    let v = post_measurement_state(device);
    let ideal = ideal_post_state();
    let lhs = min_phase_distance_sq(&v, &ideal.vector);
    BoundCheck::new("||v_post - zeta v_ideal||^2 <= 150 eps", lhs, 150.0 * eps)
}

/// `min over unit zeta of ||v - zeta w||^2`, by aligning the overlap phase.
fn min_phase_distance_sq(v: &CVec, w: &CVec) -> f64 {
    let overlap = v.dotc(w);
    if overlap.norm() < 1e-15 {
        return (v.norm_squared() + w.norm_squared()).max(0.0);
    }
    let zeta = overlap.conj() / overlap.norm();
    (v - w.map(|x| x * zeta)).norm_squared()
}

/// Trace norm of the difference of two density operators (sum of singular
/// values, no 1/2 factor).
pub fn trace_distance(rho: &CMat, sigma: &CMat) -> Result<f64> {
    if rho.nrows() != sigma.nrows() || rho.ncols() != sigma.ncols() {
        return Err(Error::DimensionMismatch {
            expected: rho.nrows(),
            got: sigma.nrows(),
            context: "density operators must have equal dimension",
        });
    }
    for (name, m) in [("rho", rho), ("sigma", sigma)] {
        if hermiticity_defect(m) > 1e-10 {
            return Err(Error::Validation(format!("{name} is not Hermitian")));
        }
        let tr: C64 = (0..m.nrows()).map(|i| m[(i, i)]).sum();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return Err(Error::Validation(format!("{name} does not have unit trace")));
        }
    }
    Ok(trace_norm_hermitian(&(rho - sigma)))
}

/// A canonical 3-part device: per component a list of block phases (unit
/// modulus, nonnegative imaginary part) and a joint pure state over
/// `(A (x) R1) (x) (B (x) R2) (x) (C (x) R3) (x) E`, with each component
/// indexed multiplicity-major (`block * 2 + qubit`) and an optional
/// environment register of dimension `e`.
#[derive(Debug, Clone)]
pub struct CanonicalREDevice {
    pub lambdas: Vec<C64>,
    pub gammas: Vec<C64>,
    pub phis: Vec<C64>,
    pub env_dim: usize,
    pub state: CVec,
}

impl CanonicalREDevice {
    pub fn new(
        lambdas: Vec<C64>,
        gammas: Vec<C64>,
        phis: Vec<C64>,
        env_dim: usize,
        state: CVec,
    ) -> Result<Self> {
        for p in lambdas.iter().chain(&gammas).chain(&phis) {
            if (p.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::Validation("block phase is not unit modulus".into()));
            }
            if p.im < -1e-12 {
                return Err(Error::Validation(
                    "block phase has negative imaginary part".into(),
                ));
            }
        }
        let total = 8 * lambdas.len() * gammas.len() * phis.len() * env_dim.max(1);
        if state.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: state.len(),
                context: "canonical device state length",
            });
        }
        if (state.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Validation("state is not a unit vector".into()));
        }
        Ok(Self {
            lambdas,
            gammas,
            phis,
            env_dim: env_dim.max(1),
            state,
        })
    }

    /// Factor dimensions `[m1, 2, m2, 2, m3, 2, e]`.
    pub fn dims(&self) -> Vec<usize> {
        vec![
            self.lambdas.len(),
            2,
            self.gammas.len(),
            2,
            self.phis.len(),
            2,
            self.env_dim,
        ]
    }

    /// The three-qubit slice for blocks `(k, l, m)` and environment index
    /// `n`, ordered `|r1 r2 r3>`.
    fn block_slice(&self, k: usize, l: usize, m: usize, n: usize) -> CVec {
        let dims = self.dims();
        let mut strides = vec![1usize; dims.len()];
        for i in (0..dims.len() - 1).rev() {
            strides[i] = strides[i + 1] * dims[i + 1];
        }
        let mut out = CVec::zeros(8);
        for r1 in 0..2 {
            for r2 in 0..2 {
                for r3 in 0..2 {
                    let idx = k * strides[0]
                        + r1 * strides[1]
                        + l * strides[2]
                        + r2 * strides[3]
                        + m * strides[4]
                        + r3 * strides[5]
                        + n * strides[6];
                    out[(r1 * 2 + r2) * 2 + r3] = self.state[idx];
                }
            }
        }
        out
    }

    /// Pass probability as the weighted average of the per-block devices.
    pub fn pass_probability(&self) -> f64 {
        let mut total = 0.0;
        for k in 0..self.lambdas.len() {
            for l in 0..self.gammas.len() {
                for m in 0..self.phis.len() {
                    for n in 0..self.env_dim {
                        let slice = self.block_slice(k, l, m, n);
                        let w = slice.norm_squared();
                        if w < 1e-30 {
                            continue;
                        }
                        let device = Qubit222Device {
                            c: slice.unscale(w.sqrt()),
                            lambda: self.lambdas[k],
                            gamma: self.gammas[l],
                            phi: self.phis[m],
                        };
                        total += w * pass_probability_formula(&device);
                    }
                }
            }
        }
        total
    }
}

/// Report of the entangled-device bounds.
#[derive(Debug, Clone, Serialize)]
pub struct EntangledBoundReport {
    pub epsilon: f64,
    pub bound_600: BoundCheck,
    pub bound_2400: BoundCheck,
}

/// Check the trace-norm closeness of the post-measurement input/outcome/
/// environment state to products with the ideal marginal: against the
/// per-block product construction (600 eps) and against the device's own
/// environment marginal (2400 eps).
pub fn check_entangled_bound(device: &CanonicalREDevice) -> Result<EntangledBoundReport> {
    if device.env_dim > 4 {
        return Err(Error::SizeLimit("environment dimension above 4".into()));
    }
    let dims = device.dims();
    let total: usize = dims.iter().product();
    if 32 * total > 1 << 14 {
        return Err(Error::SizeLimit(
            "post-measurement space exceeds 2^14 dimensions".into(),
        ));
    }

    let eps = 1.0 - device.pass_probability();

    // Post-measurement pure state over [I, O, m1, 2, m2, 2, m3, 2, E].
    let mut post_dims = vec![4usize, 8usize];
    post_dims.extend_from_slice(&dims);
    let post_total: usize = post_dims.iter().product();
    let mut v_post = CVec::zeros(post_total);

    let bits = |x: usize| [(x >> 2) & 1 == 1, (x >> 1) & 1 == 1, x & 1 == 1];
    for (i_idx, &input) in VALID_INPUTS.iter().enumerate() {
        let in_bits = bits(input);
        for outcome in 0..8usize {
            let out_bits = bits(outcome);
            if !ghz_test(in_bits, out_bits)? {
                continue;
            }
            // Apply the three component projectors to the joint state.
            let mut branch = device.state.clone();
            for (j, phases) in [&device.lambdas, &device.gammas, &device.phis]
                .iter()
                .enumerate()
            {
                let m = phases.len();
                let mut op = CMat::zeros(2 * m, 2 * m);
                for (blk, &phase) in phases.iter().enumerate() {
                    let s = if in_bits[j] {
                        Mat2::new(C64::new(0.0, 0.0), phase, phase.conj(), C64::new(0.0, 0.0))
                    } else {
                        sigma_x()
                    };
                    let sign = if out_bits[j] { -1.0 } else { 1.0 };
                    let p = (Mat2::identity() + s * C64::new(sign, 0.0)) * C64::new(0.5, 0.0);
                    for q in 0..2 {
                        for qq in 0..2 {
                            op[(blk * 2 + q, blk * 2 + qq)] = p[(q, qq)];
                        }
                    }
                }
                branch = apply_component(&branch, &dims, j, &op);
            }
            let offset = (i_idx * 8 + outcome) * total;
            for t in 0..total {
                v_post[offset + t] += branch[t] * 0.5;
            }
        }
    }

    // Reduced post state over I, O, E.
    let rho_post = outer(&v_post);
    let gamma_post_ioe = partial_trace(&rho_post, &post_dims, &[2, 3, 4, 5, 6, 7]);

    let ideal = ideal_post_state();

    // Environment marginal of the device itself.
    let rho_pre = outer(&device.state);
    let gamma_e = partial_trace(&rho_pre, &dims, &[0, 1, 2, 3, 4, 5]);

    // Product construction: per block tuple, the aligning phase of the
    // component device's post state against the ideal one.
    let (m1, m2, m3, e) = (
        device.lambdas.len(),
        device.gammas.len(),
        device.phis.len(),
        device.env_dim,
    );
    let mut w = CVec::zeros(m1 * m2 * m3 * e);
    for k in 0..m1 {
        for l in 0..m2 {
            for m in 0..m3 {
                for n in 0..e {
                    let slice = device.block_slice(k, l, m, n);
                    let weight = slice.norm();
                    if weight < 1e-15 {
                        continue;
                    }
                    let block_device = Qubit222Device {
                        c: slice.unscale(weight),
                        lambda: device.lambdas[k],
                        gamma: device.gammas[l],
                        phi: device.phis[m],
                    };
                    let v_block = post_measurement_state(&block_device);
                    let overlap = v_block.dotc(&ideal.vector);
                    let zeta = if overlap.norm() > 1e-15 {
                        overlap.conj() / overlap.norm()
                    } else {
                        C64::new(1.0, 0.0)
                    };
                    // v_block is close to zeta * v_ideal, so the block
                    // contributes weight * zeta to the product vector.
                    let idx = ((k * m2 + l) * m3 + m) * e + n;
                    w[idx] = zeta * weight;
                }
            }
        }
    }
    let phi_e = {
        let rho_w = outer(&w);
        let reduced = partial_trace(&rho_w, &[m1, m2, m3, e], &[0, 1, 2]);
        // Renormalize: w may have lost mass to zero-weight blocks only
        // through rounding.
        let tr: C64 = (0..e).map(|i| reduced[(i, i)]).sum();
        reduced.scale(1.0 / tr.re.max(1e-300))
    };

    let product_phi = ideal.gamma_io.kronecker(&phi_e);
    let product_gamma = ideal.gamma_io.kronecker(&gamma_e);

    let d600 = trace_norm_hermitian(&(&gamma_post_ioe - product_phi));
    let d2400 = trace_norm_hermitian(&(&gamma_post_ioe - product_gamma));

    Ok(EntangledBoundReport {
        epsilon: eps,
        bound_600: BoundCheck::new(
            "||G_post_IOE - Phi_E (x) G_ideal_IO||_1^2 <= 600 eps",
            d600 * d600,
            600.0 * eps,
        ),
        bound_2400: BoundCheck::new(
            "||G_post_IOE - G_E (x) G_ideal_IO||_1^2 <= 2400 eps",
            d2400 * d2400,
            2400.0 * eps,
        ),
    })
}

/// Apply an operator to component `j` (the combined multiplicity + qubit
/// factor pair `2j, 2j+1` of the dims list).
fn apply_component(state: &CVec, dims: &[usize], j: usize, op: &CMat) -> CVec {
    // Combine the (multiplicity, qubit) pair into one factor.
    let mut merged: Vec<usize> = Vec::new();
    for pair in 0..3 {
        merged.push(dims[2 * pair] * dims[2 * pair + 1]);
    }
    merged.push(dims[6]);
    let d = merged[j];
    assert_eq!(op.nrows(), d);
    let stride_after: usize = merged[j + 1..].iter().product();
    let stride_before: usize = merged[..j].iter().product();
    let mut out = CVec::zeros(state.len());
    for pre in 0..stride_before {
        for post in 0..stride_after {
            for r in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..d {
                    acc += op[(r, c)] * state[(pre * d + c) * stride_after + post];
                }
                out[(pre * d + r) * stride_after + post] = acc;
            }
        }
    }
    out
}

/// A raw 3-part device: arbitrary involution pairs per component and a pure
/// joint state.
#[derive(Debug, Clone)]
pub struct RawREDevice {
    pub pairs: Vec<InvolutionPair>,
    pub state: CVec,
}

impl RawREDevice {
    pub fn new(pairs: Vec<InvolutionPair>, state: CVec) -> Result<Self> {
        if pairs.len() != 3 {
            return Err(Error::InvalidInput("a device has three components".into()));
        }
        for p in &pairs {
            if p.dim() > 16 {
                return Err(Error::SizeLimit("component dimension above 16".into()));
            }
        }
        let total: usize = pairs.iter().map(|p| p.dim()).product();
        if state.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: state.len(),
                context: "device state length",
            });
        }
        if (state.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Validation("state is not a unit vector".into()));
        }
        Ok(Self { pairs, state })
    }

    /// Pass probability by direct expectation with the raw measurement
    /// operators.
    pub fn pass_probability(&self) -> f64 {
        let dims: Vec<usize> = self.pairs.iter().map(|p| p.dim()).collect();
        let term = |inputs: [usize; 3]| -> f64 {
            let mut applied = self.state.clone();
            for j in 0..3 {
                let op = if inputs[j] == 0 {
                    self.pairs[j].x1().clone()
                } else {
                    self.pairs[j].x2().clone()
                };
                applied = apply_raw_factor(&applied, &dims, j, &op);
            }
            self.state.dotc(&applied).re
        };
        0.5 - 0.125 * term([0, 0, 0])
            + 0.125 * term([0, 1, 1])
            + 0.125 * term([1, 0, 1])
            + 0.125 * term([1, 1, 0])
    }
}

fn apply_raw_factor(state: &CVec, dims: &[usize], j: usize, op: &CMat) -> CVec {
    let d = dims[j];
    let stride_after: usize = dims[j + 1..].iter().product();
    let stride_before: usize = dims[..j].iter().product();
    let mut out = CVec::zeros(state.len());
    for pre in 0..stride_before {
        for post in 0..stride_after {
            for r in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..d {
                    acc += op[(r, c)] * state[(pre * d + c) * stride_after + post];
                }
                out[(pre * d + r) * stride_after + post] = acc;
            }
        }
    }
    out
}

/// Embed a raw device into canonical form: per component, the block
/// decomposition of the measurement pair supplies the multiplicity space
/// and block phases (with nonnegative imaginary part, conjugating the block
/// basis where needed); the joint state rides through the isometries. The
/// pass probability is preserved.
pub fn device_to_canonical(raw: &RawREDevice) -> Result<CanonicalREDevice> {
    let mut state = raw.state.clone();
    let mut dims: Vec<usize> = raw.pairs.iter().map(|p| p.dim()).collect();
    let mut all_phases: Vec<Vec<C64>> = Vec::new();
    for (j, pair) in raw.pairs.iter().enumerate() {
        let decomp = block_decompose(pair)?;
        // The interleaved embedding layout (2l + q) is already
        // multiplicity-major; block angles in [0, pi] give phases with
        // nonnegative imaginary part directly.
        let phases: Vec<C64> = decomp
            .blocks
            .iter()
            .map(|b| C64::from_polar(1.0, b.theta))
            .collect();
        state = apply_raw_factor_rect(&state, &dims, j, &decomp.embedding);
        dims[j] = decomp.embedding.nrows();
        all_phases.push(phases);
    }
    let norm = state.norm();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::Validation(format!(
            "embedding drifted the state norm to {norm}"
        )));
    }
    let state = state.unscale(norm);
    CanonicalREDevice::new(
        all_phases[0].clone(),
        all_phases[1].clone(),
        all_phases[2].clone(),
        1,
        state,
    )
}

fn apply_raw_factor_rect(state: &CVec, dims: &[usize], j: usize, op: &CMat) -> CVec {
    let d_in = dims[j];
    let d_out = op.nrows();
    assert_eq!(op.ncols(), d_in);
    let stride_after: usize = dims[j + 1..].iter().product();
    let stride_before: usize = dims[..j].iter().product();
    let mut new_dims = dims.to_vec();
    new_dims[j] = d_out;
    let total: usize = new_dims.iter().product();
    let mut out = CVec::zeros(total);
    for pre in 0..stride_before {
        for post in 0..stride_after {
            for r in 0..d_out {
                let mut acc = C64::new(0.0, 0.0);
                for c in 0..d_in {
                    acc += op[(r, c)] * state[(pre * d_in + c) * stride_after + post];
                }
                out[(pre * d_out + r) * stride_after + post] = acc;
            }
        }
    }
    out
}

/// Random 2x2x2 device. `bias` in `[0, 1)` pulls the phases toward `i` and
/// the state toward the GHZ state to populate the small-epsilon regime;
/// `bias = 0` samples phases uniformly on the upper half circle and a
/// Gaussian state.
pub fn random_device<R: Rng + ?Sized>(bias: f64, rng: &mut R) -> Qubit222Device {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let phase = |rng: &mut R| {
        let uniform = rng.gen_range(0.0..std::f64::consts::PI);
        let theta = std::f64::consts::FRAC_PI_2
            + (1.0 - bias) * (uniform - std::f64::consts::FRAC_PI_2);
        C64::from_polar(1.0, theta)
    };
    let lambda = phase(rng);
    let gamma = phase(rng);
    let phi = phase(rng);
    let mut noise = CVec::from_iterator(
        8,
        (0..8).map(|_| C64::new(normal.sample(rng), normal.sample(rng))),
    );
    let nn = noise.norm();
    noise = noise.unscale(nn);
    let g = ghz_state();
    let mixed = g.scale(bias) + noise.scale(1.0 - bias);
    let norm = mixed.norm();
    let c = mixed.unscale(norm);
    Qubit222Device::new(c, lambda, gamma, phi).expect("sampled device is valid")
}

/// Random canonical device with an environment, biased toward the ideal:
/// block phases near `i`, block states near the GHZ state.
pub fn random_canonical_device<R: Rng + ?Sized>(
    blocks: usize,
    env_dim: usize,
    bias: f64,
    rng: &mut R,
) -> CanonicalREDevice {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let phase = |rng: &mut R| {
        let uniform = rng.gen_range(0.0..std::f64::consts::PI);
        let theta = std::f64::consts::FRAC_PI_2
            + (1.0 - bias) * (uniform - std::f64::consts::FRAC_PI_2);
        C64::from_polar(1.0, theta)
    };
    let lambdas: Vec<C64> = (0..blocks).map(|_| phase(rng)).collect();
    let gammas: Vec<C64> = (0..blocks).map(|_| phase(rng)).collect();
    let phis: Vec<C64> = (0..blocks).map(|_| phase(rng)).collect();

    let g = ghz_state();
    let dims = [blocks, 2, blocks, 2, blocks, 2, env_dim];
    let total: usize = dims.iter().product();
    let mut strides = vec![1usize; 7];
    for i in (0..6).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let mut state = CVec::zeros(total);
    for k in 0..blocks {
        for l in 0..blocks {
            for m in 0..blocks {
                for n in 0..env_dim {
                    let weight = C64::new(normal.sample(rng), normal.sample(rng));
                    let mut noise = CVec::from_iterator(
                        8,
                        (0..8).map(|_| C64::new(normal.sample(rng), normal.sample(rng))),
                    );
                    let nn = noise.norm();
                    noise = noise.unscale(nn);
                    let mixed = g.scale(bias) + noise.scale(1.0 - bias);
                    let mn = mixed.norm();
                    let block_state = mixed.unscale(mn);
                    for r1 in 0..2 {
                        for r2 in 0..2 {
                            for r3 in 0..2 {
                                let idx = k * strides[0]
                                    + r1 * strides[1]
                                    + l * strides[2]
                                    + r2 * strides[3]
                                    + m * strides[4]
                                    + r3 * strides[5]
                                    + n * strides[6];
                                state[idx] += weight * block_state[(r1 * 2 + r2) * 2 + r3];
                            }
                        }
                    }
                }
            }
        }
    }
    let norm = state.norm();
    CanonicalREDevice::new(lambdas, gammas, phis, env_dim, state.unscale(norm))
        .expect("sampled canonical device is valid")
}
