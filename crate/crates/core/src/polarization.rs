//! Single-photon Jones calculus and two-photon polarization algebra.
//!
//! Basis and handedness conventions used throughout the crate:
//!
//! | symbol | vector `(a_H, a_V)` | eigenvalue |
//! |--------|---------------------|------------|
//! | `H`    | `(1, 0)`            | `σz = +1`  |
//! | `V`    | `(0, 1)`            | `σz = −1`  |
//! | `D`    | `(1, 1)/√2`         | `σx = +1`  |
//! | `A`    | `(1, −1)/√2`        | `σx = −1`  |
//! | `R`    | `(1, i)/√2`         | `σy = +1`  |
//! | `L`    | `(1, −i)/√2`        | `σy = −1`  |
//!
//! with `σy = [[0, −i], [i, 0]]`. Handedness naming differs between optics
//! texts; everything downstream (geometric-phase signs, port labels) is
//! stated relative to this table.
//!
//! Two-photon operators act on `|a⟩ ⊗ |b⟩` ordered `HH, HV, VH, VV`; the
//! first factor is arm A.

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector2, Vector4};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::ops::Mul;
use thiserror::Error;

pub type C64 = Complex64;
pub type Mat2 = Matrix2<C64>;
pub type Mat4 = Matrix4<C64>;

const STATE_NORM_TOL: f64 = 1e-12;
const HERMITIAN_TOL: f64 = 1e-12;
const TRACE_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const UNITARY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolarizationError {
    #[error("polarization state is not normalized (|a|² = {0})")]
    NotNormalized(f64),
    #[error("density operator is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("density operator trace is {0}, expected 1")]
    BadTrace(f64),
    #[error("density operator is not positive semidefinite (min eigenvalue {0:e})")]
    NotPositive(f64),
    #[error("{name} = {value} is outside [{lo}, {hi}]")]
    OutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },
}

#[inline]
pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Frobenius norm of any complex matrix.
pub fn frobenius<R: nalgebra::Dim, Cc: nalgebra::Dim, S>(m: &nalgebra::Matrix<C64, R, Cc, S>) -> f64
where
    S: nalgebra::RawStorage<C64, R, Cc>,
{
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Kronecker product of two single-photon operators.
pub fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    Mat4::from_fn(|r, col| a[(r / 2, col / 2)] * b[(r % 2, col % 2)])
}

/// Normalized Jones vector over the `{H, V}` basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarizationState(Vector2<C64>);

impl PolarizationState {
    /// Accepts amplitudes that are already normalized.
    pub fn new(a_h: C64, a_v: C64) -> Result<Self, PolarizationError> {
        let n = a_h.norm_sqr() + a_v.norm_sqr();
        if (n - 1.0).abs() > STATE_NORM_TOL {
            return Err(PolarizationError::NotNormalized(n));
        }
        Ok(Self(Vector2::new(a_h, a_v)))
    }

    /// Rescales arbitrary nonzero amplitudes to unit norm.
    pub fn normalized(a_h: C64, a_v: C64) -> Result<Self, PolarizationError> {
        let n = (a_h.norm_sqr() + a_v.norm_sqr()).sqrt();
        if n == 0.0 || !n.is_finite() {
            return Err(PolarizationError::NotNormalized(n * n));
        }
        Ok(Self(Vector2::new(a_h / n, a_v / n)))
    }

    pub fn h() -> Self {
        Self(Vector2::new(c(1.0, 0.0), c(0.0, 0.0)))
    }
    pub fn v() -> Self {
        Self(Vector2::new(c(0.0, 0.0), c(1.0, 0.0)))
    }
    pub fn d() -> Self {
        Self(Vector2::new(c(FRAC_1_SQRT_2, 0.0), c(FRAC_1_SQRT_2, 0.0)))
    }
    pub fn a() -> Self {
        Self(Vector2::new(c(FRAC_1_SQRT_2, 0.0), c(-FRAC_1_SQRT_2, 0.0)))
    }
    pub fn r() -> Self {
        Self(Vector2::new(c(FRAC_1_SQRT_2, 0.0), c(0.0, FRAC_1_SQRT_2)))
    }
    pub fn l() -> Self {
        Self(Vector2::new(c(FRAC_1_SQRT_2, 0.0), c(0.0, -FRAC_1_SQRT_2)))
    }

    pub fn amplitudes(&self) -> &Vector2<C64> {
        &self.0
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &Self) -> C64 {
        self.0.dotc(&other.0)
    }

    /// `|self⟩⟨self|`
    pub fn projector(&self) -> Mat2 {
        self.0 * self.0.adjoint()
    }

    pub fn density(&self) -> Mat2 {
        self.projector()
    }

    /// Applies a Jones operator. Non-unitary operators return the raw,
    /// unnormalized amplitudes.
    pub fn apply(&self, j: &JonesMatrix) -> Vector2<C64> {
        j.0 * self.0
    }
}

/// 2×2 complex operator on polarization amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[[[f64; 2]; 2]; 2]", from = "[[[f64; 2]; 2]; 2]")]
pub struct JonesMatrix(pub Mat2);

impl From<JonesMatrix> for [[[f64; 2]; 2]; 2] {
    fn from(j: JonesMatrix) -> Self {
        let e = |r: usize, col: usize| [j.0[(r, col)].re, j.0[(r, col)].im];
        [[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]]
    }
}

impl From<[[[f64; 2]; 2]; 2]> for JonesMatrix {
    fn from(a: [[[f64; 2]; 2]; 2]) -> Self {
        JonesMatrix(Mat2::from_fn(|r, col| c(a[r][col][0], a[r][col][1])))
    }
}

impl JonesMatrix {
    pub fn identity() -> Self {
        Self(Mat2::identity())
    }

    pub fn zeros() -> Self {
        Self(Mat2::zeros())
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    pub fn dagger(&self) -> Self {
        Self(self.0.adjoint())
    }

    /// `exp(i·angle·σ)` for a Pauli axis, i.e. `cos(angle)·I + i·sin(angle)·σ`.
    pub fn exp_pauli(axis: Axis, angle: f64) -> Self {
        let s = pauli(axis).matrix.0;
        Self(Mat2::identity() * c(angle.cos(), 0.0) + s * c(0.0, angle.sin()))
    }

    /// Real rotation `[[cos θ, −sin θ], [sin θ, cos θ]]`.
    pub fn rotation(theta: f64) -> Self {
        let (s, co) = theta.sin_cos();
        Self(Mat2::new(c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0)))
    }

    pub fn diag(d0: C64, d1: C64) -> Self {
        Self(Mat2::new(d0, c(0.0, 0.0), c(0.0, 0.0), d1))
    }

    /// `‖J†J − I‖_F`
    pub fn unitarity_defect(&self) -> f64 {
        frobenius(&(self.0.adjoint() * self.0 - Mat2::identity()))
    }

    pub fn is_unitary(&self) -> bool {
        self.unitarity_defect() <= UNITARY_TOL
    }

    pub fn distance(&self, other: &Self) -> f64 {
        frobenius(&(self.0 - other.0))
    }

    /// Frobenius distance minimized over a global phase on `other`.
    pub fn distance_up_to_phase(&self, other: &Self) -> f64 {
        let overlap = (other.0.adjoint() * self.0).trace();
        let phase = if overlap.norm() > 0.0 {
            overlap / overlap.norm()
        } else {
            c(1.0, 0.0)
        };
        frobenius(&(self.0 - other.0 * phase))
    }
}

impl Mul for JonesMatrix {
    type Output = JonesMatrix;
    fn mul(self, rhs: JonesMatrix) -> JonesMatrix {
        JonesMatrix(self.0 * rhs.0)
    }
}

impl fmt::Display for JonesMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{}, {}], [{}, {}]]",
            self.0[(0, 0)],
            self.0[(0, 1)],
            self.0[(1, 0)],
            self.0[(1, 1)]
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliOp {
    pub axis: Axis,
    pub matrix: JonesMatrix,
}

impl PauliOp {
    /// Eigenstates for eigenvalues `+1` and `−1`.
    pub fn eigenstates(&self) -> (PolarizationState, PolarizationState) {
        match self.axis {
            Axis::X => (PolarizationState::d(), PolarizationState::a()),
            Axis::Y => (PolarizationState::r(), PolarizationState::l()),
            Axis::Z => (PolarizationState::h(), PolarizationState::v()),
        }
    }

    /// Projector onto the eigenvalue `sign` (`+1` or `−1`).
    pub fn projector(&self, sign: i8) -> Mat2 {
        let s = f64::from(sign.signum());
        (Mat2::identity() + self.matrix.0 * c(s, 0.0)) * c(0.5, 0.0)
    }
}

pub fn pauli(axis: Axis) -> PauliOp {
    let z = c(0.0, 0.0);
    let one = c(1.0, 0.0);
    let m = match axis {
        Axis::X => Mat2::new(z, one, one, z),
        Axis::Y => Mat2::new(z, c(0.0, -1.0), c(0.0, 1.0), z),
        Axis::Z => Mat2::new(one, z, z, -one),
    };
    PauliOp {
        axis,
        matrix: JonesMatrix(m),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BellKind {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellKind {
    pub const ALL: [BellKind; 4] = [BellKind::PhiPlus, BellKind::PhiMinus, BellKind::PsiPlus, BellKind::PsiMinus];

    pub fn vector(self) -> Vector4<C64> {
        let s = c(FRAC_1_SQRT_2, 0.0);
        let z = c(0.0, 0.0);
        match self {
            BellKind::PhiPlus => Vector4::new(s, z, z, s),
            BellKind::PhiMinus => Vector4::new(s, z, z, -s),
            BellKind::PsiPlus => Vector4::new(z, s, s, z),
            BellKind::PsiMinus => Vector4::new(z, s, -s, z),
        }
    }

    /// Eigenvalues of `(σz⊗σz, σy⊗σy)` on this Bell state.
    pub fn parity_signs(self) -> (i8, i8) {
        match self {
            BellKind::PhiPlus => (1, -1),
            BellKind::PhiMinus => (1, 1),
            BellKind::PsiPlus => (-1, 1),
            BellKind::PsiMinus => (-1, -1),
        }
    }
}

/// Density operator of a polarization photon pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoQubitState {
    rho: Mat4,
}

impl TwoQubitState {
    /// Validates Hermiticity, unit trace and positivity. Minimum eigenvalues in
    /// `[−1e−10, 0)` are clamped to zero and the trace renormalized.
    pub fn new(rho: Mat4) -> Result<Self, PolarizationError> {
        let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > HERMITIAN_TOL {
            return Err(PolarizationError::NotHermitian(herm));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(PolarizationError::BadTrace(tr.re));
        }
        let rho = (rho + rho.adjoint()) * c(0.5, 0.0);
        let eig = SymmetricEigen::new(rho);
        let min = eig.eigenvalues.min();
        if min < -PSD_TOL {
            return Err(PolarizationError::NotPositive(min));
        }
        if min < 0.0 {
            let clamped = eig.eigenvalues.map(|l| l.max(0.0));
            let total: f64 = clamped.sum();
            let d = Mat4::from_diagonal(&clamped.map(|l| c(l / total, 0.0)));
            let v = eig.eigenvectors;
            let rebuilt = v * d * v.adjoint();
            return Ok(Self {
                rho: (rebuilt + rebuilt.adjoint()) * c(0.5, 0.0),
            });
        }
        Ok(Self { rho })
    }

    pub fn from_pure(psi: &Vector4<C64>) -> Result<Self, PolarizationError> {
        let n = psi.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(PolarizationError::NotNormalized(0.0));
        }
        let psi = psi / c(n, 0.0);
        Self::new(psi * psi.adjoint())
    }

    pub fn product(a: &PolarizationState, b: &PolarizationState) -> Self {
        Self {
            rho: kron(&a.density(), &b.density()),
        }
    }

    pub fn maximally_mixed() -> Self {
        Self {
            rho: Mat4::identity() * c(0.25, 0.0),
        }
    }

    pub fn bell(kind: BellKind) -> Self {
        let v = kind.vector();
        Self { rho: v * v.adjoint() }
    }

    /// `p·|Bell⟩⟨Bell| + (1 − p)·I/4`
    pub fn werner(p: f64, kind: BellKind) -> Result<Self, PolarizationError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(PolarizationError::OutOfRange {
                name: "werner p",
                value: p,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let b = Self::bell(kind).rho;
        Ok(Self {
            rho: b * c(p, 0.0) + Mat4::identity() * c((1.0 - p) / 4.0, 0.0),
        })
    }

    /// `w·self + (1 − w)·other`
    pub fn mix(&self, other: &Self, w: f64) -> Result<Self, PolarizationError> {
        if !(0.0..=1.0).contains(&w) {
            return Err(PolarizationError::OutOfRange {
                name: "mixing weight",
                value: w,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(Self {
            rho: self.rho * c(w, 0.0) + other.rho * c(1.0 - w, 0.0),
        })
    }

    /// Haar-distributed pure state from a normalized complex Gaussian vector.
    pub fn random_pure<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let psi = Vector4::from_fn(|_, _| gaussian_c64(rng));
        Self::from_pure(&psi).expect("gaussian vector is nonzero")
    }

    /// Full-rank mixed state `G G† / Tr(G G†)` with `G` a complex Gaussian matrix.
    pub fn random_mixed<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let g = Mat4::from_fn(|_, _| gaussian_c64(rng));
        let w = g * g.adjoint();
        let tr = w.trace().re;
        let rho = w * c(1.0 / tr, 0.0);
        Self {
            rho: (rho + rho.adjoint()) * c(0.5, 0.0),
        }
    }

    pub fn rho(&self) -> &Mat4 {
        &self.rho
    }

    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    /// `Tr[O ρ]`, real part.
    pub fn expectation(&self, op: &Mat4) -> f64 {
        (op * self.rho).trace().re
    }

    /// `⟨ψ|ρ|ψ⟩`
    pub fn population(&self, psi: &Vector4<C64>) -> f64 {
        (psi.adjoint() * self.rho * psi)[(0, 0)].re
    }

    pub fn partial_transpose(&self) -> Mat4 {
        Mat4::from_fn(|r, col| {
            let (a, b) = (r / 2, r % 2);
            let (a2, b2) = (col / 2, col % 2);
            self.rho[(2 * a + b2, 2 * a2 + b)]
        })
    }
}

fn gaussian_c64<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im)
}

/// `Tr[(A ⊗ B) ρ]`
pub fn correlator(rho: &TwoQubitState, a: &PauliOp, b: &PauliOp) -> f64 {
    rho.expectation(&kron(&a.matrix.0, &b.matrix.0))
}

/// Joint outcome probabilities `P(s_a, s_b)` for projective measurements of
/// `A` and `B`, indexed `[s_a == −1][s_b == −1]`.
pub fn joint_sign_probabilities(rho: &TwoQubitState, a: &PauliOp, b: &PauliOp) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for (i, sa) in [1i8, -1].into_iter().enumerate() {
        for (j, sb) in [1i8, -1].into_iter().enumerate() {
            out[i][j] = rho.expectation(&kron(&a.projector(sa), &b.projector(sb)));
        }
    }
    out
}

/// The correlator as the signed probability sum, e.g.
/// `P(H,H) + P(V,V) − P(H,V) − P(V,H)` for `σz⊗σz`.
pub fn signed_probability_correlator(rho: &TwoQubitState, a: &PauliOp, b: &PauliOp) -> f64 {
    let p = joint_sign_probabilities(rho, a, b);
    p[0][0] + p[1][1] - p[0][1] - p[1][0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommutatorReport {
    /// `‖[σz, σy]‖_F`
    pub single_photon_norm: f64,
    /// `‖[σz⊗σz, σy⊗σy]‖_F`
    pub two_photon_norm: f64,
}

pub fn commutator_checks() -> CommutatorReport {
    let z = pauli(Axis::Z).matrix.0;
    let y = pauli(Axis::Y).matrix.0;
    let zz = kron(&z, &z);
    let yy = kron(&y, &y);
    CommutatorReport {
        single_photon_norm: frobenius(&(z * y - y * z)),
        two_photon_norm: frobenius(&(zz * yy - yy * zz)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PptVerdict {
    pub entangled: bool,
    pub min_eigenvalue: f64,
}

/// Peres–Horodecki test with the transpose on the second photon. Exact for
/// two qubits.
pub fn ppt_is_entangled(rho: &TwoQubitState) -> PptVerdict {
    let pt = rho.partial_transpose();
    let pt = (pt + pt.adjoint()) * c(0.5, 0.0);
    let min_eigenvalue = SymmetricEigen::new(pt).eigenvalues.min();
    PptVerdict {
        entangled: min_eigenvalue < -PSD_TOL,
        min_eigenvalue,
    }
}
