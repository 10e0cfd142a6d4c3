//! Diffraction-order Kraus operators of a periodic Jones field and the
//! port-resolved measurement they induce.
//!
//! A unit cell `J(x, y)` diffracts into orders `(m, n)` with Kraus operators
//!
//! ```text
//! K_mn = (1/A) ∫ J(x, y) · exp(−2πi (m x/Λx + n y/Λy)) dA
//! ```
//!
//! and POVM elements `E_mn = K_mn† K_mn`. Orders outside the configured
//! truncation, and orders not wired to a detector port, are loss.
//!
//! Two independent routes compute `K_mn`: [`kraus_decompose`] integrates a
//! sampled [`JonesField`], and [`kraus_closed_form`] sums analytic ramp
//! Fourier coefficients of the profile.

use crate::metasurface::{JonesField, PhaseProfile, ProfileShape};
use crate::polarization::{c, frobenius, pauli, Axis, JonesMatrix, Mat2, PolarizationState, C64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::f64::consts::{PI, TAU};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PovmError {
    #[error("grid {nx}×{ny} is too coarse for order bound ({m_max}, {n_max}); need at least {need_x}×{need_y}")]
    Aliasing {
        nx: usize,
        ny: usize,
        m_max: usize,
        n_max: usize,
        need_x: usize,
        need_y: usize,
    },
    #[error("port order ({m}, {n}) lies outside the truncation (|m| ≤ {m_max}, |n| ≤ {n_max})")]
    PortOutsideTruncation { m: i32, n: i32, m_max: usize, n_max: usize },
    #[error("invalid port assignment: {0}")]
    BadPorts(String),
    #[error("Kraus set is not trace non-increasing (Σ K†K exceeds I by {0:e})")]
    Incomplete(f64),
    #[error("no signal: mean capture into the signal ports is {0:e}")]
    NoSignal(f64),
    #[error("closed-form decomposition is unavailable: {0}")]
    Unsupported(&'static str),
    #[error("depth {name} = {value} must lie in [0, 1]")]
    Depth { name: &'static str, value: f64 },
}

type Result<T> = std::result::Result<T, PovmError>;

/// Minimum samples per axis for [`kraus_decompose`].
pub const MIN_DECOMPOSE_GRID: usize = 32;
/// Tolerated excess of `Σ K†K` over the identity.
pub const COMPLETENESS_TOL: f64 = 1e-9;
pub const DEFAULT_ORDER_BOUND: usize = 8;
const NO_SIGNAL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DiffractionOrder {
    pub m: i32,
    pub n: i32,
}

impl DiffractionOrder {
    pub const fn new(m: i32, n: i32) -> Self {
        Self { m, n }
    }
}

/// Integration rule over one period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    /// Plain midpoint rule; the DFT of the samples.
    #[default]
    Midpoint,
    /// Midpoint rule with Euler–Maclaurin endpoint corrections, for fields that
    /// are smooth inside the cell but jump at its boundary (blazed ramps).
    /// Sixth order in the sample spacing for such fields; not suitable for
    /// fields with interior jumps.
    EndCorrected,
}

/// Kraus operators for all orders `|m| ≤ m_max`, `|n| ≤ n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausSet {
    m_max: usize,
    n_max: usize,
    /// Indexed `(n + n_max)·(2·m_max + 1) + (m + m_max)`.
    ops: Vec<JonesMatrix>,
}

impl KrausSet {
    fn from_fn(m_max: usize, n_max: usize, f: impl Fn(i32, i32) -> JonesMatrix) -> Self {
        let w = 2 * m_max + 1;
        let h = 2 * n_max + 1;
        let ops = (0..w * h)
            .map(|i| f((i % w) as i32 - m_max as i32, (i / w) as i32 - n_max as i32))
            .collect();
        Self { m_max, n_max, ops }
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn contains(&self, o: DiffractionOrder) -> bool {
        o.m.unsigned_abs() as usize <= self.m_max && o.n.unsigned_abs() as usize <= self.n_max
    }

    pub fn get(&self, o: DiffractionOrder) -> Option<&JonesMatrix> {
        if !self.contains(o) {
            return None;
        }
        let w = 2 * self.m_max + 1;
        let idx = (o.n + self.n_max as i32) as usize * w + (o.m + self.m_max as i32) as usize;
        Some(&self.ops[idx])
    }

    /// Orders in ascending `(n, m)` storage order, paired with their operators.
    pub fn iter(&self) -> impl Iterator<Item = (DiffractionOrder, &JonesMatrix)> {
        let w = 2 * self.m_max + 1;
        let (mm, nm) = (self.m_max as i32, self.n_max as i32);
        self.ops
            .iter()
            .enumerate()
            .map(move |(i, k)| (DiffractionOrder::new((i % w) as i32 - mm, (i / w) as i32 - nm), k))
    }

    /// POVM element `K†K` of one order.
    pub fn element(&self, o: DiffractionOrder) -> Option<Mat2> {
        self.get(o).map(|k| k.0.adjoint() * k.0)
    }

    /// `Σ K†K` over the truncated order set.
    pub fn completeness_sum(&self) -> Mat2 {
        self.ops.iter().fold(Mat2::zeros(), |acc, k| acc + k.0.adjoint() * k.0)
    }

    /// How far `Σ K†K` exceeds the identity (largest eigenvalue − 1, floored
    /// at 0). Truncation deficits are loss; an excess would create probability.
    pub fn excess(&self) -> f64 {
        let (_, hi) = hermitian_eigenvalues(&self.completeness_sum());
        (hi - 1.0).max(0.0)
    }

    pub fn ensure_physical(&self, tol: f64) -> Result<()> {
        let e = self.excess();
        if e > tol {
            Err(PovmError::Incomplete(e))
        } else {
            Ok(())
        }
    }

    /// Structured text export (JSON).
    pub fn to_json(&self) -> String {
        let doc = KrausDoc {
            kind: "kraus-set".into(),
            m_max: self.m_max,
            n_max: self.n_max,
            residual: completeness_check(self),
            orders: self.iter().map(|(o, k)| KrausEntry { m: o.m, n: o.n, kraus: *k }).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("kraus set serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct KrausEntry {
    m: i32,
    n: i32,
    kraus: JonesMatrix,
}

#[derive(Serialize, Deserialize)]
struct KrausDoc {
    kind: String,
    m_max: usize,
    n_max: usize,
    residual: f64,
    orders: Vec<KrausEntry>,
}

/// Eigenvalues (ascending) of a 2×2 Hermitian matrix.
pub(crate) fn hermitian_eigenvalues(m: &Mat2) -> (f64, f64) {
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = m[(0, 1)];
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
    (mean - rad, mean + rad)
}

/// `‖Σ K†K − I‖_F`
pub fn completeness_check(kraus: &KrausSet) -> f64 {
    frobenius(&(kraus.completeness_sum() - Mat2::identity()))
}

/// Fourier coefficient `∫₀¹ exp(2πi·γ·u)·exp(−2πi·m·u) du` of a linear phase
/// ramp winding `γ` turns per period.
pub fn ramp_coefficient(gamma: f64, m: i32) -> C64 {
    let d = gamma - f64::from(m);
    if d == 0.0 {
        return c(1.0, 0.0);
    }
    let x = PI * d;
    let s = x.sin() / x;
    c((x).cos() * s, x.sin() * s)
}

/// Exact Fourier coefficient of a piecewise-constant phase `exp(i·φ_k)` over
/// `L` equal cells.
fn piecewise_coefficient(phases: impl Iterator<Item = f64>, len: usize, m: i32) -> C64 {
    let l = len as f64;
    let mf = f64::from(m);
    let envelope = if m == 0 { 1.0 } else { (PI * mf / l).sin() / (PI * mf / l) };
    let mut acc = c(0.0, 0.0);
    for (k, phi) in phases.enumerate() {
        let arg = phi - TAU * mf * (k as f64 + 0.5) / l;
        acc += c(arg.cos(), arg.sin());
    }
    acc * (envelope / l)
}

/// Coefficients of `exp(i·s·θ(u))` for both signs `s = ±1`, ordered `[+, −]`.
fn axis_coefficients(depth: f64, custom: Option<&[f64]>, m: i32) -> [C64; 2] {
    match custom {
        None => [ramp_coefficient(depth, m), ramp_coefficient(-depth, m)],
        Some(g) => [
            piecewise_coefficient(g.iter().map(|v| TAU * depth * v), g.len(), m),
            piecewise_coefficient(g.iter().map(|v| -TAU * depth * v), g.len(), m),
        ],
    }
}

/// Analytic decomposition of a profile: with `exp(iθσ) = Σ_s e^{isθ} P(s)`,
/// `K_mn = Σ_{s,t} c_m(s) d_n(t) · P_z(s) · P_y(t)`.
pub fn kraus_closed_form(profile: &PhaseProfile, m_max: usize, n_max: usize) -> KrausSet {
    let (lin, circ) = match &profile.shape {
        ProfileShape::SawtoothRamp => (None, None),
        ProfileShape::CustomSamples { lin, circ } => (Some(lin.as_slice()), Some(circ.as_slice())),
    };
    let z = pauli(Axis::Z);
    let y = pauli(Axis::Y);
    let pz = [z.projector(1), z.projector(-1)];
    let py = [y.projector(1), y.projector(-1)];
    KrausSet::from_fn(m_max, n_max, |m, n| {
        let cx = axis_coefficients(profile.depth_z, lin, m);
        let cy = axis_coefficients(profile.depth_y, circ, n);
        let mut k = Mat2::zeros();
        for s in 0..2 {
            for t in 0..2 {
                k += pz[s] * py[t] * (cx[s] * cy[t]);
            }
        }
        JonesMatrix(k)
    })
}

/// Per-sample weights for a period split into `n` midpoint samples.
pub fn quadrature_weights(n: usize, rule: Quadrature) -> Vec<f64> {
    let h = 1.0 / n as f64;
    let mut w = vec![h; n];
    if rule == Quadrature::EndCorrected {
        // ∫₀¹f = hΣf(mid) + Σ_j a_j h^{2j} [f^{(2j−1)}(1) − f^{(2j−1)}(0)],
        // a_j = −B_{2j}(½)/(2j)!; endpoint derivatives from one-sided
        // stencils on the first/last STENCIL samples.
        const A: [f64; 3] = [1.0 / 24.0, -7.0 / 5760.0, 31.0 / 967_680.0];
        let nodes: Vec<f64> = (0..STENCIL).map(|k| k as f64 + 0.5).collect();
        let d = fornberg(0.0, &nodes, 5);
        let take = STENCIL.min(n / 2);
        for k in 0..take {
            let delta = -h * (A[0] * d[1][k] + A[1] * d[3][k] + A[2] * d[5][k]);
            w[k] += delta;
            w[n - 1 - k] += delta;
        }
    }
    w
}

const STENCIL: usize = 8;

/// Finite-difference weights `d[order][node]` for derivatives at `x0`
/// (Fornberg, Math. Comp. 1988).
fn fornberg(x0: f64, nodes: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut d = vec![vec![0.0; n]; max_order + 1];
    d[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - x0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - x0;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    d[k][i] = c1 * (k as f64 * d[k - 1][i - 1] - c5 * d[k][i - 1]) / c2;
                }
                d[0][i] = -c1 * c5 * d[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                d[k][j] = (c4 * d[k][j] - k as f64 * d[k - 1][j]) / c3;
            }
            d[0][j] = c4 * d[0][j] / c3;
        }
        c1 = c2;
    }
    d
}

/// `exp(−2πi·m·(k + ½)/n)` with exact integer argument reduction.
fn twiddle(m: i32, k: usize, n: usize) -> C64 {
    let period = 2 * n as i64;
    let num = (i64::from(m) * (2 * k as i64 + 1)).rem_euclid(period);
    let arg = -TAU * num as f64 / period as f64;
    c(arg.cos(), arg.sin())
}

/// 1-D decomposition of samples covering one period.
pub fn kraus_decompose_1d(samples: &[JonesMatrix], m_max: usize, rule: Quadrature) -> Result<Vec<JonesMatrix>> {
    let n = samples.len();
    let need = 4 * (m_max + 1);
    if n < need.max(MIN_DECOMPOSE_GRID) {
        return Err(PovmError::Aliasing {
            nx: n,
            ny: 1,
            m_max,
            n_max: 0,
            need_x: need.max(MIN_DECOMPOSE_GRID),
            need_y: 1,
        });
    }
    let w = quadrature_weights(n, rule);
    Ok((-(m_max as i32)..=m_max as i32)
        .map(|m| {
            let mut acc = Mat2::zeros();
            for (k, s) in samples.iter().enumerate() {
                acc += s.0 * (twiddle(m, k, n) * w[k]);
            }
            JonesMatrix(acc)
        })
        .collect())
}

/// Grid route: separable quadrature over the sampled unit cell. The
/// aliasing guard requires at least `4·(bound + 1)` samples per axis.
pub fn kraus_decompose(field: &JonesField, m_max: usize, n_max: usize, rule: Quadrature) -> Result<KrausSet> {
    let need_x = (4 * (m_max + 1)).max(MIN_DECOMPOSE_GRID);
    let need_y = (4 * (n_max + 1)).max(MIN_DECOMPOSE_GRID);
    if field.nx < need_x || field.ny < need_y {
        return Err(PovmError::Aliasing {
            nx: field.nx,
            ny: field.ny,
            m_max,
            n_max,
            need_x,
            need_y,
        });
    }
    let wx = quadrature_weights(field.nx, rule);
    let wy = quadrature_weights(field.ny, rule);
    // rows[m][iy] = Σ_ix wx·e^{−2πimx}·J(ix, iy)
    let rows: Vec<Vec<Mat2>> = (-(m_max as i32)..=m_max as i32)
        .into_par_iter()
        .map(|m| {
            let tw: Vec<C64> = (0..field.nx).map(|ix| twiddle(m, ix, field.nx) * wx[ix]).collect();
            (0..field.ny)
                .map(|iy| {
                    let mut acc = Mat2::zeros();
                    for (ix, t) in tw.iter().enumerate() {
                        acc += field.at(ix, iy).0 * *t;
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let cols: Vec<Vec<C64>> = (-(n_max as i32)..=n_max as i32)
        .map(|n| (0..field.ny).map(|iy| twiddle(n, iy, field.ny) * wy[iy]).collect())
        .collect();
    Ok(KrausSet::from_fn(m_max, n_max, |m, n| {
        let row = &rows[(m + m_max as i32) as usize];
        let tw = &cols[(n + n_max as i32) as usize];
        let mut acc = Mat2::zeros();
        for (iy, t) in tw.iter().enumerate() {
            acc += row[iy] * *t;
        }
        JonesMatrix(acc)
    }))
}

/// Port label `(s_x, s_y)`; a zero entry means the port carries no sign in
/// that basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PortLabel {
    pub sx: i8,
    pub sy: i8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub label: PortLabel,
    pub order: DiffractionOrder,
}

/// Detector ports wired to diffraction orders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortAssignment {
    ports: Vec<Port>,
}

impl PortAssignment {
    pub fn new(ports: Vec<Port>) -> Result<Self> {
        if ports.is_empty() || ports.len() > 4 {
            return Err(PovmError::BadPorts(format!("{} ports; expected 1 to 4", ports.len())));
        }
        let orders: BTreeSet<_> = ports.iter().map(|p| p.order).collect();
        if orders.len() != ports.len() {
            return Err(PovmError::BadPorts("ports must use distinct orders".into()));
        }
        for p in &ports {
            if ![-1, 0, 1].contains(&p.label.sx) || ![-1, 0, 1].contains(&p.label.sy) {
                return Err(PovmError::BadPorts(format!("label {:?} outside {{−1, 0, +1}}", p.label)));
            }
        }
        Ok(Self { ports })
    }

    /// Four ports `(s_x, s_y) → (m, n)`, listed for labels `(+,+), (+,−),
    /// (−,+), (−,−)`.
    pub fn quad(orders: [DiffractionOrder; 4]) -> Result<Self> {
        let labels = [(1, 1), (1, -1), (-1, 1), (-1, -1)];
        Self::new(
            labels
                .iter()
                .zip(orders)
                .map(|(&(sx, sy), order)| Port {
                    label: PortLabel { sx, sy },
                    order,
                })
                .collect(),
        )
    }

    /// Ports at orders `(±1, ±1)`, sign of the order equal to the label.
    pub fn standard() -> Self {
        let o = DiffractionOrder::new;
        Self::quad([o(1, 1), o(1, -1), o(-1, 1), o(-1, -1)]).expect("distinct orders")
    }

    /// Two ports carrying only an x sign.
    pub fn x_only(plus: DiffractionOrder, minus: DiffractionOrder) -> Result<Self> {
        Self::new(vec![
            Port {
                label: PortLabel { sx: 1, sy: 0 },
                order: plus,
            },
            Port {
                label: PortLabel { sx: -1, sy: 0 },
                order: minus,
            },
        ])
    }

    /// Two ports carrying only a y sign.
    pub fn y_only(plus: DiffractionOrder, minus: DiffractionOrder) -> Result<Self> {
        Self::new(vec![
            Port {
                label: PortLabel { sx: 0, sy: 1 },
                order: plus,
            },
            Port {
                label: PortLabel { sx: 0, sy: -1 },
                order: minus,
            },
        ])
    }

    /// Exchanges the roles of the two axes: labels `(s_x, s_y) → (s_y, s_x)`
    /// and orders `(m, n) → (n, m)`.
    pub fn transposed(&self) -> Self {
        Self {
            ports: self
                .ports
                .iter()
                .map(|p| Port {
                    label: PortLabel {
                        sx: p.label.sy,
                        sy: p.label.sx,
                    },
                    order: DiffractionOrder::new(p.order.n, p.order.m),
                })
                .collect(),
        }
    }

    pub fn ports(&self) -> &[Port] {
        &self.ports
    }
}

/// Signal-port POVM of one analyzer: elements `E_port` and labels. Anything
/// outside the ports is loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PortPovm {
    pub labels: Vec<PortLabel>,
    pub elements: Vec<Mat2>,
}

impl PortPovm {
    pub fn from_kraus(kraus: &KrausSet, ports: &PortAssignment) -> Result<Self> {
        let mut elements = Vec::with_capacity(ports.ports.len());
        for p in &ports.ports {
            let e = kraus.element(p.order).ok_or(PovmError::PortOutsideTruncation {
                m: p.order.m,
                n: p.order.n,
                m_max: kraus.m_max,
                n_max: kraus.n_max,
            })?;
            elements.push(e);
        }
        Ok(Self {
            labels: ports.ports.iter().map(|p| p.label).collect(),
            elements,
        })
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// `I − Σ E_port`: the loss element.
    pub fn loss_element(&self) -> Mat2 {
        self.elements.iter().fold(Mat2::identity(), |acc, e| acc - e)
    }

    pub fn probabilities(&self, rho: &Mat2) -> PortProbabilities {
        let per_port: Vec<f64> = self
            .elements
            .iter()
            .map(|e| {
                let p = (e * rho).trace().re;
                if p < 0.0 {
                    0.0
                } else {
                    p
                }
            })
            .collect();
        let loss = 1.0 - per_port.iter().sum::<f64>();
        PortProbabilities { per_port, loss }
    }

    /// Capture-conditioned visibilities from `H, V, R, L` calibration inputs.
    pub fn calibrate(&self) -> Result<Visibilities> {
        let cond = |s: PolarizationState| {
            let p = self.probabilities(&s.density());
            let cap: f64 = p.per_port.iter().sum();
            let mean = |f: fn(&PortLabel) -> i8| {
                if cap <= NO_SIGNAL {
                    return 0.0;
                }
                self.labels.iter().zip(&p.per_port).map(|(l, q)| f64::from(f(l)) * q).sum::<f64>() / cap
            };
            (cap, mean(|l| l.sx), mean(|l| l.sy))
        };
        let (ch, zh, _) = cond(PolarizationState::h());
        let (cv, zv, _) = cond(PolarizationState::v());
        let (cr, _, yr) = cond(PolarizationState::r());
        let (cl, _, yl) = cond(PolarizationState::l());
        let capture = 0.25 * (ch + cv + cr + cl);
        if capture <= NO_SIGNAL {
            return Err(PovmError::NoSignal(capture));
        }
        Ok(Visibilities {
            eta_z: 0.5 * (zh - zv),
            eta_y: 0.5 * (yr - yl),
            capture,
        })
    }

    pub fn parity_operators(&self) -> ParityOperators {
        let sum = |f: fn(&PortLabel) -> i8| {
            self.labels
                .iter()
                .zip(&self.elements)
                .fold(Mat2::zeros(), |acc, (l, e)| acc + e * c(f64::from(f(l)), 0.0))
        };
        let z_eff = sum(|l| l.sx);
        let y_eff = sum(|l| l.sy);
        let (z_bias, y_bias) = match self.calibrate() {
            Ok(v) => (
                frobenius(&(z_eff - pauli(Axis::Z).matrix.0 * c(v.eta_z * v.capture, 0.0))),
                frobenius(&(y_eff - pauli(Axis::Y).matrix.0 * c(v.eta_y * v.capture, 0.0))),
            ),
            Err(_) => (frobenius(&z_eff), frobenius(&y_eff)),
        };
        ParityOperators {
            z_eff: JonesMatrix(z_eff),
            y_eff: JonesMatrix(y_eff),
            z_bias,
            y_bias,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortProbabilities {
    pub per_port: Vec<f64>,
    pub loss: f64,
}

/// Per-arm analyzer sharpness. `eta_z`, `eta_y` are signed: a negative value
/// means the port labels are reversed relative to the basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visibilities {
    pub eta_z: f64,
    pub eta_y: f64,
    /// Mean probability of landing in a signal port over `H, V, R, L`.
    pub capture: f64,
}

impl Visibilities {
    pub const IDEAL: Visibilities = Visibilities {
        eta_z: 1.0,
        eta_y: 1.0,
        capture: 1.0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParityOperators {
    /// `Σ s_x·E_port`
    pub z_eff: JonesMatrix,
    /// `Σ s_y·E_port`
    pub y_eff: JonesMatrix,
    /// `‖Z_eff − η_z·capture·σz‖_F`
    pub z_bias: f64,
    /// `‖Y_eff − η_y·capture·σy‖_F`
    pub y_bias: f64,
}

fn physical_povm(kraus: &KrausSet, ports: &PortAssignment) -> Result<PortPovm> {
    kraus.ensure_physical(COMPLETENESS_TOL)?;
    PortPovm::from_kraus(kraus, ports)
}

pub fn port_probabilities(kraus: &KrausSet, ports: &PortAssignment, input: &Mat2) -> Result<PortProbabilities> {
    Ok(physical_povm(kraus, ports)?.probabilities(input))
}

pub fn calibrate_visibilities(kraus: &KrausSet, ports: &PortAssignment) -> Result<Visibilities> {
    physical_povm(kraus, ports)?.calibrate()
}

pub fn effective_parity_operators(kraus: &KrausSet, ports: &PortAssignment) -> Result<ParityOperators> {
    Ok(physical_povm(kraus, ports)?.parity_operators())
}

/// Bloch decomposition `E = a0·I + ax·σx + ay·σy + az·σz` of a Hermitian
/// element.
pub fn bloch(e: &Mat2) -> [f64; 4] {
    let comp = |ax: Option<Axis>| {
        let s = ax.map_or(Mat2::identity(), |a| pauli(a).matrix.0);
        0.5 * (s * e).trace().re
    };
    [comp(None), comp(Some(Axis::X)), comp(Some(Axis::Y)), comp(Some(Axis::Z))]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingOrder {
    pub m: i32,
    pub kraus: JonesMatrix,
    pub kraus_norm: f64,
    /// `[a0, ax, ay, az]` of `K†K`.
    pub bloch: [f64; 4],
    /// `K†K` depends on a single Pauli axis.
    pub single_basis: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingReport {
    pub depth_z: f64,
    pub depth_y: f64,
    pub orders: Vec<MixingOrder>,
    /// Best `η_z` over all four-port assignments.
    pub best_eta_z: f64,
    pub best_eta_y: f64,
    /// Best `min(η_z, η_y)` over all four-port assignments.
    pub best_joint: f64,
    /// Orders wired to `(+,+), (+,−), (−,+), (−,−)` in the best joint assignment.
    pub best_assignment: [i32; 4],
    pub threshold: f64,
    /// Some assignment reaches `min(η_z, η_y) > threshold`.
    pub dual_resolvable: bool,
}

/// Both ramps along x: `J(x) = exp(iθz(x)σz)·exp(iθy(x)σy)`. Decomposes into
/// 1-D orders and searches every assignment of four distinct orders among
/// `|m| ≤ 3` to the signed ports.
pub fn same_axis_mixing_demo(depth_z: f64, depth_y: f64, samples: usize, m_max: usize) -> Result<MixingReport> {
    for (name, v) in [("depth_z", depth_z), ("depth_y", depth_y)] {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(PovmError::Depth { name, value: v });
        }
    }
    let field: Vec<JonesMatrix> = (0..samples)
        .map(|k| {
            let u = (k as f64 + 0.5) / samples as f64;
            JonesMatrix::exp_pauli(Axis::Z, TAU * depth_z * u) * JonesMatrix::exp_pauli(Axis::Y, TAU * depth_y * u)
        })
        .collect();
    let ks = kraus_decompose_1d(&field, m_max, Quadrature::Midpoint)?;
    let orders: Vec<MixingOrder> = ks
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let e = k.0.adjoint() * k.0;
            let b = bloch(&e);
            let tol = 1e-9;
            let nonzero = [b[1], b[2], b[3]].iter().filter(|v| v.abs() > tol).count();
            MixingOrder {
                m: i as i32 - m_max as i32,
                kraus: *k,
                kraus_norm: frobenius(&k.0),
                bloch: b,
                single_basis: nonzero <= 1,
            }
        })
        .collect();

    let search = 3.min(m_max as i32);
    let cands: Vec<i32> = (-search..=search).collect();
    let element = |m: i32| -> Mat2 {
        let k = &ks[(m + m_max as i32) as usize].0;
        k.adjoint() * k
    };
    let labels = [(1i8, 1i8), (1, -1), (-1, 1), (-1, -1)];
    let mut best_z: f64 = 0.0;
    let mut best_y: f64 = 0.0;
    let mut best_joint = f64::NEG_INFINITY;
    let mut best_assignment = [0; 4];
    for &a in &cands {
        for &b in &cands {
            for &cc in &cands {
                for &d in &cands {
                    let pick = [a, b, cc, d];
                    if (0..4).any(|i| (i + 1..4).any(|j| pick[i] == pick[j])) {
                        continue;
                    }
                    let povm = PortPovm {
                        labels: labels.iter().map(|&(sx, sy)| PortLabel { sx, sy }).collect(),
                        elements: pick.iter().map(|&m| element(m)).collect(),
                    };
                    let Ok(v) = povm.calibrate() else { continue };
                    best_z = best_z.max(v.eta_z);
                    best_y = best_y.max(v.eta_y);
                    let joint = v.eta_z.min(v.eta_y);
                    if joint > best_joint {
                        best_joint = joint;
                        best_assignment = pick;
                    }
                }
            }
        }
    }
    let threshold = 1e-6;
    Ok(MixingReport {
        depth_z,
        depth_y,
        orders,
        best_eta_z: best_z,
        best_eta_y: best_y,
        best_joint,
        best_assignment,
        threshold,
        dual_resolvable: best_joint > threshold,
    })
}
