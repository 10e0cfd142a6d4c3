//! Two-photon coincidence statistics and the two-basis entanglement witness.
//!
//! Each arm is an [`AnalyzerModel`]. A joint table holds the probability that
//! arm A registers port `i` and arm B registers port `k` in the same gate;
//! everything else (non-signal orders, missed detections, multi-click gates)
//! is loss. Every port carries a label `(s_x, s_y)`, and the correlators are
//! coincidence-conditioned means of the label products.
//!
//! The witness is reported in two modes:
//!
//! * direct `W = η_z² + η_y² − |C_z| − |C_y|` with observed correlators,
//!   where `η²` is the product of the two arms' visibilities;
//! * auxiliary `W_aux = 1 − |C_z|/(η_zA η_zB) − |C_y|/(η_yA η_yB)`, which is
//!   negative only for entangled states when the visibility model holds.

use crate::polarization::{c, kron, pauli, Axis, BellKind, JonesMatrix, Mat2, Mat4, TwoQubitState};
use crate::povm::{KrausSet, PortAssignment, PortLabel, PortPovm, PovmError, Visibilities, COMPLETENESS_TOL};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WitnessError {
    #[error("{name} = {value}: {reason}")]
    Invalid {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("incompatible analyzers: {0}")]
    Incompatible(&'static str),
    #[error("no coincidences recorded")]
    NoCoincidences,
    #[error("sequential runs need an even number of pairs, got {0}")]
    OddPairs(u64),
    #[error("table shape does not match its labels")]
    Shape,
    #[error(transparent)]
    Povm(#[from] PovmError),
}

type Result<T> = std::result::Result<T, WitnessError>;

/// Below this many coincidences no standard error is reported.
pub const MIN_COINCIDENCES_FOR_SE: u64 = 100;
pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// Generator for one independent task. `domain` separates sampling,
/// bootstrap and replicate streams; `index` selects the task within it.
pub fn task_rng(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 48) | (index & ((1 << 48) - 1)));
    rng
}

pub(crate) const STREAM_SAMPLE: u64 = 1;
pub(crate) const STREAM_BOOTSTRAP: u64 = 2;
pub(crate) const STREAM_REPLICATE: u64 = 3;

/// Multinomial draw by a chain of conditional binomials.
pub fn multinomial<R: Rng + ?Sized>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut tail: Vec<f64> = vec![0.0; probs.len() + 1];
    for i in (0..probs.len()).rev() {
        tail[i] = tail[i + 1] + probs[i].max(0.0);
    }
    let mut left = n;
    let mut out = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        let k = if left == 0 {
            0
        } else if i + 1 == probs.len() {
            left
        } else {
            let q = if tail[i] > 0.0 {
                (p.max(0.0) / tail[i]).clamp(0.0, 1.0)
            } else {
                0.0
            };
            Binomial::new(left, q).expect("probability in [0, 1]").sample(rng)
        };
        left -= k;
        out.push(k);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Basis {
    Z,
    Y,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnalyzerKind {
    /// Diffractive analyzer: signal-port POVM of a Kraus set.
    Metasurface(PortPovm),
    /// Polarizing beam splitter, preceded in the Y configuration by the
    /// quarter-wave plate `exp(−iπ/4·σx)` that maps R, L onto H, V.
    SequentialPbs { basis: Basis, visibility: f64 },
    /// Joint projection onto the Bell basis; both arms must use it.
    IdealBellParity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzerModel {
    pub kind: AnalyzerKind,
    /// Probability that a photon reaching a port is detected.
    pub efficiency: f64,
    /// Probability of a dark count per port per gate.
    pub dark_count: f64,
}

fn check_unit(name: &'static str, v: f64, open_top: bool) -> Result<()> {
    let ok = v.is_finite() && v >= 0.0 && if open_top { v < 1.0 } else { v <= 1.0 };
    if ok {
        Ok(())
    } else {
        Err(WitnessError::Invalid {
            name,
            value: v,
            reason: if open_top { "must lie in [0, 1)" } else { "must lie in [0, 1]" },
        })
    }
}

impl AnalyzerModel {
    pub fn metasurface(kraus: &KrausSet, ports: &PortAssignment) -> Result<Self> {
        kraus.ensure_physical(COMPLETENESS_TOL)?;
        Ok(Self::ideal(AnalyzerKind::Metasurface(PortPovm::from_kraus(kraus, ports)?)))
    }

    pub fn pbs(basis: Basis, visibility: f64) -> Result<Self> {
        check_unit("visibility", visibility, false)?;
        Ok(Self::ideal(AnalyzerKind::SequentialPbs { basis, visibility }))
    }

    pub fn bell_parity() -> Self {
        Self::ideal(AnalyzerKind::IdealBellParity)
    }

    fn ideal(kind: AnalyzerKind) -> Self {
        Self {
            kind,
            efficiency: 1.0,
            dark_count: 0.0,
        }
    }

    pub fn with_detectors(mut self, efficiency: f64, dark_count: f64) -> Result<Self> {
        check_unit("efficiency", efficiency, false)?;
        check_unit("dark_count", dark_count, true)?;
        self.efficiency = efficiency;
        self.dark_count = dark_count;
        Ok(self)
    }

    /// Per-port POVM; `None` for the joint Bell analyzer.
    pub fn port_povm(&self) -> Option<PortPovm> {
        match &self.kind {
            AnalyzerKind::Metasurface(p) => Some(p.clone()),
            AnalyzerKind::SequentialPbs { basis, visibility } => {
                let z = pauli(Axis::Z).matrix.0;
                let s = match basis {
                    Basis::Z => z,
                    Basis::Y => {
                        let q = JonesMatrix::exp_pauli(Axis::X, -FRAC_PI_4).0;
                        q.adjoint() * z * q
                    }
                };
                let half = c(0.5, 0.0);
                let v = c(*visibility, 0.0);
                let (plus, minus) = match basis {
                    Basis::Z => ((1, 0), (-1, 0)),
                    Basis::Y => ((0, 1), (0, -1)),
                };
                Some(PortPovm {
                    labels: vec![PortLabel { sx: plus.0, sy: plus.1 }, PortLabel { sx: minus.0, sy: minus.1 }],
                    elements: vec![(Mat2::identity() + s * v) * half, (Mat2::identity() - s * v) * half],
                })
            }
            AnalyzerKind::IdealBellParity => None,
        }
    }

    /// Calibrated visibilities of this arm.
    pub fn visibilities(&self) -> Result<Visibilities> {
        match &self.kind {
            AnalyzerKind::Metasurface(p) => Ok(p.calibrate()?),
            AnalyzerKind::SequentialPbs { basis, visibility } => Ok(match basis {
                Basis::Z => Visibilities {
                    eta_z: *visibility,
                    eta_y: 0.0,
                    capture: 1.0,
                },
                Basis::Y => Visibilities {
                    eta_z: 0.0,
                    eta_y: *visibility,
                    capture: 1.0,
                },
            }),
            AnalyzerKind::IdealBellParity => Ok(Visibilities::IDEAL),
        }
    }
}

/// Exact joint distribution: `probs[i][k]` for coincidence of port `i` (arm
/// A) and port `k` (arm B), plus loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub row_labels: Vec<PortLabel>,
    pub col_labels: Vec<PortLabel>,
    pub probs: Vec<Vec<f64>>,
    pub loss: f64,
}

impl JointTable {
    pub fn coincidence(&self) -> f64 {
        self.probs.iter().flatten().sum()
    }

    /// Cell probabilities row-major, then loss.
    fn flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.probs.iter().flatten().copied().collect();
        v.push(self.loss.max(0.0));
        v
    }
}

impl JointTable {
    /// Coincidence probability and conditional moments
    /// `(q, E x, E y, E x², E y², E xy)` of the label products.
    pub fn label_moments(&self) -> [f64; 6] {
        let mut m = [0.0; 6];
        for (i, row) in self.probs.iter().enumerate() {
            for (k, &p) in row.iter().enumerate() {
                let (a, b) = (self.row_labels[i], self.col_labels[k]);
                let x = f64::from(a.sx * b.sx);
                let y = f64::from(a.sy * b.sy);
                m[0] += p;
                m[1] += p * x;
                m[2] += p * y;
                m[3] += p * x * x;
                m[4] += p * y * y;
                m[5] += p * x * y;
            }
        }
        let q = m[0];
        if q > 0.0 {
            for v in &mut m[1..] {
                *v /= q;
            }
        }
        m
    }
}

/// Registration channel of one arm: `m[i][j]` is the probability that the
/// arm registers port `i` (`i = n`: nothing registered) given the photon left
/// through port `j` (`j = n`: photon lost). Gates with more than one click
/// are discarded.
#[allow(clippy::needless_range_loop)]
fn arm_channel(model: &AnalyzerModel, n: usize) -> Vec<Vec<f64>> {
    let (eff, d) = (model.efficiency, model.dark_count);
    let quiet = (1.0 - d).powi(n as i32 - 1);
    let mut m = vec![vec![0.0; n + 1]; n + 1];
    for j in 0..=n {
        for i in 0..n {
            m[i][j] = if j == n {
                d * quiet
            } else if i == j {
                eff * quiet
            } else {
                (1.0 - eff) * d * quiet
            };
        }
        m[n][j] = 1.0 - (0..n).map(|i| m[i][j]).sum::<f64>();
    }
    m
}

/// Sign patterns `(parity_z, parity_y)` of the Bell outcomes, in
/// [`BellKind::ALL`] order.
fn bell_row_labels() -> Vec<PortLabel> {
    BellKind::ALL
        .iter()
        .map(|k| {
            let (z, y) = k.parity_signs();
            PortLabel { sx: z, sy: y }
        })
        .collect()
}

pub fn joint_probabilities(rho: &TwoQubitState, a: &AnalyzerModel, b: &AnalyzerModel) -> Result<JointTable> {
    match (&a.kind, &b.kind) {
        (AnalyzerKind::IdealBellParity, AnalyzerKind::IdealBellParity) => {
            if a.dark_count > 0.0 || b.dark_count > 0.0 {
                return Err(WitnessError::Incompatible(
                    "dark counts are not modeled for the joint Bell analyzer",
                ));
            }
            let eff = a.efficiency * b.efficiency;
            let probs: Vec<Vec<f64>> = BellKind::ALL
                .iter()
                .map(|k| vec![rho.population(&k.vector()).max(0.0) * eff])
                .collect();
            let loss = 1.0 - probs.iter().flatten().sum::<f64>();
            Ok(JointTable {
                row_labels: bell_row_labels(),
                col_labels: vec![PortLabel { sx: 1, sy: 1 }],
                probs,
                loss,
            })
        }
        (AnalyzerKind::IdealBellParity, _) | (_, AnalyzerKind::IdealBellParity) => Err(WitnessError::Incompatible(
            "the Bell-parity analyzer is joint and has no per-arm port mapping",
        )),
        _ => {
            let pa = a.port_povm().expect("per-arm analyzer");
            let pb = b.port_povm().expect("per-arm analyzer");
            let mut ea = pa.elements.clone();
            ea.push(pa.loss_element());
            let mut eb = pb.elements.clone();
            eb.push(pb.loss_element());
            let r: &Mat4 = rho.rho();
            let q: Vec<Vec<f64>> = ea
                .iter()
                .map(|x| eb.iter().map(|y| (kron(x, y) * r).trace().re.max(0.0)).collect())
                .collect();
            let (na, nb) = (pa.len(), pb.len());
            let ma = arm_channel(a, na);
            let mb = arm_channel(b, nb);
            let mut probs = vec![vec![0.0; nb]; na];
            for (i, row) in probs.iter_mut().enumerate() {
                for (k, cell) in row.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for (j, qj) in q.iter().enumerate() {
                        if ma[i][j] == 0.0 {
                            continue;
                        }
                        for (l, &qjl) in qj.iter().enumerate() {
                            s += ma[i][j] * mb[k][l] * qjl;
                        }
                    }
                    *cell = s;
                }
            }
            let loss = 1.0 - probs.iter().flatten().sum::<f64>();
            Ok(JointTable {
                row_labels: pa.labels,
                col_labels: pb.labels,
                probs,
                loss,
            })
        }
    }
}

fn has_z(labels: &[PortLabel]) -> bool {
    labels.iter().any(|l| l.sx != 0)
}

fn has_y(labels: &[PortLabel]) -> bool {
    labels.iter().any(|l| l.sy != 0)
}

/// Coincidence-conditioned `(E[s_xA s_xB], E[s_yA s_yB])`; a correlator is
/// `None` when either arm carries no label for that basis.
pub fn correlators_of(table: &JointTable) -> (Option<f64>, Option<f64>) {
    let total = table.coincidence();
    let moment = |f: fn(&PortLabel) -> i8| {
        let mut s = 0.0;
        for (i, row) in table.probs.iter().enumerate() {
            for (k, p) in row.iter().enumerate() {
                s += f64::from(f(&table.row_labels[i]) * f(&table.col_labels[k])) * p;
            }
        }
        if total > 0.0 {
            s / total
        } else {
            0.0
        }
    };
    let z = (has_z(&table.row_labels) && has_z(&table.col_labels)).then(|| moment(|l| l.sx));
    let y = (has_y(&table.row_labels) && has_y(&table.col_labels)).then(|| moment(|l| l.sy));
    (z, y)
}

pub fn exact_correlators(rho: &TwoQubitState, a: &AnalyzerModel, b: &AnalyzerModel) -> Result<(Option<f64>, Option<f64>)> {
    Ok(correlators_of(&joint_probabilities(rho, a, b)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    EntangledCertified,
    NotCertified,
}

impl Verdict {
    fn from_w(w: Option<f64>) -> Self {
        match w {
            Some(w) if w < 0.0 => Verdict::EntangledCertified,
            _ => Verdict::NotCertified,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Flag {
    MissingZ,
    MissingY,
    ZeroVisibilityZ,
    ZeroVisibilityY,
    OverCorrectionZ,
    OverCorrectionY,
    InsufficientCoincidences,
}

/// Visibility products `(η_zA·η_zB, η_yA·η_yB)`.
fn eta_products(va: &Visibilities, vb: &Visibilities) -> (f64, f64) {
    (va.eta_z * vb.eta_z, va.eta_y * vb.eta_y)
}

const ZERO_VIS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessValues {
    pub c_z_corr: Option<f64>,
    pub c_y_corr: Option<f64>,
    pub w_direct: Option<f64>,
    pub w_sep_aux: Option<f64>,
    pub verdict_direct: Verdict,
    pub verdict_aux: Verdict,
    pub flags: Vec<Flag>,
}

/// Both witness modes from observed correlators. `se_corr` are standard
/// errors of the corrected correlators, used only for the over-correction
/// flag (`|C_corr| > 1 + 3·SE`).
pub fn witness(c_z: Option<f64>, c_y: Option<f64>, vis_a: &Visibilities, vis_b: &Visibilities, se_corr: (f64, f64)) -> WitnessValues {
    let (kz, ky) = eta_products(vis_a, vis_b);
    let mut flags = Vec::new();
    if c_z.is_none() {
        flags.push(Flag::MissingZ);
    }
    if c_y.is_none() {
        flags.push(Flag::MissingY);
    }
    let zero_z = kz.abs() <= ZERO_VIS;
    let zero_y = ky.abs() <= ZERO_VIS;
    if zero_z {
        flags.push(Flag::ZeroVisibilityZ);
    }
    if zero_y {
        flags.push(Flag::ZeroVisibilityY);
    }
    let corr = |cv: Option<f64>, k: f64, zero: bool| cv.filter(|_| !zero).map(|v| v / k);
    let c_z_corr = corr(c_z, kz, zero_z);
    let c_y_corr = corr(c_y, ky, zero_y);
    if c_z_corr.is_some_and(|v| v.abs() > 1.0 + 3.0 * se_corr.0 + 1e-12) {
        flags.push(Flag::OverCorrectionZ);
    }
    if c_y_corr.is_some_and(|v| v.abs() > 1.0 + 3.0 * se_corr.1 + 1e-12) {
        flags.push(Flag::OverCorrectionY);
    }
    let w_direct = match (c_z, c_y) {
        (Some(z), Some(y)) => Some(kz + ky - z.abs() - y.abs()),
        _ => None,
    };
    let w_sep_aux = match (c_z_corr, c_y_corr) {
        (Some(z), Some(y)) => Some(1.0 - z.abs() - y.abs()),
        _ => None,
    };
    WitnessValues {
        c_z_corr,
        c_y_corr,
        w_direct,
        w_sep_aux,
        verdict_direct: Verdict::from_w(w_direct),
        verdict_aux: Verdict::from_w(w_sep_aux),
        flags,
    }
}

/// Sampled coincidence counts. `counts[i][k]` pairs row port `i` with column
/// port `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoincidenceTable {
    pub row_labels: Vec<PortLabel>,
    pub col_labels: Vec<PortLabel>,
    pub counts: Vec<Vec<u64>>,
    pub loss_count: u64,
    pub n_pairs: u64,
}

impl CoincidenceTable {
    pub fn coincidences(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Counts `round(N·p)` per cell, loss taking the remainder.
    pub fn from_expected(table: &JointTable, n_pairs: u64) -> Self {
        let counts: Vec<Vec<u64>> = table
            .probs
            .iter()
            .map(|r| r.iter().map(|p| (p * n_pairs as f64).round() as u64).collect())
            .collect();
        let used: u64 = counts.iter().flatten().sum();
        Self {
            row_labels: table.row_labels.clone(),
            col_labels: table.col_labels.clone(),
            counts,
            loss_count: n_pairs.saturating_sub(used),
            n_pairs: n_pairs.max(used),
        }
    }

    pub(crate) fn sample<R: Rng + ?Sized>(table: &JointTable, n_pairs: u64, rng: &mut R) -> Self {
        let draws = multinomial(rng, n_pairs, &table.flat());
        Self::from_flat(table.row_labels.clone(), table.col_labels.clone(), &draws)
    }

    fn from_flat(row_labels: Vec<PortLabel>, col_labels: Vec<PortLabel>, draws: &[u64]) -> Self {
        let nc = col_labels.len();
        let counts: Vec<Vec<u64>> = draws[..draws.len() - 1].chunks(nc).map(<[u64]>::to_vec).collect();
        Self {
            row_labels,
            col_labels,
            counts,
            loss_count: draws[draws.len() - 1],
            n_pairs: draws.iter().sum(),
        }
    }

    fn flat_freq(&self) -> Vec<f64> {
        let n = self.n_pairs.max(1) as f64;
        let mut v: Vec<f64> = self.counts.iter().flatten().map(|&k| k as f64 / n).collect();
        v.push(self.loss_count as f64 / n);
        v
    }

    fn validate(&self) -> Result<()> {
        if self.counts.len() != self.row_labels.len() || self.counts.iter().any(|r| r.len() != self.col_labels.len()) {
            return Err(WitnessError::Shape);
        }
        if self.coincidences() + self.loss_count != self.n_pairs {
            return Err(WitnessError::Shape);
        }
        Ok(())
    }

    /// Sufficient statistics of the label products over coincidences.
    fn moments(&self) -> Moments {
        let mut m = Moments::default();
        for (i, row) in self.counts.iter().enumerate() {
            for (k, &n) in row.iter().enumerate() {
                let (a, b) = (self.row_labels[i], self.col_labels[k]);
                let x = f64::from(a.sx * b.sx);
                let y = f64::from(a.sy * b.sy);
                let w = n as f64;
                m.n += n;
                m.sx += w * x;
                m.sy += w * y;
                m.sxx += w * x * x;
                m.syy += w * y * y;
                m.sxy += w * x * y;
            }
        }
        m.has_z = has_z(&self.row_labels) && has_z(&self.col_labels);
        m.has_y = has_y(&self.row_labels) && has_y(&self.col_labels);
        m
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    sx: f64,
    sy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
    has_z: bool,
    has_y: bool,
}

impl Moments {
    fn mean(&self, s: f64) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            s / self.n as f64
        }
    }
}

pub fn simulate_counts(rho: &TwoQubitState, a: &AnalyzerModel, b: &AnalyzerModel, n_pairs: u64, seed: u64) -> Result<CoincidenceTable> {
    let table = joint_probabilities(rho, a, b)?;
    Ok(CoincidenceTable::sample(&table, n_pairs, &mut task_rng(seed, STREAM_SAMPLE, 0)))
}

/// Sharp simultaneous reference: Bell-basis outcomes mapped to their parity
/// sign pairs.
pub fn bell_parity_sampler(rho: &TwoQubitState, n_pairs: u64, seed: u64) -> CoincidenceTable {
    let a = AnalyzerModel::bell_parity();
    simulate_counts(rho, &a, &a, n_pairs, seed).expect("Bell analyzers are compatible")
}

/// Data behind one witness estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Dataset {
    /// Both correlators from one coincidence table.
    Simultaneous { table: CoincidenceTable },
    /// `C_z` and `C_y` from separate runs.
    Sequential { z: CoincidenceTable, y: CoincidenceTable },
}

impl Dataset {
    fn validate(&self) -> Result<()> {
        match self {
            Dataset::Simultaneous { table } => table.validate(),
            Dataset::Sequential { z, y } => z.validate().and(y.validate()),
        }
    }

    fn n_pairs(&self) -> u64 {
        match self {
            Dataset::Simultaneous { table } => table.n_pairs,
            Dataset::Sequential { z, y } => z.n_pairs + y.n_pairs,
        }
    }

    /// `(C_z, C_y, coincidences used)` point estimates.
    fn point(&self) -> (Option<f64>, Option<f64>, u64) {
        match self {
            Dataset::Simultaneous { table } => {
                let m = table.moments();
                (m.has_z.then(|| m.mean(m.sx)), m.has_y.then(|| m.mean(m.sy)), m.n)
            }
            Dataset::Sequential { z, y } => {
                let mz = z.moments();
                let my = y.moments();
                (mz.has_z.then(|| mz.mean(mz.sx)), my.has_y.then(|| my.mean(my.sy)), mz.n + my.n)
            }
        }
    }

    fn resample<R: Rng + ?Sized>(&self, rng: &mut R) -> Dataset {
        let one = |t: &CoincidenceTable, rng: &mut R| {
            let draws = multinomial(rng, t.n_pairs, &t.flat_freq());
            CoincidenceTable::from_flat(t.row_labels.clone(), t.col_labels.clone(), &draws)
        };
        match self {
            Dataset::Simultaneous { table } => Dataset::Simultaneous { table: one(table, rng) },
            Dataset::Sequential { z, y } => {
                let z2 = one(z, rng);
                Dataset::Sequential { z: z2, y: one(y, rng) }
            }
        }
    }

    /// Delta-method variances `(var C_z, var C_y, cov)` of the plug-in means.
    fn delta(&self) -> (f64, f64, f64) {
        let var = |m: &Moments, s: f64, ss: f64| {
            let mu = m.mean(s);
            (m.mean(ss) - mu * mu).max(0.0) / m.n.max(1) as f64
        };
        match self {
            Dataset::Simultaneous { table } => {
                let m = table.moments();
                let cov = (m.mean(m.sxy) - m.mean(m.sx) * m.mean(m.sy)) / m.n.max(1) as f64;
                (var(&m, m.sx, m.sxx), var(&m, m.sy, m.syy), cov)
            }
            Dataset::Sequential { z, y } => {
                let mz = z.moments();
                let my = y.moments();
                (var(&mz, mz.sx, mz.sxx), var(&my, my.sy, my.syy), 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub se_c_z: f64,
    pub se_c_y: f64,
    pub se_w_direct_delta: f64,
    pub se_w_aux_delta: Option<f64>,
    pub se_w_direct_bootstrap: Option<f64>,
    pub se_w_aux_bootstrap: Option<f64>,
    /// Percentile 95% intervals.
    pub ci_w_direct: Option<[f64; 2]>,
    pub ci_w_aux: Option<[f64; 2]>,
    pub bootstrap_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub c_z_obs: Option<f64>,
    pub c_y_obs: Option<f64>,
    pub c_z_corr: Option<f64>,
    pub c_y_corr: Option<f64>,
    pub vis_a: Visibilities,
    pub vis_b: Visibilities,
    pub w_direct: Option<f64>,
    pub w_sep_aux: Option<f64>,
    pub uncertainty: Option<Uncertainty>,
    pub n_used: u64,
    pub n_pairs: u64,
    pub verdict_direct: Verdict,
    pub verdict_aux: Verdict,
    pub flags: Vec<Flag>,
}

impl WitnessReport {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        c_z: Option<f64>,
        c_y: Option<f64>,
        vis_a: &Visibilities,
        vis_b: &Visibilities,
        n_used: u64,
        n_pairs: u64,
        uncertainty: Option<Uncertainty>,
        se_corr: (f64, f64),
    ) -> Self {
        let mut w = witness(c_z, c_y, vis_a, vis_b, se_corr);
        if uncertainty.is_none() && n_pairs > 0 {
            w.flags.push(Flag::InsufficientCoincidences);
        }
        Self {
            c_z_obs: c_z,
            c_y_obs: c_y,
            c_z_corr: w.c_z_corr,
            c_y_corr: w.c_y_corr,
            vis_a: *vis_a,
            vis_b: *vis_b,
            w_direct: w.w_direct,
            w_sep_aux: w.w_sep_aux,
            uncertainty,
            n_used,
            n_pairs,
            verdict_direct: w.verdict_direct,
            verdict_aux: w.verdict_aux,
            flags: w.flags,
        }
    }

    /// Standard error used to size experiments: delta-method SE of the
    /// auxiliary witness.
    pub fn se_w(&self) -> Option<f64> {
        self.uncertainty.as_ref().and_then(|u| u.se_w_aux_delta)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Witness values from exact probabilities (no sampling, no uncertainty).
pub fn exact_report(rho: &TwoQubitState, a: &AnalyzerModel, b: &AnalyzerModel) -> Result<WitnessReport> {
    let (cz, cy) = exact_correlators(rho, a, b)?;
    let (va, vb) = (a.visibilities()?, b.visibilities()?);
    let mut r = WitnessReport::assemble(cz, cy, &va, &vb, 0, 0, None, (0.0, 0.0));
    r.flags.retain(|f| *f != Flag::InsufficientCoincidences);
    Ok(r)
}

fn sgn(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

pub(crate) fn w_values(d: &Dataset, va: &Visibilities, vb: &Visibilities) -> Option<(f64, Option<f64>)> {
    let (cz, cy, n) = d.point();
    if n == 0 {
        return None;
    }
    let w = witness(cz, cy, va, vb, (0.0, 0.0));
    w.w_direct.map(|p| (p, w.w_sep_aux))
}

fn sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn percentile_ci(xs: &mut [f64]) -> [f64; 2] {
    xs.sort_by(f64::total_cmp);
    let at = |q: f64| xs[((q * (xs.len() - 1) as f64).round() as usize).min(xs.len() - 1)];
    [at(0.025), at(0.975)]
}

/// Plug-in correlators, witness, delta-method and bootstrap standard errors.
pub fn estimate_from_counts(
    data: &Dataset,
    vis_a: &Visibilities,
    vis_b: &Visibilities,
    bootstrap_b: usize,
    seed: u64,
) -> Result<WitnessReport> {
    data.validate()?;
    let (cz, cy, n_used) = data.point();
    if n_used == 0 {
        return Err(WitnessError::NoCoincidences);
    }
    let enough = match data {
        Dataset::Simultaneous { table } => table.coincidences() >= MIN_COINCIDENCES_FOR_SE,
        Dataset::Sequential { z, y } => z.coincidences().min(y.coincidences()) >= MIN_COINCIDENCES_FOR_SE,
    };
    let (kz, ky) = eta_products(vis_a, vis_b);
    let uncertainty = enough.then(|| {
        let (vz, vy, cov) = data.delta();
        let (gz, gy) = (sgn(cz.unwrap_or(0.0)), sgn(cy.unwrap_or(0.0)));
        let quad = |a: f64, b: f64| (a * a * vz + b * b * vy + 2.0 * a * b * cov).max(0.0).sqrt();
        let aux_ok = kz.abs() > ZERO_VIS && ky.abs() > ZERO_VIS;
        let mut u = Uncertainty {
            se_c_z: vz.sqrt(),
            se_c_y: vy.sqrt(),
            se_w_direct_delta: quad(gz, gy),
            se_w_aux_delta: aux_ok.then(|| quad(gz / kz, gy / ky)),
            se_w_direct_bootstrap: None,
            se_w_aux_bootstrap: None,
            ci_w_direct: None,
            ci_w_aux: None,
            bootstrap_b,
        };
        if bootstrap_b >= 2 && cz.is_some() && cy.is_some() {
            let reps: Vec<(f64, Option<f64>)> = (0..bootstrap_b as u64)
                .into_par_iter()
                .filter_map(|b| {
                    let mut rng = task_rng(seed, STREAM_BOOTSTRAP, b);
                    w_values(&data.resample(&mut rng), vis_a, vis_b)
                })
                .collect();
            if reps.len() >= 2 {
                let mut wp: Vec<f64> = reps.iter().map(|r| r.0).collect();
                u.se_w_direct_bootstrap = Some(sd(&wp));
                u.ci_w_direct = Some(percentile_ci(&mut wp));
                let mut wa: Vec<f64> = reps.iter().filter_map(|r| r.1).collect();
                if wa.len() >= 2 {
                    u.se_w_aux_bootstrap = Some(sd(&wa));
                    u.ci_w_aux = Some(percentile_ci(&mut wa));
                }
            }
        }
        u
    });
    let se_corr = uncertainty.as_ref().map_or((0.0, 0.0), |u| {
        (
            if kz.abs() > ZERO_VIS { u.se_c_z / kz.abs() } else { 0.0 },
            if ky.abs() > ZERO_VIS { u.se_c_y / ky.abs() } else { 0.0 },
        )
    });
    Ok(WitnessReport::assemble(
        cz,
        cy,
        vis_a,
        vis_b,
        n_used,
        data.n_pairs(),
        uncertainty,
        se_corr,
    ))
}

/// Sequential baseline tables: `N/2` pairs with both arms in the Z
/// configuration, `N/2` in the Y configuration.
pub fn sequential_dataset<R: Rng + ?Sized>(rho: &TwoQubitState, n_total: u64, visibility: f64, rng: &mut R) -> Result<Dataset> {
    if !n_total.is_multiple_of(2) {
        return Err(WitnessError::OddPairs(n_total));
    }
    let z = AnalyzerModel::pbs(Basis::Z, visibility)?;
    let y = AnalyzerModel::pbs(Basis::Y, visibility)?;
    let tz = joint_probabilities(rho, &z, &z)?;
    let ty = joint_probabilities(rho, &y, &y)?;
    let dz = CoincidenceTable::sample(&tz, n_total / 2, rng);
    let dy = CoincidenceTable::sample(&ty, n_total / 2, rng);
    Ok(Dataset::Sequential { z: dz, y: dy })
}

/// Visibilities of one sequential arm: `v` in both bases, full capture.
pub fn sequential_visibilities(visibility: f64) -> Visibilities {
    Visibilities {
        eta_z: visibility,
        eta_y: visibility,
        capture: 1.0,
    }
}

pub fn sequential_run(rho: &TwoQubitState, n_total: u64, visibility: f64, bootstrap_b: usize, seed: u64) -> Result<WitnessReport> {
    let data = sequential_dataset(rho, n_total, visibility, &mut task_rng(seed, STREAM_SAMPLE, 0))?;
    let v = sequential_visibilities(visibility);
    estimate_from_counts(&data, &v, &v, bootstrap_b, seed)
}
