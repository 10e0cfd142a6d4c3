//! Detected pairs needed to reach a target standard error on the witness.
//!
//! For each scheme the standard error of `W_aux` is measured as the spread of
//! seeded Monte Carlo replicates over a geometric ladder of pair counts. A
//! least-squares line through `(ln N, ln SE)` gives the scaling exponent; the
//! required count then follows from `SE = c/√N` as `N = (c/ε)²`, with `c` the
//! geometric mean of `SE·√N` over the ladder.

use crate::polarization::TwoQubitState;
use crate::povm::Visibilities;
use crate::witness::{
    joint_probabilities, sequential_dataset, sequential_visibilities, task_rng, w_values, AnalyzerModel, CoincidenceTable, Dataset, Flag,
    WitnessError, STREAM_REPLICATE,
};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    /// PBS with and without a quarter-wave plate, half the pairs each.
    Sequential { visibility: f64 },
    /// Joint Bell-basis parity readout.
    BellParity,
    /// Two metasurface analyzers read out simultaneously.
    Metasurface { a: AnalyzerModel, b: AnalyzerModel },
}

impl Scheme {
    pub fn name(&self) -> String {
        match self {
            Scheme::Sequential { visibility } if *visibility == 1.0 => "sequential".into(),
            Scheme::Sequential { visibility } => format!("sequential-v{visibility}"),
            Scheme::BellParity => "bell-parity".into(),
            Scheme::Metasurface { .. } => "metasurface".into(),
        }
    }

    fn visibilities(&self) -> Result<(Visibilities, Visibilities), WitnessError> {
        Ok(match self {
            Scheme::Sequential { visibility } => (sequential_visibilities(*visibility), sequential_visibilities(*visibility)),
            Scheme::BellParity => (Visibilities::IDEAL, Visibilities::IDEAL),
            Scheme::Metasurface { a, b } => (a.visibilities()?, b.visibilities()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceSettings {
    /// Pair counts at which the standard error is measured.
    pub ladder: Vec<u64>,
    pub replicates: usize,
    pub seed: u64,
}

/// Fewest replicates per ladder point.
pub const MIN_REPLICATES: usize = 50;
pub const DEFAULT_REPLICATES: usize = 200;

impl Default for ResourceSettings {
    fn default() -> Self {
        Self {
            ladder: vec![1_000, 10_000, 100_000, 1_000_000],
            replicates: DEFAULT_REPLICATES,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SePoint {
    pub n: u64,
    pub se: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceRow {
    pub scheme: String,
    pub epsilon: f64,
    /// `None` when the witness cannot be formed (unbounded).
    pub n_required: Option<u64>,
    /// Free-fit slope of `ln SE` against `ln N`.
    pub exponent: Option<f64>,
    /// RMS residual of that fit in `ln SE`.
    pub residual: Option<f64>,
    /// `c` in `SE = c/√N`.
    pub coefficient: Option<f64>,
    pub points: Vec<SePoint>,
    pub flags: Vec<Flag>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceTable {
    pub rows: Vec<ResourceRow>,
    /// `N_required(sequential) / N_required(bell-parity)` when both exist.
    pub sequential_over_simultaneous: Option<f64>,
}

impl ResourceTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scheme,epsilon,n_required,exponent,residual\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "".to_string(), |x| format!("{x}"));
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.scheme,
                r.epsilon,
                r.n_required.map_or_else(|| "unbounded".to_string(), |n| n.to_string()),
                opt(r.exponent),
                opt(r.residual),
            ));
        }
        out
    }
}

/// Ordinary least squares `y = a + b·x`; returns `(a, b, rms residual)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let a = my - b * mx;
    let rms = (x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum::<f64>() / n).sqrt();
    (a, b, rms)
}

fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn replicate_w(
    scheme: &Scheme,
    rho: &TwoQubitState,
    n: u64,
    vis: &(Visibilities, Visibilities),
    seed: u64,
    index: u64,
) -> Result<Option<f64>, WitnessError> {
    let mut rng = task_rng(seed, STREAM_REPLICATE, index);
    let data = match scheme {
        Scheme::Sequential { visibility } => sequential_dataset(rho, n, *visibility, &mut rng)?,
        Scheme::BellParity => {
            let a = AnalyzerModel::bell_parity();
            Dataset::Simultaneous {
                table: CoincidenceTable::sample(&joint_probabilities(rho, &a, &a)?, n, &mut rng),
            }
        }
        Scheme::Metasurface { a, b } => Dataset::Simultaneous {
            table: CoincidenceTable::sample(&joint_probabilities(rho, a, b)?, n, &mut rng),
        },
    };
    Ok(w_values(&data, &vis.0, &vis.1).and_then(|w| w.1))
}

const ZERO_VIS: f64 = 1e-9;

/// Large-`N` coefficient `c` in `SE(W_aux) = c/√N` from exact probabilities
/// (delta method). `None` when the witness cannot be formed.
pub fn analytic_coefficient(scheme: &Scheme, rho: &TwoQubitState) -> Result<Option<f64>, WitnessError> {
    let (va, vb) = scheme.visibilities()?;
    let (kz, ky) = (va.eta_z * vb.eta_z, va.eta_y * vb.eta_y);
    if kz.abs() <= ZERO_VIS || ky.abs() <= ZERO_VIS {
        return Ok(None);
    }
    let sgn = |v: f64| if v < 0.0 { -1.0 } else { 1.0 };
    let var = |m: &[f64; 6], i: usize| m[i + 2] - m[i] * m[i];
    Ok(match scheme {
        Scheme::Sequential { visibility } => {
            let z = AnalyzerModel::pbs(crate::witness::Basis::Z, *visibility)?;
            let y = AnalyzerModel::pbs(crate::witness::Basis::Y, *visibility)?;
            let mz = joint_probabilities(rho, &z, &z)?.label_moments();
            let my = joint_probabilities(rho, &y, &y)?.label_moments();
            if mz[0] <= 0.0 || my[0] <= 0.0 {
                return Ok(None);
            }
            let v = 2.0 * (var(&mz, 1) / (kz * kz * mz[0]) + var(&my, 2) / (ky * ky * my[0]));
            Some(v.max(0.0).sqrt())
        }
        Scheme::BellParity | Scheme::Metasurface { .. } => {
            let t = match scheme {
                Scheme::Metasurface { a, b } => joint_probabilities(rho, a, b)?,
                _ => {
                    let a = AnalyzerModel::bell_parity();
                    joint_probabilities(rho, &a, &a)?
                }
            };
            let m = t.label_moments();
            if m[0] <= 0.0 {
                return Ok(None);
            }
            let (a, b) = (sgn(m[1]) / kz, sgn(m[2]) / ky);
            let cov = m[5] - m[1] * m[2];
            let v = (a * a * var(&m, 1) + b * b * var(&m, 2) + 2.0 * a * b * cov) / m[0];
            Some(v.max(0.0).sqrt())
        }
    })
}

pub fn resource_compare(
    rho: &TwoQubitState,
    epsilon: f64,
    schemes: &[Scheme],
    settings: &ResourceSettings,
) -> Result<ResourceTable, WitnessError> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(WitnessError::Invalid {
            name: "epsilon",
            value: epsilon,
            reason: "must be positive",
        });
    }
    if settings.replicates < MIN_REPLICATES {
        return Err(WitnessError::Invalid {
            name: "replicates",
            value: settings.replicates as f64,
            reason: "at least 50 replicates per ladder point",
        });
    }
    if settings.ladder.len() < 2 || settings.ladder.iter().any(|&n| n < 2) {
        return Err(WitnessError::Invalid {
            name: "ladder",
            value: settings.ladder.len() as f64,
            reason: "need at least two pair counts, each ≥ 2",
        });
    }
    let mut rows = Vec::with_capacity(schemes.len());
    for (si, scheme) in schemes.iter().enumerate() {
        let vis = scheme.visibilities()?;
        let mut flags = Vec::new();
        if (vis.0.eta_z * vis.1.eta_z).abs() <= ZERO_VIS {
            flags.push(Flag::ZeroVisibilityZ);
        }
        if (vis.0.eta_y * vis.1.eta_y).abs() <= ZERO_VIS {
            flags.push(Flag::ZeroVisibilityY);
        }
        let mut row = ResourceRow {
            scheme: scheme.name(),
            epsilon,
            n_required: None,
            exponent: None,
            residual: None,
            coefficient: None,
            points: Vec::new(),
            flags,
        };
        if !row.flags.is_empty() {
            rows.push(row);
            continue;
        }
        for (ni, &n) in settings.ladder.iter().enumerate() {
            let n = if matches!(scheme, Scheme::Sequential { .. }) {
                n + n % 2
            } else {
                n
            };
            let ws: Vec<Option<f64>> = (0..settings.replicates as u64)
                .into_par_iter()
                .map(|r| replicate_w(scheme, rho, n, &vis, settings.seed, ((si as u64) << 40) | ((ni as u64) << 32) | r))
                .collect::<Result<_, _>>()?;
            let ws: Vec<f64> = ws.into_iter().flatten().collect();
            if ws.len() >= 2 {
                row.points.push(SePoint {
                    n,
                    se: sample_sd(&ws),
                    replicates: ws.len(),
                });
            }
        }
        let usable: Vec<&SePoint> = row.points.iter().filter(|p| p.se > 0.0).collect();
        if usable.len() >= 2 {
            let x: Vec<f64> = usable.iter().map(|p| (p.n as f64).ln()).collect();
            let y: Vec<f64> = usable.iter().map(|p| p.se.ln()).collect();
            let (_, slope, rms) = linear_fit(&x, &y);
            let ln_c = x.iter().zip(&y).map(|(a, b)| b + 0.5 * a).sum::<f64>() / x.len() as f64;
            let c = ln_c.exp();
            row.exponent = Some(slope);
            row.residual = Some(rms);
            row.coefficient = Some(c);
            row.n_required = Some(((c / epsilon).powi(2)).ceil().max(1.0) as u64);
        } else if !row.points.is_empty() && row.points.iter().all(|p| p.se == 0.0) {
            // deterministic outcome: any sample size meets the target
            row.n_required = Some(1);
        }
        rows.push(row);
    }
    let find = |name: &str| rows.iter().find(|r| r.scheme == name).and_then(|r| r.n_required);
    let ratio = match (find("sequential"), find("bell-parity")) {
        (Some(s), Some(b)) if b > 0 => Some(s as f64 / b as f64),
        _ => None,
    };
    Ok(ResourceTable {
        rows,
        sequential_over_simultaneous: ratio,
    })
}
