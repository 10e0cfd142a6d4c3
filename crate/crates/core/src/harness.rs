//! Batch experiments driven by a single TOML document.
//!
//! Every command validates the whole configuration first, then produces a
//! [`Bundle`] of named text files. Each file carries the SHA-256 of the
//! canonical configuration, and [`write_bundle`] adds `manifest.json` with
//! per-file digests that [`verify`] re-checks. Outputs contain no timestamps,
//! so equal configurations give byte-identical files.

use crate::metasurface::{
    sample_field, synthesize_lattice, Architecture, FieldSource, LatticeSpec, MetasurfaceError, PhaseProfile, ProfileShape,
};
use crate::polarization::{c, BellKind, Mat4, PolarizationError, TwoQubitState};
use crate::povm::{
    completeness_check, kraus_closed_form, kraus_decompose, DiffractionOrder, KrausSet, PortAssignment, PortPovm, PovmError, Quadrature,
    Visibilities, MIN_DECOMPOSE_GRID,
};
use crate::resource::{analytic_coefficient, resource_compare, ResourceSettings, Scheme, MIN_REPLICATES};
use crate::witness::{
    estimate_from_counts, exact_report, joint_probabilities, simulate_counts, AnalyzerModel, Basis, Dataset, JointTable, WitnessError,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Bumped whenever a physical constant or default changes meaning.
pub const CONSTANTS_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("{module}: invalid {field}: {message}")]
    Validation {
        module: &'static str,
        field: String,
        message: String,
    },
    #[error("{module}: {message}")]
    Runtime { module: &'static str, message: String },
}

impl HarnessError {
    /// Process exit status: 2 for invalid input, 1 for failures at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation { .. } => 2,
            HarnessError::Runtime { .. } => 1,
        }
    }

    fn invalid(module: &'static str, field: &str, message: impl ToString) -> Self {
        HarnessError::Validation {
            module,
            field: field.to_string(),
            message: message.to_string(),
        }
    }

    fn io(e: std::io::Error, path: &Path) -> Self {
        HarnessError::Runtime {
            module: "cli-harness",
            message: format!("{}: {e}", path.display()),
        }
    }
}

const M_POL: &str = "polarization-core";
const M_META: &str = "metasurface-model";
const M_POVM: &str = "diffraction-povm";
const M_WIT: &str = "witness-engine";
const M_CLI: &str = "cli-harness";

fn runtime_meta(e: MetasurfaceError) -> HarnessError {
    HarnessError::Runtime {
        module: M_META,
        message: e.to_string(),
    }
}

fn runtime_povm(e: PovmError) -> HarnessError {
    HarnessError::Runtime {
        module: M_POVM,
        message: e.to_string(),
    }
}

fn runtime_wit(e: WitnessError) -> HarnessError {
    match e {
        WitnessError::Povm(p) => runtime_povm(p),
        other => HarnessError::Runtime {
            module: M_WIT,
            message: other.to_string(),
        },
    }
}

type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Sawtooth,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldSourceKind {
    /// Ideal two-ramp operator evaluated pointwise.
    Eq1,
    /// Synthesized meta-atom lattice.
    Lattice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KrausSource {
    Grid,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileConfig {
    pub period_x: f64,
    pub period_y: f64,
    pub depth_z: f64,
    pub depth_y: f64,
    pub shape: ShapeKind,
    pub lin: Vec<f64>,
    pub circ: Vec<f64>,
    /// Grid samples per period along each axis.
    pub samples: usize,
    pub order_bound: usize,
    pub quadrature: Quadrature,
    pub field_source: FieldSourceKind,
    pub kraus_source: KrausSource,
    pub pitch: f64,
    pub wavelength: f64,
    pub n_host: f64,
    pub n_env: f64,
    pub architecture: Architecture,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        let lat = LatticeSpec::default();
        Self {
            period_x: 8.0,
            period_y: 8.0,
            depth_z: 1.0,
            depth_y: 1.0,
            shape: ShapeKind::Sawtooth,
            lin: Vec::new(),
            circ: Vec::new(),
            samples: 64,
            order_bound: 8,
            quadrature: Quadrature::Midpoint,
            field_source: FieldSourceKind::Eq1,
            kraus_source: KrausSource::Grid,
            pitch: lat.pitch,
            wavelength: lat.wavelength,
            n_host: lat.n_host,
            n_env: lat.n_env,
            architecture: lat.architecture,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    Bell,
    Werner,
    Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StateConfig {
    pub kind: StateKind,
    pub bell: BellKind,
    /// Werner mixing weight.
    pub p: f64,
    /// Real and imaginary parts of an explicit density matrix, rows in the
    /// HH, HV, VH, VV basis.
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl Default for StateConfig {
    fn default() -> Self {
        Self {
            kind: StateKind::Bell,
            bell: BellKind::PhiPlus,
            p: 1.0,
            re: Vec::new(),
            im: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArmKind {
    Metasurface,
    PbsZ,
    PbsY,
    BellParity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmConfig {
    pub kind: ArmKind,
    /// PBS visibility; unused by other kinds.
    pub visibility: f64,
    pub efficiency: f64,
    pub dark_count: f64,
    /// Orders `[m, n]` for ports `(+,+), (+,−), (−,+), (−,−)`; empty means
    /// `(±1, ±1)`.
    pub ports: Vec<[i32; 2]>,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self {
            kind: ArmKind::Metasurface,
            visibility: 1.0,
            efficiency: 1.0,
            dark_count: 0.0,
            ports: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    Sequential,
    BellParity,
    Metasurface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n_pairs: u64,
    pub seed: u64,
    pub bootstrap: usize,
    /// Probability that the pair is split one photon per arm; folded into
    /// arm A's detection efficiency.
    pub splitting_efficiency: f64,
    pub epsilon: f64,
    pub schemes: Vec<SchemeName>,
    pub replicates: usize,
    pub ladder: Vec<u64>,
    pub sequential_visibility: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let r = ResourceSettings::default();
        Self {
            n_pairs: 100_000,
            seed: 42,
            bootstrap: crate::witness::DEFAULT_BOOTSTRAP,
            splitting_efficiency: 1.0,
            epsilon: 0.01,
            schemes: vec![SchemeName::Sequential, SchemeName::BellParity, SchemeName::Metasurface],
            replicates: r.replicates,
            ladder: r.ladder,
            sequential_visibility: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub depth_z: Vec<f64>,
    pub depth_y: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let grid = vec![0.0, 0.25, 0.5, 0.75, 1.0];
        Self {
            depth_z: grid.clone(),
            depth_y: grid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub profile: ProfileConfig,
    pub state: StateConfig,
    pub arm_a: ArmConfig,
    pub arm_b: ArmConfig,
    pub run: RunConfig,
    pub sweep: SweepConfig,
    /// Where files go; not part of the hashed configuration, so the same
    /// experiment written to two places hashes identically.
    #[serde(skip_serializing)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::invalid(M_CLI, "config", e.message()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(e, path))?;
        Self::from_toml_str(&text)
    }

    /// Effective configuration as TOML; the hashed form.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.canonical().as_bytes())
    }

    /// Checks every parameter with its owning module before anything runs.
    pub fn validate(&self) -> Result<()> {
        let p = &self.profile;
        self.profile_at(p.depth_z, p.depth_y)?;
        if p.field_source == FieldSourceKind::Lattice {
            self.lattice_spec()?;
            let sites = p.period_x / p.pitch;
            if (sites - sites.round()).abs() > 1e-9 || sites.round() < 8.0 || (p.period_y / p.pitch - sites).abs() > 1e-9 {
                return Err(HarnessError::invalid(
                    M_META,
                    "profile.pitch",
                    "must divide both periods with at least 8 sites per period",
                ));
            }
        }
        if p.kraus_source == KrausSource::ClosedForm && p.field_source != FieldSourceKind::Eq1 {
            return Err(HarnessError::invalid(
                M_POVM,
                "profile.kraus_source",
                "closed form needs field_source = \"eq1\"",
            ));
        }
        let need = (4 * (p.order_bound + 1)).max(MIN_DECOMPOSE_GRID);
        if p.kraus_source == KrausSource::Grid && p.samples < need {
            return Err(HarnessError::invalid(
                M_POVM,
                "profile.samples",
                format!("{} samples cannot resolve order bound {} (need ≥ {need})", p.samples, p.order_bound),
            ));
        }
        self.state()?;
        for (name, arm) in [("arm_a", &self.arm_a), ("arm_b", &self.arm_b)] {
            self.check_arm(name, arm)?;
        }
        if (self.arm_a.kind == ArmKind::BellParity) != (self.arm_b.kind == ArmKind::BellParity) {
            return Err(HarnessError::invalid(M_WIT, "arm_b.kind", "bell-parity must be used on both arms"));
        }
        let r = &self.run;
        if r.n_pairs == 0 {
            return Err(HarnessError::invalid(M_WIT, "run.n_pairs", "must be at least 1"));
        }
        unit(M_WIT, "run.splitting_efficiency", r.splitting_efficiency)?;
        unit(M_WIT, "run.sequential_visibility", r.sequential_visibility)?;
        if !(r.epsilon > 0.0 && r.epsilon.is_finite()) {
            return Err(HarnessError::invalid(
                M_WIT,
                "run.epsilon",
                format!("{} must be positive", r.epsilon),
            ));
        }
        if r.replicates < MIN_REPLICATES {
            return Err(HarnessError::invalid(
                M_WIT,
                "run.replicates",
                format!("{} < {MIN_REPLICATES}", r.replicates),
            ));
        }
        if r.ladder.len() < 2 || r.ladder.iter().any(|&n| n < 2) {
            return Err(HarnessError::invalid(
                M_WIT,
                "run.ladder",
                "need at least two pair counts, each ≥ 2",
            ));
        }
        if r.schemes.is_empty() {
            return Err(HarnessError::invalid(M_WIT, "run.schemes", "list at least one scheme"));
        }
        for (name, grid) in [("sweep.depth_z", &self.sweep.depth_z), ("sweep.depth_y", &self.sweep.depth_y)] {
            if grid.is_empty() {
                return Err(HarnessError::invalid(M_CLI, name, "empty grid"));
            }
            for &d in grid {
                if !(0.0..=1.0).contains(&d) {
                    return Err(HarnessError::invalid(M_META, name, format!("{d} must lie in [0, 1]")));
                }
            }
        }
        if self.output.dir.is_empty() {
            return Err(HarnessError::invalid(M_CLI, "output.dir", "empty path"));
        }
        Ok(())
    }

    fn profile_at(&self, depth_z: f64, depth_y: f64) -> Result<PhaseProfile> {
        let p = &self.profile;
        let shape = match p.shape {
            ShapeKind::Sawtooth => ProfileShape::SawtoothRamp,
            ShapeKind::Custom => ProfileShape::CustomSamples {
                lin: p.lin.clone(),
                circ: p.circ.clone(),
            },
        };
        PhaseProfile::new(p.period_x, p.period_y, depth_z, depth_y, shape).map_err(|e| {
            let field = match &e {
                MetasurfaceError::Invalid { name, .. } => format!("profile.{name}"),
                MetasurfaceError::TooFewSamples { .. } => "profile.lin/circ".into(),
                _ => "profile".into(),
            };
            HarnessError::invalid(M_META, &field, e)
        })
    }

    fn lattice_spec(&self) -> Result<LatticeSpec> {
        let p = &self.profile;
        for (name, v) in [("profile.pitch", p.pitch), ("profile.wavelength", p.wavelength)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(HarnessError::invalid(M_META, name, format!("{v} must be positive")));
            }
        }
        if !(p.n_env >= 1.0 && p.n_host > p.n_env) {
            return Err(HarnessError::invalid(M_META, "profile.n_host", "need n_host > n_env ≥ 1"));
        }
        Ok(LatticeSpec {
            pitch: p.pitch,
            wavelength: p.wavelength,
            n_host: p.n_host,
            n_env: p.n_env,
            architecture: p.architecture,
        })
    }

    pub fn state(&self) -> Result<TwoQubitState> {
        let s = &self.state;
        let pol = |field: &str, e: PolarizationError| HarnessError::invalid(M_POL, field, e);
        match s.kind {
            StateKind::Bell => Ok(TwoQubitState::bell(s.bell)),
            StateKind::Werner => TwoQubitState::werner(s.p, s.bell).map_err(|e| pol("state.p", e)),
            StateKind::Matrix => {
                let ok = |m: &Vec<Vec<f64>>| m.len() == 4 && m.iter().all(|r| r.len() == 4);
                if !ok(&s.re) || !ok(&s.im) {
                    return Err(HarnessError::invalid(M_POL, "state.re/im", "need two 4×4 arrays"));
                }
                let rho = Mat4::from_fn(|i, j| c(s.re[i][j], s.im[i][j]));
                TwoQubitState::new(rho).map_err(|e| pol("state.re/im", e))
            }
        }
    }

    fn check_arm(&self, name: &str, arm: &ArmConfig) -> Result<()> {
        unit(M_WIT, &format!("{name}.visibility"), arm.visibility)?;
        unit(M_WIT, &format!("{name}.efficiency"), arm.efficiency)?;
        if !(arm.dark_count >= 0.0 && arm.dark_count < 1.0) {
            return Err(HarnessError::invalid(
                M_WIT,
                &format!("{name}.dark_count"),
                format!("{} must lie in [0, 1)", arm.dark_count),
            ));
        }
        if !arm.ports.is_empty() {
            self.port_assignment(name, arm)?;
        }
        Ok(())
    }

    fn port_assignment(&self, name: &str, arm: &ArmConfig) -> Result<PortAssignment> {
        if arm.ports.is_empty() {
            return Ok(PortAssignment::standard());
        }
        let field = format!("{name}.ports");
        let orders: Vec<DiffractionOrder> = arm.ports.iter().map(|o| DiffractionOrder::new(o[0], o[1])).collect();
        let arr: [DiffractionOrder; 4] = orders
            .try_into()
            .map_err(|_| HarnessError::invalid(M_POVM, &field, "need exactly four [m, n] orders"))?;
        let b = self.profile.order_bound as i32;
        if arr.iter().any(|o| o.m.abs() > b || o.n.abs() > b) {
            return Err(HarnessError::invalid(M_POVM, &field, "order outside the truncation"));
        }
        PortAssignment::quad(arr).map_err(|e| HarnessError::invalid(M_POVM, &field, e))
    }

    fn needs_device(&self) -> bool {
        self.arm_a.kind == ArmKind::Metasurface || self.arm_b.kind == ArmKind::Metasurface
    }
}

fn unit(module: &'static str, field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(HarnessError::invalid(module, field, format!("{v} must lie in [0, 1]")))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Kraus operators of the configured device at the given depths.
fn device_kraus(cfg: &ExperimentConfig, depth_z: f64, depth_y: f64) -> Result<KrausSet> {
    let p = &cfg.profile;
    let profile = cfg.profile_at(depth_z, depth_y)?;
    let b = p.order_bound;
    if p.kraus_source == KrausSource::ClosedForm {
        return Ok(kraus_closed_form(&profile, b, b));
    }
    let field = match p.field_source {
        FieldSourceKind::Eq1 => sample_field(FieldSource::Profile(&profile), p.samples, p.samples).map_err(runtime_meta)?,
        FieldSourceKind::Lattice => {
            let lat = synthesize_lattice(&profile, &cfg.lattice_spec()?).map_err(runtime_meta)?;
            sample_field(FieldSource::Field(&lat.field), p.samples, p.samples).map_err(runtime_meta)?
        }
    };
    kraus_decompose(&field, b, b, p.quadrature).map_err(runtime_povm)
}

fn build_arm(cfg: &ExperimentConfig, name: &str, arm: &ArmConfig, kraus: Option<&KrausSet>, extra_eff: f64) -> Result<AnalyzerModel> {
    let model = match arm.kind {
        ArmKind::Metasurface => {
            let k = kraus.expect("device built when a metasurface arm is configured");
            AnalyzerModel::metasurface(k, &cfg.port_assignment(name, arm)?).map_err(runtime_wit)?
        }
        ArmKind::PbsZ => AnalyzerModel::pbs(Basis::Z, arm.visibility).map_err(runtime_wit)?,
        ArmKind::PbsY => AnalyzerModel::pbs(Basis::Y, arm.visibility).map_err(runtime_wit)?,
        ArmKind::BellParity => AnalyzerModel::bell_parity(),
    };
    model
        .with_detectors(arm.efficiency * extra_eff, arm.dark_count)
        .map_err(runtime_wit)
}

/// Named output files, ordered by name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bundle {
    pub config_hash: String,
    pub seed: u64,
    pub command: String,
    pub files: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config_hash: String,
    seed: u64,
    command: String,
    constants_version: u32,
    crate_version: String,
    files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Povm,
    Calibrate,
    Witness,
    Montecarlo,
    Compare,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Povm => "povm",
            Command::Calibrate => "calibrate",
            Command::Witness => "witness",
            Command::Montecarlo => "montecarlo",
            Command::Compare => "compare",
            Command::Sweep => "sweep",
        }
    }
}

#[derive(Serialize)]
struct CalibrationDoc {
    config_hash: String,
    order_bound: usize,
    samples: usize,
    quadrature: Quadrature,
    kraus_source: KrausSource,
    field_source: FieldSourceKind,
    depth_z: f64,
    depth_y: f64,
    completeness_residual: f64,
    completeness_excess: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    eta_y: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    capture: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    z_bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    y_bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    status: Option<String>,
}

fn calibration_doc(cfg: &ExperimentConfig, hash: &str, kraus: &KrausSet) -> Result<(CalibrationDoc, Visibilities)> {
    let ports = cfg.port_assignment("arm_a", &cfg.arm_a)?;
    let povm = PortPovm::from_kraus(kraus, &ports).map_err(runtime_povm)?;
    let v = povm.calibrate().map_err(runtime_povm)?;
    let par = povm.parity_operators();
    let p = &cfg.profile;
    Ok((
        CalibrationDoc {
            config_hash: hash.to_string(),
            order_bound: p.order_bound,
            samples: p.samples,
            quadrature: p.quadrature,
            kraus_source: p.kraus_source,
            field_source: p.field_source,
            depth_z: p.depth_z,
            depth_y: p.depth_y,
            completeness_residual: completeness_check(kraus),
            completeness_excess: kraus.excess(),
            eta_z: Some(v.eta_z),
            eta_y: Some(v.eta_y),
            capture: Some(v.capture),
            z_bias: Some(par.z_bias),
            y_bias: Some(par.y_bias),
            status: None,
        },
        v,
    ))
}

fn with_hash_json<T: Serialize>(hash: &str, key: &str, value: &T) -> String {
    let mut doc = serde_json::Map::new();
    doc.insert("config_hash".into(), serde_json::Value::String(hash.into()));
    doc.insert(key.into(), serde_json::to_value(value).expect("serializes"));
    serde_json::to_string_pretty(&serde_json::Value::Object(doc)).expect("serializes") + "\n"
}

fn exact_table_csv(hash: &str, t: &JointTable) -> String {
    let mut out = format!("# config_hash = {hash}\nkind,row_sx,row_sy,col_sx,col_sy,probability\n");
    for (i, row) in t.probs.iter().enumerate() {
        for (k, p) in row.iter().enumerate() {
            let (a, b) = (t.row_labels[i], t.col_labels[k]);
            let _ = writeln!(out, "coincidence,{},{},{},{},{p}", a.sx, a.sy, b.sx, b.sy);
        }
    }
    let _ = writeln!(out, "loss,,,,,{}", t.loss);
    out
}

struct Arms {
    kraus: Option<KrausSet>,
    a: AnalyzerModel,
    b: AnalyzerModel,
}

fn arms(cfg: &ExperimentConfig) -> Result<Arms> {
    let kraus = if cfg.needs_device() {
        Some(device_kraus(cfg, cfg.profile.depth_z, cfg.profile.depth_y)?)
    } else {
        None
    };
    let a = build_arm(cfg, "arm_a", &cfg.arm_a, kraus.as_ref(), cfg.run.splitting_efficiency)?;
    let b = build_arm(cfg, "arm_b", &cfg.arm_b, kraus.as_ref(), 1.0)?;
    Ok(Arms { kraus, a, b })
}

/// Runs one command and returns its files (not yet written).
pub fn execute(cmd: Command, cfg: &ExperimentConfig) -> Result<Bundle> {
    cfg.validate()?;
    let hash = cfg.hash();
    let mut files = BTreeMap::new();
    files.insert("config.toml".to_string(), format!("# config_hash = {hash}\n{}", cfg.canonical()));
    let toml_doc = |d: &CalibrationDoc| toml::to_string(d).expect("calibration serializes");
    match cmd {
        Command::Povm | Command::Calibrate => {
            let kraus = device_kraus(cfg, cfg.profile.depth_z, cfg.profile.depth_y)?;
            let (doc, _) = calibration_doc(cfg, &hash, &kraus)?;
            files.insert("calibration.toml".into(), toml_doc(&doc));
            if cmd == Command::Povm {
                let kj: serde_json::Value = serde_json::from_str(&kraus.to_json()).expect("valid json");
                files.insert("kraus.json".into(), with_hash_json(&hash, "kraus", &kj));
            }
        }
        Command::Witness | Command::Montecarlo => {
            let rho = cfg.state()?;
            let arms = arms(cfg)?;
            if let Some(k) = &arms.kraus {
                let (doc, _) = calibration_doc(cfg, &hash, k)?;
                files.insert("calibration.toml".into(), toml_doc(&doc));
                if cmd == Command::Montecarlo {
                    let kj: serde_json::Value = serde_json::from_str(&k.to_json()).expect("valid json");
                    files.insert("kraus.json".into(), with_hash_json(&hash, "kraus", &kj));
                }
            }
            let table = joint_probabilities(&rho, &arms.a, &arms.b).map_err(runtime_wit)?;
            files.insert("exact_table.csv".into(), exact_table_csv(&hash, &table));
            let exact = exact_report(&rho, &arms.a, &arms.b).map_err(runtime_wit)?;
            let mut report = serde_json::Map::new();
            report.insert("config_hash".into(), hash.clone().into());
            report.insert("exact".into(), serde_json::to_value(&exact).expect("serializes"));
            if cmd == Command::Montecarlo {
                let counts = simulate_counts(&rho, &arms.a, &arms.b, cfg.run.n_pairs, cfg.run.seed).map_err(runtime_wit)?;
                let va = arms.a.visibilities().map_err(runtime_wit)?;
                let vb = arms.b.visibilities().map_err(runtime_wit)?;
                let data = Dataset::Simultaneous { table: counts.clone() };
                let sampled = estimate_from_counts(&data, &va, &vb, cfg.run.bootstrap, cfg.run.seed).map_err(runtime_wit)?;
                report.insert("seed".into(), cfg.run.seed.into());
                report.insert("sampled".into(), serde_json::to_value(&sampled).expect("serializes"));
                files.insert("coincidences.json".into(), with_hash_json(&hash, "table", &counts));
            }
            files.insert(
                "witness_report.json".into(),
                serde_json::to_string_pretty(&serde_json::Value::Object(report)).expect("serializes") + "\n",
            );
        }
        Command::Compare => {
            let rho = cfg.state()?;
            let mut schemes = Vec::new();
            for s in &cfg.run.schemes {
                schemes.push(match s {
                    SchemeName::Sequential => Scheme::Sequential {
                        visibility: cfg.run.sequential_visibility,
                    },
                    SchemeName::BellParity => Scheme::BellParity,
                    SchemeName::Metasurface => {
                        let kraus = device_kraus(cfg, cfg.profile.depth_z, cfg.profile.depth_y)?;
                        let mut arm_cfg = cfg.arm_a.clone();
                        arm_cfg.kind = ArmKind::Metasurface;
                        let a = build_arm(cfg, "arm_a", &arm_cfg, Some(&kraus), cfg.run.splitting_efficiency)?;
                        let mut arm_cfg = cfg.arm_b.clone();
                        arm_cfg.kind = ArmKind::Metasurface;
                        let b = build_arm(cfg, "arm_b", &arm_cfg, Some(&kraus), 1.0)?;
                        Scheme::Metasurface { a, b }
                    }
                });
            }
            let settings = ResourceSettings {
                ladder: cfg.run.ladder.clone(),
                replicates: cfg.run.replicates,
                seed: cfg.run.seed,
            };
            let table = resource_compare(&rho, cfg.run.epsilon, &schemes, &settings).map_err(runtime_wit)?;
            files.insert("resource.csv".into(), format!("# config_hash = {hash}\n{}", table.to_csv()));
            files.insert("resource.json".into(), with_hash_json(&hash, "comparison", &table));
        }
        Command::Sweep => {
            let rows = sweep_rows(cfg)?;
            let mut out = format!("# config_hash = {hash}\ndepth_z,depth_y,eta_z,eta_y,capture,eta_sq_sum,n_required,flag\n");
            for r in &rows {
                out.push_str(&r.csv_line());
            }
            files.insert("sweep.csv".into(), out);
        }
    }
    Ok(Bundle {
        config_hash: hash,
        seed: cfg.run.seed,
        command: cmd.name().into(),
        files,
    })
}

/// One point of the depth sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub depth_z: f64,
    pub depth_y: f64,
    pub vis: Option<Visibilities>,
    pub n_required: Option<u64>,
    pub flags: Vec<String>,
}

impl SweepRow {
    fn csv_line(&self) -> String {
        let (ez, ey, cap, sq) = match &self.vis {
            Some(v) => (
                v.eta_z.to_string(),
                v.eta_y.to_string(),
                v.capture.to_string(),
                (v.eta_z * v.eta_z + v.eta_y * v.eta_y).to_string(),
            ),
            None => Default::default(),
        };
        format!(
            "{},{},{ez},{ey},{cap},{sq},{},{}\n",
            self.depth_z,
            self.depth_y,
            self.n_required.map_or_else(|| "unbounded".to_string(), |n| n.to_string()),
            self.flags.join(";")
        )
    }
}

/// Visibility trade-off over the configured depth grid, ordered by
/// `(depth_z, depth_y)`. `n_required` is the large-`N` pair count for the
/// configured state and `ε` with both arms on the device.
pub fn sweep_rows(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let rho = cfg.state()?;
    let sorted = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let points: Vec<(f64, f64)> = sorted(&cfg.sweep.depth_z)
        .into_iter()
        .flat_map(|z| sorted(&cfg.sweep.depth_y).into_iter().map(move |y| (z, y)))
        .collect();
    points
        .par_iter()
        .map(|&(z, y)| {
            let kraus = device_kraus(cfg, z, y)?;
            let mut row = SweepRow {
                depth_z: z,
                depth_y: y,
                vis: None,
                n_required: None,
                flags: Vec::new(),
            };
            let mut arm_cfg = cfg.arm_a.clone();
            arm_cfg.kind = ArmKind::Metasurface;
            let a = build_arm(cfg, "arm_a", &arm_cfg, Some(&kraus), cfg.run.splitting_efficiency)?;
            match a.visibilities() {
                Err(WitnessError::Povm(PovmError::NoSignal(_))) => {
                    row.flags.push("no-signal".into());
                    return Ok(row);
                }
                Err(e) => return Err(runtime_wit(e)),
                Ok(v) => row.vis = Some(v),
            }
            let mut arm_cfg = cfg.arm_b.clone();
            arm_cfg.kind = ArmKind::Metasurface;
            let b = build_arm(cfg, "arm_b", &arm_cfg, Some(&kraus), 1.0)?;
            let vb = b.visibilities().map_err(runtime_wit)?;
            let va = row.vis.expect("set above");
            if (va.eta_z * vb.eta_z).abs() <= 1e-9 {
                row.flags.push("zero-visibility-z".into());
            }
            if (va.eta_y * vb.eta_y).abs() <= 1e-9 {
                row.flags.push("zero-visibility-y".into());
            }
            let coeff = analytic_coefficient(&Scheme::Metasurface { a, b }, &rho).map_err(runtime_wit)?;
            row.n_required = coeff.map(|c| ((c / cfg.run.epsilon).powi(2)).ceil().max(1.0) as u64);
            Ok(row)
        })
        .collect()
}

/// Writes the bundle and its manifest into `dir`.
pub fn write_bundle(bundle: &Bundle, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(e, dir))?;
    let mut digests = BTreeMap::new();
    for (name, body) in &bundle.files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| HarnessError::io(e, &path))?;
        digests.insert(name.clone(), sha256_hex(body.as_bytes()));
    }
    let manifest = Manifest {
        config_hash: bundle.config_hash.clone(),
        seed: bundle.seed,
        command: bundle.command.clone(),
        constants_version: CONSTANTS_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        files: digests,
    };
    let path = dir.join(MANIFEST);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("serializes") + "\n").map_err(|e| HarnessError::io(e, &path))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyReport {
    pub config_hash: String,
    pub checked: Vec<String>,
    pub problems: Vec<String>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Re-checks the manifest digests, the embedded config hash in every file,
/// and the hash of the stored configuration.
pub fn verify(dir: &Path) -> Result<VerifyReport> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(e, &path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| HarnessError::Runtime {
        module: M_CLI,
        message: format!("{}: {e}", path.display()),
    })?;
    let mut report = VerifyReport {
        config_hash: manifest.config_hash.clone(),
        checked: Vec::new(),
        problems: Vec::new(),
    };
    for (name, digest) in &manifest.files {
        let p = dir.join(name);
        match std::fs::read(&p) {
            Err(e) => report.problems.push(format!("{name}: {e}")),
            Ok(bytes) => {
                if sha256_hex(&bytes) != *digest {
                    report.problems.push(format!("{name}: digest mismatch"));
                }
                let body = String::from_utf8_lossy(&bytes);
                if !body.contains(&manifest.config_hash) {
                    report.problems.push(format!("{name}: config hash not embedded"));
                }
                if name == "config.toml" {
                    let stripped = body.split_once('\n').map_or("", |(_, rest)| rest);
                    if sha256_hex(stripped.as_bytes()) != manifest.config_hash {
                        report.problems.push("config.toml: content does not match config_hash".into());
                    }
                }
                report.checked.push(name.clone());
            }
        }
    }
    if !manifest.files.contains_key("config.toml") {
        report.problems.push("manifest lists no config.toml".into());
    }
    Ok(report)
}
