//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use dualbasis::harness::{execute, Command, ExperimentConfig};
use dualbasis::metasurface::{sample_field, FieldSource, PhaseProfile};
use dualbasis::polarization::{commutator_checks, correlator, pauli, ppt_is_entangled, Axis, BellKind, PolarizationState, TwoQubitState};
use dualbasis::povm::{
    calibrate_visibilities, completeness_check, kraus_closed_form, kraus_decompose, port_probabilities, DiffractionOrder, KrausSet,
    PortAssignment, Quadrature,
};
use dualbasis::resource::{resource_compare, ResourceSettings, Scheme};
use dualbasis::witness::{estimate_from_counts, exact_report, simulate_counts, task_rng, AnalyzerModel, Dataset, Flag};
use std::f64::consts::PI;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn grid_kraus(bz: f64, by: f64, samples: usize, bound: usize, rule: Quadrature) -> KrausSet {
    let p = PhaseProfile::sawtooth(8.0, 8.0, bz, by).unwrap();
    let f = sample_field(FieldSource::Profile(&p), samples, samples).unwrap();
    kraus_decompose(&f, bound, bound, rule).unwrap()
}

fn werner(p: f64) -> TwoQubitState {
    TwoQubitState::werner(p, BellKind::PsiMinus).unwrap()
}

fn completeness() -> Outcome {
    let depths = [0.25, 0.5, 0.75, 1.0];
    let (mut worst, mut worst_at, mut slowest) = (0.0f64, (0.0, 0.0), 0.0f64);
    for &bz in &depths {
        for &by in &depths {
            let t = Instant::now();
            let k = grid_kraus(bz, by, 64, 8, Quadrature::Midpoint);
            let r = completeness_check(&k);
            slowest = slowest.max(t.elapsed().as_secs_f64());
            if r > worst {
                worst = r;
                worst_at = (bz, by);
            }
        }
    }
    Outcome {
        pass: worst <= 1e-9 && slowest < 1.0,
        detail: format!("max residual {worst:.3e} at {worst_at:?} (tol 1e-9), slowest field {slowest:.3}s (limit 1s)"),
    }
}

fn full_depth_device() -> Outcome {
    let k = grid_kraus(1.0, 1.0, 64, 8, Quadrature::Midpoint);
    let ports = PortAssignment::standard();
    let v = calibrate_visibilities(&k, &ports).unwrap();
    let ph = port_probabilities(&k, &ports, &PolarizationState::h().density()).unwrap();
    let pr = port_probabilities(&k, &ports, &PolarizationState::r().density()).unwrap();
    let h_err = ph.per_port.iter().map(|p| (p - 0.25).abs()).fold(0.0, f64::max);
    // ports ordered (+,+), (+,−), (−,+), (−,−); upper row is the + circular label
    let r_err = [
        (pr.per_port[0] - 0.5).abs(),
        (pr.per_port[2] - 0.5).abs(),
        pr.per_port[1],
        pr.per_port[3],
    ]
    .into_iter()
    .fold(0.0, f64::max);
    let ey = (v.eta_y - 1.0).abs();
    let ez = v.eta_z.abs();
    Outcome {
        pass: ey <= 1e-9 && ez <= 1e-9 && h_err <= 1e-9 && r_err <= 1e-9,
        detail: format!("|eta_y-1| {ey:.1e}, |eta_z| {ez:.1e}, H port err {h_err:.1e}, R port err {r_err:.1e} (tol 1e-9)"),
    }
}

fn sawtooth_fourier() -> Outcome {
    let want_p = 2.0 / PI;
    let want_m = 2.0 / (3.0 * PI);
    // depth_y = 0 isolates the linear ramp: ⟨H|K_{m,0}|H⟩ = c_m(β)
    let grid = grid_kraus(0.5, 0.0, 256, 8, Quadrature::EndCorrected);
    let closed = kraus_closed_form(&PhaseProfile::sawtooth(8.0, 8.0, 0.5, 0.0).unwrap(), 8, 8);
    let amp = |k: &KrausSet, m: i32| k.get(DiffractionOrder::new(m, 0)).unwrap().0[(0, 0)].norm();
    let errs = [
        (amp(&grid, 1) - want_p).abs(),
        (amp(&grid, -1) - want_m).abs(),
        (amp(&closed, 1) - want_p).abs(),
        (amp(&closed, -1) - want_m).abs(),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Outcome {
        pass: worst <= 1e-6,
        detail: format!(
            "grid |c+1| err {:.1e}, |c-1| err {:.1e}; closed form {:.1e}, {:.1e} (tol 1e-6)",
            errs[0], errs[1], errs[2], errs[3]
        ),
    }
}

fn correlator_algebra() -> Outcome {
    let z = pauli(Axis::Z);
    let y = pauli(Axis::Y);
    let table = [
        (BellKind::PhiPlus, 1.0, -1.0),
        (BellKind::PhiMinus, 1.0, 1.0),
        (BellKind::PsiPlus, -1.0, 1.0),
        (BellKind::PsiMinus, -1.0, -1.0),
    ];
    let mut worst = 0.0f64;
    for (kind, cz, cy) in table {
        let s = TwoQubitState::bell(kind);
        worst = worst
            .max((correlator(&s, &z, &z) - cz).abs())
            .max((correlator(&s, &y, &y) - cy).abs());
    }
    let cm = commutator_checks();
    let single = (cm.single_photon_norm - 2.0 * 2f64.sqrt()).abs();
    Outcome {
        pass: worst <= 1e-12 && cm.two_photon_norm <= 1e-14 && single <= 1e-12,
        detail: format!(
            "sign table err {worst:.1e} (tol 1e-12), two-photon commutator {:.1e} (tol 1e-14), single-photon err {single:.1e} (tol 1e-12)",
            cm.two_photon_norm
        ),
    }
}

fn ppt_boundary() -> Outcome {
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if ppt_is_entangled(&werner(mid)).entangled {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let p = 0.5 * (lo + hi);
    let err = (p - 1.0 / 3.0).abs();
    Outcome {
        pass: err <= 1e-6,
        detail: format!("boundary p = {p:.9} (err {err:.1e}, tol 1e-6)"),
    }
}

fn witness_soundness() -> Outcome {
    let a = AnalyzerModel::bell_parity();
    let mut rng = task_rng(2024, 9, 0);
    let (mut negative, mut violations) = (0, 0);
    for i in 0..1000 {
        let s = if i % 2 == 0 {
            TwoQubitState::random_pure(&mut rng)
        } else {
            TwoQubitState::random_mixed(&mut rng)
        };
        let w = exact_report(&s, &a, &a).unwrap().w_sep_aux.unwrap();
        if w < 0.0 {
            negative += 1;
            if !ppt_is_entangled(&s).entangled {
                violations += 1;
            }
        }
    }
    Outcome {
        pass: violations == 0 && negative > 0,
        detail: format!("{negative} of 1000 states certified, {violations} violations"),
    }
}

fn estimator_statistics() -> Outcome {
    let t = Instant::now();
    let rho = werner(0.9);
    let k = grid_kraus(0.5, 0.5, 64, 8, Quadrature::Midpoint);
    let ports = PortAssignment::standard();
    let meta = || AnalyzerModel::metasurface(&k, &ports).unwrap();
    let schemes = [
        Scheme::Sequential { visibility: 1.0 },
        Scheme::BellParity,
        Scheme::Metasurface { a: meta(), b: meta() },
    ];
    let settings = ResourceSettings {
        ladder: vec![1_000, 10_000, 100_000, 1_000_000],
        replicates: 1000,
        seed: 7,
    };
    let table = resource_compare(&rho, 0.01, &schemes, &settings).unwrap();
    let mut slope_ok = true;
    let mut slopes = Vec::new();
    for row in &table.rows {
        let e = row.exponent.unwrap_or(f64::NAN);
        slope_ok &= (e + 0.5).abs() <= 0.05;
        slopes.push(format!("{} {e:.4}", row.scheme));
    }
    // bootstrap against delta method, metasurface arms
    let (a, b) = (meta(), meta());
    let (va, vb) = (a.visibilities().unwrap(), b.visibilities().unwrap());
    let mut worst = 0.0f64;
    for (i, n) in [10_000u64, 100_000].into_iter().enumerate() {
        let counts = simulate_counts(&rho, &a, &b, n, 11 + i as u64).unwrap();
        let r = estimate_from_counts(&Dataset::Simultaneous { table: counts }, &va, &vb, 1000, 13 + i as u64).unwrap();
        let u = r.uncertainty.unwrap();
        let (d, bs) = (u.se_w_aux_delta.unwrap(), u.se_w_aux_bootstrap.unwrap());
        worst = worst.max((bs / d - 1.0).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        pass: slope_ok && worst <= 0.2 && secs < 300.0,
        detail: format!(
            "slopes [{}] (want -0.5 ± 0.05), bootstrap/delta max rel diff {:.1}% (tol 20%), {secs:.1}s (limit 300s)",
            slopes.join(", "),
            100.0 * worst
        ),
    }
}

fn halving() -> Outcome {
    let t = Instant::now();
    let settings = ResourceSettings {
        ladder: vec![1_000, 10_000, 100_000, 1_000_000],
        replicates: 1000,
        seed: 3,
    };
    let table = resource_compare(
        &werner(0.9),
        0.01,
        &[Scheme::Sequential { visibility: 1.0 }, Scheme::BellParity],
        &settings,
    )
    .unwrap();
    let ratio = table.sequential_over_simultaneous.unwrap_or(f64::NAN);
    let n: Vec<String> = table.rows.iter().map(|r| format!("{}={:?}", r.scheme, r.n_required)).collect();
    let secs = t.elapsed().as_secs_f64();
    Outcome {
        pass: (ratio - 2.0).abs() <= 0.2 && secs < 300.0,
        detail: format!("ratio {ratio:.4} (want 2 ± 10%), {} , {secs:.1}s", n.join(" ")),
    }
}

fn degenerate_scheme() -> Outcome {
    let k = grid_kraus(1.0, 1.0, 64, 8, Quadrature::Midpoint);
    let ports = PortAssignment::standard();
    let m = || AnalyzerModel::metasurface(&k, &ports).unwrap();
    let settings = ResourceSettings {
        ladder: vec![1_000, 10_000],
        replicates: 50,
        seed: 5,
    };
    let table = resource_compare(&werner(0.9), 0.01, &[Scheme::Metasurface { a: m(), b: m() }], &settings).unwrap();
    let row = &table.rows[0];
    let flagged = row.flags.contains(&Flag::ZeroVisibilityZ);
    Outcome {
        pass: row.n_required.is_none() && flagged && row.coefficient.is_none(),
        detail: format!("n_required {:?}, flags {:?}", row.n_required, row.flags),
    }
}

fn reproducibility() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.profile.depth_z = 0.5;
    cfg.profile.depth_y = 0.5;
    cfg.state.kind = dualbasis::harness::StateKind::Werner;
    cfg.state.p = 0.9;
    cfg.state.bell = BellKind::PsiMinus;
    cfg.run.n_pairs = 100_000;
    cfg.run.bootstrap = 200;
    cfg.run.replicates = 50;
    cfg.run.ladder = vec![1_000, 10_000];
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let mut same = true;
    for cmd in [Command::Montecarlo, Command::Compare, Command::Sweep] {
        let one = pool(1).install(|| execute(cmd, &cfg)).unwrap();
        let two = pool(1).install(|| execute(cmd, &cfg)).unwrap();
        let many = pool(8).install(|| execute(cmd, &cfg)).unwrap();
        same &= one == two && one == many;
    }
    Outcome {
        pass: same,
        detail: format!("montecarlo, compare and sweep bundles identical across repeats and 1 vs 8 threads: {same}"),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("POVM completeness", completeness),
        ("full-depth device facts", full_depth_device),
        ("sawtooth Fourier regression", sawtooth_fourier),
        ("correlator and commutator algebra", correlator_algebra),
        ("PPT boundary of Werner states", ppt_boundary),
        ("witness soundness", witness_soundness),
        ("estimator statistics", estimator_statistics),
        ("sequential vs simultaneous pair count", halving),
        ("degenerate scheme detection", degenerate_scheme),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} [{:>2}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
