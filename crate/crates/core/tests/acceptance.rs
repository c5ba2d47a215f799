//! Acceptance criteria 1 to 10. Each test writes one PASS/FAIL line to
//! stderr (uncaptured) and then asserts the verdict.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zakharov_core::continuation::{
    continue_equilibria, continue_orbits, orbit_from_hopf, refine_equilibrium, Branch,
    ContinuationSettings, EventKind, OrbitPoint, ParamName, ShootingSettings,
};
use zakharov_core::etdrk4::{integrate, IntegrateConfig};
use zakharov_core::model::{full_rhs, lyapunov_epsilon, Forcing, ModelParams};
use zakharov_core::spectral::{Grid, SpectralField};
use zakharov_core::stability::{assemble_jacobian, rhs_jacobian, spectrum, write_spectrum_csv, DEFAULT_THRESHOLD};
use zakharov_core::stationary::{fixed_point_solve, hybrid_solve, solve_resolvent, verify_apriori};
use zakharov_core::verify::{
    random_initial_state, verify_absorbing_ball, verify_conservation, verify_lyapunov_decay,
    verify_trivial_attractor, InitialNorm, VerificationConfig,
};
use zakharov_core::State;

/// Modes used for the bifurcation diagrams (criteria 9 and 10).
const DIAGRAM_MODES: usize = 16;
/// Point cap for each periodic branch.
const ORBIT_POINTS: usize = 200;

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    let line = format!(
        "criterion {n:>2} {name}: {} | {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    // bypasses the test harness capture so every verdict is visible
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "criterion {n} failed: {detail}");
}

fn out_dir() -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    fs::create_dir_all(&d).unwrap();
    d
}

fn sine_case(n: usize, gamma: f64, delta: f64, alpha1: f64) -> (Grid<f64>, Forcing<f64>, ModelParams<f64>) {
    let g = Grid::new(n).unwrap();
    let f = Forcing::sine(&g);
    (g, f, ModelParams::new(gamma, delta, alpha1, 1.0).unwrap())
}

fn settings() -> ContinuationSettings {
    ContinuationSettings::default().with_ds(0.02)
}

/// Equilibrium branch in γ from the contracting regime at γ = `from`.
fn gamma_branch(n: usize, delta: f64, alpha1: f64, from: f64, to: f64) -> Branch {
    let (_, f, p) = sine_case(n, from, delta, alpha1);
    let eq = fixed_point_solve(&f, &p, 1e-12, 2000).unwrap();
    continue_equilibria(&eq, ParamName::Gamma, (from, to), &settings()).unwrap()
}

/// Equilibrium branch in η over [0.2, 14] at fixed γ, reached from γ = 3.
fn eta_branch(n: usize, gamma: f64) -> Branch {
    let b = gamma_branch(n, 0.2, 1.0, 3.0, gamma);
    let start = b.points.last().unwrap().equilibrium().unwrap();
    assert!((start.params.gamma - gamma).abs() < 1e-9, "did not reach gamma = {gamma}");
    continue_equilibria(start, ParamName::Delta, (0.2, 14.0), &settings()).unwrap()
}

fn hopf_values(b: &Branch) -> Vec<f64> {
    b.events_of(EventKind::Hopf).map(|e| e.param_value).collect()
}

fn state_distance(a: &State, b: &State) -> f64 {
    a.sub(b).l2_norm()
}

#[test]
fn criterion_01_exact_solution_is_stationary() {
    let t0 = Instant::now();
    let g = Grid::new(32).unwrap();
    let f = Forcing::sine(&g);
    let p = ModelParams::new(0.0, 1.0, 0.0, 0.0).unwrap();
    let s0 = State::new(f.profile.scale_real(-1.0), SpectralField::zeros(&g)).unwrap();
    let rec = integrate(&s0, &f, &p, &IntegrateConfig::new(1e-3, 10.0), None, None).unwrap();
    let dev = state_distance(&rec.final_state, &s0);
    let secs = t0.elapsed().as_secs_f64();
    verdict(
        1,
        "exact stationary solution",
        dev < 1e-8 && secs < 10.0,
        format!("L2 deviation {dev:.3e} at T = 10 (bound 1e-8), {secs:.2} s"),
    );
}

#[test]
fn criterion_02_fourth_order_convergence() {
    let t0 = Instant::now();
    let (g, f, p) = sine_case(32, 0.4, 1.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s0 = random_initial_state(&g, &mut rng, InitialNorm::L2(1.0)).unwrap();
    let run = |h: f64| {
        integrate(&s0, &f, &p, &IntegrateConfig::new(h, 1.0), None, None)
            .unwrap()
            .final_state
    };
    let sols: Vec<State> = [4e-3, 2e-3, 1e-3, 5e-4].into_iter().map(run).collect();
    let diffs: Vec<f64> = sols.windows(2).map(|w| state_distance(&w[0], &w[1])).collect();
    let orders: Vec<f64> = diffs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let secs = t0.elapsed().as_secs_f64();
    let pass = orders.iter().all(|o| (3.6..=4.2).contains(o)) && secs < 60.0;
    verdict(
        2,
        "fourth-order self-convergence",
        pass,
        {
            let d: Vec<String> = diffs.iter().map(|x| format!("{x:.2e}")).collect();
            format!("observed orders {orders:.3?} (band [3.6, 4.2]), differences {d:?}, {secs:.1} s")
        },
    );
}

#[test]
fn criterion_03_conservation() {
    // aliased products break energy conservation at the 1e-6 level
    // independently of h; the truncated Galerkin system conserves it
    let g = Grid::new(32).unwrap().with_dealias(true);
    let cfg = VerificationConfig {
        t_final: 10.0,
        h: 1e-3,
        ensemble_size: 3,
        seed: 3,
        ..VerificationConfig::new(&g)
    };
    let [mass, energy] = verify_conservation(&cfg).unwrap();
    verdict(
        3,
        "conservation without damping or forcing",
        mass.passed() && energy.passed(),
        format!(
            "max relative mass drift {:.2e} (bound 1e-8), energy drift {:.2e} (bound 1e-6) over T = 10",
            mass.value, energy.value
        ),
    );
}

#[test]
fn criterion_04_absorbing_ball_and_equilibrium_bound() {
    let (g, f, p) = sine_case(32, 0.4, 1.0, 1.0);
    let cfg = VerificationConfig {
        params: p,
        forcing: f,
        initial: InitialNorm::L2(10.0),
        seed: 4,
        ..VerificationConfig::new(&g)
    };
    let ball = verify_absorbing_ball(&cfg).unwrap();
    let radius = 2.0 * std::f64::consts::PI.sqrt() / 0.4;

    let mut eqs = Vec::new();
    for b in [
        gamma_branch(32, 1.0, 1.0, 2.0, 0.01),
        gamma_branch(32, 1.0, 0.5, 2.0, 0.01),
        eta_branch(DIAGRAM_MODES, 0.4),
    ] {
        eqs.extend(b.points.iter().filter_map(|p| p.equilibrium().cloned()));
    }
    let worst = eqs
        .iter()
        .map(|e| {
            let r = verify_apriori(e);
            r.checks[0].lhs - r.checks[0].rhs
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = ball.passed() && (ball.bound - radius).abs() < 1e-12 && worst <= 1e-10;
    verdict(
        4,
        "absorbing ball and equilibrium L2 bound",
        pass,
        format!(
            "max terminal ||u|| {:.4} vs radius {radius:.4} ({}); {} equilibria, max ||v|| - ||f||/gamma = {worst:.3e}",
            ball.value,
            ball.note,
            eqs.len()
        ),
    );
}

#[test]
fn criterion_05_trivial_attractor() {
    let t0 = Instant::now();
    let g = Grid::new(32).unwrap();
    let cfg = VerificationConfig {
        seed: 5,
        ..VerificationConfig::new(&g)
    };
    let eps = lyapunov_epsilon(&cfg.params).unwrap();
    let dist = verify_trivial_attractor(&cfg).unwrap();
    let lyap = verify_lyapunov_decay(&cfg).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let pass = dist.passed() && lyap.passed() && (eps - 0.5).abs() < 1e-15 && secs < 600.0;
    verdict(
        5,
        "trivial attractor",
        pass,
        format!(
            "max distance {:.2e} (bound 1e-6); H decay ratio {:.3e} vs envelope exp(-eps t/2), eps = {eps}; {secs:.0} s",
            dist.value, lyap.value
        ),
    );
}

#[test]
fn criterion_06_resolvent_and_contraction() {
    let g = Grid::new(32).unwrap();
    let p = ModelParams::new(5.0, 1.0, 1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut field = |amp: f64, real: bool| {
        let mut f = SpectralField::zeros(&g);
        for k in -8i64..=8 {
            let c = num_complex::Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            f.set_coeff(k, c / (1.0 + (k * k) as f64));
        }
        let f = if real { f.real_part() } else { f };
        let n = f.l2_norm();
        f.scale_real(amp / n)
    };
    let (mut worst_res, mut worst_ratio, mut worst_ball) = (f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    let mut all = true;
    for i in 0..50 {
        let v = field(0.5 + (i % 5) as f64, false);
        let fp = field(0.2 + 0.04 * i as f64, true);
        let w = solve_resolvent(&v, &fp, &p).unwrap();
        let excess = w.l2_norm() - fp.l2_norm() / p.gamma;
        worst_res = worst_res.max(excess / fp.l2_norm());
        let forcing = Forcing {
            profile: fp.clone(),
            description: "random".into(),
        };
        let eq = fixed_point_solve(&forcing, &p, 1e-13, 500).unwrap();
        // contraction: increments shrink until they reach round-off
        let hist: Vec<f64> = eq.history.iter().copied().filter(|&x| x > 1e-12).collect();
        let ratio = hist.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        worst_ratio = worst_ratio.max(ratio);
        let ball = eq.v.sobolev_norm(1.0).unwrap() - 2.0 * fp.sobolev_norm(1.0).unwrap() / p.gamma;
        worst_ball = worst_ball.max(ball);
        all &= excess <= 1e-12 * fp.l2_norm() && ratio < 1.0 && ball <= 0.0;
    }
    verdict(
        6,
        "resolvent bound and contraction",
        all,
        format!(
            "50 samples at gamma = 5: max (||R^-1 f|| - ||f||/gamma)/||f|| = {worst_res:.2e}, max increment ratio {worst_ratio:.3}, max ||v||_H1 - 2||f||_H1/gamma = {worst_ball:.3}"
        ),
    );
}

#[test]
fn criterion_07_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for gamma in [2.0, 1.0, 0.6] {
        let (_, f, p) = sine_case(32, gamma, 1.0, 1.0);
        let eq = hybrid_solve(&f, &p, 1e-12, 500).unwrap();
        let x = eq.state();
        let g = x.grid().clone();
        let j = rhs_jacobian(&x, &p).unwrap();
        let x0 = DVector::from_vec(x.to_real_vec());
        let rhs = |y: &DVector<f64>| {
            let s = State::from_real_vec(&g, y.as_slice()).unwrap();
            DVector::from_vec(full_rhs(&s, &f.profile, &p).unwrap().to_real_vec())
        };
        for _ in 0..20 {
            let mut d = DVector::from_fn(x0.len(), |_, _| rng.random_range(-1.0..1.0));
            d /= d.norm();
            let eps = 1e-5;
            let fd = (rhs(&(&x0 + &d * eps)) - rhs(&(&x0 - &d * eps))) / (2.0 * eps);
            let jd = &j * &d;
            worst = worst.max((&jd - &fd).norm() / jd.norm());
        }
    }
    verdict(
        7,
        "analytic Jacobian",
        worst < 1e-6,
        format!("max relative error vs central differences {worst:.2e} over 3 equilibria x 20 directions (bound 1e-6)"),
    );
}

#[test]
fn criterion_08_hopf_location() {
    let t0 = Instant::now();
    let b = gamma_branch(32, 1.0, 0.5, 2.0, 0.01);
    let mut rows = Vec::new();
    let mut found = Vec::new();
    for e in b.events_of(EventKind::Hopf) {
        let eq = b.points[e.point].equilibrium().unwrap();
        let at = |p: f64| {
            let s = refine_equilibrium(eq, &ParamName::Gamma.with(&eq.params, p), 1e-11).unwrap();
            spectrum(&assemble_jacobian(&s).unwrap(), DEFAULT_THRESHOLD).unwrap()
        };
        let (lo, hi) = (at(e.bracket.0), at(e.bracket.1));
        let flips = lo.max_real_part * hi.max_real_part < 0.0;
        found.push((e.param_value, e.accuracy(), flips));
        rows.push((e.bracket.0, lo));
        rows.push((e.bracket.1, hi));
    }
    let dir = out_dir();
    let mut w = BufWriter::new(File::create(dir.join("criterion08_hopf_spectra.csv")).unwrap());
    let refs: Vec<_> = rows.iter().map(|(p, r)| (*p, r)).collect();
    write_spectrum_csv(&mut w, &refs).unwrap();
    let rightmost = b
        .points
        .iter()
        .map(|p| p.stability.metric())
        .fold(f64::NEG_INFINITY, f64::max);
    let secs = t0.elapsed().as_secs_f64();
    let pass = found
        .iter()
        .any(|&(g, acc, flips)| g > 0.2 && g < 0.3 && acc <= 1e-4 && flips)
        && secs < 900.0;
    let last = b.points.last().map(|p| p.param_value).unwrap_or(f64::NAN);
    verdict(
        8,
        "Hopf location at alpha1 = 0.5",
        pass,
        format!(
            "Hopf events (gamma, bracket, sign change) {found:?}; branch of {} points down to gamma = {last:.3}, largest max Re(lambda) on branch {rightmost:.3e}; {secs:.0} s",
            b.points.len()
        ),
    );
}

/// Periodic branches of criterion 10, computed once.
struct Diagrams {
    gamma_sweep: (Branch, Vec<Branch>),
    eta_040: (Branch, Vec<Branch>),
    eta_0225: (Branch, Vec<Branch>),
    elapsed: Duration,
}

fn orbit_branches(eq: &Branch, param: ParamName, range: (f64, f64), first_only: bool) -> Vec<Branch> {
    let sh = ShootingSettings::default();
    let cs = ContinuationSettings {
        max_points: ORBIT_POINTS,
        ..settings()
    };
    let mut out = Vec::new();
    for e in eq.events_of(EventKind::Hopf) {
        let start: OrbitPoint = match orbit_from_hopf(&eq.points[e.point], 1e-3, &sh) {
            Ok(o) => o,
            Err(err) => {
                eprintln!("no orbit at Hopf {}: {err}", e.param_value);
                continue;
            }
        };
        let b = continue_orbits(&start, param, range, &cs, &sh).unwrap();
        let has_pd = b.events_of(EventKind::PeriodDoubling).next().is_some();
        out.push(b);
        if first_only && has_pd {
            break;
        }
    }
    out
}

fn diagrams() -> &'static Diagrams {
    static D: OnceLock<Diagrams> = OnceLock::new();
    D.get_or_init(|| {
        let t0 = Instant::now();
        let eq = gamma_branch(DIAGRAM_MODES, 1.0, 1.0, 2.0, 0.01);
        let orbits = orbit_branches(&eq, ParamName::Gamma, (0.01, 2.0), true);
        let gamma_sweep = (eq, orbits);
        let eq = eta_branch(DIAGRAM_MODES, 0.4);
        let orbits = orbit_branches(&eq, ParamName::Delta, (0.2, 14.0), true);
        let eta_040 = (eq, orbits);
        let eq = eta_branch(DIAGRAM_MODES, 0.225);
        let orbits = orbit_branches(&eq, ParamName::Delta, (0.2, 14.0), false);
        let eta_0225 = (eq, orbits);
        Diagrams {
            gamma_sweep,
            eta_040,
            eta_0225,
            elapsed: t0.elapsed(),
        }
    })
}

fn event_list(b: &Branch, kind: EventKind) -> Vec<f64> {
    b.events_of(kind).map(|e| (e.param_value * 1e4).round() / 1e4).collect()
}

#[test]
fn criterion_09_orbit_integrity() {
    let d = diagrams();
    let sh = ShootingSettings::default();
    let mut count = 0;
    let (mut worst_res, mut worst_triv) = (0.0f64, 0.0f64);
    for (_, orbits) in [&d.gamma_sweep, &d.eta_040, &d.eta_0225] {
        for b in orbits {
            for p in &b.points {
                let o = p.orbit().unwrap();
                count += 1;
                worst_res = worst_res.max(o.verified_residual);
                worst_triv = worst_triv.max((o.trivial_multiplier() - 1.0).norm());
                assert_eq!(o.steps % 2, 0);
            }
        }
    }
    let pass = count > 0 && worst_res < 1e-7 && worst_triv < sh.trivial_tol;
    verdict(
        9,
        "periodic orbit integrity",
        pass,
        format!(
            "{count} orbits: max re-integration residual at half step {worst_res:.2e} (bound 1e-7), max |mu_triv - 1| {worst_triv:.2e} (bound 1e-3)"
        ),
    );
}

#[test]
fn criterion_10_bifurcation_structure() {
    let d = diagrams();
    let dir = out_dir();
    for (name, (eq, orbits)) in [
        ("criterion10a_gamma_sweep.csv", &d.gamma_sweep),
        ("criterion10b_eta_sweep_gamma0.4.csv", &d.eta_040),
        ("criterion10c_eta_sweep_gamma0.225.csv", &d.eta_0225),
    ] {
        let mut all = vec![(0, eq)];
        all.extend(orbits.iter().enumerate().map(|(i, b)| (i + 1, b)));
        let w = BufWriter::new(File::create(dir.join(name)).unwrap());
        zakharov_core::continuation::write_branch_csv(w, &all).unwrap();
    }
    let describe = |orbits: &[Branch]| -> String {
        orbits
            .iter()
            .enumerate()
            .map(|(i, b)| {
                format!(
                    "branch {} ({} pts{}): pd {:?} torus {:?}",
                    i + 1,
                    b.points.len(),
                    b.truncated.as_ref().map(|_| ", truncated").unwrap_or(""),
                    event_list(b, EventKind::PeriodDoubling),
                    event_list(b, EventKind::Torus)
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    };
    let (eq_a, orb_a) = &d.gamma_sweep;
    let a = eq_a.points.len() > 1
        && !hopf_values(eq_a).is_empty()
        && orb_a.iter().any(|b| b.points.len() > 1)
        && orb_a.iter().any(|b| b.events_of(EventKind::PeriodDoubling).next().is_some());
    let (_, orb_b) = &d.eta_040;
    let b = orb_b.iter().any(|b| b.events_of(EventKind::PeriodDoubling).next().is_some());
    let (_, orb_c) = &d.eta_0225;
    let c = orb_c.iter().any(|b| {
        b.events_of(EventKind::Torus).next().is_some()
            && b.events_of(EventKind::PeriodDoubling).next().is_none()
    });
    let tag = |x: bool| if x { "PASS" } else { "FAIL" };
    verdict(
        10,
        "qualitative bifurcation structure",
        a && b && c,
        format!(
            "(a) {} gamma Hopfs {:?}, {} | (b) {} eta Hopfs {:?}, {} | (c) {} eta Hopfs {:?}, {} | N = {DIAGRAM_MODES}, {:.0} s",
            tag(a),
            hopf_values(eq_a),
            describe(orb_a),
            tag(b),
            hopf_values(&d.eta_040.0),
            describe(orb_b),
            tag(c),
            hopf_values(&d.eta_0225.0),
            describe(orb_c),
            d.elapsed.as_secs_f64()
        ),
    );
}
