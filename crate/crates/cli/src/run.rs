//! Command execution and artifact emission.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use zakharov_core::continuation::{
    continue_equilibria, continue_orbits, double_period_branch, orbit_from_hopf, refine_equilibrium,
    write_branch_csv, Branch, BranchPoint, ContinuationSettings, EventKind, OrbitPoint, ParamName,
    ShootingSettings,
};
use zakharov_core::etdrk4::{integrate, IntegrateConfig};
use zakharov_core::model::{energy_report, lyapunov_epsilon, ModelParams};
use zakharov_core::stability::{assemble_jacobian, spectrum, write_spectrum_csv, StabilityReport};
use zakharov_core::stationary::{fixed_point_solve, hybrid_solve, verify_apriori, Equilibrium};
use zakharov_core::verify::{random_initial_state, verify_all, InitialNorm, VerificationConfig};
use zakharov_core::{Error as CoreError, State};

use crate::config::{emit_config, Command, ConfigError, Initial, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", list(.0))]
    Config(Vec<ConfigError>),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("{0}")]
    NotFound(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{0} verification check(s) failed")]
    Verification(usize),
}

fn list(errs: &[ConfigError]) -> String {
    errs.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n")
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const BLOW_UP: i32 = 3;
    pub const NON_CONVERGENCE: i32 = 4;
    pub const IO: i32 = 5;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => exit::CONFIG,
            CliError::NotFound(_) => exit::NON_CONVERGENCE,
            CliError::Io { .. } => exit::IO,
            CliError::Verification(_) => exit::CHECK_FAILED,
            CliError::Core(e) => match e {
                CoreError::BlowUp { .. } => exit::BLOW_UP,
                CoreError::NonConvergence { .. }
                | CoreError::Singular { .. }
                | CoreError::OrbitCollapsed { .. }
                | CoreError::PeriodCollapse { .. }
                | CoreError::DoubledCover { .. }
                | CoreError::Eigen(_) => exit::NON_CONVERGENCE,
                CoreError::Io(_) => exit::IO,
                _ => exit::CONFIG,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// SHA-256 of the canonical config text, hex encoded. The output
/// directory is left out so that identical runs agree wherever they write.
pub fn config_hash(cfg: &RunConfig) -> String {
    let located = RunConfig {
        out: String::new(),
        ..cfg.clone()
    };
    Sha256::digest(emit_config(&located).as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Output directory that remembers every file it hands out.
struct Outputs {
    dir: PathBuf,
    hash: String,
    files: Vec<String>,
}

impl Outputs {
    fn new(cfg: &RunConfig) -> Result<Self> {
        let dir = PathBuf::from(&cfg.out);
        fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut out = Self {
            dir,
            hash: config_hash(cfg),
            files: Vec::new(),
        };
        let text = emit_config(cfg);
        out.write("config.txt", |w| Ok(w.write_all(text.as_bytes())?))?;
        Ok(out)
    }

    fn write(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut BufWriter<File>) -> zakharov_core::Result<()>,
    ) -> Result<()> {
        let path = self.dir.join(name);
        let io = |source| CliError::Io {
            path: path.clone(),
            source,
        };
        let mut w = BufWriter::new(File::create(&path).map_err(io)?);
        body(&mut w).map_err(|e| match e {
            CoreError::Io(source) => io(source),
            other => CliError::Core(other),
        })?;
        w.flush().map_err(io)?;
        self.files.push(name.to_string());
        println!("wrote {}", path.display());
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        let mut files = std::mem::take(&mut self.files);
        files.push("manifest.csv".into());
        let hash = self.hash.clone();
        self.write("manifest.csv", |w| {
            writeln!(w, "file,config_sha256")?;
            for f in &files {
                writeln!(w, "{f},{hash}")?;
            }
            Ok(())
        })
    }
}

fn continuation_settings(cfg: &RunConfig) -> ContinuationSettings {
    ContinuationSettings {
        ds: cfg.ds,
        ds_max: cfg.ds_max,
        max_points: cfg.max_points,
        event_accuracy: cfg.event_accuracy,
        ..ContinuationSettings::default()
    }
}

fn shooting_settings(cfg: &RunConfig) -> ShootingSettings {
    let mut s = ShootingSettings::default();
    s.flow.h_max = cfg.orbit_h;
    s
}

/// Equilibrium at `params`, reached from the large-damping fixed point at
/// `anchor_gamma` by continuation in γ when an anchor is set.
fn equilibrium_at(cfg: &RunConfig, params: &ModelParams<f64>) -> Result<Equilibrium> {
    let forcing = cfg.forcing();
    if cfg.anchor_gamma <= 0.0 {
        return Ok(hybrid_solve(&forcing, params, cfg.tol, cfg.max_iter)?);
    }
    let anchor = ModelParams {
        gamma: cfg.anchor_gamma,
        ..*params
    };
    let eq = fixed_point_solve(&forcing, &anchor, cfg.tol, cfg.max_iter.max(2000))?;
    if cfg.anchor_gamma == params.gamma {
        return Ok(eq);
    }
    let branch = continue_equilibria(
        &eq,
        ParamName::Gamma,
        (cfg.anchor_gamma, params.gamma),
        &continuation_settings(cfg),
    )?;
    let last = branch
        .points
        .last()
        .and_then(BranchPoint::equilibrium)
        .filter(|e| (e.params.gamma - params.gamma).abs() <= 1e-9 * (1.0 + params.gamma))
        .ok_or_else(|| {
            CliError::NotFound(format!(
                "continuation from gamma = {} did not reach gamma = {}{}",
                cfg.anchor_gamma,
                params.gamma,
                branch.truncated.map(|t| format!(" ({t})")).unwrap_or_default()
            ))
        })?;
    Ok(refine_equilibrium(last, params, cfg.tol)?)
}

fn sweep_start(cfg: &RunConfig) -> ModelParams<f64> {
    cfg.sweep_param.with(&cfg.params(), cfg.sweep_from)
}

fn equilibrium_branch(cfg: &RunConfig) -> Result<Branch> {
    let start = equilibrium_at(cfg, &sweep_start(cfg))?;
    let b = continue_equilibria(
        &start,
        cfg.sweep_param,
        (cfg.sweep_from, cfg.sweep_to),
        &continuation_settings(cfg),
    )?;
    report_branch("equilibrium", &b);
    Ok(b)
}

fn report_branch(label: &str, b: &Branch) {
    println!("{label} branch: {} points", b.points.len());
    for e in &b.events {
        println!("  {} at {} (bracket width {:.1e})", e.kind.as_str(), e.param_value, e.accuracy());
    }
    if let Some(t) = &b.truncated {
        println!("  stopped early: {t}");
    }
}

fn write_events<W: Write>(w: &mut W, branches: &[(usize, &Branch)]) -> zakharov_core::Result<()> {
    writeln!(w, "branch_id,kind,param_value,bracket_lo,bracket_hi,accuracy")?;
    for (id, b) in branches {
        for e in &b.events {
            writeln!(
                w,
                "{id},{},{},{},{},{:e}",
                e.kind.as_str(),
                e.param_value,
                e.bracket.0,
                e.bracket.1,
                e.accuracy()
            )?;
        }
    }
    Ok(())
}

fn stability_of(eq: &Equilibrium) -> Result<StabilityReport> {
    Ok(spectrum(
        &assemble_jacobian(eq)?,
        zakharov_core::stability::DEFAULT_THRESHOLD,
    )?)
}

/// Spectra on both ends of every Hopf bracket.
fn hopf_side_spectra(cfg: &RunConfig, b: &Branch) -> Result<Vec<(f64, StabilityReport)>> {
    let mut rows = Vec::new();
    for e in b.events_of(EventKind::Hopf) {
        let Some(eq) = b.points[e.point].equilibrium() else {
            continue;
        };
        for p in [e.bracket.0, e.bracket.1] {
            let side = refine_equilibrium(eq, &cfg.sweep_param.with(&eq.params, p), cfg.tol)?;
            rows.push((p, stability_of(&side)?));
        }
    }
    Ok(rows)
}

fn hopf_points(b: &Branch) -> Vec<&BranchPoint> {
    b.events_of(EventKind::Hopf).map(|e| &b.points[e.point]).collect()
}

fn orbit_at_hopf(cfg: &RunConfig, eq_branch: &Branch, index: usize) -> Result<OrbitPoint> {
    let hopfs = hopf_points(eq_branch);
    let hp = hopfs.get(index).ok_or_else(|| {
        CliError::NotFound(format!(
            "hopf_index = {index} but the equilibrium branch has {} Hopf event(s)",
            hopfs.len()
        ))
    })?;
    let o = orbit_from_hopf(hp, cfg.hopf_eps, &shooting_settings(cfg))?;
    println!(
        "orbit at {} = {}: period {:.6}, class {}",
        cfg.sweep_param,
        cfg.sweep_param.get(&o.params),
        o.period,
        o.orbit_class.as_str()
    );
    Ok(o)
}

fn write_orbit(out: &mut Outputs, cfg: &RunConfig, o: &OrbitPoint, tag: &str) -> Result<()> {
    let trace = o.trace(cfg.orbit_samples)?;
    let reports = trace
        .iter()
        .map(|(t, x)| energy_report(x, &o.params, *t, None, None))
        .collect::<zakharov_core::Result<Vec<_>>>()?;
    out.write(&format!("orbit{tag}.csv"), |w| {
        writeln!(w, "sample,t,schrodinger_energy,dirac_energy,mass")?;
        for (i, r) in reports.iter().enumerate() {
            writeln!(w, "{i},{:e},{:e},{:e},{:e}", r.time, r.schrodinger_energy, r.dirac_energy, r.mass)?;
        }
        Ok(())
    })?;
    out.write(&format!("orbit{tag}_states.csv"), |w| {
        writeln!(w, "# period = {}", o.period)?;
        writeln!(w, "sample,t,k,re_u,im_u,re_n,im_n")?;
        for (i, (t, x)) in trace.iter().enumerate() {
            for j in 0..x.grid().num_modes() {
                let (u, n) = (x.u.coeffs()[j], x.n_dirac.coeffs()[j]);
                let k = x.grid().wavenumber(j);
                writeln!(w, "{i},{t:e},{k},{:e},{:e},{:e},{:e}", u.re, u.im, n.re, n.im)?;
            }
        }
        Ok(())
    })?;
    let triv = o.trivial_index;
    out.write(&format!("floquet{tag}.csv"), |w| {
        writeln!(w, "re,im,modulus,trivial")?;
        for (i, m) in o.multipliers.iter().enumerate() {
            writeln!(w, "{:e},{:e},{:e},{}", m.re, m.im, m.norm(), i == triv)?;
        }
        Ok(())
    })
}

fn simulate(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let grid = cfg.grid();
    let forcing = cfg.forcing();
    let params = cfg.params();
    let mut ic = IntegrateConfig::new(cfg.h, cfg.t_final);
    ic.sample_every = cfg.sample_every;
    ic.snapshot_every = cfg.snapshot_stride;
    ic.contour_points = cfg.contour_points;
    let state0 = match cfg.initial {
        Initial::Zero => State::zeros(&grid),
        Initial::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            random_initial_state(&grid, &mut rng, InitialNorm::L2(cfg.initial_norm))?
        }
        Initial::Equilibrium => {
            let eq = equilibrium_at(cfg, &params)?;
            if params.delta > 0.0 {
                ic.reference = Some((eq.v.clone(), eq.m.clone()));
                ic.lyapunov_eps = Some(lyapunov_epsilon(&params)?);
            }
            eq.state()
        }
    };
    let record = integrate(&state0, &forcing, &params, &ic, None, None)?;
    if record.any_under_resolved() {
        eprintln!("warning: spectral tail exceeded the resolution threshold; consider more modes");
    }
    println!(
        "integrated {} steps to t = {}; final L2 norm {:.6e}",
        record.steps,
        record.final_time,
        record.final_state.l2_norm()
    );
    out.write("trajectory.csv", |w| record.write_csv(w))?;
    if !record.snapshots.is_empty() {
        let xs = grid.collocation_points();
        out.write("snapshots.csv", |w| {
            writeln!(w, "t,x,re_u,im_u,re_n,im_n")?;
            for (t, s) in &record.snapshots {
                let (u, n) = (s.u.to_physical(), s.n_dirac.to_physical());
                for (j, x) in xs.iter().enumerate() {
                    writeln!(w, "{t:e},{x:e},{:e},{:e},{:e},{:e}", u[j].re, u[j].im, n[j].re, n[j].im)?;
                }
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn stationary(cfg: &RunConfig, out: &mut Outputs) -> Result<Equilibrium> {
    let eq = equilibrium_at(cfg, &cfg.params())?;
    let report = verify_apriori(&eq);
    println!(
        "equilibrium: residual {:.3e} after {} {} iterations, L2 norm {:.6e}",
        eq.residual_norm,
        eq.iterations,
        eq.method,
        eq.norm_stat()
    );
    print!("{report}");
    out.write("equilibrium.txt", |w| eq.write_to(w, &[]))?;
    Ok(eq)
}

fn verify(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let vc = VerificationConfig {
        params: cfg.params(),
        forcing: cfg.forcing(),
        ensemble_size: cfg.ensemble_size,
        seed: cfg.seed,
        t_final: cfg.t_final,
        h: cfg.h,
        initial: InitialNorm::H1(cfg.initial_norm),
        sample_interval: cfg.h * cfg.sample_every as f64,
        ..VerificationConfig::new(&cfg.grid())
    };
    let report = verify_all(&vc)?;
    print!("{report}");
    out.write("verification.csv", |w| report.write_csv(w))?;
    let failed = report.checks.iter().filter(|c| c.pass == Some(false)).count();
    if failed > 0 {
        return Err(CliError::Verification(failed));
    }
    Ok(())
}

fn diagram(cfg: &RunConfig, out: &mut Outputs) -> Result<()> {
    let eq_branch = equilibrium_branch(cfg)?;
    let cs = continuation_settings(cfg);
    let sh = shooting_settings(cfg);
    let range = (cfg.sweep_from, cfg.sweep_to);
    let mut orbit_branches: Vec<Branch> = Vec::new();
    let n_hopf = hopf_points(&eq_branch).len().min(cfg.max_orbit_branches);
    for i in 0..n_hopf {
        let b = orbit_at_hopf(cfg, &eq_branch, i)
            .and_then(|o| Ok(continue_orbits(&o, cfg.sweep_param, range, &cs, &sh)?));
        match b {
            Ok(b) => {
                report_branch(&format!("periodic (Hopf {i})"), &b);
                orbit_branches.push(b);
            }
            Err(e) => eprintln!("periodic branch from Hopf {i} skipped: {e}"),
        }
    }
    if cfg.period_doubling {
        let mut doubled = Vec::new();
        for b in &orbit_branches {
            let Some(ev) = b.events_of(EventKind::PeriodDoubling).next() else {
                continue;
            };
            let res = double_period_branch(&b.points[ev.point], 1e-2, &sh)
                .and_then(|o| continue_orbits(&o, cfg.sweep_param, range, &cs, &sh));
            match res {
                Ok(d) => {
                    report_branch("doubled", &d);
                    doubled.push(d);
                }
                Err(e) => eprintln!("doubled branch at {} skipped: {e}", ev.param_value),
            }
        }
        orbit_branches.extend(doubled);
    }
    let mut all: Vec<(usize, &Branch)> = vec![(0, &eq_branch)];
    all.extend(orbit_branches.iter().enumerate().map(|(i, b)| (i + 1, b)));
    out.write("diagram.csv", |w| write_branch_csv(w, &all))?;
    out.write("events.csv", |w| write_events(w, &all))?;
    Ok(())
}

/// Runs `cfg.command`, writing artifacts and the manifest under `cfg.out`.
pub fn run(cfg: &RunConfig) -> Result<()> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(CliError::Config(errs));
    }
    let command = cfg
        .command
        .ok_or_else(|| CliError::Config(vec![crate::config::missing_command()]))?;
    let mut out = Outputs::new(cfg)?;
    match command {
        Command::Simulate => simulate(cfg, &mut out)?,
        Command::Stationary => {
            stationary(cfg, &mut out)?;
        }
        Command::Spectrum => {
            let eq = stationary(cfg, &mut out)?;
            let r = stability_of(&eq)?;
            println!(
                "max real part {:.6e} ({})",
                r.max_real_part,
                r.classification.as_str()
            );
            let p = cfg.sweep_param.get(&eq.params);
            out.write("spectrum.csv", |w| write_spectrum_csv(w, &[(p, &r)]))?;
        }
        Command::ContinueEq => {
            let b = equilibrium_branch(cfg)?;
            out.write("branch.csv", |w| write_branch_csv(w, &[(0, &b)]))?;
            out.write("events.csv", |w| write_events(w, &[(0, &b)]))?;
            let sides = hopf_side_spectra(cfg, &b)?;
            if !sides.is_empty() {
                let rows: Vec<_> = sides.iter().map(|(p, r)| (*p, r)).collect();
                out.write("hopf_spectra.csv", |w| write_spectrum_csv(w, &rows))?;
            }
        }
        Command::FindOrbit => {
            let b = equilibrium_branch(cfg)?;
            let o = orbit_at_hopf(cfg, &b, cfg.hopf_index)?;
            write_orbit(&mut out, cfg, &o, "")?;
        }
        Command::ContinueOrbit => {
            let eq = equilibrium_branch(cfg)?;
            let o = orbit_at_hopf(cfg, &eq, cfg.hopf_index)?;
            let b = continue_orbits(
                &o,
                cfg.sweep_param,
                (cfg.sweep_from, cfg.sweep_to),
                &continuation_settings(cfg),
                &shooting_settings(cfg),
            )?;
            report_branch("periodic", &b);
            let all = [(0, &eq), (1, &b)];
            out.write("branch.csv", |w| write_branch_csv(w, &all))?;
            out.write("events.csv", |w| write_events(w, &all))?;
            if let Some(last) = b.points.last().and_then(BranchPoint::orbit) {
                write_orbit(&mut out, cfg, last, "_end")?;
            }
        }
        Command::Verify => {
            // the CSV is written even when a check fails
            let res = verify(cfg, &mut out);
            out.finish()?;
            return res;
        }
        Command::Diagram => diagram(cfg, &mut out)?,
    }
    out.finish()
}

/// Loads a config file, mapping read failures to the I/O class.
pub fn read_config_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}
