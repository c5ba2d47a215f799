//! Cross-module consistency: stationary solver, spectra, integrator and
//! shooting must agree with each other.

use num_complex::Complex64;
use zakharov_core::continuation::{continue_equilibria, orbit_from_hopf, ContinuationSettings, EventKind, ParamName, ShootingSettings};
use zakharov_core::etdrk4::{integrate, IntegrateConfig};
use zakharov_core::model::{Forcing, ModelParams};
use zakharov_core::spectral::{Grid, SpectralField};
use zakharov_core::stability::{assemble_jacobian, spectrum, Classification, DEFAULT_THRESHOLD};
use zakharov_core::stationary::{fixed_point_solve, hybrid_solve};
use zakharov_core::State;

#[test]
fn perturbation_decays_at_the_spectral_rate() {
    let g = Grid::new(16).unwrap();
    let f = Forcing::sine(&g);
    let p = ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
    let eq = hybrid_solve(&f, &p, 1e-12, 200).unwrap();
    let rep = spectrum(&assemble_jacobian(&eq).unwrap(), DEFAULT_THRESHOLD).unwrap();
    assert_eq!(rep.classification, Classification::Stable);
    let rate = rep.max_real_part;

    let base = eq.state();
    let kick = SpectralField::mode(&g, 2, Complex64::new(1e-3, 0.0));
    let s0 = State::new(&base.u + &kick, base.n_dirac.clone()).unwrap();
    let t = 20.0;
    let rec = integrate(&s0, &f, &p, &IntegrateConfig::new(5e-3, t), None, None).unwrap();
    let d0 = s0.sub(&base).l2_norm();
    let d1 = rec.final_state.sub(&base).l2_norm();
    // non-normal transients allow a modest constant in front of the exponential
    assert!(d1 < 50.0 * d0 * (rate * t).exp(), "{d1:e} vs {d0:e}, rate {rate}");
    assert!(d1 < 1e-2 * d0);
}

#[test]
fn hopf_orbit_period_matches_the_critical_frequency() {
    let g = Grid::new(8).unwrap();
    let f = Forcing::sine(&g);
    let eq = fixed_point_solve(&f, &ModelParams::new(0.6, 1.0, 1.0, 1.0).unwrap(), 1e-12, 500).unwrap();
    let b = continue_equilibria(&eq, ParamName::Gamma, (0.6, 0.45), &ContinuationSettings::default().with_ds(0.02)).unwrap();
    let e = b.events_of(EventKind::Hopf).next().expect("a Hopf point");
    let point = &b.points[e.point];
    let eq = point.equilibrium().unwrap();
    let omega = spectrum(&assemble_jacobian(eq).unwrap(), DEFAULT_THRESHOLD)
        .unwrap()
        .critical_pair()
        .unwrap()
        .im;
    let orbit = orbit_from_hopf(point, 1e-3, &ShootingSettings::default()).unwrap();
    let predicted = 2.0 * std::f64::consts::PI / omega;
    assert!((orbit.period - predicted).abs() < 1e-2 * predicted, "{} vs {predicted}", orbit.period);
    assert!(orbit.is_accurate(&ShootingSettings::default()));
}

#[test]
fn coupling_scales_into_forcing_amplitude() {
    // u -> u/sqrt(a1 a2), n -> n/a1 maps (a1, a2, f) onto (1, 1, sqrt(a1 a2) f)
    let g = Grid::new(16).unwrap();
    let f = Forcing::sine(&g);
    let scaled = Forcing {
        profile: f.profile.scale_real(0.5f64.sqrt()),
        description: "scaled".into(),
    };
    for gamma in [1.5, 0.8] {
        let a = hybrid_solve(&f, &ModelParams::new(gamma, 1.0, 0.5, 1.0).unwrap(), 1e-12, 200).unwrap();
        let b = hybrid_solve(&scaled, &ModelParams::new(gamma, 1.0, 1.0, 1.0).unwrap(), 1e-12, 200).unwrap();
        assert!((a.v.l2_norm() * 0.5f64.sqrt() - b.v.l2_norm()).abs() < 1e-10);
        let la = spectrum(&assemble_jacobian(&a).unwrap(), DEFAULT_THRESHOLD).unwrap();
        let lb = spectrum(&assemble_jacobian(&b).unwrap(), DEFAULT_THRESHOLD).unwrap();
        for (x, y) in la.eigenvalues.iter().zip(&lb.eigenvalues) {
            assert!((x - y).norm() < 1e-8, "{x} vs {y}");
        }
    }
}
