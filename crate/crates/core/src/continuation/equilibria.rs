use nalgebra::{DMatrix, DVector};

use super::{
    sweep_target, BifurcationEvent, Branch, BranchPoint, ContinuationSettings, EventKind,
    ParamName, Solution, Stability,
};
use crate::error::{Error, Result};
use crate::model::{Forcing, ModelParams};
use crate::spectral::Grid;
use crate::stability::{assemble_jacobian, hopf_test, spectrum, StabilityReport};
use crate::stationary::{
    envelope_from_real, envelope_to_real, newton_solve, stationary_jacobian, stationary_residual,
    Equilibrium, SolveMethod,
};

/// Re-solves `eq` at new parameters by Newton from its envelope.
pub fn refine_equilibrium(
    eq: &Equilibrium,
    params: &ModelParams<f64>,
    tol: f64,
) -> Result<Equilibrium> {
    newton_solve(&eq.v, &eq.forcing, params, tol, 30)
}

/// The stationary map in extended coordinates `y = (x, p)`.
struct Extended<'a> {
    grid: Grid<f64>,
    forcing: &'a Forcing<f64>,
    base: ModelParams<f64>,
    param: ParamName,
}

impl Extended<'_> {
    fn dim(&self) -> usize {
        2 * self.grid.num_modes()
    }

    fn params(&self, p: f64) -> ModelParams<f64> {
        self.param.with(&self.base, p)
    }

    fn split(&self, y: &DVector<f64>) -> (DVector<f64>, f64) {
        let n = self.dim();
        (y.rows(0, n).into_owned(), y[n])
    }

    fn residual(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let (x, p) = self.split(y);
        let v = envelope_from_real(&self.grid, x.as_slice())?;
        Ok(envelope_to_real(&stationary_residual(&v, self.forcing, &self.params(p))?))
    }

    /// `[G_x | G_p]`, with `G_p` by central differences.
    fn jacobian(&self, y: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let (x, p) = self.split(y);
        let v = envelope_from_real(&self.grid, x.as_slice())?;
        let gx = stationary_jacobian(&v, &self.params(p))?;
        let hp = 1e-6 * p.abs().max(1.0);
        let mut yp = y.clone();
        yp[n] += hp;
        let mut ym = y.clone();
        ym[n] -= hp;
        let gp = (self.residual(&yp)? - self.residual(&ym)?) / (2.0 * hp);
        let mut j = DMatrix::zeros(n, n + 1);
        j.view_mut((0, 0), (n, n)).copy_from(&gx);
        j.set_column(n, &gp);
        Ok(j)
    }

    /// Unit tangent with `t_prev · t > 0`.
    fn tangent(&self, y: &DVector<f64>, t_prev: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.dim();
        let j = self.jacobian(y)?;
        let mut a = DMatrix::zeros(n + 1, n + 1);
        a.view_mut((0, 0), (n, n + 1)).copy_from(&j);
        a.row_mut(n).copy_from(&t_prev.transpose());
        let mut b = DVector::zeros(n + 1);
        b[n] = 1.0;
        let t = a.lu().solve(&b).ok_or(Error::Singular {
            context: "continuation tangent",
            condition: f64::INFINITY,
        })?;
        Ok(t.normalize())
    }

    /// Newton on `G(y) = 0`, `t·(y - y_pred) = 0`.
    fn correct(
        &self,
        y_pred: &DVector<f64>,
        t: &DVector<f64>,
        settings: &ContinuationSettings,
    ) -> Result<(DVector<f64>, usize)> {
        let n = self.dim();
        let mut y = y_pred.clone();
        for it in 1..=settings.max_newton {
            let g = self.residual(&y)?;
            let j = self.jacobian(&y)?;
            let mut a = DMatrix::zeros(n + 1, n + 1);
            a.view_mut((0, 0), (n, n + 1)).copy_from(&j);
            a.row_mut(n).copy_from(&t.transpose());
            let mut rhs = DVector::zeros(n + 1);
            rhs.rows_mut(0, n).copy_from(&(-&g));
            rhs[n] = -t.dot(&(&y - y_pred));
            let dy = a.lu().solve(&rhs).ok_or(Error::Singular {
                context: "arclength corrector",
                condition: f64::INFINITY,
            })?;
            y += &dy;
            if !y.iter().all(|v| v.is_finite()) {
                break;
            }
            let gnew = self.residual(&y)?.norm();
            if gnew < settings.newton_tol && dy.norm() < 1e-6 {
                return Ok((y, it));
            }
        }
        Err(Error::NonConvergence {
            method: "arclength corrector",
            iterations: settings.max_newton,
            residual: self.residual(&y).map(|g| g.norm()).unwrap_or(f64::NAN),
        })
    }

    fn point(&self, y: &DVector<f64>, iterations: usize) -> Result<(Equilibrium, StabilityReport)> {
        let (x, p) = self.split(y);
        let v = envelope_from_real(&self.grid, x.as_slice())?;
        let eq = Equilibrium::from_envelope(
            v,
            self.forcing,
            &self.params(p),
            SolveMethod::Newton,
            iterations,
            Vec::new(),
        )?;
        let report = spectrum(&assemble_jacobian(&eq)?, crate::stability::DEFAULT_THRESHOLD)?;
        Ok((eq, report))
    }
}

fn branch_point(param: ParamName, eq: Equilibrium, report: StabilityReport, event: EventKind) -> BranchPoint {
    BranchPoint {
        param_name: param,
        param_value: param.get(&eq.params),
        norm_stat: eq.norm_stat(),
        solution: Solution::Equilibrium(Box::new(eq)),
        stability: Stability::Spectrum(report),
        event,
    }
}

/// Follows the equilibrium branch through `start` across `range` in the
/// parameter `param`.
pub fn continue_equilibria(
    start: &Equilibrium,
    param: ParamName,
    range: (f64, f64),
    settings: &ContinuationSettings,
) -> Result<Branch> {
    settings.validate()?;
    let p0 = param.get(&start.params);
    let (target, dir) = sweep_target(p0, range)?;
    let (lo, hi) = (range.0.min(range.1), range.0.max(range.1));
    let ext = Extended {
        grid: start.grid().clone(),
        forcing: &start.forcing,
        base: start.params,
        param,
    };
    let n = ext.dim();
    let eq0 = refine_equilibrium(start, &start.params, settings.newton_tol)?;
    let mut y = envelope_to_real(&eq0.v).push(p0);
    let (eq0, r0) = ext.point(&y, eq0.iterations)?;
    let mut branch = Branch::default();
    branch.points.push(branch_point(param, eq0, r0.clone(), EventKind::None));
    if (target - p0).abs() <= 1e-12 * (1.0 + p0.abs()) || dir == 0.0 {
        return Ok(branch);
    }

    // initial tangent along the sweep direction
    let mut seed = DVector::zeros(n + 1);
    seed[n] = dir;
    let mut t = ext.tangent(&y, &seed)?;
    if t[n] * dir < 0.0 {
        t = -t;
    }
    let mut prev_report = r0;
    let mut ds = settings.ds;
    let mut easy = 0;

    while branch.points.len() < settings.max_points {
        let y_pred = &y + &t * ds;
        let attempt = ext.correct(&y_pred, &t, settings);
        let accepted = match attempt {
            Ok((y_new, iters)) => {
                let jump = (&y_new - &y).norm();
                let p_new = y_new[n];
                let bad_param = p_new <= 0.0;
                (jump <= 5.0 * ds && !bad_param).then_some((y_new, iters))
            }
            Err(_) => None,
        };
        let Some((y_new, iters)) = accepted else {
            ds *= 0.5;
            easy = 0;
            if ds < settings.ds_min {
                branch.truncated = Some(format!(
                    "corrector failed at {} = {} with step below {:e}",
                    param,
                    y[n],
                    settings.ds_min
                ));
                break;
            }
            continue;
        };

        let p_prev = y[n];
        let p_new = y_new[n];
        // leaving the range through either end stops the sweep there
        let exit = if p_new > hi {
            Some(hi)
        } else if p_new < lo {
            Some(lo)
        } else {
            None
        };
        let crossed = exit.is_some();
        let (y_next, t_next) = if let Some(target) = exit {
            // land on the end of the range with a natural-parameter solve
            let frac = (target - p_prev) / (p_new - p_prev);
            let x = y.rows(0, n) + (y_new.rows(0, n) - y.rows(0, n)) * frac;
            let v = envelope_from_real(&ext.grid, x.as_slice())?;
            let eq = newton_solve(&v, ext.forcing, &ext.params(target), settings.newton_tol, 30)?;
            (envelope_to_real(&eq.v).push(target), t.clone())
        } else {
            (y_new.clone(), ext.tangent(&y_new, &t)?)
        };
        let (eq, report) = ext.point(&y_next, iters)?;

        if t_next[n] * t[n] < 0.0 {
            branch.events.push(BifurcationEvent {
                kind: EventKind::Fold,
                param_value: y_next[n],
                bracket: (p_prev.min(y_next[n]), p_prev.max(y_next[n])),
                point: branch.points.len(),
            });
            branch.points.last_mut().unwrap().event = EventKind::Fold;
        }
        if hopf_test(p_prev, &prev_report, y_next[n], &report).is_some() {
            if let Ok((lo, hi, ym)) = refine_hopf(&ext, &y, &t, &y_next, &prev_report, settings) {
                let (eqh, rh) = ext.point(&ym, 0)?;
                branch.events.push(BifurcationEvent {
                    kind: EventKind::Hopf,
                    param_value: ym[n],
                    bracket: (lo, hi),
                    point: branch.points.len(),
                });
                branch.points.push(branch_point(param, eqh, rh, EventKind::Hopf));
            }
        }
        branch.points.push(branch_point(param, eq, report.clone(), EventKind::None));
        prev_report = report;
        y = y_next;
        t = t_next;
        if crossed {
            break;
        }
        if iters < 3 {
            easy += 1;
            if easy >= 3 {
                ds = (2.0 * ds).min(settings.ds_max);
                easy = 0;
            }
        } else {
            easy = 0;
        }
    }
    if branch.points.len() >= settings.max_points && branch.truncated.is_none() {
        branch.truncated = Some(format!("stopped after {} points", settings.max_points));
    }
    Ok(branch)
}

/// Bisection in arclength between `ya` and `yb` on the number of unstable
/// complex eigenvalues.
fn refine_hopf(
    ext: &Extended<'_>,
    ya: &DVector<f64>,
    ta: &DVector<f64>,
    yb: &DVector<f64>,
    report_a: &StabilityReport,
    settings: &ContinuationSettings,
) -> Result<(f64, f64, DVector<f64>)> {
    let n = ext.dim();
    let count_a = report_a.unstable_counts().1;
    let mut s_lo = 0.0;
    let mut s_hi = ta.dot(&(yb - ya));
    let mut p_lo = ya[n];
    let mut p_hi = yb[n];
    for _ in 0..60 {
        if (p_hi - p_lo).abs() < settings.event_accuracy {
            break;
        }
        let s = 0.5 * (s_lo + s_hi);
        let (y, _) = ext.correct(&(ya + ta * s), ta, settings)?;
        let (_, r) = ext.point(&y, 0)?;
        if r.unstable_counts().1 == count_a {
            s_lo = s;
            p_lo = y[n];
        } else {
            s_hi = s;
            p_hi = y[n];
        }
    }
    let (lo, hi) = (p_lo.min(p_hi), p_lo.max(p_hi));
    let s = 0.5 * (s_lo + s_hi);
    let (y, _) = ext.correct(&(ya + ta * s), ta, settings)?;
    Ok((lo, hi, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stationary::fixed_point_solve;

    #[test]
    fn trivial_branch_without_forcing() {
        let g = Grid::new(16).unwrap();
        let f = Forcing::zero(&g);
        let p = ModelParams::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let eq = fixed_point_solve(&f, &p, 1e-12, 10).unwrap();
        let settings = ContinuationSettings::default().with_ds(0.1);
        let b = continue_equilibria(&eq, ParamName::Gamma, (1.0, 0.5), &settings).unwrap();
        assert!(b.points.len() > 2);
        assert!(b.points.iter().all(|p| p.norm_stat == 0.0));
        assert!((b.points.last().unwrap().param_value - 0.5).abs() < 1e-12);
        assert!(b.events.is_empty());
    }

    #[test]
    fn degenerate_range_gives_single_point() {
        let g = Grid::new(16).unwrap();
        let f = Forcing::sine(&g);
        let p = ModelParams::new(2.0, 1.0, 1.0, 1.0).unwrap();
        let eq = fixed_point_solve(&f, &p, 1e-12, 100).unwrap();
        let b = continue_equilibria(&eq, ParamName::Gamma, (2.0, 2.0), &ContinuationSettings::default())
            .unwrap();
        assert_eq!(b.points.len(), 1);
    }

    #[test]
    fn large_gamma_branch_is_stable_and_continuous() {
        let g = Grid::new(16).unwrap();
        let f = Forcing::sine(&g);
        let p = ModelParams::new(3.0, 1.0, 1.0, 1.0).unwrap();
        let eq = fixed_point_solve(&f, &p, 1e-12, 100).unwrap();
        let settings = ContinuationSettings::default().with_ds(0.05);
        let b = continue_equilibria(&eq, ParamName::Gamma, (3.0, 1.0), &settings).unwrap();
        assert!(b.truncated.is_none());
        for w in b.points.windows(2) {
            assert!((w[1].norm_stat - w[0].norm_stat).abs() < 5.0 * settings.ds_max);
            assert!(w[1].param_value < w[0].param_value);
        }
        assert!(b.points.iter().all(|p| p.stability.metric() < 0.0));
        for p in &b.points {
            assert!(p.equilibrium().unwrap().residual_norm < 1e-9);
        }
    }
}
