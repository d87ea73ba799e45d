//! Monte Carlo estimators for survival probabilities and Feynman-Kac functionals.

use crate::error::{Error, Result};
use crate::model::{DiffusionModel, FeynmanKacSpec};
use crate::numerics::mean_and_std_error;
use crate::rng::{STREAM_AUX_BASE, STREAM_INNER_BASE};
use crate::sim::{grid_index, PathStatus, PathStepper, SimConfig};
use rayon::prelude::*;

/// One Monte Carlo estimate at a single (t, x) point.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MCEstimate {
    pub t: f64,
    pub x: Vec<f64>,
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub n_invalid: usize,
    pub rng_seed: u64,
}

/// Snap an increasing time grid onto step indices for the configured dt.
fn snap_grid(t_grid: &[f64], cfg: &SimConfig) -> Result<Vec<usize>> {
    if t_grid.is_empty() {
        return Err(Error::Invalid("t_grid must not be empty".into()));
    }
    let mut indices = Vec::with_capacity(t_grid.len());
    let mut prev = f64::NEG_INFINITY;
    for &t in t_grid {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Invalid(format!(
                "t_grid entries must be finite and nonnegative (got {t})"
            )));
        }
        if t <= prev {
            return Err(Error::Invalid(format!(
                "t_grid must be strictly increasing ({prev} then {t})"
            )));
        }
        if t > cfg.t_max * (1.0 + 1e-12) {
            return Err(Error::Invalid(format!(
                "t_grid entry {t} exceeds t_max = {}",
                cfg.t_max
            )));
        }
        prev = t;
        indices.push(grid_index(t, cfg.dt));
    }
    Ok(indices)
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return Err(Error::Invalid("n_paths must be positive".into()));
    }
    Ok(())
}

enum ExitOutcome {
    Alive,
    ExitAt(usize),
    Invalid,
}

/// Estimate U(t, x0) = P[S > t] on every grid time from one shared path set.
///
/// Values are exact sample proportions from integer counts, so they are
/// non-increasing in t, lie in [0, 1], and do not depend on worker count.
pub fn estimate_u(
    model: &DiffusionModel,
    x0: &[f64],
    t_grid: &[f64],
    n_paths: usize,
    cfg: &SimConfig,
) -> Result<Vec<MCEstimate>> {
    cfg.validate()?;
    check_paths(n_paths)?;
    let indices = snap_grid(t_grid, cfg)?;
    let max_step = *indices.iter().max().unwrap();
    // Surface geometry and config errors before the parallel sweep.
    PathStepper::new(model, None, x0, cfg)?;

    let outcomes: Vec<ExitOutcome> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let path_cfg = cfg.with_stream(cfg.stream_id + p as u64);
            let mut stepper = match PathStepper::new(model, None, x0, &path_cfg) {
                Ok(s) => s,
                Err(_) => return ExitOutcome::Invalid,
            };
            for _ in 0..max_step {
                match stepper.advance() {
                    PathStatus::Alive => {}
                    PathStatus::Exited | PathStatus::Escaped => {
                        return ExitOutcome::ExitAt(stepper.step())
                    }
                    PathStatus::Invalid => return ExitOutcome::Invalid,
                }
            }
            ExitOutcome::Alive
        })
        .collect();

    let n_invalid = outcomes
        .iter()
        .filter(|o| matches!(o, ExitOutcome::Invalid))
        .count();
    let n_valid = n_paths - n_invalid;
    if n_valid == 0 {
        return Err(Error::NoValidPaths(n_paths));
    }

    let mut estimates = Vec::with_capacity(indices.len());
    for (j, &idx) in indices.iter().enumerate() {
        let survivors = outcomes
            .iter()
            .filter(|o| match o {
                ExitOutcome::Alive => true,
                ExitOutcome::ExitAt(k) => *k > idx,
                ExitOutcome::Invalid => false,
            })
            .count();
        let n = n_valid as f64;
        let p = survivors as f64 / n;
        let std_error = (p * (1.0 - p) / n).sqrt();
        estimates.push(MCEstimate {
            t: t_grid[j],
            x: x0.to_vec(),
            value: p,
            std_error,
            n_paths: n_valid,
            n_invalid,
            rng_seed: cfg.rng_seed,
        });
    }
    Ok(estimates)
}

fn run_fk_path(
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    x0: &[f64],
    cfg: &SimConfig,
    indices: &[usize],
) -> Option<Vec<f64>> {
    let mut stepper = PathStepper::new(model, Some(&fk.h), x0, cfg).ok()?;
    let mut values = Vec::with_capacity(indices.len());
    for &idx in indices {
        while stepper.step() < idx && stepper.status() == PathStatus::Alive {
            stepper.advance();
        }
        match stepper.status() {
            PathStatus::Alive => {
                let fx = fk.f.eval(stepper.state()).ok()?;
                values.push(fx * stepper.weight());
            }
            PathStatus::Exited | PathStatus::Escaped => values.push(0.0),
            PathStatus::Invalid => return None,
        }
    }
    Some(values)
}

/// Estimate the Feynman-Kac functional E[1{S > t} f(X(t)) Y(t)] on a shared
/// path set, with the sample standard deviation over sqrt(N) as the error.
pub fn estimate_feynman_kac(
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    x0: &[f64],
    t_grid: &[f64],
    n_paths: usize,
    cfg: &SimConfig,
) -> Result<Vec<MCEstimate>> {
    cfg.validate()?;
    check_paths(n_paths)?;
    let indices = snap_grid(t_grid, cfg)?;
    if fk.dim() != model.dim() {
        return Err(Error::Invalid(format!(
            "functional has {} variable(s), model dimension is {}",
            fk.dim(),
            model.dim()
        )));
    }
    // Surface geometry and config errors before the parallel sweep.
    PathStepper::new(model, Some(&fk.h), x0, cfg)?;

    let rows: Vec<Option<Vec<f64>>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let path_cfg = cfg.with_stream(cfg.stream_id + p as u64);
            run_fk_path(model, fk, x0, &path_cfg, &indices)
        })
        .collect();

    let n_invalid = rows.iter().filter(|r| r.is_none()).count();
    let n_valid = n_paths - n_invalid;
    if n_valid == 0 {
        return Err(Error::NoValidPaths(n_paths));
    }

    let mut column = Vec::with_capacity(n_valid);
    let mut estimates = Vec::with_capacity(indices.len());
    for j in 0..indices.len() {
        column.clear();
        for row in rows.iter().flatten() {
            column.push(row[j]);
        }
        let (value, std_error) = mean_and_std_error(&column);
        estimates.push(MCEstimate {
            t: t_grid[j],
            x: x0.to_vec(),
            value,
            std_error,
            n_paths: n_valid,
            n_invalid,
            rng_seed: cfg.rng_seed,
        });
    }
    Ok(estimates)
}

/// Two-sided record of the stopped-process identity check.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MartingaleCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub discrepancy: f64,
    pub lhs_std_error: f64,
    pub rhs_std_error: f64,
    pub combined_std_error: f64,
    pub t_star: f64,
    pub x_star: Vec<f64>,
    pub delta: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    pub n_invalid_outer: usize,
    pub n_invalid_inner: usize,
    pub rng_seed: u64,
}

/// Compare E[Y(nu) * Uhat(t* - nu, X(nu))] against Uhat(t*, x*), where nu is
/// the first grid time at which (t* - s, X(s)) leaves the delta-neighborhood
/// of (t*, x*), and each Uhat is a fresh nested estimate.
pub fn check_martingale(
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    t_star: f64,
    x_star: &[f64],
    delta: f64,
    n_outer: usize,
    n_inner: usize,
    cfg: &SimConfig,
) -> Result<MartingaleCheck> {
    cfg.validate()?;
    check_paths(n_outer)?;
    check_paths(n_inner)?;
    if !(t_star.is_finite() && t_star > 0.0) {
        return Err(Error::Invalid(format!(
            "t_star must be finite and positive (got {t_star})"
        )));
    }
    if !(delta.is_finite() && delta > 0.0 && delta < t_star) {
        return Err(Error::Invalid(format!(
            "delta must lie in (0, t_star) (got {delta} with t_star {t_star})"
        )));
    }
    if delta <= 10.0 * cfg.dt {
        return Err(Error::Invalid(format!(
            "delta = {delta} must exceed 10*dt = {} so the stopped time is well resolved",
            10.0 * cfg.dt
        )));
    }
    let trigger_steps = (delta / cfg.dt - 1e-9).ceil() as usize;
    let t_star_steps = grid_index(t_star, cfg.dt);
    if trigger_steps >= t_star_steps {
        return Err(Error::Invalid(format!(
            "delta rounded to the grid ({} steps) must stay below t_star ({} steps)",
            trigger_steps, t_star_steps
        )));
    }
    let domain = model.domain();
    if x_star.len() != model.dim() {
        return Err(Error::Invalid(format!(
            "x_star has {} coordinate(s), model dimension is {}",
            x_star.len(),
            model.dim()
        )));
    }
    for i in 0..model.dim() {
        let low_ok = !domain.lower()[i].is_finite() || domain.lower()[i] < x_star[i] - delta;
        let high_ok = !domain.upper()[i].is_finite() || x_star[i] + delta < domain.upper()[i];
        if !(low_ok && high_ok) {
            return Err(Error::Invalid(format!(
                "the ball of radius {delta} around {x_star:?} leaves the domain in coordinate {}",
                i + 1
            )));
        }
    }

    enum OuterOutcome {
        Term(f64, usize),
        Invalid,
        Failed(Error),
    }

    let outer: Vec<OuterOutcome> = (0..n_outer)
        .into_par_iter()
        .map(|p| {
            let path_cfg = cfg.with_stream(cfg.stream_id + p as u64);
            let mut stepper = match PathStepper::new(model, Some(&fk.h), x_star, &path_cfg) {
                Ok(s) => s,
                Err(_) => return OuterOutcome::Invalid,
            };
            loop {
                match stepper.advance() {
                    PathStatus::Alive => {
                        let k = stepper.step();
                        let dist2: f64 = stepper
                            .state()
                            .iter()
                            .zip(x_star)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        if k >= trigger_steps || dist2 >= delta * delta {
                            let weight = stepper.weight();
                            let remaining = (t_star_steps - k) as f64 * cfg.dt;
                            let inner_cfg = SimConfig {
                                dt: cfg.dt,
                                t_max: remaining,
                                rng_seed: cfg.rng_seed,
                                stream_id: STREAM_INNER_BASE + p as u64 * n_inner as u64,
                                truncation_index: cfg.truncation_index,
                            };
                            let inner = estimate_feynman_kac(
                                model,
                                fk,
                                stepper.state(),
                                &[remaining],
                                n_inner,
                                &inner_cfg,
                            );
                            return match inner {
                                Ok(est) => {
                                    OuterOutcome::Term(weight * est[0].value, est[0].n_invalid)
                                }
                                Err(e) => OuterOutcome::Failed(e),
                            };
                        }
                    }
                    PathStatus::Exited | PathStatus::Escaped => {
                        return OuterOutcome::Term(0.0, 0)
                    }
                    PathStatus::Invalid => return OuterOutcome::Invalid,
                }
            }
        })
        .collect();

    let mut terms = Vec::with_capacity(n_outer);
    let mut n_invalid_outer = 0usize;
    let mut n_invalid_inner = 0usize;
    for outcome in outer {
        match outcome {
            OuterOutcome::Term(v, inner_invalid) => {
                terms.push(v);
                n_invalid_inner += inner_invalid;
            }
            OuterOutcome::Invalid => n_invalid_outer += 1,
            OuterOutcome::Failed(e) => return Err(e),
        }
    }
    if terms.is_empty() {
        return Err(Error::NoValidPaths(n_outer));
    }
    let (lhs, lhs_std_error) = mean_and_std_error(&terms);

    let rhs_cfg = SimConfig {
        dt: cfg.dt,
        t_max: t_star,
        rng_seed: cfg.rng_seed,
        stream_id: STREAM_AUX_BASE,
        truncation_index: cfg.truncation_index,
    };
    let rhs_est = estimate_feynman_kac(model, fk, x_star, &[t_star], n_outer * n_inner, &rhs_cfg)?;
    let rhs = rhs_est[0].value;
    let rhs_std_error = rhs_est[0].std_error;
    let combined_std_error = lhs_std_error.hypot(rhs_std_error);

    Ok(MartingaleCheck {
        lhs,
        rhs,
        discrepancy: (lhs - rhs).abs(),
        lhs_std_error,
        rhs_std_error,
        combined_std_error,
        t_star,
        x_star: x_star.to_vec(),
        delta,
        n_outer,
        n_inner,
        n_invalid_outer,
        n_invalid_inner,
        rng_seed: cfg.rng_seed,
    })
}
