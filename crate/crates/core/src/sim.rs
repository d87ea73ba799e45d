//! Euler-Maruyama path simulation with exit detection at grid times.

use crate::error::{Error, Result};
use crate::expr::CoefficientExpr;
use crate::model::{DiffusionModel, Domain, FeynmanKacSpec, StateCheck};
use crate::numerics::CompensatedSum;
use crate::rng::{path_rng, standard_normal};
use rand_chacha::ChaCha12Rng;

/// Time grid and randomness parameters shared by every simulation routine.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub rng_seed: u64,
    pub stream_id: u64,
    /// Run on the m-th truncated domain instead of the full one.
    pub truncation_index: Option<u32>,
}

impl SimConfig {
    pub fn new(dt: f64, t_max: f64, rng_seed: u64) -> SimConfig {
        SimConfig {
            dt,
            t_max,
            rng_seed,
            stream_id: 0,
            truncation_index: None,
        }
    }

    pub fn with_stream(mut self, stream_id: u64) -> SimConfig {
        self.stream_id = stream_id;
        self
    }

    pub fn with_truncation(mut self, m: u32) -> SimConfig {
        self.truncation_index = Some(m);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Invalid(format!(
                "dt must be finite and positive (got {})",
                self.dt
            )));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::Invalid(format!(
                "t_max must be finite and positive (got {})",
                self.t_max
            )));
        }
        if self.dt > self.t_max * (1.0 + 1e-12) {
            return Err(Error::Invalid(format!(
                "dt = {} exceeds t_max = {}",
                self.dt, self.t_max
            )));
        }
        Ok(())
    }

    /// Number of steps covering [0, t_max] at spacing dt.
    pub fn n_steps(&self) -> usize {
        grid_steps(self.t_max, self.dt)
    }
}

/// Last grid index k with k * dt <= t, up to a tiny division tolerance.
pub(crate) fn grid_steps(t: f64, dt: f64) -> usize {
    (t / dt + 1e-9).floor() as usize
}

/// Nearest grid index to t.
pub(crate) fn grid_index(t: f64, dt: f64) -> usize {
    (t / dt).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum PathStatus {
    Alive,
    /// Reached or crossed a finite boundary side.
    Exited,
    /// Crossed the escape radius along an infinite side.
    Escaped,
    /// A coefficient evaluated to a non-finite value; the path is dropped.
    Invalid,
}

impl PathStatus {
    /// The path has left the domain (either kind of exit counts for the explosion time).
    pub fn left_domain(self) -> bool {
        matches!(self, PathStatus::Exited | PathStatus::Escaped)
    }
}

/// Single-path Euler-Maruyama driver exposing per-step state to callers.
pub struct PathStepper<'a> {
    model: &'a DiffusionModel,
    h: Option<&'a CoefficientExpr>,
    domain: Domain,
    dt: f64,
    sqrt_dt: f64,
    rng: ChaCha12Rng,
    k: usize,
    x: Vec<f64>,
    x_prev: Vec<f64>,
    drift: Vec<f64>,
    dispersion: Vec<f64>,
    dw: Vec<f64>,
    h_current: f64,
    h_before: f64,
    weight_integral: CompensatedSum,
    status: PathStatus,
}

impl<'a> PathStepper<'a> {
    pub fn new(
        model: &'a DiffusionModel,
        h: Option<&'a CoefficientExpr>,
        x0: &[f64],
        cfg: &SimConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = model.dim();
        if x0.len() != n {
            return Err(Error::Invalid(format!(
                "initial state has {} coordinate(s), model dimension is {n}",
                x0.len()
            )));
        }
        let domain = match cfg.truncation_index {
            Some(m) => model.truncation().truncate(model.domain(), m)?,
            None => model.domain().clone(),
        };
        if !domain.contains(x0) {
            return Err(Error::Invalid(format!(
                "initial state {x0:?} is not inside the domain"
            )));
        }
        if let Some(expr) = h {
            if expr.nvars() != n {
                return Err(Error::Invalid(format!(
                    "potential has {} variable(s), model dimension is {n}",
                    expr.nvars()
                )));
            }
        }
        let h_current = match h {
            Some(expr) => expr.eval(x0)?,
            None => 0.0,
        };
        Ok(PathStepper {
            model,
            h,
            domain,
            dt: cfg.dt,
            sqrt_dt: cfg.dt.sqrt(),
            rng: path_rng(cfg.rng_seed, cfg.stream_id),
            k: 0,
            x: x0.to_vec(),
            x_prev: x0.to_vec(),
            drift: vec![0.0; n],
            dispersion: vec![0.0; n * n],
            dw: vec![0.0; n],
            h_current,
            h_before: h_current,
            weight_integral: CompensatedSum::new(),
            status: PathStatus::Alive,
        })
    }

    /// Advance one grid step; returns the status after the move.
    pub fn advance(&mut self) -> PathStatus {
        if self.status != PathStatus::Alive {
            return self.status;
        }
        let n = self.model.dim();
        self.x_prev.copy_from_slice(&self.x);
        self.model.drift_at_raw(&self.x_prev, &mut self.drift);
        self.model
            .dispersion_at_raw(&self.x_prev, &mut self.dispersion);
        if self.drift.iter().chain(&self.dispersion).any(|v| !v.is_finite()) {
            self.status = PathStatus::Invalid;
            return self.status;
        }
        for j in 0..n {
            self.dw[j] = standard_normal(&mut self.rng) * self.sqrt_dt;
        }
        for i in 0..n {
            let mut xi = self.x_prev[i] + self.drift[i] * self.dt;
            for j in 0..n {
                xi += self.dispersion[i * n + j] * self.dw[j];
            }
            self.x[i] = xi;
        }
        self.k += 1;
        self.h_before = self.h_current;
        match self.domain.check_state(&self.x) {
            StateCheck::NonFinite => {
                self.status = PathStatus::Invalid;
            }
            StateCheck::Inside => {
                if let Some(expr) = self.h {
                    match expr.eval(&self.x) {
                        Ok(h_new) => {
                            self.weight_integral
                                .add(self.dt * 0.5 * (self.h_before + h_new));
                            self.h_current = h_new;
                        }
                        Err(_) => {
                            self.status = PathStatus::Invalid;
                        }
                    }
                }
            }
            StateCheck::ExitedBoundary => {
                self.close_weight_at_exit();
                self.status = PathStatus::Exited;
            }
            StateCheck::Escaped => {
                self.close_weight_at_exit();
                self.status = PathStatus::Escaped;
            }
        }
        self.status
    }

    /// Final weight increment for the step that left the domain.  The exit
    /// state can sit outside the region where h is finite, in which case the
    /// last half step falls back to the left-endpoint value.
    fn close_weight_at_exit(&mut self) {
        if let Some(expr) = self.h {
            match expr.eval(&self.x) {
                Ok(h_exit) => self
                    .weight_integral
                    .add(self.dt * 0.5 * (self.h_before + h_exit)),
                Err(_) => self.weight_integral.add(self.dt * self.h_before),
            }
        }
    }

    pub fn status(&self) -> PathStatus {
        self.status
    }

    pub fn step(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> f64 {
        self.k as f64 * self.dt
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn prev_state(&self) -> &[f64] {
        &self.x_prev
    }

    /// Brownian increments used in the latest step.
    pub fn increments(&self) -> &[f64] {
        &self.dw
    }

    /// Drift vector evaluated at the latest step's starting state.
    pub fn drift_at_prev(&self) -> &[f64] {
        &self.drift
    }

    /// Dispersion matrix (row-major) evaluated at the latest step's starting state.
    pub fn dispersion_at_prev(&self) -> &[f64] {
        &self.dispersion
    }

    /// Potential value at the latest step's starting state.
    pub fn potential_at_prev(&self) -> f64 {
        self.h_before
    }

    /// Y(t_k) = exp(-integral of h along the path so far).
    pub fn weight(&self) -> f64 {
        (-self.weight_integral.total()).exp()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }
}

/// Full record of one simulated path on the time grid.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PathResult {
    pub dim: usize,
    pub dt: f64,
    pub times: Vec<f64>,
    /// Row-major states, one row of `dim` coordinates per recorded time.
    pub states: Vec<f64>,
    pub weight_grid: Vec<f64>,
    pub status: PathStatus,
    pub exited: bool,
    /// Grid time of the first step outside the domain; +inf if none.
    pub exit_time: f64,
    pub exit_step: Option<usize>,
    pub rng_seed: u64,
    pub stream_id: u64,
}

impl PathResult {
    pub fn exit_time_or_inf(&self) -> f64 {
        self.exit_time
    }

    pub fn state_at(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn n_recorded(&self) -> usize {
        self.times.len()
    }

    /// Write the path as CSV rows: step, t, x1..xn, Y.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "t".to_string()];
        for i in 1..=self.dim {
            header.push(format!("x{i}"));
        }
        header.push("Y".to_string());
        w.write_record(&header)
            .map_err(|e| Error::Output(e.to_string()))?;
        for k in 0..self.n_recorded() {
            let mut row = vec![k.to_string(), format_float(self.times[k])];
            for v in self.state_at(k) {
                row.push(format_float(*v));
            }
            row.push(format_float(self.weight_grid[k]));
            w.write_record(&row)
                .map_err(|e| Error::Output(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn format_float(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v:.17e}")
    }
}

/// Simulate one path on the full grid, recording states and weights.
///
/// Recording stops at the first step outside the domain (that step's state is
/// included) or at the last step with a finite state if evaluation fails.
pub fn simulate_path(
    model: &DiffusionModel,
    fk: Option<&FeynmanKacSpec>,
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<PathResult> {
    let h = fk.map(|s| &s.h);
    let mut stepper = PathStepper::new(model, h, x0, cfg)?;
    let n_steps = cfg.n_steps();
    let dim = model.dim();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity((n_steps + 1) * dim);
    let mut weights = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    states.extend_from_slice(x0);
    weights.push(1.0);
    let mut exit_step = None;
    for _ in 0..n_steps {
        match stepper.advance() {
            PathStatus::Alive => {
                times.push(stepper.t());
                states.extend_from_slice(stepper.state());
                weights.push(stepper.weight());
            }
            PathStatus::Exited | PathStatus::Escaped => {
                times.push(stepper.t());
                states.extend_from_slice(stepper.state());
                weights.push(stepper.weight());
                exit_step = Some(stepper.step());
                break;
            }
            PathStatus::Invalid => break,
        }
    }
    let status = stepper.status();
    let exited = status.left_domain();
    Ok(PathResult {
        dim,
        dt: cfg.dt,
        times,
        states,
        weight_grid: weights,
        status,
        exited,
        exit_time: exit_step.map_or(f64::INFINITY, |k| k as f64 * cfg.dt),
        exit_step,
        rng_seed: cfg.rng_seed,
        stream_id: cfg.stream_id,
    })
}

/// First grid time at which a one-dimensional path enters
/// [target - radius, target + radius], or None if it exits or the horizon
/// ends first.  A sign change across the target between consecutive grid
/// states also counts as a hit, so radius = 0 detects crossings.
pub fn hitting_time(
    model: &DiffusionModel,
    x0: &[f64],
    target: f64,
    radius: f64,
    cfg: &SimConfig,
) -> Result<Option<f64>> {
    if model.dim() != 1 {
        return Err(Error::Invalid(format!(
            "hitting times are defined for one-dimensional models (dimension is {})",
            model.dim()
        )));
    }
    if !target.is_finite() {
        return Err(Error::Invalid(format!("target must be finite (got {target})")));
    }
    if !(radius.is_finite() && radius >= 0.0) {
        return Err(Error::Invalid(format!(
            "radius must be finite and nonnegative (got {radius})"
        )));
    }
    let mut stepper = PathStepper::new(model, None, x0, cfg)?;
    if (x0[0] - target).abs() <= radius {
        return Ok(Some(0.0));
    }
    let n_steps = cfg.n_steps();
    for _ in 0..n_steps {
        match stepper.advance() {
            PathStatus::Alive => {
                let x = stepper.state()[0];
                let x_prev = stepper.prev_state()[0];
                if (x - target).abs() <= radius || (x_prev - target) * (x - target) < 0.0 {
                    return Ok(Some(stepper.t()));
                }
            }
            PathStatus::Exited | PathStatus::Escaped => return Ok(None),
            PathStatus::Invalid => {
                return Err(Error::Eval(
                    "path became invalid before hitting the target".into(),
                ))
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TruncationSequence;
    use crate::oracles::catalog_model;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model_1d(drift: &str, dispersion: &str, lower: f64, upper: f64, escape: f64) -> DiffusionModel {
        DiffusionModel::new(
            vec![CoefficientExpr::parse_spatial(drift, 1).unwrap()],
            vec![CoefficientExpr::parse_spatial(dispersion, 1).unwrap()],
            Domain::interval(lower, upper, escape).unwrap(),
            TruncationSequence::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_dynamics_stays_put() {
        let model = model_1d("0", "0", -10.0, 10.0, 10.0);
        let cfg = SimConfig::new(0.01, 1.0, 42);
        let path = simulate_path(&model, None, &[0.3], &cfg).unwrap();
        assert_eq!(path.status, PathStatus::Alive);
        assert!(!path.exited);
        assert_eq!(path.n_recorded(), 101);
        for k in 0..path.n_recorded() {
            assert_eq!(path.state_at(k), &[0.3]);
            assert_eq!(path.weight_grid[k], 1.0);
        }
        assert_eq!(path.exit_time, f64::INFINITY);
    }

    #[test]
    fn tangent_ode_explodes_near_half_pi() {
        let model = model_1d("1+x^2", "0", f64::NEG_INFINITY, f64::INFINITY, 1e6);
        let cfg = SimConfig::new(1e-5, 2.0, 0);
        let path = simulate_path(&model, None, &[0.0], &cfg).unwrap();
        assert_eq!(path.status, PathStatus::Escaped);
        let coarse_err = (path.exit_time - std::f64::consts::FRAC_PI_2).abs();
        assert!(coarse_err < 1e-2, "exit {} too far from pi/2", path.exit_time);

        let cfg_fine = SimConfig::new(5e-6, 2.0, 0);
        let fine = simulate_path(&model, None, &[0.0], &cfg_fine).unwrap();
        let fine_err = (fine.exit_time - std::f64::consts::FRAC_PI_2).abs();
        assert!(
            fine_err < coarse_err,
            "halving dt did not reduce the exit-time error ({coarse_err} -> {fine_err})"
        );
    }

    #[test]
    fn constant_potential_weight_is_exponential() {
        let (model, _) = catalog_model("bm_unit_interval").unwrap();
        let fk = FeynmanKacSpec::new(
            CoefficientExpr::parse_spatial("1", 1).unwrap(),
            CoefficientExpr::parse_spatial("3", 1).unwrap(),
            Some(3.0),
        )
        .unwrap();
        let cfg = SimConfig::new(1e-3, 0.5, 9);
        let path = simulate_path(&model, Some(&fk), &[0.5], &cfg).unwrap();
        assert!(path.n_recorded() > 1);
        for k in 0..path.n_recorded() {
            let expected = (-3.0 * path.times[k]).exp();
            assert_relative_eq!(path.weight_grid[k], expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn interval_exit_invariants_hold() {
        let (model, _) = catalog_model("bm_unit_interval").unwrap();
        let cfg = SimConfig::new(1e-3, 5.0, 1234).with_stream(3);
        let path = simulate_path(&model, None, &[0.5], &cfg).unwrap();
        assert_eq!(path.status, PathStatus::Exited);
        assert!(path.exited);
        let k_exit = path.exit_step.unwrap();
        assert!(path.exit_time > 0.0 && path.exit_time <= 5.0);
        assert_relative_eq!(path.exit_time, k_exit as f64 * 1e-3, max_relative = 1e-12);
        assert_eq!(path.n_recorded(), k_exit + 1);
        for k in 0..k_exit {
            let x = path.state_at(k)[0];
            assert!(x > 0.0 && x < 1.0, "pre-exit state {x} left (0,1) at step {k}");
        }
        let x_exit = path.state_at(k_exit)[0];
        assert!(x_exit <= 0.0 || x_exit >= 1.0);
        assert_eq!(path.weight_grid[0], 1.0);
    }

    #[test]
    fn weight_stays_within_potential_bounds() {
        let (model, _) = catalog_model("bm_unit_interval").unwrap();
        let fk = FeynmanKacSpec::new(
            CoefficientExpr::parse_spatial("1", 1).unwrap(),
            CoefficientExpr::parse_spatial("sin(3*x)", 1).unwrap(),
            Some(1.0),
        )
        .unwrap();
        for stream in 0..20 {
            let cfg = SimConfig::new(1e-3, 1.0, 77).with_stream(stream);
            let path = simulate_path(&model, Some(&fk), &[0.5], &cfg).unwrap();
            for k in 0..path.n_recorded() {
                let t = path.times[k];
                let y = path.weight_grid[k];
                assert!(
                    y >= (-t).exp() * (1.0 - 1e-12) && y <= t.exp() * (1.0 + 1e-12),
                    "weight {y} at t={t} violates the exp(+-t) envelope"
                );
            }
        }
    }

    #[test]
    fn identical_inputs_reproduce_bitwise() {
        let (model, fk) = catalog_model("bm_unit_interval").unwrap();
        let cfg = SimConfig::new(1e-3, 1.0, 31).with_stream(5);
        let a = simulate_path(&model, Some(&fk), &[0.4], &cfg).unwrap();
        let b = simulate_path(&model, Some(&fk), &[0.4], &cfg).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.weight_grid, b.weight_grid);
        assert_eq!(a.exit_time.to_bits(), b.exit_time.to_bits());

        let c = simulate_path(&model, Some(&fk), &[0.4], &cfg.with_stream(6)).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn truncated_exit_times_are_nested() {
        let (model, _) = catalog_model("bm_line").unwrap();
        for stream in 0..40 {
            let mut previous = None;
            for m in 1..=5 {
                let cfg = SimConfig::new(1e-2, 40.0, 2024)
                    .with_stream(stream)
                    .with_truncation(m);
                let path = simulate_path(&model, None, &[0.0], &cfg).unwrap();
                let s_m = path.exit_time_or_inf();
                if let Some(prev) = previous {
                    assert!(
                        prev <= s_m,
                        "stream {stream}: exit time decreased from {prev} to {s_m} at m={m}"
                    );
                }
                previous = Some(s_m);
            }
        }
    }

    #[test]
    fn shared_increments_before_first_exit() {
        let (model, _) = catalog_model("bm_line").unwrap();
        let cfg1 = SimConfig::new(1e-2, 40.0, 7).with_stream(11).with_truncation(1);
        let cfg2 = SimConfig::new(1e-2, 40.0, 7).with_stream(11).with_truncation(2);
        let p1 = simulate_path(&model, None, &[0.0], &cfg1).unwrap();
        let p2 = simulate_path(&model, None, &[0.0], &cfg2).unwrap();
        let shared = p1.n_recorded().min(p2.n_recorded());
        for k in 0..shared {
            assert_eq!(p1.state_at(k), p2.state_at(k), "paths diverged at step {k}");
        }
    }

    #[test]
    fn overshoot_into_invalid_territory_drops_path() {
        let model = model_1d("sqrt(1-x)", "0", f64::NEG_INFINITY, f64::INFINITY, 100.0);
        let cfg = SimConfig::new(0.1, 5.0, 0);
        let path = simulate_path(&model, None, &[0.0], &cfg).unwrap();
        assert_eq!(path.status, PathStatus::Invalid);
        assert!(!path.exited);
        assert_eq!(path.exit_time, f64::INFINITY);
        for k in 0..path.n_recorded() {
            assert!(path.state_at(k)[0].is_finite());
        }
    }

    #[test]
    fn initial_state_outside_domain_is_rejected() {
        let (model, _) = catalog_model("bm_unit_interval").unwrap();
        let cfg = SimConfig::new(1e-3, 1.0, 0);
        assert!(simulate_path(&model, None, &[1.5], &cfg).is_err());
        assert!(simulate_path(&model, None, &[0.0], &cfg).is_err());
    }

    #[test]
    fn hitting_time_at_start_is_zero() {
        let (model, _) = catalog_model("bm_line").unwrap();
        let cfg = SimConfig::new(1e-3, 1.0, 5);
        let t = hitting_time(&model, &[0.7], 0.7, 0.0, &cfg).unwrap();
        assert_eq!(t, Some(0.0));
    }

    #[test]
    fn unit_drift_crossing_detected_near_one() {
        let model = model_1d("1", "0", -10.0, 10.0, 10.0);
        let dt = 1e-3;
        let cfg = SimConfig::new(dt, 3.0, 0);
        let t = hitting_time(&model, &[0.0], 1.0, 0.0, &cfg).unwrap().unwrap();
        assert!(
            (t - 1.0).abs() <= dt + 1e-12,
            "crossing detected at {t}, expected 1.0 within one step"
        );
    }

    #[test]
    fn bm_hitting_probability_shrinks_with_distance() {
        let (model, _) = catalog_model("bm_line").unwrap();
        let delta = 0.05;
        let dt = 1e-3;
        let n_paths = 4000u64;
        let mut survival = Vec::new();
        for distance in [0.05, 0.1, 0.2] {
            let mut late = 0usize;
            for p in 0..n_paths {
                let cfg = SimConfig::new(dt, delta, 99).with_stream(p);
                let hit = hitting_time(&model, &[distance], 0.0, 0.0, &cfg).unwrap();
                match hit {
                    Some(t) if t < delta => {}
                    _ => late += 1,
                }
            }
            survival.push(late as f64 / n_paths as f64);
        }
        assert!(
            survival[0] < survival[1] && survival[1] < survival[2],
            "P[H >= delta] should increase with starting distance: {survival:?}"
        );
        assert!(survival[0] < 0.3, "closest start should usually hit: {survival:?}");
    }

    #[test]
    fn path_csv_has_expected_columns() {
        let (model, fk) = catalog_model("bm_unit_interval").unwrap();
        let cfg = SimConfig::new(1e-2, 0.05, 1);
        let path = simulate_path(&model, Some(&fk), &[0.5], &cfg).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "step,t,x1,Y");
        let first = lines.next().unwrap();
        assert!(first.starts_with("0,0.0,"), "unexpected first row: {first}");
    }

    #[test]
    fn config_validation_rejects_bad_grids() {
        assert!(SimConfig::new(0.0, 1.0, 0).validate().is_err());
        assert!(SimConfig::new(-0.1, 1.0, 0).validate().is_err());
        assert!(SimConfig::new(0.1, 0.0, 0).validate().is_err());
        assert!(SimConfig::new(0.5, 0.4, 0).validate().is_err());
        assert!(SimConfig::new(0.1, 1.0, 0).validate().is_ok());
    }

    #[test]
    fn grid_helpers_handle_inexact_division() {
        assert_eq!(grid_steps(0.2, 1e-4), 2000);
        assert_eq!(grid_steps(1.0, 1e-3), 1000);
        assert_eq!(grid_steps(0.25, 0.1), 2);
        assert_eq!(grid_index(0.1, 1e-4), 1000);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn simulation_is_deterministic(seed in any::<u64>(), stream in 0u64..1000) {
            let (model, fk) = catalog_model("bm_unit_interval").unwrap();
            let cfg = SimConfig::new(1e-2, 0.3, seed).with_stream(stream);
            let a = simulate_path(&model, Some(&fk), &[0.5], &cfg).unwrap();
            let b = simulate_path(&model, Some(&fk), &[0.5], &cfg).unwrap();
            prop_assert_eq!(a.states, b.states);
            prop_assert_eq!(a.weight_grid, b.weight_grid);
        }

        #[test]
        fn exit_times_nest_across_truncations(stream in 0u64..200, m in 1u32..6) {
            let (model, _) = catalog_model("bm_line").unwrap();
            let base = SimConfig::new(2e-2, 20.0, 512).with_stream(stream);
            let coarse = simulate_path(&model, None, &[0.0], &base.with_truncation(m)).unwrap();
            let fine = simulate_path(&model, None, &[0.0], &base.with_truncation(m + 1)).unwrap();
            prop_assert!(coarse.exit_time_or_inf() <= fine.exit_time_or_inf());
        }
    }
}
