//! Numerical checks of the analytic identities behind the solver: the
//! stopped Ito decomposition, discrete generator residuals of computed
//! solutions, and the explicit time-continuity modulus.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::CoefficientExpr;
use crate::model::{dispersion_to_diffusion, DiffusionModel, FeynmanKacSpec};
use crate::numerics::mean_and_std_error;
use crate::pde::PDESolution;
use crate::sim::{grid_steps, PathStatus, PathStepper, SimConfig};

const JET_SELF_CHECK_TOL: f64 = 1e-6;
const JET_PROBES: usize = 100;

/// A smooth test function phi(t,x) with declared first time derivative,
/// gradient, and Hessian, cross-checked against finite differences on
/// construction.
#[derive(Debug, Clone)]
pub struct TestFunctionJet {
    dim: usize,
    phi: CoefficientExpr,
    phi_t: CoefficientExpr,
    grad: Vec<CoefficientExpr>,
    hess: Vec<CoefficientExpr>,
}

impl TestFunctionJet {
    pub fn new(
        phi: CoefficientExpr,
        phi_t: CoefficientExpr,
        grad: Vec<CoefficientExpr>,
        hess: Vec<CoefficientExpr>,
    ) -> Result<Self> {
        Self::with_probe_window(phi, phi_t, grad, hess, (0.2, 1.0), (-0.9, 0.9))
    }

    /// Builds the jet, self-checking the declared derivatives at random
    /// points of the given (t, x) window.
    pub fn with_probe_window(
        phi: CoefficientExpr,
        phi_t: CoefficientExpr,
        grad: Vec<CoefficientExpr>,
        hess: Vec<CoefficientExpr>,
        t_window: (f64, f64),
        x_window: (f64, f64),
    ) -> Result<Self> {
        let nv = phi.nvars();
        if nv < 2 {
            return Err(Error::Invalid(
                "a test function depends on t and at least one spatial variable".into(),
            ));
        }
        let dim = nv - 1;
        if grad.len() != dim || hess.len() != dim * dim {
            return Err(Error::Invalid(format!(
                "jet with dimension {dim} needs {dim} gradient and {} Hessian entries (got {} and {})",
                dim * dim,
                grad.len(),
                hess.len()
            )));
        }
        for e in std::iter::once(&phi_t).chain(&grad).chain(&hess) {
            if e.nvars() != nv {
                return Err(Error::Invalid(format!(
                    "jet derivative `{e}` has {} variable(s), expected {nv}",
                    e.nvars()
                )));
            }
        }
        if !(t_window.0 < t_window.1 && x_window.0 < x_window.1) {
            return Err(Error::Invalid("probe window is empty".into()));
        }
        let jet = TestFunctionJet {
            dim,
            phi,
            phi_t,
            grad,
            hess,
        };
        jet.self_check(t_window, x_window)?;
        Ok(jet)
    }

    /// Parses all pieces from expression strings in (t, x).
    pub fn parse(dim: usize, phi: &str, phi_t: &str, grad: &[&str], hess: &[&str]) -> Result<Self> {
        let parse = |s: &str| CoefficientExpr::parse_space_time(s, dim);
        Ok(Self::new(
            parse(phi)?,
            parse(phi_t)?,
            grad.iter().map(|s| parse(s)).collect::<Result<_>>()?,
            hess.iter().map(|s| parse(s)).collect::<Result<_>>()?,
        )?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn self_check(&self, t_window: (f64, f64), x_window: (f64, f64)) -> Result<()> {
        let mut rng = ChaCha12Rng::seed_from_u64(0x4a45_5453);
        let eps = f64::EPSILON;
        let h1 = eps.powf(1.0 / 3.0);
        let h2 = eps.powf(0.25);
        let mut pt = vec![0.0; self.dim + 1];
        let close = |fd: f64, declared: f64| {
            (fd - declared).abs() <= JET_SELF_CHECK_TOL * declared.abs().max(1.0)
        };
        for _ in 0..JET_PROBES {
            pt[0] = rng.random_range(t_window.0..t_window.1);
            for x in pt[1..].iter_mut() {
                *x = rng.random_range(x_window.0..x_window.1);
            }
            let fd_t = {
                let h = h1 * (1.0 + pt[0].abs());
                let mut p = pt.clone();
                p[0] = pt[0] + h;
                let up = self.phi.eval(&p)?;
                p[0] = pt[0] - h;
                let dn = self.phi.eval(&p)?;
                (up - dn) / (2.0 * h)
            };
            if !close(fd_t, self.phi_t.eval(&pt)?) {
                return Err(Error::Invalid(format!(
                    "declared time derivative disagrees with finite differences at {pt:?}"
                )));
            }
            for i in 0..self.dim {
                let h = h1 * (1.0 + pt[1 + i].abs());
                let mut p = pt.clone();
                p[1 + i] = pt[1 + i] + h;
                let up = self.phi.eval(&p)?;
                p[1 + i] = pt[1 + i] - h;
                let dn = self.phi.eval(&p)?;
                if !close((up - dn) / (2.0 * h), self.grad[i].eval(&pt)?) {
                    return Err(Error::Invalid(format!(
                        "declared gradient component {i} disagrees with finite differences at {pt:?}"
                    )));
                }
            }
            for i in 0..self.dim {
                for j in 0..self.dim {
                    let declared = self.hess[i * self.dim + j].eval(&pt)?;
                    let mirrored = self.hess[j * self.dim + i].eval(&pt)?;
                    if !close(mirrored, declared) {
                        return Err(Error::Invalid(format!(
                            "declared Hessian is not symmetric at {pt:?}"
                        )));
                    }
                    let hi = h2 * (1.0 + pt[1 + i].abs());
                    let hj = h2 * (1.0 + pt[1 + j].abs());
                    let fd = if i == j {
                        let mut p = pt.clone();
                        p[1 + i] = pt[1 + i] + hi;
                        let up = self.phi.eval(&p)?;
                        p[1 + i] = pt[1 + i] - hi;
                        let dn = self.phi.eval(&p)?;
                        (up - 2.0 * self.phi.eval(&pt)? + dn) / (hi * hi)
                    } else {
                        let mut p = pt.clone();
                        let mut corner = |si: f64, sj: f64| -> Result<f64> {
                            p[1 + i] = pt[1 + i] + si * hi;
                            p[1 + j] = pt[1 + j] + sj * hj;
                            self.phi.eval(&p)
                        };
                        (corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)?
                            + corner(-1.0, -1.0)?)
                            / (4.0 * hi * hj)
                    };
                    if !close(fd, declared) {
                        return Err(Error::Invalid(format!(
                            "declared Hessian entry ({i},{j}) disagrees with finite differences at {pt:?}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64, x: &[f64], pt: &mut Vec<f64>) -> Result<f64> {
        self.fill(t, x, pt);
        self.phi.eval(pt)
    }

    fn fill(&self, t: f64, x: &[f64], pt: &mut Vec<f64>) {
        pt.clear();
        pt.push(t);
        pt.extend_from_slice(x);
    }

    /// G = phi_t - (1/2 sum a_ij phi_ij + sum b_i phi_i - h phi) at (t, x),
    /// with the coefficients supplied by the caller.
    pub fn generator_value(
        &self,
        t: f64,
        x: &[f64],
        drift: &[f64],
        diffusion: &[f64],
        h: f64,
        pt: &mut Vec<f64>,
    ) -> Result<f64> {
        self.fill(t, x, pt);
        let n = self.dim;
        let mut second = 0.0;
        for i in 0..n {
            for j in 0..n {
                let aij = diffusion[i * n + j];
                if aij != 0.0 {
                    second += aij * self.hess[i * n + j].eval(pt)?;
                }
            }
        }
        let mut first = 0.0;
        for i in 0..n {
            first += drift[i] * self.grad[i].eval(pt)?;
        }
        let phi = self.phi.eval(pt)?;
        Ok(self.phi_t.eval(pt)? - (0.5 * second + first - h * phi))
    }

    /// Gradient dotted with the given dispersion column increments.
    fn martingale_increment(
        &self,
        t: f64,
        x: &[f64],
        dispersion: &[f64],
        dw: &[f64],
        pt: &mut Vec<f64>,
    ) -> Result<f64> {
        self.fill(t, x, pt);
        let n = self.dim;
        let mut total = 0.0;
        for i in 0..n {
            let gi = self.grad[i].eval(pt)?;
            if gi != 0.0 {
                let mut row = 0.0;
                for k in 0..n {
                    row += dispersion[i * n + k] * dw[k];
                }
                total += gi * row;
            }
        }
        Ok(total)
    }
}

/// Statistics of the per-path discrepancy in the stopped decomposition of
/// phi(t*-t, X(t)) Y(t).
#[derive(Debug, Clone, serde::Serialize)]
pub struct ItoResidualStats {
    pub t_star: f64,
    pub delta: f64,
    pub mean: f64,
    pub sd: f64,
    pub std_error: f64,
    pub martingale_mean: f64,
    pub martingale_std_error: f64,
    pub n_paths: usize,
    pub n_invalid: usize,
    pub rng_seed: u64,
}

/// Accumulates, path by path, the defect of
/// [phi Y](nu) - [phi Y](0) + int_0^nu G(t*-s, X(s)) Y(s) ds - martingale sum,
/// all discretized on the simulation grid with left-endpoint sums.
pub fn ito_residual(
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    jet: &TestFunctionJet,
    t_star: f64,
    x0: &[f64],
    delta: f64,
    n_paths: usize,
    cfg: &SimConfig,
) -> Result<ItoResidualStats> {
    cfg.validate()?;
    if jet.dim() != model.dim() {
        return Err(Error::Invalid(format!(
            "jet dimension {} does not match model dimension {}",
            jet.dim(),
            model.dim()
        )));
    }
    if fk.dim() != model.dim() {
        return Err(Error::Invalid(
            "functional data dimension does not match the model".into(),
        ));
    }
    if !(t_star > 0.0 && t_star.is_finite() && t_star <= cfg.t_max * (1.0 + 1e-12)) {
        return Err(Error::Invalid(format!(
            "t_star must lie in (0, t_max] (got {t_star})"
        )));
    }
    if !(delta > 0.0 && delta < t_star) {
        return Err(Error::Invalid(format!(
            "delta must lie in (0, t_star) (got {delta})"
        )));
    }
    if n_paths == 0 {
        return Err(Error::Invalid("n_paths must be positive".into()));
    }
    let t_star_steps = grid_steps(t_star, cfg.dt);
    let trigger_steps = ((delta / cfg.dt) - 1e-9).ceil().max(1.0) as usize;
    if trigger_steps >= t_star_steps {
        return Err(Error::Invalid(format!(
            "the stopping window delta = {delta} does not fit below t_star = {t_star} on a grid of step {}",
            cfg.dt
        )));
    }
    PathStepper::new(model, Some(&fk.h), x0, cfg)?;
    let delta_sq = delta * delta;

    let outcomes: Vec<Option<(f64, f64)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let path_cfg = cfg.clone().with_stream(cfg.stream_id + p as u64);
            let mut stepper = match PathStepper::new(model, Some(&fk.h), x0, &path_cfg) {
                Ok(s) => s,
                Err(_) => return None,
            };
            let mut pt = Vec::with_capacity(model.dim() + 1);
            let phi0 = match jet.value(t_star, x0, &mut pt) {
                Ok(v) => v,
                Err(_) => return None,
            };
            let mut g_sum = 0.0;
            let mut mart_sum = 0.0;
            loop {
                let k = stepper.step();
                let dist_sq: f64 = stepper
                    .state()
                    .iter()
                    .zip(x0)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if k >= trigger_steps || dist_sq >= delta_sq {
                    let nu = k as f64 * cfg.dt;
                    let phi_nu =
                        match jet.value(t_star - nu, stepper.state(), &mut pt) {
                            Ok(v) => v * stepper.weight(),
                            Err(_) => return None,
                        };
                    return Some((phi_nu - phi0 + g_sum - mart_sum, mart_sum));
                }
                let t_k = k as f64 * cfg.dt;
                let y_k = stepper.weight();
                match stepper.advance() {
                    PathStatus::Invalid => return None,
                    PathStatus::Alive | PathStatus::Exited | PathStatus::Escaped => {
                        let diffusion =
                            dispersion_to_diffusion(stepper.dispersion_at_prev(), model.dim());
                        let g = match jet.generator_value(
                            t_star - t_k,
                            stepper.prev_state(),
                            stepper.drift_at_prev(),
                            &diffusion,
                            stepper.potential_at_prev(),
                            &mut pt,
                        ) {
                            Ok(v) => v,
                            Err(_) => return None,
                        };
                        g_sum += g * y_k * cfg.dt;
                        let dm = match jet.martingale_increment(
                            t_star - t_k,
                            stepper.prev_state(),
                            stepper.dispersion_at_prev(),
                            stepper.increments(),
                            &mut pt,
                        ) {
                            Ok(v) => v,
                            Err(_) => return None,
                        };
                        mart_sum += dm * y_k;
                        if stepper.status() != PathStatus::Alive {
                            let nu = stepper.t();
                            let phi_nu =
                                match jet.value(t_star - nu, stepper.state(), &mut pt) {
                                    Ok(v) => v * stepper.weight(),
                                    Err(_) => return None,
                                };
                            return Some((phi_nu - phi0 + g_sum - mart_sum, mart_sum));
                        }
                    }
                }
            }
        })
        .collect();

    let mut residuals = Vec::with_capacity(n_paths);
    let mut martingales = Vec::with_capacity(n_paths);
    let mut n_invalid = 0usize;
    for o in outcomes {
        match o {
            Some((d, m)) => {
                residuals.push(d);
                martingales.push(m);
            }
            None => n_invalid += 1,
        }
    }
    if residuals.is_empty() {
        return Err(Error::NoValidPaths(n_invalid));
    }
    let (mean, std_error) = mean_and_std_error(&residuals);
    let (mart_mean, mart_se) = mean_and_std_error(&martingales);
    let sd = std_error * (residuals.len() as f64).sqrt();
    Ok(ItoResidualStats {
        t_star,
        delta,
        mean,
        sd,
        std_error,
        martingale_mean: mart_mean,
        martingale_std_error: mart_se,
        n_paths: residuals.len(),
        n_invalid,
        rng_seed: cfg.rng_seed,
    })
}

/// Discrete residual sizes of one solution at one coarsening level.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ResidualLevel {
    pub dx: f64,
    pub dt: f64,
    pub n_nodes: usize,
    pub max_abs: f64,
    pub median_abs: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ResidualTable {
    /// Coarsest level first, finest (the given grid) last.
    pub levels: Vec<ResidualLevel>,
}

/// Tabulates the centered-difference residual u_t - L'u of a computed (or
/// sampled) solution on the given grid and on dyadic coarsenings of it,
/// skipping the initial layer t < 5% of the horizon.
pub fn viscosity_residual(
    sol: &PDESolution,
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    levels: usize,
) -> Result<ResidualTable> {
    if levels < 2 {
        return Err(Error::Invalid(
            "a refinement study needs at least 2 levels".into(),
        ));
    }
    if (sol.theta - 0.5).abs() > 1e-12 {
        return Err(Error::Invalid(format!(
            "residual tabulation expects a theta = 1/2 solution (got theta = {})",
            sol.theta
        )));
    }
    if sol.dim != model.dim() || !(sol.dim == 1 || sol.dim == 2) {
        return Err(Error::Invalid(
            "residual tabulation covers one- and two-dimensional solutions matching the model".into(),
        ));
    }
    let n_times = sol.times.len();
    let max_stride = 1usize << (levels - 1);
    if n_times < 2 * max_stride + 1 {
        return Err(Error::GridMismatch(format!(
            "{n_times} time slices cannot support {levels} coarsening levels"
        )));
    }
    if (n_times - 1) % max_stride != 0
        || sol.axes.iter().any(|a| (a.len() - 1) % max_stride != 0)
    {
        return Err(Error::GridMismatch(format!(
            "grid extents minus one must be divisible by {max_stride} for {levels} levels"
        )));
    }
    let t_min = 0.05 * sol.times.last().unwrap();

    let mut table = Vec::with_capacity(levels);
    for level in (0..levels).rev() {
        let s = 1usize << level;
        let sdt = s as f64 * sol.grid.dt;
        let sdx = s as f64 * sol.grid.dx;
        let mut abs = Vec::new();
        for j in (s..n_times - s).step_by(s) {
            if sol.times[j] < t_min {
                continue;
            }
            collect_slice_residuals(sol, model, fk, j, s, sdt, sdx, &mut abs)?;
        }
        if abs.is_empty() {
            return Err(Error::GridMismatch(
                "no interior nodes left after the initial-layer cut".into(),
            ));
        }
        abs.sort_by(f64::total_cmp);
        let median = abs[abs.len() / 2];
        table.push(ResidualLevel {
            dx: sdx,
            dt: sdt,
            n_nodes: abs.len(),
            max_abs: *abs.last().unwrap(),
            median_abs: median,
        });
    }
    Ok(ResidualTable { levels: table })
}

fn collect_slice_residuals(
    sol: &PDESolution,
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    j: usize,
    s: usize,
    sdt: f64,
    sdx: f64,
    out: &mut Vec<f64>,
) -> Result<()> {
    let n_nodes = sol.n_nodes();
    let at = |jj: usize, node: usize| sol.values[jj * n_nodes + node];
    match sol.dim {
        1 => {
            let axis = &sol.axes[0];
            let last = axis.len() - 1;
            let mut i = s;
            while i + s <= last {
                let x = [axis[i]];
                let b = model.drift()[0].eval(&x)?;
                let sigma = model.dispersion()[0].eval(&x)?;
                let a = sigma * sigma;
                let h = fk.h.eval(&x)?;
                let u = at(j, i);
                let u_t = (at(j + s, i) - at(j - s, i)) / (2.0 * sdt);
                let uxx = (at(j, i + s) - 2.0 * u + at(j, i - s)) / (sdx * sdx);
                let ux = (at(j, i + s) - at(j, i - s)) / (2.0 * sdx);
                out.push((u_t - (0.5 * a * uxx + b * ux - h * u)).abs());
                i += s;
            }
        }
        2 => {
            let (ax0, ax1) = (&sol.axes[0], &sol.axes[1]);
            let n1 = ax1.len();
            let (last0, last1) = (ax0.len() - 1, n1 - 1);
            let mut i0 = s;
            while i0 + s <= last0 {
                let mut i1 = s;
                while i1 + s <= last1 {
                    let x = [ax0[i0], ax1[i1]];
                    let mut drift = [0.0; 2];
                    model.drift_at_raw(&x, &mut drift);
                    let diff = model.diffusion_matrix(&x)?;
                    let h = fk.h.eval(&x)?;
                    let node = i0 * n1 + i1;
                    let u = at(j, node);
                    let u_t = (at(j + s, node) - at(j - s, node)) / (2.0 * sdt);
                    let mut op = -h * u;
                    let (up0, dn0) = (at(j, node + s * n1), at(j, node - s * n1));
                    op += 0.5 * diff[0] * (up0 - 2.0 * u + dn0) / (sdx * sdx)
                        + drift[0] * (up0 - dn0) / (2.0 * sdx);
                    let (up1, dn1) = (at(j, node + s), at(j, node - s));
                    op += 0.5 * diff[3] * (up1 - 2.0 * u + dn1) / (sdx * sdx)
                        + drift[1] * (up1 - dn1) / (2.0 * sdx);
                    out.push((u_t - op).abs());
                    i1 += s;
                }
                i0 += s;
            }
        }
        _ => unreachable!(),
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    HolderF,
    SmoothF,
}

/// Constants entering the explicit time-continuity modulus.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct ContinuityBoundParams {
    /// Bound on |f| and |h|.
    pub c0: f64,
    /// Bound on a and |b|.
    pub c: f64,
    pub c_alpha: f64,
    pub alpha: f64,
    /// Bound for the smooth-data branch.
    pub c_prime: f64,
    pub mode: BoundMode,
}

impl ContinuityBoundParams {
    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(finite_nonneg(self.c0)
            && finite_nonneg(self.c)
            && finite_nonneg(self.c_alpha)
            && finite_nonneg(self.c_prime))
        {
            return Err(Error::Invalid(
                "continuity constants must be finite and nonnegative".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Invalid(format!(
                "alpha must lie in (0, 1] (got {})",
                self.alpha
            )));
        }
        match self.mode {
            BoundMode::HolderF => {
                if !(self.c > 0.0 && self.c_alpha > 0.0) {
                    return Err(Error::Invalid(
                        "the Holder branch needs positive C and C_alpha".into(),
                    ));
                }
            }
            BoundMode::SmoothF => {
                if !(self.c_prime > 0.0) {
                    return Err(Error::Invalid(
                        "the smooth branch needs a positive C'".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Evaluates the explicit modulus
/// e^{(t v t')C0} { C0 u_diff + C0 (e^{|t-t'|C0} - 1) + branch } with the
/// Holder branch C_alpha (8|t-t'|C + 2(t-t')^2 C^2)^{alpha/2} or the smooth
/// branch (8|t-t'|C' + 2(t-t')^2 C'^2)^{1/2}.
pub fn continuity_bound(
    params: &ContinuityBoundParams,
    t: f64,
    t_prime: f64,
    u_diff: f64,
) -> Result<f64> {
    params.validate()?;
    if !(t >= 0.0 && t.is_finite() && t_prime >= 0.0 && t_prime.is_finite()) {
        return Err(Error::Invalid(format!(
            "times must be finite and nonnegative (got {t}, {t_prime})"
        )));
    }
    if !(u_diff >= 0.0 && u_diff.is_finite()) {
        return Err(Error::Invalid(format!(
            "u_diff must be finite and nonnegative (got {u_diff})"
        )));
    }
    let gap = (t - t_prime).abs();
    let branch = match params.mode {
        BoundMode::HolderF => {
            let inner = 8.0 * gap * params.c + 2.0 * gap * gap * params.c * params.c;
            params.c_alpha * inner.powf(0.5 * params.alpha)
        }
        BoundMode::SmoothF => {
            let inner =
                8.0 * gap * params.c_prime + 2.0 * gap * gap * params.c_prime * params.c_prime;
            inner.sqrt()
        }
    };
    let front = (t.max(t_prime) * params.c0).exp();
    Ok(front * (params.c0 * u_diff + params.c0 * (gap * params.c0).exp_m1() + branch))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ContinuityPair {
    pub t: f64,
    pub t_prime: f64,
    pub fk_diff: f64,
    pub u_diff: f64,
    pub gamma_bar: f64,
    pub combined_std_error: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ContinuityReport {
    pub x: f64,
    pub pairs: Vec<ContinuityPair>,
    pub n_violations: usize,
}

/// Checks, for adjacent times of the grid, that the estimated functional
/// moves no more than the explicit modulus plus sampling noise.
pub fn continuity_check(
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    params: &ContinuityBoundParams,
    x: f64,
    t_grid: &[f64],
    n_paths: usize,
    cfg: &SimConfig,
) -> Result<ContinuityReport> {
    params.validate()?;
    if model.dim() != 1 {
        return Err(Error::Invalid(
            "the continuity check is one-dimensional".into(),
        ));
    }
    let fk_hat = crate::mc::estimate_feynman_kac(model, fk, &[x], t_grid, n_paths, cfg)?;
    let u_hat = crate::mc::estimate_u(model, &[x], t_grid, n_paths, cfg)?;
    let mut pairs = Vec::new();
    let mut n_violations = 0;
    for w in fk_hat.windows(2).zip(u_hat.windows(2)) {
        let ((lo, hi), (ulo, uhi)) = ((&w.0[0], &w.0[1]), (&w.1[0], &w.1[1]));
        let fk_diff = (hi.value - lo.value).abs();
        let u_diff = (uhi.value - ulo.value).abs();
        let gamma_bar = continuity_bound(params, lo.t, hi.t, u_diff)?;
        let combined = lo.std_error.hypot(hi.std_error);
        let violated = fk_diff > gamma_bar + 3.0 * combined;
        if violated {
            n_violations += 1;
        }
        pairs.push(ContinuityPair {
            t: lo.t,
            t_prime: hi.t,
            fk_diff,
            u_diff,
            gamma_bar,
            combined_std_error: combined,
            violated,
        });
    }
    Ok(ContinuityReport {
        x,
        pairs,
        n_violations,
    })
}
