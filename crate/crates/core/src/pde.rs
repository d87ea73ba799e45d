//! Theta-scheme solver for the killed Cauchy problem on truncated domains,
//! monotone truncation limits, and supersolution domination checks.

use crate::error::{Error, Result};
use crate::mc::MCEstimate;
use crate::model::{DiffusionModel, Domain, FeynmanKacSpec};
use rayon::prelude::*;

/// Agreement tolerance attributed to the scheme itself in comparisons.
pub const SCHEME_TOL: f64 = 1e-8;

/// Spatial/temporal discretization and scheme selection.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PDEGrid {
    pub dx: f64,
    pub dt: f64,
    pub t_max: f64,
    /// 0 = explicit, 1/2 = Crank-Nicolson, 1 = implicit.
    pub theta: f64,
    /// First-order upwind drift instead of centered differences.
    pub upwind: bool,
    /// Run the explicit scheme even when the step-size check fails.
    pub allow_unstable: bool,
}

impl PDEGrid {
    pub fn new(dx: f64, dt: f64, t_max: f64) -> PDEGrid {
        PDEGrid {
            dx,
            dt,
            t_max,
            theta: 1.0,
            upwind: true,
            allow_unstable: false,
        }
    }

    pub fn with_theta(mut self, theta: f64) -> PDEGrid {
        self.theta = theta;
        self
    }

    pub fn with_upwind(mut self, upwind: bool) -> PDEGrid {
        self.upwind = upwind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dx.is_finite() && self.dx > 0.0) {
            return Err(Error::Invalid(format!("dx must be positive (got {})", self.dx)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Invalid(format!("dt must be positive (got {})", self.dt)));
        }
        if !(self.t_max.is_finite() && self.t_max >= self.dt) {
            return Err(Error::Invalid(format!(
                "t_max must be at least dt (got t_max = {}, dt = {})",
                self.t_max, self.dt
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Invalid(format!(
                "theta must lie in [0, 1] (got {})",
                self.theta
            )));
        }
        Ok(())
    }
}

/// Dense space-time field produced by one solve.
#[derive(Debug, Clone, serde::Serialize)]
pub struct PDESolution {
    pub grid: PDEGrid,
    pub dim: usize,
    /// Node coordinates along each axis, boundaries included.
    pub axes: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    /// Row-major field: time-major, then lexicographic over axes.
    pub values: Vec<f64>,
    pub truncation_index: Option<u32>,
    pub theta: f64,
    pub upwind: bool,
}

impl PDESolution {
    pub fn n_nodes(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn slice(&self, j: usize) -> &[f64] {
        let n = self.n_nodes();
        &self.values[j * n..(j + 1) * n]
    }

    pub fn final_slice(&self) -> &[f64] {
        self.slice(self.times.len() - 1)
    }

    /// Flat node index from per-axis indices (lexicographic, first axis slowest).
    pub fn node_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for (d, &i) in idx.iter().enumerate() {
            flat = flat * self.axes[d].len() + i;
            debug_assert!(i < self.axes[d].len());
        }
        flat
    }

    pub fn node_coord(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut coord = vec![0.0; self.dim];
        for d in (0..self.dim).rev() {
            let len = self.axes[d].len();
            coord[d] = self.axes[d][rem % len];
            rem /= len;
        }
        coord
    }

    /// Value at (t, x) when both land on grid points within tolerance.
    pub fn lookup(&self, t: f64, x: &[f64]) -> Result<f64> {
        let j = match_index(&self.times, t)?;
        let mut idx = Vec::with_capacity(self.dim);
        for d in 0..self.dim {
            idx.push(match_index(&self.axes[d], x[d])?);
        }
        Ok(self.slice(j)[self.node_index(&idx)])
    }

    /// CSV rows t, x1..xn, u; `every` thins the time axis (1 keeps all).
    pub fn write_csv<W: std::io::Write>(&self, out: W, every: usize) -> Result<()> {
        let every = every.max(1);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        if self.dim == 1 {
            header.push("x".to_string());
        } else {
            for d in 1..=self.dim {
                header.push(format!("x{d}"));
            }
        }
        header.push("u".to_string());
        w.write_record(&header)
            .map_err(|e| Error::Output(e.to_string()))?;
        let n = self.n_nodes();
        for j in (0..self.times.len()).step_by(every) {
            let slice = self.slice(j);
            for flat in 0..n {
                let mut row = vec![crate::sim::format_float(self.times[j])];
                for c in self.node_coord(flat) {
                    row.push(crate::sim::format_float(c));
                }
                row.push(crate::sim::format_float(slice[flat]));
                w.write_record(&row)
                    .map_err(|e| Error::Output(e.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn match_index(axis: &[f64], v: f64) -> Result<usize> {
    if axis.len() < 2 {
        return Err(Error::GridMismatch("axis has fewer than two nodes".into()));
    }
    let step = axis[1] - axis[0];
    let raw = (v - axis[0]) / step;
    let i = raw.round();
    let tol = 1e-9 * (1.0 + v.abs());
    if i < 0.0 || i as usize >= axis.len() || (v - (axis[0] + i * step)).abs() > tol {
        return Err(Error::GridMismatch(format!(
            "point {v} does not lie on the grid (spacing {step}, origin {})",
            axis[0]
        )));
    }
    Ok(i as usize)
}

fn build_axis(lower: f64, upper: f64, dx: f64) -> Result<Vec<f64>> {
    let width = upper - lower;
    let steps = (width / dx).round() as usize;
    if steps < 2 {
        return Err(Error::Invalid(format!(
            "dx = {dx} leaves fewer than two cells on [{lower}, {upper}]"
        )));
    }
    let hx = width / steps as f64;
    Ok((0..=steps).map(|i| lower + i as f64 * hx).collect())
}

fn effective_domain(model: &DiffusionModel, m: Option<u32>) -> Result<Domain> {
    match m {
        Some(idx) => model.truncation().truncate(model.domain(), idx),
        None => {
            if !model.domain().is_bounded() {
                return Err(Error::Invalid(
                    "an unbounded domain needs a truncation index".into(),
                ));
            }
            Ok(model.domain().clone())
        }
    }
}

/// Prefactored tridiagonal solver reused across time steps.
struct ThomasFactor {
    sub: Vec<f64>,
    c_prime: Vec<f64>,
    denom: Vec<f64>,
}

impl ThomasFactor {
    fn new(sub: &[f64], diag: &[f64], sup: &[f64]) -> Result<ThomasFactor> {
        let n = diag.len();
        let mut c_prime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        let mut d = diag[0];
        for i in 0..n {
            if i > 0 {
                d = diag[i] - sub[i] * c_prime[i - 1];
            }
            if d == 0.0 || !d.is_finite() {
                return Err(Error::NonFinite(format!(
                    "tridiagonal pivot degenerated at row {i}"
                )));
            }
            denom[i] = d;
            if i + 1 < n {
                c_prime[i] = sup[i] / d;
            }
        }
        Ok(ThomasFactor {
            sub: sub.to_vec(),
            c_prime,
            denom,
        })
    }

    fn solve(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        rhs[0] /= self.denom[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.sub[i] * rhs[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.c_prime[i] * rhs[i + 1];
        }
    }
}

struct Coefficients1D {
    /// Spatial operator rows: sub/diag/sup of A in u_t = A u (potential excluded).
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    /// Half-step potential factors exp(-h dt / 2), applied around each step
    /// so a constant potential factorizes exactly.
    e_half: Vec<f64>,
    f0: Vec<f64>,
    max_a: f64,
}

fn coefficients_1d(
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    axis: &[f64],
    hx: f64,
    dt: f64,
    upwind: bool,
) -> Result<Coefficients1D> {
    let n_int = axis.len() - 2;
    let mut lower = vec![0.0; n_int];
    let mut diag = vec![0.0; n_int];
    let mut upper = vec![0.0; n_int];
    let mut e_half = vec![0.0; n_int];
    let mut f0 = vec![0.0; n_int];
    let mut max_a = 0.0f64;
    for i in 0..n_int {
        let x = [axis[i + 1]];
        let a = model.diffusion_matrix(&x)?[0];
        if a <= 0.0 {
            return Err(Error::Invalid(format!(
                "diffusion a({}) = {a} must be strictly positive at interior nodes",
                x[0]
            )));
        }
        max_a = max_a.max(a);
        let b = model.drift()[0].eval(&x)?;
        let h = fk.h.eval(&x)?;
        let alpha = a / (2.0 * hx * hx);
        if upwind {
            lower[i] = alpha - b.min(0.0) / hx;
            upper[i] = alpha + b.max(0.0) / hx;
            diag[i] = -2.0 * alpha - b.abs() / hx;
        } else {
            lower[i] = alpha - b / (2.0 * hx);
            upper[i] = alpha + b / (2.0 * hx);
            diag[i] = -2.0 * alpha;
        }
        e_half[i] = (-0.5 * h * dt).exp();
        if !e_half[i].is_finite() {
            return Err(Error::NonFinite(format!(
                "potential factor is not finite at x = {}",
                x[0]
            )));
        }
        f0[i] = fk.f.eval(&x)?;
    }
    Ok(Coefficients1D {
        lower,
        diag,
        upper,
        e_half,
        f0,
        max_a,
    })
}

fn check_explicit_stability(grid: &PDEGrid, max_a: f64) -> Result<()> {
    if grid.theta == 0.0 && max_a > 0.0 {
        let limit = grid.dx * grid.dx / max_a;
        if grid.dt > limit * (1.0 + 1e-12) && !grid.allow_unstable {
            return Err(Error::Stability {
                dt: grid.dt,
                limit,
            });
        }
    }
    Ok(())
}

fn solve_1d(
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    m: Option<u32>,
    grid: &PDEGrid,
    domain: &Domain,
) -> Result<PDESolution> {
    let axis = build_axis(domain.lower()[0], domain.upper()[0], grid.dx)?;
    let hx = axis[1] - axis[0];
    let coef = coefficients_1d(model, fk, &axis, hx, grid.dt, grid.upwind)?;
    check_explicit_stability(grid, coef.max_a)?;
    let n_int = axis.len() - 2;
    let n_nodes = axis.len();
    let n_steps = crate::sim::grid_steps(grid.t_max, grid.dt);
    let theta = grid.theta;
    let dt = grid.dt;

    let factor = if theta > 0.0 {
        let sub: Vec<f64> = coef.lower.iter().map(|&v| -theta * dt * v).collect();
        let diag: Vec<f64> = coef.diag.iter().map(|&v| 1.0 - theta * dt * v).collect();
        let sup: Vec<f64> = coef.upper.iter().map(|&v| -theta * dt * v).collect();
        Some(ThomasFactor::new(&sub, &diag, &sup)?)
    } else {
        None
    };

    let mut values = Vec::with_capacity((n_steps + 1) * n_nodes);
    let mut u = vec![0.0; n_int];
    u.copy_from_slice(&coef.f0);
    values.push(0.0);
    values.extend_from_slice(&u);
    values.push(0.0);

    let mut rhs = vec![0.0; n_int];
    for _ in 0..n_steps {
        for i in 0..n_int {
            u[i] *= coef.e_half[i];
        }
        let w = (1.0 - theta) * dt;
        for i in 0..n_int {
            let left = if i > 0 { u[i - 1] } else { 0.0 };
            let right = if i + 1 < n_int { u[i + 1] } else { 0.0 };
            rhs[i] = u[i]
                + w * (coef.lower[i] * left + coef.diag[i] * u[i] + coef.upper[i] * right);
        }
        match &factor {
            Some(fac) => {
                fac.solve(&mut rhs);
                u.copy_from_slice(&rhs);
            }
            None => u.copy_from_slice(&rhs),
        }
        for i in 0..n_int {
            u[i] *= coef.e_half[i];
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "solution field became non-finite during time stepping".into(),
            ));
        }
        values.push(0.0);
        values.extend_from_slice(&u);
        values.push(0.0);
    }

    Ok(PDESolution {
        grid: *grid,
        dim: 1,
        axes: vec![axis],
        times: (0..=n_steps).map(|j| j as f64 * dt).collect(),
        values,
        truncation_index: m,
        theta,
        upwind: grid.upwind,
    })
}

struct Coefficients2D {
    center: Vec<f64>,
    west: Vec<f64>,
    east: Vec<f64>,
    south: Vec<f64>,
    north: Vec<f64>,
    e_half: Vec<f64>,
    f0: Vec<f64>,
    max_a: f64,
}

fn coefficients_2d(
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    ax: &[f64],
    ay: &[f64],
    dt: f64,
    upwind: bool,
) -> Result<Coefficients2D> {
    let hx = ax[1] - ax[0];
    let hy = ay[1] - ay[0];
    let nx = ax.len() - 2;
    let ny = ay.len() - 2;
    let n = nx * ny;
    let mut c = Coefficients2D {
        center: vec![0.0; n],
        west: vec![0.0; n],
        east: vec![0.0; n],
        south: vec![0.0; n],
        north: vec![0.0; n],
        e_half: vec![0.0; n],
        f0: vec![0.0; n],
        max_a: 0.0,
    };
    let mut b = [0.0; 2];
    for ix in 0..nx {
        for iy in 0..ny {
            let p = [ax[ix + 1], ay[iy + 1]];
            let a = model.diffusion_matrix(&p)?;
            let (a11, a22, a12) = (a[0], a[3], a[1]);
            let scale = 1.0 + a11.abs().max(a22.abs());
            if a12.abs() > 1e-12 * scale {
                return Err(Error::Invalid(format!(
                    "diffusion matrix at {p:?} has a cross term ({a12}); only diagonal a is supported in 2D"
                )));
            }
            if a11 <= 0.0 || a22 <= 0.0 {
                return Err(Error::Invalid(format!(
                    "diffusion diagonal at {p:?} must be strictly positive (got {a11}, {a22})"
                )));
            }
            c.max_a = c.max_a.max(a11 + a22);
            model.drift_at_raw(&p, &mut b);
            if !(b[0].is_finite() && b[1].is_finite()) {
                return Err(Error::Eval(format!("drift is not finite at {p:?}")));
            }
            let h = fk.h.eval(&p)?;
            let k = ix * ny + iy;
            let alx = a11 / (2.0 * hx * hx);
            let aly = a22 / (2.0 * hy * hy);
            if upwind {
                c.west[k] = alx - b[0].min(0.0) / hx;
                c.east[k] = alx + b[0].max(0.0) / hx;
                c.south[k] = aly - b[1].min(0.0) / hy;
                c.north[k] = aly + b[1].max(0.0) / hy;
                c.center[k] = -2.0 * (alx + aly) - b[0].abs() / hx - b[1].abs() / hy;
            } else {
                c.west[k] = alx - b[0] / (2.0 * hx);
                c.east[k] = alx + b[0] / (2.0 * hx);
                c.south[k] = aly - b[1] / (2.0 * hy);
                c.north[k] = aly + b[1] / (2.0 * hy);
                c.center[k] = -2.0 * (alx + aly);
            }
            c.e_half[k] = (-0.5 * h * dt).exp();
            if !c.e_half[k].is_finite() {
                return Err(Error::NonFinite(format!(
                    "potential factor is not finite at {p:?}"
                )));
            }
            c.f0[k] = fk.f.eval(&p)?;
        }
    }
    Ok(c)
}

fn apply_2d(c: &Coefficients2D, u: &[f64], nx: usize, ny: usize, out: &mut [f64]) {
    for ix in 0..nx {
        for iy in 0..ny {
            let k = ix * ny + iy;
            let west = if ix > 0 { u[k - ny] } else { 0.0 };
            let east = if ix + 1 < nx { u[k + ny] } else { 0.0 };
            let south = if iy > 0 { u[k - 1] } else { 0.0 };
            let north = if iy + 1 < ny { u[k + 1] } else { 0.0 };
            out[k] = c.center[k] * u[k]
                + c.west[k] * west
                + c.east[k] * east
                + c.south[k] * south
                + c.north[k] * north;
        }
    }
}

const GS_MAX_SWEEPS: usize = 20_000;

/// Deterministic lexicographic Gauss-Seidel for (I - theta dt A) u = rhs.
fn gauss_seidel_2d(
    c: &Coefficients2D,
    theta_dt: f64,
    rhs: &[f64],
    nx: usize,
    ny: usize,
    u: &mut [f64],
) -> Result<()> {
    let scale = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 1e-13 * scale;
    for _ in 0..GS_MAX_SWEEPS {
        let mut delta = 0.0f64;
        for ix in 0..nx {
            for iy in 0..ny {
                let k = ix * ny + iy;
                let west = if ix > 0 { u[k - ny] } else { 0.0 };
                let east = if ix + 1 < nx { u[k + ny] } else { 0.0 };
                let south = if iy > 0 { u[k - 1] } else { 0.0 };
                let north = if iy + 1 < ny { u[k + 1] } else { 0.0 };
                let off = c.west[k] * west
                    + c.east[k] * east
                    + c.south[k] * south
                    + c.north[k] * north;
                let diag = 1.0 - theta_dt * c.center[k];
                let new = (rhs[k] + theta_dt * off) / diag;
                delta = delta.max((new - u[k]).abs());
                u[k] = new;
            }
        }
        if delta <= tol {
            return Ok(());
        }
    }
    Err(Error::NonFinite(format!(
        "iterative solve failed to reach {tol:.1e} in {GS_MAX_SWEEPS} sweeps"
    )))
}

fn solve_2d(
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    m: Option<u32>,
    grid: &PDEGrid,
    domain: &Domain,
) -> Result<PDESolution> {
    let ax = build_axis(domain.lower()[0], domain.upper()[0], grid.dx)?;
    let ay = build_axis(domain.lower()[1], domain.upper()[1], grid.dx)?;
    let nx = ax.len() - 2;
    let ny = ay.len() - 2;
    let coef = coefficients_2d(model, fk, &ax, &ay, grid.dt, grid.upwind)?;
    check_explicit_stability(grid, coef.max_a)?;
    let n_int = nx * ny;
    let n_nodes = ax.len() * ay.len();
    let n_steps = crate::sim::grid_steps(grid.t_max, grid.dt);
    let theta = grid.theta;
    let dt = grid.dt;

    let mut u = coef.f0.clone();
    let mut values = Vec::with_capacity((n_steps + 1) * n_nodes);
    let embed = |u: &[f64], values: &mut Vec<f64>| {
        for jx in 0..ax.len() {
            for jy in 0..ay.len() {
                let interior =
                    jx > 0 && jx < ax.len() - 1 && jy > 0 && jy < ay.len() - 1;
                values.push(if interior {
                    u[(jx - 1) * ny + (jy - 1)]
                } else {
                    0.0
                });
            }
        }
    };
    embed(&u, &mut values);

    let mut au = vec![0.0; n_int];
    let mut rhs = vec![0.0; n_int];
    for _ in 0..n_steps {
        for k in 0..n_int {
            u[k] *= coef.e_half[k];
        }
        apply_2d(&coef, &u, nx, ny, &mut au);
        let w = (1.0 - theta) * dt;
        for k in 0..n_int {
            rhs[k] = u[k] + w * au[k];
        }
        if theta > 0.0 {
            gauss_seidel_2d(&coef, theta * dt, &rhs, nx, ny, &mut u)?;
        } else {
            u.copy_from_slice(&rhs);
        }
        for k in 0..n_int {
            u[k] *= coef.e_half[k];
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "solution field became non-finite during time stepping".into(),
            ));
        }
        embed(&u, &mut values);
    }

    Ok(PDESolution {
        grid: *grid,
        dim: 2,
        axes: vec![ax, ay],
        times: (0..=n_steps).map(|j| j as f64 * dt).collect(),
        values,
        truncation_index: m,
        theta,
        upwind: grid.upwind,
    })
}

/// Solve u_t = (1/2) sum a_ii u_xixi + sum b_i u_xi - h u with u(0) = f and
/// zero boundary data on the (possibly truncated) domain.
pub fn solve_cauchy(
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    m: Option<u32>,
    grid: &PDEGrid,
) -> Result<PDESolution> {
    grid.validate()?;
    if fk.dim() != model.dim() {
        return Err(Error::Invalid(format!(
            "functional has {} variable(s), model dimension is {}",
            fk.dim(),
            model.dim()
        )));
    }
    let domain = effective_domain(model, m)?;
    match model.dim() {
        1 => solve_1d(model, fk, m, grid, &domain),
        2 => solve_2d(model, fk, m, grid, &domain),
        n => Err(Error::Invalid(format!(
            "grid solves support one or two dimensions (model has {n})"
        ))),
    }
}

/// Sup and signed-minimum differences of b - a over nodes common to both
/// solutions (all times; time grids must agree).
pub fn compare_on_common_nodes(a: &PDESolution, b: &PDESolution) -> Result<(f64, f64)> {
    compare_within(a, b, None)
}

fn compare_within(
    a: &PDESolution,
    b: &PDESolution,
    window: Option<&Domain>,
) -> Result<(f64, f64)> {
    if a.dim != b.dim {
        return Err(Error::GridMismatch(format!(
            "solutions have dimensions {} and {}",
            a.dim, b.dim
        )));
    }
    if a.times.len() != b.times.len()
        || a.times
            .iter()
            .zip(&b.times)
            .any(|(s, t)| (s - t).abs() > 1e-12 * (1.0 + s.abs()))
    {
        return Err(Error::GridMismatch(
            "solutions use different time grids".into(),
        ));
    }
    let mut pairs = Vec::new();
    let n_a = a.n_nodes();
    // Boundary nodes carry the artificial killing value 0, so the comparison
    // window is the interior common to both solutions.
    'outer: for flat in 0..n_a {
        if on_boundary(a, flat) {
            continue;
        }
        let coord = a.node_coord(flat);
        if let Some(w) = window {
            if !w.contains(&coord) {
                continue;
            }
        }
        let mut idx_b = Vec::with_capacity(a.dim);
        for d in 0..a.dim {
            match match_index(&b.axes[d], coord[d]) {
                Ok(i) => idx_b.push(i),
                Err(_) => continue 'outer,
            }
        }
        if idx_b
            .iter()
            .enumerate()
            .any(|(d, &i)| i == 0 || i == b.axes[d].len() - 1)
        {
            continue;
        }
        pairs.push((flat, b.node_index(&idx_b)));
    }
    if pairs.is_empty() {
        return Err(Error::GridMismatch(
            "the solutions share no grid nodes".into(),
        ));
    }
    let mut sup = 0.0f64;
    let mut min_signed = f64::INFINITY;
    for j in 0..a.times.len() {
        let sa = a.slice(j);
        let sb = b.slice(j);
        for &(ia, ib) in &pairs {
            let d = sb[ib] - sa[ia];
            sup = sup.max(d.abs());
            min_signed = min_signed.min(d);
        }
    }
    Ok((sup, min_signed))
}

/// Convergence record of the monotone truncation sweep.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceReport {
    pub m_values: Vec<u32>,
    /// Sup difference between consecutive solutions on common nodes.
    pub sup_diffs: Vec<f64>,
    pub converged: bool,
    pub tol: f64,
}

/// Monotone limit over truncations m1..=m2 with the implicit upwind scheme.
///
/// Each truncation solves independently; consecutive solutions are compared
/// on shared nodes and must increase up to the scheme tolerance.
pub fn minimal_solution(
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    grid: &PDEGrid,
    m_range: (u32, u32),
    tol: f64,
    allow_degenerate: bool,
) -> Result<(PDESolution, ConvergenceReport)> {
    grid.validate()?;
    if grid.theta != 1.0 || !grid.upwind {
        return Err(Error::Invalid(
            "the truncation limit requires the implicit scheme with upwinded drift".into(),
        ));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Invalid(format!("tol must be positive (got {tol})")));
    }
    let (m1, m2) = m_range;
    if m1 == 0 || m2 < m1 {
        return Err(Error::Invalid(format!(
            "m range must satisfy 1 <= m1 <= m2 (got {m1}..{m2})"
        )));
    }
    if m1 == m2 && !allow_degenerate {
        return Err(Error::Invalid(
            "a single-truncation range needs the degenerate-range flag".into(),
        ));
    }
    let m_values: Vec<u32> = (m1..=m2).collect();
    let solved: Vec<Result<PDESolution>> = m_values
        .par_iter()
        .map(|&m| solve_cauchy(model, fk, Some(m), grid))
        .collect();
    let mut solutions = Vec::with_capacity(solved.len());
    for s in solved {
        let sol = s?;
        let floor = sol.values.iter().cloned().fold(f64::INFINITY, f64::min);
        if floor < 0.0 {
            return Err(Error::Invalid(format!(
                "monotone-mode solution dipped to {floor} below zero"
            )));
        }
        solutions.push(sol);
    }
    // Successive solutions are compared on the window shared by the whole
    // family, the smallest truncated domain; near the larger domains' own
    // boundaries the killed values would mask convergence.
    let window = model.truncation().truncate(model.domain(), m1)?;
    let mut sup_diffs = Vec::new();
    for pair in solutions.windows(2) {
        let (sup, min_signed) = compare_within(&pair[0], &pair[1], Some(&window))?;
        if min_signed < -SCHEME_TOL {
            return Err(Error::Invalid(format!(
                "truncation increment fell to {min_signed}, below -{SCHEME_TOL}; the monotone scheme is broken"
            )));
        }
        sup_diffs.push(sup);
    }
    let converged = match sup_diffs.last() {
        Some(&d) => d < tol,
        None => allow_degenerate,
    };
    let report = ConvergenceReport {
        m_values,
        sup_diffs,
        converged,
        tol,
    };
    Ok((solutions.pop().unwrap(), report))
}

/// A claimed supersolution: a constant field or a solved grid field.
pub enum Candidate<'a> {
    Constant(f64),
    Solution(&'a PDESolution),
}

/// Reference values the candidate must dominate.
pub enum Reference<'a> {
    Estimates(&'a [MCEstimate]),
    Solution(&'a PDESolution),
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct DominationReport {
    pub points_checked: usize,
    /// Smallest candidate + slack - reference margin over all points.
    pub worst_margin: f64,
    pub worst_point: Option<(f64, Vec<f64>)>,
    pub dominated: bool,
}

/// Check reference <= candidate + slack everywhere the two can be aligned.
///
/// Slack is 3 standard errors against Monte Carlo references and ten times
/// the scheme tolerance against grid references.
pub fn check_supersolution(
    fk: &FeynmanKacSpec,
    candidate: &Candidate,
    reference: &Reference,
) -> Result<DominationReport> {
    match candidate {
        Candidate::Constant(m) => {
            if !(m.is_finite() && *m >= 0.0) {
                return Err(Error::Invalid(format!(
                    "a constant candidate must be finite and nonnegative (got {m})"
                )));
            }
        }
        Candidate::Solution(sol) => {
            if sol.values.iter().any(|v| *v < 0.0) {
                return Err(Error::Invalid(
                    "candidate field takes negative values".into(),
                ));
            }
            let initial = sol.slice(0);
            for flat in 0..sol.n_nodes() {
                let coord = sol.node_coord(flat);
                if on_boundary(sol, flat) {
                    continue;
                }
                let f_val = fk.f.eval(&coord)?;
                if initial[flat] < f_val - 1e-12 * (1.0 + f_val.abs()) {
                    return Err(Error::Invalid(format!(
                        "candidate initial slice is {} at {coord:?}, below f = {f_val}",
                        initial[flat]
                    )));
                }
            }
        }
    }

    let mut points_checked = 0usize;
    let mut worst_margin = f64::INFINITY;
    let mut worst_point = None;
    let mut record = |t: f64, x: &[f64], cand: f64, slack: f64, refv: f64| {
        let margin = cand + slack - refv;
        points_checked += 1;
        if margin < worst_margin {
            worst_margin = margin;
            worst_point = Some((t, x.to_vec()));
        }
    };

    match reference {
        Reference::Estimates(ests) => {
            if ests.is_empty() {
                return Err(Error::Invalid("no reference estimates supplied".into()));
            }
            for e in *ests {
                let cand = match candidate {
                    Candidate::Constant(m) => {
                        let f_val = fk.f.eval(&e.x)?;
                        if *m < f_val - 1e-12 * (1.0 + f_val.abs()) {
                            return Err(Error::Invalid(format!(
                                "constant candidate {m} is below f = {f_val} at {:?}",
                                e.x
                            )));
                        }
                        *m
                    }
                    Candidate::Solution(sol) => sol.lookup(e.t, &e.x)?,
                };
                record(e.t, &e.x, cand, 3.0 * e.std_error, e.value);
            }
        }
        Reference::Solution(ref_sol) => match candidate {
            Candidate::Constant(m) => {
                for (j, &t) in ref_sol.times.iter().enumerate() {
                    let slice = ref_sol.slice(j);
                    for flat in 0..ref_sol.n_nodes() {
                        record(
                            t,
                            &ref_sol.node_coord(flat),
                            *m,
                            10.0 * SCHEME_TOL,
                            slice[flat],
                        );
                    }
                }
            }
            Candidate::Solution(sol) => {
                let (_, _) = compare_on_common_nodes(ref_sol, sol)?;
                for (j, &t) in ref_sol.times.iter().enumerate() {
                    let slice = ref_sol.slice(j);
                    for flat in 0..ref_sol.n_nodes() {
                        let coord = ref_sol.node_coord(flat);
                        if let Ok(cand) = sol.lookup(t, &coord) {
                            record(t, &coord, cand, 10.0 * SCHEME_TOL, slice[flat]);
                        }
                    }
                }
            }
        },
    }

    if points_checked == 0 {
        return Err(Error::GridMismatch(
            "no reference points align with the candidate".into(),
        ));
    }
    Ok(DominationReport {
        points_checked,
        worst_margin,
        worst_point,
        dominated: worst_margin >= 0.0,
    })
}

fn on_boundary(sol: &PDESolution, flat: usize) -> bool {
    let mut rem = flat;
    for d in (0..sol.dim).rev() {
        let len = sol.axes[d].len();
        let i = rem % len;
        rem /= len;
        if i == 0 || i == len - 1 {
            return true;
        }
    }
    false
}
