//! Diffusion model data: domains, truncation sequences, coefficients,
//! Feynman-Kac data, validation, and TOML configuration loading.

use crate::error::{Error, Result};
use crate::expr::CoefficientExpr;
use crate::numerics::symmetric_eigen_range;
use serde::Deserialize;

/// Open spatial domain: an interval for dim 1, an axis-aligned box (possibly
/// with infinite sides) for any dim. `escape_radius` bounds excursions along
/// infinite sides; crossing it is recorded as an explosion.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
    escape_radius: f64,
}

/// Classification of a state against a domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateCheck {
    Inside,
    /// Reached or crossed a finite side.
    ExitedBoundary,
    /// Crossed the escape radius along an infinite side.
    Escaped,
    /// A coordinate is NaN.
    NonFinite,
}

impl Domain {
    pub fn interval(lower: f64, upper: f64, escape_radius: f64) -> Result<Self> {
        Self::new_box(vec![lower], vec![upper], escape_radius)
    }

    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>, escape_radius: f64) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::Invalid(format!(
                "domain bounds must be non-empty and of equal length (got {} and {})",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return Err(Error::Invalid(format!(
                    "domain side {i} has invalid bounds ({l}, {u})"
                )));
            }
            if !(l < u) {
                return Err(Error::Invalid(format!(
                    "domain side {i} needs lower < upper (got {l} >= {u})"
                )));
            }
        }
        if !(escape_radius.is_finite() && escape_radius > 0.0) {
            return Err(Error::Invalid(format!(
                "escape_radius must be finite and positive (got {escape_radius})"
            )));
        }
        Ok(Domain {
            lower,
            upper,
            escape_radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn escape_radius(&self) -> f64 {
        self.escape_radius
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().all(|l| l.is_finite()) && self.upper.iter().all(|u| u.is_finite())
    }

    /// Strict interior membership (escape radius not considered).
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&xi, (&l, &u))| xi > l && xi < u)
    }

    /// Exit rule used by path simulation: finite sides stop the path at the
    /// boundary; infinite sides stop it when |x_i| crosses the escape radius.
    pub fn check_state(&self, x: &[f64]) -> StateCheck {
        debug_assert_eq!(x.len(), self.dim());
        for &xi in x {
            if xi.is_nan() {
                return StateCheck::NonFinite;
            }
        }
        for (&xi, (&l, &u)) in x.iter().zip(self.lower.iter().zip(&self.upper)) {
            if l.is_finite() {
                if xi <= l {
                    return StateCheck::ExitedBoundary;
                }
            } else if xi < -self.escape_radius {
                return StateCheck::Escaped;
            }
            if u.is_finite() {
                if xi >= u {
                    return StateCheck::ExitedBoundary;
                }
            } else if xi > self.escape_radius {
                return StateCheck::Escaped;
            }
        }
        StateCheck::Inside
    }
}

/// Rule mapping index m >= 1 to a bounded subdomain O_m with
/// closure(O_m) strictly inside O_{m+1} and inside the full domain, and
/// union over m equal to the full domain. Infinite sides are clipped
/// `m * unit` past the opposite finite side (or past 0); finite sides are
/// pulled in by `basis / (2(m+2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationSequence {
    unit: f64,
}

impl Default for TruncationSequence {
    fn default() -> Self {
        TruncationSequence { unit: 10.0 }
    }
}

impl TruncationSequence {
    pub fn new(unit: f64) -> Result<Self> {
        if !(unit.is_finite() && unit > 0.0) {
            return Err(Error::Invalid(format!(
                "truncation unit must be finite and positive (got {unit})"
            )));
        }
        Ok(TruncationSequence { unit })
    }

    pub fn unit(&self) -> f64 {
        self.unit
    }

    pub fn truncate(&self, domain: &Domain, m: u32) -> Result<Domain> {
        if m == 0 {
            return Err(Error::Invalid("truncation index must be >= 1".into()));
        }
        let mf = m as f64;
        let mut lower = Vec::with_capacity(domain.dim());
        let mut upper = Vec::with_capacity(domain.dim());
        for (&l, &u) in domain.lower.iter().zip(&domain.upper) {
            let basis = if l.is_finite() && u.is_finite() {
                u - l
            } else {
                self.unit
            };
            let margin = basis / (2.0 * (mf + 2.0));
            let anchor_low = if u.is_finite() { u } else { 0.0 };
            let anchor_high = if l.is_finite() { l } else { 0.0 };
            lower.push(if l.is_finite() {
                l + margin
            } else {
                anchor_low.min(0.0) - mf * self.unit
            });
            upper.push(if u.is_finite() {
                u - margin
            } else {
                anchor_high.max(0.0) + mf * self.unit
            });
        }
        Domain::new_box(lower, upper, domain.escape_radius)
    }
}

/// Time-homogeneous diffusion: drift b (n entries) and dispersion sigma
/// (n x n, row-major) over an open domain.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    dim: usize,
    drift: Vec<CoefficientExpr>,
    dispersion: Vec<CoefficientExpr>,
    domain: Domain,
    truncation: TruncationSequence,
}

impl DiffusionModel {
    pub fn new(
        drift: Vec<CoefficientExpr>,
        dispersion: Vec<CoefficientExpr>,
        domain: Domain,
        truncation: TruncationSequence,
    ) -> Result<Self> {
        let dim = domain.dim();
        if drift.len() != dim {
            return Err(Error::Invalid(format!(
                "drift has {} entries, domain dimension is {dim}",
                drift.len()
            )));
        }
        if dispersion.len() != dim * dim {
            return Err(Error::Invalid(format!(
                "dispersion has {} entries, expected {dim}x{dim}",
                dispersion.len()
            )));
        }
        for e in drift.iter().chain(&dispersion) {
            if e.nvars() != dim {
                return Err(Error::Invalid(format!(
                    "coefficient `{e}` has {} variable(s), expected {dim}",
                    e.nvars()
                )));
            }
        }
        Ok(DiffusionModel {
            dim,
            drift,
            dispersion,
            domain,
            truncation,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn truncation(&self) -> &TruncationSequence {
        &self.truncation
    }

    pub fn drift(&self) -> &[CoefficientExpr] {
        &self.drift
    }

    pub fn dispersion(&self) -> &[CoefficientExpr] {
        &self.dispersion
    }

    /// Evaluates drift into `out`; raw IEEE values (callers classify
    /// non-finite results).
    pub fn drift_at_raw(&self, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.drift) {
            *o = e.eval_raw(x);
        }
    }

    /// Evaluates dispersion (row-major) into `out`; raw IEEE values.
    pub fn dispersion_at_raw(&self, x: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(&self.dispersion) {
            *o = e.eval_raw(x);
        }
    }

    /// Diffusion matrix a = sigma sigma^T, exactly symmetric: the upper
    /// triangle is computed once and mirrored, which coincides with
    /// (a + a^T)/2 since both triangles would share identical products.
    pub fn diffusion_matrix(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim;
        let mut sigma = vec![0.0; n * n];
        for (o, e) in sigma.iter_mut().zip(&self.dispersion) {
            *o = e.eval(x)?;
        }
        Ok(dispersion_to_diffusion(&sigma, n))
    }
}

/// a = sigma sigma^T with mirrored upper triangle (exact symmetry).
pub fn dispersion_to_diffusion(sigma: &[f64], n: usize) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for k in 0..n {
                s += sigma[i * n + k] * sigma[j * n + k];
            }
            a[i * n + j] = s;
            a[j * n + i] = s;
        }
    }
    a
}

/// Feynman-Kac data: terminal payoff f, potential h, optional stated bound
/// c0 with |f| <= c0 and |h| <= c0 on the domain.
#[derive(Debug, Clone)]
pub struct FeynmanKacSpec {
    pub f: CoefficientExpr,
    pub h: CoefficientExpr,
    pub c0: Option<f64>,
}

impl FeynmanKacSpec {
    pub fn new(f: CoefficientExpr, h: CoefficientExpr, c0: Option<f64>) -> Result<Self> {
        if f.nvars() != h.nvars() {
            return Err(Error::Invalid(format!(
                "f has {} variable(s), h has {}",
                f.nvars(),
                h.nvars()
            )));
        }
        if let Some(c) = c0 {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Invalid(format!(
                    "c0 must be finite and positive (got {c})"
                )));
            }
        }
        Ok(FeynmanKacSpec { f, h, c0 })
    }

    /// f = 1, h = 0: the pure survival functional.
    pub fn survival(dim: usize) -> Self {
        FeynmanKacSpec {
            f: CoefficientExpr::parse_spatial("1", dim).unwrap(),
            h: CoefficientExpr::parse_spatial("0", dim).unwrap(),
            c0: Some(1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.f.nvars()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FindingStatus {
    Pass,
    Advisory,
    Fail,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct Finding {
    pub check: String,
    pub status: FindingStatus,
    pub detail: String,
}

/// Sampled assumption checks; advisory only, never blocks a computation.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn has_failures(&self) -> bool {
        self.findings.iter().any(|f| f.status == FindingStatus::Fail)
    }
}

/// Deterministic probe grid inside the domain (infinite sides clipped at
/// min(escape radius, 2 units) for sampling purposes).
pub fn default_probe_points(model: &DiffusionModel, count_per_dim: usize) -> Vec<Vec<f64>> {
    let n = model.dim;
    let k = count_per_dim.max(2);
    let dom = model.domain();
    let clip = dom.escape_radius().min(2.0 * model.truncation.unit());
    let mut axes = Vec::with_capacity(n);
    for i in 0..n {
        let l = if dom.lower()[i].is_finite() {
            dom.lower()[i]
        } else {
            -clip
        };
        let u = if dom.upper()[i].is_finite() {
            dom.upper()[i]
        } else {
            clip
        };
        let w = u - l;
        // probes strictly interior
        let axis: Vec<f64> = (0..k)
            .map(|j| l + w * (j as f64 + 0.5) / k as f64)
            .collect();
        axes.push(axis);
    }
    let mut points = vec![Vec::new()];
    for axis in &axes {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for p in &points {
            for &v in axis {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        points = next;
    }
    points
}

/// Samples model assumptions at probe points: coefficient evaluability, PSD
/// of a, strict ellipticity for dim 1, sign of h, and the stated c0 bound.
pub fn validate_model(
    model: &DiffusionModel,
    fk: &FeynmanKacSpec,
    probes: &[Vec<f64>],
) -> ValidationReport {
    let n = model.dim;
    let mut findings = Vec::new();
    let mut eval_failures: Vec<String> = Vec::new();
    let mut min_eig = f64::INFINITY;
    let mut max_abs_a = 0.0f64;
    let mut min_a_1d = f64::INFINITY;
    let mut min_h = f64::INFINITY;
    let mut max_abs = [0.0f64; 4]; // |b|, |sigma|, |f|, |h|
    let mut c0_violation: Option<String> = None;

    for p in probes {
        for (name, exprs) in [("drift", &model.drift), ("dispersion", &model.dispersion)] {
            for e in exprs.iter() {
                match e.eval(p) {
                    Ok(v) => {
                        let slot = if name == "drift" { 0 } else { 1 };
                        max_abs[slot] = max_abs[slot].max(v.abs());
                    }
                    Err(err) => eval_failures.push(format!("{name} `{e}` at {p:?}: {err}")),
                }
            }
        }
        let fv = match fk.f.eval(p) {
            Ok(v) => {
                max_abs[2] = max_abs[2].max(v.abs());
                Some(v)
            }
            Err(err) => {
                eval_failures.push(format!("f at {p:?}: {err}"));
                None
            }
        };
        let hv = match fk.h.eval(p) {
            Ok(v) => {
                max_abs[3] = max_abs[3].max(v.abs());
                min_h = min_h.min(v);
                Some(v)
            }
            Err(err) => {
                eval_failures.push(format!("h at {p:?}: {err}"));
                None
            }
        };
        if let Some(c0) = fk.c0 {
            let tol = c0 * 1e-12 + 1e-12;
            if let Some(v) = fv {
                if v.abs() > c0 + tol && c0_violation.is_none() {
                    c0_violation = Some(format!("|f| = {} > c0 = {c0} at {p:?}", v.abs()));
                }
            }
            if let Some(v) = hv {
                if v.abs() > c0 + tol && c0_violation.is_none() {
                    c0_violation = Some(format!("|h| = {} > c0 = {c0} at {p:?}", v.abs()));
                }
            }
        }
        if let Ok(a) = model.diffusion_matrix(p) {
            let (lo, _hi) = symmetric_eigen_range(&a, n);
            min_eig = min_eig.min(lo);
            for v in &a {
                max_abs_a = max_abs_a.max(v.abs());
            }
            if n == 1 {
                min_a_1d = min_a_1d.min(a[0]);
            }
        }
    }

    findings.push(if eval_failures.is_empty() {
        Finding {
            check: "coefficient evaluation".into(),
            status: FindingStatus::Pass,
            detail: format!("all coefficients evaluate at {} probe(s)", probes.len()),
        }
    } else {
        Finding {
            check: "coefficient evaluation".into(),
            status: FindingStatus::Fail,
            detail: format!(
                "{} failure(s); first: {}",
                eval_failures.len(),
                eval_failures[0]
            ),
        }
    });

    let psd_tol = 1e-12 * (1.0 + max_abs_a);
    findings.push(if min_eig >= -psd_tol {
        Finding {
            check: "diffusion matrix psd".into(),
            status: FindingStatus::Pass,
            detail: format!("min eigenvalue {min_eig:.3e} over probes"),
        }
    } else {
        Finding {
            check: "diffusion matrix psd".into(),
            status: FindingStatus::Fail,
            detail: format!("min eigenvalue {min_eig:.3e} below -{psd_tol:.1e}"),
        }
    });

    if n == 1 {
        findings.push(if min_a_1d > 0.0 {
            Finding {
                check: "ellipticity".into(),
                status: FindingStatus::Pass,
                detail: format!("min a = {min_a_1d:.3e} > 0 over probes"),
            }
        } else {
            Finding {
                check: "ellipticity".into(),
                status: FindingStatus::Advisory,
                detail: format!(
                    "a is not strictly positive over probes (min {min_a_1d:.3e}); PDE solves need a > 0"
                ),
            }
        });
    }

    findings.push(if min_h >= 0.0 {
        Finding {
            check: "potential sign".into(),
            status: FindingStatus::Pass,
            detail: format!("min h = {min_h:.3e} >= 0 over probes"),
        }
    } else {
        Finding {
            check: "potential sign".into(),
            status: FindingStatus::Advisory,
            detail: format!(
                "h goes negative over probes (min {min_h:.3e}); weights may exceed 1"
            ),
        }
    });

    findings.push(match (&fk.c0, &c0_violation) {
        (Some(c0), None) => Finding {
            check: "stated bound c0".into(),
            status: FindingStatus::Pass,
            detail: format!("|f|, |h| <= c0 = {c0} at all probes"),
        },
        (Some(_), Some(v)) => Finding {
            check: "stated bound c0".into(),
            status: FindingStatus::Fail,
            detail: v.clone(),
        },
        (None, _) => Finding {
            check: "stated bound c0".into(),
            status: FindingStatus::Advisory,
            detail: format!(
                "no c0 stated; sampled maxima |b| = {:.3e}, |sigma| = {:.3e}, |f| = {:.3e}, |h| = {:.3e}",
                max_abs[0], max_abs[1], max_abs[2], max_abs[3]
            ),
        },
    });

    ValidationReport { findings }
}

// ---------------------------------------------------------------------------
// TOML configuration

#[derive(Deserialize)]
#[serde(untagged)]
enum ScalarOrVec {
    One(f64),
    Many(Vec<f64>),
}

impl ScalarOrVec {
    fn into_vec(self, dim: usize) -> Vec<f64> {
        match self {
            ScalarOrVec::One(v) => vec![v; dim.max(1)],
            ScalarOrVec::Many(v) => v,
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StringOrVec {
    One(String),
    Many(Vec<String>),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StringOrMat {
    One(String),
    Rows(Vec<Vec<String>>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainSection {
    lower: ScalarOrVec,
    upper: ScalarOrVec,
    #[serde(default = "default_escape_radius")]
    escape_radius: f64,
}

fn default_escape_radius() -> f64 {
    10.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSection {
    #[serde(default = "default_dim")]
    dim: usize,
    drift: StringOrVec,
    dispersion: StringOrMat,
    domain: DomainSection,
}

fn default_dim() -> usize {
    1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FkSection {
    #[serde(default)]
    f: Option<String>,
    #[serde(default)]
    h: Option<String>,
    #[serde(default)]
    c0: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TruncationSection {
    unit: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: ModelSection,
    #[serde(default)]
    feynman_kac: Option<FkSection>,
    #[serde(default)]
    truncation: Option<TruncationSection>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let clamped = offset.min(text.len());
    let line = text[..clamped].bytes().filter(|&b| b == b'\n').count() + 1;
    let col = text[..clamped]
        .rfind('\n')
        .map(|p| clamped - p)
        .unwrap_or(clamped + 1);
    (line, col)
}

/// Loads a model plus Feynman-Kac data from TOML text. Parse errors carry
/// line/column context; `source_name` labels the origin in messages.
pub fn load_config(text: &str, source_name: &str) -> Result<(DiffusionModel, FeynmanKacSpec)> {
    let cfg: ConfigFile = toml::from_str(text).map_err(|e| {
        let loc = e
            .span()
            .map(|s| {
                let (line, col) = line_col(text, s.start);
                format!(" at line {line}, column {col}")
            })
            .unwrap_or_default();
        Error::Config(format!("{source_name}{loc}: {}", e.message()))
    })?;

    let dim = cfg.model.dim;
    if dim == 0 {
        return Err(Error::Config(format!("{source_name}: dim must be >= 1")));
    }

    let lower = cfg.model.domain.lower.into_vec(dim);
    let upper = cfg.model.domain.upper.into_vec(dim);
    if lower.len() != dim || upper.len() != dim {
        return Err(Error::Config(format!(
            "{source_name}: domain bounds must have {dim} entries"
        )));
    }
    let domain = Domain::new_box(lower, upper, cfg.model.domain.escape_radius)
        .map_err(|e| Error::Config(format!("{source_name}: {e}")))?;

    let drift_srcs: Vec<String> = match cfg.model.drift {
        StringOrVec::One(s) => vec![s; dim],
        StringOrVec::Many(v) => v,
    };
    if drift_srcs.len() != dim {
        return Err(Error::Config(format!(
            "{source_name}: drift must have {dim} entries"
        )));
    }
    let mut drift = Vec::with_capacity(dim);
    for (i, s) in drift_srcs.iter().enumerate() {
        drift.push(
            CoefficientExpr::parse_spatial(s, dim)
                .map_err(|e| Error::Config(format!("{source_name}: drift[{i}] `{s}`: {e}")))?,
        );
    }

    let sigma_srcs: Vec<Vec<String>> = match cfg.model.dispersion {
        StringOrMat::One(s) => {
            if dim == 1 {
                vec![vec![s]]
            } else {
                return Err(Error::Config(format!(
                    "{source_name}: dispersion must be a {dim}x{dim} matrix of expressions"
                )));
            }
        }
        StringOrMat::Rows(rows) => rows,
    };
    if sigma_srcs.len() != dim || sigma_srcs.iter().any(|r| r.len() != dim) {
        return Err(Error::Config(format!(
            "{source_name}: dispersion must be a {dim}x{dim} matrix of expressions"
        )));
    }
    let mut dispersion = Vec::with_capacity(dim * dim);
    for (i, row) in sigma_srcs.iter().enumerate() {
        for (j, s) in row.iter().enumerate() {
            dispersion.push(CoefficientExpr::parse_spatial(s, dim).map_err(|e| {
                Error::Config(format!("{source_name}: dispersion[{i}][{j}] `{s}`: {e}"))
            })?);
        }
    }

    let truncation = match cfg.truncation {
        Some(t) => TruncationSequence::new(t.unit)
            .map_err(|e| Error::Config(format!("{source_name}: {e}")))?,
        None => TruncationSequence::default(),
    };

    let model = DiffusionModel::new(drift, dispersion, domain, truncation)
        .map_err(|e| Error::Config(format!("{source_name}: {e}")))?;

    let fk = match cfg.feynman_kac {
        Some(sect) => {
            let f_src = sect.f.unwrap_or_else(|| "1".into());
            let h_src = sect.h.unwrap_or_else(|| "0".into());
            let f = CoefficientExpr::parse_spatial(&f_src, dim)
                .map_err(|e| Error::Config(format!("{source_name}: f `{f_src}`: {e}")))?;
            let h = CoefficientExpr::parse_spatial(&h_src, dim)
                .map_err(|e| Error::Config(format!("{source_name}: h `{h_src}`: {e}")))?;
            FeynmanKacSpec::new(f, h, sect.c0)
                .map_err(|e| Error::Config(format!("{source_name}: {e}")))?
        }
        None => FeynmanKacSpec::survival(dim),
    };

    Ok((model, fk))
}

/// Loads a configuration from a file path.
pub fn load_config_file(path: &std::path::Path) -> Result<(DiffusionModel, FeynmanKacSpec)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    load_config(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bm_config() -> &'static str {
        r#"
[model]
dim = 1
drift = "0"
dispersion = "1"
domain = { lower = 0.0, upper = 1.0, escape_radius = 10.0 }

[feynman_kac]
f = "1"
h = "0"
c0 = 1.0
"#
    }

    #[test]
    fn loads_interval_model_from_toml() {
        let (model, fk) = load_config(bm_config(), "test").unwrap();
        assert_eq!(model.dim(), 1);
        assert!(model.domain().is_bounded());
        assert_eq!(model.diffusion_matrix(&[0.5]).unwrap(), vec![1.0]);
        assert_eq!(fk.f.eval(&[0.3]).unwrap(), 1.0);
        assert_eq!(fk.c0, Some(1.0));
    }

    #[test]
    fn infinite_sides_parse_from_toml() {
        let text = r#"
[model]
dim = 1
drift = "-x"
dispersion = "1"
domain = { lower = -inf, upper = inf, escape_radius = 100.0 }
"#;
        let (model, fk) = load_config(text, "test").unwrap();
        assert!(!model.domain().is_bounded());
        // defaults when [feynman_kac] is absent
        assert_eq!(fk.f.eval(&[2.0]).unwrap(), 1.0);
        assert_eq!(fk.h.eval(&[2.0]).unwrap(), 0.0);
    }

    #[test]
    fn config_errors_carry_line_context() {
        let text = "[model]\ndim = 1\ndrift = \"0\"\ndispersion = \"1\"\ndomain = { lower = 0.0, upper = }\n";
        match load_config(text, "test") {
            Err(Error::Config(msg)) => {
                assert!(msg.contains("line 5"), "got: {msg}");
            }
            other => panic!("expected config error, got {other:?}"),
        }
        // type errors are reported as config errors too
        let text = "[model]\ndim = 1\ndrift = \"0\"\ndispersion = \"1\"\ndomain = { lower = 0.0, upper = \"oops\", escape_radius = 1.0 }\n";
        assert!(matches!(load_config(text, "test"), Err(Error::Config(_))));
    }

    #[test]
    fn bad_expression_in_config_is_reported_with_context() {
        let text = r#"
[model]
dim = 1
drift = "1+"
dispersion = "1"
domain = { lower = 0.0, upper = 1.0 }
"#;
        match load_config(text, "test") {
            Err(Error::Config(msg)) => assert!(msg.contains("drift[0]"), "got: {msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn domain_requires_ordered_bounds() {
        assert!(Domain::interval(1.0, 0.0, 10.0).is_err());
        assert!(Domain::interval(0.0, 1.0, -1.0).is_err());
        assert!(Domain::interval(0.0, 1.0, 10.0).is_ok());
    }

    #[test]
    fn state_checks_distinguish_boundary_escape_nan() {
        let d = Domain::interval(0.0, f64::INFINITY, 50.0).unwrap();
        assert_eq!(d.check_state(&[1.0]), StateCheck::Inside);
        assert_eq!(d.check_state(&[0.0]), StateCheck::ExitedBoundary);
        assert_eq!(d.check_state(&[-0.5]), StateCheck::ExitedBoundary);
        assert_eq!(d.check_state(&[51.0]), StateCheck::Escaped);
        assert_eq!(d.check_state(&[f64::NAN]), StateCheck::NonFinite);
        assert_eq!(d.check_state(&[f64::INFINITY]), StateCheck::Escaped);
    }

    #[test]
    fn diffusion_matrix_of_triangular_dispersion() {
        // sigma = [[1,0],[1,1]] gives a = sigma sigma^T = [[1,1],[1,2]]
        let dom = Domain::new_box(vec![-1.0, -1.0], vec![1.0, 1.0], 10.0).unwrap();
        let parse = |s: &str| CoefficientExpr::parse_spatial(s, 2).unwrap();
        let model = DiffusionModel::new(
            vec![parse("0"), parse("0")],
            vec![parse("1"), parse("0"), parse("1"), parse("1")],
            dom,
            TruncationSequence::default(),
        )
        .unwrap();
        let a = model.diffusion_matrix(&[0.0, 0.0]).unwrap();
        assert_eq!(a, vec![1.0, 1.0, 1.0, 2.0]);
        assert_eq!(a[1], a[2]);
    }

    #[test]
    fn truncations_are_nested_and_bounded() {
        let cases = [
            Domain::interval(f64::NEG_INFINITY, f64::INFINITY, 100.0).unwrap(),
            Domain::interval(0.0, 1.0, 10.0).unwrap(),
            Domain::interval(0.0, f64::INFINITY, 80.0).unwrap(),
            Domain::interval(50.0, f64::INFINITY, 500.0).unwrap(),
            Domain::interval(f64::NEG_INFINITY, -50.0, 500.0).unwrap(),
        ];
        let tr = TruncationSequence::default();
        for dom in &cases {
            for m in 1..20u32 {
                let a = tr.truncate(dom, m).unwrap();
                let b = tr.truncate(dom, m + 1).unwrap();
                assert!(a.is_bounded());
                for i in 0..dom.dim() {
                    // closure of O_m strictly inside O_{m+1} and inside O
                    assert!(a.lower()[i] > b.lower()[i]);
                    assert!(a.upper()[i] < b.upper()[i]);
                    assert!(a.lower()[i] > dom.lower()[i] || dom.lower()[i].is_infinite());
                    assert!(a.upper()[i] < dom.upper()[i] || dom.upper()[i].is_infinite());
                    assert!(a.lower()[i] >= dom.lower()[i]);
                    assert!(a.upper()[i] <= dom.upper()[i] || dom.upper()[i].is_infinite());
                    assert!(a.lower()[i] < a.upper()[i]);
                }
            }
        }
    }

    #[test]
    fn truncation_union_recovers_full_domain() {
        let dom = Domain::interval(0.0, 1.0, 10.0).unwrap();
        let tr = TruncationSequence::default();
        let x = [1e-3, 0.5, 1.0 - 1e-3];
        let mut covered = [false; 3];
        for m in 1..1000u32 {
            let d = tr.truncate(&dom, m).unwrap();
            for (i, &xi) in x.iter().enumerate() {
                if d.contains(&[xi]) {
                    covered[i] = true;
                }
            }
        }
        assert!(covered.iter().all(|&c| c));
    }

    #[test]
    fn validation_flags_negative_h_as_advisory() {
        let (model, _) = load_config(bm_config(), "test").unwrap();
        let fk = FeynmanKacSpec::new(
            CoefficientExpr::parse_spatial("1", 1).unwrap(),
            CoefficientExpr::parse_spatial("-1", 1).unwrap(),
            None,
        )
        .unwrap();
        let probes = default_probe_points(&model, 11);
        let report = validate_model(&model, &fk, &probes);
        let h_finding = report
            .findings
            .iter()
            .find(|f| f.check == "potential sign")
            .unwrap();
        assert_eq!(h_finding.status, FindingStatus::Advisory);
        assert!(!report.has_failures());
    }

    #[test]
    fn validation_flags_c0_violation_as_failure() {
        let (model, _) = load_config(bm_config(), "test").unwrap();
        let fk = FeynmanKacSpec::new(
            CoefficientExpr::parse_spatial("3", 1).unwrap(),
            CoefficientExpr::parse_spatial("0", 1).unwrap(),
            Some(1.0),
        )
        .unwrap();
        let probes = default_probe_points(&model, 5);
        let report = validate_model(&model, &fk, &probes);
        assert!(report.has_failures());
    }

    #[test]
    fn validation_passes_clean_model() {
        let (model, fk) = load_config(bm_config(), "test").unwrap();
        let probes = default_probe_points(&model, 11);
        let report = validate_model(&model, &fk, &probes);
        assert!(!report.has_failures());
        assert!(report
            .findings
            .iter()
            .all(|f| f.status == FindingStatus::Pass || f.status == FindingStatus::Advisory));
    }

    proptest! {
        #[test]
        fn truncation_nesting_holds_for_random_intervals(
            l in -50.0f64..50.0,
            w in 0.1f64..100.0,
            unit in 0.5f64..20.0,
            m in 1u32..30
        ) {
            let dom = Domain::interval(l, l + w, 10.0).unwrap();
            let tr = TruncationSequence::new(unit).unwrap();
            let a = tr.truncate(&dom, m).unwrap();
            let b = tr.truncate(&dom, m + 1).unwrap();
            prop_assert!(a.lower()[0] > b.lower()[0]);
            prop_assert!(a.upper()[0] < b.upper()[0]);
            prop_assert!(a.lower()[0] > dom.lower()[0]);
            prop_assert!(a.upper()[0] < dom.upper()[0]);
        }
    }
}
