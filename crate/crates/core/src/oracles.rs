//! Reference values used as ground truth in tests: a spectral series for
//! Brownian survival on the unit interval, a deterministic blow-up time
//! integrator for sigma = 0 models, and a catalog of named example models.

use crate::error::{Error, Result};
use crate::expr::CoefficientExpr;
use crate::model::{load_config, DiffusionModel, FeynmanKacSpec};
use crate::numerics::CompensatedSum;
use std::f64::consts::PI;

/// Series evaluation plus a bound on the magnitude of the omitted tail.
#[derive(Debug, Clone, Copy)]
pub struct SeriesValue {
    pub value: f64,
    pub truncation_bound: f64,
}

/// Survival probability of standard Brownian motion started at x in (0,1):
/// sum over odd k <= 2*n_terms of (4/(k pi)) sin(k pi x) exp(-k^2 pi^2 t / 2).
/// Guarantees are documented for t >= 0.01 (the Gibbs regime below that is
/// excluded); the truncation bound is the first omitted term divided by
/// (1 - ratio of consecutive term bounds).
pub fn bm_interval_survival(t: f64, x: f64, n_terms: usize) -> Result<SeriesValue> {
    if !(t > 0.0) {
        return Err(Error::Invalid(format!("t must be positive (got {t})")));
    }
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Invalid(format!("x must lie in (0,1) (got {x})")));
    }
    if n_terms < 1 {
        return Err(Error::Invalid("n_terms must be >= 1".into()));
    }
    let mut acc = CompensatedSum::new();
    for j in 0..n_terms {
        let k = (2 * j + 1) as f64;
        acc.add((4.0 / (k * PI)) * (k * PI * x).sin() * (-k * k * PI * PI * t / 2.0).exp());
    }
    let kf = (2 * n_terms + 1) as f64;
    let head = (4.0 / (kf * PI)) * (-kf * kf * PI * PI * t / 2.0).exp();
    let ratio = (-2.0 * (kf + 1.0) * PI * PI * t).exp();
    let truncation_bound = head / (1.0 - ratio);
    Ok(SeriesValue {
        value: acc.total(),
        truncation_bound,
    })
}

/// Blow-up time estimate for x' = b(x), with the per-radius crossing times
/// retained for diagnostics.
#[derive(Debug, Clone)]
pub struct ExplosionTime {
    pub time: f64,
    pub per_radius: [f64; 3],
    pub error_estimate: f64,
}

const ODE_STEP_CAP: u64 = 50_000_000;

/// Integrates x' = b(x) by the Euler rule, refining the step by halving
/// until the crossing time of |x| = rho stabilizes, for rho in
/// {R, 2R, 4R}, then extrapolates rho -> infinity by Aitken's delta-squared
/// (exact for the 1/rho tail of power-law blow-up).
pub fn ode_explosion_time(
    b: &CoefficientExpr,
    x0: f64,
    blowup_threshold: f64,
    dt: f64,
) -> Result<ExplosionTime> {
    if b.nvars() != 1 {
        return Err(Error::Invalid("b must be a one-variable expression".into()));
    }
    if !(blowup_threshold.is_finite() && blowup_threshold > x0.abs().max(1.0)) {
        return Err(Error::Invalid(format!(
            "blowup_threshold must exceed max(1, |x0|) (got {blowup_threshold})"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Invalid(format!("dt must be positive (got {dt})")));
    }

    let mut per_radius = [0.0; 3];
    let mut refinement_gap = 0.0f64;
    for (i, mult) in [1.0, 2.0, 4.0].into_iter().enumerate() {
        let rho = blowup_threshold * mult;
        let mut h = dt;
        let mut t_coarse = crossing_time(b, x0, rho, h)?;
        let mut extrapolated = t_coarse;
        let mut gap = f64::INFINITY;
        for _ in 0..12 {
            h *= 0.5;
            let t_fine = crossing_time(b, x0, rho, h)?;
            gap = (t_fine - t_coarse).abs();
            extrapolated = 2.0 * t_fine - t_coarse;
            t_coarse = t_fine;
            if gap <= 1e-7 * t_fine.max(1e-3) {
                break;
            }
        }
        per_radius[i] = extrapolated;
        refinement_gap = refinement_gap.max(gap);
    }

    let d1 = per_radius[1] - per_radius[0];
    let d2 = per_radius[2] - per_radius[1];
    let denom = d2 - d1;
    let scale = per_radius[2].abs().max(1e-12);
    let time = if denom.abs() > 1e-14 * scale {
        let corrected = per_radius[2] - d2 * d2 / denom;
        if corrected.is_finite() {
            corrected
        } else {
            per_radius[2]
        }
    } else {
        per_radius[2]
    };
    let error_estimate = refinement_gap + d2.abs();
    Ok(ExplosionTime {
        time,
        per_radius,
        error_estimate,
    })
}

fn crossing_time(b: &CoefficientExpr, x0: f64, rho: f64, h: f64) -> Result<f64> {
    let mut x = x0;
    let mut k: u64 = 0;
    loop {
        let bx = b.eval(&[x])?;
        let x_new = x + h * bx;
        if !x_new.is_finite() {
            return Err(Error::NonFinite("ode state".into()));
        }
        k += 1;
        if x_new > rho {
            let frac = ((rho - x) / (x_new - x)).clamp(0.0, 1.0);
            return Ok(((k - 1) as f64 + frac) * h);
        }
        if x_new < -rho {
            let frac = ((-rho - x) / (x_new - x)).clamp(0.0, 1.0);
            return Ok(((k - 1) as f64 + frac) * h);
        }
        if k >= ODE_STEP_CAP {
            return Err(Error::NoBlowup {
                reached: x_new,
                t: k as f64 * h,
            });
        }
        x = x_new;
    }
}

/// A named example model with its expected qualitative behavior.
#[derive(Debug, Clone, Copy)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub summary: &'static str,
    /// Whether paths leave the domain (or explode) with positive probability.
    pub explosive: bool,
    /// Full configuration in the TOML schema accepted by --config.
    pub config: &'static str,
}

macro_rules! entry {
    ($name:literal, $summary:literal, $explosive:literal, $config:literal) => {
        CatalogEntry {
            name: $name,
            summary: $summary,
            explosive: $explosive,
            config: $config,
        }
    };
}

const CATALOG: &[CatalogEntry] = &[
    entry!(
        "bm_unit_interval",
        "Brownian motion absorbed at the ends of (0,1)",
        true,
        r#"[model]
dim = 1
drift = "0"
dispersion = "1"
domain = { lower = 0.0, upper = 1.0, escape_radius = 10.0 }

[feynman_kac]
f = "1"
h = "0"
c0 = 1.0

[truncation]
unit = 10.0
"#
    ),
    entry!(
        "bm_line",
        "Brownian motion on the whole line (conservative)",
        false,
        r#"[model]
dim = 1
drift = "0"
dispersion = "1"
domain = { lower = -inf, upper = inf, escape_radius = 100.0 }

[feynman_kac]
f = "1"
h = "0"
c0 = 1.0

[truncation]
unit = 10.0
"#
    ),
    entry!(
        "ou_line",
        "Ornstein-Uhlenbeck, drift -x on the line (conservative)",
        false,
        r#"[model]
dim = 1
drift = "-x"
dispersion = "1"
domain = { lower = -inf, upper = inf, escape_radius = 100.0 }

[feynman_kac]
f = "1"
h = "0"
c0 = 1.0

[truncation]
unit = 10.0
"#
    ),
    entry!(
        "cubic_drift_line",
        "Cubic drift x^3 with unit noise on the line (explosive)",
        true,
        r#"[model]
dim = 1
drift = "x^3"
dispersion = "1"
domain = { lower = -inf, upper = inf, escape_radius = 50.0 }

[feynman_kac]
f = "1"
h = "0"
c0 = 1.0

[truncation]
unit = 10.0
"#
    ),
    entry!(
        "quadratic_blowup_ode",
        "Deterministic x' = 1 + x^2 (blows up at pi/2 from 0)",
        true,
        r#"[model]
dim = 1
drift = "1+x^2"
dispersion = "0"
domain = { lower = -inf, upper = inf, escape_radius = 1000000.0 }

[feynman_kac]
f = "1"
h = "0"
c0 = 1.0

[truncation]
unit = 10.0
"#
    ),
    entry!(
        "bm_unit_interval_killed",
        "Interval Brownian motion with constant potential h = 1",
        true,
        r#"[model]
dim = 1
drift = "0"
dispersion = "1"
domain = { lower = 0.0, upper = 1.0, escape_radius = 10.0 }

[feynman_kac]
f = "1"
h = "1"
c0 = 1.0

[truncation]
unit = 10.0
"#
    ),
    entry!(
        "bm_line_killed",
        "Line Brownian motion with constant potential h = 1",
        false,
        r#"[model]
dim = 1
drift = "0"
dispersion = "1"
domain = { lower = -inf, upper = inf, escape_radius = 100.0 }

[feynman_kac]
f = "1"
h = "1"
c0 = 1.0

[truncation]
unit = 10.0
"#
    ),
    entry!(
        "ou_line_killed",
        "Ornstein-Uhlenbeck with constant potential h = 1",
        false,
        r#"[model]
dim = 1
drift = "-x"
dispersion = "1"
domain = { lower = -inf, upper = inf, escape_radius = 100.0 }

[feynman_kac]
f = "1"
h = "1"
c0 = 1.0

[truncation]
unit = 10.0
"#
    ),
    entry!(
        "cubic_drift_line_killed",
        "Cubic drift with constant potential h = 1",
        true,
        r#"[model]
dim = 1
drift = "x^3"
dispersion = "1"
domain = { lower = -inf, upper = inf, escape_radius = 50.0 }

[feynman_kac]
f = "1"
h = "1"
c0 = 1.0

[truncation]
unit = 10.0
"#
    ),
    entry!(
        "quadratic_blowup_ode_killed",
        "Deterministic blow-up with constant potential h = 1",
        true,
        r#"[model]
dim = 1
drift = "1+x^2"
dispersion = "0"
domain = { lower = -inf, upper = inf, escape_radius = 1000000.0 }

[feynman_kac]
f = "1"
h = "1"
c0 = 1.0

[truncation]
unit = 10.0
"#
    ),
];

pub fn catalog() -> &'static [CatalogEntry] {
    CATALOG
}

pub fn catalog_entry(name: &str) -> Result<&'static CatalogEntry> {
    CATALOG
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| {
            let names: Vec<&str> = CATALOG.iter().map(|e| e.name).collect();
            Error::Invalid(format!(
                "unknown catalog model `{name}`; available: {}",
                names.join(", ")
            ))
        })
}

/// Builds the model and Feynman-Kac data for a named catalog entry.
pub fn catalog_model(name: &str) -> Result<(DiffusionModel, FeynmanKacSpec)> {
    let entry = catalog_entry(name)?;
    load_config(entry.config, &format!("catalog:{name}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_probe_points, validate_model};

    #[test]
    fn series_is_symmetric_about_the_midpoint() {
        for &t in &[0.01, 0.05, 0.2, 1.0] {
            for &x in &[0.1, 0.25, 0.4] {
                let a = bm_interval_survival(t, x, 200).unwrap().value;
                let b = bm_interval_survival(t, 1.0 - x, 200).unwrap().value;
                assert!((a - b).abs() < 1e-14, "t={t} x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn series_matches_leading_term_at_large_t() {
        let v = bm_interval_survival(1.0, 0.5, 200).unwrap().value;
        let leading = (4.0 / PI) * (-PI * PI / 2.0).exp();
        assert!(
            ((v - leading) / leading).abs() < 1e-6,
            "value {v} vs leading term {leading}"
        );
    }

    #[test]
    fn series_decreases_in_t() {
        let mut prev = f64::INFINITY;
        let mut t = 0.01;
        while t < 2.0 {
            let v = bm_interval_survival(t, 0.3, 200).unwrap().value;
            assert!(v < prev, "survival must decrease (t={t})");
            prev = v;
            t *= 1.5;
        }
    }

    #[test]
    fn series_stays_in_unit_range_for_moderate_t() {
        for &n_terms in &[25usize, 50, 400] {
            let mut t = 0.01;
            while t < 5.0 {
                for &x in &[0.05, 0.3, 0.5, 0.95] {
                    let v = bm_interval_survival(t, x, n_terms).unwrap().value;
                    assert!((0.0..=1.0).contains(&v), "t={t} x={x} n={n_terms}: {v}");
                }
                t *= 1.7;
            }
        }
    }

    #[test]
    fn doubling_terms_moves_less_than_reported_bound() {
        for &t in &[0.01, 0.05, 0.3] {
            for &n in &[25usize, 50, 100] {
                let a = bm_interval_survival(t, 0.37, n).unwrap();
                let b = bm_interval_survival(t, 0.37, 2 * n).unwrap();
                assert!(
                    (a.value - b.value).abs() <= a.truncation_bound,
                    "t={t} n={n}: delta {} vs bound {}",
                    (a.value - b.value).abs(),
                    a.truncation_bound
                );
            }
        }
    }

    #[test]
    fn series_rejects_nonpositive_t() {
        assert!(bm_interval_survival(0.0, 0.5, 10).is_err());
        assert!(bm_interval_survival(-1.0, 0.5, 10).is_err());
    }

    #[test]
    fn quadratic_drift_blows_up_at_pi_over_two() {
        let b = CoefficientExpr::parse_spatial("1+x^2", 1).unwrap();
        let est = ode_explosion_time(&b, 0.0, 1e4, 1e-3).unwrap();
        assert!(
            (est.time - PI / 2.0).abs() < 1e-3,
            "got {} (expected pi/2), per-radius {:?}",
            est.time,
            est.per_radius
        );
    }

    #[test]
    fn pure_square_drift_from_one_blows_up_at_one() {
        // x(t) = 1/(1-t)
        let b = CoefficientExpr::parse_spatial("x^2", 1).unwrap();
        let est = ode_explosion_time(&b, 1.0, 1e4, 1e-3).unwrap();
        assert!(
            (est.time - 1.0).abs() < 1e-3,
            "got {} (expected 1), per-radius {:?}",
            est.time,
            est.per_radius
        );
    }

    #[test]
    fn linear_drift_reports_cap() {
        // reaching 1e6 at unit speed needs 1e8 steps of 1e-2, past the cap
        let b = CoefficientExpr::parse_spatial("1", 1).unwrap();
        match ode_explosion_time(&b, 0.0, 1e6, 1e-2) {
            Err(Error::NoBlowup { reached, .. }) => assert!(reached < 1e6),
            other => panic!("expected cap error, got {other:?}"),
        }
    }

    #[test]
    fn catalog_models_validate_cleanly() {
        for entry in catalog() {
            let (model, fk) = catalog_model(entry.name).unwrap();
            let probes = default_probe_points(&model, 9);
            let report = validate_model(&model, &fk, &probes);
            assert!(
                !report.has_failures(),
                "{}: {:?}",
                entry.name,
                report.findings
            );
        }
    }

    #[test]
    fn catalog_lookup_rejects_unknown_names() {
        assert!(matches!(catalog_model("nope"), Err(Error::Invalid(_))));
        assert!(catalog_model("bm_unit_interval").is_ok());
    }
}
