//! One-dimensional explosion test via the scale-function integral v, with
//! escalating cutoffs toward each endpoint and a divergence threshold rule.

use crate::error::{Error, Result};
use crate::model::DiffusionModel;

/// Quadrature escalation settings for the endpoint integrals.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct QuadConfig {
    /// v above this value with a rising tail is declared infinite.
    pub divergence_threshold: f64,
    /// Number of cutoff doublings toward each endpoint.
    pub max_doublings: usize,
    /// Relative tolerance of the adaptive sub-steps.
    pub rtol: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        QuadConfig {
            divergence_threshold: 1e8,
            max_doublings: 48,
            rtol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Classification {
    Conservative,
    ExplosiveLeft,
    ExplosiveRight,
    ExplosiveBoth,
}

/// Diagnostics for one endpoint integral.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EndpointReport {
    pub endpoint: f64,
    /// Limit estimate of v, or +inf when declared divergent.
    pub v: f64,
    pub diverged: bool,
    pub cutoffs_used: usize,
    /// Last cutoff location reached by the escalation.
    pub final_cutoff: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FellerReport {
    pub c: f64,
    pub v_left: f64,
    pub v_right: f64,
    pub classification: Classification,
    pub left: EndpointReport,
    pub right: EndpointReport,
}

/// Parameterization of the ray from the reference point toward one endpoint.
enum Chart {
    /// y = c + d e^xi toward an infinite endpoint (d = +-1).
    Infinite { c: f64, d: f64 },
    /// y = e - span e^-xi toward the finite endpoint e (span = e - c).
    Finite { e: f64, span: f64 },
}

impl Chart {
    fn y(&self, xi: f64) -> f64 {
        match self {
            Chart::Infinite { c, d } => c + d * xi.exp(),
            Chart::Finite { e, span } => e - span * (-xi).exp(),
        }
    }

    /// Signed measure dy/dxi.
    fn m(&self, xi: f64) -> f64 {
        match self {
            Chart::Infinite { d, .. } => d * xi.exp(),
            Chart::Finite { span, .. } => span * (-xi).exp(),
        }
    }
}

/// Integrand data at one parameter value.
struct Probe {
    /// Source term 2 |dy/dxi| / sigma^2 of the density ODE.
    p: f64,
    /// Decay rate dB/dxi = (2 b / sigma^2) dy/dxi.
    q: f64,
    /// |dy/dxi|.
    am: f64,
}

/// Running state of the nested integral: u = kappa exp(-B) is the v-density
/// per unit dy, v the accumulated integral.
#[derive(Clone, Copy)]
struct State {
    u: f64,
    v: f64,
}

const V_CAP: f64 = 1e30;
const U_CAP: f64 = 1e30;
const EXP_CLAMP: f64 = 690.0;

struct Integrator<'a> {
    model: &'a DiffusionModel,
    chart: Chart,
    rtol: f64,
    evals: usize,
}

impl<'a> Integrator<'a> {
    fn probe(&mut self, xi: f64) -> Result<Probe> {
        self.evals += 1;
        let y = self.chart.y(xi);
        if !y.is_finite() {
            return Err(Error::Quadrature(format!(
                "cutoff parameterization left the representable range at xi = {xi}"
            )));
        }
        let point = [y];
        let b = self.model.drift()[0].eval(&point)?;
        let sigma = self.model.dispersion()[0].eval(&point)?;
        let s2 = sigma * sigma;
        if s2 < 1e-300 {
            return Err(Error::Invalid(format!(
                "sigma vanishes at x = {y}; the explosion test needs sigma != 0"
            )));
        }
        if !b.is_finite() || !s2.is_finite() {
            return Err(Error::Quadrature(format!(
                "coefficients are not finite at x = {y}"
            )));
        }
        let m = self.chart.m(xi);
        Ok(Probe {
            p: 2.0 * m.abs() / s2,
            q: 2.0 * b * m / s2,
            am: m.abs(),
        })
    }

    /// Advance the density ODE u' = p - q u over [xa, xb] with coefficients
    /// frozen at the midpoint, where it has a closed-form solution.
    fn step(&mut self, s: State, xa: f64, xb: f64) -> Result<State> {
        let dx = xb - xa;
        let pr = self.probe(0.5 * (xa + xb))?;
        let qd = (pr.q * dx).max(-EXP_CLAMP);
        let (u_next, u_area) = if qd.abs() < 1e-8 {
            let slope = pr.p - pr.q * s.u;
            (s.u + slope * dx, s.u * dx + 0.5 * slope * dx * dx)
        } else {
            let q = qd / dx;
            let e = (-qd).exp();
            let a = s.u - pr.p / q;
            (
                a * e + pr.p / q,
                a * (1.0 - e) / q + pr.p / q * dx,
            )
        };
        Ok(State {
            u: u_next.clamp(0.0, U_CAP),
            v: (s.v + pr.am * u_area.max(0.0)).min(V_CAP),
        })
    }

    fn advance(&mut self, s: &mut State, xa: f64, xb: f64, depth: usize) -> Result<()> {
        let coarse = self.step(*s, xa, xb)?;
        let xm = 0.5 * (xa + xb);
        let half = self.step(*s, xa, xm)?;
        let fine = self.step(half, xm, xb)?;
        let ok = |a: f64, b: f64| (a - b).abs() <= self.rtol * (1.0 + a.abs().max(b.abs()));
        if depth >= 24
            || s.v >= V_CAP
            || (ok(coarse.u, fine.u) && ok(coarse.v, fine.v))
        {
            *s = fine;
            return Ok(());
        }
        self.advance(s, xa, xm, depth + 1)?;
        self.advance(s, xm, xb, depth + 1)
    }
}

fn endpoint_integral(
    model: &DiffusionModel,
    c: f64,
    endpoint: f64,
    quad: &QuadConfig,
) -> Result<EndpointReport> {
    let sigma_c = model.dispersion()[0].eval(&[c])?;
    let s2_c = sigma_c * sigma_c;
    if s2_c < 1e-300 {
        return Err(Error::Invalid(format!(
            "sigma vanishes at the reference point x = {c}"
        )));
    }
    let (chart, xi_start, seed_offset) = if endpoint.is_infinite() {
        let d = endpoint.signum();
        let eps = 1e-6f64;
        (Chart::Infinite { c, d }, eps.ln(), d * eps)
    } else {
        let span = endpoint - c;
        let eps = 1e-6 * span.abs().min(1.0);
        let xi = -(1.0 - eps / span.abs()).ln();
        (Chart::Finite { e: endpoint, span }, xi, span.signum() * eps)
    };
    let mut state = State {
        u: 2.0 * seed_offset.abs() / s2_c,
        v: seed_offset * seed_offset / s2_c,
    };
    let mut integ = Integrator {
        model,
        chart,
        rtol: quad.rtol,
        evals: 0,
    };

    let ln2 = std::f64::consts::LN_2;
    let mut history: Vec<f64> = Vec::with_capacity(quad.max_doublings);
    let mut xi_prev = xi_start;
    let mut diverged = false;
    let mut cutoffs_used = 0;
    for j in 0..quad.max_doublings {
        let xi_next = (j + 1) as f64 * ln2;
        if xi_next <= xi_prev {
            continue;
        }
        integ.advance(&mut state, xi_prev, xi_next, 0)?;
        xi_prev = xi_next;
        history.push(state.v);
        cutoffs_used = j + 1;
        let n = history.len();
        if state.v >= V_CAP * 0.99 {
            diverged = true;
            break;
        }
        if state.v > quad.divergence_threshold
            && n >= 3
            && history[n - 1] > history[n - 2]
            && history[n - 2] > history[n - 3]
        {
            diverged = true;
            break;
        }
    }
    let final_cutoff = integ.chart.y(xi_prev);
    Ok(EndpointReport {
        endpoint,
        v: if diverged { f64::INFINITY } else { state.v },
        diverged,
        cutoffs_used,
        final_cutoff,
        evaluations: integ.evals,
    })
}

fn default_reference(model: &DiffusionModel) -> f64 {
    let l = model.domain().lower()[0];
    let r = model.domain().upper()[0];
    match (l.is_finite(), r.is_finite()) {
        (true, true) => 0.5 * (l + r),
        (true, false) => l + 1.0,
        (false, true) => r - 1.0,
        (false, false) => 0.0,
    }
}

/// Classify a one-dimensional model by whether the endpoint integrals v are
/// finite (endpoint attainable, explosion in finite time with positive
/// probability) or divergent (inaccessible).
pub fn feller_classify(
    model: &DiffusionModel,
    c: Option<f64>,
    quad: &QuadConfig,
) -> Result<FellerReport> {
    if model.dim() != 1 {
        return Err(Error::Invalid(format!(
            "the explosion test is one-dimensional (model has dimension {})",
            model.dim()
        )));
    }
    if !(quad.divergence_threshold > 0.0 && quad.rtol > 0.0 && quad.max_doublings >= 3) {
        return Err(Error::Invalid(
            "quadrature config needs a positive threshold, positive rtol, and at least 3 doublings".into(),
        ));
    }
    let c = c.unwrap_or_else(|| default_reference(model));
    if !model.domain().contains(&[c]) {
        return Err(Error::Invalid(format!(
            "reference point {c} is not inside the domain"
        )));
    }
    let l = model.domain().lower()[0];
    let r = model.domain().upper()[0];
    let (left, right) = rayon::join(
        || endpoint_integral(model, c, l, quad),
        || endpoint_integral(model, c, r, quad),
    );
    let left = left?;
    let right = right?;
    let classification = match (left.diverged, right.diverged) {
        (true, true) => Classification::Conservative,
        (false, true) => Classification::ExplosiveLeft,
        (true, false) => Classification::ExplosiveRight,
        (false, false) => Classification::ExplosiveBoth,
    };
    Ok(FellerReport {
        c,
        v_left: left.v,
        v_right: right.v,
        classification,
        left,
        right,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::CoefficientExpr;
    use crate::mc::estimate_u;
    use crate::model::{Domain, TruncationSequence};
    use crate::oracles::catalog_model;
    use crate::sim::SimConfig;
    use approx::assert_relative_eq;

    fn line_model(drift: &str) -> DiffusionModel {
        DiffusionModel::new(
            vec![CoefficientExpr::parse_spatial(drift, 1).unwrap()],
            vec![CoefficientExpr::parse_spatial("1", 1).unwrap()],
            Domain::interval(f64::NEG_INFINITY, f64::INFINITY, 100.0).unwrap(),
            TruncationSequence::default(),
        )
        .unwrap()
    }

    #[test]
    fn brownian_motion_is_conservative() {
        let report =
            feller_classify(&line_model("0"), None, &QuadConfig::default()).unwrap();
        assert_eq!(report.classification, Classification::Conservative);
        assert!(report.v_left.is_infinite() && report.v_right.is_infinite());
    }

    #[test]
    fn ornstein_uhlenbeck_is_conservative() {
        let (model, _) = catalog_model("ou_line").unwrap();
        let report = feller_classify(&model, None, &QuadConfig::default()).unwrap();
        assert_eq!(report.classification, Classification::Conservative);
    }

    #[test]
    fn cubic_drift_explodes_on_both_sides() {
        let (model, _) = catalog_model("cubic_drift_line").unwrap();
        let report = feller_classify(&model, None, &QuadConfig::default()).unwrap();
        assert_eq!(report.classification, Classification::ExplosiveBoth);
        assert!(report.v_left.is_finite() && report.v_right.is_finite());
    }

    #[test]
    fn bounded_interval_boundaries_are_attainable() {
        let (model, _) = catalog_model("bm_unit_interval").unwrap();
        let report = feller_classify(&model, None, &QuadConfig::default()).unwrap();
        assert_eq!(report.classification, Classification::ExplosiveBoth);
        assert_relative_eq!(report.v_left, 0.25, max_relative = 1e-4);
        assert_relative_eq!(report.v_right, 0.25, max_relative = 1e-4);
    }

    #[test]
    fn half_line_brownian_motion_reaches_only_the_finite_end() {
        let model = DiffusionModel::new(
            vec![CoefficientExpr::parse_spatial("0", 1).unwrap()],
            vec![CoefficientExpr::parse_spatial("1", 1).unwrap()],
            Domain::interval(0.0, f64::INFINITY, 100.0).unwrap(),
            TruncationSequence::default(),
        )
        .unwrap();
        let report = feller_classify(&model, None, &QuadConfig::default()).unwrap();
        assert_eq!(report.classification, Classification::ExplosiveLeft);
        assert!(report.v_left.is_finite());
        assert!(report.v_right.is_infinite());
    }

    #[test]
    fn shifting_coordinates_preserves_the_classification() {
        for k in [-5.0f64, -1.5, 2.0, 4.0] {
            let shifted = line_model(&format!("(x - {k})^3"));
            let report = feller_classify(&shifted, Some(k), &QuadConfig::default()).unwrap();
            assert_eq!(
                report.classification,
                Classification::ExplosiveBoth,
                "shift k = {k}"
            );
        }
        for k in [-3.0f64, 1.0, 6.0] {
            let shifted = line_model(&format!("-(x - {k})"));
            let report = feller_classify(&shifted, Some(k), &QuadConfig::default()).unwrap();
            assert_eq!(
                report.classification,
                Classification::Conservative,
                "shift k = {k}"
            );
        }
    }

    #[test]
    fn explosive_classification_agrees_with_sampling() {
        let (model, _) = catalog_model("cubic_drift_line").unwrap();
        let report = feller_classify(&model, None, &QuadConfig::default()).unwrap();
        assert_eq!(report.classification, Classification::ExplosiveBoth);
        let cfg = SimConfig::new(1e-3, 1.0, 6060);
        let est = estimate_u(&model, &[1.0], &[1.0], 2000, &cfg).unwrap();
        assert!(
            est[0].value < 1.0 - 5.0 * est[0].std_error,
            "sampled survival {} with std error {} does not show explosion",
            est[0].value,
            est[0].std_error
        );
    }

    #[test]
    fn degenerate_dispersion_is_rejected() {
        let model = DiffusionModel::new(
            vec![CoefficientExpr::parse_spatial("1+x^2", 1).unwrap()],
            vec![CoefficientExpr::parse_spatial("0", 1).unwrap()],
            Domain::interval(f64::NEG_INFINITY, f64::INFINITY, 1e6).unwrap(),
            TruncationSequence::default(),
        )
        .unwrap();
        assert!(feller_classify(&model, None, &QuadConfig::default()).is_err());
    }

    #[test]
    fn reference_point_must_lie_inside() {
        let (model, _) = catalog_model("bm_unit_interval").unwrap();
        assert!(feller_classify(&model, Some(1.5), &QuadConfig::default()).is_err());
        assert!(feller_classify(&model, Some(0.25), &QuadConfig::default()).is_ok());
    }

    #[test]
    fn bounded_interval_estimate_matches_closed_form_survival_shape() {
        let (model, _) = catalog_model("bm_unit_interval").unwrap();
        let quad = QuadConfig {
            rtol: 1e-10,
            ..QuadConfig::default()
        };
        let report = feller_classify(&model, Some(0.25), &quad).unwrap();
        assert_relative_eq!(report.v_left, 0.0625, max_relative = 1e-6);
        assert_relative_eq!(report.v_right, 0.5625, max_relative = 1e-6);
    }
}
