//! Stieltjes transform of the multiplicative free convolution `π ⊠ MP_r`.
//!
//! `m(z)` is the unique solution in the upper half plane of
//!
//! ```text
//! 1/m = -z + r ∫ t / (1 + m t) dπ(t)
//! ```
//!
//! and is the Stieltjes transform of the limiting spectral law of the
//! `N × N` matrix `XᵀΣX`, which carries an atom `(1 - r)⁺` at the origin.
//! Edges of the absolutely continuous part come from the roots of
//! `h(x) = ∫ (x t / (1 - x t))² dπ(t) = 1/r`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::SpectralMeasure;

/// Gauss–Legendre order of the fixed rule a density base is discretized
/// with inside the solver.
pub const BASE_RULE_ORDER: usize = 512;

/// Minimal distance between a real evaluation point and `[L_-, L_+]`.
pub const REAL_AXIS_GUARD: f64 = 1e-6;

const CONTINUATION_THRESHOLD: f64 = 0.1;
const CONTINUATION_FLOOR: f64 = 1e-9;
const WARM_START_MAX_ITER: usize = 60;
const MIN_DAMPING: f64 = 1.0 / 64.0;
const EDGE_BRACKET_STEPS: usize = 60;
const EDGE_XTOL: f64 = 1e-12;

const RICHARDSON_ETAS: [f64; 3] = [1e-3, 5e-4, 2.5e-4];
const RICHARDSON_WARN: f64 = 1e-4;

type C64 = Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverParams {
    pub residual_tol: f64,
    pub max_iter: usize,
    /// Initial relaxation weight of the Picard fallback step.
    pub damping: f64,
    /// Imaginary offset at which continuation toward the real axis starts.
    pub continuation_start_eta: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            residual_tol: 1e-12,
            max_iter: 10_000,
            damping: 0.5,
            continuation_start_eta: 1.0,
        }
    }
}

impl SolverParams {
    fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0) || self.max_iter < 1 {
            return Err(Error::Invariant(
                "solver needs residual_tol > 0 and max_iter >= 1".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Invariant(format!(
                "damping {} outside (0, 1]",
                self.damping
            )));
        }
        if !(self.continuation_start_eta > 0.0) {
            return Err(Error::Invariant("continuation_start_eta must be positive".into()));
        }
        Ok(())
    }
}

/// Edges of the absolutely continuous part of `π ⊠ MP_r`, with the roots of
/// `h(x) = 1/r` they come from (`m(L_±) = -x_±`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportEdges {
    #[serde(rename = "L_minus")]
    pub l_minus: f64,
    #[serde(rename = "L_plus")]
    pub l_plus: f64,
    pub x_plus: f64,
    pub x_minus: f64,
}

/// Density value recovered from the boundary behaviour of `Im m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityEstimate {
    pub value: f64,
    /// Largest disagreement between successive Richardson levels.
    pub disagreement: f64,
    /// Set when the extrapolation ladder disagrees by more than 1e-4, or
    /// the raw extrapolant was negative beyond round-off.
    pub warning: bool,
}

/// `π ⊠ MP_r` for a base measure `π` with support in `(0, ∞)`.
#[derive(Debug, Clone)]
pub struct FreeConvolution {
    base: SpectralMeasure,
    ratio: f64,
    solver: SolverParams,
    rule: Vec<(f64, f64)>,
    edges: SupportEdges,
}

#[derive(Clone, Copy, PartialEq)]
enum Half {
    Upper,
    Lower,
    Real,
}

impl Half {
    fn of(z: C64) -> Half {
        if z.im > 0.0 {
            Half::Upper
        } else if z.im < 0.0 {
            Half::Lower
        } else {
            Half::Real
        }
    }

    fn admits(self, m: C64) -> bool {
        m.re.is_finite()
            && m.im.is_finite()
            && m != C64::new(0.0, 0.0)
            && match self {
                Half::Upper => m.im > 0.0,
                Half::Lower => m.im < 0.0,
                Half::Real => true,
            }
    }
}

impl FreeConvolution {
    pub fn new(base: SpectralMeasure, ratio: f64) -> Result<Self> {
        Self::with_solver(base, ratio, SolverParams::default())
    }

    pub fn with_solver(base: SpectralMeasure, ratio: f64, solver: SolverParams) -> Result<Self> {
        solver.validate()?;
        if !(ratio.is_finite() && ratio > 0.0) || ratio == 1.0 {
            return Err(Error::Invariant(format!(
                "ratio {ratio} must be positive and different from 1"
            )));
        }
        let (lo, _) = base.support();
        if !(lo > 0.0) {
            return Err(Error::Invariant(format!(
                "base support must be bounded away from zero (min {lo})"
            )));
        }
        let rule = base.rule(BASE_RULE_ORDER);
        let edges = find_edges(&base, ratio)?;
        Ok(FreeConvolution {
            base,
            ratio,
            solver,
            rule,
            edges,
        })
    }

    pub fn base(&self) -> &SpectralMeasure {
        &self.base
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn solver(&self) -> &SolverParams {
        &self.solver
    }

    pub fn support_edges(&self) -> SupportEdges {
        self.edges
    }

    /// `(1 - r)⁺`, the mass the convolution puts at the origin.
    pub fn atom_at_zero(&self) -> f64 {
        atom_at_zero(self.ratio)
    }

    /// `(∫ t/(1+mt) dπ, ∫ t²/(1+mt)² dπ)` on the solver's rule.
    fn sums(&self, m: C64) -> (C64, C64) {
        let mut s1 = C64::new(0.0, 0.0);
        let mut s2 = C64::new(0.0, 0.0);
        for &(t, w) in &self.rule {
            let q = t / (1.0 + m * t);
            s1 += w * q;
            s2 += w * q * q;
        }
        (s1, s2)
    }

    /// `1/m + z - r ∫ t/(1+mt) dπ`, the defining residual, on the solver's rule.
    pub fn residual(&self, z: C64, m: C64) -> C64 {
        m.inv() + z - self.ratio * self.sums(m).0
    }

    fn residual_floor(&self, z: C64, m: C64, s1: C64) -> f64 {
        // 64 ulps of the largest term in the residual
        let scale = z.norm() + m.inv().norm() + self.ratio * s1.norm();
        self.solver.residual_tol.max(64.0 * f64::EPSILON * scale)
    }

    fn check_domain(&self, z: C64) -> Result<()> {
        if !(z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::Domain(format!("non-finite evaluation point {z}")));
        }
        if z.im == 0.0 {
            let x = z.re;
            if x == 0.0 {
                return Err(Error::Domain("z = 0 is excluded".into()));
            }
            let SupportEdges { l_minus, l_plus, .. } = self.edges;
            if x > l_minus - REAL_AXIS_GUARD && x < l_plus + REAL_AXIS_GUARD {
                return Err(Error::Domain(format!(
                    "real z = {x} within {REAL_AXIS_GUARD} of the support [{l_minus}, {l_plus}]"
                )));
            }
        }
        Ok(())
    }

    /// Newton iteration on the residual, falling back to a damped Picard
    /// step whenever Newton leaves the half plane or fails to decrease the
    /// residual.
    fn iterate(&self, z: C64, m: C64) -> Result<C64> {
        self.iterate_capped(z, m, self.solver.max_iter)
    }

    fn iterate_capped(&self, z: C64, mut m: C64, max_iter: usize) -> Result<C64> {
        let half = Half::of(z);
        let r = self.ratio;
        let mut alpha = self.solver.damping;
        let (mut s1, mut s2) = self.sums(m);
        let mut g = m.inv() + z - r * s1;
        let mut res = g.norm();
        for _ in 0..max_iter {
            if res < self.residual_floor(z, m, s1) {
                return Ok(m);
            }
            let dg = -(m * m).inv() + r * s2;
            let newton = m - g / dg;
            if half.admits(newton) {
                let (n1, n2) = self.sums(newton);
                let ng = newton.inv() + z - r * n1;
                if ng.norm() < res {
                    m = newton;
                    s1 = n1;
                    s2 = n2;
                    g = ng;
                    res = ng.norm();
                    continue;
                }
            }
            let picard = (-z + r * s1).inv();
            let cand = (1.0 - alpha) * m + alpha * picard;
            if !half.admits(cand) {
                alpha = (alpha * 0.5).max(MIN_DAMPING);
                continue;
            }
            let (c1, c2) = self.sums(cand);
            let cg = cand.inv() + z - r * c1;
            if cg.norm() > res {
                alpha = (alpha * 0.5).max(MIN_DAMPING);
            }
            m = cand;
            s1 = c1;
            s2 = c2;
            g = cg;
            res = cg.norm();
        }
        Err(Error::Convergence {
            z: z.to_string(),
            iterations: max_iter,
            residual: res,
        })
    }

    /// Solves at `z` from scratch: directly when `|Im z|` is large,
    /// otherwise by continuation from `z ± i·η₀` with `η` halved each step.
    fn solve_cold(&self, z: C64) -> Result<C64> {
        if z.im.abs() >= CONTINUATION_THRESHOLD {
            return self.iterate(z, -z.inv());
        }
        let sign = if z.im < 0.0 { -1.0 } else { 1.0 };
        let floor = if z.im == 0.0 {
            CONTINUATION_FLOOR
        } else {
            z.im.abs()
        };
        let mut eta = self.solver.continuation_start_eta;
        let shifted = z + C64::new(0.0, sign * eta);
        let mut m = self.iterate(shifted, -shifted.inv())?;
        while eta > floor {
            eta *= 0.5;
            m = self.iterate(z + C64::new(0.0, sign * eta), m)?;
        }
        if z.im == 0.0 {
            let m = self.iterate(z, C64::new(m.re, 0.0))?;
            return Ok(C64::new(m.re, 0.0));
        }
        self.iterate(z, m)
    }

    /// `m(z)` of `π ⊠ MP_r`.
    ///
    /// Accepts `Im z ≠ 0`, or real `z ≠ 0` at distance at least 1e-6 from
    /// `[L_-, L_+]`. Real inputs return a real `m`.
    pub fn stieltjes(&self, z: C64) -> Result<C64> {
        self.check_domain(z)?;
        self.solve_cold(z)
    }

    /// `m(z)` starting Newton from `guess`, e.g. the value at a nearby
    /// point. Off the real axis the solution in the correct half plane is
    /// unique, so any admissible fixed point is the right one; a failed
    /// warm start falls back to [`stieltjes`](Self::stieltjes).
    pub fn stieltjes_from(&self, z: C64, guess: C64) -> Result<C64> {
        self.check_domain(z)?;
        let half = Half::of(z);
        if half != Half::Real && half.admits(guess) {
            if let Ok(m) = self.iterate_capped(z, guess, WARM_START_MAX_ITER) {
                if half.admits(m) {
                    return Ok(m);
                }
            }
        }
        self.solve_cold(z)
    }

    /// `m'(z) = m² / (1 - r m² ∫ t²/(1+mt)² dπ)`, from implicit
    /// differentiation of the self-consistent equation.
    pub fn stieltjes_derivative(&self, z: C64) -> Result<C64> {
        let m = self.stieltjes(z)?;
        self.derivative_at(z, m)
    }

    /// Derivative given an already solved `m = m(z)`.
    pub fn derivative_at(&self, z: C64, m: C64) -> Result<C64> {
        let (_, s2) = self.sums(m);
        let denom = 1.0 - self.ratio * m * m * s2;
        if denom.norm() < 1e-14 {
            return Err(Error::SingularDerivative {
                z: z.to_string(),
                modulus: denom.norm(),
            });
        }
        Ok(m * m / denom)
    }

    /// Density of the absolutely continuous part at `x > 0`, as the
    /// Richardson extrapolation of `Im m(x + iη)/π` over
    /// `η ∈ {1e-3, 5e-4, 2.5e-4}`.
    pub fn density(&self, x: f64) -> Result<DensityEstimate> {
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::Domain(format!("density needs x > 0, got {x}")));
        }
        let mut vals = [0.0; 3];
        let mut m = self.stieltjes(C64::new(x, RICHARDSON_ETAS[0]))?;
        vals[0] = m.im / std::f64::consts::PI;
        for k in 1..3 {
            m = self.stieltjes_from(C64::new(x, RICHARDSON_ETAS[k]), m)?;
            vals[k] = m.im / std::f64::consts::PI;
        }
        // error expansion in powers of η with halving ratio
        let r1a = 2.0 * vals[1] - vals[0];
        let r1b = 2.0 * vals[2] - vals[1];
        let r2 = (4.0 * r1b - r1a) / 3.0;
        let disagreement = (r1b - r1a).abs().max((r2 - r1b).abs());
        let mut warning = disagreement > RICHARDSON_WARN;
        let value = if r2 < 0.0 {
            if r2 <= -1e-8 {
                warning = true;
            }
            0.0
        } else {
            r2
        };
        Ok(DensityEstimate {
            value,
            disagreement,
            warning,
        })
    }

    /// `h(x) = ∫ (x t / (1 - x t))² dπ(t)`.
    pub fn h(&self, x: f64) -> Result<f64> {
        h_function(&self.base, x)
    }
}

pub fn atom_at_zero(ratio: f64) -> f64 {
    (1.0 - ratio).max(0.0)
}

fn h_function(base: &SpectralMeasure, x: f64) -> Result<f64> {
    Ok(base
        .integrate(|t| {
            let q = x * t / (1.0 - x * t);
            C64::new(q * q, 0.0)
        })?
        .re)
}

fn edge_value(base: &SpectralMeasure, ratio: f64, x: f64) -> Result<f64> {
    let s = base.integrate(|t| C64::new(t / (1.0 - x * t), 0.0))?.re;
    Ok(1.0 / x + ratio * s)
}

/// Bisection for `h(x) = target` on a bracket where `h - target` changes
/// sign; `increasing` tells which way.
fn bisect<F>(mut lo: f64, mut hi: f64, increasing: bool, f: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo) <= EDGE_XTOL * mid.abs().max(1.0) || mid == lo || mid == hi {
            return Ok(mid);
        }
        let above = f(mid)? > 0.0;
        if above == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Solves `h(x) = 1/r` for both edges. `h` increases on `(0, 1/t_max)`,
/// decreases from `+∞` to 1 on `(1/t_min, ∞)` and increases from 0 to 1
/// as `x` runs from 0 to `-∞`.
fn find_edges(base: &SpectralMeasure, ratio: f64) -> Result<SupportEdges> {
    let (t_min, t_max) = base.support();
    let target = 1.0 / ratio;
    let g = |x: f64| -> Result<f64> { Ok(h_function(base, x)? - target) };
    let edge_err = |reason: &str, lo: f64, hi: f64| Error::EdgeFinding {
        reason: reason.to_string(),
        lo,
        hi,
    };

    // right root in (0, 1/t_max): step toward the pole geometrically
    let pole = 1.0 / t_max;
    let mut hi = 0.5 * pole;
    let mut gap = 0.5 * pole;
    let mut steps = 0;
    while g(hi)? <= 0.0 {
        steps += 1;
        if steps > EDGE_BRACKET_STEPS {
            return Err(edge_err("h stays below 1/r near 1/max support", 0.0, hi));
        }
        gap *= 0.5;
        hi = pole - gap;
    }
    let x_plus = bisect(0.0, hi, true, g)?;

    let x_minus = if ratio < 1.0 {
        // (1/t_min, ∞), h decreasing toward 1 < 1/r
        let pole = 1.0 / t_min;
        let mut hi = 2.0 * pole;
        let mut steps = 0;
        while g(hi)? > 0.0 {
            steps += 1;
            if steps > EDGE_BRACKET_STEPS {
                return Err(edge_err("h stays above 1/r on (1/min support, inf)", pole, hi));
            }
            hi *= 2.0;
        }
        let mut lo = pole + 0.5 * pole;
        let mut gap = 0.5 * pole;
        steps = 0;
        while g(lo)? <= 0.0 {
            steps += 1;
            if steps > EDGE_BRACKET_STEPS {
                return Err(edge_err("h stays below 1/r near 1/min support", pole, hi));
            }
            gap *= 0.5;
            lo = pole + gap;
        }
        bisect(lo, hi, false, g)?
    } else {
        // (-∞, 0), h increasing as x decreases
        let mut lo = -pole;
        let mut steps = 0;
        while g(lo)? <= 0.0 {
            steps += 1;
            if steps > EDGE_BRACKET_STEPS {
                return Err(edge_err("h stays below 1/r on (-inf, 0)", lo, 0.0));
            }
            lo *= 2.0;
        }
        bisect(lo, 0.0, false, g)?
    };

    let l_plus = edge_value(base, ratio, x_plus)?;
    let l_minus = edge_value(base, ratio, x_minus)?;
    if !(0.0 < l_minus && l_minus < l_plus) {
        return Err(Error::EdgeFinding {
            reason: format!("edges out of order: L_- = {l_minus}, L_+ = {l_plus}"),
            lo: x_minus.min(x_plus),
            hi: x_minus.max(x_plus),
        });
    }
    Ok(SupportEdges {
        l_minus,
        l_plus,
        x_plus,
        x_minus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::PopulationLaw;

    /// Root of `z m² + (z + 1 - r) m + 1 = 0` with `Im m > 0`: the
    /// self-consistent equation for `π = δ_1`.
    fn mp_closed_form(r: f64, z: C64) -> C64 {
        let b = z + 1.0 - r;
        let disc = (b * b - 4.0 * z).sqrt();
        let m1 = (-b + disc) / (2.0 * z);
        let m2 = (-b - disc) / (2.0 * z);
        if m1.im > m2.im { m1 } else { m2 }
    }

    fn mp(r: f64) -> FreeConvolution {
        FreeConvolution::new(SpectralMeasure::dirac(1.0).unwrap(), r).unwrap()
    }

    fn uniform_half(r: f64) -> FreeConvolution {
        FreeConvolution::new(SpectralMeasure::uniform(0.5, 1.0).unwrap(), r).unwrap()
    }

    #[test]
    fn large_z_asymptotic() {
        let fc = mp(0.25);
        let z = C64::new(0.0, 100.0);
        let m = fc.stieltjes(z).unwrap();
        assert!((m - (-z.inv())).norm() < 2e-4);
        let dm = fc.stieltjes_derivative(z).unwrap();
        assert!((dm - (z * z).inv()).norm() < 1e-5);
    }

    #[test]
    fn matches_mp_closed_form() {
        let fc = mp(0.25);
        let z = C64::new(1.0, 1.0);
        let m = fc.stieltjes(z).unwrap();
        assert!((m - mp_closed_form(0.25, z)).norm() < 1e-10);
    }

    #[test]
    fn derivative_matches_closed_form() {
        let fc = mp(0.25);
        let z = C64::new(1.0, 1.0);
        let h = 1e-5;
        let exact = (mp_closed_form(0.25, z + h) - mp_closed_form(0.25, z - h)) / (2.0 * h);
        // differentiate the quadratic directly: m' = -(m² + m) / (2 z m + z + 1 - r)
        let m = mp_closed_form(0.25, z);
        let analytic = -(m * m + m) / (2.0 * z * m + z + 1.0 - 0.25);
        assert!((exact - analytic).norm() < 1e-8);
        let dm = fc.stieltjes_derivative(z).unwrap();
        assert!((dm - analytic).norm() < 1e-8, "{dm} vs {analytic}");
    }

    #[test]
    fn uniform_base_residual_small() {
        let fc = uniform_half(0.5);
        let z = C64::new(2.0, 0.5);
        let m = fc.stieltjes(z).unwrap();
        assert!(fc.residual(z, m).norm() < 1e-12);
        // the same residual with the adaptive integral of the measure
        let s = fc
            .base()
            .integrate(|t| C64::new(t, 0.0) / (1.0 + m * t))
            .unwrap();
        let res = m.inv() + z - 0.5 * s;
        assert!(res.norm() < 1e-12, "{res}");
    }

    #[test]
    fn real_axis_derivative_matches_finite_difference() {
        let fc = uniform_half(0.5);
        let z = C64::new(3.0, 0.0);
        let dm = fc.stieltjes_derivative(z).unwrap();
        assert_eq!(dm.im, 0.0);
        let h = 1e-5;
        let fd = (fc.stieltjes(z + h).unwrap() - fc.stieltjes(z - h).unwrap()) / (2.0 * h);
        assert!((dm - fd).norm() < 1e-6 * dm.norm(), "{dm} vs {fd}");
    }

    #[test]
    fn real_points_give_real_m() {
        let fc = uniform_half(0.5);
        let e = fc.support_edges();
        for x in [-1.0, 0.5 * e.l_minus, e.l_plus + 0.01, 10.0] {
            let m = fc.stieltjes(C64::new(x, 0.0)).unwrap();
            assert_eq!(m.im, 0.0);
            assert!(fc.residual(C64::new(x, 0.0), m).norm() < 1e-12);
        }
        // m is increasing on the real axis outside the support and m(L_+) = -x_plus
        let m_right = fc.stieltjes(C64::new(e.l_plus + 1e-5, 0.0)).unwrap().re;
        assert!((m_right + e.x_plus).abs() < 1e-2);
    }

    #[test]
    fn domain_guard() {
        let fc = mp(0.25);
        assert!(matches!(fc.stieltjes(C64::new(1.0, 0.0)), Err(Error::Domain(_))));
        assert!(matches!(fc.stieltjes(C64::new(0.0, 0.0)), Err(Error::Domain(_))));
        assert!(matches!(
            fc.stieltjes(C64::new(2.25 + 1e-7, 0.0)),
            Err(Error::Domain(_))
        ));
        assert!(fc.density(-1.0).is_err());
    }

    #[test]
    fn convergence_error_carries_residual() {
        let params = SolverParams {
            max_iter: 1,
            ..SolverParams::default()
        };
        let fc =
            FreeConvolution::with_solver(SpectralMeasure::uniform(0.5, 1.0).unwrap(), 0.5, params)
                .unwrap();
        match fc.stieltjes(C64::new(1.0, 1.0)) {
            Err(Error::Convergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_ratio_rejected() {
        let base = SpectralMeasure::dirac(1.0).unwrap();
        assert!(FreeConvolution::new(base.clone(), 1.0).is_err());
        assert!(FreeConvolution::new(base, -0.5).is_err());
    }

    #[test]
    fn atom_at_zero_values() {
        assert_eq!(atom_at_zero(0.5), 0.5);
        assert_eq!(atom_at_zero(2.0), 0.0);
        assert!((atom_at_zero(0.999) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn mp_edges() {
        let e = mp(0.25).support_edges();
        assert!((e.l_minus - 0.25).abs() < 1e-10);
        assert!((e.l_plus - 2.25).abs() < 1e-10);
        assert!((e.x_plus - 2.0 / 3.0).abs() < 1e-11);
        assert!((e.x_minus - 2.0).abs() < 1e-11);

        let e = mp(4.0).support_edges();
        assert!((e.l_plus - 9.0).abs() < 1e-9);
        assert!((e.l_minus - 1.0).abs() < 1e-9);
        assert!(e.x_minus < 0.0);
        assert!((e.x_minus + 1.0).abs() < 1e-11);
    }

    #[test]
    fn edge_roots_solve_h() {
        for r in [0.3, 0.5, 2.5] {
            let fc = uniform_half(r);
            let e = fc.support_edges();
            assert!((fc.h(e.x_plus).unwrap() - 1.0 / r).abs() < 1e-10);
            assert!((fc.h(e.x_minus).unwrap() - 1.0 / r).abs() < 1e-10);
            assert!(0.0 < e.x_plus && e.x_plus < 1.0);
            if r < 1.0 {
                assert!(e.x_minus > 2.0);
            } else {
                assert!(e.x_minus < 0.0);
            }
        }
    }

    #[test]
    fn h_increasing_below_pole() {
        let fc = uniform_half(0.5);
        let mut prev = 0.0;
        for i in 1..200 {
            let x = 0.995 * i as f64 / 200.0;
            let v = fc.h(x).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn density_matches_mp_closed_form() {
        let fc = mp(0.25);
        // MP density of the N×N matrix: sqrt((b-x)(x-a)) / (2π x) with a, b = (1 ∓ √r)²
        let x: f64 = 1.0;
        let exact = ((2.25 - x) * (x - 0.25)).sqrt() / (2.0 * std::f64::consts::PI * x);
        let est = fc.density(x).unwrap();
        assert!((est.value - exact).abs() < 1e-5, "{} vs {exact}", est.value);
        assert!(!est.warning);
        assert!(fc.density(2.5).unwrap().value < 1e-6);
    }

    #[test]
    fn consistency_probes() {
        let fc = uniform_half(0.5);
        let e = fc.support_edges();
        assert!(fc.density(e.l_plus + 0.05).unwrap().value < 1e-4);
        assert!(fc.density(0.5 * (e.l_minus + e.l_plus)).unwrap().value > 0.0);
    }

    #[test]
    fn solver_rule_agrees_with_adaptive_integral() {
        let fc = uniform_half(0.5);
        for z in [C64::new(0.3, 0.01), C64::new(2.0, 0.001), C64::new(-1.0, 0.5)] {
            let m = fc.stieltjes(z).unwrap();
            let adaptive = fc
                .base()
                .integrate(|t| C64::new(t, 0.0) / (1.0 + m * t))
                .unwrap();
            assert!((adaptive - fc.sums(m).0).norm() < 1e-13);
        }
    }

    #[test]
    fn hat_of_constant_population_is_mp() {
        let law = PopulationLaw::dirac(1.0).unwrap();
        let fc = FreeConvolution::new(law.measure().unwrap(), 0.25).unwrap();
        let e = fc.support_edges();
        assert!((e.l_minus - 0.25).abs() < 1e-10 && (e.l_plus - 2.25).abs() < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(200))]

            #[test]
            fn residual_herglotz_and_conjugate(
                re in -10.0f64..10.0,
                im in 0.01f64..10.0,
                wide in any::<bool>(),
            ) {
                let fc = uniform_half(if wide { 2.0 } else { 0.5 });
                let z = C64::new(re, im);
                let m = fc.stieltjes(z).unwrap();
                prop_assert!(fc.residual(z, m).norm() < 1e-12);
                prop_assert!(m.im > 0.0);
                let mc = fc.stieltjes(z.conj()).unwrap();
                prop_assert!((mc - m.conj()).norm() < 1e-12);
            }

            #[test]
            fn h_increasing_on_grid(r in 0.1f64..4.0, a in 0.01f64..0.99, b in 0.01f64..0.99) {
                let fc = uniform_half(r);
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                prop_assume!(hi - lo > 1e-6);
                // 1/t_max = 1 for the uniform base on [0.5, 1]
                prop_assert!(fc.h(lo).unwrap() < fc.h(hi).unwrap());
            }
        }
    }
}
