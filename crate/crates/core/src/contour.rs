//! Rectangular contour around the bulk `[L_-, L_+]`, contour quadrature,
//! and the contour functionals behind the CLT variance.
//!
//! The rectangle has vertices `L_+ + 2d ± 2di` and `L_- - 2d ± 2di` and is
//! traversed counterclockwise. Each side is split into Gauss–Legendre
//! panels no longer than `4d`, so every panel sees the support at a
//! relative distance of at least one half-length.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::freeconv::{FreeConvolution, SupportEdges};
use crate::measures::PopulationLaw;
use crate::quadrature::GaussLegendre;

type C64 = Complex64;

pub const DEFAULT_ORDER: usize = 32;
pub const MIN_ORDER: usize = 16;
pub const MAX_ORDER: usize = 1024;
/// Gauss–Legendre order used for expectations over the population law.
pub const POPULATION_ORDER: usize = 128;

const SELF_TEST_TOL: f64 = 1e-10;
const IMAG_TOL: f64 = 1e-7;
const DENOMINATOR_FLOOR: f64 = 1e-8;

/// `min(L_-/20, 0.05)`.
pub fn default_d(edges: &SupportEdges) -> f64 {
    (edges.l_minus / 20.0).min(0.05)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourNode {
    pub point: C64,
    /// Quadrature weight including the complex tangent `dξ`.
    pub weight: C64,
}

#[derive(Debug, Clone)]
pub struct RectContour {
    pub d: f64,
    pub l_minus: f64,
    pub l_plus: f64,
    /// Gauss–Legendre order per panel.
    pub order: usize,
    nodes: Vec<ContourNode>,
}

/// Builds the counterclockwise rectangle for the given edges and runs the
/// Cauchy self-tests `∮ dξ = 0`, `∮ (ξ - c)⁻¹ dξ = 2πi` at the midpoint.
pub fn build_contour(edges: &SupportEdges, d: f64, order: usize) -> Result<RectContour> {
    if !(d > 0.0 && d < edges.l_minus / 10.0) {
        return Err(Error::Domain(format!(
            "contour offset d = {d} must lie in (0, L_-/10 = {})",
            edges.l_minus / 10.0
        )));
    }
    if !(MIN_ORDER..=MAX_ORDER).contains(&order) {
        return Err(Error::Domain(format!(
            "panel order {order} outside [{MIN_ORDER}, {MAX_ORDER}]"
        )));
    }
    let left = edges.l_minus - 2.0 * d;
    let right = edges.l_plus + 2.0 * d;
    let h = 2.0 * d;
    let horizontal_panels = ((right - left) / (4.0 * d)).ceil().max(1.0) as usize;
    let corners = [
        C64::new(left, -h),
        C64::new(right, -h),
        C64::new(right, h),
        C64::new(left, h),
    ];
    let rule = GaussLegendre::get(order);
    let mut nodes = Vec::with_capacity(order * 2 * (horizontal_panels + 2));
    for side in 0..4 {
        let a = corners[side];
        let b = corners[(side + 1) % 4];
        // vertical sides get two panels so no node sits on the real axis
        let panels = if side % 2 == 0 { horizontal_panels } else { 2 };
        for p in 0..panels {
            let pa = a + (b - a) * (p as f64 / panels as f64);
            let pb = a + (b - a) * ((p + 1) as f64 / panels as f64);
            let half = 0.5 * (pb - pa);
            let mid = 0.5 * (pa + pb);
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                nodes.push(ContourNode {
                    point: mid + half * x,
                    weight: half * w,
                });
            }
        }
    }
    let contour = RectContour {
        d,
        l_minus: edges.l_minus,
        l_plus: edges.l_plus,
        order,
        nodes,
    };
    let length = contour_integral(&contour, |_| C64::new(1.0, 0.0))?;
    let c = 0.5 * (edges.l_minus + edges.l_plus);
    let winding = contour_integral(&contour, |xi| (xi - c).inv())?;
    if length.norm() > SELF_TEST_TOL || (winding - C64::new(0.0, 2.0 * PI)).norm() > SELF_TEST_TOL
    {
        return Err(Error::Numerical(format!(
            "contour self-test failed: ∮dξ = {length}, ∮(ξ-c)⁻¹dξ = {winding}"
        )));
    }
    Ok(contour)
}

impl RectContour {
    pub fn nodes(&self) -> &[ContourNode] {
        &self.nodes
    }

    pub fn left(&self) -> f64 {
        self.l_minus - 2.0 * self.d
    }

    pub fn right(&self) -> f64 {
        self.l_plus + 2.0 * self.d
    }

    /// The same rectangle with the panel order doubled.
    pub fn refined(&self) -> Result<RectContour> {
        let edges = SupportEdges {
            l_minus: self.l_minus,
            l_plus: self.l_plus,
            x_plus: f64::NAN,
            x_minus: f64::NAN,
        };
        build_contour(&edges, self.d, self.order * 2)
    }
}

/// `∮ g(ξ) dξ` as the weighted node sum.
pub fn contour_integral<G>(contour: &RectContour, g: G) -> Result<C64>
where
    G: Fn(C64) -> C64,
{
    contour.nodes.iter().try_fold(C64::new(0.0, 0.0), |acc, n| {
        let v = g(n.point);
        if v.re.is_finite() && v.im.is_finite() {
            Ok(acc + n.weight * v)
        } else {
            Err(Error::Domain(format!("integrand not finite at ξ = {}", n.point)))
        }
    })
}

/// Doubles the panel order from `contour.order` until two successive
/// values differ by less than `tol`, up to order 1024. Returns the value
/// and the order reached.
pub fn contour_integral_refined<G>(contour: &RectContour, g: G, tol: f64) -> Result<(C64, usize)>
where
    G: Fn(C64) -> C64,
{
    let mut current = contour.clone();
    let mut value = contour_integral(&current, &g)?;
    while current.order * 2 <= MAX_ORDER {
        let next = current.refined()?;
        let next_value = contour_integral(&next, &g)?;
        let change = (next_value - value).norm();
        current = next;
        value = next_value;
        if change < tol {
            break;
        }
    }
    Ok((value, current.order))
}

/// Test functions analytic near the bulk.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    /// `Σ c_k x^k`.
    Polynomial(Vec<f64>),
    /// `exp(s x)`.
    Exponential(f64),
    /// `1 / (x - p)`.
    RationalShift(f64),
}

impl TestFunction {
    pub fn eval(&self, z: C64) -> C64 {
        match self {
            TestFunction::Polynomial(c) => c
                .iter()
                .rev()
                .fold(C64::new(0.0, 0.0), |acc, &ck| acc * z + ck),
            TestFunction::Exponential(s) => (z * *s).exp(),
            TestFunction::RationalShift(p) => (z - *p).inv(),
        }
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        match self {
            TestFunction::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ck| acc * x + ck),
            TestFunction::Exponential(s) => (s * x).exp(),
            TestFunction::RationalShift(p) => 1.0 / (x - p),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            TestFunction::Polynomial(c) => c.iter().skip(1).all(|&v| v == 0.0),
            TestFunction::Exponential(s) => *s == 0.0,
            TestFunction::RationalShift(_) => false,
        }
    }

    /// Checks that every singularity stays clear of the closed rectangle.
    pub fn check_against(&self, contour: &RectContour) -> Result<()> {
        if let TestFunction::RationalShift(p) = self {
            let limit = contour.l_plus + 4.0 * contour.d;
            if !(*p < 0.0 || *p > limit) {
                return Err(Error::Domain(format!(
                    "pole {p} of the test function must be < 0 or > L_+ + 4d = {limit}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TestFunction::Polynomial(c) => {
                let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                write!(f, "poly:{}", parts.join(","))
            }
            TestFunction::Exponential(s) => write!(f, "exp:{s}"),
            TestFunction::RationalShift(p) => write!(f, "ratshift:{p}"),
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;

    /// `poly:c0,c1,…`, `exp:s` or `ratshift:p`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| Error::usage("f", format!("{msg} (expected poly:c0,c1,... | exp:s | ratshift:p), got `{s}`"));
        let (kind, args) = s.split_once(':').ok_or_else(|| bad("missing `:`"))?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("unparsable number"))?;
        if nums.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        match (kind, nums.as_slice()) {
            ("poly", c) if !c.is_empty() => Ok(TestFunction::Polynomial(c.to_vec())),
            ("exp", [s]) => Ok(TestFunction::Exponential(*s)),
            ("ratshift", [p]) => Ok(TestFunction::RationalShift(*p)),
            _ => Err(bad("unknown function or wrong arity")),
        }
    }
}

/// Two-term variance formula, a double contour integral against `ν` plus a
/// squared single contour integral, evaluated term by term. Diagnostic
/// only; compare with [`ContourField::clt_variance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremVariance {
    /// `-(1/4π²) ∮∮∫ t m'(ξ₁) m'(ξ₂) f(ξ₁) f(ξ₂) / ((1+t m(ξ₁))(1+t m(ξ₂))) dν dξ₁ dξ₂`
    pub double_integral_term: C64,
    /// `(∮ f(ξ) m'(ξ) (ξ + 1/m(ξ)) dξ)²`
    pub squared_term: C64,
}

impl TheoremVariance {
    pub fn total(&self) -> C64 {
        self.double_integral_term + self.squared_term
    }
}

/// `m` and `m'` of a free convolution tabulated on the nodes of a contour.
#[derive(Debug, Clone)]
pub struct ContourField {
    contour: RectContour,
    ratio: f64,
    m: Vec<C64>,
    dm: Vec<C64>,
}

impl ContourField {
    pub fn new(fc: &FreeConvolution, contour: RectContour) -> Result<Self> {
        let mut m = Vec::with_capacity(contour.nodes.len());
        let mut dm = Vec::with_capacity(contour.nodes.len());
        let mut prev: Option<C64> = None;
        for node in &contour.nodes {
            let value = match prev {
                Some(g) => fc.stieltjes_from(node.point, g)?,
                None => fc.stieltjes(node.point)?,
            };
            dm.push(fc.derivative_at(node.point, value)?);
            m.push(value);
            prev = Some(value);
        }
        Ok(ContourField {
            contour,
            ratio: fc.ratio(),
            m,
            dm,
        })
    }

    /// Builds the default contour (`d = min(L_-/20, 0.05)`, order 32) for
    /// `fc` and tabulates it.
    pub fn with_defaults(fc: &FreeConvolution) -> Result<Self> {
        let edges = fc.support_edges();
        let contour = build_contour(&edges, default_d(&edges), DEFAULT_ORDER)?;
        Self::new(fc, contour)
    }

    pub fn contour(&self) -> &RectContour {
        &self.contour
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// `(ξ, m(ξ), m'(ξ), weight)` for every node.
    pub fn iter(&self) -> impl Iterator<Item = (C64, C64, C64, C64)> + '_ {
        self.contour
            .nodes
            .iter()
            .zip(self.m.iter().zip(&self.dm))
            .map(|(n, (&m, &dm))| (n.point, m, dm, n.weight))
    }

    pub fn m_values(&self) -> &[C64] {
        &self.m
    }

    /// `min over nodes of |1 + σ m(ξ)|`.
    pub fn min_denominator(&self, sigma: f64) -> f64 {
        self.m
            .iter()
            .map(|&m| (1.0 + sigma * m).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// `(1/2πi) ∮ f(ξ) m'(ξ) σ / (1 + σ m(ξ)) dξ` before taking the real part.
    pub fn f_sigma_complex(&self, f: &TestFunction, sigma: f64) -> Result<C64> {
        let mut acc = C64::new(0.0, 0.0);
        for (xi, m, dm, w) in self.iter() {
            let denom = 1.0 + sigma * m;
            if denom.norm() <= DENOMINATOR_FLOOR {
                return Err(Error::NearSingular {
                    xi: xi.to_string(),
                    modulus: denom.norm(),
                });
            }
            acc += w * f.eval(xi) * dm * sigma / denom;
        }
        Ok(acc / C64::new(0.0, 2.0 * PI))
    }

    /// `F(σ)`, the contribution of one population value to the rescaled
    /// linear statistic.
    pub fn f_sigma(&self, f: &TestFunction, sigma: f64) -> Result<f64> {
        f.check_against(&self.contour)?;
        let v = self.f_sigma_complex(f, sigma)?;
        if v.im.abs() >= IMAG_TOL {
            return Err(Error::Numerical(format!(
                "F({sigma}) has imaginary part {:e}",
                v.im
            )));
        }
        Ok(v.re)
    }

    fn check_ratio(&self, gamma0: f64) -> Result<()> {
        if (self.ratio - gamma0).abs() > 1e-12 * gamma0.max(1.0) {
            return Err(Error::Precondition(format!(
                "field was built for ratio {} but gamma0 = {gamma0}",
                self.ratio
            )));
        }
        Ok(())
    }

    /// `γ₀ Var_ν(F(σ))`, the limiting variance of
    /// `N^{-1/2} (Σ f(λ_i) - N ∫ f dμ_fc)`.
    pub fn clt_variance(&self, law: &PopulationLaw, gamma0: f64, f: &TestFunction) -> Result<f64> {
        self.check_ratio(gamma0)?;
        f.check_against(&self.contour)?;
        let quad = law.quadrature(POPULATION_ORDER);
        let values = quad
            .iter()
            .map(|&(t, _)| self.f_sigma(f, t))
            .collect::<Result<Vec<f64>>>()?;
        let mean: f64 = quad.iter().zip(&values).map(|(&(_, w), v)| w * v).sum();
        let var: f64 = quad
            .iter()
            .zip(&values)
            .map(|(&(_, w), v)| w * (v - mean) * (v - mean))
            .sum();
        let v = gamma0 * var;
        Ok(if v < 0.0 && v > -1e-9 { 0.0 } else { v })
    }

    /// Evaluates the two terms of [`TheoremVariance`] as written, with no
    /// extra normalization.
    pub fn theorem_variance(&self, law: &PopulationLaw, f: &TestFunction) -> Result<TheoremVariance> {
        f.check_against(&self.contour)?;
        let quad = law.quadrature(POPULATION_ORDER);
        let mut double = C64::new(0.0, 0.0);
        for &(t, w) in &quad {
            let mut inner = C64::new(0.0, 0.0);
            for (xi, m, dm, wx) in self.iter() {
                inner += wx * dm * f.eval(xi) / (1.0 + t * m);
            }
            double += w * t * inner * inner;
        }
        double *= -1.0 / (4.0 * PI * PI);
        let mut single = C64::new(0.0, 0.0);
        for (xi, m, dm, w) in self.iter() {
            single += w * f.eval(xi) * dm * (xi + m.inv());
        }
        Ok(TheoremVariance {
            double_integral_term: double,
            squared_term: single * single,
        })
    }

    /// `∫ f dμ_fc` over the part of the law enclosed by the contour, i.e.
    /// `-(1/2πi) ∮ f(ξ) m(ξ) dξ`.
    pub fn mean_statistic(&self, f: &TestFunction) -> Result<f64> {
        f.check_against(&self.contour)?;
        let mut acc = C64::new(0.0, 0.0);
        for (xi, m, _, w) in self.iter() {
            acc += w * f.eval(xi) * m;
        }
        let v = -acc / C64::new(0.0, 2.0 * PI);
        if v.im.abs() >= IMAG_TOL {
            return Err(Error::Numerical(format!(
                "mean statistic has imaginary part {:e}",
                v.im
            )));
        }
        Ok(v.re)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::SpectralMeasure;

    fn mp_edges() -> SupportEdges {
        SupportEdges {
            l_minus: 0.25,
            l_plus: 2.25,
            x_plus: 2.0 / 3.0,
            x_minus: 2.0,
        }
    }

    #[test]
    fn cauchy_self_tests() {
        let c = build_contour(&mp_edges(), 0.02, 64).unwrap();
        let inside = contour_integral(&c, |xi| (xi - 1.0).inv()).unwrap();
        assert!((inside - C64::new(0.0, 2.0 * PI)).norm() < 1e-10);
        let outside = contour_integral(&c, |xi| (xi + 1.0).inv()).unwrap();
        assert!(outside.norm() < 1e-10);
        let entire = contour_integral(&c, |xi| xi * xi * xi).unwrap();
        assert!(entire.norm() < 1e-10);
        let mid = 1.25;
        let double_pole = contour_integral(&c, |xi| (xi - mid).powi(-2)).unwrap();
        assert!(double_pole.norm() < 1e-9);
        assert!(contour_integral(&c, |_| C64::new(1.0, 0.0)).unwrap().norm() < 1e-12);
    }

    #[test]
    fn contour_geometry() {
        let c = build_contour(&mp_edges(), 0.02, 16).unwrap();
        // 0 outside, the support inside
        let w0 = contour_integral(&c, |xi| xi.inv()).unwrap();
        assert!(w0.norm() < 1e-10);
        for n in c.nodes() {
            assert!(n.point.im != 0.0);
            assert!(n.point.re >= 0.25 - 0.04 - 1e-12 && n.point.re <= 2.25 + 0.04 + 1e-12);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(build_contour(&mp_edges(), 0.03, 64).is_err());
        assert!(build_contour(&mp_edges(), 0.0, 64).is_err());
        assert!(build_contour(&mp_edges(), 0.02, 8).is_err());
    }

    #[test]
    fn non_finite_integrand_reports_node() {
        let c = build_contour(&mp_edges(), 0.02, 16).unwrap();
        let err = contour_integral(&c, |_| C64::new(f64::NAN, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Domain(ref s) if s.contains("ξ")));
    }

    #[test]
    fn refinement_converges() {
        let c = build_contour(&mp_edges(), 0.02, 16).unwrap();
        let (v, order) = contour_integral_refined(&c, |xi| (xi - 1.25).inv() * xi.exp(), 1e-9).unwrap();
        let exact = C64::new(0.0, 2.0 * PI) * 1.25f64.exp();
        assert!((v - exact).norm() < 1e-9);
        assert!(order <= MAX_ORDER);
    }

    #[test]
    fn test_function_grammar() {
        assert_eq!("poly:0,1".parse::<TestFunction>().unwrap(), TestFunction::Polynomial(vec![0.0, 1.0]));
        assert_eq!("exp:0.5".parse::<TestFunction>().unwrap(), TestFunction::Exponential(0.5));
        assert_eq!("ratshift:-5".parse::<TestFunction>().unwrap(), TestFunction::RationalShift(-5.0));
        assert!("exp:1,2".parse::<TestFunction>().is_err());
        assert!("sin:1".parse::<TestFunction>().is_err());
        assert!("poly".parse::<TestFunction>().is_err());
        let f = TestFunction::Polynomial(vec![1.0, -2.0, 0.5]);
        assert_eq!(f.to_string().parse::<TestFunction>().unwrap(), f);
        assert_eq!(f.eval_real(2.0), 1.0 - 4.0 + 2.0);
        assert_eq!(f.eval(C64::new(2.0, 0.0)), C64::new(-1.0, 0.0));
    }

    #[test]
    fn rational_pole_must_clear_contour() {
        let c = build_contour(&mp_edges(), 0.02, 16).unwrap();
        assert!(TestFunction::RationalShift(-5.0).check_against(&c).is_ok());
        assert!(TestFunction::RationalShift(1.0).check_against(&c).is_err());
        assert!(TestFunction::RationalShift(2.3).check_against(&c).is_err());
        assert!(TestFunction::RationalShift(2.5).check_against(&c).is_ok());
    }

    fn mp_field(r: f64, order: usize) -> ContourField {
        let fc = FreeConvolution::new(SpectralMeasure::dirac(1.0).unwrap(), r).unwrap();
        let edges = fc.support_edges();
        let c = build_contour(&edges, default_d(&edges), order).unwrap();
        ContourField::new(&fc, c).unwrap()
    }

    #[test]
    fn f_sigma_identity_is_sigma_for_mp_base() {
        let field = mp_field(0.25, 32);
        let f = TestFunction::Polynomial(vec![0.0, 1.0]);
        assert!((field.f_sigma(&f, 1.0).unwrap() - 1.0).abs() < 1e-6);
        for s in [0.4, 0.7, 1.3] {
            assert!((field.f_sigma(&f, s).unwrap() - s).abs() < 1e-6);
        }
    }

    #[test]
    fn f_sigma_constant_counts_nonzero_eigenvalues() {
        // r < 1: each population value carries one nonzero eigenvalue inside Γ
        let field = mp_field(0.25, 32);
        let one = TestFunction::Polynomial(vec![1.0]);
        for s in [0.5, 1.0] {
            assert!((field.f_sigma(&one, s).unwrap() - 1.0).abs() < 1e-7);
        }
        // r > 1: 1 + σ m never winds around 0
        let field = mp_field(4.0, 32);
        for s in [0.5, 1.0] {
            assert!(field.f_sigma(&one, s).unwrap().abs() < 1e-7);
        }
    }

    #[test]
    fn mean_statistic_mp() {
        let field = mp_field(0.25, 32);
        let one = TestFunction::Polynomial(vec![1.0]);
        assert!((field.mean_statistic(&one).unwrap() - 0.25).abs() < 1e-6);
        let id = TestFunction::Polynomial(vec![0.0, 1.0]);
        assert!((field.mean_statistic(&id).unwrap() - 0.25).abs() < 1e-4);
    }

    #[test]
    fn rational_shift_self_convergence() {
        let f = TestFunction::RationalShift(-5.0);
        let a = mp_field(0.25, 64).f_sigma(&f, 0.8).unwrap();
        let b = mp_field(0.25, 512).f_sigma(&f, 0.8).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn denominators_stay_away_from_zero() {
        let field = mp_field(0.25, 32);
        for s in [0.25, 1.0] {
            assert!(field.min_denominator(s) > 1e-4);
        }
    }

    fn uniform_field(d: Option<f64>) -> (ContourField, PopulationLaw) {
        let law = PopulationLaw::uniform(0.5, 1.0).unwrap();
        let fc = FreeConvolution::new(law.measure().unwrap(), 0.5).unwrap();
        let edges = fc.support_edges();
        let c = build_contour(&edges, d.unwrap_or(default_d(&edges)), DEFAULT_ORDER).unwrap();
        (ContourField::new(&fc, c).unwrap(), law)
    }

    #[test]
    fn variance_of_trace_is_scaled_population_variance() {
        // F(σ) = σ for f(x) = x, so V = γ₀ Var(σ) = 0.5 / 48
        let (field, law) = uniform_field(None);
        let v = field
            .clt_variance(&law, 0.5, &TestFunction::Polynomial(vec![0.0, 1.0]))
            .unwrap();
        assert!((v - 1.0 / 96.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn variance_of_second_moment() {
        // F(σ) = σ² + 2γ₀ E[σ] σ; oracle by direct quadrature of that polynomial
        let (field, law) = uniform_field(None);
        let g0 = 0.5;
        let mean_s = 0.75;
        let fpoly = |s: f64| s * s + 2.0 * g0 * mean_s * s;
        let e1 = law.expect(64, fpoly);
        let e2 = law.expect(64, |s| fpoly(s).powi(2));
        let oracle = g0 * (e2 - e1 * e1);
        let v = field
            .clt_variance(&law, g0, &TestFunction::Polynomial(vec![0.0, 0.0, 1.0]))
            .unwrap();
        assert!((v - oracle).abs() < 1e-8, "{v} vs {oracle}");
    }

    #[test]
    fn variance_independent_of_offset() {
        let f = TestFunction::Exponential(0.7);
        let (a, law) = uniform_field(None);
        let d = a.contour().d;
        let (b, _) = uniform_field(Some(d / 2.0));
        let va = a.clt_variance(&law, 0.5, &f).unwrap();
        let vb = b.clt_variance(&law, 0.5, &f).unwrap();
        assert!((va - vb).abs() < 1e-8 * va.max(1.0), "{va} vs {vb}");
    }

    #[test]
    fn ratio_mismatch_rejected() {
        let (field, law) = uniform_field(None);
        let f = TestFunction::Polynomial(vec![0.0, 1.0]);
        assert!(matches!(
            field.clt_variance(&law, 0.4, &f),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn theorem_terms_for_constant_function() {
        // r < 1: double term is E[1/σ] (scaled by -1/4π² · (2πi)²), squared term (2πi r)²
        let (field, law) = uniform_field(None);
        let tv = field
            .theorem_variance(&law, &TestFunction::Polynomial(vec![1.0]))
            .unwrap();
        let e_inv = law.expect(64, |s| 1.0 / s);
        assert!((tv.double_integral_term - C64::new(e_inv, 0.0)).norm() < 1e-7);
        let sq = -4.0 * PI * PI * 0.25;
        assert!((tv.squared_term - C64::new(sq, 0.0)).norm() < 1e-7);
    }

    #[test]
    fn refinement_differences_shrink() {
        let (field, _) = uniform_field(None);
        let edges = SupportEdges {
            l_minus: field.contour().l_minus,
            l_plus: field.contour().l_plus,
            x_plus: f64::NAN,
            x_minus: f64::NAN,
        };
        let d = field.contour().d;
        let mid = 0.5 * (edges.l_minus + edges.l_plus);
        let shipped = [
            TestFunction::Polynomial(vec![0.0, 0.0, 1.0]),
            TestFunction::Exponential(1.0),
            TestFunction::RationalShift(-1.0),
        ];
        for f in &shipped {
            let g = |xi: C64| f.eval(xi) / (xi - mid);
            let values: Vec<C64> = [16, 32, 64]
                .iter()
                .map(|&o| contour_integral(&build_contour(&edges, d, o).unwrap(), g).unwrap())
                .collect();
            let d1 = (values[1] - values[0]).norm();
            let d2 = (values[2] - values[1]).norm();
            assert!(d2 <= d1 || d2 < 1e-13, "{f}: {d1:e} then {d2:e}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use std::sync::OnceLock;

        fn shared() -> &'static (ContourField, PopulationLaw) {
            static FIELD: OnceLock<(ContourField, PopulationLaw)> = OnceLock::new();
            FIELD.get_or_init(|| uniform_field(None))
        }

        fn test_function() -> impl Strategy<Value = TestFunction> {
            prop_oneof![
                proptest::collection::vec(-2.0f64..2.0, 1..5).prop_map(TestFunction::Polynomial),
                (-2.0f64..2.0).prop_map(TestFunction::Exponential),
                (-5.0f64..-0.2).prop_map(TestFunction::RationalShift),
            ]
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn outputs_are_real_and_variance_nonnegative(f in test_function(), sigma in 0.5f64..1.0) {
                let (field, law) = shared();
                prop_assert!(field.f_sigma_complex(&f, sigma).unwrap().im.abs() < 1e-7);
                prop_assert!(field.mean_statistic(&f).is_ok());
                prop_assert!(field.clt_variance(law, 0.5, &f).unwrap() >= -1e-12);
            }

            #[test]
            fn denominator_bounded_away(sigma in 0.5f64..1.0) {
                prop_assert!(shared().0.min_denominator(sigma) > 1e-4);
            }
        }
    }
}
