//! Probability measures on `[0, ∞)`: population laws, empirical measures and
//! the absolutely continuous measures used as bases of free convolutions.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Tolerance on total mass for every constructed measure.
pub const MASS_TOL: f64 = 1e-9;

const ADAPTIVE_START: usize = 32;
const ADAPTIVE_CAP: usize = 1 << 12;
const ADAPTIVE_RTOL: f64 = 1e-10;

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub location: f64,
    pub weight: f64,
}

#[derive(Clone)]
enum Kind {
    Discrete(Vec<Atom>),
    AbsContinuous {
        lo: f64,
        hi: f64,
        density: RealFn,
        zero_atom: f64,
    },
}

/// A probability measure that is either a finite sum of atoms or a density
/// on a compact interval plus an optional atom at zero.
#[derive(Clone)]
pub struct SpectralMeasure {
    kind: Kind,
}

impl fmt::Debug for SpectralMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::Discrete(atoms) => f
                .debug_struct("Discrete")
                .field("atoms", &atoms.len())
                .finish(),
            Kind::AbsContinuous { lo, hi, zero_atom, .. } => f
                .debug_struct("AbsContinuous")
                .field("lo", lo)
                .field("hi", hi)
                .field("zero_atom", zero_atom)
                .finish(),
        }
    }
}

impl SpectralMeasure {
    /// Builds a discrete measure. Atoms are sorted by location and exact
    /// duplicates merged.
    pub fn discrete(mut atoms: Vec<Atom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Domain("discrete measure needs at least one atom".into()));
        }
        for a in &atoms {
            if !a.location.is_finite() || a.location < 0.0 {
                return Err(Error::Invariant(format!(
                    "atom location {} must be finite and nonnegative",
                    a.location
                )));
            }
            if !(a.weight > 0.0) || !a.weight.is_finite() {
                return Err(Error::Invariant(format!(
                    "atom weight {} must be positive",
                    a.weight
                )));
            }
        }
        atoms.sort_by(|a, b| a.location.total_cmp(&b.location));
        let mut merged: Vec<Atom> = Vec::with_capacity(atoms.len());
        for a in atoms {
            match merged.last_mut() {
                Some(last) if last.location == a.location => last.weight += a.weight,
                _ => merged.push(a),
            }
        }
        let total: f64 = merged.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::Invariant(format!("atom weights sum to {total}, not 1")));
        }
        Ok(SpectralMeasure {
            kind: Kind::Discrete(merged),
        })
    }

    pub fn dirac(location: f64) -> Result<Self> {
        Self::discrete(vec![Atom {
            location,
            weight: 1.0,
        }])
    }

    /// Density on `[lo, hi]` carrying mass `1 - zero_atom`, plus `zero_atom`
    /// at the origin.
    pub fn absolutely_continuous(
        lo: f64,
        hi: f64,
        density: RealFn,
        zero_atom: f64,
    ) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi <= lo {
            return Err(Error::Invariant(format!(
                "support [{lo}, {hi}] must be a finite nondegenerate interval in [0, inf)"
            )));
        }
        if !(0.0..=1.0).contains(&zero_atom) {
            return Err(Error::Invariant(format!("zero atom {zero_atom} outside [0, 1]")));
        }
        let measure = SpectralMeasure {
            kind: Kind::AbsContinuous {
                lo,
                hi,
                density,
                zero_atom,
            },
        };
        let mass = measure.total_mass()?;
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Invariant(format!("total mass {mass} differs from 1")));
        }
        Ok(measure)
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        let h = 1.0 / (b - a);
        Self::absolutely_continuous(a, b, Arc::new(move |_| h), 0.0)
    }

    pub fn atoms(&self) -> Option<&[Atom]> {
        match &self.kind {
            Kind::Discrete(atoms) => Some(atoms),
            Kind::AbsContinuous { .. } => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, Kind::Discrete(_))
    }

    pub fn zero_atom(&self) -> f64 {
        match &self.kind {
            Kind::Discrete(atoms) => atoms
                .iter()
                .filter(|a| a.location == 0.0)
                .map(|a| a.weight)
                .sum(),
            Kind::AbsContinuous { zero_atom, .. } => *zero_atom,
        }
    }

    /// Smallest and largest point of the support, ignoring an atom at zero
    /// of an absolutely continuous measure.
    pub fn support(&self) -> (f64, f64) {
        match &self.kind {
            Kind::Discrete(atoms) => (atoms[0].location, atoms[atoms.len() - 1].location),
            Kind::AbsContinuous { lo, hi, .. } => (*lo, *hi),
        }
    }

    pub fn total_mass(&self) -> Result<f64> {
        Ok(self.integrate(|_| Complex64::new(1.0, 0.0))?.re)
    }

    /// `∫ g dμ`. The density part uses Gauss–Legendre with the order doubled
    /// from 32 until the relative change drops below 1e-10 (cap 4096).
    pub fn integrate<G>(&self, g: G) -> Result<Complex64>
    where
        G: Fn(f64) -> Complex64,
    {
        let eval = |t: f64| -> Result<Complex64> {
            let v = g(t);
            if v.re.is_finite() && v.im.is_finite() {
                Ok(v)
            } else {
                Err(Error::Domain(format!("integrand is not finite at node t = {t}")))
            }
        };
        match &self.kind {
            Kind::Discrete(atoms) => atoms
                .iter()
                .try_fold(Complex64::new(0.0, 0.0), |acc, a| Ok(acc + a.weight * eval(a.location)?)),
            Kind::AbsContinuous {
                lo,
                hi,
                density,
                zero_atom,
            } => {
                let panel = |n: usize| -> Result<Complex64> {
                    GaussLegendre::get(n)
                        .mapped(*lo, *hi)
                        .try_fold(Complex64::new(0.0, 0.0), |acc, (t, w)| {
                            Ok(acc + w * density(t) * eval(t)?)
                        })
                };
                let mut n = ADAPTIVE_START;
                let mut prev = panel(n)?;
                while n < ADAPTIVE_CAP {
                    n *= 2;
                    let next = panel(n)?;
                    let change = (next - prev).norm();
                    prev = next;
                    if change <= ADAPTIVE_RTOL * next.norm() || change < 1e-300 {
                        break;
                    }
                }
                let atom = if *zero_atom > 0.0 {
                    *zero_atom * eval(0.0)?
                } else {
                    Complex64::new(0.0, 0.0)
                };
                Ok(prev + atom)
            }
        }
    }

    /// `∫ t^k dμ` for `k ≤ 8`.
    pub fn moment(&self, k: u32) -> Result<f64> {
        if k > 8 {
            return Err(Error::Precondition(format!("moment order {k} exceeds 8")));
        }
        let v = self.integrate(|t| Complex64::new(t.powi(k as i32), 0.0))?;
        debug_assert!(v.im.abs() < 1e-12);
        Ok(v.re)
    }

    /// A fixed weighted point set representing the measure away from zero:
    /// the atoms themselves, or an `n`-point Gauss–Legendre rule against
    /// the density. Atoms at zero are dropped since every integrand built
    /// on this rule carries a factor `t`.
    pub fn rule(&self, n: usize) -> Vec<(f64, f64)> {
        match &self.kind {
            Kind::Discrete(atoms) => atoms
                .iter()
                .filter(|a| a.location > 0.0)
                .map(|a| (a.location, a.weight))
                .collect(),
            Kind::AbsContinuous { lo, hi, density, .. } => GaussLegendre::get(n)
                .mapped(*lo, *hi)
                .map(|(t, w)| (t, w * density(t)))
                .collect(),
        }
    }
}

/// The empirical measure `(1/M) Σ δ_{x_i}` of a sample.
pub fn empirical_measure(samples: &[f64]) -> Result<SpectralMeasure> {
    if samples.is_empty() {
        return Err(Error::Domain("empirical measure of an empty sample".into()));
    }
    let w = 1.0 / samples.len() as f64;
    let atoms = samples
        .iter()
        .map(|&location| Atom {
            location,
            weight: w,
        })
        .collect();
    SpectralMeasure::discrete(atoms)
}

#[derive(Clone)]
enum LawKind {
    Dirac(f64),
    Uniform,
    /// Density `(1 + slope (u - 1/2)) / (b - a)` with `u = (x - a)/(b - a)`.
    Linear { slope: f64 },
    Custom { density: RealFn, quantile: RealFn },
}

/// A population law `ν` for the diagonal entries of `Σ`, given by its
/// density on `[lo, hi]` and its quantile function.
///
/// The degenerate `Dirac` law is allowed so the deterministic-population
/// case can be run through the same machinery.
#[derive(Clone)]
pub struct PopulationLaw {
    kind: LawKind,
    lo: f64,
    hi: f64,
    density_lo: f64,
    density_hi: f64,
    name: String,
}

impl fmt::Debug for PopulationLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PopulationLaw({})", self.name)
    }
}

impl PopulationLaw {
    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        check_interval(a, b)?;
        let h = 1.0 / (b - a);
        Ok(PopulationLaw {
            kind: LawKind::Uniform,
            lo: a,
            hi: b,
            density_lo: h,
            density_hi: h,
            name: format!("uniform:{a},{b}"),
        })
    }

    /// Truncated linear density on `[a, b]`; `slope ∈ (-2, 2)` keeps it
    /// bounded away from zero.
    pub fn linear(a: f64, b: f64, slope: f64) -> Result<Self> {
        check_interval(a, b)?;
        if !(slope.abs() < 2.0) {
            return Err(Error::Invariant(format!(
                "linear law slope {slope} must lie in (-2, 2)"
            )));
        }
        let h = 1.0 / (b - a);
        Ok(PopulationLaw {
            kind: LawKind::Linear { slope },
            lo: a,
            hi: b,
            density_lo: h * (1.0 - 0.5 * slope.abs()),
            density_hi: h * (1.0 + 0.5 * slope.abs()),
            name: format!("linear:{a},{b},{slope}"),
        })
    }

    pub fn dirac(c: f64) -> Result<Self> {
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::Invariant(format!("dirac location {c} must be positive")));
        }
        Ok(PopulationLaw {
            kind: LawKind::Dirac(c),
            lo: c,
            hi: c,
            density_lo: f64::INFINITY,
            density_hi: f64::INFINITY,
            name: format!("dirac:{c}"),
        })
    }

    /// A user-supplied law. The density is checked against its declared
    /// bounds on a grid and for unit mass.
    pub fn custom(
        lo: f64,
        hi: f64,
        density: RealFn,
        quantile: RealFn,
        density_lo: f64,
        density_hi: f64,
    ) -> Result<Self> {
        check_interval(lo, hi)?;
        if !(0.0 < density_lo && density_lo <= density_hi && density_hi.is_finite()) {
            return Err(Error::Invariant(format!(
                "density bounds [{density_lo}, {density_hi}] must satisfy 0 < lo <= hi < inf"
            )));
        }
        for i in 0..=1000 {
            let x = lo + (hi - lo) * i as f64 / 1000.0;
            let p = density(x);
            if !(density_lo <= p && p <= density_hi) {
                return Err(Error::Invariant(format!(
                    "density({x}) = {p} outside [{density_lo}, {density_hi}]"
                )));
            }
        }
        let law = PopulationLaw {
            kind: LawKind::Custom { density, quantile },
            lo,
            hi,
            density_lo,
            density_hi,
            name: "custom".into(),
        };
        let mass = law.measure()?.total_mass()?;
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::Invariant(format!("density integrates to {mass}")));
        }
        Ok(law)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn density_bounds(&self) -> (f64, f64) {
        (self.density_lo, self.density_hi)
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.kind, LawKind::Dirac(_))
    }

    /// Density at `x`; zero outside the support. Not defined for `Dirac`.
    pub fn density(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return 0.0;
        }
        let h = 1.0 / (self.hi - self.lo);
        match &self.kind {
            LawKind::Dirac(_) => f64::INFINITY,
            LawKind::Uniform => h,
            LawKind::Linear { slope } => {
                let u = (x - self.lo) * h;
                h * (1.0 + slope * (u - 0.5))
            }
            LawKind::Custom { density, .. } => density(x),
        }
    }

    pub fn quantile(&self, p: f64) -> f64 {
        let width = self.hi - self.lo;
        match &self.kind {
            LawKind::Dirac(c) => *c,
            LawKind::Uniform => self.lo + width * p,
            LawKind::Linear { slope } => {
                // F(u) = u + slope (u^2 - u) / 2, inverted in the cancellation-free form
                let b = 1.0 - 0.5 * slope;
                let u = 2.0 * p / (b + (b * b + 2.0 * slope * p).sqrt());
                self.lo + width * u
            }
            LawKind::Custom { quantile, .. } => quantile(p),
        }
    }

    /// The law as a [`SpectralMeasure`].
    pub fn measure(&self) -> Result<SpectralMeasure> {
        match &self.kind {
            LawKind::Dirac(c) => SpectralMeasure::dirac(*c),
            _ => {
                let law = self.clone();
                SpectralMeasure::absolutely_continuous(
                    self.lo,
                    self.hi,
                    Arc::new(move |x| law.density(x)),
                    0.0,
                )
            }
        }
    }

    /// `E_ν[g]` by an `n`-point Gauss–Legendre rule against the density.
    pub fn expect<G: FnMut(f64) -> f64>(&self, n: usize, mut g: G) -> f64 {
        self.quadrature(n).into_iter().map(|(t, w)| w * g(t)).sum()
    }

    /// `(t, w)` pairs with `Σ w g(t) ≈ E g(σ)`; a single node for a Dirac law.
    pub fn quadrature(&self, n: usize) -> Vec<(f64, f64)> {
        match &self.kind {
            LawKind::Dirac(c) => vec![(*c, 1.0)],
            _ => GaussLegendre::get(n)
                .mapped(self.lo, self.hi)
                .map(|(t, w)| (t, w * self.density(t)))
                .collect(),
        }
    }

    /// Draws `m` iid values by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Vec<f64>> {
        sample_population(self, m, rng)
    }
}

impl std::str::FromStr for PopulationLaw {
    type Err = Error;

    /// `dirac:c`, `uniform:a,b` or `linear:a,b,slope`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: &str| {
            Error::usage(
                "nu",
                format!("{msg} (expected dirac:c | uniform:a,b | linear:a,b,slope), got `{s}`"),
            )
        };
        let (kind, args) = s.split_once(':').ok_or_else(|| bad("missing `:`"))?;
        let nums: Vec<f64> = args
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("unparsable number"))?;
        let law = match (kind, nums.as_slice()) {
            ("dirac", [c]) => PopulationLaw::dirac(*c),
            ("uniform", [a, b]) => PopulationLaw::uniform(*a, *b),
            ("linear", [a, b, slope]) => PopulationLaw::linear(*a, *b, *slope),
            _ => return Err(bad("unknown law or wrong arity")),
        };
        law.map_err(|e| Error::usage("nu", e.to_string()))
    }
}

fn check_interval(a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && a > 0.0 && b > a) {
        return Err(Error::Invariant(format!(
            "population support [{a}, {b}] must satisfy 0 < a < b < inf"
        )));
    }
    Ok(())
}

/// `M` iid draws from `law`, via its quantile function applied to uniform
/// variates from `rng`.
pub fn sample_population<R: Rng + ?Sized>(
    law: &PopulationLaw,
    m: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::Precondition("population size must be at least 1".into()));
    }
    (0..m)
        .map(|_| {
            let u: f64 = rng.random();
            let x = law.quantile(u);
            if x >= law.lo && x <= law.hi {
                Ok(x)
            } else {
                Err(Error::Invariant(format!(
                    "quantile({u}) = {x} outside [{}, {}]",
                    law.lo, law.hi
                )))
            }
        })
        .collect()
}
