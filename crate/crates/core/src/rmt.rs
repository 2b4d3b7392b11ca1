//! Sampling the data matrix `X`, spectra of `XᵀΣX`, empirical Stieltjes
//! transforms and rescaled linear eigenvalue statistics.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::contour::TestFunction;
use crate::error::{Error, Result};
use crate::freeconv::FreeConvolution;
use crate::measures::empirical_measure;

type C64 = Complex64;

/// Eigenvalues below this are rounding noise and get clamped to zero.
pub const NEGATIVE_CLAMP: f64 = 1e-10;
/// Largest dimension handled by the dense eigensolver.
pub const MAX_DIMENSION: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntryLaw {
    #[default]
    Gaussian,
    Rademacher,
    /// Uniform on `[-√3, √3]`.
    UniformSym,
}

impl EntryLaw {
    /// One draw with mean 0 and variance 1.
    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            EntryLaw::Gaussian => rng.sample(StandardNormal),
            EntryLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            EntryLaw::UniformSym => 3f64.sqrt() * (2.0 * rng.random::<f64>() - 1.0),
        }
    }
}

impl fmt::Display for EntryLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntryLaw::Gaussian => "gaussian",
            EntryLaw::Rademacher => "rademacher",
            EntryLaw::UniformSym => "uniform",
        })
    }
}

impl FromStr for EntryLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(EntryLaw::Gaussian),
            "rademacher" | "sign" => Ok(EntryLaw::Rademacher),
            "uniform" | "uniformsym" => Ok(EntryLaw::UniformSym),
            _ => Err(Error::usage(
                "entry_law",
                format!("expected gaussian | rademacher | uniform, got `{s}`"),
            )),
        }
    }
}

/// Shape and entry law of an `M×N` data matrix with entries of variance `1/N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataMatrixSpec {
    pub m: usize,
    pub n: usize,
    pub entry_law: EntryLaw,
}

impl DataMatrixSpec {
    pub fn new(m: usize, n: usize, entry_law: EntryLaw) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Invariant(format!("matrix shape {m}x{n} must be positive")));
        }
        if m.min(n) > MAX_DIMENSION {
            return Err(Error::Domain(format!(
                "min(M, N) = {} exceeds the dense eigensolver cap {MAX_DIMENSION}",
                m.min(n)
            )));
        }
        Ok(DataMatrixSpec { m, n, entry_law })
    }

    /// `M = round(γ₀ N)`.
    pub fn from_ratio(gamma0: f64, n: usize, entry_law: EntryLaw) -> Result<Self> {
        if !(gamma0.is_finite() && gamma0 > 0.0) {
            return Err(Error::Domain(format!("gamma0 = {gamma0} must be positive")));
        }
        let m = (gamma0 * n as f64).round() as usize;
        Self::new(m.max(1), n, entry_law)
    }

    pub fn ratio(&self) -> f64 {
        self.m as f64 / self.n as f64
    }
}

/// Draws `X` (`M×N`) with iid entries of the chosen law scaled by `N^{-1/2}`.
/// Entries are drawn row by row.
pub fn sample_data_matrix<R: Rng + ?Sized>(spec: &DataMatrixSpec, rng: &mut R) -> DMatrix<f64> {
    let scale = 1.0 / (spec.n as f64).sqrt();
    let mut x = DMatrix::zeros(spec.m, spec.n);
    for i in 0..spec.m {
        for j in 0..spec.n {
            x[(i, j)] = scale * spec.entry_law.draw(rng);
        }
    }
    x
}

/// The `N` eigenvalues of `XᵀΣX`, sorted descending.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSample {
    pub values: Vec<f64>,
    pub m: usize,
    pub n: usize,
}

impl EigenSample {
    pub fn nonzero(&self) -> &[f64] {
        &self.values[..self.m.min(self.n)]
    }
}

fn scaled_rows(sigma: &[f64], x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma.len() != x.nrows() {
        return Err(Error::Domain(format!(
            "{} population values for a matrix with {} rows",
            sigma.len(),
            x.nrows()
        )));
    }
    if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::Domain(format!("population value {s} must be positive")));
    }
    let mut y = x.clone();
    for (i, s) in sigma.iter().enumerate() {
        let r = s.sqrt();
        y.row_mut(i).scale_mut(r);
    }
    Ok(y)
}

/// Spectrum of `XᵀΣX` from the smaller Gram form, padded with zeros to `N`.
pub fn eigenvalues(sigma: &[f64], x: &DMatrix<f64>) -> Result<EigenSample> {
    let (m, n) = x.shape();
    let y = scaled_rows(sigma, x)?;
    let gram = if m <= n {
        &y * y.transpose()
    } else {
        y.transpose() * &y
    };
    let raw = gram.symmetric_eigenvalues();
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("eigensolver returned non-finite values".into()));
    }
    let mut values = Vec::with_capacity(n);
    for &v in raw.iter() {
        if v < -NEGATIVE_CLAMP {
            return Err(Error::Invariant(format!(
                "negative eigenvalue {v:e} of a positive semidefinite matrix"
            )));
        }
        values.push(v.max(0.0));
    }
    values.resize(n, 0.0);
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(EigenSample { values, m, n })
}

/// `tr(XᵀΣX) = Σ_i σ_i Σ_j X_ij²`, computed without an eigensolver.
pub fn trace_xtsx(sigma: &[f64], x: &DMatrix<f64>) -> f64 {
    sigma
        .iter()
        .enumerate()
        .map(|(i, s)| s * x.row(i).iter().map(|v| v * v).sum::<f64>())
        .sum()
}

/// `m_N(z) = N⁻¹ Σ (λ_i - z)⁻¹`.
pub fn empirical_stieltjes(e: &EigenSample, z: C64) -> Result<C64> {
    let mut acc = C64::new(0.0, 0.0);
    for &l in &e.values {
        let diff = C64::new(l, 0.0) - z;
        if diff.norm() == 0.0 {
            return Err(Error::Domain(format!("z = {z} is an eigenvalue")));
        }
        acc += diff.inv();
    }
    Ok(acc / e.n as f64)
}

/// The free convolution built from the realized population and ratio `M/N`.
pub fn hat_fc(sigma: &[f64], m: usize, n: usize) -> Result<FreeConvolution> {
    if sigma.is_empty() || n == 0 {
        return Err(Error::Domain("hat_fc needs a nonempty population".into()));
    }
    FreeConvolution::new(empirical_measure(sigma)?, m as f64 / n as f64)
}

/// `N^{-1/2} (Σ f(λ_i) - N ∫ f dμ_fc)` with
/// `∫ f dμ_fc = mean_inside + (1 - γ₀)⁺ f(0)`.
pub fn linear_statistic(e: &EigenSample, f: &TestFunction, mean_inside: f64, gamma0: f64) -> f64 {
    let n = e.n as f64;
    if f.is_constant() {
        // μ_fc has total mass 1, so Σ f(λ_i) = N ∫ f dμ_fc exactly
        return 0.0;
    }
    let sum: f64 = e.values.iter().map(|&l| f.eval_real(l)).sum();
    let centre = mean_inside + (1.0 - gamma0).max(0.0) * f.eval_real(0.0);
    (sum - n * centre) / n.sqrt()
}
