//! Seeded Monte Carlo experiments: the CLT for linear statistics, the local
//! law, edge confinement and the `m̂_fc → m_fc` rate on the contour.
//!
//! Every replicate draws from its own ChaCha8 stream seeded by
//! [`replicate_seed`], so results do not depend on the worker count.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::contour::{build_contour, default_d, ContourField, TestFunction};
use crate::error::{Error, Result};
use crate::freeconv::FreeConvolution;
use crate::measures::PopulationLaw;
use crate::rmt::{
    eigenvalues, empirical_stieltjes, hat_fc, linear_statistic, sample_data_matrix, DataMatrixSpec,
    EigenSample, EntryLaw,
};

type C64 = Complex64;

pub const MIN_CLT_REPLICATES: usize = 100;
pub const MIN_N: usize = 50;
const KS_TERMS: usize = 100;
const DEGENERATE_VARIANCE: f64 = 1e-12;
/// Panel order of the contour used by the rate check.
const RATE_CONTOUR_ORDER: usize = 16;

pub const GATE_NOTES: &str = "variance gate |s2/V - 1| < k*sqrt(2/reps) and KS gate p > alpha \
are engineering thresholds for finite N; the limit theorem carries no finite-N rate";

/// SplitMix64 finalizer applied to `master + (index + 1) * golden`.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Pass/fail thresholds shared by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Width of the variance and mean bands in standard errors.
    pub sigmas: f64,
    pub ks_alpha: f64,
    pub local_law_bound: f64,
    pub rate_slope_lo: f64,
    pub rate_slope_hi: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            sigmas: 3.0,
            ks_alpha: 0.01,
            local_law_bound: 10.0,
            rate_slope_lo: -0.65,
            rate_slope_hi: -0.35,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub gamma0: f64,
    pub law: PopulationLaw,
    pub f: TestFunction,
    pub n_list: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub entry_law: EntryLaw,
    /// Contour offset; `None` uses `min(L_-/20, 0.05)`.
    pub d: Option<f64>,
    pub tolerances: Tolerances,
    /// Worker threads; 0 lets rayon decide.
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0.is_finite() && self.gamma0 > 0.0 && self.gamma0 != 1.0) {
            return Err(Error::Precondition(format!(
                "gamma0 = {} must lie in (0, inf) without 1",
                self.gamma0
            )));
        }
        if self.n_list.is_empty() {
            return Err(Error::Precondition("empty N list".into()));
        }
        if let Some(n) = self.n_list.iter().find(|&&n| n < MIN_N) {
            return Err(Error::Precondition(format!("N = {n} is below {MIN_N}")));
        }
        Ok(())
    }

    /// Flat key/value echo used in artifacts.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let n: Vec<String> = self.n_list.iter().map(|n| n.to_string()).collect();
        let mut map = BTreeMap::new();
        map.insert("gamma0".into(), self.gamma0.to_string());
        map.insert("nu".into(), self.law.name().to_string());
        map.insert("f".into(), self.f.to_string());
        map.insert("n".into(), n.join(","));
        map.insert("reps".into(), self.replicates.to_string());
        map.insert("seed".into(), self.seed.to_string());
        map.insert("entry_law".into(), self.entry_law.to_string());
        if let Some(d) = self.d {
            map.insert("d".into(), d.to_string());
        }
        map
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Numerical(format!("worker pool: {e}")))
}

/// Runs `job` for every index on the pool; the first failing index aborts.
fn run_replicates<T, F>(workers: usize, count: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> =
        pool(workers)?.install(|| (0..count).into_par_iter().map(&job).collect());
    results
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Replicate {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// One-sample Kolmogorov–Smirnov test against `N(0, variance)`.
/// Returns `(D_n, p)` with `p` from the asymptotic Kolmogorov law.
pub fn ks_normality(samples: &[f64], variance: f64) -> Result<(f64, f64)> {
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Domain(format!("variance {variance} must be positive")));
    }
    if samples.len() < MIN_CLT_REPLICATES {
        return Err(Error::Precondition(format!(
            "KS test needs at least {MIN_CLT_REPLICATES} samples, got {}",
            samples.len()
        )));
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = normal.cdf(x);
            (c - i as f64 / n).max((i + 1) as f64 / n - c)
        })
        .fold(0.0, f64::max);
    Ok((d, kolmogorov_sf(n.sqrt() * d)))
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.0 {
        // theta-function form, fast for small λ
        let s: f64 = (1..=KS_TERMS)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (-j * j * PI * PI / (8.0 * lambda * lambda)).exp()
            })
            .sum();
        1.0 - (2.0 * PI).sqrt() / lambda * s
    } else {
        2.0 * (1..=KS_TERMS)
            .map(|k| {
                let k = k as f64;
                let sign = if k as usize % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * k * k * lambda * lambda).exp()
            })
            .sum::<f64>()
    };
    p.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub config: BTreeMap<String, String>,
    pub n: usize,
    pub m: usize,
    pub samples: Vec<f64>,
    pub seeds: Vec<u64>,
    pub mean: f64,
    pub empirical_variance: f64,
    pub theoretical_variance: f64,
    pub ks_statistic: Option<f64>,
    pub ks_pvalue: Option<f64>,
    pub variance_gate: bool,
    pub ks_gate: bool,
    /// `|mean| < k √(V / reps)`; reported, not part of `pass`.
    pub mean_gate: bool,
    pub degenerate_variance: bool,
    pub pass: bool,
    pub seed: u64,
    pub notes: String,
}

fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Fixed inputs of one CLT run shared by all replicates.
struct CltContext {
    spec: DataMatrixSpec,
    law: PopulationLaw,
    f: TestFunction,
    mean_inside: f64,
    gamma0: f64,
}

impl CltContext {
    fn replicate(&self, seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = self.law.sample(self.spec.m, &mut rng)?;
        let x = sample_data_matrix(&self.spec, &mut rng);
        let e = eigenvalues(&sigma, &x)?;
        Ok(linear_statistic(&e, &self.f, self.mean_inside, self.gamma0))
    }
}

/// The CLT experiment at the single `N` of `cfg.n_list`.
pub fn run_clt_experiment(cfg: &ExperimentConfig) -> Result<CltReport> {
    cfg.validate()?;
    if cfg.n_list.len() != 1 {
        return Err(Error::Precondition(format!(
            "a CLT run takes exactly one N, got {:?}",
            cfg.n_list
        )));
    }
    if cfg.replicates < MIN_CLT_REPLICATES {
        return Err(Error::Precondition(format!(
            "CLT runs need at least {MIN_CLT_REPLICATES} replicates, got {}",
            cfg.replicates
        )));
    }
    let n = cfg.n_list[0];
    let spec = DataMatrixSpec::from_ratio(cfg.gamma0, n, cfg.entry_law)?;
    let fc = FreeConvolution::new(cfg.law.measure()?, cfg.gamma0)?;
    let edges = fc.support_edges();
    let contour = build_contour(&edges, cfg.d.unwrap_or_else(|| default_d(&edges)), crate::contour::DEFAULT_ORDER)?;
    let field = ContourField::new(&fc, contour)?;
    let theoretical = field.clt_variance(&cfg.law, cfg.gamma0, &cfg.f)?;
    let ctx = CltContext {
        spec,
        law: cfg.law.clone(),
        f: cfg.f.clone(),
        mean_inside: field.mean_statistic(&cfg.f)?,
        gamma0: cfg.gamma0,
    };
    let seeds: Vec<u64> = (0..cfg.replicates as u64)
        .map(|i| replicate_seed(cfg.seed, i))
        .collect();
    let samples = run_replicates(cfg.workers, seeds.len(), |i| ctx.replicate(seeds[i]))?;
    let (mean, empirical) = mean_and_variance(&samples);
    let tol = cfg.tolerances;
    let reps = cfg.replicates as f64;
    let degenerate = theoretical <= DEGENERATE_VARIANCE;
    let (ks_statistic, ks_pvalue, variance_gate, ks_gate, mean_gate) = if degenerate {
        let zero = samples.iter().all(|&s| s == 0.0);
        (None, None, zero, zero, zero)
    } else {
        let (d, p) = ks_normality(&samples, theoretical)?;
        (
            Some(d),
            Some(p),
            (empirical / theoretical - 1.0).abs() < tol.sigmas * (2.0 / reps).sqrt(),
            p > tol.ks_alpha,
            mean.abs() < tol.sigmas * (theoretical / reps).sqrt(),
        )
    };
    Ok(CltReport {
        config: cfg.to_pairs(),
        n,
        m: spec.m,
        samples,
        seeds,
        mean,
        empirical_variance: empirical,
        theoretical_variance: theoretical,
        ks_statistic,
        ks_pvalue,
        variance_gate,
        ks_gate,
        mean_gate,
        degenerate_variance: degenerate,
        pass: variance_gate && ks_gate,
        seed: cfg.seed,
        notes: GATE_NOTES.into(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LocalLawReport {
    pub n: usize,
    pub tau: f64,
    pub epsilon: f64,
    /// `max |m_N - m̂_fc| N η / N^ε` over the evaluated lattice points.
    pub max_ratio: f64,
    pub argmax: (f64, f64),
    pub points: usize,
    pub skipped: Vec<(f64, f64)>,
    pub bound: f64,
    pub pass: bool,
}

/// Lattice of `40` energies in `[τ, 1/τ]` and `20` log-spaced `η` in
/// `[N^{-1+τ}, 1/τ]`, keeping points with `|z| ≥ τ`.
pub fn local_law_lattice(n: usize, tau: f64) -> Vec<(f64, Vec<f64>)> {
    let e_lo = tau;
    let e_hi = 1.0 / tau;
    let eta_lo = (n as f64).powf(-1.0 + tau);
    let eta_hi = 1.0 / tau;
    let etas: Vec<f64> = (0..20)
        .map(|j| (eta_hi.ln() + (eta_lo.ln() - eta_hi.ln()) * j as f64 / 19.0).exp())
        .collect();
    (0..40)
        .map(|i| {
            let e = e_lo + (e_hi - e_lo) * i as f64 / 39.0;
            let col = etas
                .iter()
                .copied()
                .filter(|&eta| e.hypot(eta) >= tau)
                .collect();
            (e, col)
        })
        .collect()
}

/// Compares `m_N` with `m̂_fc` over the local-law lattice. `η` runs from
/// large to small in each column so each solve warm-starts from the last.
pub fn check_local_law(sigma: &[f64], x: &DMatrix<f64>, tau: f64, epsilon: f64) -> Result<LocalLawReport> {
    if !(tau > 0.0 && tau < 0.5) {
        return Err(Error::Precondition(format!("tau = {tau} must lie in (0, 0.5)")));
    }
    let (m, n) = x.shape();
    let e = eigenvalues(sigma, x)?;
    let fc = hat_fc(sigma, m, n)?;
    local_law_from(&e, &fc, tau, epsilon)
}

pub fn local_law_from(e: &EigenSample, fc: &FreeConvolution, tau: f64, epsilon: f64) -> Result<LocalLawReport> {
    let nf = e.n as f64;
    let scale = nf.powf(epsilon);
    let mut max_ratio = 0.0;
    let mut argmax = (f64::NAN, f64::NAN);
    let mut points = 0;
    let mut skipped = Vec::new();
    for (energy, etas) in local_law_lattice(e.n, tau) {
        let mut guess: Option<C64> = None;
        for eta in etas {
            let z = C64::new(energy, eta);
            let solved = match guess {
                Some(g) => fc.stieltjes_from(z, g),
                None => fc.stieltjes(z),
            };
            let hat = match solved {
                Ok(v) => v,
                Err(_) => {
                    skipped.push((energy, eta));
                    guess = None;
                    continue;
                }
            };
            guess = Some(hat);
            let ratio = (empirical_stieltjes(e, z)? - hat).norm() * nf * eta / scale;
            points += 1;
            if ratio > max_ratio {
                max_ratio = ratio;
                argmax = (energy, eta);
            }
        }
    }
    let bound = Tolerances::default().local_law_bound;
    Ok(LocalLawReport {
        n: e.n,
        tau,
        epsilon,
        max_ratio,
        argmax,
        points,
        pass: max_ratio <= bound,
        skipped,
        bound,
    })
}

/// True iff every nonzero eigenvalue lies in `[L_- - ε, L_+ + ε]` of `fc_hat`.
pub fn check_edges(e: &EigenSample, fc_hat: &FreeConvolution, epsilon: f64) -> Result<bool> {
    if !(epsilon > 0.0) {
        return Err(Error::Precondition(format!("epsilon = {epsilon} must be positive")));
    }
    let edges = fc_hat.support_edges();
    let lo = edges.l_minus - epsilon;
    let hi = edges.l_plus + epsilon;
    Ok(e.nonzero().iter().all(|&l| l >= lo && l <= hi))
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeReport {
    pub n: usize,
    pub epsilon: f64,
    pub replicates: usize,
    pub inside: usize,
    pub required: usize,
    pub pass: bool,
}

/// Seeded edge-confinement frequency over `cfg.replicates` draws at the
/// single `N` of `cfg.n_list`; passes when at least 99% stay inside.
pub fn run_edge_experiment(cfg: &ExperimentConfig, epsilon: f64) -> Result<EdgeReport> {
    cfg.validate()?;
    let n = cfg.n_list[0];
    let spec = DataMatrixSpec::from_ratio(cfg.gamma0, n, cfg.entry_law)?;
    let flags = run_replicates(cfg.workers, cfg.replicates, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(cfg.seed, i as u64));
        let sigma = cfg.law.sample(spec.m, &mut rng)?;
        let x = sample_data_matrix(&spec, &mut rng);
        let e = eigenvalues(&sigma, &x)?;
        check_edges(&e, &hat_fc(&sigma, spec.m, spec.n)?, epsilon)
    })?;
    let inside = flags.iter().filter(|&&b| b).count();
    let required = (0.99 * cfg.replicates as f64).ceil() as usize;
    Ok(EdgeReport {
        n,
        epsilon,
        replicates: cfg.replicates,
        inside,
        required,
        pass: inside >= required,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub n_list: Vec<usize>,
    /// Average over replicates of `sup_Γ |m̂_fc - m_fc|`, per `N`.
    pub averages: Vec<f64>,
    pub slope: Option<f64>,
    pub band: (f64, f64),
    /// A Dirac population leaves only the `M/N` rounding, so the rate
    /// is not exercised.
    pub degenerate: bool,
    pub pass: bool,
    pub seed: u64,
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Slope of `log avg sup_Γ |m̂_fc - m_fc|` against `log N`.
pub fn check_hat_rate(
    law: &PopulationLaw,
    gamma0: f64,
    n_list: &[usize],
    reps: usize,
    seed: u64,
    workers: usize,
) -> Result<RateReport> {
    let lo = n_list.iter().copied().min().unwrap_or(0);
    let hi = n_list.iter().copied().max().unwrap_or(0);
    if n_list.len() < 3 || lo == 0 || hi < 4 * lo {
        return Err(Error::Precondition(format!(
            "rate check needs at least 3 values of N with max/min >= 4, got {n_list:?}"
        )));
    }
    if reps == 0 {
        return Err(Error::Precondition("rate check needs replicates".into()));
    }
    let band = (Tolerances::default().rate_slope_lo, Tolerances::default().rate_slope_hi);
    if law.is_degenerate() {
        return Ok(RateReport {
            n_list: n_list.to_vec(),
            averages: Vec::new(),
            slope: None,
            band,
            degenerate: true,
            pass: false,
            seed,
        });
    }
    let fc = FreeConvolution::new(law.measure()?, gamma0)?;
    let edges = fc.support_edges();
    let contour = build_contour(&edges, default_d(&edges), RATE_CONTOUR_ORDER)?;
    let field = ContourField::new(&fc, contour)?;
    let jobs: Vec<(usize, usize)> = (0..n_list.len())
        .flat_map(|k| (0..reps).map(move |r| (k, r)))
        .collect();
    let sups = run_replicates(workers, jobs.len(), |j| {
        let (k, r) = jobs[j];
        let n = n_list[k];
        let m = ((gamma0 * n as f64).round() as usize).max(1);
        let index = (k * reps + r) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(seed, index));
        let sigma = law.sample(m, &mut rng)?;
        let hat = hat_fc(&sigma, m, n)?;
        let mut sup: f64 = 0.0;
        for (xi, mv, _, _) in field.iter() {
            sup = sup.max((hat.stieltjes_from(xi, mv)? - mv).norm());
        }
        Ok(sup)
    })?;
    let averages: Vec<f64> = sups
        .chunks(reps)
        .map(|c| c.iter().sum::<f64>() / reps as f64)
        .collect();
    let lx: Vec<f64> = n_list.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = averages.iter().map(|a| a.ln()).collect();
    let slope = ls_slope(&lx, &ly);
    Ok(RateReport {
        n_list: n_list.to_vec(),
        averages,
        slope: Some(slope),
        band,
        degenerate: false,
        pass: slope >= band.0 && slope <= band.1,
        seed,
    })
}
