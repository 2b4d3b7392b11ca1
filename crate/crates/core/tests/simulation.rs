//! Seeded simulation checks against the limiting law.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rmtclt::freeconv::FreeConvolution;
use rmtclt::measures::{empirical_measure, PopulationLaw, SpectralMeasure};
use rmtclt::quadrature::GaussLegendre;
use rmtclt::rmt::{eigenvalues, empirical_stieltjes, hat_fc, sample_data_matrix, DataMatrixSpec, EntryLaw};
use rmtclt::verify::{check_local_law, replicate_seed};

type C64 = Complex64;

fn uniform() -> PopulationLaw {
    PopulationLaw::uniform(0.5, 1.0).unwrap()
}

#[test]
fn empirical_moments_converge() {
    let law = uniform();
    let nu = law.measure().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let gap = |m: usize, rng: &mut ChaCha8Rng| {
        let mu = empirical_measure(&law.sample(m, rng).unwrap()).unwrap();
        (1..=4)
            .map(|k| (mu.moment(k).unwrap() - nu.moment(k).unwrap()).abs())
            .fold(0.0, f64::max)
    };
    let small = gap(1_000, &mut rng);
    let large = gap(100_000, &mut rng);
    assert!(large < small, "{small} -> {large}");
}

#[test]
fn realized_edges_approach_limit_edges() {
    let law = uniform();
    let limit = FreeConvolution::new(law.measure().unwrap(), 0.5).unwrap().support_edges();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut gaps = Vec::new();
    // mean over a few draws, single draws are too noisy to order
    for m in [100usize, 1_000, 10_000] {
        let draws = 20;
        let mut total = 0.0;
        for _ in 0..draws {
            let sigma = law.sample(m, &mut rng).unwrap();
            let e = hat_fc(&sigma, m, 2 * m).unwrap().support_edges();
            total += (e.l_minus - limit.l_minus).abs().max((e.l_plus - limit.l_plus).abs());
        }
        gaps.push(total / draws as f64);
    }
    assert!(gaps[1] < 0.1, "{gaps:?}");
    assert!(gaps[2] < 0.05, "{gaps:?}");
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

/// CDF of the absolutely continuous part, normalized to mass 1, tabulated
/// on `[L_-, L_+]` through `x = L_- + (L_+ - L_-)(1 - cos θ)/2`.
fn ac_cdf(fc: &FreeConvolution) -> impl Fn(f64) -> f64 {
    let e = fc.support_edges();
    let half = 0.5 * (e.l_plus - e.l_minus);
    let steps = 2000;
    let mut xs = vec![e.l_minus];
    let mut cdf = vec![0.0];
    let rule = GaussLegendre::get(8);
    for k in 0..steps {
        let (a, b) = (PI * k as f64 / steps as f64, PI * (k + 1) as f64 / steps as f64);
        let piece: f64 = rule
            .mapped(a, b)
            .map(|(th, w)| {
                let x = e.l_minus + half * (1.0 - th.cos());
                w * half * th.sin() * fc.density(x).unwrap().value
            })
            .sum();
        xs.push(e.l_minus + half * (1.0 - b.cos()));
        cdf.push(cdf[k] + piece);
    }
    let total = *cdf.last().unwrap();
    move |x: f64| {
        if x <= xs[0] {
            return 0.0;
        }
        let i = xs.partition_point(|&v| v < x).min(xs.len() - 1);
        let t = (x - xs[i - 1]) / (xs[i] - xs[i - 1]);
        (cdf[i - 1] + t * (cdf[i] - cdf[i - 1])) / total
    }
}

#[test]
fn eigenvalue_cdf_distance_decreases() {
    let law = uniform();
    let fc = FreeConvolution::new(law.measure().unwrap(), 0.5).unwrap();
    let cdf = ac_cdf(&fc);
    let mut distances = Vec::new();
    for (seed, n) in [(31u64, 200usize), (32, 2000)] {
        let spec = DataMatrixSpec::from_ratio(0.5, n, EntryLaw::Gaussian).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = law.sample(spec.m, &mut rng).unwrap();
        let x = sample_data_matrix(&spec, &mut rng);
        let mut vals = eigenvalues(&sigma, &x).unwrap().nonzero().to_vec();
        vals.sort_by(|a, b| a.total_cmp(b));
        let k = vals.len() as f64;
        let d = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = cdf(v);
                (c - i as f64 / k).abs().max(((i + 1) as f64 / k - c).abs())
            })
            .fold(0.0, f64::max);
        distances.push(d);
    }
    assert!(distances[1] < distances[0], "{distances:?}");
}

#[test]
fn empirical_stieltjes_close_to_realized_law() {
    let law = uniform();
    let spec = DataMatrixSpec::from_ratio(0.5, 1000, EntryLaw::Gaussian).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(41, 0));
    let sigma = law.sample(spec.m, &mut rng).unwrap();
    let x = sample_data_matrix(&spec, &mut rng);
    let e = eigenvalues(&sigma, &x).unwrap();
    let fc = hat_fc(&sigma, spec.m, spec.n).unwrap();
    let z = C64::new(2.0, 1.0);
    let gap = (empirical_stieltjes(&e, z).unwrap() - fc.stieltjes(z).unwrap()).norm();
    assert!(gap < 5.0 * 1000f64.powf(-0.9), "{gap}");
    // easiest lattice point, η = 1/τ
    let eta = 10.0;
    for energy in [0.1, 1.0, 5.0, 10.0] {
        let z = C64::new(energy, eta);
        let gap = (empirical_stieltjes(&e, z).unwrap() - fc.stieltjes(z).unwrap()).norm();
        assert!(gap < 2.0 * 1000f64.powf(0.1 - 1.0) * 0.1, "{energy}: {gap}");
    }
}

#[test]
fn local_law_with_unit_population() {
    let spec = DataMatrixSpec::from_ratio(0.5, 1000, EntryLaw::Gaussian).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let x = sample_data_matrix(&spec, &mut rng);
    let sigma = vec![1.0; spec.m];
    let report = check_local_law(&sigma, &x, 0.1, 0.1).unwrap();
    assert!(report.pass && report.skipped.is_empty(), "{report:?}");
    // the realized law is the closed-form Marchenko–Pastur law here
    let mp = FreeConvolution::new(SpectralMeasure::dirac(1.0).unwrap(), 0.5).unwrap();
    let hat = hat_fc(&sigma, spec.m, spec.n).unwrap();
    let z = C64::new(1.3, 0.05);
    let closed = {
        let b = z + 0.5;
        let disc = (b * b - 4.0 * z).sqrt();
        let r1 = (-b + disc) / (2.0 * z);
        if r1.im > 0.0 { r1 } else { (-b - disc) / (2.0 * z) }
    };
    assert!((hat.stieltjes(z).unwrap() - closed).norm() < 1e-10);
    assert!((mp.stieltjes(z).unwrap() - closed).norm() < 1e-10);
}
