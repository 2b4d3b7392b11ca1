//! Command-line front end.
//!
//! Every subcommand takes flat `key=value` parameters, either as
//! `--key value` flags or from a `--config` file; flags win. The file holds
//! one `key=value` per line with `#` comments. A CSV artifact written by
//! this tool can be passed back as `--config`: its leading
//! `# rmtclt-config` block is read as the parameter set. So can a JSON
//! artifact, through its `config` object.
//!
//! Exit codes: 0 success, 1 error, 2 failed gate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgAction, Command as ClapCommand};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use crate::contour::{build_contour, default_d, ContourField, TestFunction};
use crate::error::{Error, Result};
use crate::freeconv::FreeConvolution;
use crate::measures::PopulationLaw;
use crate::rmt::{eigenvalues, sample_data_matrix, DataMatrixSpec, EntryLaw};
use crate::verify::{
    check_hat_rate, check_local_law, replicate_seed, run_clt_experiment, ExperimentConfig,
    Tolerances,
};

pub const WORKERS_ENV: &str = "RMTCLT_WORKERS";
pub const CONFIG_MARKER: &str = "# rmtclt-config";

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_GATE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Density,
    Edges,
    Variance,
    Simulate,
    Clt,
    LocalLaw,
    Rate,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Subcommand::Density,
        Subcommand::Edges,
        Subcommand::Variance,
        Subcommand::Simulate,
        Subcommand::Clt,
        Subcommand::LocalLaw,
        Subcommand::Rate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Density => "density",
            Subcommand::Edges => "edges",
            Subcommand::Variance => "variance",
            Subcommand::Simulate => "simulate",
            Subcommand::Clt => "clt",
            Subcommand::LocalLaw => "locallaw",
            Subcommand::Rate => "rate",
        }
    }

    fn about(self) -> &'static str {
        match self {
            Subcommand::Density => "density of the limiting law on a grid (CSV x,rho)",
            Subcommand::Edges => "support edges L_-, L_+ and the roots x_+, x_- (JSON)",
            Subcommand::Variance => "contour-integral CLT variance (JSON)",
            Subcommand::Simulate => "eigenvalues of one simulated X^T Sigma X",
            Subcommand::Clt => "Monte Carlo check of the CLT for a linear statistic",
            Subcommand::LocalLaw => "local law check over the spectral-domain lattice",
            Subcommand::Rate => "convergence rate of the realized free convolution on the contour",
        }
    }

    /// `(key, default, help)`; a `None` default marks a required key.
    fn keys(self) -> &'static [(&'static str, Option<&'static str>, &'static str)] {
        const OUT: (&str, Option<&str>, &str) = ("output", Some("."), "directory for artifacts");
        const G: (&str, Option<&str>, &str) = ("gamma0", None, "limit ratio M/N, positive and not 1");
        const NU: (&str, Option<&str>, &str) =
            ("nu", None, "population law: dirac:c | uniform:a,b | linear:a,b,slope");
        const F: (&str, Option<&str>, &str) = ("f", None, "test function: poly:c0,c1,... | exp:s | ratshift:p");
        const SEED: (&str, Option<&str>, &str) = ("seed", Some("1"), "master seed (u64)");
        const ENTRY: (&str, Option<&str>, &str) =
            ("entry_law", Some("gaussian"), "entry law of X: gaussian | rademacher | uniform");
        const D: (&str, Option<&str>, &str) = ("d", Some("auto"), "contour offset, auto = min(L_-/20, 0.05)");
        match self {
            Subcommand::Density => &[
                OUT,
                G,
                NU,
                ("grid", Some("200"), "number of grid points"),
                ("x_min", Some("auto"), "left end of the grid, auto = L_-"),
                ("x_max", Some("auto"), "right end of the grid, auto = L_+"),
                ("format", Some("csv"), "csv | json"),
            ],
            Subcommand::Edges => &[OUT, G, NU],
            Subcommand::Variance => &[
                OUT,
                G,
                NU,
                F,
                D,
                ("order", Some("32"), "Gauss-Legendre nodes per contour panel"),
            ],
            Subcommand::Simulate => &[
                OUT,
                G,
                NU,
                ("n", None, "matrix dimension N"),
                SEED,
                ENTRY,
                ("format", Some("csv"), "csv | json"),
            ],
            Subcommand::Clt => &[
                OUT,
                G,
                NU,
                F,
                ("n", None, "matrix dimension N"),
                ("reps", Some("2000"), "replicates"),
                SEED,
                ENTRY,
                D,
            ],
            Subcommand::LocalLaw => &[
                OUT,
                G,
                NU,
                ("n", Some("1000"), "matrix dimension N"),
                ("reps", Some("10"), "replicates"),
                ("tau", Some("0.1"), "spectral domain parameter in (0, 0.5)"),
                ("epsilon", Some("0.1"), "exponent slack"),
                SEED,
                ENTRY,
            ],
            Subcommand::Rate => &[
                OUT,
                G,
                NU,
                ("n", Some("250,500,1000,2000"), "comma-separated list of N"),
                ("reps", Some("50"), "replicates per N"),
                SEED,
            ],
        }
    }

    fn from_name(name: &str) -> Option<Subcommand> {
        Subcommand::ALL.into_iter().find(|s| s.name() == name)
    }
}

/// A subcommand with its fully resolved parameters (defaults filled in).
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub subcommand: Subcommand,
    pub params: BTreeMap<String, String>,
}

fn clap_command() -> ClapCommand {
    let mut cmd = ClapCommand::new("rmtclt")
        .about("Free convolutions, CLT variances and Monte Carlo checks for X^T Sigma X")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sub in Subcommand::ALL {
        let mut sc = ClapCommand::new(sub.name()).about(sub.about()).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value file or an artifact written by this tool"),
        );
        for &(key, default, help) in sub.keys() {
            let help = match default {
                Some(d) => format!("{help} [default: {d}]"),
                None => format!("{help} [required]"),
            };
            sc = sc.arg(
                Arg::new(key)
                    .long(key)
                    .value_name("VALUE")
                    .action(ArgAction::Set)
                    .help(help),
            );
        }
        cmd = cmd.subcommand(sc);
    }
    cmd
}

/// Reads parameters from a config file: plain `key=value` lines, the
/// `# rmtclt-config` block of a CSV artifact, or the `config` object of a
/// JSON artifact.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    if text.trim_start().starts_with('{') {
        let v: Value = serde_json::from_str(&text)?;
        let obj = v
            .get("config")
            .and_then(Value::as_object)
            .ok_or_else(|| Error::usage("config", "JSON file has no `config` object"))?;
        for (k, val) in obj {
            let s = match val {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            map.insert(k.clone(), s);
        }
        return Ok(map);
    }
    let mut lines = text.lines().peekable();
    if lines.peek().map(|l| l.trim()) == Some(CONFIG_MARKER) {
        lines.next();
        for line in lines {
            let Some(body) = line.strip_prefix('#') else { break };
            insert_pair(&mut map, body)?;
        }
        return Ok(map);
    }
    for line in lines {
        let body = line.split_once('#').map_or(line, |(a, _)| a);
        if body.trim().is_empty() {
            continue;
        }
        insert_pair(&mut map, body)?;
    }
    Ok(map)
}

fn insert_pair(map: &mut BTreeMap<String, String>, line: &str) -> Result<()> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::usage(line.trim(), "config lines must read key=value"))?;
    map.insert(k.trim().to_string(), v.trim().to_string());
    Ok(())
}

/// Parses a full argument vector (including the program name).
///
/// Help and version requests surface as `Err(Error::Usage { key: "help", .. })`
/// carrying the rendered text.
pub fn parse_config<I, T>(args: I) -> Result<CliConfig>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = clap_command().try_get_matches_from(args).map_err(|e| {
        use clap::error::ErrorKind;
        let key = match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => "help",
            _ => "arguments",
        };
        Error::usage(key, e.render().to_string())
    })?;
    let (name, sub_matches) = matches
        .subcommand()
        .ok_or_else(|| Error::usage("subcommand", "missing subcommand"))?;
    let subcommand = Subcommand::from_name(name)
        .ok_or_else(|| Error::usage("subcommand", format!("unknown subcommand `{name}`")))?;
    let keys = subcommand.keys();
    let mut params = match sub_matches.get_one::<String>("config") {
        Some(path) => read_config_file(Path::new(path))?,
        None => BTreeMap::new(),
    };
    if let Some(unknown) = params.keys().find(|k| !keys.iter().any(|(name, _, _)| name == k)) {
        let allowed: Vec<&str> = keys.iter().map(|k| k.0).collect();
        return Err(Error::usage(
            unknown.clone(),
            format!("unknown key for `{name}`; allowed: {}", allowed.join(", ")),
        ));
    }
    for &(key, default, _) in keys {
        if let Some(v) = sub_matches.get_one::<String>(key) {
            params.insert(key.to_string(), v.clone());
        } else if !params.contains_key(key) {
            match default {
                Some(d) => {
                    params.insert(key.to_string(), d.to_string());
                }
                None => return Err(Error::usage(key, "required key is missing")),
            }
        }
    }
    let cfg = CliConfig { subcommand, params };
    cfg.gamma0()?;
    Ok(cfg)
}

impl CliConfig {
    fn raw(&self, key: &str) -> Result<&str> {
        self.params
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::usage(key, "required key is missing"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str, expected: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse::<T>()
            .map_err(|_| Error::usage(key, format!("expected {expected}, got `{raw}`")))
    }

    fn real(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key, "a real number")?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::usage(key, "expected a finite real number"))
        }
    }

    fn optional_real(&self, key: &str) -> Result<Option<f64>> {
        if self.raw(key)? == "auto" {
            Ok(None)
        } else {
            self.real(key).map(Some)
        }
    }

    pub fn gamma0(&self) -> Result<f64> {
        let g = self.real("gamma0")?;
        if g <= 0.0 || g == 1.0 {
            return Err(Error::usage("gamma0", format!("expected a positive real other than 1, got {g}")));
        }
        Ok(g)
    }

    fn law(&self) -> Result<PopulationLaw> {
        self.raw("nu")?.parse()
    }

    fn test_function(&self) -> Result<TestFunction> {
        self.raw("f")?.parse()
    }

    fn seed(&self) -> Result<u64> {
        self.parse("seed", "an unsigned 64-bit integer")
    }

    fn entry_law(&self) -> Result<EntryLaw> {
        self.raw("entry_law")?.parse()
    }

    fn count(&self, key: &str) -> Result<usize> {
        self.parse(key, "a non-negative integer")
    }

    fn count_list(&self, key: &str) -> Result<Vec<usize>> {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(|v| v.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::usage(key, format!("expected a comma-separated list of integers, got `{raw}`")))
    }

    fn format(&self) -> Result<&str> {
        match self.raw("format")? {
            f @ ("csv" | "json") => Ok(f),
            other => Err(Error::usage("format", format!("expected csv or json, got `{other}`"))),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(self.params.get("output").map_or(".", String::as_str))
    }

    fn config_json(&self) -> Value {
        let params: Map<String, Value> = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        json!({ "subcommand": self.subcommand.name(), "config": params })
    }

    fn csv_header(&self) -> String {
        let mut s = format!("{CONFIG_MARKER}\n");
        for (k, v) in &self.params {
            let _ = writeln!(s, "# {k}={v}");
        }
        s
    }
}

/// What a dispatched subcommand produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

fn workers_from_env() -> Result<usize> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::usage(WORKERS_ENV, format!("expected a non-negative integer, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

fn write_json(cfg: &CliConfig, name: &str, body: Value) -> Result<PathBuf> {
    let mut doc = cfg.config_json();
    if let (Value::Object(doc), Value::Object(body)) = (&mut doc, body) {
        for (k, v) in body {
            doc.insert(k, v);
        }
    }
    let path = cfg.output_dir().join(format!("{name}.json"));
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(path)
}

fn write_csv(cfg: &CliConfig, name: &str, header: &str, rows: &[String]) -> Result<PathBuf> {
    let mut text = cfg.csv_header();
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    let path = cfg.output_dir().join(format!("{name}.csv"));
    fs::write(&path, text)?;
    Ok(path)
}

fn free_convolution(cfg: &CliConfig) -> Result<(FreeConvolution, PopulationLaw)> {
    let law = cfg.law()?;
    Ok((FreeConvolution::new(law.measure()?, cfg.gamma0()?)?, law))
}

fn complex_json(z: Complex64) -> Value {
    json!([z.re, z.im])
}

/// Runs the configured subcommand and writes its artifacts.
pub fn dispatch(cfg: &CliConfig) -> Result<Outcome> {
    let out = cfg.output_dir();
    fs::create_dir_all(&out)?;
    let name = cfg.subcommand.name();
    match cfg.subcommand {
        Subcommand::Edges => {
            let (fc, _) = free_convolution(cfg)?;
            let e = fc.support_edges();
            let path = write_json(cfg, name, serde_json::to_value(e)?)?;
            Ok(Outcome {
                pass: true,
                artifacts: vec![path],
                summary: format!("L_minus = {}, L_plus = {}", e.l_minus, e.l_plus),
            })
        }
        Subcommand::Density => {
            let (fc, _) = free_convolution(cfg)?;
            let e = fc.support_edges();
            let grid = cfg.count("grid")?;
            if grid < 2 {
                return Err(Error::usage("grid", "expected at least 2 points"));
            }
            let lo = cfg.optional_real("x_min")?.unwrap_or(e.l_minus);
            let hi = cfg.optional_real("x_max")?.unwrap_or(e.l_plus);
            let mut xs = Vec::with_capacity(grid);
            let mut rho = Vec::with_capacity(grid);
            for i in 0..grid {
                let x = lo + (hi - lo) * i as f64 / (grid - 1) as f64;
                xs.push(x);
                rho.push(fc.density(x)?.value);
            }
            let path = if cfg.format()? == "json" {
                write_json(cfg, name, json!({ "x": xs, "rho": rho }))?
            } else {
                let rows: Vec<String> = xs.iter().zip(&rho).map(|(x, r)| format!("{x},{r}")).collect();
                write_csv(cfg, name, "x,rho", &rows)?
            };
            Ok(Outcome {
                pass: true,
                artifacts: vec![path],
                summary: format!("{grid} density values on [{lo}, {hi}]"),
            })
        }
        Subcommand::Variance => {
            let (fc, law) = free_convolution(cfg)?;
            let f = cfg.test_function()?;
            let edges = fc.support_edges();
            let d = cfg.optional_real("d")?.unwrap_or_else(|| default_d(&edges));
            let order = cfg.count("order")?;
            let contour = build_contour(&edges, d, order)?;
            let nodes = contour.nodes().len();
            let field = ContourField::new(&fc, contour)?;
            let v = field.clt_variance(&law, cfg.gamma0()?, &f)?;
            let t = field.theorem_variance(&law, &f)?;
            let body = json!({
                "V_derivation": v,
                "V_theorem_display": {
                    "double_integral_term": complex_json(t.double_integral_term),
                    "squared_term": complex_json(t.squared_term),
                    "total": complex_json(t.total()),
                },
                "contour_params": {
                    "d": d,
                    "order": order,
                    "nodes": nodes,
                    "L_minus": edges.l_minus,
                    "L_plus": edges.l_plus,
                },
            });
            let path = write_json(cfg, name, body)?;
            Ok(Outcome {
                pass: true,
                artifacts: vec![path],
                summary: format!("V = {v}"),
            })
        }
        Subcommand::Simulate => {
            let law = cfg.law()?;
            let spec = DataMatrixSpec::from_ratio(cfg.gamma0()?, cfg.count("n")?, cfg.entry_law()?)?;
            let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(cfg.seed()?, 0));
            let sigma = law.sample(spec.m, &mut rng)?;
            let x = sample_data_matrix(&spec, &mut rng);
            let e = eigenvalues(&sigma, &x)?;
            let path = if cfg.format()? == "json" {
                write_json(cfg, name, json!({ "M": spec.m, "N": spec.n, "eigenvalues": e.values }))?
            } else {
                let rows: Vec<String> = e.values.iter().enumerate().map(|(i, v)| format!("{i},{v}")).collect();
                write_csv(cfg, name, "index,eigenvalue", &rows)?
            };
            Ok(Outcome {
                pass: true,
                artifacts: vec![path],
                summary: format!("{} eigenvalues, largest {}", e.values.len(), e.values[0]),
            })
        }
        Subcommand::Clt => {
            let exp = ExperimentConfig {
                gamma0: cfg.gamma0()?,
                law: cfg.law()?,
                f: cfg.test_function()?,
                n_list: vec![cfg.count("n")?],
                replicates: cfg.count("reps")?,
                seed: cfg.seed()?,
                entry_law: cfg.entry_law()?,
                d: cfg.optional_real("d")?,
                tolerances: Tolerances::default(),
                workers: workers_from_env()?,
            };
            let report = run_clt_experiment(&exp)?;
            let mut body = serde_json::to_value(&report)?;
            if let Value::Object(m) = &mut body {
                // the resolved CLI parameters replace the library echo
                m.remove("config");
            }
            let json_path = write_json(cfg, name, body)?;
            let rows: Vec<String> = report
                .samples
                .iter()
                .zip(&report.seeds)
                .enumerate()
                .map(|(i, (s, seed))| format!("{i},{seed},{s}"))
                .collect();
            let csv_path = write_csv(cfg, name, "replicate,seed,statistic", &rows)?;
            Ok(Outcome {
                pass: report.pass,
                artifacts: vec![json_path, csv_path],
                summary: format!(
                    "V = {}, empirical variance = {}, KS p = {}, mean = {}, pass = {}",
                    report.theoretical_variance,
                    report.empirical_variance,
                    report.ks_pvalue.map_or("n/a".to_string(), |p| p.to_string()),
                    report.mean,
                    report.pass
                ),
            })
        }
        Subcommand::LocalLaw => {
            let law = cfg.law()?;
            let spec = DataMatrixSpec::from_ratio(cfg.gamma0()?, cfg.count("n")?, cfg.entry_law()?)?;
            let seed = cfg.seed()?;
            let tau = cfg.real("tau")?;
            let eps = cfg.real("epsilon")?;
            let mut reports = Vec::new();
            for rep in 0..cfg.count("reps")? {
                let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(seed, rep as u64));
                let sigma = law.sample(spec.m, &mut rng)?;
                let x = sample_data_matrix(&spec, &mut rng);
                reports.push(check_local_law(&sigma, &x, tau, eps)?);
            }
            let max_ratio = reports.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
            let pass = reports.iter().all(|r| r.pass);
            let flagged = reports.iter().any(|r| !r.skipped.is_empty());
            let path = write_json(
                cfg,
                name,
                json!({ "max_ratio": max_ratio, "pass": pass, "skipped_points": flagged, "replicates": reports }),
            )?;
            Ok(Outcome {
                pass,
                artifacts: vec![path],
                summary: format!("max normalized ratio {max_ratio} (bound {})", Tolerances::default().local_law_bound),
            })
        }
        Subcommand::Rate => {
            let report = check_hat_rate(
                &cfg.law()?,
                cfg.gamma0()?,
                &cfg.count_list("n")?,
                cfg.count("reps")?,
                cfg.seed()?,
                workers_from_env()?,
            )?;
            let path = write_json(cfg, name, serde_json::to_value(&report)?)?;
            Ok(Outcome {
                pass: report.pass,
                artifacts: vec![path],
                summary: match report.slope {
                    Some(s) => format!("slope {s} (band [{}, {}])", report.band.0, report.band.1),
                    None => "degenerate population law, rate not exercised".to_string(),
                },
            })
        }
    }
}

/// Parses, dispatches and reports; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cfg = match parse_config(args) {
        Ok(c) => c,
        Err(Error::Usage { key, message }) if key == "help" => {
            print!("{message}");
            return EXIT_OK;
        }
        Err(e) => {
            eprintln!("rmtclt: {e}");
            return EXIT_ERROR;
        }
    };
    match dispatch(&cfg) {
        Ok(outcome) => {
            println!("{}: {}", cfg.subcommand.name(), outcome.summary);
            for p in &outcome.artifacts {
                println!("wrote {}", p.display());
            }
            if outcome.pass {
                EXIT_OK
            } else {
                eprintln!("rmtclt {}: gate failed", cfg.subcommand.name());
                EXIT_GATE
            }
        }
        Err(e) => {
            eprintln!("rmtclt {}: {e}", cfg.subcommand.name());
            EXIT_ERROR
        }
    }
}
