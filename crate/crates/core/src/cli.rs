//! The `shiftrule` command-line tool.
//!
//! Exit codes: 0 success, 1 validation failure, 2 ill-posed or infeasible,
//! 3 invalid input.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::equidistant::{closed_form_rule_for, optimal_phases, EquidistantStructure};
use crate::error::Error;
use crate::model::{FourierModel, NoiseSpec};
use crate::optimize::{optimize_shifts, OptimizationConfig};
use crate::perturbation::{error_bound, perturbation_matrices};
use crate::regularization::{regularized_rule, Gamma, GammaGrid, RegularizationConfig};
use crate::spectrum::{
    classify_structure_with, frequency_differences, FrequencySet, Spectrum, SpectrumFile,
    StructureClass, StructureKind, DEFAULT_DEDUP_TOL, DEFAULT_PERTURBED_FRACTION, DEFAULT_REL_TOL,
};
use crate::synthesis::{
    build_system_for, find_duplicate_phases, single_order, solve_direct_with_cap, RuleMethod,
    ShiftRule, DEFAULT_CONDITION_CAP,
};
use crate::variance::{confidence_interval, noisy_estimate, sample_moments, variance_of_estimate};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_ILL_POSED: i32 = 2;
pub const EXIT_INVALID: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "shiftrule",
    version,
    about = "Parameter-shift rules for arbitrary spectra"
)]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the main artifact here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Suppress warnings and the stdout report.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Auto,
    Direct,
    Equidistant,
    Tikhonov,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify a spectrum and list its gaps.
    Analyze { spectrum: PathBuf },
    /// Build a shift rule.
    Synthesize {
        spectrum: PathBuf,
        #[arg(long, default_value_t = 1)]
        order: u32,
        #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
        method: MethodArg,
        /// `auto` or a comma-separated list.
        #[arg(long, default_value = "auto", allow_hyphen_values = true)]
        phases: String,
        /// Use the mean gap with `--method equidistant` on any spectrum.
        #[arg(long)]
        force: bool,
    },
    /// Check a rule against exact derivatives.
    Validate {
        rule: PathBuf,
        /// `random:<count>` or a model file.
        #[arg(long, default_value = "random:5")]
        model: String,
        /// `start:end:points`.
        #[arg(
            long,
            default_value = "-3.141592653589793:3.141592653589793:100",
            allow_hyphen_values = true
        )]
        grid: String,
    },
    /// Minimize the coefficient square-norm over the phases.
    Optimize {
        spectrum: PathBuf,
        #[arg(long, default_value_t = 1)]
        order: u32,
        #[arg(long, default_value = "auto", allow_hyphen_values = true)]
        phases: String,
        #[arg(long)]
        multistarts: Option<usize>,
    },
    /// Analytic and sampled variance of a rule's estimate.
    Variance {
        rule: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        sigma: f64,
        #[arg(long, default_value_t = 10_000)]
        shots: u64,
        #[arg(long, default_value_t = 0.1)]
        eta: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        t: f64,
    },
}

/// Settings read from `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub rel_tol: f64,
    pub dedup_tol: f64,
    pub perturbed_fraction: f64,
    pub condition_cap: f64,
    pub gamma: Gamma,
    pub data_error: f64,
    pub operator_error: f64,
    pub grid: GammaGrid,
    pub max_iters: usize,
    pub tol: f64,
    pub multistarts: usize,
    pub validation_bound: f64,
}

impl Default for Config {
    fn default() -> Self {
        let opt = OptimizationConfig::default();
        Config {
            rel_tol: DEFAULT_REL_TOL,
            dedup_tol: DEFAULT_DEDUP_TOL,
            perturbed_fraction: DEFAULT_PERTURBED_FRACTION,
            condition_cap: DEFAULT_CONDITION_CAP,
            gamma: Gamma::Auto,
            data_error: 0.0,
            operator_error: 0.0,
            grid: GammaGrid::default(),
            max_iters: opt.max_iters,
            tol: opt.tol,
            multistarts: opt.multistarts,
            validation_bound: 1e-8,
        }
    }
}

impl Config {
    fn validate(&self) -> Result<(), Failure> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("dedup_tol", self.dedup_tol),
            ("perturbed_fraction", self.perturbed_fraction),
            ("condition_cap", self.condition_cap),
            ("tol", self.tol),
            ("validation_bound", self.validation_bound),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Failure::invalid(format!(
                "config {name} must be positive, got {v}"
            )));
        }
        self.regularization().validate()?;
        Ok(())
    }

    fn regularization(&self) -> RegularizationConfig {
        RegularizationConfig {
            gamma: self.gamma,
            data_error: self.data_error,
            operator_error: self.operator_error,
            grid: self.grid,
        }
    }
}

/// A failed command with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INVALID,
            message: message.into(),
        }
    }

    fn ill_posed(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_ILL_POSED,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::IllPosed { .. } | Error::Singular(_) => EXIT_ILL_POSED,
            _ => EXIT_INVALID,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

struct Context<'a> {
    config: Config,
    seed: u64,
    output: Option<PathBuf>,
    quiet: bool,
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Context<'_> {
    fn warn(&mut self, msg: &str) {
        if !self.quiet {
            let _ = writeln!(self.err, "warning: {msg}");
        }
    }

    /// Writes `artifact` to `--output` (or stdout) and `report` to stdout.
    fn emit<A: Serialize, R: Serialize>(
        &mut self,
        artifact: &A,
        report: &R,
    ) -> Result<(), Failure> {
        match &self.output {
            Some(path) => {
                fs::write(path, to_json(artifact)? + "\n").map_err(|e| {
                    Failure::invalid(format!("cannot write {}: {e}", path.display()))
                })?;
                if !self.quiet {
                    self.print(report)?;
                }
            }
            None => self.print(report)?,
        }
        Ok(())
    }

    fn print<R: Serialize>(&mut self, report: &R) -> Result<(), Failure> {
        writeln!(self.out, "{}", to_json(report)?)
            .map_err(|e| Failure::invalid(format!("cannot write output: {e}")))
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(v).map_err(|e| Failure::invalid(e.to_string()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::invalid(format!("invalid {}: {e}", path.display())))
}

/// Runs the tool on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{e}");
                    EXIT_INVALID
                }
            };
        }
    };
    let config = match &cli.config {
        None => Ok(Config::default()),
        Some(p) => read_json::<Config>(p).and_then(|c| c.validate().map(|_| c)),
    };
    let config = match config {
        Ok(c) => c,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            return f.code;
        }
    };
    let mut ctx = Context {
        config,
        seed: cli.seed,
        output: cli.output,
        quiet: cli.quiet,
        out,
        err,
    };
    let result = match cli.command {
        Command::Analyze { spectrum } => cmd_analyze(&mut ctx, &spectrum),
        Command::Synthesize {
            spectrum,
            order,
            method,
            phases,
            force,
        } => cmd_synthesize(&mut ctx, &spectrum, order, method, &phases, force),
        Command::Validate { rule, model, grid } => cmd_validate(&mut ctx, &rule, &model, &grid),
        Command::Optimize {
            spectrum,
            order,
            phases,
            multistarts,
        } => cmd_optimize(&mut ctx, &spectrum, order, &phases, multistarts),
        Command::Variance {
            rule,
            sigma,
            shots,
            eta,
            t,
        } => cmd_variance(&mut ctx, &rule, sigma, shots, eta, t),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(ctx.err, "error: {}", f.message);
            f.code
        }
    }
}

pub fn run_from_env() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

struct LoadedSpectrum {
    spectrum: Spectrum,
    freq: FrequencySet,
    class: StructureClass,
}

fn load_spectrum(ctx: &Context, path: &Path) -> Result<LoadedSpectrum, Failure> {
    let file: SpectrumFile = read_json(path)?;
    let rel_tol = file.rel_tol.unwrap_or(ctx.config.rel_tol);
    if !(rel_tol > 0.0) {
        return Err(Failure::invalid("rel_tol must be positive"));
    }
    let spectrum = file.to_spectrum()?;
    let freq = frequency_differences(&spectrum, ctx.config.dedup_tol)?;
    let class = classify_structure_with(&spectrum, rel_tol, ctx.config.perturbed_fraction);
    Ok(LoadedSpectrum {
        spectrum,
        freq,
        class,
    })
}

#[derive(Serialize)]
struct AnalyzeReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<String>,
    eigenvalues: usize,
    kind: StructureKind,
    base_gap: Option<f64>,
    perturbation_scale: Option<f64>,
    m: usize,
    frequencies: Vec<f64>,
    gaps: Vec<f64>,
}

fn cmd_analyze(ctx: &mut Context, path: &Path) -> Result<i32, Failure> {
    let s = load_spectrum(ctx, path)?;
    let report = AnalyzeReport {
        label: s.spectrum.label().map(str::to_owned),
        eigenvalues: s.spectrum.len(),
        kind: s.class.kind,
        base_gap: s.class.base_gap,
        perturbation_scale: s.class.perturbation_scale,
        m: s.freq.m(),
        frequencies: s.freq.positive_values(),
        gaps: s.freq.row_gaps(),
    };
    ctx.emit(&report, &report)?;
    Ok(EXIT_OK)
}

fn parse_phases(spec: &str) -> Result<Option<Vec<f64>>, Failure> {
    if spec == "auto" {
        return Ok(None);
    }
    let phases = spec
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Failure::invalid(format!("invalid phase {p:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Some(phases))
}

#[derive(Serialize)]
struct Timings {
    elapsed_ms: f64,
}

#[derive(Serialize)]
struct RunReport {
    method: RuleMethod,
    rule: ShiftRule,
    #[serde(skip_serializing_if = "Option::is_none")]
    validation: Option<ValidationReport>,
    timings: Timings,
    warnings: Vec<String>,
}

/// Either a bare rule file or a report that embeds one.
#[derive(Deserialize)]
#[serde(untagged)]
enum RuleDocument {
    Rule(ShiftRule),
    Report { rule: ShiftRule },
}

fn read_rule(path: &Path) -> Result<ShiftRule, Failure> {
    let rule = match read_json::<RuleDocument>(path)? {
        RuleDocument::Rule(r) | RuleDocument::Report { rule: r } => r,
    };
    rule.validate()?;
    Ok(rule)
}

fn equidistant_structure(s: &LoadedSpectrum, force: bool) -> Result<EquidistantStructure, Failure> {
    match (s.class.kind, s.class.base_gap) {
        (StructureKind::Equidistant | StructureKind::PerturbedEquidistant, Some(gap)) => {
            Ok(EquidistantStructure::new(s.spectrum.len(), gap)?)
        }
        _ if force => {
            let ev = s.spectrum.eigenvalues();
            let gap = (ev[ev.len() - 1] - ev[0]) / (ev.len() - 1) as f64;
            Ok(EquidistantStructure::new(ev.len(), gap)?)
        }
        _ => Err(Failure::ill_posed(format!(
            "spectrum is {:?}, not equidistant (use --force to use the mean gap)",
            s.class.kind
        ))),
    }
}

fn equidistant_rule(
    s: &LoadedSpectrum,
    order: u32,
    force: bool,
) -> Result<(ShiftRule, Vec<String>), Failure> {
    let es = equidistant_structure(s, force)?;
    let mut rule = closed_form_rule_for(&es, &single_order(order))?;
    let mut warnings = Vec::new();
    if s.class.kind != StructureKind::Equidistant {
        let eps = s.class.perturbation_scale.unwrap_or_else(|| {
            s.spectrum
                .eigenvalues()
                .windows(2)
                .map(|w| (w[1] - w[0] - es.delta()).abs())
                .fold(0.0, f64::max)
        });
        let pd = perturbation_matrices(&es);
        rule.diagnostics.perturbation = Some(error_bound(&es, &pd, &rule.coefficients, eps));
        warnings.push(format!(
            "rule is exact for the equidistant spectrum with gap {:.6}; perturbation scale {eps:.3e}",
            es.delta()
        ));
    }
    Ok((rule, warnings))
}

fn direct_rule(
    ctx: &Context,
    s: &LoadedSpectrum,
    order: u32,
    phases: &[f64],
) -> Result<ShiftRule, Error> {
    let sys = build_system_for(&s.freq, phases, &single_order(order))?;
    solve_direct_with_cap(&sys, ctx.config.condition_cap)
}

fn tikhonov_rule(
    ctx: &Context,
    s: &LoadedSpectrum,
    order: u32,
    phases: &[f64],
) -> Result<ShiftRule, Failure> {
    let reg = regularized_rule(
        &s.freq,
        phases,
        &single_order(order),
        &ctx.config.regularization(),
    )?;
    Ok(reg.rule)
}

fn cmd_synthesize(
    ctx: &mut Context,
    path: &Path,
    order: u32,
    method: MethodArg,
    phases: &str,
    force: bool,
) -> Result<i32, Failure> {
    let start = Instant::now();
    let s = load_spectrum(ctx, path)?;
    let explicit = parse_phases(phases)?;
    if let Some(p) = &explicit {
        if let Some((i, j)) = find_duplicate_phases(&s.freq.row_gaps(), p) {
            return Err(Failure::ill_posed(format!(
                "phases {i} and {j} give identical columns: φ_i ≠ ±φ_j + 2πc violated"
            )));
        }
    }
    let auto_phases = s.freq.default_phases();
    let phases = explicit.clone().unwrap_or(auto_phases);
    let mut warnings = Vec::new();

    let rule = match method {
        MethodArg::Direct => direct_rule(ctx, &s, order, &phases)?,
        MethodArg::Tikhonov => tikhonov_rule(ctx, &s, order, &phases)?,
        MethodArg::Equidistant => {
            if explicit.is_some() {
                return Err(Failure::invalid(
                    "the equidistant method chooses its own phases",
                ));
            }
            let (rule, w) = equidistant_rule(&s, order, force)?;
            warnings.extend(w);
            rule
        }
        MethodArg::Auto => {
            let structured = matches!(
                s.class.kind,
                StructureKind::Equidistant | StructureKind::PerturbedEquidistant
            );
            if structured && explicit.is_none() {
                let (rule, w) = equidistant_rule(&s, order, false)?;
                warnings.extend(w);
                rule
            } else {
                match direct_rule(ctx, &s, order, &phases) {
                    Ok(rule) => rule,
                    Err(Error::IllPosed {
                        condition_number,
                        reason,
                    }) => {
                        warnings.push(format!(
                            "direct solve is ill-posed (condition number {condition_number:.3e}: {reason}); using Tikhonov regularization"
                        ));
                        tikhonov_rule(ctx, &s, order, &phases)?
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
    };
    for w in &warnings {
        ctx.warn(w);
    }

    let models = random_models(&rule.frequencies, 3, ctx.seed)?;
    let validation = validation_report(
        &rule,
        &models,
        &linspace(-std::f64::consts::PI, std::f64::consts::PI, 25),
        ctx.config.validation_bound,
    );
    let report = RunReport {
        method: rule.diagnostics.method.unwrap_or(RuleMethod::Direct),
        rule: rule.clone(),
        validation: Some(validation),
        timings: Timings {
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        },
        warnings,
    };
    ctx.emit(&rule, &report)?;
    Ok(EXIT_OK)
}

fn random_models(freqs: &[f64], count: usize, seed: u64) -> Result<Vec<FourierModel>, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| FourierModel::random(freqs, &mut rng).map_err(Failure::from))
        .collect()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Failure::invalid(format!("invalid grid {spec:?}, expected start:end:points"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(bad());
    }
    Ok(linspace(a, b, n))
}

#[derive(Debug, Clone, Serialize)]
struct ValidationReport {
    models: usize,
    points: usize,
    max_abs_error: f64,
    mean_abs_error: f64,
    /// Largest `|error| / (1 + |target|)`.
    max_scaled_error: f64,
    bound: f64,
    passed: bool,
}

fn validation_report(
    rule: &ShiftRule,
    models: &[FourierModel],
    grid: &[f64],
    bound: f64,
) -> ValidationReport {
    let orders = rule.order_pairs();
    let (mut max_abs, mut sum, mut max_scaled) = (0.0_f64, 0.0, 0.0_f64);
    for model in models {
        for &t in grid {
            let target = model.combined_derivative(t, &orders);
            let err = (rule.apply(t, |x| model.evaluate(x)) - target).abs();
            max_abs = max_abs.max(err);
            max_scaled = max_scaled.max(err / (1.0 + target.abs()));
            sum += err;
        }
    }
    let count = (models.len() * grid.len()).max(1);
    ValidationReport {
        models: models.len(),
        points: grid.len(),
        max_abs_error: max_abs,
        mean_abs_error: sum / count as f64,
        max_scaled_error: max_scaled,
        bound,
        passed: max_scaled <= bound,
    }
}

fn cmd_validate(
    ctx: &mut Context,
    rule_path: &Path,
    model: &str,
    grid: &str,
) -> Result<i32, Failure> {
    let rule = read_rule(rule_path)?;
    if rule.frequencies.is_empty() {
        return Err(Failure::invalid("rule file lists no frequencies"));
    }
    let grid = parse_grid(grid)?;
    let models = match model.strip_prefix("random:") {
        Some(k) => {
            let k: usize = k
                .parse()
                .ok()
                .filter(|k| *k > 0)
                .ok_or_else(|| Failure::invalid(format!("invalid model spec {model:?}")))?;
            random_models(&rule.frequencies, k, ctx.seed)?
        }
        None => {
            let m: FourierModel = read_json(Path::new(model))?;
            let allowed = FrequencySet::from_frequencies(&rule.frequencies)?;
            let tol = 1e-9 * rule.frequencies.iter().fold(1.0_f64, |a, b| a.max(*b));
            if let Some(w) = m
                .frequencies()
                .into_iter()
                .find(|w| !allowed.contains(*w, tol))
            {
                return Err(Failure::invalid(format!(
                    "model frequency {w} is not in the rule's frequency set"
                )));
            }
            vec![m]
        }
    };
    let report = validation_report(&rule, &models, &grid, ctx.config.validation_bound);
    ctx.emit(&report, &report)?;
    Ok(if report.passed {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    })
}

#[derive(Serialize)]
struct OptimizeReport {
    before: f64,
    after: f64,
    stationary: bool,
    gradient_norm: f64,
    starts: usize,
    rule: ShiftRule,
}

fn cmd_optimize(
    ctx: &mut Context,
    path: &Path,
    order: u32,
    phases: &str,
    multistarts: Option<usize>,
) -> Result<i32, Failure> {
    let s = load_spectrum(ctx, path)?;
    let phi0 = match parse_phases(phases)? {
        Some(p) => p,
        None if s.class.kind == StructureKind::Equidistant => {
            optimal_phases(&equidistant_structure(&s, false)?)
        }
        None => s.freq.default_phases(),
    };
    let cfg = OptimizationConfig {
        max_iters: ctx.config.max_iters,
        tol: ctx.config.tol,
        multistarts: multistarts.unwrap_or(ctx.config.multistarts),
        seed: ctx.seed,
        bounds: None,
        condition_cap: ctx.config.condition_cap,
    };
    let res = optimize_shifts(&s.freq, &phi0, &single_order(order), &cfg)?;
    if !res.stationary {
        ctx.warn(
            "no stationary point below the starting objective was found; returning a descent point",
        );
    }
    let report = OptimizeReport {
        before: res.initial_objective,
        after: res.objective,
        stationary: res.stationary,
        gradient_norm: res.gradient_norm,
        starts: res.starts,
        rule: res.rule.clone(),
    };
    ctx.emit(&res.rule, &report)?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct VarianceCommandReport {
    sigma: f64,
    shots: u64,
    seed: u64,
    t: f64,
    analytic_variance: f64,
    square_norm: f64,
    empirical_mean: f64,
    empirical_variance: f64,
    exact_derivative: f64,
    eta: f64,
    half_width: f64,
    /// Fraction of estimates within `half_width` of the exact derivative.
    coverage: f64,
}

fn cmd_variance(
    ctx: &mut Context,
    rule_path: &Path,
    sigma: f64,
    shots: u64,
    eta: f64,
    t: f64,
) -> Result<i32, Failure> {
    let rule = read_rule(rule_path)?;
    if shots == 0 {
        return Err(Failure::invalid("shots must be at least 1"));
    }
    if !t.is_finite() {
        return Err(Failure::invalid("t must be finite"));
    }
    let noise = NoiseSpec::new(sigma, ctx.seed)?;
    let model = random_models(&rule.frequencies, 1, ctx.seed)?.remove(0);
    let analytic = variance_of_estimate(&rule, &vec![sigma * sigma; rule.len()])?;
    let half_width = confidence_interval(&analytic, eta)?;
    let exact = model.combined_derivative(t, &rule.order_pairs());

    let samples: Vec<f64> = (0..shots)
        .map(|s| noisy_estimate(&rule, &model, t, &noise, s))
        .collect();
    let (mean, var) = sample_moments(&samples);
    let covered = samples
        .iter()
        .filter(|x| (*x - exact).abs() <= half_width)
        .count();

    let report = VarianceCommandReport {
        sigma,
        shots,
        seed: ctx.seed,
        t,
        analytic_variance: analytic.variance,
        square_norm: analytic.square_norm,
        empirical_mean: mean,
        empirical_variance: var,
        exact_derivative: exact,
        eta,
        half_width,
        coverage: covered as f64 / shots as f64,
    };
    ctx.emit(&report, &report)?;
    Ok(EXIT_OK)
}
