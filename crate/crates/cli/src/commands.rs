//! Subcommand implementations.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sphereqv::covariance::{increment_gram_fl, LineGrid};
use sphereqv::estimators::{
    estimate_cl, estimate_cl_classical, estimate_cl_variant, estimate_hurst,
};
use sphereqv::harness::{run_experiment_with, write_cell_csv, ExperimentConfig, CSV_HEADER};
use sphereqv::moments::{
    asymptotic_mean, asymptotic_mean_second_order, asymptotic_var, default_quad_nodes,
    exact_mean, exact_var_vnl, fourth_moment_bound, k_ell_constant_lag_weighted,
    normalized_cumulants, ApproxVariant, RegimeTag, MAX_CUMULANT_N,
};
use sphereqv::simulate::{SampleTarget, Simulator};
use sphereqv::specfun::{
    bessel_j, hilb_approx_p, legendre_p, legendre_p_deriv, meridian_harmonics, BesselOrder,
};
use sphereqv::Error;

use crate::config::{load_optional, parse_json, read_text, EstimateFile, MomentsFile};
use crate::{EstimateArgs, EstimateMode, ExperimentArgs, MomentsArgs, RegimeArg, SimulateArgs};

/// Why a subcommand stopped, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Numeric or I/O failure (exit 1).
    Runtime(String),
    /// Invalid flags or configuration (exit 2).
    Usage(String),
    /// An invariant check failed under `--strict` (exit 3).
    Strict(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Runtime(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Strict(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Runtime(m) | Failure::Usage(m) | Failure::Strict(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain { .. } | Error::Index { .. } | Error::Length { .. } | Error::Config(_) => {
                Failure::Usage(e.to_string())
            }
            Error::TooFewSamples { .. } | Error::Unsupported(_) | Error::Io(_) => {
                Failure::Runtime(e.to_string())
            }
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::Usage(format!("missing required --{flag}")))
}

fn to_usize(n: u64, flag: &str) -> Result<usize, Failure> {
    usize::try_from(n).map_err(|_| Failure::Usage(format!("--{flag} is too large")))
}

fn check_ell(ell: u32) -> Result<u32, Failure> {
    if ell == 0 {
        return Err(Failure::Usage("--ell must be at least 1".into()));
    }
    Ok(ell)
}

fn regime_tag(arg: RegimeArg, c: f64) -> RegimeTag {
    match arg {
        RegimeArg::FixedEll => RegimeTag::FixedEll,
        RegimeArg::EllFaster => RegimeTag::EllFaster,
        RegimeArg::EllComparable => RegimeTag::EllComparable { c },
        RegimeArg::EllSlower => RegimeTag::EllSlower,
    }
}

pub fn moments(args: MomentsArgs) -> Result<(), Failure> {
    let file: MomentsFile = load_optional(args.config.as_deref())?;
    let ell = check_ell(required(args.ell.or(file.ell), "ell")?)?;
    let n = to_usize(required(args.n.or(file.n), "n")?, "n")?;
    if n == 0 {
        return Err(Failure::Usage("--n must be at least 1".into()));
    }
    let cl = args.cl.or(file.cl).unwrap_or(1.0);
    if !(cl >= 0.0 && cl.is_finite()) {
        return Err(Failure::Usage("--cl must be a finite non-negative number".into()));
    }
    let p_max = args.p_max.or(file.p_max).unwrap_or(4);
    if !(2..=8).contains(&p_max) {
        return Err(Failure::Usage("--p-max must be between 2 and 8".into()));
    }
    let regime = args.regime.or(file.regime);
    let c = args.c.or(file.c).unwrap_or(ell as f64 / n as f64);
    if !(c > 0.0 && c.is_finite()) {
        return Err(Failure::Usage("--c must be positive".into()));
    }
    let csv = args.csv.or(file.csv);

    let grid = LineGrid::new(n)?;
    let gram = increment_gram_fl(ell, cl, &grid);
    let mean = exact_mean(&gram);
    let var = exact_var_vnl(&gram);
    let mut rows: Vec<(String, f64)> = vec![("mean".into(), mean), ("variance".into(), var)];
    if var > 0.0 && (p_max == 2 || n <= MAX_CUMULANT_N) {
        let k = normalized_cumulants(&gram, p_max)?;
        for (i, v) in k.iter().enumerate() {
            rows.push((format!("kappa_{}", i + 2), *v));
        }
        if p_max >= 4 {
            rows.push(("fourth_moment_bound".into(), fourth_moment_bound(&gram)?));
        }
    } else if var > 0.0 {
        eprintln!("note: cumulants above order 2 need N <= {MAX_CUMULANT_N}; skipped");
    }
    if let Some(r) = regime {
        let tag = regime_tag(r, c);
        let am = asymptotic_mean(tag, ell, cl, n);
        let am2 = asymptotic_mean_second_order(tag, ell, cl, n);
        let av = asymptotic_var(tag, ell, cl, n)?;
        rows.push(("asymptotic_mean".into(), am));
        rows.push(("mean_ratio".into(), mean / am));
        rows.push(("asymptotic_mean_second_order".into(), am2));
        rows.push(("mean_ratio_second_order".into(), mean / am2));
        rows.push(("asymptotic_variance".into(), av));
        rows.push(("variance_ratio".into(), var / av));
        if tag == RegimeTag::FixedEll {
            let kw = k_ell_constant_lag_weighted(ell, default_quad_nodes(ell))?.value;
            let avw = 2.0 * kw * cl * cl / (n * n) as f64;
            rows.push(("asymptotic_variance_lag_weighted".into(), avw));
            rows.push(("variance_ratio_lag_weighted".into(), var / avw));
        }
    }
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (name, value) in &rows {
        writeln!(out, "{name:<width$}  {value}").map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    if let Some(path) = csv {
        let mut w = BufWriter::new(File::create(&path).map_err(|e| io_failure(&path, e))?);
        let mut body = String::from("quantity,value\n");
        for (name, value) in &rows {
            body.push_str(&format!("{name},{value:.16e}\n"));
        }
        w.write_all(body.as_bytes()).map_err(|e| io_failure(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateFile {
    target: SampleTarget,
    n: usize,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default)]
    replications: Option<usize>,
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_failure(p, e))?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

pub fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let text = read_text(&args.spec_file)?;
    let spec: SimulateFile = parse_json(&args.spec_file, &text)?;
    let seed = args.seed.or(spec.seed).unwrap_or(0);
    let reps = match args.reps {
        Some(r) => to_usize(r, "reps")?,
        None => spec.replications.unwrap_or(1),
    };
    if reps == 0 {
        return Err(Failure::Usage("replications must be at least 1".into()));
    }
    let grid = LineGrid::new(spec.n)?;
    let sim = Simulator::new(&spec.target, &grid)?;
    let fbm = matches!(spec.target, SampleTarget::Fbm { .. });
    let mut out = open_output(args.out.as_deref())?;
    let write = |out: &mut Box<dyn Write>, s: String| {
        out.write_all(s.as_bytes())
            .map_err(|e| Failure::Runtime(format!("write failed: {e}")))
    };
    write(
        &mut out,
        if fbm { "rep,v_t,v_s,stream\n" } else { "rep,v,stream\n" }.to_string(),
    )?;
    // bounded batches keep memory flat for large replication counts
    const BATCH: usize = 4096;
    let mut start = 0;
    while start < reps {
        let end = (start + BATCH).min(reps);
        let batch: Vec<_> = {
            use rayon::prelude::*;
            (start..end).into_par_iter().map(|i| sim.replicate(seed, i)).collect()
        };
        for r in batch {
            let line = match r.v_s {
                Some(vs) => format!("{},{:.16e},{:.16e},{}\n", r.index, r.v, vs, r.stream),
                None => format!("{},{:.16e},{}\n", r.index, r.v, r.stream),
            };
            write(&mut out, line)?;
        }
        start = end;
    }
    out.flush().map_err(|e| Failure::Runtime(format!("write failed: {e}")))
}

fn reject_extra(mode: &str, present: &[(&str, bool)]) -> Result<(), Failure> {
    let extra: Vec<&str> = present.iter().filter(|p| p.1).map(|p| p.0).collect();
    if extra.is_empty() {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "flags not used by --mode {mode}: {}",
            extra.iter().map(|f| format!("--{f}")).collect::<Vec<_>>().join(", ")
        )))
    }
}

pub fn estimate(args: EstimateArgs) -> Result<(), Failure> {
    let file: EstimateFile = load_optional(args.config.as_deref())?;
    let mode = required(args.mode.or(file.mode), "mode")?;
    let v = args.v.or(file.v);
    let ell = args.ell.or(file.ell);
    let n = args.n.or(file.n);
    let c = args.c.or(file.c);
    let coeffs = args.coeffs.or(file.coeffs);
    let (v_t, v_s, t, s) = (
        args.v_t.or(file.v_t),
        args.v_s.or(file.v_s),
        args.t.or(file.t),
        args.s.or(file.s),
    );
    let hurst_flags = [
        ("v-t", v_t.is_some()),
        ("v-s", v_s.is_some()),
        ("t", t.is_some()),
        ("s", s.is_some()),
    ];
    let json = match mode {
        EstimateMode::Cl | EstimateMode::Cl1 | EstimateMode::Cl2 | EstimateMode::Cl3 => {
            let name = format!("{mode:?}").to_lowercase();
            let mut extra = hurst_flags.to_vec();
            extra.push(("coeffs", coeffs.is_some()));
            if mode != EstimateMode::Cl2 {
                extra.push(("c", c.is_some()));
            }
            reject_extra(&name, &extra)?;
            let v = required(v, "v")?;
            let ell = check_ell(required(ell, "ell")?)?;
            let n = to_usize(required(n, "n")?, "n")?;
            let result = match mode {
                EstimateMode::Cl => estimate_cl(v, ell, n)?,
                EstimateMode::Cl1 => estimate_cl_variant(v, ell, n, ApproxVariant::EllFaster)?,
                EstimateMode::Cl2 => {
                    let c = c.unwrap_or(ell as f64 / n as f64);
                    estimate_cl_variant(v, ell, n, ApproxVariant::EllComparable { c })?
                }
                _ => estimate_cl_variant(v, ell, n, ApproxVariant::EllSlower)?,
            };
            serde_json::to_value(result)
        }
        EstimateMode::Classical => {
            let mut extra = hurst_flags.to_vec();
            extra.extend([("v", v.is_some()), ("n", n.is_some()), ("c", c.is_some())]);
            reject_extra("classical", &extra)?;
            let ell = check_ell(required(ell, "ell")?)?;
            let coeffs = required(coeffs, "coeffs")?;
            serde_json::to_value(estimate_cl_classical(&coeffs, ell)?)
        }
        EstimateMode::Hurst => {
            reject_extra(
                "hurst",
                &[
                    ("v", v.is_some()),
                    ("ell", ell.is_some()),
                    ("n", n.is_some()),
                    ("c", c.is_some()),
                    ("coeffs", coeffs.is_some()),
                ],
            )?;
            let result = estimate_hurst(
                required(v_t, "v-t")?,
                required(v_s, "v-s")?,
                required(t, "t")?,
                required(s, "s")?,
            )?;
            serde_json::to_value(result)
        }
    }
    .map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{}", serde_json::to_string(&json).map_err(|e| Failure::Runtime(e.to_string()))?);
    Ok(())
}

fn default_prefix(config: &Path) -> String {
    let stem = config
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".into());
    format!("{stem}_report")
}

pub fn experiment(args: ExperimentArgs) -> Result<(), Failure> {
    let text = read_text(&args.config)?;
    let mut cfg: ExperimentConfig = parse_json(&args.config, &text)?;
    if let Some(seed) = args.seed {
        cfg.sample_spec.seed = seed;
    }
    if let Some(out) = args.output {
        cfg.output = Some(out);
    }
    cfg.validate()?;
    let prefix = cfg.output.clone().unwrap_or_else(|| default_prefix(&args.config));
    let csv_path = PathBuf::from(format!("{prefix}.csv"));
    let json_path = PathBuf::from(format!("{prefix}.json"));

    // rows are flushed as each cell finishes so an interrupted run keeps
    // every completed cell
    let mut csv = BufWriter::new(File::create(&csv_path).map_err(|e| io_failure(&csv_path, e))?);
    csv.write_all(CSV_HEADER.as_bytes()).map_err(|e| io_failure(&csv_path, e))?;
    csv.flush().map_err(|e| io_failure(&csv_path, e))?;
    let report = run_experiment_with(&cfg, |cell| {
        write_cell_csv(cell, &mut csv)?;
        csv.flush()?;
        eprintln!(
            "cell ell={} n={} done",
            cell.ell.map(|l| l.to_string()).unwrap_or_else(|| "-".into()),
            cell.n
        );
        Ok(())
    })?;
    drop(csv);
    std::fs::write(&json_path, report.to_json()?).map_err(|e| io_failure(&json_path, e))?;

    println!("report: {} {}", json_path.display(), csv_path.display());
    for s in &report.slopes {
        println!(
            "slope {} vs {}: {:.4} ± {:.4}",
            s.name, s.against, s.fit.slope, s.fit.stderr
        );
    }
    for inv in &report.invariants {
        println!(
            "{} {}: {}",
            if inv.passed { "PASS" } else { "FAIL" },
            inv.name,
            inv.detail
        );
    }
    if args.strict && !report.all_invariants_pass() {
        return Err(Failure::Strict("invariant check failed".into()));
    }
    Ok(())
}

/// Deterministic low-discrepancy points in `[0, 1)`.
fn golden_points(count: usize, offset: usize) -> impl Iterator<Item = f64> {
    const PHI: f64 = 0.618_033_988_749_894_8;
    (offset..offset + count).map(|k| (k as f64 * PHI).fract())
}

struct Check {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn check_legendre_bound() -> Result<Check, Error> {
    let mut worst = 0.0f64;
    let degrees: Vec<u32> = (0..=2000).step_by(37).chain([2000]).collect();
    for &l in &degrees {
        for u in golden_points(1000, 1) {
            worst = worst.max(legendre_p(l, 2.0 * u - 1.0)?.abs());
        }
    }
    Ok(Check {
        name: "legendre_bounded_by_one",
        passed: worst <= 1.0 + 1e-12,
        detail: format!("max |P_l(x)| = {worst:.15} over {} degrees x 1000 points", degrees.len()),
    })
}

fn check_derivative_recurrence() -> Result<Check, Error> {
    let mut worst = 0.0f64;
    for (i, u) in golden_points(2000, 7).enumerate() {
        let l = 1 + (i as u32 * 7919) % 200;
        let x = 0.999 * (2.0 * u - 1.0);
        let lhs = (1.0 - x * x) * legendre_p_deriv(l, x)?;
        let p = legendre_p(l, x)?;
        let pm = legendre_p(l - 1, x)?;
        let rhs = l as f64 * (pm - x * p);
        let scale = l as f64 * (pm.abs() + p.abs()).max(1e-3);
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    Ok(Check {
        name: "derivative_recurrence",
        passed: worst <= 1e-10,
        detail: format!("max scaled residual {worst:.3e}"),
    })
}

fn check_addition_theorem() -> Result<Check, Error> {
    let mut worst = 0.0f64;
    let mut points = golden_points(400, 3);
    for l in 0..=50u32 {
        for _ in 0..4 {
            let a = PI * points.next().unwrap_or(0.5);
            let b = PI * points.next().unwrap_or(0.25);
            let ha = meridian_harmonics(l, a)?;
            let hb = meridian_harmonics(l, b)?;
            let sum: f64 = ha
                .iter()
                .zip(&hb)
                .enumerate()
                .map(|(m, (x, y))| if m == 0 { x * y } else { 2.0 * x * y })
                .sum();
            let want = (2.0 * l as f64 + 1.0) / (4.0 * PI) * legendre_p(l, (a - b).cos())?;
            worst = worst.max((sum - want).abs());
        }
    }
    Ok(Check {
        name: "addition_theorem",
        passed: worst <= 1e-9,
        detail: format!("max |error| {worst:.3e}"),
    })
}

fn check_hilb() -> Result<Check, Error> {
    let mut fitted = 0.0f64;
    for l in [64u32, 256, 1024] {
        for k in 0..=99 {
            let arg = 0.01 + (1.0 - 0.01) * k as f64 / 99.0;
            let err = (legendre_p(l, arg.cos())? - hilb_approx_p(l, arg)?).abs();
            fitted = fitted.max(err / ((l as f64).powf(-1.5) * arg.sqrt()));
        }
    }
    Ok(Check {
        name: "hilb_error_constant",
        passed: fitted.is_finite(),
        detail: format!("fitted c = {fitted:.4} in |P - hilb| <= c l^(-3/2) sqrt(arg)"),
    })
}

fn check_bessel() -> Result<Check, Error> {
    let zero = bessel_j(BesselOrder::Zero, 2.404_825_557_695_773)?;
    let j2 = bessel_j(BesselOrder::Two, 10.0)?;
    // J_2(10) = 0.2546303137...
    let passed = zero.abs() <= 1e-10 && (j2 - 0.254_630_313_685_120_6).abs() <= 1e-12;
    Ok(Check {
        name: "bessel_reference_values",
        passed,
        detail: format!("J0(j_0,1) = {zero:.3e}, J2(10) = {j2:.16}"),
    })
}

pub fn specfun_check() -> Result<(), Failure> {
    let checks = [
        check_legendre_bound()?,
        check_derivative_recurrence()?,
        check_addition_theorem()?,
        check_hilb()?,
        check_bessel()?,
    ];
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if checks.iter().all(|c| c.passed) {
        Ok(())
    } else {
        Err(Failure::Runtime("special-function invariant failure".into()))
    }
}
