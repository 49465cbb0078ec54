//! Monte Carlo experiments: replication batches, empirical cumulants and
//! distances, regime sweeps and log-log slope fits, each paired with the
//! exact value it should reproduce.
//!
//! Every reduction runs sequentially over replications stored in index order,
//! so a report is a pure function of its configuration.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::covariance::{
    fbm_joint_gram, increment_gram_f, increment_gram_fl, IncrementGram, LineGrid,
};
use crate::error::{check_domain, Error, Result};
use crate::estimators::{estimate_cl, estimate_cl_classical, estimate_hurst};
use crate::linalg::pairwise_sum;
use crate::moments::{
    exact_mean, exact_var_vnl, fourth_moment_bound, trace_cumulants, RegimeTag, MAX_CUMULANT_N,
};
use crate::simulate::{quadratic_variation, stream_id, SampleSpec, SampleTarget, Simulator};

/// A value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Mean with its standard error `s/√n`.
pub fn mean_with_se(samples: &[f64]) -> Result<Estimate> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            need: 2,
            got: samples.len(),
        });
    }
    let m = mean(samples);
    let n = samples.len() as f64;
    let dev: Vec<f64> = samples.iter().map(|x| (x - m).powi(2)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    Ok(Estimate {
        value: m,
        se: (var / n).sqrt(),
    })
}

/// k-statistics `k_2..=k_4` from the power sums of `n` values.
fn k_stats(n: f64, s: [f64; 4], p_max: usize) -> Vec<f64> {
    let [s1, s2, s3, s4] = s;
    let mut out = vec![(n * s2 - s1 * s1) / (n * (n - 1.0))];
    if p_max >= 3 {
        out.push((2.0 * s1.powi(3) - 3.0 * n * s1 * s2 + n * n * s3) / (n * (n - 1.0) * (n - 2.0)));
    }
    if p_max >= 4 {
        let num = -6.0 * s1.powi(4) + 12.0 * n * s1 * s1 * s2
            - 3.0 * n * (n - 1.0) * s2 * s2
            - 4.0 * n * (n + 1.0) * s1 * s3
            + n * n * (n + 1.0) * s4;
        out.push(num / (n * (n - 1.0) * (n - 2.0) * (n - 3.0)));
    }
    out
}

/// Unbiased cumulant estimates `k_2..=k_{p_max}` with delete-one jackknife
/// standard errors. Each leave-one-out replicate is obtained by removing one
/// term from the power sums, so the whole jackknife costs `O(n)`.
pub fn empirical_cumulants(samples: &[f64], p_max: usize) -> Result<Vec<Estimate>> {
    if !(2..=4).contains(&p_max) {
        return Err(Error::Index {
            name: "p_max",
            value: p_max as i64,
            lo: 2,
            hi: 4,
        });
    }
    let need = 10 * p_max;
    if samples.len() < need {
        return Err(Error::TooFewSamples {
            need,
            got: samples.len(),
        });
    }
    // power sums of data centered at the mean (k-statistics are shift
    // invariant; centering keeps the sums well conditioned)
    let center = mean(samples);
    let centered: Vec<f64> = samples.iter().map(|x| x - center).collect();
    let powers = |r: i32| -> f64 {
        let v: Vec<f64> = centered.iter().map(|d| d.powi(r)).collect();
        pairwise_sum(&v)
    };
    let sums = [powers(1), powers(2), powers(3), powers(4)];
    let n = samples.len() as f64;
    let full = k_stats(n, sums, p_max);

    let leave_one_out: Vec<Vec<f64>> = centered
        .iter()
        .map(|&d| {
            let s = [
                sums[0] - d,
                sums[1] - d * d,
                sums[2] - d * d * d,
                sums[3] - d * d * d * d,
            ];
            k_stats(n - 1.0, s, p_max)
        })
        .collect();
    Ok((0..full.len())
        .map(|p| {
            let reps: Vec<f64> = leave_one_out.iter().map(|k| k[p]).collect();
            let m = mean(&reps);
            let dev: Vec<f64> = reps.iter().map(|x| (x - m).powi(2)).collect();
            Estimate {
                value: full[p],
                se: ((n - 1.0) / n * pairwise_sum(&dev)).sqrt(),
            }
        })
        .collect())
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Kolmogorov distance between the empirical CDF and `Φ`.
pub fn ks_normal(samples: &[f64]) -> Result<f64> {
    if samples.len() < 100 {
        return Err(Error::TooFewSamples {
            need: 100,
            got: samples.len(),
        });
    }
    let phi = Normal::standard();
    let xs = sorted(samples);
    let n = xs.len() as f64;
    Ok(xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = phi.cdf(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleKs {
    pub distance: f64,
    /// Rejection threshold at the requested level.
    pub critical: f64,
    pub reject: bool,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic critical value
/// `c(α) √((n+m)/(nm))`, `c(α) = √(−ln(α/2)/2)`.
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<TwoSampleKs> {
    check_domain(alpha > 0.0 && alpha < 1.0, "alpha", alpha, "0 < alpha < 1")?;
    for s in [a, b] {
        if s.len() < 10 {
            return Err(Error::TooFewSamples {
                need: 10,
                got: s.len(),
            });
        }
    }
    let (xa, xb) = (sorted(a), sorted(b));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let critical = c * ((na + nb) / (na * nb)).sqrt();
    Ok(TwoSampleKs {
        distance: d,
        critical,
        reject: d > critical,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogCorrection {
    #[default]
    None,
    /// Fit `log(y / log x)` instead of `log y`.
    DivideByLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
}

/// Least-squares slope of `log y` (or `log(y/log x)`) against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64], correction: LogCorrection) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::Length {
            what: "ys",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 3 {
        return Err(Error::TooFewSamples {
            need: 3,
            got: xs.len(),
        });
    }
    for (&x, &y) in xs.iter().zip(ys) {
        check_domain(x > 0.0 && x.is_finite(), "x", x, "positive finite x")?;
        check_domain(y > 0.0 && y.is_finite(), "y", y, "positive finite y")?;
        if correction == LogCorrection::DivideByLog {
            check_domain(x > 1.0, "x", x, "x > 1 when dividing by log x")?;
        }
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| match correction {
            LogCorrection::None => y.ln(),
            LogCorrection::DivideByLog => (y / x.ln()).ln(),
        })
        .collect();
    let n = lx.len() as f64;
    let (mx, my) = (mean(&lx), mean(&ly));
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    check_domain(sxx > 0.0, "x spread", sxx, "at least two distinct x")?;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(SlopeFit {
        slope,
        stderr: (rss / (n - 2.0) / sxx).sqrt(),
        intercept,
    })
}

/// Statistics an experiment can request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Var,
    K3,
    K4,
    KsNormal,
    EstimatorError,
    Hurst,
}

/// How the swept cells are generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Coupling {
    /// Explicit `(ℓ, N)` pairs.
    Pairs { pairs: Vec<(u32, usize)> },
    /// `ℓ` held fixed.
    FixedEll { ell: u32, ns: Vec<usize> },
    /// `ℓ = ⌊N^β⌋`.
    Power { beta: f64, ns: Vec<usize> },
    /// `ℓ = max(1, round(cN))`.
    Proportional { c: f64, ns: Vec<usize> },
    /// Grid sizes only, for targets without a single degree.
    GridOnly { ns: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub coupling: Coupling,
    pub regime: Option<RegimeTag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sample_spec: SampleSpec,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    pub statistics: Vec<Statistic>,
    /// Output path prefix; `<prefix>.json` and `<prefix>.csv` are written.
    #[serde(default)]
    pub output: Option<String>,
    /// Diagnostic multiplier applied to every exact value; anything other
    /// than 1 deliberately corrupts the oracles (used to exercise strict mode).
    #[serde(default = "unit_scale")]
    pub exact_scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

/// One `(ℓ, N)` cell to run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub ell: Option<u32>,
    pub n: usize,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.statistics.is_empty() {
            return Err(Error::Config("statistics must not be empty".into()));
        }
        if self.sample_spec.replications < 2 {
            return Err(Error::Config("replications must be at least 2".into()));
        }
        check_domain(
            self.exact_scale.is_finite(),
            "exact_scale",
            self.exact_scale,
            "finite",
        )?;
        let single = matches!(self.sample_spec.target, SampleTarget::SingleEll { .. });
        let fbm = matches!(self.sample_spec.target, SampleTarget::Fbm { .. });
        if self.statistics.contains(&Statistic::Hurst) && !fbm {
            return Err(Error::Config("hurst statistic needs an fbm target".into()));
        }
        if self.statistics.contains(&Statistic::EstimatorError) && !single {
            return Err(Error::Config(
                "estimator_error statistic needs a single_ell target".into(),
            ));
        }
        if let Some(sweep) = &self.sweep {
            check_coupling(sweep, single)?;
        }
        for cell in self.cells() {
            LineGrid::new(cell.n)?;
            if let Some(ell) = cell.ell {
                check_domain(ell >= 1, "ell", ell as f64, "ell >= 1")?;
            }
        }
        Ok(())
    }

    /// The cells in sweep order (or the single base cell).
    pub fn cells(&self) -> Vec<Cell> {
        let base_ell = match self.sample_spec.target {
            SampleTarget::SingleEll { ell, .. } => Some(ell),
            _ => None,
        };
        let Some(sweep) = &self.sweep else {
            return vec![Cell {
                ell: base_ell,
                n: self.sample_spec.n,
            }];
        };
        let with = |ns: &[usize], f: &dyn Fn(usize) -> u32| -> Vec<Cell> {
            ns.iter()
                .map(|&n| Cell {
                    ell: Some(f(n)),
                    n,
                })
                .collect()
        };
        match &sweep.coupling {
            Coupling::Pairs { pairs } => pairs
                .iter()
                .map(|&(ell, n)| Cell { ell: Some(ell), n })
                .collect(),
            Coupling::FixedEll { ell, ns } => with(ns, &|_| *ell),
            Coupling::Power { beta, ns } => {
                with(ns, &|n| ((n as f64).powf(*beta).floor() as u32).max(1))
            }
            Coupling::Proportional { c, ns } => {
                with(ns, &|n| ((c * n as f64).round() as u32).max(1))
            }
            Coupling::GridOnly { ns } => ns.iter().map(|&n| Cell { ell: None, n }).collect(),
        }
    }
}

fn check_coupling(sweep: &Sweep, single: bool) -> Result<()> {
    let bad = |msg: &str| Err(Error::Config(msg.into()));
    match (&sweep.coupling, single) {
        (Coupling::GridOnly { .. }, true) => {
            return bad("grid_only coupling is for targets without a single degree")
        }
        (Coupling::GridOnly { .. }, false) => {}
        (_, false) => return bad("ell couplings need a single_ell target"),
        _ => {}
    }
    let ns_ok = match &sweep.coupling {
        Coupling::Pairs { pairs } => !pairs.is_empty(),
        Coupling::FixedEll { ns, .. }
        | Coupling::Power { ns, .. }
        | Coupling::Proportional { ns, .. }
        | Coupling::GridOnly { ns } => !ns.is_empty(),
    };
    if !ns_ok {
        return bad("sweep has no cells");
    }
    let Some(regime) = sweep.regime else {
        return Ok(());
    };
    let consistent = match (&sweep.coupling, regime) {
        (Coupling::Pairs { .. }, _) => true,
        (Coupling::GridOnly { .. }, _) => false,
        (Coupling::FixedEll { .. }, RegimeTag::FixedEll) => true,
        (Coupling::Power { beta, .. }, RegimeTag::EllFaster) => *beta > 1.0,
        (Coupling::Power { beta, .. }, RegimeTag::EllSlower) => *beta < 1.0,
        (Coupling::Power { beta, .. }, RegimeTag::EllComparable { c }) => *beta == 1.0 && c == 1.0,
        (Coupling::Proportional { c, .. }, RegimeTag::EllComparable { c: rc }) => *c == rc,
        _ => false,
    };
    if consistent {
        Ok(())
    } else {
        bad("coupling rule is inconsistent with the regime tag")
    }
}

/// One reported statistic of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub stat: String,
    pub empirical: Option<f64>,
    pub se: Option<f64>,
    pub exact: Option<f64>,
    pub source_op: Option<String>,
}

impl StatRow {
    fn compared(stat: &str, emp: Estimate, exact: f64, source: &str) -> Self {
        StatRow {
            stat: stat.into(),
            empirical: Some(emp.value),
            se: Some(emp.se),
            exact: Some(exact),
            source_op: Some(source.into()),
        }
    }

    fn empirical_only(stat: &str, emp: f64, se: Option<f64>) -> Self {
        StatRow {
            stat: stat.into(),
            empirical: Some(emp),
            se,
            exact: None,
            source_op: None,
        }
    }

    fn exact_only(stat: &str, exact: f64, source: &str) -> Self {
        StatRow {
            stat: stat.into(),
            empirical: None,
            se: None,
            exact: Some(exact),
            source_op: Some(source.into()),
        }
    }

    /// `Some(|empirical − exact| <= 4 SE)` when the row has all three.
    pub fn within_four_se(&self) -> Option<bool> {
        match (self.empirical, self.se, self.exact) {
            (Some(e), Some(se), Some(x)) => Some((e - x).abs() <= 4.0 * se),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub ell: Option<u32>,
    pub n: usize,
    pub regime: String,
    pub seed: u64,
    pub replications: usize,
    pub stats: Vec<StatRow>,
}

impl CellReport {
    pub fn stat(&self, name: &str) -> Option<&StatRow> {
        self.stats.iter().find(|r| r.stat == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSlope {
    pub name: String,
    pub against: String,
    pub fit: SlopeFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
    pub slopes: Vec<NamedSlope>,
    pub invariants: Vec<InvariantCheck>,
}

impl ExperimentReport {
    pub fn all_invariants_pass(&self) -> bool {
        self.invariants.iter().all(|c| c.passed)
    }

    /// JSON with keys in sorted order.
    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(CSV_HEADER.as_bytes())?;
        for cell in &self.cells {
            write_cell_csv(cell, out)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv is ascii"))
    }
}

pub const CSV_HEADER: &str = "ell,n,regime,stat,empirical,se,exact,source_op,seed\n";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// The CSV rows of one cell, 17 significant digits per float.
pub fn write_cell_csv<W: Write>(cell: &CellReport, out: &mut W) -> Result<()> {
    for row in &cell.stats {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            cell.ell.map(|l| l.to_string()).unwrap_or_default(),
            cell.n,
            cell.regime,
            row.stat,
            fmt_opt(row.empirical),
            fmt_opt(row.se),
            fmt_opt(row.exact),
            row.source_op.clone().unwrap_or_default(),
            cell.seed
        )?;
    }
    Ok(())
}

/// Per-replication observations.
struct Draws {
    v: Vec<f64>,
    v_s: Option<Vec<f64>>,
    classical: Option<Vec<f64>>,
}

fn draw_cell(target: &SampleTarget, grid: &LineGrid, seed: u64, reps: usize, classical: bool) -> Result<Draws> {
    let sim = Simulator::new(target, grid)?;
    if classical {
        let ell = match target {
            SampleTarget::SingleEll { ell, .. } => *ell,
            _ => unreachable!("validated: classical needs a single degree"),
        };
        let pairs: Vec<(f64, f64)> = (0..reps)
            .into_par_iter()
            .map(|i| {
                let d = sim.fl_draw(seed, i).expect("single degree target");
                let v = quadratic_variation(&d.path.values).expect("N+1 >= 2 points");
                let c = estimate_cl_classical(&d.coefficients, ell).expect("2l+1 coefficients").value;
                (v, c)
            })
            .collect();
        return Ok(Draws {
            v: pairs.iter().map(|p| p.0).collect(),
            v_s: None,
            classical: Some(pairs.iter().map(|p| p.1).collect()),
        });
    }
    let reps = sim.run(seed, reps);
    let v_s = reps[0].v_s.map(|_| reps.iter().map(|r| r.v_s.expect("fbm pair")).collect());
    Ok(Draws {
        v: reps.iter().map(|r| r.v).collect(),
        v_s,
        classical: None,
    })
}

fn cell_target(base: &SampleTarget, cell: &Cell) -> SampleTarget {
    match (base, cell.ell) {
        (SampleTarget::SingleEll { c_ell, .. }, Some(ell)) => SampleTarget::SingleEll { ell, c_ell: *c_ell },
        _ => base.clone(),
    }
}

/// Gram of the increments of the statistic's path (`B_t` for fBm).
fn cell_gram(target: &SampleTarget, grid: &LineGrid) -> Result<IncrementGram> {
    Ok(match target {
        SampleTarget::SingleEll { ell, c_ell } => increment_gram_fl(*ell, *c_ell, grid),
        SampleTarget::FullField { spectrum } => increment_gram_f(spectrum, grid).gram,
        SampleTarget::Fbm { fbm } => fbm_joint_gram(fbm, grid)?.marginal_t(),
    })
}

fn median(xs: &[f64]) -> f64 {
    let v = sorted(xs);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn run_cell(cfg: &ExperimentConfig, index: usize, cell: &Cell) -> Result<CellReport> {
    let stats = &cfg.statistics;
    let wants = |s: Statistic| stats.contains(&s);
    let scale = cfg.exact_scale;
    let grid = LineGrid::new(cell.n)?;
    let target = cell_target(&cfg.sample_spec.target, cell);
    let seed = stream_id(cfg.sample_spec.seed, index as u64, cell.n as u64);
    let reps = cfg.sample_spec.replications;
    let draws = draw_cell(&target, &grid, seed, reps, wants(Statistic::EstimatorError))?;
    let gram = cell_gram(&target, &grid)?;
    let exact_m = exact_mean(&gram);
    let exact_v = exact_var_vnl(&gram);
    let mut rows = Vec::new();

    if wants(Statistic::Mean) {
        rows.push(StatRow::compared("mean", mean_with_se(&draws.v)?, scale * exact_m, "exact_mean"));
    }
    let p_max = if wants(Statistic::K4) {
        4
    } else if wants(Statistic::K3) {
        3
    } else {
        2
    };
    if wants(Statistic::Var) || p_max > 2 {
        let emp = empirical_cumulants(&draws.v, p_max)?;
        let exact = if p_max > 2 && gram.n() > MAX_CUMULANT_N {
            None
        } else {
            Some(trace_cumulants(&gram, p_max)?)
        };
        let names = ["var", "k3", "k4"];
        let wanted = [Statistic::Var, Statistic::K3, Statistic::K4];
        for i in 0..emp.len() {
            if !wants(wanted[i]) {
                continue;
            }
            let row = match &exact {
                Some(k) => StatRow::compared(
                    names[i],
                    emp[i],
                    scale * k[i],
                    if i == 0 { "exact_var_vnl" } else { "trace_cumulant" },
                ),
                None => StatRow::empirical_only(names[i], emp[i].value, Some(emp[i].se)),
            };
            rows.push(row);
        }
    }
    if wants(Statistic::KsNormal) {
        let sd = exact_v.sqrt();
        let f: Vec<f64> = draws.v.iter().map(|v| (v - exact_m) / sd).collect();
        rows.push(StatRow::empirical_only("ks_normal", ks_normal(&f)?, None));
        if gram.n() <= MAX_CUMULANT_N {
            rows.push(StatRow::exact_only(
                "fourth_moment_bound",
                fourth_moment_bound(&gram)?,
                "fourth_moment_bound",
            ));
        }
    }
    if wants(Statistic::EstimatorError) {
        let (ell, c_ell) = match target {
            SampleTarget::SingleEll { ell, c_ell } => (ell, c_ell),
            _ => unreachable!("validated"),
        };
        let ratios: Vec<f64> = draws
            .v
            .iter()
            .map(|&v| Ok(estimate_cl(v, ell, cell.n)?.value / c_ell))
            .collect::<Result<_>>()?;
        let errs: Vec<f64> = ratios.iter().map(|r| r - 1.0).collect();
        rows.push(StatRow::compared("estimator_error", mean_with_se(&errs)?, 0.0, "estimate_cl"));
        let k = empirical_cumulants(&ratios, 2)?;
        rows.push(StatRow::compared(
            "estimator_var",
            k[0],
            scale * exact_v / (exact_m * exact_m),
            "exact_var_vnl/exact_mean^2",
        ));
        let classical: Vec<f64> = draws
            .classical
            .as_ref()
            .expect("drawn with coefficients")
            .iter()
            .map(|c| c / c_ell)
            .collect();
        let kc = empirical_cumulants(&classical, 2)?;
        rows.push(StatRow::compared(
            "classical_var",
            kc[0],
            scale * 2.0 / (2.0 * ell as f64 + 1.0),
            "estimate_cl_classical",
        ));
    }
    if wants(Statistic::Hurst) {
        let SampleTarget::Fbm { fbm } = &target else {
            unreachable!("validated")
        };
        let v_s = draws.v_s.as_ref().expect("fbm pairs");
        let est: Vec<_> = draws
            .v
            .iter()
            .zip(v_s)
            .map(|(&vt, &vs)| estimate_hurst(vt, vs, fbm.t, fbm.s))
            .collect::<Result<_>>()?;
        let h: Vec<f64> = est.iter().map(|e| e.value).collect();
        let out = est.iter().filter(|e| e.out_of_range).count() as f64 / est.len() as f64;
        rows.push(StatRow::compared("hurst_mean", mean_with_se(&h)?, scale * fbm.hurst, "fbm.hurst"));
        rows.push(StatRow::empirical_only("hurst_median", median(&h), None));
        rows.push(StatRow::empirical_only("hurst_out_of_range", out, None));
    }
    Ok(CellReport {
        ell: cell.ell,
        n: cell.n,
        regime: cfg
            .sweep
            .as_ref()
            .and_then(|s| s.regime)
            .map(|r| r.label())
            .unwrap_or_else(|| "none".into()),
        seed,
        replications: reps,
        stats: rows,
    })
}

/// Runs the experiment, handing each finished cell to `on_cell` before the
/// next one starts (so callers can flush partial results).
pub fn run_experiment_with<F: FnMut(&CellReport) -> Result<()>>(
    config: &ExperimentConfig,
    mut on_cell: F,
) -> Result<ExperimentReport> {
    config.validate()?;
    let cells = config.cells();
    let mut reports = Vec::with_capacity(cells.len());
    for (i, cell) in cells.iter().enumerate() {
        let r = run_cell(config, i, cell)?;
        on_cell(&r)?;
        reports.push(r);
    }
    let slopes = sweep_slopes(&reports)?;
    let invariants = invariant_checks(&reports);
    Ok(ExperimentReport {
        config: config.clone(),
        cells: reports,
        slopes,
        invariants,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(config, |_| Ok(()))
}

fn series(cells: &[CellReport], stat: &str, exact: bool) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for c in cells {
        let row = c.stat(stat)?;
        let y = if exact { row.exact? } else { row.empirical? };
        if y.is_nan() || y <= 0.0 {
            return None;
        }
        xs.push(c.n as f64);
        ys.push(y);
    }
    Some((xs, ys))
}

fn sweep_slopes(cells: &[CellReport]) -> Result<Vec<NamedSlope>> {
    let distinct_n = {
        let mut ns: Vec<usize> = cells.iter().map(|c| c.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns.len()
    };
    if cells.len() < 3 || distinct_n < 3 {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut push = |name: &str, against: &str, fit: Option<SlopeFit>| {
        if let Some(fit) = fit {
            out.push(NamedSlope {
                name: name.into(),
                against: against.into(),
                fit,
            });
        }
    };
    let fit = |s: Option<(Vec<f64>, Vec<f64>)>, c: LogCorrection| {
        s.and_then(|(x, y)| loglog_slope(&x, &y, c).ok())
    };
    push("exact_mean", "log N", fit(series(cells, "mean", true), LogCorrection::None));
    push("exact_var", "log N", fit(series(cells, "var", true), LogCorrection::None));
    push(
        "exact_var_over_log_n",
        "log N",
        fit(series(cells, "var", true), LogCorrection::DivideByLog),
    );
    push(
        "fourth_moment_bound",
        "log N",
        fit(series(cells, "fourth_moment_bound", true), LogCorrection::None),
    );
    // decay of the Kolmogorov distance against 1/ln N: slope of log KS on
    // log ln N (a 1/ln N rate gives −1)
    if let Some((ns, ks)) = series(cells, "ks_normal", false) {
        if ns.iter().all(|n| *n > 1.0) {
            let lns: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
            push(
                "ks_normal",
                "log ln N",
                loglog_slope(&lns, &ks, LogCorrection::None).ok(),
            );
        }
    }
    Ok(out)
}

/// Non-increasing allowing `allowed` strict increases.
pub fn non_increasing_with_inversions(xs: &[f64], allowed: usize) -> bool {
    xs.windows(2).filter(|w| w[1] > w[0]).count() <= allowed
}

fn invariant_checks(cells: &[CellReport]) -> Vec<InvariantCheck> {
    let mut out = Vec::new();
    let verdicts: Vec<bool> = cells
        .iter()
        .flat_map(|c| c.stats.iter().filter_map(StatRow::within_four_se))
        .collect();
    if !verdicts.is_empty() {
        let ok = verdicts.iter().filter(|v| **v).count();
        let frac = ok as f64 / verdicts.len() as f64;
        out.push(InvariantCheck {
            name: "oracle_agreement".into(),
            passed: frac >= 0.95,
            detail: format!("{ok}/{} comparisons within 4 SE", verdicts.len()),
        });
    }
    if cells.len() >= 2 {
        let grows = cells.windows(2).all(|w| w[1].n > w[0].n && w[1].ell >= w[0].ell);
        if grows {
            if let Some((_, fm)) = series(cells, "fourth_moment_bound", true) {
                out.push(InvariantCheck {
                    name: "fourth_moment_bound_non_increasing".into(),
                    passed: non_increasing_with_inversions(&fm, 0),
                    detail: format!("{fm:?}"),
                });
            }
            if let Some((_, ks)) = series(cells, "ks_normal", false) {
                out.push(InvariantCheck {
                    name: "ks_normal_non_increasing".into(),
                    passed: non_increasing_with_inversions(&ks, 1),
                    detail: format!("{ks:?} (one inversion allowed)"),
                });
            }
        }
    }
    out
}
