//! `dips` — decomposition reports, tail-ratio simulation, verification
//! suites and bound envelopes for double-indexed permutation statistics.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage/config error.

mod config;

use std::io::BufReader;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::{parse_kind, RunConfig};
use dips_core::bounds::{boundedness_delta_with_cap, DeltaReport, DEFAULT_ASSIGNMENT_CAP};
use dips_core::kernel::{center_kernel, eta_from_kernel, evaluate, normalize, DipsForm};
use dips_core::pair::{conditional_mean_d, pair_bounds_audit};
use dips_core::perm::{AllPermutations, Permutation};
use dips_core::sim::{mgf_estimate, tail_ratio_table_opts, z_cap};
use dips_core::stats::{
    build_kernel, closed_form_ab, sigma2_candidates, statistic_value, BuiltinDips, StatKind,
    StatisticSpec,
};
use dips_core::stein::{application_deltas, md_bound_envelope, mgf_envelope, tau_theta, EnvelopeParams};

#[derive(Parser)]
#[command(name = "dips", version, about)]
struct Cli {
    /// Declarative config file (TOML sections or a JSON meta sidecar);
    /// command-line flags win over file values.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Root seed for all randomized work.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the simulation engine.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output path (report file or simulation file prefix).
    #[arg(long, global = true)]
    out: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct StatArgs {
    /// Builtin statistic: descents | inversions | mww | chatterjee.
    #[arg(long, visible_alias = "statistic")]
    builtin: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    /// First group size (mww only).
    #[arg(long)]
    n1: Option<usize>,
    /// Second group size (mww only).
    #[arg(long)]
    n2: Option<usize>,
    /// paper_literal | variance_exact (default).
    #[arg(long)]
    normalization: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose a kernel into normalized (a, b, sigma) form and audit the
    /// boundedness scale.
    Decompose {
        /// Kernel file (`n=<int>` header plus n^4 reals).
        #[arg(long, conflicts_with = "builtin")]
        kernel: Option<String>,
        #[command(flatten)]
        stat: StatArgs,
        /// Also solve the exact assignment row bound (n-capped).
        #[arg(long)]
        exact_assignment: bool,
        /// Cap for the exact assignment solve (default 12).
        #[arg(long)]
        assignment_cap: Option<usize>,
    },
    /// Monte Carlo tail-ratio table (CSV + JSON meta sidecar).
    Simulate {
        #[command(flatten)]
        stat: StatArgs,
        #[arg(long)]
        samples: Option<u64>,
        /// Explicit comma-separated grid; wins over --z-max/--z-points.
        #[arg(long)]
        z_grid: Option<String>,
        /// Upper end of the automatic grid (default: the range cap).
        #[arg(long)]
        z_max: Option<f64>,
        /// Number of automatic grid points (default 5).
        #[arg(long)]
        z_points: Option<usize>,
        /// Keep grid points beyond the moderate-deviation range cap.
        #[arg(long)]
        allow_beyond_range: bool,
        /// Also estimate E e^{tW} at these comma-separated t values.
        #[arg(long)]
        mgf_t: Option<String>,
    },
    /// Deterministic verification suites; nonzero exit on failure.
    Verify {
        /// pair-identity | pair-audit | lemma4 | reconstruct | moments | all
        suite: String,
        #[command(flatten)]
        stat: StatArgs,
        /// Sample count for randomized audits.
        #[arg(long)]
        samples: Option<u64>,
        /// Number of random permutations for the identity checks.
        #[arg(long)]
        perms: Option<u64>,
    },
    /// Evaluate tau(theta) and the bound envelopes over z and t lists.
    Envelope {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long)]
        c1: Option<f64>,
        #[arg(long)]
        delta1_c: Option<f64>,
        /// Comma-separated z list (default "0,0.5,1,1.5,2").
        #[arg(long)]
        z: Option<String>,
        /// Comma-separated t list for the MGF envelope (default: the z list).
        #[arg(long)]
        t: Option<String>,
    },
    /// One-shot statistic on a permutation or a two-column CSV.
    Stats {
        #[command(flatten)]
        stat: StatArgs,
        /// Comma-separated 1-based permutation values, e.g. "3,1,2".
        #[arg(long)]
        perm: Option<String>,
        /// Two-column numeric CSV (x,y) for the rank correlation.
        #[arg(long)]
        csv: Option<String>,
        /// Skip the first CSV line.
        #[arg(long)]
        has_header: bool,
    },
}

/// Exit(2) wrapper for configuration and usage failures.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(e: impl Into<anyhow::Error>) -> anyhow::Result<T> {
    Err(UsageError(e.into()).into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(2)
        }
    }
}

fn flags_to_config(cli: &Cli, stat: &StatArgs) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.statistic.kind = stat.builtin.clone();
    cfg.statistic.n = stat.n;
    cfg.statistic.n1 = stat.n1;
    cfg.statistic.n2 = stat.n2;
    cfg.statistic.normalization = stat.normalization.clone();
    cfg.simulation.seed = cli.seed;
    cfg.simulation.workers = cli.workers;
    cfg.output.out = cli.out.clone();
    cfg
}

fn resolved_config(cli: &Cli, stat: &StatArgs) -> anyhow::Result<RunConfig> {
    let base = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => return usage(e),
        },
        None => RunConfig::default(),
    };
    Ok(base.merge_over(flags_to_config(cli, stat)))
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Decompose {
            kernel,
            stat,
            exact_assignment,
            assignment_cap,
        } => cmd_decompose(&cli, kernel.clone(), stat, *exact_assignment, *assignment_cap),
        Command::Simulate {
            stat,
            samples,
            z_grid,
            z_max,
            z_points,
            allow_beyond_range,
            mgf_t,
        } => cmd_simulate(
            &cli,
            stat,
            *samples,
            z_grid.clone(),
            *z_max,
            *z_points,
            *allow_beyond_range,
            mgf_t.clone(),
        ),
        Command::Verify {
            suite,
            stat,
            samples,
            perms,
        } => cmd_verify(&cli, suite, stat, *samples, *perms),
        Command::Envelope {
            n,
            delta,
            theta,
            c1,
            delta1_c,
            z,
            t,
        } => cmd_envelope(&cli, *n, *delta, *theta, *c1, *delta1_c, z.clone(), t.clone()),
        Command::Stats {
            stat,
            perm,
            csv,
            has_header,
        } => cmd_stats(&cli, stat, perm.clone(), csv.clone(), *has_header),
    }
}

fn write_or_print(out: &Option<String>, content: &str) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, content).with_context(|| format!("writing {}", path))?,
        None => println!("{}", content),
    }
    Ok(())
}

fn parse_f64_list(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number '{}'", t))
        })
        .collect()
}

// ---------------------------------------------------------------- decompose

#[derive(Serialize)]
struct ClosedFormCrossCheck {
    max_abs_diff_a: f64,
    max_abs_diff_b: f64,
    sigma_rel_diff: f64,
    mean_shift_abs_diff: f64,
    pass: bool,
}

#[derive(Serialize)]
struct DecomposeReport {
    n: usize,
    source: String,
    sigma: f64,
    sigma_squared: f64,
    a_is_zero: bool,
    mean_shift: f64,
    sum_a_squared: f64,
    max_marginal_residual: f64,
    eta_center_residual: f64,
    delta_report: DeltaReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma2_candidates: Option<dips_core::stats::Sigma2Candidates>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_report_statistic_scale: Option<DeltaReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form_crosscheck: Option<ClosedFormCrossCheck>,
}

fn cmd_decompose(
    cli: &Cli,
    kernel_path: Option<String>,
    stat: &StatArgs,
    exact_assignment: bool,
    assignment_cap: Option<usize>,
) -> anyhow::Result<bool> {
    let cap = assignment_cap.unwrap_or(DEFAULT_ASSIGNMENT_CAP);
    let cfg = resolved_config(cli, stat)?;
    let (kernel, source, spec) = if let Some(path) = kernel_path {
        let file = match std::fs::File::open(&path) {
            Ok(f) => f,
            Err(e) => return usage(anyhow::anyhow!("opening kernel {}: {}", path, e)),
        };
        match dips_core::io::read_kernel(BufReader::new(file)) {
            Ok(k) => (k, path, None),
            Err(e) => return usage(e),
        }
    } else if cfg.statistic.kind.is_some() {
        let spec = match cfg.statistic_spec() {
            Ok(s) => s,
            Err(e) => return usage(e),
        };
        match build_kernel::<f64>(&spec) {
            Ok(k) => (k, format!("builtin:{}", spec.kind.label()), Some(spec)),
            Err(e) => return usage(e),
        }
    } else {
        return usage(anyhow::anyhow!("decompose needs --kernel or --builtin"));
    };

    let centered = center_kernel(&kernel);
    let eta = eta_from_kernel(&kernel, &centered)?;
    let dips = normalize(&kernel)?;
    let delta_report = boundedness_delta_with_cap(&dips, exact_assignment, cap)?;

    let (candidates, stat_delta, crosscheck) = match &spec {
        Some(spec) => {
            let closed = closed_form_ab::<f64>(spec)?;
            let mut diff_a = 0f64;
            for (p, c) in dips.a_values().iter().zip(closed.a_values()) {
                diff_a = diff_a.max((p - c).abs());
            }
            let mut diff_b = 0f64;
            for (p, c) in dips.b_values().iter().zip(closed.b_values()) {
                diff_b = diff_b.max((p - c).abs());
            }
            let sigma_rel = (dips.sigma() - closed.sigma()).abs() / closed.sigma();
            let shift_diff = (dips.mean_shift() - closed.mean_shift()).abs();
            let check = ClosedFormCrossCheck {
                max_abs_diff_a: diff_a,
                max_abs_diff_b: diff_b,
                sigma_rel_diff: sigma_rel,
                mean_shift_abs_diff: shift_diff,
                pass: diff_a <= 1e-10 && diff_b <= 1e-10 && sigma_rel <= 1e-10,
            };
            let builtin = BuiltinDips::<f64>::statistic(spec)?;
            let stat_delta = boundedness_delta_with_cap(&builtin, exact_assignment, cap)?;
            (Some(sigma2_candidates(spec)?), Some(stat_delta), Some(check))
        }
        None => (None, None, None),
    };

    let report = DecomposeReport {
        n: kernel.n(),
        source,
        sigma: dips.sigma(),
        sigma_squared: dips.sigma() * dips.sigma(),
        a_is_zero: dips.a_is_zero(),
        mean_shift: dips.mean_shift(),
        sum_a_squared: dips.sum_a_squared(),
        max_marginal_residual: centered.max_marginal_residual(),
        eta_center_residual: eta.max_center_residual(),
        delta_report,
        sigma2_candidates: candidates,
        delta_report_statistic_scale: stat_delta,
        closed_form_crosscheck: crosscheck,
    };
    let json = serde_json::to_string_pretty(&report)?;
    write_or_print(&cli.out, &json)?;
    Ok(true)
}

// ----------------------------------------------------------------- simulate

#[derive(Serialize)]
struct SimulateSidecar<'a> {
    config: &'a RunConfig,
    result: &'a dips_core::sim::TableMeta,
    #[serde(skip_serializing_if = "Option::is_none")]
    mgf: Option<Vec<MgfRow>>,
}

#[derive(Serialize)]
struct MgfRow {
    t: f64,
    estimate: f64,
    std_error: f64,
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    cli: &Cli,
    stat: &StatArgs,
    samples: Option<u64>,
    z_grid: Option<String>,
    z_max: Option<f64>,
    z_points: Option<usize>,
    allow_beyond_range: bool,
    mgf_t: Option<String>,
) -> anyhow::Result<bool> {
    let mut cfg = resolved_config(cli, stat)?;
    if samples.is_some() {
        cfg.simulation.num_samples = samples;
    }
    if let Some(g) = &z_grid {
        cfg.simulation.z_grid = Some(match parse_f64_list(g) {
            Ok(v) => v,
            Err(e) => return usage(e),
        });
    }
    if z_max.is_some() {
        cfg.simulation.z_max = z_max;
    }
    if z_points.is_some() {
        cfg.simulation.z_points = z_points;
    }
    if allow_beyond_range {
        cfg.simulation.allow_beyond_range = Some(true);
    }
    let spec = match cfg.statistic_spec() {
        Ok(s) => s,
        Err(e) => return usage(e),
    };
    let num_samples = cfg.simulation.num_samples.unwrap_or(1_000_000);
    let seed = cfg.simulation.seed.unwrap_or(42);
    let workers = cfg.simulation.workers.unwrap_or(1);
    let enforce = !cfg.simulation.allow_beyond_range.unwrap_or(false);
    let grid: Vec<f64> = match &cfg.simulation.z_grid {
        Some(g) => g.clone(),
        None => {
            let points = cfg.simulation.z_points.unwrap_or(5);
            let max = cfg.simulation.z_max.unwrap_or_else(|| z_cap(&spec));
            if points < 1 {
                return usage(anyhow::anyhow!("z_points must be >= 1"));
            }
            (0..points)
                .map(|i| max * i as f64 / (points - 1).max(1) as f64)
                .collect()
        }
    };
    let table = match tail_ratio_table_opts(&spec, &grid, num_samples, seed, workers, enforce) {
        Ok(t) => t,
        Err(e) => return usage(e),
    };

    let mgf_rows = match &mgf_t {
        Some(list) => {
            let ts = match parse_f64_list(list) {
                Ok(v) => v,
                Err(e) => return usage(e),
            };
            let mut rows = Vec::with_capacity(ts.len());
            for t in ts {
                let (estimate, std_error) = mgf_estimate(&spec, t, num_samples, seed, workers)?;
                rows.push(MgfRow {
                    t,
                    estimate,
                    std_error,
                });
            }
            Some(rows)
        }
        None => None,
    };

    let prefix = cfg
        .output
        .out
        .clone()
        .unwrap_or_else(|| "tail_table".to_string());
    let csv = dips_core::io::tail_table_csv(&table);
    std::fs::write(format!("{}.csv", prefix), &csv)
        .with_context(|| format!("writing {}.csv", prefix))?;
    let sidecar = SimulateSidecar {
        config: &cfg,
        result: &table.meta,
        mgf: mgf_rows,
    };
    std::fs::write(
        format!("{}.meta.json", prefix),
        serde_json::to_string_pretty(&sidecar)?,
    )
    .with_context(|| format!("writing {}.meta.json", prefix))?;
    println!(
        "{} n={} samples={} seed={} workers={}: max |ratio-1| = {:.6} over {} rows -> {}.csv",
        table.meta.statistic,
        table.meta.n,
        num_samples,
        seed,
        workers,
        table.meta.max_abs_ratio_minus_one,
        table.rows.len(),
        prefix
    );
    Ok(true)
}

// ------------------------------------------------------------------- verify

#[derive(Serialize)]
struct CheckResult {
    name: String,
    pass: bool,
    detail: serde_json::Value,
}

fn builtin_statistic_dips(spec: &StatisticSpec) -> anyhow::Result<BuiltinDips<f64>> {
    Ok(BuiltinDips::statistic(spec)?)
}

fn verify_pair_identity(spec: &StatisticSpec, perms: u64, seed: u64) -> anyhow::Result<CheckResult> {
    let dips = builtin_statistic_dips(spec)?;
    let mut rng = dips_core::sim::substream(seed, 0);
    let mut worst = 0f64;
    for _ in 0..perms {
        let perm = Permutation::sample(&mut rng, spec.n);
        let (lhs, rhs) = conditional_mean_d(&dips, &perm)?;
        let w: f64 = evaluate(&dips, &perm)?;
        worst = worst.max((lhs - rhs).abs() / w.abs().max(1.0));
    }
    Ok(CheckResult {
        name: "pair-identity".into(),
        pass: worst <= 1e-10,
        detail: serde_json::json!({
            "statistic": spec.kind.label(),
            "n": spec.n,
            "permutations": perms,
            "max_relative_discrepancy": worst,
            "tolerance": 1e-10,
        }),
    })
}

fn verify_pair_audit(spec: &StatisticSpec, samples: u64, seed: u64) -> anyhow::Result<CheckResult> {
    let dips = builtin_statistic_dips(spec)?;
    let delta = boundedness_delta_with_cap(&dips, false, DEFAULT_ASSIGNMENT_CAP)?.delta;
    let report = pair_bounds_audit(&dips, samples, seed, delta)?;
    Ok(CheckResult {
        name: "pair-audit".into(),
        pass: report.passed(),
        detail: serde_json::to_value(&report)?,
    })
}

fn verify_lemma4(n: usize) -> anyhow::Result<CheckResult> {
    use dips_core::transform::{fiber_uniformity_test, TransformSpec, TransformStep};
    let mut reports = Vec::new();
    let mut pass = true;
    let mut specs: Vec<(String, TransformSpec)> = vec![
        ("single(1->2)".into(), TransformSpec::single(0, 1)),
        (
            "pair(1,2 -> 2,1)".into(),
            TransformSpec::pair(0, 1, 1, 0),
        ),
    ];
    if n >= 5 {
        specs.push((
            "pair+single".into(),
            TransformSpec::composed(vec![
                TransformStep::Pair {
                    i: 0,
                    j: 1,
                    k: 1,
                    l: 2,
                },
                TransformStep::Single { i: 2, k: 0 },
            ]),
        ));
    }
    if n >= 6 {
        specs.push((
            "pair+pair".into(),
            TransformSpec::composed(vec![
                TransformStep::Pair {
                    i: 0,
                    j: 1,
                    k: 2,
                    l: 3,
                },
                TransformStep::Pair {
                    i: 2,
                    j: 3,
                    k: 0,
                    l: 5,
                },
            ]),
        ));
    }
    for (label, spec) in specs {
        let report = fiber_uniformity_test(n, &spec)?;
        pass &= report.passed();
        reports.push(serde_json::json!({
            "transform": label,
            "pass": report.passed(),
            "fiber_size": report.fiber_size,
            "expected_count": report.expected_count,
            "violations": report.constraint_violations.len(),
            "nonuniform": report.nonuniform.len(),
        }));
    }
    Ok(CheckResult {
        name: "lemma4".into(),
        pass,
        detail: serde_json::json!({ "n": n, "transforms": reports }),
    })
}

fn verify_reconstruct(spec: &StatisticSpec, seed: u64) -> anyhow::Result<CheckResult> {
    let kernel = build_kernel::<f64>(spec)?;
    let dips = normalize(&kernel)?;
    let scale = (spec.n * spec.n) as f64 * kernel.max_abs().max(1.0);
    let mut worst = 0f64;
    let mut checked = 0u64;
    if spec.n <= 6 {
        for perm in AllPermutations::new(spec.n) {
            worst = worst.max(dips_core::kernel::reconstruct_check_with(
                &kernel, &dips, &perm,
            )?);
            checked += 1;
        }
    } else {
        let mut rng = dips_core::sim::substream(seed, 0);
        for _ in 0..200 {
            let perm = Permutation::sample(&mut rng, spec.n);
            worst = worst.max(dips_core::kernel::reconstruct_check_with(
                &kernel, &dips, &perm,
            )?);
            checked += 1;
        }
    }
    Ok(CheckResult {
        name: "reconstruct".into(),
        pass: worst <= 1e-10 * scale,
        detail: serde_json::json!({
            "statistic": spec.kind.label(),
            "n": spec.n,
            "permutations_checked": checked,
            "max_residual": worst,
            "tolerance": 1e-10 * scale,
        }),
    })
}

fn verify_moments(n: usize) -> anyhow::Result<CheckResult> {
    if !(2..=8).contains(&n) {
        bail!("moments suite needs 2 <= n <= 8");
    }
    let nf = n as f64;
    let total = (1..=n as u64).product::<u64>() as f64;
    let n1 = n / 2;
    let n2 = n - n1;
    let mut sums = [0f64; 6]; // des, des^2, inv, inv^2, mww, mww^2
    for p in AllPermutations::new(n) {
        let d = dips_core::stats::descents(&p) as f64;
        let i = dips_core::stats::inversions(&p) as f64;
        let m = dips_core::stats::mww_count(&p, n1, n2)? as f64;
        sums[0] += d;
        sums[1] += d * d;
        sums[2] += i;
        sums[3] += i * i;
        sums[4] += m;
        sums[5] += m * m;
    }
    let mean = |s: f64| s / total;
    let var = |s: f64, s2: f64| s2 / total - (s / total) * (s / total);
    let rows = vec![
        (
            "descents",
            mean(sums[0]),
            (nf - 1.0) / 2.0,
            var(sums[0], sums[1]),
            (nf + 1.0) / 12.0,
        ),
        (
            "inversions",
            mean(sums[2]),
            nf * (nf - 1.0) / 4.0,
            var(sums[2], sums[3]),
            nf * (nf - 1.0) * (2.0 * nf + 5.0) / 72.0,
        ),
        (
            "mww",
            mean(sums[4]),
            (n1 * n2) as f64 / 2.0,
            var(sums[4], sums[5]),
            (n1 * n2) as f64 * (nf + 1.0) / 12.0,
        ),
    ];
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, m, m_want, v, v_want) in rows {
        let ok = (m - m_want).abs() <= 1e-10 && (v - v_want).abs() <= 1e-10;
        pass &= ok;
        detail.push(serde_json::json!({
            "statistic": name,
            "mean": m, "mean_expected": m_want,
            "variance": v, "variance_expected": v_want,
            "pass": ok,
        }));
    }
    // normalization arbitration: which descent scale yields unit variance
    let var_des = var(sums[0], sums[1]);
    let literal_scale = (nf + 1.0) / 6.0;
    let exact_scale = (nf + 1.0) / 12.0;
    let arbitration = serde_json::json!({
        "descents_raw_variance": var_des,
        "paper_literal_scale": literal_scale,
        "paper_literal_normalized_variance": var_des / literal_scale,
        "variance_exact_scale": exact_scale,
        "variance_exact_normalized_variance": var_des / exact_scale,
        "unit_variance_under": if (var_des / exact_scale - 1.0).abs() < 1e-9 {
            "variance_exact"
        } else {
            "paper_literal"
        },
    });
    Ok(CheckResult {
        name: "moments".into(),
        pass,
        detail: serde_json::json!({ "n": n, "moments": detail, "descent_normalization_arbitration": arbitration }),
    })
}

fn cmd_verify(
    cli: &Cli,
    suite: &str,
    stat: &StatArgs,
    samples: Option<u64>,
    perms: Option<u64>,
) -> anyhow::Result<bool> {
    let cfg = resolved_config(cli, stat)?;
    let seed = cfg.simulation.seed.unwrap_or(42);
    let samples = samples.unwrap_or(100_000);
    let perms = perms.unwrap_or(100);
    let need_spec = |cfg: &RunConfig| -> anyhow::Result<StatisticSpec> {
        match cfg.statistic_spec() {
            Ok(s) => Ok(s),
            Err(e) => Err(UsageError(e).into()),
        }
    };
    let mut results = Vec::new();
    match suite {
        "pair-identity" => results.push(verify_pair_identity(&need_spec(&cfg)?, perms, seed)?),
        "pair-audit" => results.push(verify_pair_audit(&need_spec(&cfg)?, samples, seed)?),
        "lemma4" => {
            let n = match cfg.statistic.n {
                Some(n) => n,
                None => return usage(anyhow::anyhow!("lemma4 needs --n")),
            };
            results.push(verify_lemma4(n)?);
        }
        "reconstruct" => results.push(verify_reconstruct(&need_spec(&cfg)?, seed)?),
        "moments" => {
            let n = match cfg.statistic.n {
                Some(n) => n,
                None => return usage(anyhow::anyhow!("moments needs --n")),
            };
            results.push(verify_moments(n)?);
        }
        "all" => {
            let spec = need_spec(&cfg)?;
            results.push(verify_pair_identity(&spec, perms, seed)?);
            results.push(verify_pair_audit(&spec, samples, seed)?);
            results.push(verify_reconstruct(&spec, seed)?);
            results.push(verify_lemma4(spec.n.min(6))?);
            results.push(verify_moments(spec.n.min(7))?);
        }
        other => return usage(anyhow::anyhow!("unknown verify suite '{}'", other)),
    }
    let pass = results.iter().all(|r| r.pass);
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "suite": suite,
        "pass": pass,
        "checks": results
            .iter()
            .map(|r| serde_json::json!({"name": r.name, "pass": r.pass, "detail": r.detail}))
            .collect::<Vec<_>>(),
    }))?;
    write_or_print(&cli.out, &json)?;
    Ok(pass)
}

// ----------------------------------------------------------------- envelope

#[allow(clippy::too_many_arguments)]
fn cmd_envelope(
    cli: &Cli,
    n: Option<usize>,
    delta: Option<f64>,
    theta: Option<f64>,
    c1: Option<f64>,
    delta1_c: Option<f64>,
    z: Option<String>,
    t: Option<String>,
) -> anyhow::Result<bool> {
    let cfg = resolved_config(cli, &StatArgs::default())?;
    let n = match n.or(cfg.statistic.n) {
        Some(v) => v,
        None => return usage(anyhow::anyhow!("envelope needs --n")),
    };
    let delta = match delta.or(cfg.envelope.delta) {
        Some(v) => v,
        None => return usage(anyhow::anyhow!("envelope needs --delta")),
    };
    let theta = theta.or(cfg.envelope.theta).unwrap_or(1.0);
    let params = EnvelopeParams {
        n,
        delta,
        theta,
        c1: c1.or(cfg.envelope.c1).unwrap_or(1.0),
        delta1_c: delta1_c.or(cfg.envelope.delta1_c).unwrap_or(1.0),
    };
    if let Err(e) = params.validate() {
        return usage(e);
    }
    let zs = match z {
        Some(list) => match parse_f64_list(&list) {
            Ok(v) => v,
            Err(e) => return usage(e),
        },
        None => vec![0.0, 0.5, 1.0, 1.5, 2.0],
    };
    let ts = match t {
        Some(list) => match parse_f64_list(&list) {
            Ok(v) => v,
            Err(e) => return usage(e),
        },
        None => zs.clone(),
    };
    let tau = tau_theta(&params)?;
    let (delta1, delta2) = application_deltas(n, delta, params.delta1_c);
    let mut z_rows = Vec::new();
    for z in zs {
        let in_range = (0.0..=tau).contains(&z);
        z_rows.push(serde_json::json!({
            "z": z,
            "in_range": in_range,
            "md_bound": if in_range {
                Some(md_bound_envelope(&params, z)?)
            } else {
                None
            },
        }));
    }
    let t_hi = tau.min(1.0 / delta);
    let mut t_rows = Vec::new();
    for t in ts {
        let in_range = (0.0..=t_hi).contains(&t);
        t_rows.push(serde_json::json!({
            "t": t,
            "in_range": in_range,
            "delta1_at_t": delta1(t),
            "delta2": delta2,
            "mgf_envelope": mgf_envelope(t, delta, delta1(t), delta2),
        }));
    }
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "params": params,
        "tau_theta": tau,
        "md_rows": z_rows,
        "mgf_rows": t_rows,
        "note": "constants c1 and delta1_c are configuration (the source bounds leave them unnamed)",
    }))?;
    write_or_print(&cli.out, &json)?;
    Ok(true)
}

// -------------------------------------------------------------------- stats

fn cmd_stats(
    cli: &Cli,
    stat: &StatArgs,
    perm: Option<String>,
    csv: Option<String>,
    has_header: bool,
) -> anyhow::Result<bool> {
    let cfg = resolved_config(cli, stat)?;
    if let Some(path) = csv {
        // two-column numeric CSV -> rank correlation on (x, y)
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => return usage(anyhow::anyhow!("reading {}: {}", path, e)),
        };
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 && has_header {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let (a, b) = (parts.next(), parts.next());
            match (a, b) {
                (Some(a), Some(b)) => {
                    let parse = |s: &str| -> anyhow::Result<f64> {
                        s.trim()
                            .parse::<f64>()
                            .with_context(|| format!("line {}: bad number '{}'", lineno + 1, s))
                    };
                    match (parse(a), parse(b)) {
                        (Ok(x), Ok(y)) => {
                            xs.push(x);
                            ys.push(y);
                        }
                        (Err(e), _) | (_, Err(e)) => return usage(e),
                    }
                }
                _ => {
                    return usage(anyhow::anyhow!(
                        "line {}: expected two comma-separated columns",
                        lineno + 1
                    ))
                }
            }
        }
        let xi = match dips_core::stats::chatterjee_xi(&xs, &ys) {
            Ok(v) => v,
            Err(e) => return usage(e),
        };
        let json = serde_json::to_string_pretty(&serde_json::json!({
            "statistic": "chatterjee_xi",
            "n": xs.len(),
            "value": xi,
        }))?;
        write_or_print(&cli.out, &json)?;
        return Ok(true);
    }

    let values = match perm {
        Some(p) => p
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| UsageError(anyhow::anyhow!("bad permutation: {}", e)))?,
        None => return usage(anyhow::anyhow!("stats needs --perm or --csv")),
    };
    let permutation = match Permutation::from_one_based(&values) {
        Ok(p) => p,
        Err(e) => return usage(e),
    };
    let kind = match cfg.statistic.kind.as_deref() {
        Some(k) => match parse_kind(k) {
            Ok(k) => k,
            Err(e) => return usage(anyhow::anyhow!(e)),
        },
        None => return usage(anyhow::anyhow!("stats needs --builtin/--statistic")),
    };
    let n = permutation.len();
    let make_spec = |norm| -> anyhow::Result<StatisticSpec> {
        Ok(match kind {
            StatKind::Mww => {
                let n1 = cfg.statistic.n1.unwrap_or(n / 2);
                let n2 = cfg.statistic.n2.unwrap_or(n - n1);
                StatisticSpec::mww(n1, n2, norm)?
            }
            k => StatisticSpec::new(k, n, norm)?,
        })
    };
    let spec_exact = make_spec(dips_core::stats::Normalization::VarianceExact)?;
    let spec_literal = make_spec(dips_core::stats::Normalization::PaperLiteral)?;
    if spec_exact.n != n {
        return usage(anyhow::anyhow!(
            "permutation length {} does not match n1+n2 = {}",
            n,
            spec_exact.n
        ));
    }
    let raw = dips_core::stats::raw_statistic(&spec_exact, &permutation)?;
    let json = serde_json::to_string_pretty(&serde_json::json!({
        "statistic": spec_exact.kind.label(),
        "n": n,
        "raw": raw,
        "value_variance_exact": statistic_value(&spec_exact, &permutation)?,
        "value_paper_literal": statistic_value(&spec_literal, &permutation)?,
    }))?;
    write_or_print(&cli.out, &json)?;
    Ok(true)
}
