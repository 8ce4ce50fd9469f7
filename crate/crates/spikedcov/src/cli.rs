//! Command-line interface: estimation, simulation, spike-count selection,
//! dimensionality reduction, and oracle validation.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Outputs go to
//! `--out` (stdout when omitted) in `--format`; timing and warnings go to
//! stderr so identical inputs produce byte-identical output files.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use ndarray::s;
use serde::Serialize;

use crate::bench::{run_case_opts, write_report, CaseOptions, Method, ReportFormat};
use crate::error::{Error, Result};
use crate::estimators::{
    cumulative_variance_explained, estimate_eigenvectors, reduce_reconstruct,
    summarize_eigenvalues, EigenSummary,
};
use crate::model::{load_matrix_csv, sample_covariance, LoadOptions, SpikedScenario};
use crate::oracle;
use crate::prior::{
    giw_data_driven, gsiw_data_driven, iw_fixed, siw_fixed, validate_assumptions, PriorConfig,
};
use crate::sampler::{run_chain, McmcSettings};
use crate::selection::{select_k, SelectionCriterion};
use crate::stats;

/// Environment variable consulted when `--seed` is absent.
pub const SEED_ENV: &str = "SPIKEDCOV_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "spikedcov",
    version,
    about = "Bayesian spiked-covariance estimation with gSIW priors"
)]
struct Cli {
    /// RNG seed; falls back to SPIKEDCOV_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format for tabular results.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
    /// Cap worker parallelism (default: all cores). Output does not depend
    /// on the thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PriorKind {
    Gsiw,
    Giw,
    Siw,
    Iw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    Waic,
    Gr,
    Icp3,
}

impl From<CriterionArg> for SelectionCriterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Waic => SelectionCriterion::Waic,
            CriterionArg::Gr => SelectionCriterion::GrowthRatio,
            CriterionArg::Icp3 => SelectionCriterion::IcP3,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Posterior estimation of the spiked eigenstructure from a CSV matrix.
    Estimate {
        /// Input CSV (rows = observations).
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = PriorKind::Gsiw)]
        prior: PriorKind,
        /// Declared spike count.
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 2000)]
        draws: usize,
        #[arg(long, default_value_t = 500)]
        burnin: usize,
        #[arg(long, default_value_t = 1)]
        thin: usize,
        /// Override the prior scale (H = hI).
        #[arg(long)]
        h: Option<f64>,
        /// Subtract column means before computing S.
        #[arg(long)]
        center: bool,
        /// Also write the flat per-draw CSV here.
        #[arg(long)]
        draws_out: Option<PathBuf>,
    },
    /// Replicated synthetic comparison of the estimation methods.
    Simulate {
        /// Scenario preset: 1 = (50, 500) spikes (50, 20, 10);
        /// 2 = (40, 100) spikes (5, 4, 3).
        #[arg(long, default_value_t = 1)]
        case: u8,
        /// Override the preset sample size.
        #[arg(long)]
        n: Option<usize>,
        /// Override the preset dimension.
        #[arg(long)]
        p: Option<usize>,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 2000)]
        draws: usize,
        #[arg(long, default_value_t = 500)]
        burnin: usize,
        /// Comma-separated subset of sample,gsiw,giw,siw,iw,spoet.
        #[arg(long)]
        methods: Option<String>,
        /// Rotate Σ₀ by a fixed Haar matrix (non-diagonal truth).
        #[arg(long)]
        rotate: bool,
    },
    /// Spike-count selection on a CSV matrix.
    SelectK {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = CriterionArg::Waic)]
        criterion: CriterionArg,
        /// Largest candidate k (default ⌊(n∧p)/2⌋ capped at n∧p - 2).
        #[arg(long)]
        kmax: Option<usize>,
        #[arg(long, default_value_t = 500)]
        draws: usize,
        #[arg(long, default_value_t = 250)]
        burnin: usize,
        #[arg(long)]
        center: bool,
    },
    /// Select k, project onto the top-k sample eigenvectors, and report
    /// reconstruction quality (NMSE, CVE).
    Reduce {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = CriterionArg::Waic)]
        criterion: CriterionArg,
        #[arg(long)]
        kmax: Option<usize>,
        /// Skip selection and use this k directly.
        #[arg(long)]
        k: Option<usize>,
        /// Write the reconstructed matrix to this CSV path.
        #[arg(long)]
        recon_out: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        draws: usize,
        #[arg(long, default_value_t = 250)]
        burnin: usize,
        #[arg(long)]
        center: bool,
    },
    /// Run the oracle checks and print a pass/fail table.
    Validate {
        /// Importance-sampling oracle size.
        #[arg(long, default_value_t = 200_000)]
        samples: usize,
        /// Replications for the asymptotics check.
        #[arg(long, default_value_t = 200)]
        reps: usize,
    },
}

/// Parse and run; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(t) = cli.threads {
        // Ignore failure: the global pool may already exist in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global();
    }
    match run(cli) {
        Ok(ok) => {
            if ok {
                0
            } else {
                2
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 1,
                _ => 2,
            }
        }
    }
}

fn resolve_seed(flag: Option<u64>) -> u64 {
    flag.or_else(|| {
        std::env::var(SEED_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
    })
    .unwrap_or(0)
}

fn write_output(out: &Option<PathBuf>, content: &str) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, content)?;
            Ok(())
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            if !content.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let seed = resolve_seed(cli.seed);
    match cli.command {
        Command::Estimate {
            input,
            prior,
            k,
            draws,
            burnin,
            thin,
            h,
            center,
            draws_out,
        } => {
            let started = Instant::now();
            let x = load_matrix_csv(&input, LoadOptions { center })?;
            let ss = sample_covariance(&x)?;
            let cfg = build_prior(prior, &ss, k, h)?;
            let mut ms = McmcSettings::new(seed);
            ms.draws = draws;
            ms.burn_in = burnin;
            ms.thin = thin;
            let posterior = run_chain(&ss, &cfg, &ms, None)?;
            let summaries = summarize_eigenvalues(&posterior, k)?;
            let vectors = estimate_eigenvectors(&posterior, &ss.q.as_array().view())?;
            if let Some(path) = draws_out {
                let file = std::fs::File::create(path)?;
                posterior.write_draws_csv(std::io::BufWriter::new(file))?;
            }

            #[derive(Serialize)]
            struct EstimateOutput {
                prior: String,
                n: usize,
                p: usize,
                k: usize,
                eigenvalues: Vec<EigenSummary>,
                /// unit-norm columns, one per retained eigenvector
                eigenvectors: Vec<Vec<f64>>,
            }
            let output = EstimateOutput {
                prior: format!("{prior:?}").to_lowercase(),
                n: ss.n,
                p: ss.p,
                k,
                eigenvalues: summaries.clone(),
                eigenvectors: (0..k).map(|r| vectors.column(r).to_vec()).collect(),
            };
            let content = match cli.format {
                OutputFormat::Json => serde_json::to_string_pretty(&output)?,
                OutputFormat::Csv => {
                    let mut s = String::from("index,point,lo,hi,interval_length\n");
                    for e in &summaries {
                        s.push_str(&format!(
                            "{},{},{},{},{}\n",
                            e.index, e.point, e.lo, e.hi, e.interval_length
                        ));
                    }
                    s
                }
            };
            write_output(&cli.out, &content)?;
            eprintln!("estimate: {:.2}s", started.elapsed().as_secs_f64());
            Ok(true)
        }

        Command::Simulate {
            case,
            n,
            p,
            reps,
            draws,
            burnin,
            methods,
            rotate,
        } => {
            let (preset_n, preset_p, spikes) = match case {
                1 => (50, 500, vec![50.0, 20.0, 10.0]),
                2 => (40, 100, vec![5.0, 4.0, 3.0]),
                other => {
                    return Err(Error::Config(format!("unknown case {other}; use 1 or 2")));
                }
            };
            let sc =
                SpikedScenario::new(n.unwrap_or(preset_n), p.unwrap_or(preset_p), spikes, 1.0)?;
            for w in validate_assumptions(&sc) {
                eprintln!("warning: {w}");
            }
            let methods = match methods {
                Some(list) => list
                    .split(',')
                    .map(Method::parse)
                    .collect::<Result<Vec<_>>>()?,
                None => Method::ALL.to_vec(),
            };
            let mut ms = McmcSettings::new(seed);
            ms.draws = draws;
            ms.burn_in = burnin;
            let report = run_case_opts(
                &sc,
                &methods,
                reps,
                &ms,
                seed,
                CaseOptions {
                    rotate_basis: rotate,
                },
            )?;
            let mut buf = Vec::new();
            let format = match cli.format {
                OutputFormat::Json => ReportFormat::Json,
                OutputFormat::Csv => ReportFormat::Csv,
            };
            write_report(&report, format, &mut buf)?;
            write_output(&cli.out, std::str::from_utf8(&buf).expect("utf8 report"))?;
            eprintln!(
                "simulate: {:.2}s over {} replications",
                report.wall_secs, reps
            );
            Ok(true)
        }

        Command::SelectK {
            input,
            criterion,
            kmax,
            draws,
            burnin,
            center,
        } => {
            let x = load_matrix_csv(&input, LoadOptions { center })?;
            let bound = x.n().min(x.p());
            let k_max = kmax.unwrap_or((bound / 2).clamp(1, bound.saturating_sub(2)));
            let mut ms = McmcSettings::new(seed);
            ms.draws = draws;
            ms.burn_in = burnin;
            let result = select_k(&x, criterion.into(), k_max, &ms)?;
            let content = match cli.format {
                OutputFormat::Json => serde_json::to_string_pretty(&result)?,
                OutputFormat::Csv => {
                    let mut s = String::from("k,score,chosen\n");
                    for (i, v) in result.scores.iter().enumerate() {
                        s.push_str(&format!(
                            "{},{},{}\n",
                            i + 1,
                            v,
                            if i + 1 == result.chosen_k { 1 } else { 0 }
                        ));
                    }
                    s
                }
            };
            write_output(&cli.out, &content)?;
            Ok(true)
        }

        Command::Reduce {
            input,
            criterion,
            kmax,
            k,
            recon_out,
            draws,
            burnin,
            center,
        } => {
            let x = load_matrix_csv(&input, LoadOptions { center })?;
            let ss = sample_covariance(&x)?;
            let bound = x.n().min(x.p());
            let (chosen_k, selection) = match k {
                Some(k) => {
                    if k == 0 || k > bound {
                        return Err(Error::Config(format!("k must lie in 1..={bound}")));
                    }
                    (k, None)
                }
                None => {
                    let k_max = kmax.unwrap_or((bound / 2).clamp(1, bound.saturating_sub(2)));
                    let mut ms = McmcSettings::new(seed);
                    ms.draws = draws;
                    ms.burn_in = burnin;
                    let sel = select_k(&x, criterion.into(), k_max, &ms)?;
                    (sel.chosen_k, Some(sel))
                }
            };
            let u1 = ss.q.as_array().slice(s![.., ..chosen_k]);
            let reduction = reduce_reconstruct(&x, &u1)?;
            let cve = cumulative_variance_explained(&ss, chosen_k);
            if let Some(path) = recon_out {
                let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
                for row in reduction.x_hat.rows() {
                    let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
                    writeln!(file, "{}", line.join(","))?;
                }
            }

            #[derive(Serialize)]
            struct ReduceOutput {
                chosen_k: usize,
                criterion: String,
                scores: Option<Vec<f64>>,
                nmse: f64,
                cve: f64,
            }
            let output = ReduceOutput {
                chosen_k,
                criterion: selection
                    .as_ref()
                    .map(|s| s.criterion.clone())
                    .unwrap_or_else(|| "fixed".into()),
                scores: selection.map(|s| s.scores),
                nmse: reduction.nmse,
                cve,
            };
            let content = match cli.format {
                OutputFormat::Json => serde_json::to_string_pretty(&output)?,
                OutputFormat::Csv => format!("k,nmse,cve\n{},{},{}\n", chosen_k, output.nmse, cve),
            };
            write_output(&cli.out, &content)?;
            Ok(true)
        }

        Command::Validate { samples, reps } => run_validation(seed, samples, reps),
    }
}

fn build_prior(
    prior: PriorKind,
    ss: &crate::model::SampleSpectrum,
    k: usize,
    h_override: Option<f64>,
) -> Result<PriorConfig> {
    let cfg = match prior {
        PriorKind::Gsiw => gsiw_data_driven(ss, k)?,
        PriorKind::Giw => giw_data_driven(ss, k)?,
        PriorKind::Siw => siw_fixed(ss.p, k)?,
        PriorKind::Iw => iw_fixed(ss.p, k)?,
    };
    match h_override {
        Some(h) => PriorConfig::new(cfg.a, cfg.b, h, cfg.k),
        None => Ok(cfg),
    }
}

/// Oracle validation battery; prints one line per check and returns whether
/// everything passed.
fn run_validation(seed: u64, samples: usize, reps: usize) -> Result<bool> {
    use crate::linalg::haar_sample;
    use crate::sampler::{sample_tilted_beta, ChainRng};
    use rand::SeedableRng;

    let mut all_ok = true;
    let mut check = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    // 1. tilted-Beta quadrature vs Bessel closed form, plus sampler GOF
    let mut rng = ChainRng::seed_from_u64(stats::derive_seed(seed, 1));
    for c in [0.0, -1.0, -10.0, -100.0, -1000.0] {
        match oracle::TiltedBetaReference::new(c) {
            Ok(reference) => {
                let n = 20_000;
                let draws: Vec<f64> = (0..n)
                    .map(|_| sample_tilted_beta(c, &mut rng).expect("valid tilt"))
                    .collect();
                let mean = stats::mean(&draws);
                let se = stats::se_mean(&draws);
                let mean_ok = (mean - reference.mean).abs() < 4.0 * se;
                let stat = oracle::chi_square_gof_statistic(&draws, |p| reference.inv_cdf(p), 20);
                let crit = oracle::chi_square_critical(19, 0.001);
                check(
                    "tilted-beta",
                    mean_ok && stat < crit,
                    format!(
                        "c = {c}: sampler mean {mean:.6} vs {:.6}, chi2 {stat:.1} < {crit:.1}",
                        reference.mean
                    ),
                );
            }
            Err(e) => check("tilted-beta", false, format!("c = {c}: {e}")),
        }
    }

    // 2. Haar first-moment identity E[Γ11²] = 1/p
    let p = 4;
    let mut rng = ChainRng::seed_from_u64(stats::derive_seed(seed, 2));
    let vals: Vec<f64> = (0..20_000)
        .map(|_| haar_sample(p, &mut rng).as_array()[(0, 0)].powi(2))
        .collect();
    let m = stats::mean(&vals);
    let se = stats::se_mean(&vals);
    check(
        "haar-moment",
        (m - 0.25).abs() < 4.0 * se,
        format!("E[Γ11²] = {m:.5} vs 0.25 (se {se:.5})"),
    );

    // 3. conditional posterior-mean identity at a frozen Γ
    {
        use crate::sampler::{sample_lambda_step, ChainState};
        let sc = SpikedScenario::new(25, 8, vec![12.0, 6.0], 1.0)?;
        let mut rng = ChainRng::seed_from_u64(stats::derive_seed(seed, 3));
        let x = crate::model::gen_spiked_data(&sc, &mut rng);
        let ss = sample_covariance(&x)?;
        let cfg = gsiw_data_driven(&ss, 2)?;
        let mut state = ChainState::init(&ss, &cfg)?;
        state.gamma = haar_sample(8, &mut rng);
        state.c = crate::sampler::compute_c(&state.gamma, &ss, cfg.h);
        let expect = oracle::conditional_lambda_mean(&state.c, &cfg, ss.n);
        let n_draws = 20_000;
        let mut sums: Vec<Vec<f64>> = (0..8).map(|_| Vec::with_capacity(n_draws)).collect();
        for _ in 0..n_draws {
            sample_lambda_step(&mut state, &cfg, ss.n, &mut rng)?;
            for (sum, &lam) in sums.iter_mut().zip(state.lambda.iter()) {
                sum.push(lam);
            }
        }
        let mut ok = true;
        let mut worst = 0.0f64;
        for i in 0..8 {
            let m = stats::mean(&sums[i]);
            let se = stats::se_mean(&sums[i]);
            let z = (m - expect[i]).abs() / se;
            worst = worst.max(z);
            ok &= z < 5.0;
        }
        check(
            "conditional-mean",
            ok,
            format!("max |z| = {worst:.2} over 8 coordinates"),
        );
    }

    // 4. importance-sampling oracle self-consistency across seeds
    {
        let ss = crate::model::SampleSpectrum {
            n: 10,
            p: 3,
            eigenvalues: ndarray::Array1::from(vec![6.0, 2.0, 1.0]),
            q: crate::linalg::OrthoMatrix::identity(3),
            trace: 9.0,
        };
        let cfg = PriorConfig::new(vec![2.5, 3.0, 3.5], 1, 4.0, 1)?;
        let a = oracle::is_posterior_oracle(&ss, &cfg, 1, samples, stats::derive_seed(seed, 4))?;
        let b = oracle::is_posterior_oracle(&ss, &cfg, 1, samples, stats::derive_seed(seed, 5))?;
        let se = (a.ranks[0].lambda_se.powi(2) + b.ranks[0].lambda_se.powi(2)).sqrt();
        let diff = (a.ranks[0].lambda_mean - b.ranks[0].lambda_mean).abs();
        check(
            "is-oracle",
            diff < 3.0 * se,
            format!(
                "E[λ(1)] {:.5} vs {:.5} (3se = {:.5}, ess {:.0}/{:.0})",
                a.ranks[0].lambda_mean,
                b.ranks[0].lambda_mean,
                3.0 * se,
                a.ess,
                b.ess
            ),
        );
    }

    // 5. sample-eigenstructure asymptotics
    {
        let vt = oracle::ValidationTarget {
            n: 100,
            p: 1000,
            spikes: vec![50.0],
            base: 1.0,
        };
        let out = oracle::lemma_asymptotics_check(&vt, reps, stats::derive_seed(seed, 6))?;
        let row = &out.rows[0];
        let ratio_ok = (row.ratio_mean - row.predicted_ratio).abs() <= 0.05;
        let align_ok = (row.align_mean - row.predicted_align).abs() <= 0.02;
        check(
            "asymptotics",
            ratio_ok && align_ok,
            format!(
                "ratio {:.4} vs {:.4}; align {:.4} vs {:.4} ({} reps)",
                row.ratio_mean, row.predicted_ratio, row.align_mean, row.predicted_align, reps
            ),
        );
    }

    Ok(all_ok)
}
