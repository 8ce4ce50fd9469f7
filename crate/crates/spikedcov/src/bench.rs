//! Desk-scale simulation harness: per-eigenvalue error metrics, method
//! orchestration over seeded replications, and report serialization.

use std::time::Instant;

use ndarray::ArrayView1;
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    estimate_eigenvectors, spoet_eigenvalues, spoet_interval, summarize_eigenvalues,
};
use crate::linalg::haar_sample;
use crate::model::{gen_spiked_data, sample_covariance, DataMatrix, SpikedScenario};
use crate::prior::{giw_data_driven, gsiw_data_driven, iw_fixed, siw_fixed};
use crate::sampler::{run_chain, ChainRng, McmcSettings};
use crate::stats::{self, derive_seed};

/// The six estimation methods of the comparison study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sample,
    Gsiw,
    Giw,
    Siw,
    Iw,
    Spoet,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Sample,
        Method::Gsiw,
        Method::Giw,
        Method::Siw,
        Method::Iw,
        Method::Spoet,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Sample => "sample",
            Method::Gsiw => "gsiw",
            Method::Giw => "giw",
            Method::Siw => "siw",
            Method::Iw => "iw",
            Method::Spoet => "spoet",
        }
    }

    pub fn parse(s: &str) -> Result<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sample" => Ok(Method::Sample),
            "gsiw" => Ok(Method::Gsiw),
            "giw" => Ok(Method::Giw),
            "siw" => Ok(Method::Siw),
            "iw" => Ok(Method::Iw),
            "spoet" | "s-poet" => Ok(Method::Spoet),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Relative eigenvalue error |λ₀ - λ| / λ₀.
pub fn err_lambda(est: f64, truth: f64) -> Result<f64> {
    if !(truth > 0.0) {
        return Err(Error::InvalidInput(format!(
            "true eigenvalue must be positive, got {truth}"
        )));
    }
    Ok((truth - est).abs() / truth)
}

/// Eigenvector error 1 - (ξᵀξ₀)²; sign-invariant, in [0, 1].
pub fn err_xi(est: &ArrayView1<f64>, truth: &ArrayView1<f64>) -> Result<f64> {
    for (name, v) in [("estimate", est), ("truth", truth)] {
        let norm = v.dot(v).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "{name} vector is not unit norm ({norm})"
            )));
        }
    }
    let dot = est.dot(truth);
    Ok((1.0 - dot * dot).clamp(0.0, 1.0))
}

/// Coverage probability and mean interval length over replications.
pub fn coverage_and_length(intervals: &[(f64, f64)], truth: f64) -> Result<(f64, f64)> {
    if intervals.is_empty() {
        return Err(Error::InvalidInput("no intervals supplied".into()));
    }
    let covered = intervals
        .iter()
        .filter(|(lo, hi)| *lo <= truth && truth <= *hi)
        .count();
    let mean_len = intervals.iter().map(|(lo, hi)| hi - lo).sum::<f64>() / intervals.len() as f64;
    Ok((covered as f64 / intervals.len() as f64, mean_len))
}

/// Raw per-replication metrics of one method on one eigenvalue index.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct RawMetrics {
    pub err_lambda: Vec<f64>,
    pub err_xi: Vec<f64>,
    pub covered: Vec<bool>,
    pub interval_length: Vec<f64>,
}

/// Aggregates for one method on one eigenvalue index.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndexAggregate {
    pub index: usize,
    pub err_lambda_mean: f64,
    pub err_xi_mean: Option<f64>,
    pub cp: Option<f64>,
    pub il_mean: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub per_index: Vec<IndexAggregate>,
    /// raw[i] holds the per-replication metrics of eigenvalue index i+1.
    pub raw: Vec<RawMetrics>,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: SpikedScenario,
    pub reps: usize,
    pub base_seed: u64,
    pub settings: McmcSettings,
    pub rotated_basis: bool,
    pub methods: Vec<MethodReport>,
    /// Wall-clock seconds; excluded from serialized output so identical
    /// seeds produce byte-identical report files.
    #[serde(skip)]
    pub wall_secs: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct CaseOptions {
    /// Rotate the data by a fixed Haar matrix (derived from the base seed)
    /// and the truth eigenvectors with it; exercises non-diagonal Σ₀.
    pub rotate_basis: bool,
}

/// Point estimates, optional intervals, optional eigenvector estimates of
/// one method in one replication.
struct MethodOutput {
    points: Vec<f64>,
    intervals: Option<Vec<(f64, f64)>>,
    vectors: Option<ndarray::Array2<f64>>,
}

fn run_method(
    method: Method,
    x: &DataMatrix,
    ss: &crate::model::SampleSpectrum,
    k: usize,
    ms: &McmcSettings,
    seed: u64,
) -> Result<MethodOutput> {
    let _ = x;
    match method {
        Method::Sample => Ok(MethodOutput {
            points: ss.eigenvalues.iter().take(k).cloned().collect(),
            intervals: None,
            vectors: Some(ss.q.as_array().slice(ndarray::s![.., ..k]).to_owned()),
        }),
        Method::Spoet => {
            let values = spoet_eigenvalues(ss, k)?;
            let intervals = values
                .iter()
                .map(|&v| spoet_interval(v, ss.n, 0.95))
                .collect::<Result<Vec<_>>>()?;
            Ok(MethodOutput {
                points: values,
                intervals: Some(intervals),
                vectors: None,
            })
        }
        Method::Gsiw | Method::Giw | Method::Siw | Method::Iw => {
            let cfg = match method {
                Method::Gsiw => gsiw_data_driven(ss, k)?,
                Method::Giw => giw_data_driven(ss, k)?,
                Method::Siw => siw_fixed(ss.p, k)?,
                Method::Iw => iw_fixed(ss.p, k)?,
                _ => unreachable!(),
            };
            let mut ms_run = ms.clone();
            ms_run.seed = seed;
            let draws = run_chain(ss, &cfg, &ms_run, None)?;
            let summaries = summarize_eigenvalues(&draws, k)?;
            let vectors = estimate_eigenvectors(&draws, &ss.q.as_array().view())?;
            Ok(MethodOutput {
                points: summaries.iter().map(|s| s.point).collect(),
                intervals: Some(summaries.iter().map(|s| (s.lo, s.hi)).collect()),
                vectors: Some(vectors),
            })
        }
    }
}

/// Run every requested method over `reps` seeded replications and aggregate
/// the error metrics against the scenario's Σ₀. Per-method failures are
/// recorded in the report, not fatal.
pub fn run_case(
    sc: &SpikedScenario,
    methods: &[Method],
    reps: usize,
    ms: &McmcSettings,
    base_seed: u64,
) -> Result<SimReport> {
    run_case_opts(sc, methods, reps, ms, base_seed, CaseOptions::default())
}

pub fn run_case_opts(
    sc: &SpikedScenario,
    methods: &[Method],
    reps: usize,
    ms: &McmcSettings,
    base_seed: u64,
    options: CaseOptions,
) -> Result<SimReport> {
    if methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    if reps == 0 {
        return Err(Error::Config("need at least one replication".into()));
    }
    let started = Instant::now();
    let k = sc.k();
    let truth_values = sc.spikes.clone();
    // Σ₀ is diagonal, so the true eigenvectors are the standard basis; the
    // rotation option right-multiplies the data by a fixed Haar matrix and
    // rotates the truth with it.
    let rotation = if options.rotate_basis {
        let mut rng = ChainRng::seed_from_u64(derive_seed(base_seed, u64::MAX));
        Some(haar_sample(sc.p, &mut rng))
    } else {
        None
    };

    type RepOutcome = Vec<std::result::Result<MethodOutput, String>>;
    let rep_results: Vec<RepOutcome> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(base_seed, r as u64);
            let mut rng = ChainRng::seed_from_u64(rep_seed);
            let mut x = gen_spiked_data(sc, &mut rng);
            if let Some(rot) = &rotation {
                let rotated = x.values().dot(&rot.as_array().t());
                x = DataMatrix::new(rotated).expect("rotation preserves finiteness");
            }
            match sample_covariance(&x) {
                Ok(ss) => methods
                    .iter()
                    .enumerate()
                    .map(|(mi, &m)| {
                        run_method(m, &x, &ss, k, ms, derive_seed(rep_seed, mi as u64))
                            .map_err(|e| format!("rep {r}: {e}"))
                    })
                    .collect(),
                Err(e) => methods
                    .iter()
                    .map(|_| Err(format!("rep {r}: spectrum failed: {e}")))
                    .collect(),
            }
        })
        .collect();

    let mut method_reports = Vec::with_capacity(methods.len());
    for (mi, &method) in methods.iter().enumerate() {
        let mut raw = vec![RawMetrics::default(); k];
        let mut failures = Vec::new();
        for outcome in &rep_results {
            match &outcome[mi] {
                Ok(out) => {
                    for i in 0..k {
                        raw[i]
                            .err_lambda
                            .push(err_lambda(out.points[i], truth_values[i])?);
                        if let Some(vectors) = &out.vectors {
                            let truth_vec = match &rotation {
                                Some(rot) => rot.column(i).to_owned(),
                                None => {
                                    let mut e = ndarray::Array1::zeros(sc.p);
                                    e[i] = 1.0;
                                    e
                                }
                            };
                            raw[i]
                                .err_xi
                                .push(err_xi(&vectors.column(i), &truth_vec.view())?);
                        }
                        if let Some(intervals) = &out.intervals {
                            let (lo, hi) = intervals[i];
                            raw[i]
                                .covered
                                .push(lo <= truth_values[i] && truth_values[i] <= hi);
                            raw[i].interval_length.push(hi - lo);
                        }
                    }
                }
                Err(msg) => failures.push(format!("{}: {msg}", method.name())),
            }
        }
        let per_index = (0..k)
            .map(|i| aggregate_index(i + 1, &raw[i]))
            .collect::<Result<Vec<_>>>()?;
        method_reports.push(MethodReport {
            method,
            per_index,
            raw,
            failures,
        });
    }

    let report = SimReport {
        scenario: sc.clone(),
        reps,
        base_seed,
        settings: ms.clone(),
        rotated_basis: options.rotate_basis,
        methods: method_reports,
        wall_secs: started.elapsed().as_secs_f64(),
    };
    validate_report(&report)?;
    Ok(report)
}

fn aggregate_index(index: usize, raw: &RawMetrics) -> Result<IndexAggregate> {
    let err_lambda_mean = stats::mean(&raw.err_lambda);
    let err_xi_mean = (!raw.err_xi.is_empty()).then(|| stats::mean(&raw.err_xi));
    let (cp, il_mean) = if raw.covered.is_empty() {
        (None, None)
    } else {
        let cp = raw.covered.iter().filter(|&&c| c).count() as f64 / raw.covered.len() as f64;
        (Some(cp), Some(stats::mean(&raw.interval_length)))
    };
    Ok(IndexAggregate {
        index,
        err_lambda_mean,
        err_xi_mean,
        cp,
        il_mean,
    })
}

fn validate_report(report: &SimReport) -> Result<()> {
    if report.reps == 0 {
        return Err(Error::Invariant("empty report".into()));
    }
    for m in &report.methods {
        for agg in &m.per_index {
            if !agg.err_lambda_mean.is_finite() && !m.raw[agg.index - 1].err_lambda.is_empty() {
                return Err(Error::Invariant(format!(
                    "non-finite aggregate for {}",
                    m.method.name()
                )));
            }
            if let Some(cp) = agg.cp {
                if !(0.0..=1.0).contains(&cp) {
                    return Err(Error::Invariant(format!("coverage {cp} outside [0, 1]")));
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Serialize a report. JSON is lossless (modulo wall time); CSV mirrors the
/// comparison-table layout: one row per (eigenvalue, n), one column block
/// per method with err_lambda / err_xi / cp / il, empty where undefined.
pub fn write_report<W: std::io::Write>(
    report: &SimReport,
    format: ReportFormat,
    mut out: W,
) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let json = serde_json::to_string_pretty(report)?;
            out.write_all(json.as_bytes())?;
            out.write_all(b"\n")?;
            Ok(())
        }
        ReportFormat::Csv => {
            let mut header = vec!["eigenvalue".to_string(), "n".to_string()];
            for m in &report.methods {
                let name = m.method.name();
                header.push(format!("{name}_err_lambda"));
                header.push(format!("{name}_err_xi"));
                header.push(format!("{name}_cp"));
                header.push(format!("{name}_il"));
            }
            writeln!(out, "{}", header.join(","))?;
            for i in 0..report.scenario.k() {
                let mut fields = vec![format!("{}", i + 1), format!("{}", report.scenario.n)];
                for m in &report.methods {
                    let agg = &m.per_index[i];
                    fields.push(format!("{}", agg.err_lambda_mean));
                    fields.push(agg.err_xi_mean.map(|v| format!("{v}")).unwrap_or_default());
                    fields.push(agg.cp.map(|v| format!("{v}")).unwrap_or_default());
                    fields.push(agg.il_mean.map(|v| format!("{v}")).unwrap_or_default());
                }
                writeln!(out, "{}", fields.join(","))?;
            }
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn metric_functions() {
        assert_eq!(err_lambda(5.0, 5.0).unwrap(), 0.0);
        assert_eq!(err_lambda(4.0, 5.0).unwrap(), 0.2);
        assert!(err_lambda(4.0, 0.0).is_err());
        // brute force on random pairs
        for (e, t) in [(3.2, 7.5), (10.0, 2.0), (0.4, 0.9)] {
            assert!((err_lambda(e, t).unwrap() - (t - e as f64).abs() / t).abs() < 1e-15);
        }

        let a = array![1.0, 0.0];
        let b = array![0.0, 1.0];
        assert_eq!(err_xi(&a.view(), &a.view()).unwrap(), 0.0);
        assert_eq!(err_xi(&a.view(), &b.view()).unwrap(), 1.0);
        let neg = array![-1.0, 0.0];
        assert_eq!(err_xi(&a.view(), &neg.view()).unwrap(), 0.0);
        let non_unit = array![2.0, 0.0];
        assert!(err_xi(&non_unit.view(), &a.view()).is_err());
    }

    #[test]
    fn coverage_cases() {
        let all = vec![(0.0, 2.0), (0.5, 1.5), (0.9, 1.1)];
        let (cp, il) = coverage_and_length(&all, 1.0).unwrap();
        assert_eq!(cp, 1.0);
        assert!((il - (2.0 + 1.0 + 0.2) / 3.0).abs() < 1e-12);

        let none = vec![(2.0, 3.0), (4.0, 5.0)];
        let (cp, _) = coverage_and_length(&none, 1.0).unwrap();
        assert_eq!(cp, 0.0);

        let four = vec![(0.0, 2.0), (2.0, 3.0), (0.5, 1.0), (1.0, 1.5)];
        let (cp, _) = coverage_and_length(&four, 1.0).unwrap();
        assert_eq!(cp, 0.75);

        assert!(coverage_and_length(&[], 1.0).is_err());
    }

    #[test]
    fn run_case_sample_only_bookkeeping() {
        let sc = SpikedScenario::new(12, 6, vec![8.0, 3.0], 1.0).unwrap();
        let mut ms = McmcSettings::new(0);
        ms.burn_in = 10;
        ms.draws = 20;
        let report = run_case(&sc, &[Method::Sample], 3, &ms, 99).unwrap();
        assert_eq!(report.methods.len(), 1);
        assert_eq!(report.methods[0].per_index.len(), 2);
        assert!(report.methods[0].failures.is_empty());
        // sample method: no intervals, eigenvectors present
        assert!(report.methods[0].per_index[0].cp.is_none());
        assert!(report.methods[0].per_index[0].err_xi_mean.is_some());
        assert_eq!(report.methods[0].raw[0].err_lambda.len(), 3);
    }

    #[test]
    fn run_case_deterministic() {
        let sc = SpikedScenario::new(10, 5, vec![6.0], 1.0).unwrap();
        let mut ms = McmcSettings::new(0);
        ms.burn_in = 10;
        ms.draws = 20;
        let a = run_case(&sc, &[Method::Sample, Method::Gsiw], 2, &ms, 7).unwrap();
        let b = run_case(&sc, &[Method::Sample, Method::Gsiw], 2, &ms, 7).unwrap();
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn aggregates_match_raw_recomputation() {
        let sc = SpikedScenario::new(14, 6, vec![9.0, 4.0], 1.0).unwrap();
        let mut ms = McmcSettings::new(0);
        ms.burn_in = 20;
        ms.draws = 40;
        let report = run_case(&sc, &[Method::Gsiw, Method::Spoet], 4, &ms, 21).unwrap();
        for m in &report.methods {
            for agg in &m.per_index {
                let raw = &m.raw[agg.index - 1];
                assert!((agg.err_lambda_mean - stats::mean(&raw.err_lambda)).abs() < 1e-14);
                if let Some(cp) = agg.cp {
                    let brute = raw.covered.iter().filter(|&&c| c).count() as f64
                        / raw.covered.len() as f64;
                    assert!((cp - brute).abs() < 1e-14);
                }
                if let Some(il) = agg.il_mean {
                    assert!((il - stats::mean(&raw.interval_length)).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn rotated_truth_still_recovered() {
        let sc = SpikedScenario::new(40, 6, vec![25.0], 1.0).unwrap();
        let mut ms = McmcSettings::new(0);
        ms.burn_in = 10;
        ms.draws = 20;
        let report = run_case_opts(
            &sc,
            &[Method::Sample],
            4,
            &ms,
            5,
            CaseOptions { rotate_basis: true },
        )
        .unwrap();
        // strong spike: the sample eigenvector should track the rotated truth
        let err = report.methods[0].per_index[0].err_xi_mean.unwrap();
        assert!(err < 0.5, "rotated-basis eigenvector error {err}");
    }

    #[test]
    fn report_round_trip_and_csv_header() {
        let sc = SpikedScenario::new(10, 5, vec![6.0], 1.0).unwrap();
        let mut ms = McmcSettings::new(0);
        ms.burn_in = 5;
        ms.draws = 10;
        let report = run_case(&sc, &[Method::Sample, Method::Spoet], 2, &ms, 3).unwrap();

        let json = serde_json::to_string(&report).unwrap();
        let back: SimReport = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);

        let mut buf = Vec::new();
        write_report(&report, ReportFormat::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "eigenvalue,n,sample_err_lambda,sample_err_xi,sample_cp,sample_il,\
             spoet_err_lambda,spoet_err_xi,spoet_cp,spoet_il"
        );
        assert_eq!(text.lines().count(), 2);
    }
}
