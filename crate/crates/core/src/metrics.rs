//! Run statistics: static-fix histogram, fuzz outcome buckets, pass@k, and
//! vulnerable fractions from external scanner labels.
//!
//! `summary.json` carries `schema_version` so consumers can detect changes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fuzzing_agent::FuzzStatus;
use crate::orchestrator::{TaskStatus, TaskTrace};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Histogram rows always present, matching a four-round default.
const HISTOGRAM_MIN_ROWS: u32 = 4;

/// k values reported when at least that many samples exist.
pub const REPORTED_K: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("pass@k needs 0 <= c <= n and 1 <= k <= n (got n={n}, c={c}, k={k})")]
    Domain { n: usize, c: usize, k: usize },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("label file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Unbiased pass@k estimate `1 - C(n-c, k) / C(n, k)`, computed as
/// `1 - prod_{i=n-c+1}^{n} (1 - k/i)`.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, MetricsError> {
    if c > n || k == 0 || k > n {
        return Err(MetricsError::Domain { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let prod: f64 = ((n - c + 1)..=n).map(|i| 1.0 - k as f64 / i as f64).product();
    Ok(1.0 - prod)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaticHistogram {
    /// Resolved tasks by fix prompts issued.
    pub rounds: BTreeMap<u32, usize>,
    /// Tasks never judged secure, including those without a static trace.
    pub unable: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzBuckets {
    pub no_crash: usize,
    pub fixed: usize,
    pub unfixed: usize,
    pub setup_error: usize,
}

impl FuzzBuckets {
    pub fn total(&self) -> usize {
        self.no_crash + self.fixed + self.unfixed + self.setup_error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassAtKReport {
    pub n: usize,
    pub tasks_evaluated: usize,
    /// Mean pass@k over evaluated tasks, keyed by k.
    pub values: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityReport {
    pub labeled: usize,
    pub vulnerable: usize,
    /// `vulnerable / labeled`; absent when nothing is labeled.
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unknown_task_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityComparison {
    pub baseline: VulnerabilityReport,
    pub pipeline: VulnerabilityReport,
    /// `baseline.fraction - pipeline.fraction` when both exist.
    pub reduction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub schema_version: u32,
    pub tasks: usize,
    pub static_fix_histogram: StaticHistogram,
    #[serde(default)]
    pub static_parse_failures: usize,
    pub fuzz_buckets: FuzzBuckets,
    pub reached_fuzzing: usize,
    pub final_status: BTreeMap<String, usize>,
    pub pipeline_errors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_at_k: Option<PassAtKReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vulnerabilities: Option<VulnerabilityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<VulnerabilityComparison>,
}

pub fn summarize(traces: &[TaskTrace]) -> SummaryReport {
    let mut rounds: BTreeMap<u32, usize> = (0..=HISTOGRAM_MIN_ROWS).map(|r| (r, 0)).collect();
    let mut unable = 0;
    let mut parse_failures = 0;
    let mut buckets = FuzzBuckets::default();
    let mut final_status: BTreeMap<String, usize> = BTreeMap::new();
    let mut pipeline_errors = Vec::new();
    let mut functional: Vec<(usize, usize)> = Vec::new();

    for t in traces {
        match &t.static_trace {
            Some(s) if s.resolved => *rounds.entry(s.rounds_used).or_insert(0) += 1,
            Some(s) => {
                unable += 1;
                if s.parse_failure.is_some() {
                    parse_failures += 1;
                }
            }
            None => unable += 1,
        }
        if let Some(status) = t.fuzz_trace.as_ref().and_then(|f| f.status) {
            match status {
                FuzzStatus::NoCrash => buckets.no_crash += 1,
                FuzzStatus::Fixed => buckets.fixed += 1,
                FuzzStatus::Unfixed => buckets.unfixed += 1,
                FuzzStatus::SetupError => buckets.setup_error += 1,
            }
        }
        *final_status.entry(t.final_status.label().to_string()).or_insert(0) += 1;
        if let TaskStatus::PipelineError(_) = t.final_status {
            pipeline_errors.push(t.task_id.clone());
        }
        if let Some(f) = &t.functional {
            functional.push((f.n, f.passed));
        }
    }

    SummaryReport {
        schema_version: SUMMARY_SCHEMA_VERSION,
        tasks: traces.len(),
        static_fix_histogram: StaticHistogram { rounds, unable },
        static_parse_failures: parse_failures,
        reached_fuzzing: buckets.total(),
        fuzz_buckets: buckets,
        final_status,
        pipeline_errors,
        pass_at_k: pass_at_k_report(&functional),
        vulnerabilities: None,
        comparison: None,
    }
}

/// Mean pass@k over tasks that share the smallest sample count.
fn pass_at_k_report(samples: &[(usize, usize)]) -> Option<PassAtKReport> {
    let n = samples.iter().map(|(n, _)| *n).filter(|n| *n > 0).min()?;
    let usable: Vec<(usize, usize)> = samples.iter().copied().filter(|(m, _)| *m >= n).collect();
    let mut values = BTreeMap::new();
    for k in REPORTED_K.into_iter().filter(|k| *k <= n) {
        let total: f64 = usable
            .iter()
            .map(|(m, c)| pass_at_k(*m, *c, k).expect("validated sample counts"))
            .sum();
        values.insert(k, total / usable.len() as f64);
    }
    Some(PassAtKReport {
        n,
        tasks_evaluated: usable.len(),
        values,
    })
}

/// Reads scanner verdicts: JSONL of `{"task_id": ..., "vulnerable": bool}`.
/// A repeated id keeps its last verdict.
pub fn ingest_scanner_labels(path: &Path) -> Result<BTreeMap<String, bool>, MetricsError> {
    let text = fs::read_to_string(path).map_err(|e| MetricsError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scanner_labels(&text)
}

pub fn parse_scanner_labels(text: &str) -> Result<BTreeMap<String, bool>, MetricsError> {
    let mut labels = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| MetricsError::Parse { line: i + 1, message };
        let v: Value = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        let id = v
            .get("task_id")
            .and_then(Value::as_str)
            .ok_or_else(|| err("`task_id` must be a string".into()))?;
        let vulnerable = v
            .get("vulnerable")
            .and_then(Value::as_bool)
            .ok_or_else(|| err("`vulnerable` must be a boolean".into()))?;
        labels.insert(id.to_string(), vulnerable);
    }
    Ok(labels)
}

/// Fraction of labeled tasks marked vulnerable. With `known_ids`, labels for
/// other ids are reported and left out of the fraction.
pub fn vulnerable_fraction(labels: &BTreeMap<String, bool>, known_ids: Option<&BTreeSet<String>>) -> VulnerabilityReport {
    let mut unknown = Vec::new();
    let (mut labeled, mut vulnerable) = (0, 0);
    for (id, v) in labels {
        if known_ids.is_some_and(|k| !k.contains(id)) {
            log::warn!("label for unknown task id {id:?} ignored");
            unknown.push(id.clone());
            continue;
        }
        labeled += 1;
        vulnerable += usize::from(*v);
    }
    VulnerabilityReport {
        labeled,
        vulnerable,
        fraction: (labeled > 0).then(|| vulnerable as f64 / labeled as f64),
        unknown_task_ids: unknown,
    }
}

pub fn compare(baseline: VulnerabilityReport, pipeline: VulnerabilityReport) -> VulnerabilityComparison {
    let reduction = match (baseline.fraction, pipeline.fraction) {
        (Some(b), Some(p)) => Some(b - p),
        _ => None,
    };
    VulnerabilityComparison {
        baseline,
        pipeline,
        reduction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pass_at_k_examples() {
        assert_eq!(pass_at_k(1, 1, 1).unwrap(), 1.0);
        assert_eq!(pass_at_k(1, 0, 1).unwrap(), 0.0);
        assert!((pass_at_k(5, 3, 1).unwrap() - 0.6).abs() < 1e-12);
        assert!(pass_at_k(3, 4, 1).is_err());
        assert!(pass_at_k(3, 1, 0).is_err());
        assert!(pass_at_k(3, 1, 4).is_err());
    }

    #[test]
    fn large_n_stays_finite() {
        let p = pass_at_k(10_000, 37, 100).unwrap();
        assert!(p.is_finite() && (0.0..=1.0).contains(&p));
    }

    proptest! {
        #[test]
        fn bounds_and_monotonicity(n in 1usize..=20, c_seed in 0usize..=20, k_seed in 1usize..=20) {
            let c = c_seed % (n + 1);
            let k = (k_seed - 1) % n + 1;
            let p = pass_at_k(n, c, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            if k < n {
                prop_assert!(pass_at_k(n, c, k + 1).unwrap() >= p - 1e-15);
            }
            if c < n {
                prop_assert!(pass_at_k(n, c + 1, k).unwrap() >= p - 1e-15);
            }
            prop_assert_eq!(pass_at_k(n, n, k).unwrap(), 1.0);
            prop_assert_eq!(pass_at_k(n, 0, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn labels_parse_and_fraction() {
        let labels = parse_scanner_labels("{\"task_id\": \"a\", \"vulnerable\": true}\n\n{\"task_id\": \"b\", \"vulnerable\": false}\n").unwrap();
        let r = vulnerable_fraction(&labels, None);
        assert_eq!((r.labeled, r.vulnerable, r.fraction), (2, 1, Some(0.5)));
        assert!(matches!(parse_scanner_labels("{\"task_id\": 3}"), Err(MetricsError::Parse { line: 1, .. })));
        assert_eq!(vulnerable_fraction(&BTreeMap::new(), None).fraction, None);
    }

    #[test]
    fn unknown_ids_are_reported() {
        let labels = parse_scanner_labels("{\"task_id\": \"a\", \"vulnerable\": true}\n{\"task_id\": \"zz\", \"vulnerable\": true}").unwrap();
        let known: BTreeSet<String> = ["a".to_string()].into();
        let r = vulnerable_fraction(&labels, Some(&known));
        assert_eq!(r.unknown_task_ids, vec!["zz"]);
        assert_eq!(r.fraction, Some(1.0));
    }

    #[test]
    fn comparison_delta() {
        let mk = |v, n| VulnerabilityReport {
            labeled: n,
            vulnerable: v,
            fraction: Some(v as f64 / n as f64),
            unknown_task_ids: vec![],
        };
        let c = compare(mk(59, 121), mk(44, 121));
        assert!((c.reduction.unwrap() - 15.0 / 121.0).abs() < 1e-12);
    }

    #[test]
    fn empty_summary() {
        let s = summarize(&[]);
        assert_eq!(s.tasks, 0);
        assert_eq!(s.static_fix_histogram.rounds.len(), 5);
        assert!(s.static_fix_histogram.rounds.values().all(|v| *v == 0));
        assert_eq!(s.fuzz_buckets.total(), 0);
        assert!(s.pass_at_k.is_none());
    }
}
