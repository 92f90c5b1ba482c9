//! Run metrics: failure, traversal time, inconsistency and jerkiness.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::{wrap_angle, ClosedLoopRun, Pose, RunOutcome};

/// Summed squared pose error between two equal-length streams. Heading errors
/// are wrapped into `(-π, π]` and weighted 1 m²/rad².
pub fn inconsistency(expected: &[Pose], actual: &[Pose]) -> Result<f64> {
    if expected.len() != actual.len() {
        return Err(Error::LengthMismatch(expected.len(), actual.len()));
    }
    Ok(expected
        .iter()
        .zip(actual)
        .map(|(a, b)| {
            let heading = wrap_angle(a.heading - b.heading);
            (a.x - b.x).powi(2) + (a.y - b.y).powi(2) + heading * heading
        })
        .sum())
}

/// Mean over all samples of `Σ_axes |d³p/dt³|`, using central third
/// differences in the interior and the nearest one-sided four-point
/// difference at the edges.
pub fn jerkiness(trajectory: &[Pose], dt: f64) -> Result<f64> {
    let n = trajectory.len();
    if n < 4 {
        return Err(Error::TooShort { needed: 4, got: n });
    }
    let axis = |f: fn(&Pose) -> f64| -> Vec<f64> { trajectory.iter().map(f).collect() };
    let scale = dt.powi(3);
    let total: f64 = [axis(|p| p.x), axis(|p| p.y)]
        .iter()
        .map(|p| {
            (0..n)
                .map(|i| {
                    let d3 = if i >= 2 && i + 2 < n {
                        (p[i + 2] - 2.0 * p[i + 1] + 2.0 * p[i - 1] - p[i - 2]) / 2.0
                    } else {
                        let k = i.min(n - 4);
                        p[k + 3] - 3.0 * p[k + 2] + 3.0 * p[k + 1] - p[k]
                    };
                    (d3 / scale).abs()
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetrics {
    pub seed: u64,
    pub outcome: RunOutcome,
    pub failed: bool,
    /// Seconds until the run ended, completed or not.
    pub traversal_time: f64,
    /// Only for completed runs.
    pub inconsistency: Option<f64>,
    /// Only for completed runs.
    pub jerkiness: Option<f64>,
}

impl RunMetrics {
    pub fn from_run(run: &ClosedLoopRun) -> Result<Self> {
        let failed = run.outcome.failed();
        let (inconsistency, jerkiness) = if failed {
            (None, None)
        } else {
            (
                Some(inconsistency(&run.expected_poses, &run.actual_poses)?),
                Some(jerkiness(&run.actual_poses, run.episode.dt)?),
            )
        };
        Ok(Self {
            seed: run.episode.seed,
            outcome: run.outcome,
            failed,
            traversal_time: run.elapsed(),
            inconsistency,
            jerkiness,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub runs: usize,
    pub failures: usize,
    pub failure_rate: f64,
    pub traversal_time: Option<f64>,
    pub inconsistency: Option<f64>,
    pub jerkiness: Option<f64>,
}

impl Summary {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Format { what: "summary", message: m.into() });
        if self.runs == 0 || self.failures > self.runs {
            return bad("run counts out of range");
        }
        if (self.failure_rate - self.failures as f64 / self.runs as f64).abs() > 1e-12 {
            return bad("failure_rate disagrees with counts");
        }
        let all_failed = self.failures == self.runs;
        for v in [self.traversal_time, self.inconsistency, self.jerkiness] {
            match v {
                Some(x) if all_failed || !(x >= 0.0 && x.is_finite()) => return bad("bad metric mean"),
                None if !all_failed => return bad("missing metric mean"),
                _ => {}
            }
        }
        Ok(())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Failure rate over all runs; other metrics are means over completed runs.
pub fn aggregate(runs: &[RunMetrics]) -> Result<Summary> {
    if runs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let ok = || runs.iter().filter(|r| !r.failed);
    let failures = runs.iter().filter(|r| r.failed).count();
    Ok(Summary {
        runs: runs.len(),
        failures,
        failure_rate: failures as f64 / runs.len() as f64,
        traversal_time: mean(ok().map(|r| r.traversal_time)),
        inconsistency: mean(ok().filter_map(|r| r.inconsistency)),
        jerkiness: mean(ok().filter_map(|r| r.jerkiness)),
    })
}

/// Aligned text table with one row per labelled summary.
pub fn render_table(rows: &[(String, Summary)]) -> String {
    let header = ["mode", "failure rate", "traversal time (s)", "inconsistency", "jerkiness (m/s^3)"];
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|(label, s)| {
            [
                label.clone(),
                format!("{:.2} ({}/{})", s.failure_rate, s.failures, s.runs),
                fmt(s.traversal_time),
                fmt(s.inconsistency),
                fmt(s.jerkiness),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..5)
        .map(|j| cells.iter().map(|c| c[j].len()).chain([header[j].len()]).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    let mut line = |cols: &[&str]| {
        let parts: Vec<String> = cols
            .iter()
            .enumerate()
            .map(|(j, c)| if j == 0 { format!("{c:<w$}", w = widths[j]) } else { format!("{c:>w$}", w = widths[j]) })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&rule.iter().map(String::as_str).collect::<Vec<_>>());
    for c in &cells {
        line(&c.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn pose(x: f64, y: f64, heading: f64) -> Pose {
        Pose { x, y, heading }
    }

    fn line_of(f: impl Fn(f64) -> f64, n: usize) -> Vec<Pose> {
        (0..n).map(|t| pose(f(t as f64), 0.0, 0.0)).collect()
    }

    #[test]
    fn inconsistency_examples() {
        let a: Vec<Pose> = (0..10).map(|t| pose(t as f64, 0.0, 0.3)).collect();
        assert_eq!(inconsistency(&a, &a).unwrap(), 0.0);
        let b: Vec<Pose> = a.iter().map(|p| pose(p.x, 1.0, p.heading)).collect();
        assert!((inconsistency(&a, &b).unwrap() - 10.0).abs() < 1e-12);
        let c = inconsistency(&[pose(0.0, 0.0, PI)], &[pose(0.0, 0.0, -PI)]).unwrap();
        assert!(c < 1e-20);
        assert_eq!(inconsistency(&a, &b[..3]), Err(Error::LengthMismatch(10, 3)));
    }

    #[test]
    fn jerkiness_examples() {
        assert_eq!(jerkiness(&line_of(|t| 0.5 * t, 20), 0.1).unwrap(), 0.0);
        assert!(jerkiness(&line_of(|t| 3.0 * t * t, 20), 1.0).unwrap() < 1e-9);
        assert!((jerkiness(&line_of(|t| t * t * t, 12), 1.0).unwrap() - 6.0).abs() < 1e-9);
        assert!((jerkiness(&line_of(|t| t * t * t, 4), 1.0).unwrap() - 6.0).abs() < 1e-9);
        assert_eq!(jerkiness(&line_of(|t| t, 3), 1.0), Err(Error::TooShort { needed: 4, got: 3 }));
    }

    #[test]
    fn jerkiness_is_translation_invariant() {
        let a: Vec<Pose> = (0..30).map(|t| pose((t as f64 * 0.3).sin(), (t as f64).sqrt(), 0.0)).collect();
        let b: Vec<Pose> = a.iter().map(|p| pose(p.x + 4.0, p.y - 2.5, p.heading)).collect();
        let (ja, jb) = (jerkiness(&a, 0.1).unwrap(), jerkiness(&b, 0.1).unwrap());
        assert!((ja - jb).abs() <= 1e-6 * ja);
    }

    fn run(failed: bool, inc: f64) -> RunMetrics {
        RunMetrics {
            seed: 0,
            outcome: if failed { RunOutcome::OutOfCorridor } else { RunOutcome::Completed },
            failed,
            traversal_time: 10.0,
            inconsistency: (!failed).then_some(inc),
            jerkiness: (!failed).then_some(1.0),
        }
    }

    #[test]
    fn aggregate_examples() {
        let mut runs: Vec<_> = (0..9).map(|_| run(false, 1.0)).collect();
        runs.push(run(true, 0.0));
        let s = aggregate(&runs).unwrap();
        assert_eq!(s.failure_rate, 0.1);
        s.validate().unwrap();

        let s = aggregate(&[run(false, 2.0), run(false, 4.0)]).unwrap();
        assert_eq!(s.inconsistency, Some(3.0));

        let s = aggregate(&[run(true, 0.0), run(true, 0.0)]).unwrap();
        assert_eq!(s.failure_rate, 1.0);
        assert_eq!((s.traversal_time, s.inconsistency, s.jerkiness), (None, None, None));
        s.validate().unwrap();

        assert_eq!(aggregate(&[]), Err(Error::EmptyInput));
    }

    #[test]
    fn summary_validation_catches_inconsistent_counts() {
        let mut s = aggregate(&[run(false, 1.0), run(true, 0.0)]).unwrap();
        s.failure_rate = 0.7;
        assert!(s.validate().is_err());
        let mut s = aggregate(&[run(false, 1.0)]).unwrap();
        s.jerkiness = None;
        assert!(s.validate().is_err());
    }

    #[test]
    fn table_columns_line_up() {
        let rows = vec![
            ("feedforward".to_string(), aggregate(&[run(false, 12.5)]).unwrap()),
            ("with_offset".to_string(), aggregate(&[run(true, 0.0)]).unwrap()),
        ];
        let table = render_table(&rows);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].contains("12.5000"));
        assert!(lines[3].contains("1.00 (1/1)"));
        let col = lines[0].find("inconsistency").unwrap() + "inconsistency".len();
        assert_eq!(lines[2][..col].len(), col);
    }
}
