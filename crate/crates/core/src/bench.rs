//! Wall-clock timing with warmup and median reporting.

use std::fmt;
use std::time::{Duration, Instant};

use crate::error::{FgosError, Result};

pub const MIN_ITERATIONS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub op: String,
    pub shape: Vec<usize>,
    /// Timed runs, warmup excluded.
    pub iterations: usize,
    pub warmup: usize,
    pub min: Duration,
    pub median: Duration,
    /// Executions per second at the median.
    pub throughput: f64,
    pub macs: u64,
}

impl BenchReport {
    pub const CSV_HEADER: &'static str = "op,shape,iterations,warmup,min_ms,median_ms,throughput_per_s,macs,gmacs_per_s";

    pub fn csv_row(&self) -> String {
        let shape: Vec<String> = self.shape.iter().map(usize::to_string).collect();
        let med = self.median.as_secs_f64();
        let rate = if med > 0.0 { self.macs as f64 / med / 1e9 } else { 0.0 };
        format!(
            "{},{},{},{},{:.4},{:.4},{:.3},{},{:.3}",
            self.op,
            shape.join("x"),
            self.iterations,
            self.warmup,
            self.min.as_secs_f64() * 1e3,
            med * 1e3,
            self.throughput,
            self.macs,
            rate
        )
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:?}: median {:.3} ms, min {:.3} ms over {} runs ({:.2}/s, {} MACs)",
            self.op,
            self.shape,
            self.median.as_secs_f64() * 1e3,
            self.min.as_secs_f64() * 1e3,
            self.iterations,
            self.throughput,
            self.macs
        )
    }
}

/// Runs `f` `warmup` times untimed, then `iterations` timed runs. Stops
/// at the first error.
pub fn run_bench<T>(
    op: &str,
    shape: &[usize],
    macs: u64,
    warmup: usize,
    iterations: usize,
    mut f: impl FnMut() -> Result<T>,
) -> Result<BenchReport> {
    if iterations < MIN_ITERATIONS {
        return Err(FgosError::Config(format!(
            "benchmarks need at least {MIN_ITERATIONS} timed runs, got {iterations}"
        )));
    }
    for _ in 0..warmup {
        std::hint::black_box(f()?);
    }
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        std::hint::black_box(f()?);
        times.push(t.elapsed());
    }
    times.sort();
    let median = if iterations % 2 == 1 {
        times[iterations / 2]
    } else {
        (times[iterations / 2 - 1] + times[iterations / 2]) / 2
    };
    let secs = median.as_secs_f64();
    Ok(BenchReport {
        op: op.to_string(),
        shape: shape.to_vec(),
        iterations,
        warmup,
        min: times[0],
        median,
        throughput: if secs > 0.0 { 1.0 / secs } else { f64::INFINITY },
        macs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_runs_and_orders_stats() {
        let mut calls = 0;
        let r = run_bench("noop", &[4, 4], 16, 2, 11, || {
            calls += 1;
            Ok(calls)
        })
        .unwrap();
        assert_eq!(calls, 13);
        assert_eq!(r.iterations, 11);
        assert!(r.min <= r.median);
        assert!(r.csv_row().starts_with("noop,4x4,11,2,"));
        assert_eq!(r.csv_row().split(',').count(), BenchReport::CSV_HEADER.split(',').count());
    }

    #[test]
    fn rejects_short_runs_and_propagates_errors() {
        assert!(run_bench("x", &[], 0, 0, 5, || Ok(())).is_err());
        let r = run_bench("x", &[], 0, 0, 10, || -> Result<()> { Err(FgosError::Input("boom".into())) });
        assert!(matches!(r, Err(FgosError::Input(_))));
    }
}
