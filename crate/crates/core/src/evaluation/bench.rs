use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub seconds_per_turn: f64,
    pub model_calls_per_turn: f64,
    pub turns_measured: usize,
}

/// Wall-clock seconds and model calls per query. `query` returns the number
/// of model calls it made; the first `warmup` calls (cycling through
/// `queries`) are not timed, then every query runs `repeats` times.
pub fn benchmark_latency<Q, F>(mut query: F, queries: &[Q], warmup: usize, repeats: usize) -> Result<LatencyReport>
where
    F: FnMut(&Q) -> Result<usize>,
{
    if repeats == 0 {
        return Err(Error::Usage("repeats must be at least 1".into()));
    }
    if queries.is_empty() {
        return Err(Error::Usage("no queries to benchmark".into()));
    }
    for i in 0..warmup {
        query(&queries[i % queries.len()])?;
    }
    let mut calls = 0usize;
    let start = Instant::now();
    for _ in 0..repeats {
        for q in queries {
            calls += query(q)?;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let turns = repeats * queries.len();
    Ok(LatencyReport {
        seconds_per_turn: elapsed / turns as f64,
        model_calls_per_turn: calls as f64 / turns as f64,
        turns_measured: turns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_calls() {
        let r = benchmark_latency(|q: &usize| Ok(*q), &[2, 4], 3, 2).unwrap();
        assert_eq!(r.turns_measured, 4);
        assert_eq!(r.model_calls_per_turn, 3.0);
        assert!(r.seconds_per_turn >= 0.0);
        assert!(benchmark_latency(|_: &usize| Ok(1), &[1], 0, 0).is_err());
    }
}
