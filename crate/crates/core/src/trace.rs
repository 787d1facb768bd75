//! Convergence trace records emitted by the solvers.

/// Which iterations produce a trace record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceCadence {
    every: u64,
    extra: Vec<u64>,
}

impl TraceCadence {
    /// Every `⌈N/1000⌉` iterations plus `n ∈ {1, 10, 100}`.
    pub fn for_total(total: u64) -> Self {
        Self {
            every: total.div_ceil(1000).max(1),
            extra: vec![1, 10, 100],
        }
    }

    pub fn every(every: u64) -> Self {
        Self {
            every: every.max(1),
            extra: Vec::new(),
        }
    }

    /// Explicit checkpoints only.
    pub fn at(points: Vec<u64>) -> Self {
        Self {
            every: 0,
            extra: points,
        }
    }

    pub fn never() -> Self {
        Self::at(Vec::new())
    }

    #[inline]
    pub fn is_due(&self, n: u64) -> bool {
        (self.every > 0 && n % self.every == 0) || self.extra.contains(&n)
    }
}

/// One row of an experiment trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub n: u64,
    /// Initial pair of the trajectory at iteration `n`.
    pub visited_pair: usize,
    pub err_inf: Option<f64>,
    pub err_l2: Option<f64>,
    /// `(Q̄, [ū₁..ū_m])` for each watched `(t, pair)`.
    pub watched: Vec<(f64, Vec<f64>)>,
    pub lr_cap_hits: u64,
}

pub trait TraceSink {
    fn record(&mut self, record: TraceRecord);
}

/// Discards everything.
pub struct NullSink;

impl TraceSink for NullSink {
    fn record(&mut self, _record: TraceRecord) {}
}

impl TraceSink for Vec<TraceRecord> {
    fn record(&mut self, record: TraceRecord) {
        self.push(record);
    }
}
