//! Batched stream model: time-aligned batches per level and half-overlap
//! sliding windows.
//!
//! Level `i` divides the time axis into batches of duration `t0 * 2^i`,
//! aligned to multiples of that duration from the stream origin. Two adjacent
//! batches form a window of twice the batch duration; consecutive windows
//! overlap by exactly half. A window of size `2b` with step `b` covers every
//! interval of size at most `b`, which is what lets each level catch every
//! pattern up to its batch duration.

use std::sync::Arc;

use thiserror::Error;

use crate::pww::level_count;
use crate::trace::Record;

/// Records are shared rather than copied between the batches, windows and
/// levels that contain them.
pub type SharedRecord = Arc<Record>;

/// Wraps plain records for use in batches.
pub fn to_shared<I: IntoIterator<Item = Record>>(records: I) -> Vec<SharedRecord> {
    records.into_iter().map(Arc::new).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StreamError {
    #[error("batch duration must be at least 1 time unit")]
    ZeroDuration,
    #[error("pattern length bound must be at least 1 record")]
    ZeroLength,
    #[error("depth must be at least 1 level")]
    ZeroDepth,
    #[error("pattern duration bound {t_max} is below the initial batch duration {t0}")]
    TMaxBelowT0 { t_max: u64, t0: u64 },
    #[error("coarsest batch duration overflows the time axis (t0={t0}, depth={depth})")]
    DepthOverflow { t0: u64, depth: u32 },
    #[error("record {index} breaks time order ({time} after {prev})")]
    UnorderedRecords { index: usize, time: u64, prev: u64 },
    #[error("batches come from different levels: {left} and {right}")]
    MixedLevels { left: u32, right: u32 },
    #[error("batches are not adjacent: ordinal {left} then {right}")]
    NonAdjacent { left: u64, right: u64 },
    #[error("a combined pair must start at an even ordinal, got {0}")]
    UnalignedPair(u64),
    #[error("batch invariant violated: {0}")]
    Invariant(String),
}

/// A time-interval slice of the stream at some level.
///
/// Batches produced by combining may have discarded interior intervals; those
/// are listed in `gaps` as inclusive `(from_time, to_time)` spans of the
/// removed records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub level: u32,
    /// Zero-based position of the batch within its level.
    pub ordinal: u64,
    /// Start time; always `ordinal * duration`.
    pub start: u64,
    /// `t0 * 2^level` time units.
    pub duration: u64,
    pub records: Vec<SharedRecord>,
    pub gaps: Vec<(u64, u64)>,
}

impl Batch {
    pub fn empty(level: u32, ordinal: u64, duration: u64) -> Self {
        Batch {
            level,
            ordinal,
            start: ordinal * duration,
            duration,
            records: Vec::new(),
            gaps: Vec::new(),
        }
    }

    pub fn end(&self) -> u64 {
        self.start + self.duration
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks the structural invariants: records time-ordered and inside the
    /// batch interval, gaps ordered, disjoint, inside the interval, and no
    /// record strictly inside a gap.
    pub fn validate(&self) -> Result<(), StreamError> {
        let fail = |what: String| Err(StreamError::Invariant(what));
        if self.start != self.ordinal * self.duration {
            return fail(format!(
                "start {} is not ordinal {} times duration {}",
                self.start, self.ordinal, self.duration
            ));
        }
        let mut prev = self.start;
        for r in &self.records {
            if r.time < self.start || r.time >= self.end() {
                return fail(format!(
                    "record at {} outside [{}, {})",
                    r.time,
                    self.start,
                    self.end()
                ));
            }
            if r.time < prev {
                return fail(format!("record at {} breaks time order", r.time));
            }
            prev = r.time;
        }
        let mut prev_to = None;
        for &(from, to) in &self.gaps {
            if from > to || from < self.start || to >= self.end() {
                return fail(format!("gap ({from}, {to}) outside batch bounds"));
            }
            if let Some(p) = prev_to {
                if from <= p {
                    return fail(format!("gap ({from}, {to}) overlaps a preceding gap"));
                }
            }
            prev_to = Some(to);
            if self.records.iter().any(|r| r.time > from && r.time < to) {
                return fail(format!("record strictly inside gap ({from}, {to})"));
            }
        }
        Ok(())
    }
}

/// Two adjacent same-level batches; the unit handed to a detector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub level: u32,
    pub start: u64,
    pub duration: u64,
    pub records: Vec<SharedRecord>,
    pub gaps: Vec<(u64, u64)>,
    /// The earliest moment all of the window's data exist; the engine stamps
    /// detections made in this window with this time.
    pub complete_at: u64,
}

impl Window {
    pub fn end(&self) -> u64 {
        self.start + self.duration
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// True when the closed interval `[from, to]` lies inside the window.
    pub fn covers(&self, from: u64, to: u64) -> bool {
        from >= self.start && to < self.end()
    }
}

/// Engine parameters: initial batch duration, pattern length bound, and the
/// number of levels to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamConfig {
    /// Level-0 batch duration in time units.
    pub t0: u64,
    /// Maximum record count of any pattern of interest. Drives the
    /// middle-discard rule; combined batches never exceed `2 * l_max`
    /// records and windows never exceed `4 * l_max`.
    pub l_max: usize,
    /// Number of levels, counting level 0.
    pub depth: u32,
}

impl StreamConfig {
    /// Derives the depth from an upper bound on pattern duration, allocating
    /// enough levels that the coarsest batch duration reaches `t_max`.
    pub fn from_t_max(t0: u64, l_max: usize, t_max: u64) -> Result<Self, StreamError> {
        let depth = level_count(t_max, t0)?;
        Self::from_depth(t0, l_max, depth)
    }

    pub fn from_depth(t0: u64, l_max: usize, depth: u32) -> Result<Self, StreamError> {
        if t0 == 0 {
            return Err(StreamError::ZeroDuration);
        }
        if l_max == 0 {
            return Err(StreamError::ZeroLength);
        }
        if depth == 0 {
            return Err(StreamError::ZeroDepth);
        }
        let config = StreamConfig { t0, l_max, depth };
        config.coarsest_batch_duration_checked()?;
        Ok(config)
    }

    /// Batch duration at the deepest level, `t0 * 2^(depth-1)`.
    pub fn coarsest_batch_duration(&self) -> u64 {
        self.t0 << (self.depth - 1)
    }

    fn coarsest_batch_duration_checked(&self) -> Result<u64, StreamError> {
        self.t0
            .checked_shl(self.depth - 1)
            .filter(|b| b >> (self.depth - 1) == self.t0)
            .ok_or(StreamError::DepthOverflow {
                t0: self.t0,
                depth: self.depth,
            })
    }

    /// Longest pattern duration guaranteed to be covered by a window at some
    /// level. Equals the coarsest batch duration.
    pub fn max_covered_duration(&self) -> u64 {
        self.coarsest_batch_duration()
    }
}

/// Slices time-ordered records into level-0 batches of duration `t0`.
///
/// Batch `j` covers `[j*t0, (j+1)*t0)`. Empty batches are emitted; they
/// occupy time even when no data arrived. The output tiles `[0, horizon)`
/// where the horizon is the last record's time rounded up to a batch
/// boundary.
pub fn batchify(records: &[SharedRecord], t0: u64) -> Result<Vec<Batch>, StreamError> {
    if t0 == 0 {
        return Err(StreamError::ZeroDuration);
    }
    for (index, pair) in records.windows(2).enumerate() {
        if pair[1].time < pair[0].time {
            return Err(StreamError::UnorderedRecords {
                index: index + 1,
                time: pair[1].time,
                prev: pair[0].time,
            });
        }
    }
    let Some(last) = records.last() else {
        return Ok(Vec::new());
    };
    let count = last.time / t0 + 1;
    let mut batches = Vec::with_capacity(count as usize);
    let mut idx = 0;
    for ordinal in 0..count {
        let mut batch = Batch::empty(0, ordinal, t0);
        while idx < records.len() && records[idx].time < batch.end() {
            batch.records.push(records[idx].clone());
            idx += 1;
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// Builds the window over two adjacent same-level batches.
pub fn make_window(left: &Batch, right: &Batch) -> Result<Window, StreamError> {
    if left.level != right.level {
        return Err(StreamError::MixedLevels {
            left: left.level,
            right: right.level,
        });
    }
    if right.ordinal != left.ordinal + 1 {
        return Err(StreamError::NonAdjacent {
            left: left.ordinal,
            right: right.ordinal,
        });
    }
    let mut records = Vec::with_capacity(left.len() + right.len());
    records.extend(left.records.iter().cloned());
    records.extend(right.records.iter().cloned());
    let mut gaps = left.gaps.clone();
    gaps.extend(right.gaps.iter().copied());
    let duration = left.duration + right.duration;
    Ok(Window {
        level: left.level,
        start: left.start,
        duration,
        records,
        gaps,
        complete_at: left.start + duration,
    })
}

/// Produces the half-overlap sliding windows over consecutive same-level
/// batches: window `j` spans batches `j` and `j+1`, so the step is one batch
/// and the window duration twice the batch duration. Fewer than two batches
/// yield no window.
pub fn window_slide(batches: &[Batch]) -> Result<Vec<Window>, StreamError> {
    batches
        .windows(2)
        .map(|pair| make_window(&pair[0], &pair[1]))
        .collect()
}
