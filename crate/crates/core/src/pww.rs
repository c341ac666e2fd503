//! The progressive window widening engine.
//!
//! The stream is processed at `depth` levels in parallel. Level `i` sees
//! batches of duration `t0 * 2^i`; adjacent batches form half-overlap sliding
//! windows, and every window is handed to the detector, so short patterns are
//! caught at fine levels with small delay while coarse levels wait for longer
//! ones. Combining two batches into the next level concatenates their
//! records; when the concatenation exceeds `2 * l_max` records the middle is
//! discarded, keeping `l_max` records at each end. A pattern spanning at most
//! `l_max` records either fits a window at the current level, where it was
//! already visible, or hugs an end of the combined batch, so the discard
//! never hides an unseen pattern, and no window ever exceeds `4 * l_max`
//! records. With a monotone cost model the measured work rate stays below
//! `2 * cost(4 * l_max) / t0` no matter how many levels run, because level
//! `i` processes one window per `t0 * 2^i` time units.

use std::collections::HashSet;
use std::sync::mpsc;

use thiserror::Error;

use crate::detect::{Detector, DetectorError, EpisodeMatch};
use crate::stream::{batchify, make_window, to_shared, Batch, StreamConfig, StreamError, Window};
use crate::trace::Record;

/// Passing this as `l_max` disables middle-discard entirely.
pub const UNBOUNDED_LENGTH: usize = usize::MAX;

/// Resource model for running a detector over a window: `cost(l)` is the
/// work charged for a window of `l` records. Must be monotone with
/// `cost(0) = 0`.
pub trait CostModel {
    fn name(&self) -> &str;
    fn cost(&self, window_len: usize) -> u64;
}

/// One work unit per record in the window.
pub struct LinearCost;

impl CostModel for LinearCost {
    fn name(&self) -> &str {
        "linear"
    }
    fn cost(&self, window_len: usize) -> u64 {
        window_len as u64
    }
}

/// Work quadratic in the window length, for detectors that compare record
/// pairs.
pub struct QuadraticCost;

impl CostModel for QuadraticCost {
    fn name(&self) -> &str {
        "quadratic"
    }
    fn cost(&self, window_len: usize) -> u64 {
        (window_len as u64).saturating_mul(window_len as u64)
    }
}

/// One work unit per nonempty window, counting detector invocations.
pub struct UnitCost;

impl CostModel for UnitCost {
    fn name(&self) -> &str {
        "unit"
    }
    fn cost(&self, window_len: usize) -> u64 {
        u64::from(window_len > 0)
    }
}

/// Looks a cost model up by its CLI name.
pub fn cost_model_by_name(name: &str) -> Option<Box<dyn CostModel + Send + Sync>> {
    match name {
        "linear" => Some(Box::new(LinearCost)),
        "quadratic" => Some(Box::new(QuadraticCost)),
        "unit" => Some(Box::new(UnitCost)),
        _ => None,
    }
}

/// Number of levels needed to cover patterns of duration up to `t_max`
/// starting from batch duration `t0`: level 0 plus one level per doubling
/// until the batch duration reaches `t_max`. Windows at the deepest level
/// then span at least `2 * t_max`.
pub fn level_count(t_max: u64, t0: u64) -> Result<u32, StreamError> {
    if t0 == 0 {
        return Err(StreamError::ZeroDuration);
    }
    if t_max < t0 {
        return Err(StreamError::TMaxBelowT0 { t_max, t0 });
    }
    let mut levels = 1u32;
    let mut duration = t0;
    while duration < t_max {
        duration = duration
            .checked_mul(2)
            .ok_or(StreamError::DepthOverflow { t0, depth: levels })?;
        levels += 1;
    }
    Ok(levels)
}

/// The work-rate bound `2 * cost(4 * l_max) / t0`: with level-0 batches no
/// longer than `2 * l_max` records, the measured work per unit time of a
/// full run never exceeds it.
pub fn work_bound(l_max: usize, t0: u64, cost: &dyn CostModel) -> f64 {
    2.0 * cost.cost(l_max.saturating_mul(4)) as f64 / t0 as f64
}

/// Combines two adjacent same-level batches into one batch of the next
/// level.
///
/// Records are concatenated. If the concatenation exceeds `2 * l_max`
/// records, the middle (positions `l_max ..= len - l_max - 1`) is removed,
/// keeping the first and last `l_max` records verbatim, and the removed
/// records' time span is recorded as a gap. Gaps of the inputs are
/// inherited; overlapping spans are merged.
pub fn combine(left: &Batch, right: &Batch, l_max: usize) -> Result<Batch, StreamError> {
    if l_max == 0 {
        return Err(StreamError::ZeroLength);
    }
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
    if !left.ordinal.is_multiple_of(2) {
        return Err(StreamError::UnalignedPair(left.ordinal));
    }

    let mut records = Vec::with_capacity(left.len() + right.len());
    records.extend(left.records.iter().cloned());
    records.extend(right.records.iter().cloned());
    let mut gaps = left.gaps.clone();
    gaps.extend(right.gaps.iter().copied());

    if records.len() > l_max.saturating_mul(2) {
        let from = records[l_max].time;
        let to = records[records.len() - l_max - 1].time;
        records.drain(l_max..records.len() - l_max);
        gaps.push((from, to));
        gaps = merge_gaps(gaps);
    }

    Ok(Batch {
        level: left.level + 1,
        ordinal: left.ordinal / 2,
        start: left.start,
        duration: left.duration * 2,
        records,
        gaps,
    })
}

fn merge_gaps(mut gaps: Vec<(u64, u64)>) -> Vec<(u64, u64)> {
    gaps.sort_unstable();
    let mut merged: Vec<(u64, u64)> = Vec::with_capacity(gaps.len());
    for (from, to) in gaps {
        match merged.last_mut() {
            Some(last) if from <= last.1 => last.1 = last.1.max(to),
            _ => merged.push((from, to)),
        }
    }
    merged
}

/// Combines a whole level: output batch `j` is `combine` of input batches
/// `2j` and `2j+1`. A trailing unpaired batch is paired with an empty
/// sibling, which is what a live stream does once the sibling's interval
/// elapses with no data.
pub fn widen_level(batches: &[Batch], l_max: usize) -> Result<Vec<Batch>, StreamError> {
    let Some(first) = batches.first() else {
        return Ok(Vec::new());
    };
    if !first.ordinal.is_multiple_of(2) {
        return Err(StreamError::UnalignedPair(first.ordinal));
    }
    for pair in batches.windows(2) {
        if pair[1].ordinal != pair[0].ordinal + 1 {
            return Err(StreamError::NonAdjacent {
                left: pair[0].ordinal,
                right: pair[1].ordinal,
            });
        }
    }
    let mut out = Vec::with_capacity(batches.len() / 2 + 1);
    for chunk in batches.chunks(2) {
        match chunk {
            [a, b] => out.push(combine(a, b, l_max)?),
            [a] => {
                let sibling = Batch::empty(a.level, a.ordinal + 1, a.duration);
                out.push(combine(a, &sibling, l_max)?);
            }
            _ => unreachable!(),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecutionMode {
    /// One thread walks the levels in event-time order.
    Sequential,
    /// One worker per level, fed finished batches by the level below through
    /// an ordered channel. Produces results identical to sequential mode.
    Concurrent,
}

impl std::str::FromStr for ExecutionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(ExecutionMode::Sequential),
            "concurrent" => Ok(ExecutionMode::Concurrent),
            other => Err(format!("unknown mode {other:?} (sequential|concurrent)")),
        }
    }
}

/// Detector cost accounting for one level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelWork {
    pub level: u32,
    pub windows: u64,
    pub work: u64,
}

/// Work accounting for a whole run, measured against the theoretical bound.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkLedger {
    pub per_level: Vec<LevelWork>,
    /// Completion time of the last processed window; zero for an empty
    /// stream.
    pub stream_duration: u64,
    /// Total work divided by `stream_duration` (zero when no window ran).
    pub rho_measured: f64,
    /// `2 * cost(4 * l_max) / t0`.
    pub rho_bound: f64,
}

impl WorkLedger {
    pub fn total_work(&self) -> u64 {
        self.per_level.iter().map(|lw| lw.work).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineResult {
    /// Deduplicated matches, ordered by detection time. When several windows
    /// report the same occurrence, the earliest detection is kept (ties go
    /// to the finer level).
    pub matches: Vec<EpisodeMatch>,
    pub ledger: WorkLedger,
    pub levels_used: u32,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error("detector {detector:?} failed on level {level} window [{start}, {end}): {source}")]
    Detector {
        detector: String,
        level: u32,
        start: u64,
        end: u64,
        #[source]
        source: DetectorError,
    },
}

/// A match as reported by one window, before deduplication.
pub(crate) struct Candidate {
    pub detection_time: u64,
    pub level: u32,
    pub seq: u64,
    pub matched: EpisodeMatch,
}

/// Orders candidates by detection time (ties: finer level, earlier window)
/// and keeps the first occurrence of every match key.
pub(crate) fn merge_candidates(mut candidates: Vec<Candidate>) -> Vec<EpisodeMatch> {
    candidates.sort_by(|a, b| {
        (a.detection_time, a.level, a.seq).cmp(&(b.detection_time, b.level, b.seq))
    });
    let mut seen = HashSet::new();
    let mut matches = Vec::new();
    for candidate in candidates {
        if seen.insert(candidate.matched.key()) {
            matches.push(candidate.matched);
        }
    }
    matches
}

type LevelSummary = (LevelWork, Vec<Candidate>, u64);

/// Per-level machinery shared by both execution modes: consumes the level's
/// batches in order, runs the detector on each finished window, and emits
/// combined batches for the level above.
struct LevelState<'a> {
    level: u32,
    l_max: usize,
    is_top: bool,
    detector: &'a (dyn Detector + Sync),
    cost: &'a (dyn CostModel + Sync),
    window_left: Option<Batch>,
    pair_left: Option<Batch>,
    windows: u64,
    work: u64,
    last_complete_at: u64,
    candidates: Vec<Candidate>,
}

impl<'a> LevelState<'a> {
    fn new(
        level: u32,
        l_max: usize,
        is_top: bool,
        detector: &'a (dyn Detector + Sync),
        cost: &'a (dyn CostModel + Sync),
    ) -> Self {
        LevelState {
            level,
            l_max,
            is_top,
            detector,
            cost,
            window_left: None,
            pair_left: None,
            windows: 0,
            work: 0,
            last_complete_at: 0,
            candidates: Vec::new(),
        }
    }

    /// Accepts the next batch of this level. Returns the combined batch for
    /// the level above when this batch completes a pair.
    fn push(&mut self, batch: Batch) -> Result<Option<Batch>, EngineError> {
        if let Some(left) = self.window_left.take() {
            let window = make_window(&left, &batch)?;
            self.process(window)?;
        }
        self.window_left = Some(batch.clone());
        if self.is_top {
            return Ok(None);
        }
        match self.pair_left.take() {
            None => {
                self.pair_left = Some(batch);
                Ok(None)
            }
            Some(left) => Ok(Some(combine(&left, &batch, self.l_max)?)),
        }
    }

    /// Ends the level's input. A leftover unpaired batch is combined with an
    /// empty sibling so the final window upstairs still gets emitted.
    fn flush(&mut self) -> Result<Option<Batch>, EngineError> {
        match self.pair_left.take() {
            Some(left) => {
                let sibling = Batch::empty(left.level, left.ordinal + 1, left.duration);
                Ok(Some(combine(&left, &sibling, self.l_max)?))
            }
            None => Ok(None),
        }
    }

    fn process(&mut self, window: Window) -> Result<(), EngineError> {
        // Windows arrive in completion order within a level.
        debug_assert!(window.complete_at >= self.last_complete_at);
        self.last_complete_at = window.complete_at;
        self.windows += 1;
        self.work += self.cost.cost(window.len());
        let found = self
            .detector
            .detect(&window)
            .map_err(|source| EngineError::Detector {
                detector: self.detector.name().to_string(),
                level: window.level,
                start: window.start,
                end: window.end(),
                source,
            })?;
        for mut m in found {
            m.detection_time = window.complete_at;
            m.delay = window.complete_at.saturating_sub(m.pattern_end);
            m.level = window.level;
            self.candidates.push(Candidate {
                detection_time: window.complete_at,
                level: window.level,
                seq: self.windows,
                matched: m,
            });
        }
        Ok(())
    }

    fn into_summary(self) -> LevelSummary {
        (
            LevelWork {
                level: self.level,
                windows: self.windows,
                work: self.work,
            },
            self.candidates,
            self.last_complete_at,
        )
    }
}

/// Runs the full engine over a finite trace.
///
/// Level-0 batches are extended with empty batches up to the stream horizon,
/// the last record's time rounded up to the coarsest level's window boundary,
/// so every pattern near the end of the stream still gets a covering window
/// at every level. Every sliding window at every level is passed to the
/// detector exactly once, in completion order within its level; matches are
/// stamped with the completion time of the window that found them and
/// deduplicated across windows and levels. Both execution modes produce
/// identical results.
pub fn run_pww(
    records: &[Record],
    config: &StreamConfig,
    detector: &(dyn Detector + Sync),
    cost: &(dyn CostModel + Sync),
    mode: ExecutionMode,
) -> Result<EngineResult, EngineError> {
    let config = StreamConfig::from_depth(config.t0, config.l_max, config.depth)?;
    let shared = to_shared(records.iter().cloned());
    let mut level0 = batchify(&shared, config.t0)?;
    pad_to_horizon(&mut level0, &config, records.last().map(|r| r.time));

    let parts = match mode {
        ExecutionMode::Sequential => run_sequential(level0, &config, detector, cost)?,
        ExecutionMode::Concurrent => run_concurrent(level0, &config, detector, cost)?,
    };
    Ok(assemble(parts, &config, cost))
}

fn pad_to_horizon(level0: &mut Vec<Batch>, config: &StreamConfig, last_time: Option<u64>) {
    let Some(last) = last_time else { return };
    let coarsest = config.coarsest_batch_duration();
    let per_coarsest = coarsest / config.t0;
    let target = (last / coarsest + 2) * per_coarsest;
    while (level0.len() as u64) < target {
        level0.push(Batch::empty(0, level0.len() as u64, config.t0));
    }
}

fn run_sequential(
    level0: Vec<Batch>,
    config: &StreamConfig,
    detector: &(dyn Detector + Sync),
    cost: &(dyn CostModel + Sync),
) -> Result<Vec<LevelSummary>, EngineError> {
    let depth = config.depth as usize;
    let mut states: Vec<LevelState> = (0..depth)
        .map(|i| LevelState::new(i as u32, config.l_max, i + 1 == depth, detector, cost))
        .collect();

    // Each finished level-0 batch cascades upward: the levels it completes
    // are processed in event-time order, finer levels first on ties.
    for batch in level0 {
        let mut carry = states[0].push(batch)?;
        let mut level = 1;
        while let Some(batch) = carry {
            carry = states[level].push(batch)?;
            level += 1;
        }
    }
    for i in 0..depth {
        let mut carry = states[i].flush()?;
        let mut level = i + 1;
        while let Some(batch) = carry {
            carry = states[level].push(batch)?;
            level += 1;
        }
    }
    Ok(states.into_iter().map(LevelState::into_summary).collect())
}

fn run_concurrent(
    level0: Vec<Batch>,
    config: &StreamConfig,
    detector: &(dyn Detector + Sync),
    cost: &(dyn CostModel + Sync),
) -> Result<Vec<LevelSummary>, EngineError> {
    let depth = config.depth as usize;
    std::thread::scope(|scope| {
        let mut senders = Vec::with_capacity(depth);
        let mut receivers = Vec::with_capacity(depth);
        for _ in 0..depth {
            let (tx, rx) = mpsc::channel::<Batch>();
            senders.push(tx);
            receivers.push(rx);
        }

        let mut handles = Vec::with_capacity(depth);
        for (i, rx) in receivers.into_iter().enumerate() {
            let next = senders.get(i + 1).cloned();
            let mut state = LevelState::new(i as u32, config.l_max, i + 1 == depth, detector, cost);
            handles.push(scope.spawn(move || -> Result<LevelSummary, EngineError> {
                for batch in rx {
                    if let Some(out) = state.push(batch)? {
                        if let Some(tx) = &next {
                            if tx.send(out).is_err() {
                                break;
                            }
                        }
                    }
                }
                if let Some(out) = state.flush()? {
                    if let Some(tx) = &next {
                        let _ = tx.send(out);
                    }
                }
                Ok(state.into_summary())
            }));
        }

        let feed = senders.remove(0);
        drop(senders);
        for batch in level0 {
            if feed.send(batch).is_err() {
                break;
            }
        }
        drop(feed);

        let mut parts = Vec::with_capacity(depth);
        let mut first_error = None;
        for handle in handles {
            match handle.join().expect("level worker panicked") {
                Ok(part) => parts.push(part),
                Err(e) => {
                    if first_error.is_none() {
                        first_error = Some(e);
                    }
                }
            }
        }
        match first_error {
            Some(e) => Err(e),
            None => Ok(parts),
        }
    })
}

fn assemble(
    parts: Vec<LevelSummary>,
    config: &StreamConfig,
    cost: &(dyn CostModel + Sync),
) -> EngineResult {
    let stream_duration = parts.iter().map(|p| p.2).max().unwrap_or(0);
    let mut per_level: Vec<LevelWork> = Vec::with_capacity(parts.len());
    let mut candidates = Vec::new();
    for (work, cands, _) in parts {
        per_level.push(work);
        candidates.extend(cands);
    }
    per_level.sort_by_key(|lw| lw.level);
    let total_work: u64 = per_level.iter().map(|lw| lw.work).sum();
    let matches = merge_candidates(candidates);
    let rho_measured = if stream_duration == 0 {
        0.0
    } else {
        total_work as f64 / stream_duration as f64
    };
    EngineResult {
        matches,
        ledger: WorkLedger {
            per_level,
            stream_duration,
            rho_measured,
            rho_bound: work_bound(config.l_max, config.t0, cost),
        },
        levels_used: config.depth,
    }
}
