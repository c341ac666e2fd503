//! Pattern recognizers and the remote-shell episode matcher.
//!
//! A detector is a black box run independently on each window: it sees the
//! window's record list and gaps, nothing else. The one recognizer shipped
//! here matches the remote-shell episode
//!
//! ```text
//! accept fd=x => y
//! dup fd=y => 0 | dup fd=y => 1 | dup fd=y => 2   (any order)
//! execve ...
//! ```
//!
//! as a sparse subsequence: the five calls may be interspersed with unrelated
//! records, the three `dup`s may come in any order, and `x` and the `execve`
//! arguments are unconstrained. `y` correlates by string equality.

use std::fmt;

use thiserror::Error;

use crate::stream::Window;
use crate::trace::Record;

/// A detector failure; the engine aborts the run and reports which window
/// was being processed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct DetectorError(pub String);

/// A pattern recognizer applied independently to each window.
///
/// Implementations must be deterministic given the window contents and keep
/// no state across windows; the engine may invoke them concurrently on
/// different windows. `detection_time`, `delay` and `level` of returned
/// matches are overwritten by the caller that knows the window's place in
/// the stream.
pub trait Detector {
    fn name(&self) -> &str;
    fn detect(&self, window: &Window) -> Result<Vec<EpisodeMatch>, DetectorError>;
}

/// A detected episode occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeMatch {
    pub episode: String,
    /// Timestamps of the matched records in occurrence order.
    pub matched_times: Vec<u64>,
    /// Time of the first matched record.
    pub pattern_start: u64,
    /// Time of the last matched record.
    pub pattern_end: u64,
    /// When the match became observable: the completion time of the window
    /// that produced it. Stamped by the engine.
    pub detection_time: u64,
    /// `detection_time - pattern_end`. Stamped by the engine.
    pub delay: u64,
    /// True when a discarded interval lies within `[pattern_start,
    /// pattern_end]`; such matches are seam artifacts of middle-discard and
    /// are reported flagged rather than suppressed.
    pub crosses_gap: bool,
    /// Level of the window that produced the match. Stamped by the engine.
    pub level: u32,
}

impl EpisodeMatch {
    /// Identity used for deduplication across windows and levels: the episode
    /// name plus the multiset of matched timestamps.
    pub fn key(&self) -> MatchKey {
        let mut times = self.matched_times.clone();
        times.sort_unstable();
        MatchKey {
            episode: self.episode.clone(),
            times,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatchKey {
    pub episode: String,
    pub times: Vec<u64>,
}

impl fmt::Display for MatchKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{:?}", self.episode, self.times)
    }
}

pub const REMOTE_SHELL: &str = "remote-shell";

/// The remote-shell episode recognizer.
pub struct RemoteShellDetector;

impl Detector for RemoteShellDetector {
    fn name(&self) -> &str {
        REMOTE_SHELL
    }

    fn detect(&self, window: &Window) -> Result<Vec<EpisodeMatch>, DetectorError> {
        Ok(match_remote_shell(window))
    }
}

/// Looks a detector up by its CLI name.
pub fn detector_by_name(name: &str) -> Option<Box<dyn Detector + Send + Sync>> {
    match name {
        REMOTE_SHELL => Some(Box::new(RemoteShellDetector)),
        _ => None,
    }
}

/// An open accept: the file descriptor it returned and the dup records
/// collected for it so far.
struct AcceptState<'a> {
    fd: &'a str,
    accept_time: u64,
    /// Earliest `dup fd=y => k` for k = 0, 1, 2, as (position, time).
    dups: [Option<(usize, u64)>; 3],
    complete: bool,
}

/// Finds every minimal remote-shell occurrence in a window.
///
/// For each `accept` the earliest completing dup triple and the earliest
/// subsequent `execve` are reported: one match per accept occurrence. When
/// several accepts return the same descriptor, each dup record counts toward
/// the earliest accept still missing it, so the same dup is never shared
/// between same-descriptor accepts. One `execve` may complete the pending
/// matches of several accepts.
pub fn match_remote_shell(window: &Window) -> Vec<EpisodeMatch> {
    let mut pending: Vec<AcceptState> = Vec::new();
    let mut matches = Vec::new();

    for (pos, record) in window.records.iter().enumerate() {
        let event = &record.event;
        match event.name.as_str() {
            "accept" => {
                if let Some(fd) = event.retval.as_deref() {
                    pending.push(AcceptState {
                        fd,
                        accept_time: record.time,
                        dups: [None; 3],
                        complete: false,
                    });
                }
            }
            "dup" => {
                let slot = match event.retval.as_deref() {
                    Some("0") => 0,
                    Some("1") => 1,
                    Some("2") => 2,
                    _ => continue,
                };
                let Some(fd) = event.arg("fd") else { continue };
                if let Some(state) = pending
                    .iter_mut()
                    .find(|s| !s.complete && s.fd == fd && s.dups[slot].is_none())
                {
                    state.dups[slot] = Some((pos, record.time));
                    state.complete = state.dups.iter().all(Option::is_some);
                }
            }
            "execve" => {
                let mut i = 0;
                while i < pending.len() {
                    if pending[i].complete {
                        let state = pending.remove(i);
                        matches.push(build_match(window, &state, record));
                    } else {
                        i += 1;
                    }
                }
            }
            _ => {}
        }
    }
    matches
}

fn build_match(window: &Window, state: &AcceptState, execve: &Record) -> EpisodeMatch {
    let mut dups: Vec<(usize, u64)> = state.dups.iter().map(|d| d.unwrap()).collect();
    dups.sort_unstable();
    let pattern_start = state.accept_time;
    let pattern_end = execve.time;
    let crosses_gap = window
        .gaps
        .iter()
        .any(|&(from, to)| pattern_start <= from && to <= pattern_end);
    let mut matched_times = Vec::with_capacity(5);
    matched_times.push(state.accept_time);
    matched_times.extend(dups.iter().map(|&(_, t)| t));
    matched_times.push(execve.time);
    EpisodeMatch {
        episode: REMOTE_SHELL.to_string(),
        matched_times,
        pattern_start,
        pattern_end,
        detection_time: 0,
        delay: 0,
        crosses_gap,
        level: window.level,
    }
}

/// Ground-truth reference: applies the matching semantics to the whole
/// record sequence as one window. Used to check that the windowed engine
/// finds everything it should.
pub fn oracle_detect(records: &[Record]) -> Vec<EpisodeMatch> {
    let Some(last) = records.last() else {
        return Vec::new();
    };
    let duration = last.time + 1;
    let window = Window {
        level: 0,
        start: 0,
        duration,
        records: crate::stream::to_shared(records.iter().cloned()),
        gaps: Vec::new(),
        complete_at: duration,
    };
    let mut matches = match_remote_shell(&window);
    for m in &mut matches {
        m.detection_time = m.pattern_end;
        m.delay = 0;
        m.level = 0;
    }
    matches
}
