//! Synthetic trace generation: benign background streams and remote-shell
//! episode injection with configurable inter-instruction delays.
//!
//! Backgrounds are drawn from an alphabet that never contains `accept`, so a
//! background alone can never complete the remote-shell episode and every
//! injected episode adds exactly one ground-truth match.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::trace::{Record, SyscallEvent};

/// Default background syscall names.
pub const DEFAULT_ALPHABET: [&str; 8] = [
    "read", "write", "open", "close", "stat", "mmap", "brk", "futex",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("background alphabet must not be empty")]
    EmptyAlphabet,
    #[error("background alphabet must not contain \"accept\"")]
    AcceptInAlphabet,
    #[error("generation rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("episode record span bound must be at least 5, got {0}")]
    SpanTooSmall(usize),
    #[error("episode times overflow the time axis (start={start}, gap={gap})")]
    TimeOverflow { start: u64, gap: u64 },
}

/// Where and how to plant one remote-shell episode.
#[derive(Debug, Clone)]
pub struct InjectionSpec {
    /// Time of the episode's `accept`.
    pub start_time: u64,
    /// Time units between consecutive episode records; the episode spans
    /// `4 * gap` time units.
    pub gap: u64,
    /// `(x, y)`: the descriptor passed to `accept` and the one it returns.
    pub fd_pair: (String, String),
    /// Executable named in the final `execve`.
    pub exe: String,
    /// Upper bound on the episode's record span in the injected trace;
    /// background records inside the episode interval are thinned to honor
    /// it. Defaults to no bound; set it to the engine's `l_max` when the
    /// injection feeds a detection run.
    pub max_span_records: usize,
}

impl Default for InjectionSpec {
    fn default() -> Self {
        InjectionSpec {
            start_time: 0,
            gap: 1,
            fd_pair: ("5".to_string(), "6".to_string()),
            exe: "sh".to_string(),
            max_span_records: usize::MAX,
        }
    }
}

impl InjectionSpec {
    /// The five episode record times: `start, start+gap, ..., start+4*gap`.
    pub fn episode_times(&self) -> Result<[u64; 5], SynthError> {
        let overflow = || SynthError::TimeOverflow {
            start: self.start_time,
            gap: self.gap,
        };
        let mut times = [0u64; 5];
        for (k, slot) in times.iter_mut().enumerate() {
            *slot = self
                .gap
                .checked_mul(k as u64)
                .and_then(|d| self.start_time.checked_add(d))
                .ok_or_else(overflow)?;
        }
        Ok(times)
    }

    /// The episode's duration, `4 * gap`.
    pub fn duration(&self) -> u64 {
        4 * self.gap
    }
}

/// Generates `n` benign records at `rate` records per time unit,
/// deterministically under `seed`. Record `i` is stamped `floor(i / rate)`.
pub fn gen_background(
    n: usize,
    rate: f64,
    seed: u64,
    alphabet: &[&str],
) -> Result<Vec<Record>, SynthError> {
    if alphabet.is_empty() {
        return Err(SynthError::EmptyAlphabet);
    }
    if alphabet.contains(&"accept") {
        return Err(SynthError::AcceptInAlphabet);
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(SynthError::BadRate(rate));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let time = (i as f64 / rate).floor() as u64;
        let name = alphabet[rng.random_range(0..alphabet.len())];
        let mut event = SyscallEvent::new(name);
        match name {
            "read" | "write" | "close" => {
                event = event
                    .with_arg("fd", rng.random_range(3..64u32).to_string())
                    .with_retval("0");
            }
            "open" | "stat" => {
                event = event
                    .with_arg("path", format!("/tmp/f{}", rng.random_range(0..64u32)))
                    .with_retval(rng.random_range(3..64u32).to_string());
            }
            "mmap" => {
                event = event.with_arg("len", (4096u32 << rng.random_range(0..4u32)).to_string());
            }
            _ => {}
        }
        records.push(Record::new(time, event));
    }
    Ok(records)
}

/// Inserts one remote-shell episode into a time-sorted background.
///
/// The five episode records land at `start, start+gap, ..., start+4*gap`,
/// with the three `dup`s in a seeded random order. Background records inside
/// the closed episode interval are thinned to at most `max_span_records - 5`
/// (a seeded uniform subsample, chronological order kept) so the episode's
/// record span in the output stays within the bound. The result is re-sorted
/// by time.
pub fn inject_episode(
    records: &[Record],
    spec: &InjectionSpec,
    seed: u64,
) -> Result<Vec<Record>, SynthError> {
    if spec.max_span_records < 5 {
        return Err(SynthError::SpanTooSmall(spec.max_span_records));
    }
    let times = spec.episode_times()?;
    let (lo, hi) = (times[0], times[4]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let (x, y) = (&spec.fd_pair.0, &spec.fd_pair.1);
    let mut dup_retvals = ["0", "1", "2"];
    dup_retvals.shuffle(&mut rng);
    let mut episode = Vec::with_capacity(5);
    episode.push(Record::new(
        times[0],
        SyscallEvent::new("accept").with_arg("fd", x).with_retval(y),
    ));
    for (k, rv) in dup_retvals.iter().enumerate() {
        episode.push(Record::new(
            times[1 + k],
            SyscallEvent::new("dup").with_arg("fd", y).with_retval(*rv),
        ));
    }
    episode.push(Record::new(
        times[4],
        SyscallEvent::new("execve").with_arg("exe", &spec.exe),
    ));

    let budget = spec.max_span_records - 5;
    let inside: Vec<&Record> = records
        .iter()
        .filter(|r| r.time >= lo && r.time <= hi)
        .collect();
    let kept_inside: Vec<Record> = if inside.len() > budget {
        let mut picks = rand::seq::index::sample(&mut rng, inside.len(), budget).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| inside[i].clone()).collect()
    } else {
        inside.into_iter().cloned().collect()
    };

    let mut out: Vec<Record> = records
        .iter()
        .filter(|r| r.time < lo || r.time > hi)
        .cloned()
        .collect();
    out.extend(kept_inside);
    out.extend(episode);
    out.sort_by_key(|r| r.time);
    Ok(out)
}
