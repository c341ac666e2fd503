//! End-to-end engine behavior: coverage, deduplication, mode equivalence,
//! work accounting, and failure reporting.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pww_core::detect::{oracle_detect, Detector, DetectorError, RemoteShellDetector};
use pww_core::pww::{run_pww, widen_level, ExecutionMode, LinearCost, UnitCost};
use pww_core::report::{ledger_csv, matches_csv};
use pww_core::stream::{batchify, to_shared, window_slide, StreamConfig, Window};
use pww_core::synth::{gen_background, inject_episode, InjectionSpec, DEFAULT_ALPHABET};
use pww_core::trace::{parse_trace, Record, SyscallEvent};

/// Enumerates windows arithmetically (start `k * b`, duration `2b` at each
/// level) and returns the earliest-completing one containing all the given
/// times, independently of the engine's batching path.
fn brute_force_earliest_window(times: &[u64], config: &StreamConfig) -> Option<(u32, u64)> {
    let lo = *times.iter().min()?;
    let hi = *times.iter().max()?;
    let mut best: Option<(u64, u32)> = None;
    for level in 0..config.depth {
        let b = config.t0 << level;
        for k in 0..=hi / b + 2 {
            let start = k * b;
            let end = start + 2 * b;
            if start <= lo && hi < end {
                let candidate = (end, level);
                if best.map(|b| candidate < b).unwrap_or(true) {
                    best = Some(candidate);
                }
            }
        }
    }
    best.map(|(complete_at, level)| (level, complete_at))
}

fn episode_records(start: u64, gap: u64) -> Vec<Record> {
    let fd = |t: u64, name: &str, fd: &str, rv: &str| {
        Record::new(
            t,
            SyscallEvent::new(name).with_arg("fd", fd).with_retval(rv),
        )
    };
    vec![
        fd(start, "accept", "4", "6"),
        fd(start + gap, "dup", "6", "0"),
        fd(start + 2 * gap, "dup", "6", "1"),
        fd(start + 3 * gap, "dup", "6", "2"),
        Record::new(
            start + 4 * gap,
            SyscallEvent::new("execve").with_arg("exe", "sh"),
        ),
    ]
}

#[test]
fn detection_happens_in_the_earliest_covering_window() {
    // Five records spread over [0, 8]: no level below 3 can cover the span,
    // so the first covering window is [0, 16) at level 3.
    let records = episode_records(0, 2);
    let config = StreamConfig::from_t_max(1, 100, 8).unwrap();
    assert_eq!(config.depth, 4);

    let times: Vec<u64> = records.iter().map(|r| r.time).collect();
    let expected = brute_force_earliest_window(&times, &config).unwrap();
    assert_eq!(expected, (3, 16));

    let result = run_pww(
        &records,
        &config,
        &RemoteShellDetector,
        &LinearCost,
        ExecutionMode::Sequential,
    )
    .unwrap();
    assert_eq!(result.matches.len(), 1);
    let m = &result.matches[0];
    assert_eq!((m.level, m.detection_time), expected);
    assert_eq!(m.delay, 8);
}

#[test]
fn no_episode_means_no_matches_but_a_populated_ledger() {
    let background = gen_background(500, 1.0, 5, &DEFAULT_ALPHABET).unwrap();
    let config = StreamConfig::from_t_max(1, 100, 64).unwrap();
    let result = run_pww(
        &background,
        &config,
        &RemoteShellDetector,
        &LinearCost,
        ExecutionMode::Sequential,
    )
    .unwrap();
    assert!(result.matches.is_empty());
    assert_eq!(result.ledger.per_level.len(), config.depth as usize);
    assert!(result.ledger.per_level.iter().all(|lw| lw.windows > 0));
    assert!(result.ledger.stream_duration > 0);
    assert!(result.ledger.rho_measured > 0.0);
}

#[test]
fn empty_stream_yields_an_idle_ledger() {
    let config = StreamConfig::from_t_max(1, 100, 8).unwrap();
    let result = run_pww(
        &[],
        &config,
        &RemoteShellDetector,
        &LinearCost,
        ExecutionMode::Sequential,
    )
    .unwrap();
    assert!(result.matches.is_empty());
    assert_eq!(result.ledger.per_level.len(), 4);
    assert!(result.ledger.per_level.iter().all(|lw| lw.work == 0));
    assert_eq!(result.ledger.stream_duration, 0);
    assert_eq!(result.ledger.rho_measured, 0.0);
}

#[test]
fn one_episode_is_reported_once_despite_many_covering_windows() {
    // A tight episode deep inside a long stream is covered at every level;
    // deduplication must keep exactly one match, stamped with the earliest
    // completion time.
    let background = gen_background(600, 1.0, 8, &DEFAULT_ALPHABET).unwrap();
    let spec = InjectionSpec {
        start_time: 300,
        gap: 1,
        ..InjectionSpec::default()
    };
    let records = inject_episode(&background, &spec, 17).unwrap();
    let config = StreamConfig::from_t_max(1, 100, 256).unwrap();
    let result = run_pww(
        &records,
        &config,
        &RemoteShellDetector,
        &LinearCost,
        ExecutionMode::Sequential,
    )
    .unwrap();
    assert_eq!(result.matches.len(), 1);

    let times: Vec<u64> = spec.episode_times().unwrap().to_vec();
    let (level, complete_at) = brute_force_earliest_window(&times, &config).unwrap();
    assert_eq!(result.matches[0].detection_time, complete_at);
    assert_eq!(result.matches[0].level, level);
}

#[test]
fn depth_cap_blinds_the_engine_to_longer_episodes() {
    let records = episode_records(0, 3); // duration 12
    let shallow = StreamConfig::from_depth(1, 100, 1).unwrap();
    let result = run_pww(
        &records,
        &shallow,
        &RemoteShellDetector,
        &LinearCost,
        ExecutionMode::Sequential,
    )
    .unwrap();
    assert!(result.matches.is_empty());
    assert_eq!(result.levels_used, 1);

    let deep = StreamConfig::from_t_max(1, 100, 16).unwrap();
    let result = run_pww(
        &records,
        &deep,
        &RemoteShellDetector,
        &LinearCost,
        ExecutionMode::Sequential,
    )
    .unwrap();
    assert_eq!(result.matches.len(), 1);
}

#[test]
fn sequential_and_concurrent_runs_are_identical() {
    for seed in [1u64, 2, 3, 4, 5, 6] {
        let background = gen_background(1_200, 1.0, seed, &DEFAULT_ALPHABET).unwrap();
        let spec = InjectionSpec {
            start_time: 100 + seed * 50,
            gap: seed,
            ..InjectionSpec::default()
        };
        let records = inject_episode(&background, &spec, seed).unwrap();
        let config = StreamConfig::from_t_max(1, 100, 256).unwrap();
        let sequential = run_pww(
            &records,
            &config,
            &RemoteShellDetector,
            &LinearCost,
            ExecutionMode::Sequential,
        )
        .unwrap();
        let concurrent = run_pww(
            &records,
            &config,
            &RemoteShellDetector,
            &LinearCost,
            ExecutionMode::Concurrent,
        )
        .unwrap();
        assert_eq!(sequential, concurrent);
        assert_eq!(
            matches_csv(&sequential.matches),
            matches_csv(&concurrent.matches)
        );
        assert_eq!(
            ledger_csv(&sequential.ledger),
            ledger_csv(&concurrent.ledger)
        );
    }
}

struct Recording {
    inner: RemoteShellDetector,
    max_len: usize,
    seen: Mutex<Vec<(u32, u64, usize)>>,
}

impl Recording {
    fn new(max_len: usize) -> Self {
        Recording {
            inner: RemoteShellDetector,
            max_len,
            seen: Mutex::new(Vec::new()),
        }
    }
}

impl Detector for Recording {
    fn name(&self) -> &str {
        "recording"
    }
    fn detect(&self, window: &Window) -> Result<Vec<pww_core::EpisodeMatch>, DetectorError> {
        assert!(
            window.len() <= self.max_len,
            "window of {} records exceeds the bound {}",
            window.len(),
            self.max_len
        );
        self.seen
            .lock()
            .unwrap()
            .push((window.level, window.complete_at, window.len()));
        self.inner.detect(window)
    }
}

#[test]
fn windows_arrive_in_completion_order_and_respect_the_length_bound() {
    let background = gen_background(800, 2.0, 3, &DEFAULT_ALPHABET).unwrap();
    let l_max = 20;
    let config = StreamConfig::from_t_max(1, l_max, 128).unwrap();
    let recording = Recording::new(4 * l_max);
    run_pww(
        &background,
        &config,
        &recording,
        &LinearCost,
        ExecutionMode::Sequential,
    )
    .unwrap();
    let seen = recording.seen.into_inner().unwrap();
    assert!(!seen.is_empty());
    // Completion order within each level, and globally in the sequential
    // cascade (ties broken by level, finer first).
    let mut per_level = std::collections::HashMap::new();
    let mut prev_global = (0u64, 0u32);
    for &(level, complete_at, _) in &seen {
        let last = per_level.entry(level).or_insert(0u64);
        assert!(complete_at >= *last, "level {level} went backwards");
        *last = complete_at;
        assert!((complete_at, level) >= prev_global, "event clock reversed");
        prev_global = (complete_at, level);
    }
}

struct FailingDetector;

impl Detector for FailingDetector {
    fn name(&self) -> &str {
        "failing"
    }
    fn detect(&self, window: &Window) -> Result<Vec<pww_core::EpisodeMatch>, DetectorError> {
        if window.level == 1 && window.start == 4 {
            Err(DetectorError("synthetic failure".into()))
        } else {
            Ok(Vec::new())
        }
    }
}

#[test]
fn detector_failures_name_the_window() {
    let records: Vec<Record> = (0..32)
        .map(|t| Record::new(t, SyscallEvent::new("brk")))
        .collect();
    let config = StreamConfig::from_t_max(1, 100, 8).unwrap();
    for mode in [ExecutionMode::Sequential, ExecutionMode::Concurrent] {
        let err = run_pww(&records, &config, &FailingDetector, &LinearCost, mode).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("failing"), "{msg}");
        assert!(msg.contains("level 1"), "{msg}");
        assert!(msg.contains("[4, 8)"), "{msg}");
        assert!(msg.contains("synthetic failure"), "{msg}");
    }
}

#[test]
fn five_line_capture_triggers_one_match() {
    let records = parse_trace([
        "accept fd=5 => 6",
        "dup fd=6 => 2",
        "dup fd=6 => 1",
        "dup fd=6 => 0",
        "execve exe=sh",
    ])
    .unwrap();
    let config = StreamConfig::from_t_max(1, 100, 8).unwrap();
    let result = run_pww(
        &records,
        &config,
        &RemoteShellDetector,
        &LinearCost,
        ExecutionMode::Sequential,
    )
    .unwrap();
    assert_eq!(result.matches.len(), 1);
    assert_eq!(result.matches[0].matched_times, vec![0, 1, 2, 3, 4]);
}

#[test]
fn ledger_charges_match_a_hand_count() {
    // Five records at times 0..=4, t0=1, two levels. The horizon is time 8
    // (the last record's time rounded up to the coarsest window boundary),
    // so level 0 runs seven windows holding 2,2,2,2,1,0,0 records and level
    // 1 runs three holding 4,3,1.
    let records: Vec<Record> = (0..5)
        .map(|t| Record::new(t, SyscallEvent::new("brk")))
        .collect();
    let config = StreamConfig::from_depth(1, 100, 2).unwrap();
    let result = run_pww(
        &records,
        &config,
        &RemoteShellDetector,
        &LinearCost,
        ExecutionMode::Sequential,
    )
    .unwrap();
    let ledger = &result.ledger;
    assert_eq!(
        ledger
            .per_level
            .iter()
            .map(|lw| (lw.level, lw.windows, lw.work))
            .collect::<Vec<_>>(),
        vec![(0, 7, 9), (1, 3, 8)]
    );
    assert_eq!(ledger.stream_duration, 8);
    assert_eq!(ledger.total_work(), 17);
    assert!((ledger.rho_measured - 17.0 / 8.0).abs() < 1e-12);
    assert_eq!(ledger.rho_bound, 800.0);
}

/// Randomized end-to-end coverage: small streams, small length bounds (so
/// middle-discard fires constantly), one injected episode each. Every
/// coverable oracle match must be found; extra matches may only be
/// discard-seam artifacts, and they say so.
#[test]
fn randomized_streams_detect_every_coverable_episode() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    for case in 0..150 {
        let n = rng.random_range(40..400);
        let rate = [0.5, 1.0, 2.0][rng.random_range(0..3)];
        let t0 = rng.random_range(1..4);
        let l_max = rng.random_range(6..40);
        let t_max = t0 << rng.random_range(3..8);
        let config = StreamConfig::from_t_max(t0, l_max, t_max).unwrap();

        let background = gen_background(n, rate, rng.random(), &DEFAULT_ALPHABET).unwrap();
        let horizon = background.last().map(|r| r.time).unwrap_or(0);
        let duration = 4 * rng.random_range(0..=config.max_covered_duration() / 4);
        let start_time = rng.random_range(0..=horizon.saturating_sub(duration));
        let spec = InjectionSpec {
            start_time,
            gap: duration / 4,
            max_span_records: l_max.max(5),
            ..InjectionSpec::default()
        };
        let records = inject_episode(&background, &spec, rng.random()).unwrap();

        let oracle = oracle_detect(&records);
        assert_eq!(oracle.len(), 1, "case {case}");
        let result = run_pww(
            &records,
            &config,
            &RemoteShellDetector,
            &LinearCost,
            ExecutionMode::Sequential,
        )
        .unwrap();

        let coverable = spec.max_span_records <= l_max
            && oracle[0].pattern_end - oracle[0].pattern_start <= config.max_covered_duration();
        let keys: Vec<_> = result.matches.iter().map(|m| m.key()).collect();
        if coverable {
            assert!(
                keys.contains(&oracle[0].key()),
                "case {case}: coverable episode missed (t0={t0}, l_max={l_max}, duration={duration})"
            );
        }
        for m in &result.matches {
            if m.key() != oracle[0].key() {
                assert!(
                    m.crosses_gap,
                    "case {case}: unexpected unflagged extra match"
                );
            }
        }
    }
}

/// Structural form of the coverage guarantee: some window at some level holds
/// all five episode records with no discarded interval strictly inside the
/// episode's span.
#[test]
fn some_window_contains_every_injected_episode_intact() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xBEEF);
    for case in 0..200 {
        let n = rng.random_range(30..250);
        let t0 = rng.random_range(1..4);
        let l_max = rng.random_range(5..25);
        let depth = rng.random_range(3..9);
        let config = StreamConfig::from_depth(t0, l_max, depth).unwrap();

        let background = gen_background(n, 1.0, rng.random(), &DEFAULT_ALPHABET).unwrap();
        let horizon = background.last().map(|r| r.time).unwrap_or(0);
        let duration = 4 * rng.random_range(0..=config.max_covered_duration() / 4);
        let start_time = rng.random_range(0..=horizon.saturating_sub(duration));
        let spec = InjectionSpec {
            start_time,
            gap: duration / 4,
            max_span_records: l_max.max(5),
            ..InjectionSpec::default()
        };
        let records = inject_episode(&background, &spec, rng.random()).unwrap();
        let episode: Vec<Record> = records
            .iter()
            .filter(|r| ["accept", "dup", "execve"].contains(&r.event.name.as_str()))
            .cloned()
            .collect();
        assert_eq!(episode.len(), 5);
        let (lo, hi) = (episode[0].time, episode[4].time);

        // Pad level 0 far enough that the last batch pairs up at every level.
        let shared = to_shared(records.iter().cloned());
        let mut level = batchify(&shared, t0).unwrap();
        let coarsest = config.coarsest_batch_duration();
        let target = (horizon.max(hi) / coarsest + 2) * (coarsest / t0);
        while (level.len() as u64) < target {
            level.push(pww_core::Batch::empty(0, level.len() as u64, t0));
        }

        let mut found = false;
        for _ in 0..depth {
            for w in window_slide(&level).unwrap() {
                let holds_all = episode
                    .iter()
                    .all(|e| w.records.iter().any(|r| r.as_ref() == e));
                let gap_inside = w.gaps.iter().any(|&(from, to)| from < hi && to > lo);
                if holds_all && !gap_inside {
                    found = true;
                }
            }
            level = widen_level(&level, l_max).unwrap();
        }
        assert!(found, "case {case}: no intact covering window");
    }
}

#[test]
fn measured_work_stays_under_the_bound_across_cost_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFEED);
    for _ in 0..20 {
        let n = rng.random_range(100..1_500);
        let t0 = rng.random_range(1..8);
        let l_max = rng.random_range(8..50);
        let config = StreamConfig::from_t_max(t0, l_max, t0 << 6).unwrap();
        // Keep level-0 batches within 2*l_max so the bound applies.
        let rate = (2.0 * l_max as f64 / t0 as f64 / 2.0).min(2.0);
        let records = gen_background(n, rate, rng.random(), &DEFAULT_ALPHABET).unwrap();
        for cost in [&LinearCost as &(dyn pww_core::CostModel + Sync), &UnitCost] {
            let result = run_pww(
                &records,
                &config,
                &RemoteShellDetector,
                cost,
                ExecutionMode::Sequential,
            )
            .unwrap();
            assert!(
                result.ledger.rho_measured <= result.ledger.rho_bound,
                "rho {} over bound {} (t0={t0}, l_max={l_max})",
                result.ledger.rho_measured,
                result.ledger.rho_bound,
            );
        }
    }
}
