//! Experiment harness: the fixed-window baseline, the detection-delay sweep,
//! and the work-rate sweep. All runs are deterministic under a seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::detect::{
    Detector, DetectorError, EpisodeMatch, MatchKey, RemoteShellDetector, REMOTE_SHELL,
};
use crate::pww::{
    merge_candidates, run_pww, work_bound, Candidate, CostModel, EngineError, ExecutionMode,
    LinearCost,
};
use crate::stream::{to_shared, StreamConfig, StreamError, Window};
use crate::synth::{gen_background, inject_episode, InjectionSpec, SynthError, DEFAULT_ALPHABET};
use crate::trace::Record;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("window size {window} and step {step} must satisfy window >= step >= 1")]
    BadWindow { window: u64, step: u64 },
    #[error("need at least one trial")]
    NoTrials,
    #[error("episode duration {0} is not a multiple of 4")]
    IndivisibleDuration(u64),
    #[error("episode duration {duration} exceeds the coverage bound {t_max}")]
    DurationTooLong { duration: u64, t_max: u64 },
    #[error("duration {duration}, trial {trial}: the injected episode went undetected")]
    MissedEpisode { duration: u64, trial: usize },
    #[error("detector {detector:?} failed on baseline window [{start}, {end}): {source}")]
    Detector {
        detector: String,
        start: u64,
        end: u64,
        #[source]
        source: DetectorError,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Stream(#[from] StreamError),
}

/// Shared experiment parameters.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Background stream length in records.
    pub background_len: usize,
    /// Background records per time unit.
    pub rate: f64,
    /// Initial batch duration for engine runs.
    pub t0: u64,
    /// Pattern length bound; also the injected episodes' record-span bound.
    pub l_max: usize,
    /// Pattern duration bound; sets the engine depth.
    pub t_max: u64,
    pub alphabet: Vec<String>,
    /// Fixed-window baseline duration.
    pub baseline_window: u64,
    /// Fixed-window baseline step.
    pub baseline_step: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            background_len: 10_000,
            rate: 1.0,
            t0: 1,
            l_max: 100,
            t_max: 1_024,
            alphabet: DEFAULT_ALPHABET.iter().map(|s| s.to_string()).collect(),
            baseline_window: 200,
            baseline_step: 100,
        }
    }
}

impl ExperimentConfig {
    fn alphabet_refs(&self) -> Vec<&str> {
        self.alphabet.iter().map(String::as_str).collect()
    }

    fn stream_config(&self, t0: u64) -> Result<StreamConfig, StreamError> {
        StreamConfig::from_t_max(t0, self.l_max, self.t_max)
    }
}

/// Mean detection delay for one episode duration.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayPoint {
    pub episode_duration: u64,
    pub mean_delay: f64,
    pub n_samples: usize,
}

/// Work rates for one initial batch duration.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkPoint {
    pub t0: u64,
    pub rho_pww: f64,
    pub rho_fixed: f64,
    pub rho_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkExperiment {
    pub points: Vec<WorkPoint>,
    /// `(t0, reason)` for sweep values whose level-0 batches would exceed
    /// `2 * l_max` records.
    pub skipped: Vec<(u64, String)>,
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    /// Deduplicated matches under the same rules as the engine.
    pub matches: Vec<EpisodeMatch>,
    pub windows: u64,
    pub total_work: u64,
    /// Completion time of the last window; zero for an empty stream.
    pub stream_duration: u64,
    /// `total_work / stream_duration`.
    pub rho: f64,
}

/// Slides one fixed-duration window over the raw stream: window `k` covers
/// `[k*step, k*step + window_size)` for every `k` with `k*step` at or before
/// the last record. Charging and deduplication follow the engine's rules;
/// detections are stamped with the window's end time.
pub fn run_baseline_fixed(
    records: &[Record],
    window_size: u64,
    step: u64,
    detector: &dyn Detector,
    cost: &dyn CostModel,
) -> Result<BaselineResult, BenchError> {
    if step == 0 || window_size < step {
        return Err(BenchError::BadWindow {
            window: window_size,
            step,
        });
    }
    let Some(last) = records.last() else {
        return Ok(BaselineResult {
            matches: Vec::new(),
            windows: 0,
            total_work: 0,
            stream_duration: 0,
            rho: 0.0,
        });
    };
    let shared = to_shared(records.iter().cloned());
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut total_work = 0u64;
    let mut windows = 0u64;
    let mut stream_duration = 0u64;
    for k in 0..=last.time / step {
        let start = k * step;
        let end = start + window_size;
        let lo = shared.partition_point(|r| r.time < start);
        let hi = shared.partition_point(|r| r.time < end);
        let window = Window {
            level: 0,
            start,
            duration: window_size,
            records: shared[lo..hi].to_vec(),
            gaps: Vec::new(),
            complete_at: end,
        };
        windows += 1;
        total_work += cost.cost(window.len());
        stream_duration = end;
        let found = detector
            .detect(&window)
            .map_err(|source| BenchError::Detector {
                detector: detector.name().to_string(),
                start,
                end,
                source,
            })?;
        for mut m in found {
            m.detection_time = end;
            m.delay = end.saturating_sub(m.pattern_end);
            m.level = 0;
            candidates.push(Candidate {
                detection_time: end,
                level: 0,
                seq: windows,
                matched: m,
            });
        }
    }
    Ok(BaselineResult {
        matches: merge_candidates(candidates),
        windows,
        total_work,
        stream_duration,
        rho: total_work as f64 / stream_duration as f64,
    })
}

/// Measures mean detection delay against episode duration.
///
/// For each duration, `trials` fresh backgrounds each get one episode at a
/// seeded random phase; the delay of the engine's (deduplicated) detection of
/// that episode is averaged. Output is sorted by duration.
pub fn run_delay_experiment(
    durations: &[u64],
    trials: usize,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<DelayPoint>, BenchError> {
    if trials == 0 {
        return Err(BenchError::NoTrials);
    }
    let config = cfg.stream_config(cfg.t0)?;
    for &d in durations {
        if d % 4 != 0 {
            return Err(BenchError::IndivisibleDuration(d));
        }
        if d > cfg.t_max {
            return Err(BenchError::DurationTooLong {
                duration: d,
                t_max: cfg.t_max,
            });
        }
    }
    let alphabet = cfg.alphabet_refs();
    let mut points = Vec::with_capacity(durations.len());
    for &duration in durations {
        let mut total_delay = 0u64;
        for trial in 0..trials {
            let background = gen_background(
                cfg.background_len,
                cfg.rate,
                derive_seed(seed, duration, 3 * trial as u64),
                &alphabet,
            )?;
            let horizon = background.last().map(|r| r.time).unwrap_or(0);
            let mut phase_rng =
                ChaCha8Rng::seed_from_u64(derive_seed(seed, duration, 3 * trial as u64 + 1));
            let start_time = if horizon > duration {
                phase_rng.random_range(0..horizon - duration)
            } else {
                0
            };
            let spec = InjectionSpec {
                start_time,
                gap: duration / 4,
                max_span_records: cfg.l_max,
                ..InjectionSpec::default()
            };
            let records = inject_episode(
                &background,
                &spec,
                derive_seed(seed, duration, 3 * trial as u64 + 2),
            )?;
            let result = run_pww(
                &records,
                &config,
                &RemoteShellDetector,
                &LinearCost,
                ExecutionMode::Sequential,
            )?;
            let key = episode_key(&spec)?;
            let found = result
                .matches
                .iter()
                .find(|m| m.key() == key)
                .ok_or(BenchError::MissedEpisode { duration, trial })?;
            total_delay += found.delay;
        }
        points.push(DelayPoint {
            episode_duration: duration,
            mean_delay: total_delay as f64 / trials as f64,
            n_samples: trials,
        });
    }
    points.sort_by_key(|p| p.episode_duration);
    Ok(points)
}

/// Measures the engine's work rate across initial batch durations, next to
/// the fixed-window baseline and the theoretical bound.
///
/// One seeded stream (background plus one episode) is reused across the
/// sweep. Sweep values whose level-0 batches would exceed `2 * l_max`
/// records are skipped and reported. Output is sorted by `t0`.
pub fn run_work_experiment(
    t0_values: &[u64],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<WorkExperiment, BenchError> {
    let alphabet = cfg.alphabet_refs();
    let background = gen_background(
        cfg.background_len,
        cfg.rate,
        derive_seed(seed, 0, 0),
        &alphabet,
    )?;
    let horizon = background.last().map(|r| r.time).unwrap_or(0);
    let episode_duration = 64.min(cfg.t_max);
    let mut phase_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 1));
    let start_time = if horizon > episode_duration {
        phase_rng.random_range(0..horizon - episode_duration)
    } else {
        0
    };
    let spec = InjectionSpec {
        start_time,
        gap: episode_duration / 4,
        max_span_records: cfg.l_max,
        ..InjectionSpec::default()
    };
    let records = inject_episode(&background, &spec, derive_seed(seed, 0, 2))?;

    let baseline = run_baseline_fixed(
        &records,
        cfg.baseline_window,
        cfg.baseline_step,
        &RemoteShellDetector,
        &LinearCost,
    )?;

    let mut points = Vec::new();
    let mut skipped = Vec::new();
    for &t0 in t0_values {
        let longest = longest_level0_batch(&records, t0);
        if longest > 2 * cfg.l_max {
            skipped.push((
                t0,
                format!(
                    "level-0 batches reach {longest} records, over the bound {}",
                    2 * cfg.l_max
                ),
            ));
            continue;
        }
        let config = cfg.stream_config(t0)?;
        let result = run_pww(
            &records,
            &config,
            &RemoteShellDetector,
            &LinearCost,
            ExecutionMode::Sequential,
        )?;
        points.push(WorkPoint {
            t0,
            rho_pww: result.ledger.rho_measured,
            rho_fixed: baseline.rho,
            rho_bound: work_bound(cfg.l_max, t0, &LinearCost),
        });
    }
    points.sort_by_key(|p| p.t0);
    Ok(WorkExperiment { points, skipped })
}

fn longest_level0_batch(records: &[Record], t0: u64) -> usize {
    if t0 == 0 {
        return usize::MAX;
    }
    let mut longest = 0;
    let mut current_ordinal = None;
    let mut current_len = 0usize;
    for r in records {
        let ordinal = r.time / t0;
        if Some(ordinal) == current_ordinal {
            current_len += 1;
        } else {
            current_ordinal = Some(ordinal);
            current_len = 1;
        }
        longest = longest.max(current_len);
    }
    longest
}

fn episode_key(spec: &InjectionSpec) -> Result<MatchKey, SynthError> {
    let mut times = spec.episode_times()?.to_vec();
    times.sort_unstable();
    Ok(MatchKey {
        episode: REMOTE_SHELL.to_string(),
        times,
    })
}

/// Least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Pearson correlation of `ys` against `xs`.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    sxy / (sxx.sqrt() * syy.sqrt())
}

fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(splitmix(splitmix(master) ^ a) ^ b)
}
