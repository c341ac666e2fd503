//! CSV rendering for matches, ledgers, and experiment outputs. All output is
//! LF-terminated with a header row.

use crate::bench::{DelayPoint, WorkPoint};
use crate::detect::EpisodeMatch;
use crate::pww::WorkLedger;

pub fn matches_csv(matches: &[EpisodeMatch]) -> String {
    let mut out = String::from("episode,start,end,detection_time,delay,crosses_gap,level\n");
    for m in matches {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.episode,
            m.pattern_start,
            m.pattern_end,
            m.detection_time,
            m.delay,
            m.crosses_gap,
            m.level
        ));
    }
    out
}

/// Per-level rows followed by a one-row summary section.
pub fn ledger_csv(ledger: &WorkLedger) -> String {
    let mut out = String::from("level,windows,work\n");
    for lw in &ledger.per_level {
        out.push_str(&format!("{},{},{}\n", lw.level, lw.windows, lw.work));
    }
    out.push_str("\nrho_measured,rho_bound\n");
    out.push_str(&format!("{},{}\n", ledger.rho_measured, ledger.rho_bound));
    out
}

pub fn delay_csv(points: &[DelayPoint]) -> String {
    let mut out = String::from("duration,mean_delay,n\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{}\n",
            p.episode_duration, p.mean_delay, p.n_samples
        ));
    }
    out
}

pub fn work_csv(points: &[WorkPoint]) -> String {
    let mut out = String::from("t0,rho_pww,rho_fixed,rho_bound\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.t0, p.rho_pww, p.rho_fixed, p.rho_bound
        ));
    }
    out
}
