//! System-call trace format: parsing, timestamping, and serialization.
//!
//! A trace is UTF-8 text with one record per line:
//!
//! ```text
//! [@<time> ]<name>[ <key>=<value>]...[ => <retval>]
//! ```
//!
//! Tokens are separated by one or more spaces or tabs. The optional `@<time>`
//! prefix carries an explicit timestamp in abstract time units; lines without
//! it are stamped with their zero-based position in the trace, which models a
//! stream where one record arrives per time unit.

use thiserror::Error;

/// One parsed system call: a name, ordered `key=value` arguments, and an
/// optional return value.
///
/// All fields are opaque tokens. Argument values are never compared
/// numerically anywhere in this crate; correlation (e.g. matching a returned
/// file descriptor against a later argument) is plain string equality.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SyscallEvent {
    pub name: String,
    pub args: Vec<(String, String)>,
    pub retval: Option<String>,
}

impl SyscallEvent {
    pub fn new(name: impl Into<String>) -> Self {
        SyscallEvent {
            name: name.into(),
            args: Vec::new(),
            retval: None,
        }
    }

    pub fn with_arg(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.args.push((key.into(), value.into()));
        self
    }

    pub fn with_retval(mut self, retval: impl Into<String>) -> Self {
        self.retval = Some(retval.into());
        self
    }

    /// Value of the first argument named `key`, if present.
    pub fn arg(&self, key: &str) -> Option<&str> {
        self.args
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    /// Checks the structural invariants a serializable event must satisfy:
    /// non-empty name free of whitespace, `=` and a leading `@`; unique,
    /// non-empty argument keys free of whitespace and `=`; whitespace-free
    /// values; a non-empty, whitespace-free return value when present.
    pub fn validate(&self) -> Result<(), InvalidEvent> {
        let bad_token = |s: &str| s.chars().any(char::is_whitespace);
        if self.name.is_empty()
            || bad_token(&self.name)
            || self.name.contains('=')
            || self.name.starts_with('@')
        {
            return Err(InvalidEvent::Name(self.name.clone()));
        }
        for (i, (key, value)) in self.args.iter().enumerate() {
            if key.is_empty() || bad_token(key) || key.contains('=') {
                return Err(InvalidEvent::ArgKey(key.clone()));
            }
            if self.args[..i].iter().any(|(k, _)| k == key) {
                return Err(InvalidEvent::DuplicateArgKey(key.clone()));
            }
            if bad_token(value) {
                return Err(InvalidEvent::ArgValue(value.clone()));
            }
        }
        if let Some(rv) = &self.retval {
            if rv.is_empty() || bad_token(rv) {
                return Err(InvalidEvent::Retval(rv.clone()));
            }
        }
        Ok(())
    }
}

/// One timestamped stream item.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Record {
    /// Non-negative event time in abstract units. Within a trace, times are
    /// non-decreasing.
    pub time: u64,
    pub event: SyscallEvent,
}

impl Record {
    pub fn new(time: u64, event: SyscallEvent) -> Self {
        Record { time, event }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidEvent {
    #[error("invalid syscall name {0:?}")]
    Name(String),
    #[error("invalid argument key {0:?}")]
    ArgKey(String),
    #[error("duplicate argument key {0:?}")]
    DuplicateArgKey(String),
    #[error("invalid argument value {0:?}")]
    ArgValue(String),
    #[error("invalid return value {0:?}")]
    Retval(String),
}

/// Why a single trace line failed to parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseReason {
    /// The line has no syscall name (empty, or only a timestamp prefix).
    MissingName,
    /// The first token contains `=`, so it cannot be a syscall name.
    BadName(String),
    /// A `@...` prefix that is not a non-negative integer.
    BadTimestamp(String),
    /// An argument token with no `=` separator or an empty key.
    MalformedArg(String),
    /// The same argument key appears twice.
    DuplicateArgKey(String),
    /// `=>` with no token after it.
    MissingRetval,
    /// A stray token after the return value.
    TrailingToken(String),
}

impl std::fmt::Display for ParseReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ParseReason::MissingName => write!(f, "missing syscall name"),
            ParseReason::BadName(t) => write!(f, "syscall name {t:?} contains '='"),
            ParseReason::BadTimestamp(t) => write!(f, "bad timestamp prefix {t:?}"),
            ParseReason::MalformedArg(t) => write!(f, "argument {t:?} has no key=value form"),
            ParseReason::DuplicateArgKey(k) => write!(f, "duplicate argument key {k:?}"),
            ParseReason::MissingRetval => write!(f, "'=>' with no return value after it"),
            ParseReason::TrailingToken(t) => write!(f, "unexpected token {t:?} after return value"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot parse trace line {line:?}: {reason}")]
pub struct ParseError {
    pub line: String,
    pub reason: ParseReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("line {line_no}: {source}")]
    Line {
        line_no: usize,
        #[source]
        source: ParseError,
    },
    #[error("line {line_no}: timestamp {time} decreases below preceding time {prev}")]
    DecreasingTime {
        line_no: usize,
        time: u64,
        prev: u64,
    },
}

/// Parses one trace line into an optional explicit timestamp and an event.
pub fn parse_line(line: &str) -> Result<(Option<u64>, SyscallEvent), ParseError> {
    let err = |reason| ParseError {
        line: line.trim().to_string(),
        reason,
    };
    let mut tokens = line.split_whitespace().peekable();

    let mut time = None;
    if let Some(tok) = tokens.peek() {
        if let Some(raw) = tok.strip_prefix('@') {
            time = Some(
                raw.parse::<u64>()
                    .map_err(|_| err(ParseReason::BadTimestamp(tok.to_string())))?,
            );
            tokens.next();
        }
    }

    let name = tokens.next().ok_or_else(|| err(ParseReason::MissingName))?;
    if name.contains('=') {
        return Err(err(ParseReason::BadName(name.to_string())));
    }

    let mut args = Vec::new();
    let mut retval = None;
    while let Some(tok) = tokens.next() {
        if tok == "=>" {
            let value = tokens
                .next()
                .ok_or_else(|| err(ParseReason::MissingRetval))?;
            if let Some(extra) = tokens.next() {
                return Err(err(ParseReason::TrailingToken(extra.to_string())));
            }
            retval = Some(value.to_string());
            break;
        }
        let (key, value) = tok
            .split_once('=')
            .filter(|(k, _)| !k.is_empty())
            .ok_or_else(|| err(ParseReason::MalformedArg(tok.to_string())))?;
        if args.iter().any(|(k, _): &(String, String)| k == key) {
            return Err(err(ParseReason::DuplicateArgKey(key.to_string())));
        }
        args.push((key.to_string(), value.to_string()));
    }

    Ok((
        time,
        SyscallEvent {
            name: name.to_string(),
            args,
            retval,
        },
    ))
}

/// Parses a sequence of lines into timestamped records.
///
/// Blank lines are skipped. A record without an explicit `@time` prefix is
/// stamped with its zero-based position among the parsed records, so a trace
/// with no prefixes gets times `0, 1, 2, ...`. Resulting times must be
/// non-decreasing; ties are allowed.
pub fn parse_trace<'a, I>(lines: I) -> Result<Vec<Record>, TraceError>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut records: Vec<Record> = Vec::new();
    for (idx, line) in lines.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let (explicit, event) =
            parse_line(line).map_err(|source| TraceError::Line { line_no, source })?;
        let time = explicit.unwrap_or(records.len() as u64);
        if let Some(prev) = records.last().map(|r| r.time) {
            if time < prev {
                return Err(TraceError::DecreasingTime {
                    line_no,
                    time,
                    prev,
                });
            }
        }
        records.push(Record { time, event });
    }
    Ok(records)
}

/// Parses a whole trace file's contents.
pub fn parse_trace_str(text: &str) -> Result<Vec<Record>, TraceError> {
    parse_trace(text.lines())
}

/// Renders one record as a trace line. With `with_time` set the line gets an
/// explicit `@<time>` prefix. Field order is preserved, so
/// `parse_line(serialize_record(r, ..))` reproduces `r` exactly.
pub fn serialize_record(record: &Record, with_time: bool) -> String {
    debug_assert!(record.event.validate().is_ok());
    let mut out = String::new();
    if with_time {
        out.push('@');
        out.push_str(&record.time.to_string());
        out.push(' ');
    }
    out.push_str(&record.event.name);
    for (key, value) in &record.event.args {
        out.push(' ');
        out.push_str(key);
        out.push('=');
        out.push_str(value);
    }
    if let Some(rv) = &record.event.retval {
        out.push_str(" => ");
        out.push_str(rv);
    }
    out
}

/// Renders records as a LF-terminated trace file body.
pub fn write_trace(records: &[Record], with_time: bool) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serialize_record(record, with_time));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn event(name: &str) -> SyscallEvent {
        SyscallEvent::new(name)
    }

    #[test]
    fn parses_call_with_arg_and_retval() {
        let (time, ev) = parse_line("accept fd=5 => 6").unwrap();
        assert_eq!(time, None);
        assert_eq!(ev, event("accept").with_arg("fd", "5").with_retval("6"));
    }

    #[test]
    fn parses_bare_call() {
        let (time, ev) = parse_line("brk").unwrap();
        assert_eq!(time, None);
        assert_eq!(ev, event("brk"));
    }

    #[test]
    fn parses_timestamp_prefix() {
        let (time, ev) = parse_line("@42 dup fd=6 => 2").unwrap();
        assert_eq!(time, Some(42));
        assert_eq!(ev, event("dup").with_arg("fd", "6").with_retval("2"));
    }

    #[test]
    fn treats_tabs_and_runs_of_spaces_as_separators() {
        let (time, ev) = parse_line("\t@7   dup\tfd=6  =>\t2 ").unwrap();
        assert_eq!(time, Some(7));
        assert_eq!(ev, event("dup").with_arg("fd", "6").with_retval("2"));
    }

    #[test]
    fn rejects_malformed_lines() {
        let reason = |line: &str| parse_line(line).unwrap_err().reason;
        assert_eq!(reason("open fd"), ParseReason::MalformedArg("fd".into()));
        assert_eq!(reason("open =5"), ParseReason::MalformedArg("=5".into()));
        assert_eq!(reason("accept fd=5 =>"), ParseReason::MissingRetval);
        assert_eq!(reason(""), ParseReason::MissingName);
        assert_eq!(reason("   "), ParseReason::MissingName);
        assert_eq!(reason("@42"), ParseReason::MissingName);
        assert_eq!(reason("@x dup"), ParseReason::BadTimestamp("@x".into()));
        assert_eq!(
            reason("dup fd=1 fd=2"),
            ParseReason::DuplicateArgKey("fd".into())
        );
        assert_eq!(reason("a=b c=d"), ParseReason::BadName("a=b".into()));
        assert_eq!(
            reason("accept fd=5 => 6 7"),
            ParseReason::TrailingToken("7".into())
        );
    }

    #[test]
    fn error_names_line_content() {
        let err = parse_line("open fd").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("open fd"), "{msg}");
        assert!(msg.contains("key=value"), "{msg}");
    }

    #[test]
    fn implicit_times_are_line_positions() {
        let records = parse_trace_str("brk\nopen path=/etc/hosts\nclose fd=3\n").unwrap();
        assert_eq!(
            records.iter().map(|r| r.time).collect::<Vec<_>>(),
            vec![0, 1, 2]
        );
    }

    #[test]
    fn empty_input_gives_empty_trace() {
        assert_eq!(parse_trace_str("").unwrap(), vec![]);
        assert_eq!(parse_trace_str("\n\n").unwrap(), vec![]);
    }

    #[test]
    fn explicit_ties_are_accepted() {
        let records = parse_trace_str("@0 brk\n@5 brk\n@5 brk\n").unwrap();
        assert_eq!(
            records.iter().map(|r| r.time).collect::<Vec<_>>(),
            vec![0, 5, 5]
        );
    }

    #[test]
    fn decreasing_times_are_rejected_with_line_number() {
        let err = parse_trace_str("@5 brk\n@3 brk\n").unwrap_err();
        assert_eq!(
            err,
            TraceError::DecreasingTime {
                line_no: 2,
                time: 3,
                prev: 5
            }
        );
        // An implicit time can also fall below an earlier explicit one.
        let err = parse_trace_str("@10 brk\nbrk\n").unwrap_err();
        assert!(matches!(err, TraceError::DecreasingTime { line_no: 2, .. }));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let err = parse_trace_str("brk\nopen fd\n").unwrap_err();
        assert!(matches!(err, TraceError::Line { line_no: 2, .. }));
    }

    #[test]
    fn serializes_spec_shapes() {
        let r = Record::new(0, event("accept").with_arg("fd", "5").with_retval("6"));
        assert_eq!(serialize_record(&r, false), "accept fd=5 => 6");
        let r = Record::new(3, event("brk"));
        assert_eq!(serialize_record(&r, false), "brk");
        let r = Record::new(42, event("dup").with_arg("fd", "6").with_retval("2"));
        assert_eq!(serialize_record(&r, true), "@42 dup fd=6 => 2");
    }

    #[test]
    fn write_trace_is_lf_terminated() {
        let records = vec![Record::new(0, event("brk")), Record::new(1, event("brk"))];
        assert_eq!(write_trace(&records, true), "@0 brk\n@1 brk\n");
        assert_eq!(write_trace(&[], true), "");
    }

    #[test]
    fn validate_catches_bad_events() {
        assert!(event("").validate().is_err());
        assert!(event("a b").validate().is_err());
        assert!(event("a=b").validate().is_err());
        assert!(event("@t").validate().is_err());
        assert!(event("ok").with_arg("", "v").validate().is_err());
        assert!(event("ok").with_arg("k", "v w").validate().is_err());
        assert!(event("ok")
            .with_arg("k", "1")
            .with_arg("k", "2")
            .validate()
            .is_err());
        assert!(event("ok").with_retval("").validate().is_err());
        assert!(event("ok").with_arg("k", "").validate().is_ok());
    }

    fn arb_event() -> impl Strategy<Value = SyscallEvent> {
        let name = "[a-z_][a-z0-9_]{0,11}";
        let key = "[a-z][a-z0-9_]{0,7}";
        let value = "[a-zA-Z0-9_/.:=>-]{0,8}";
        let retval = "[a-zA-Z0-9_/.:=>-]{1,8}";
        (
            name.prop_map(String::from),
            proptest::collection::vec(
                (key.prop_map(String::from), value.prop_map(String::from)),
                0..5,
            ),
            proptest::option::of(retval.prop_map(String::from)),
        )
            .prop_map(|(name, mut args, retval)| {
                let mut seen = std::collections::HashSet::new();
                args.retain(|(k, _)| seen.insert(k.clone()));
                SyscallEvent { name, args, retval }
            })
    }

    proptest! {
        #[test]
        fn round_trip_preserves_records(time in 0u64..1_000_000, ev in arb_event()) {
            prop_assert!(ev.validate().is_ok());
            let record = Record::new(time, ev);

            let line = serialize_record(&record, true);
            let (parsed_time, parsed_ev) = parse_line(&line).unwrap();
            prop_assert_eq!(parsed_time, Some(record.time));
            prop_assert_eq!(&parsed_ev, &record.event);

            let line = serialize_record(&record, false);
            let (parsed_time, parsed_ev) = parse_line(&line).unwrap();
            prop_assert_eq!(parsed_time, None);
            prop_assert_eq!(&parsed_ev, &record.event);
        }

        #[test]
        fn untimed_traces_count_records(n in 0usize..50) {
            let records: Vec<Record> = (0..n)
                .map(|i| Record::new(i as u64, SyscallEvent::new("brk")))
                .collect();
            let text = write_trace(&records, false);
            let parsed = parse_trace_str(&text).unwrap();
            prop_assert_eq!(parsed, records);
        }
    }
}
