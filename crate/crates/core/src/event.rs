//! Append-only event log and its line-delimited text form.
//!
//! One event per line, `seq time kind key=value...`, fields separated by a
//! single space and the line terminated by `\n`. Payload pairs keep the order
//! in which they were recorded. Values are percent-escaped so they never
//! contain spaces, `=`, `%`, or control bytes.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    JobSubmitted,
    JobStarted,
    JobEnded,
    NodeRequested,
    NodeProvisioning,
    NodeActive,
    NodeAllocated,
    NodeIdle,
    NodeDraining,
    NodeTerminating,
    NodeTerminated,
    NodeFailed,
    ProviderRetry,
    ImageUnpinned,
    ReconcileRan,
}

impl EventKind {
    pub const ALL: [EventKind; 15] = [
        EventKind::JobSubmitted,
        EventKind::JobStarted,
        EventKind::JobEnded,
        EventKind::NodeRequested,
        EventKind::NodeProvisioning,
        EventKind::NodeActive,
        EventKind::NodeAllocated,
        EventKind::NodeIdle,
        EventKind::NodeDraining,
        EventKind::NodeTerminating,
        EventKind::NodeTerminated,
        EventKind::NodeFailed,
        EventKind::ProviderRetry,
        EventKind::ImageUnpinned,
        EventKind::ReconcileRan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EventKind::JobSubmitted => "JobSubmitted",
            EventKind::JobStarted => "JobStarted",
            EventKind::JobEnded => "JobEnded",
            EventKind::NodeRequested => "NodeRequested",
            EventKind::NodeProvisioning => "NodeProvisioning",
            EventKind::NodeActive => "NodeActive",
            EventKind::NodeAllocated => "NodeAllocated",
            EventKind::NodeIdle => "NodeIdle",
            EventKind::NodeDraining => "NodeDraining",
            EventKind::NodeTerminating => "NodeTerminating",
            EventKind::NodeTerminated => "NodeTerminated",
            EventKind::NodeFailed => "NodeFailed",
            EventKind::ProviderRetry => "ProviderRetry",
            EventKind::ImageUnpinned => "ImageUnpinned",
            EventKind::ReconcileRan => "ReconcileRan",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        EventKind::ALL.iter().copied().find(|k| k.name() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub seq: u64,
    pub time: Timestamp,
    pub kind: EventKind,
    pub payload: Vec<(String, String)>,
}

impl Event {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.payload.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render_line(&self, out: &mut String) {
        use fmt::Write;
        let _ = write!(out, "{} {} {}", self.seq, self.time, self.kind);
        for (k, v) in &self.payload {
            out.push(' ');
            out.push_str(k);
            out.push('=');
            escape_into(v, out);
        }
        out.push('\n');
    }
}

fn needs_escape(b: u8) -> bool {
    b <= b' ' || b == b'%' || b == b'=' || b == 0x7f
}

fn escape_into(value: &str, out: &mut String) {
    for ch in value.chars() {
        if ch.is_ascii() && needs_escape(ch as u8) {
            out.push_str(&format!("%{:02X}", ch as u8));
        } else {
            out.push(ch);
        }
    }
}

fn unescape(raw: &str) -> Option<String> {
    let bytes = raw.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' => {
                let hex = raw.get(i + 1..i + 3)?;
                let b = u8::from_str_radix(hex, 16).ok()?;
                if !needs_escape(b) || !hex.bytes().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_lowercase()) {
                    return None;
                }
                out.push(b);
                i += 3;
            }
            b if needs_escape(b) => return None,
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8(out).ok()
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("event log line {line}: {reason}")]
pub struct LogParseError {
    pub line: usize,
    pub reason: String,
}

/// Ordered, gap-free sequence of events. `seq` starts at 1.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn last_time(&self) -> Option<Timestamp> {
        self.events.last().map(|e| e.time)
    }

    /// Appends an event stamped `time`.
    ///
    /// Panics if `time` precedes the last recorded event or a payload key is
    /// not `[a-z0-9_]+`; both are programming errors in the caller.
    pub fn append<K, V>(&mut self, time: Timestamp, kind: EventKind, payload: impl IntoIterator<Item = (K, V)>) -> u64
    where
        K: Into<String>,
        V: Into<String>,
    {
        if let Some(last) = self.last_time() {
            assert!(time >= last, "event time went backwards: {time} < {last}");
        }
        let payload: Vec<(String, String)> = payload.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        assert!(payload.iter().all(|(k, _)| valid_key(k)), "invalid payload key in {payload:?}");
        let seq = self.events.len() as u64 + 1;
        self.events.push(Event { seq, time, kind, payload });
        seq
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            e.render_line(&mut out);
        }
        out
    }

    /// Parses a rendered log. Blank lines are skipped; anything else that is
    /// not a well-formed event, or that breaks seq/time ordering, is an error.
    pub fn parse(text: &str) -> Result<EventLog, LogParseError> {
        let mut log = EventLog::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.is_empty() {
                continue;
            }
            let err = |reason: &str| LogParseError { line: lineno, reason: reason.to_string() };
            let mut fields = line.split(' ');
            let seq: u64 = parse_uint(fields.next()).ok_or_else(|| err("bad seq"))?;
            let time = Timestamp(parse_uint(fields.next()).ok_or_else(|| err("bad time"))?);
            let kind: EventKind =
                fields.next().and_then(|k| k.parse().ok()).ok_or_else(|| err("unknown event kind"))?;
            let mut payload = Vec::new();
            for field in fields {
                let (k, v) = field.split_once('=').ok_or_else(|| err("payload field without '='"))?;
                if !valid_key(k) {
                    return Err(err("invalid payload key"));
                }
                let v = unescape(v).ok_or_else(|| err("invalid escape in payload value"))?;
                payload.push((k.to_string(), v));
            }
            if seq != log.events.len() as u64 + 1 {
                return Err(err("seq is not the successor of the previous event"));
            }
            if log.last_time().is_some_and(|last| time < last) {
                return Err(err("time decreases"));
            }
            log.events.push(Event { seq, time, kind, payload });
        }
        Ok(log)
    }
}

fn parse_uint(field: Option<&str>) -> Option<u64> {
    let f = field?;
    if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) || (f.len() > 1 && f.starts_with('0')) {
        return None;
    }
    f.parse().ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EventLog {
        let mut log = EventLog::new();
        log.append(Timestamp(0), EventKind::JobSubmitted, [("job", "j1"), ("nodes", "4")]);
        log.append(Timestamp(0), EventKind::NodeRequested, [("node", "n1")]);
        log.append(
            Timestamp(30_000),
            EventKind::ReconcileRan,
            [("reason", "pending need 4 = 2 + 2"), ("note", "100% ünïcode=ok")],
        );
        log
    }

    #[test]
    fn render_is_stable() {
        let text = sample().render();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("1 0 JobSubmitted job=j1 nodes=4"));
        assert_eq!(lines.next(), Some("2 0 NodeRequested node=n1"));
        assert_eq!(
            lines.next(),
            Some("3 30000 ReconcileRan reason=pending%20need%204%20%3D%202%20+%202 note=100%25%20ünïcode%3Dok")
        );
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn parse_round_trip() {
        let log = sample();
        assert_eq!(EventLog::parse(&log.render()).unwrap(), log);
    }

    #[test]
    fn parse_rejects_gaps_and_time_travel() {
        assert_eq!(EventLog::parse("1 0 JobSubmitted\n3 0 JobStarted\n").unwrap_err().line, 2);
        assert_eq!(EventLog::parse("1 10 JobSubmitted\n2 5 JobStarted\n").unwrap_err().line, 2);
        assert!(EventLog::parse("1 0 Bogus\n").is_err());
        assert!(EventLog::parse("1 0 JobSubmitted job\n").is_err());
        assert!(EventLog::parse("1 0 JobSubmitted job=%zz\n").is_err());
        assert!(EventLog::parse("01 0 JobSubmitted\n").is_err());
    }

    #[test]
    #[should_panic(expected = "backwards")]
    fn append_refuses_time_travel() {
        let mut log = EventLog::new();
        log.append(Timestamp(10), EventKind::ReconcileRan, Vec::<(String, String)>::new());
        log.append(Timestamp(9), EventKind::ReconcileRan, Vec::<(String, String)>::new());
    }
}
