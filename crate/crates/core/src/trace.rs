//! Structured execution traces: the canonical line format, parsing, validation
//! and the external extractor hook.
//!
//! A trace file is UTF-8 JSON lines. The first record is a header carrying the
//! run and question ids; every following line is one [`TraceEvent`].

use std::collections::{HashMap, HashSet};
use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_FORMAT: &str = "trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Action,
    Artifact,
    Validator,
    Note,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpType {
    Search,
    Parse,
    Compute,
    Verify,
    Other,
}

impl OpType {
    pub fn as_str(self) -> &'static str {
        match self {
            OpType::Search => "search",
            OpType::Parse => "parse",
            OpType::Compute => "compute",
            OpType::Verify => "verify",
            OpType::Other => "other",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Fail,
    Retry,
}

/// Scalar-or-string payload attached to an event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EventValue {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceEvent {
    pub event_id: String,
    pub run_id: String,
    pub timestamp: u64,
    pub kind: EventKind,
    #[serde(default)]
    pub tool: Option<String>,
    #[serde(default)]
    pub op_type: Option<OpType>,
    #[serde(default)]
    pub params_digest: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub value: Option<EventValue>,
    #[serde(default)]
    pub unit: Option<String>,
    #[serde(default)]
    pub inputs: Vec<String>,
    pub status: Status,
    #[serde(default)]
    pub branch_id: String,
    /// Explicit answer labels asserted by the extractor for this event.
    #[serde(default)]
    pub answer_support: Vec<String>,
}

impl TraceEvent {
    fn schema_problem(&self) -> Option<String> {
        if self.event_id.is_empty() {
            return Some("empty event_id".into());
        }
        match self.kind {
            EventKind::Artifact if self.tool.is_some() => Some("artifact events carry no tool".into()),
            EventKind::Action if self.op_type.is_none() => Some("action events require op_type".into()),
            EventKind::Action if self.tool.is_none() => Some("action events require tool".into()),
            _ => {
                if let Some(EventValue::Number(x)) = &self.value {
                    if !x.is_finite() {
                        return Some("non-finite value".into());
                    }
                }
                None
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceHeader {
    format: String,
    version: u32,
    run_id: String,
    question_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub run_id: String,
    pub question_id: String,
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed record at line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("duplicate event id `{event_id}` at line {line}")]
    DuplicateEventId { event_id: String, line: usize },
    #[error("event `{event_id}` consumes unknown event `{input}`")]
    DanglingInputRef { event_id: String, input: String },
    #[error("extractor failed: {0}")]
    Extractor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Admission problems found by [`validate_trace`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    /// `event_id` consumes `input`, which is not strictly earlier.
    TemporalOrder {
        event_id: String,
        input: String,
    },
    DanglingRef {
        event_id: String,
        input: String,
    },
    DuplicateId {
        event_id: String,
    },
}

impl Trace {
    pub fn new(run_id: impl Into<String>, question_id: impl Into<String>, mut events: Vec<TraceEvent>) -> Self {
        sort_events(&mut events);
        Self {
            run_id: run_id.into(),
            question_id: question_id.into(),
            events,
        }
    }

    pub fn event(&self, id: &str) -> Option<&TraceEvent> {
        self.events.iter().find(|e| e.event_id == id)
    }

    pub fn index(&self) -> HashMap<&str, &TraceEvent> {
        self.events.iter().map(|e| (e.event_id.as_str(), e)).collect()
    }

    /// Canonical byte form: header line then one line per event, fixed field
    /// order, no insignificant whitespace, trailing newline.
    pub fn to_canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let header = TraceHeader {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            run_id: self.run_id.clone(),
            question_id: self.question_id.clone(),
        };
        serde_json::to_writer(&mut out, &header).expect("header serializes");
        out.push(b'\n');
        for e in &self.events {
            serde_json::to_writer(&mut out, e).expect("event serializes");
            out.push(b'\n');
        }
        out
    }
}

fn sort_events(events: &mut [TraceEvent]) {
    events.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.event_id.cmp(&b.event_id)));
}

/// Parses a trace file. Any malformed line rejects the whole file.
pub fn parse_trace_file(bytes: &[u8]) -> Result<Trace, TraceError> {
    let text = std::str::from_utf8(bytes).map_err(|e| TraceError::MalformedRecord {
        line: 1,
        message: format!("invalid utf-8: {e}"),
    })?;

    let mut header: Option<TraceHeader> = None;
    let mut events = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if header.is_none() {
            let h: TraceHeader = serde_json::from_str(raw).map_err(|e| TraceError::MalformedRecord {
                line,
                message: format!("expected trace header: {e}"),
            })?;
            if h.format != TRACE_FORMAT || h.version != TRACE_VERSION {
                return Err(TraceError::MalformedRecord {
                    line,
                    message: format!("unsupported trace format {}/{}", h.format, h.version),
                });
            }
            if h.question_id.is_empty() {
                return Err(TraceError::MalformedRecord {
                    line,
                    message: "empty question_id".into(),
                });
            }
            header = Some(h);
            continue;
        }
        let ev: TraceEvent = serde_json::from_str(raw).map_err(|e| TraceError::MalformedRecord {
            line,
            message: e.to_string(),
        })?;
        if let Some(message) = ev.schema_problem() {
            return Err(TraceError::MalformedRecord { line, message });
        }
        if seen.insert(ev.event_id.clone(), line).is_some() {
            return Err(TraceError::DuplicateEventId {
                event_id: ev.event_id,
                line,
            });
        }
        events.push(ev);
    }

    let header = header.ok_or_else(|| TraceError::MalformedRecord {
        line: 1,
        message: "missing trace header (question_id is empty)".into(),
    })?;

    for ev in &events {
        for input in &ev.inputs {
            if !seen.contains_key(input) {
                return Err(TraceError::DanglingInputRef {
                    event_id: ev.event_id.clone(),
                    input: input.clone(),
                });
            }
        }
    }

    Ok(Trace::new(header.run_id, header.question_id, events))
}

/// Lists every admission problem in the trace. Empty iff the trace can be
/// handed to the graph builders.
pub fn validate_trace(trace: &Trace) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut ids: HashSet<&str> = HashSet::new();
    for e in &trace.events {
        if !ids.insert(e.event_id.as_str()) {
            out.push(Violation::DuplicateId {
                event_id: e.event_id.clone(),
            });
        }
    }
    let first: HashMap<&str, &TraceEvent> = trace.events.iter().rev().map(|e| (e.event_id.as_str(), e)).collect();
    for e in &trace.events {
        for input in &e.inputs {
            match first.get(input.as_str()) {
                None => out.push(Violation::DanglingRef {
                    event_id: e.event_id.clone(),
                    input: input.clone(),
                }),
                Some(src) if src.timestamp >= e.timestamp => out.push(Violation::TemporalOrder {
                    event_id: e.event_id.clone(),
                    input: input.clone(),
                }),
                Some(_) => {}
            }
        }
    }
    out
}

/// Runs an external extractor: the raw log goes to its stdin and its stdout
/// must be a trace file.
pub fn run_extractor(program: &str, args: &[String], raw_log: &[u8]) -> Result<Trace, TraceError> {
    let mut child = Command::new(program)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()?;
    {
        let mut stdin = child.stdin.take().expect("piped stdin");
        stdin.write_all(raw_log)?;
    }
    let output = child.wait_with_output()?;
    if !output.status.success() {
        return Err(TraceError::Extractor(format!(
            "{program} exited with {}: {}",
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    parse_trace_file(&output.stdout)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn event(id: &str, ts: u64, kind: EventKind) -> TraceEvent {
        TraceEvent {
            event_id: id.into(),
            run_id: "r".into(),
            timestamp: ts,
            kind,
            tool: matches!(kind, EventKind::Action).then(|| "tool".to_string()),
            op_type: matches!(kind, EventKind::Action | EventKind::Validator).then_some(OpType::Compute),
            params_digest: String::new(),
            text: String::new(),
            value: None,
            unit: None,
            inputs: vec![],
            status: Status::Ok,
            branch_id: "main".into(),
            answer_support: vec![],
        }
    }

    const HEADER: &str = r#"{"format":"trace","version":1,"run_id":"r","question_id":"q"}"#;

    #[test]
    fn empty_file_is_rejected() {
        match parse_trace_file(b"") {
            Err(TraceError::MalformedRecord { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_action() {
        let src = format!(
            "{HEADER}\n{}\n",
            r#"{"event_id":"e1","run_id":"r","timestamp":0,"kind":"action","tool":"python","op_type":"compute","status":"ok"}"#
        );
        let t = parse_trace_file(src.as_bytes()).unwrap();
        assert_eq!(t.events.len(), 1);
        assert_eq!(t.question_id, "q");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let src = format!("{HEADER}\n{{\"event_id\":\"e1\"\n");
        match parse_trace_file(src.as_bytes()) {
            Err(TraceError::MalformedRecord { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn artifact_with_tool_is_schema_violation() {
        let src = format!(
            "{HEADER}\n{}\n",
            r#"{"event_id":"a","run_id":"r","timestamp":0,"kind":"artifact","tool":"x","status":"ok"}"#
        );
        assert!(matches!(
            parse_trace_file(src.as_bytes()),
            Err(TraceError::MalformedRecord { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_and_dangling_rejected_at_parse() {
        let dup = format!(
            "{HEADER}\n{a}\n{a}\n",
            a = r#"{"event_id":"a","run_id":"r","timestamp":0,"kind":"note","status":"ok"}"#
        );
        assert!(matches!(
            parse_trace_file(dup.as_bytes()),
            Err(TraceError::DuplicateEventId { line: 3, .. })
        ));
        let dangling = format!(
            "{HEADER}\n{}\n",
            r#"{"event_id":"a","run_id":"r","timestamp":0,"kind":"note","inputs":["zz"],"status":"ok"}"#
        );
        assert!(matches!(
            parse_trace_file(dangling.as_bytes()),
            Err(TraceError::DanglingInputRef { .. })
        ));
    }

    #[test]
    fn events_sorted_by_timestamp_then_id() {
        let t = Trace::new(
            "r",
            "q",
            vec![
                event("b", 2, EventKind::Note),
                event("z", 1, EventKind::Note),
                event("a", 2, EventKind::Note),
            ],
        );
        let ids: Vec<_> = t.events.iter().map(|e| e.event_id.as_str()).collect();
        assert_eq!(ids, ["z", "a", "b"]);
    }

    #[test]
    fn later_input_is_temporal_violation() {
        let mut consumer = event("act", 1, EventKind::Action);
        consumer.inputs = vec!["art".into()];
        let t = Trace::new("r", "q", vec![consumer, event("art", 5, EventKind::Artifact)]);
        assert_eq!(
            validate_trace(&t),
            vec![Violation::TemporalOrder {
                event_id: "act".into(),
                input: "art".into()
            }]
        );
    }

    #[test]
    fn valid_trace_has_no_violations() {
        let mut act = event("act", 2, EventKind::Action);
        act.inputs = vec!["art".into()];
        let t = Trace::new("r", "q", vec![act, event("art", 1, EventKind::Artifact)]);
        assert!(validate_trace(&t).is_empty());
    }

    #[test]
    fn canonical_round_trip() {
        let mut a = event("a", 1, EventKind::Artifact);
        a.value = Some(EventValue::Number(5000.0));
        a.unit = Some("acre".into());
        let t = Trace::new("r", "q", vec![a, event("n", 2, EventKind::Note)]);
        let bytes = t.to_canonical_bytes();
        let back = parse_trace_file(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_canonical_bytes(), bytes);
    }
}
