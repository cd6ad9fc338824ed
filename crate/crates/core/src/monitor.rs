//! The measurement runtime: lazy region registration, runtime filtering and
//! an event trace of region enters and exits.

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::filter::{classify, FilterRuleSet};
use crate::ir::{quote, RegionDescriptor, RegionId};

/// Runtime identifier of a registered region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionHandle(pub u32);

impl RegionHandle {
    /// Not registered yet.
    pub const INVALID: RegionHandle = RegionHandle(0);
    /// Registered but excluded by the runtime filter; enter and exit are no-ops.
    pub const FILTERED: RegionHandle = RegionHandle(1);
    pub const FIRST_VALID: u32 = 2;

    pub fn is_valid(self) -> bool {
        self.0 >= Self::FIRST_VALID
    }
}

impl fmt::Display for RegionHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Timestamps are VM ticks.
pub type Timestamp = u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Definition {
        handle: RegionHandle,
        name: String,
        canonical_name: String,
        file: String,
        begin_lno: u32,
        end_lno: u32,
    },
    Enter {
        ts: Timestamp,
        handle: RegionHandle,
    },
    Exit {
        ts: Timestamp,
        handle: RegionHandle,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MonitorError {
    #[error("event for an unregistered region handle")]
    InvalidHandle,
    #[error("handle {0} was never issued")]
    UnknownHandle(RegionHandle),
    #[error("exit of {found} while {} is innermost", .expected.map_or("nothing".to_string(), |h| h.to_string()))]
    ExitMismatch { expected: Option<RegionHandle>, found: RegionHandle },
    #[error("{0} region(s) still open at the end of the run")]
    Unbalanced(usize),
}

/// Maps region ids to handles, consulting the runtime filter once per region.
#[derive(Debug, Clone)]
pub struct RegionRegistry {
    rules: FilterRuleSet,
    by_region: HashMap<RegionId, RegionHandle>,
    next: u32,
}

impl Default for RegionRegistry {
    fn default() -> Self {
        RegionRegistry::new(FilterRuleSet::default())
    }
}

impl RegionRegistry {
    pub fn new(rules: FilterRuleSet) -> Self {
        RegionRegistry { rules, by_region: HashMap::new(), next: RegionHandle::FIRST_VALID }
    }

    /// Returns the handle for `d` and whether this call created it.
    pub fn register(&mut self, d: &RegionDescriptor) -> (RegionHandle, bool) {
        if let Some(&h) = self.by_region.get(&d.region_id) {
            return (h, false);
        }
        let handle = if classify(&self.rules, &d.canonical_name, &d.name, &d.file).is_filtered() {
            RegionHandle::FILTERED
        } else {
            self.next += 1;
            RegionHandle(self.next - 1)
        };
        self.by_region.insert(d.region_id, handle);
        (handle, true)
    }

    pub fn lookup(&self, id: RegionId) -> RegionHandle {
        self.by_region.get(&id).copied().unwrap_or(RegionHandle::INVALID)
    }

    /// Number of valid handles issued so far.
    pub fn issued(&self) -> usize {
        (self.next - RegionHandle::FIRST_VALID) as usize
    }
}

#[derive(Debug, Clone, Default)]
pub struct Monitor {
    registry: RegionRegistry,
    events: Vec<TraceEvent>,
    stack: Vec<RegionHandle>,
}

impl Monitor {
    pub fn new(runtime_rules: FilterRuleSet) -> Self {
        Monitor { registry: RegionRegistry::new(runtime_rules), events: Vec::new(), stack: Vec::new() }
    }

    /// Registers a region. Repeated calls return the first handle and emit
    /// nothing new.
    pub fn register(&mut self, d: &RegionDescriptor) -> RegionHandle {
        let (handle, created) = self.registry.register(d);
        if created && handle.is_valid() {
            self.events.push(TraceEvent::Definition {
                handle,
                name: d.name.clone(),
                canonical_name: d.canonical_name.clone(),
                file: d.file.clone(),
                begin_lno: d.begin_lno,
                end_lno: d.end_lno,
            });
        }
        handle
    }

    pub fn registry(&self) -> &RegionRegistry {
        &self.registry
    }

    fn check(&self, handle: RegionHandle) -> Result<(), MonitorError> {
        if handle == RegionHandle::INVALID {
            Err(MonitorError::InvalidHandle)
        } else if handle.0 >= self.registry.next {
            Err(MonitorError::UnknownHandle(handle))
        } else {
            Ok(())
        }
    }

    /// Records an enter event. Returns false for filtered regions.
    pub fn on_enter(&mut self, handle: RegionHandle, ts: Timestamp) -> Result<bool, MonitorError> {
        self.check(handle)?;
        if handle == RegionHandle::FILTERED {
            return Ok(false);
        }
        self.stack.push(handle);
        self.events.push(TraceEvent::Enter { ts, handle });
        Ok(true)
    }

    /// Records an exit event. Returns false for filtered regions.
    pub fn on_exit(&mut self, handle: RegionHandle, ts: Timestamp) -> Result<bool, MonitorError> {
        self.check(handle)?;
        if handle == RegionHandle::FILTERED {
            return Ok(false);
        }
        match self.stack.last() {
            Some(&top) if top == handle => {
                self.stack.pop();
                self.events.push(TraceEvent::Exit { ts, handle });
                Ok(true)
            }
            top => Err(MonitorError::ExitMismatch { expected: top.copied(), found: handle }),
        }
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    /// Ends the measurement, requiring every region to be closed.
    pub fn finish(self) -> Result<Vec<TraceEvent>, MonitorError> {
        if self.stack.is_empty() {
            Ok(self.events)
        } else {
            Err(MonitorError::Unbalanced(self.stack.len()))
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEvent::Definition { handle, name, canonical_name, file, begin_lno, end_lno } => {
                write!(f, "D {handle} {} {} {} {begin_lno}:{end_lno}", quote(name), quote(canonical_name), quote(file))
            }
            TraceEvent::Enter { ts, handle } => write!(f, "E {ts} {handle}"),
            TraceEvent::Exit { ts, handle } => write!(f, "X {ts} {handle}"),
        }
    }
}

pub fn write_trace(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceErrorKind {
    #[error("malformed line: {0}")]
    Malformed(String),
    #[error("handle {0} is defined twice")]
    DuplicateDefinition(RegionHandle),
    #[error("handle {0} is not a valid region handle")]
    BadHandle(RegionHandle),
    #[error("handle {0} is used before its definition")]
    UndefinedHandle(RegionHandle),
    #[error("timestamp {ts} is earlier than {previous}")]
    TimeWentBackwards { ts: Timestamp, previous: Timestamp },
    #[error(transparent)]
    Nesting(#[from] MonitorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("trace line {line}: {kind}")]
pub struct TraceError {
    pub line: usize,
    pub kind: TraceErrorKind,
}

/// Splits a definition line into whitespace separated words, honouring quotes.
fn split_fields(s: &str) -> Result<Vec<String>, String> {
    let mut fields = Vec::new();
    let mut chars = s.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        let Some(&c) = chars.peek() else { break };
        let mut field = String::new();
        if c == '"' {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some('"') => field.push('"'),
                        Some('\\') => field.push('\\'),
                        Some('n') => field.push('\n'),
                        other => return Err(format!("bad escape `\\{}`", other.unwrap_or(' '))),
                    },
                    Some(c) => field.push(c),
                    None => return Err("unterminated string".into()),
                }
            }
            if chars.peek().is_some_and(|c| !c.is_whitespace()) {
                return Err("missing space after string".into());
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                field.push(c);
                chars.next();
            }
        }
        fields.push(field);
    }
    Ok(fields)
}

fn parse_line(line: &str) -> Result<TraceEvent, String> {
    let fields = split_fields(line)?;
    let num = |s: &str| s.parse::<u64>().map_err(|_| format!("`{s}` is not a number"));
    let handle = |s: &str| -> Result<RegionHandle, String> {
        let n = num(s)?;
        u32::try_from(n).map(RegionHandle).map_err(|_| format!("handle `{s}` out of range"))
    };
    match fields.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["E", ts, h] => Ok(TraceEvent::Enter { ts: num(ts)?, handle: handle(h)? }),
        ["X", ts, h] => Ok(TraceEvent::Exit { ts: num(ts)?, handle: handle(h)? }),
        ["D", h, name, canonical, file, lines] => {
            let (b, e) = lines.split_once(':').ok_or_else(|| format!("bad line range `{lines}`"))?;
            let lno = |s: &str| s.parse::<u32>().map_err(|_| format!("bad line number `{s}`"));
            Ok(TraceEvent::Definition {
                handle: handle(h)?,
                name: name.to_string(),
                canonical_name: canonical.to_string(),
                file: file.to_string(),
                begin_lno: lno(b)?,
                end_lno: lno(e)?,
            })
        }
        _ => Err(format!("unrecognised record `{line}`")),
    }
}

/// Parses and checks a trace.
///
/// Handles must be defined once before use, timestamps must not decrease and
/// enters and exits must nest properly and close by the end.
pub fn read_trace(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut events = Vec::new();
    let mut defined = HashSet::new();
    let mut stack: Vec<RegionHandle> = Vec::new();
    let mut last_ts: Option<Timestamp> = None;
    let mut last_line = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let err = |kind| TraceError { line, kind };
        if raw.trim().is_empty() {
            continue;
        }
        let event = parse_line(raw).map_err(|m| err(TraceErrorKind::Malformed(m)))?;
        match &event {
            TraceEvent::Definition { handle, .. } => {
                if !handle.is_valid() {
                    return Err(err(TraceErrorKind::BadHandle(*handle)));
                }
                if !defined.insert(*handle) {
                    return Err(err(TraceErrorKind::DuplicateDefinition(*handle)));
                }
            }
            TraceEvent::Enter { ts, handle } | TraceEvent::Exit { ts, handle } => {
                if !defined.contains(handle) {
                    return Err(err(TraceErrorKind::UndefinedHandle(*handle)));
                }
                if let Some(previous) = last_ts.filter(|p| ts < p) {
                    return Err(err(TraceErrorKind::TimeWentBackwards { ts: *ts, previous }));
                }
                last_ts = Some(*ts);
                if matches!(event, TraceEvent::Enter { .. }) {
                    stack.push(*handle);
                } else if stack.last() == Some(handle) {
                    stack.pop();
                } else {
                    let mismatch = MonitorError::ExitMismatch { expected: stack.last().copied(), found: *handle };
                    return Err(err(mismatch.into()));
                }
            }
        }
        events.push(event);
    }
    if !stack.is_empty() {
        return Err(TraceError { line: last_line, kind: MonitorError::Unbalanced(stack.len()).into() });
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::parse_filter;
    use proptest::prelude::*;

    fn desc(id: u32, name: &str) -> RegionDescriptor {
        RegionDescriptor {
            region_id: RegionId(id),
            name: name.to_string(),
            canonical_name: format!("_Z{}{name}v", name.len()),
            file: "a.cpp".into(),
            begin_lno: 3,
            end_lno: 9,
            flags: 0,
        }
    }

    #[test]
    fn handles_start_after_sentinels() {
        let mut m = Monitor::default();
        assert_eq!(m.register(&desc(0, "a")), RegionHandle(2));
        assert_eq!(m.register(&desc(5, "b")), RegionHandle(3));
        assert_eq!(m.register(&desc(0, "a")), RegionHandle(2));
        assert_eq!(m.events().len(), 2);
    }

    #[test]
    fn filtered_regions_are_silent() {
        let rules = parse_filter("REGION_NAMES_BEGIN\nEXCLUDE b\nREGION_NAMES_END\n").unwrap();
        let mut m = Monitor::new(rules);
        let a = m.register(&desc(0, "a"));
        let b = m.register(&desc(1, "b"));
        assert_eq!(b, RegionHandle::FILTERED);
        assert!(m.on_enter(a, 0).unwrap());
        assert!(!m.on_enter(b, 1).unwrap());
        assert!(!m.on_exit(b, 2).unwrap());
        assert!(m.on_exit(a, 3).unwrap());
        assert_eq!(m.registry().issued(), 1);
        let events = m.finish().unwrap();
        assert_eq!(events.len(), 3);
        assert!(matches!(events[0], TraceEvent::Definition { handle: RegionHandle(2), .. }));
    }

    #[test]
    fn misuse_is_reported() {
        let mut m = Monitor::new(FilterRuleSet::default());
        assert_eq!(m.on_enter(RegionHandle::INVALID, 0), Err(MonitorError::InvalidHandle));
        assert_eq!(m.on_enter(RegionHandle(7), 0), Err(MonitorError::UnknownHandle(RegionHandle(7))));
        let a = m.register(&desc(0, "a"));
        let b = m.register(&desc(1, "b"));
        m.on_enter(a, 0).unwrap();
        assert_eq!(m.on_exit(b, 1), Err(MonitorError::ExitMismatch { expected: Some(a), found: b }));
        assert_eq!(m.finish(), Err(MonitorError::Unbalanced(1)));
    }

    #[test]
    fn trace_text_format() {
        let mut m = Monitor::new(FilterRuleSet::default());
        let h = m.register(&desc(0, "f"));
        m.on_enter(h, 4).unwrap();
        m.on_exit(h, 30).unwrap();
        let text = write_trace(&m.finish().unwrap());
        assert_eq!(text, "D 2 \"f\" \"_Z1fv\" \"a.cpp\" 3:9\nE 4 2\nX 30 2\n");
        assert_eq!(write_trace(&read_trace(&text).unwrap()), text);
    }

    #[test]
    fn read_trace_rejects_bad_input() {
        let d = "D 2 \"f\" \"f\" \"\" 0:0\n";
        let cases = [
            ("E 1 2\n".to_string(), 1),
            (format!("{d}{d}"), 2),
            (format!("{d}E 5 2\nX 4 2\n"), 3),
            (format!("{d}E 5 2\n"), 2),
            (format!("{d}X 5 2\n"), 2),
            (format!("{d}E x 2\n"), 2),
            ("D 1 \"f\" \"f\" \"\" 0:0\n".to_string(), 1),
            ("D 2 \"f \"f\" \"\" 0:0\n".to_string(), 1),
            ("Q 1 2\n".to_string(), 1),
        ];
        for (text, line) in cases {
            let e = read_trace(&text).expect_err(&text);
            assert_eq!(e.line, line, "{text}: {e}");
        }
    }

    fn name_strategy() -> impl Strategy<Value = String> {
        "[ -~\n]{0,12}"
    }

    proptest! {
        #[test]
        fn registration_is_idempotent(n in 1usize..200, regions in 1u32..6) {
            let mut m = Monitor::new(FilterRuleSet::default());
            let mut first = HashMap::new();
            for i in 0..n {
                let id = i as u32 % regions;
                let h = m.register(&desc(id, "r"));
                prop_assert_eq!(*first.entry(id).or_insert(h), h);
            }
            prop_assert_eq!(m.events().len(), first.len());
            prop_assert_eq!(m.registry().issued(), first.len());
        }

        #[test]
        fn trace_round_trips(
            defs in prop::collection::vec((name_strategy(), name_strategy(), name_strategy(), 0u32..500, 0u32..500), 1..5),
            shape in prop::collection::vec((any::<bool>(), 0usize..5, 0u64..4), 0..40),
        ) {
            let mut m = Monitor::new(FilterRuleSet::default());
            let handles: Vec<RegionHandle> = defs.iter().enumerate().map(|(i, (n, c, f, b, e))| {
                m.register(&RegionDescriptor {
                    region_id: RegionId(i as u32),
                    name: n.clone(), canonical_name: c.clone(), file: f.clone(),
                    begin_lno: *b, end_lno: *e, flags: 0,
                })
            }).collect();
            let mut ts = 0;
            for (enter, which, dt) in shape {
                ts += dt;
                if enter || m.depth() == 0 {
                    m.on_enter(handles[which % handles.len()], ts).unwrap();
                } else {
                    let top = *m.stack.last().unwrap();
                    m.on_exit(top, ts).unwrap();
                }
            }
            while let Some(&top) = m.stack.last() {
                m.on_exit(top, ts).unwrap();
            }
            let events = m.finish().unwrap();
            prop_assert_eq!(read_trace(&write_trace(&events)).unwrap(), events);
        }
    }
}
