//! Post-mortem views of a trace: per-region profiles, run comparisons and
//! filter suggestions for short, frequently visited regions.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use thiserror::Error;

use crate::filter::FilterRuleSet;
use crate::monitor::{RegionHandle, TraceEvent};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionProfile {
    pub handle: RegionHandle,
    pub name: String,
    pub canonical_name: String,
    pub file: String,
    pub visits: u64,
    /// Ticks between enter and exit, summed over visits.
    pub inclusive: u64,
    /// Inclusive ticks minus those spent in nested regions.
    pub exclusive: u64,
}

impl RegionProfile {
    pub fn inclusive_per_visit(&self) -> f64 {
        if self.visits == 0 {
            0.0
        } else {
            self.inclusive as f64 / self.visits as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Profile {
    /// Ordered by handle.
    pub regions: Vec<RegionProfile>,
}

impl Profile {
    pub fn region(&self, name: &str) -> Option<&RegionProfile> {
        self.regions.iter().find(|r| r.name == name || r.canonical_name == name)
    }

    pub fn total_visits(&self) -> u64 {
        self.regions.iter().map(|r| r.visits).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("event {index} refers to undefined handle {handle}")]
    UndefinedHandle { index: usize, handle: RegionHandle },
    #[error("event {index} exits {handle} out of order")]
    BadNesting { index: usize, handle: RegionHandle },
    #[error("trace ends with {0} open region(s)")]
    Unclosed(usize),
}

/// Aggregates a well-nested trace into per-region totals.
pub fn build_profile(events: &[TraceEvent]) -> Result<Profile, AnalysisError> {
    let mut regions: BTreeMap<RegionHandle, RegionProfile> = BTreeMap::new();
    // (handle, enter timestamp, ticks spent in children)
    let mut stack: Vec<(RegionHandle, u64, u64)> = Vec::new();
    for (index, event) in events.iter().enumerate() {
        match event {
            TraceEvent::Definition { handle, name, canonical_name, file, .. } => {
                regions.entry(*handle).or_insert_with(|| RegionProfile {
                    handle: *handle,
                    name: name.clone(),
                    canonical_name: canonical_name.clone(),
                    file: file.clone(),
                    visits: 0,
                    inclusive: 0,
                    exclusive: 0,
                });
            }
            TraceEvent::Enter { ts, handle } => {
                if !regions.contains_key(handle) {
                    return Err(AnalysisError::UndefinedHandle { index, handle: *handle });
                }
                stack.push((*handle, *ts, 0));
            }
            TraceEvent::Exit { ts, handle } => match stack.pop() {
                Some((open, start, children)) if open == *handle => {
                    let inclusive = ts.saturating_sub(start);
                    let r = regions.get_mut(handle).expect("entered regions are defined");
                    r.visits += 1;
                    r.inclusive += inclusive;
                    r.exclusive += inclusive.saturating_sub(children);
                    if let Some(parent) = stack.last_mut() {
                        parent.2 += inclusive;
                    }
                }
                _ => return Err(AnalysisError::BadNesting { index, handle: *handle }),
            },
        }
    }
    if !stack.is_empty() {
        return Err(AnalysisError::Unclosed(stack.len()));
    }
    Ok(Profile { regions: regions.into_values().collect() })
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.regions.iter().map(|r| r.name.len()).max().unwrap_or(0).max("region".len());
        writeln!(f, "{:<width$}  {:>10}  {:>12}  {:>12}", "region", "visits", "incl", "excl")?;
        for r in &self.regions {
            writeln!(f, "{:<width$}  {:>10}  {:>12}  {:>12}", r.name, r.visits, r.inclusive, r.exclusive)?;
        }
        Ok(())
    }
}

/// Enter-event totals of several runs and per-region visit counts, keyed by
/// canonical name so runs with different handle numbering line up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub enter_events: Vec<u64>,
    /// `(display name, visits per run)`; absent regions count zero visits.
    pub regions: Vec<(String, Vec<u64>)>,
}

impl Comparison {
    /// Visits in run `run` minus visits in the first run.
    pub fn delta(&self, region: usize, run: usize) -> i64 {
        let v = &self.regions[region].1;
        v[run] as i64 - v[0] as i64
    }
}

pub fn compare_runs(runs: &[(String, Vec<TraceEvent>)]) -> Result<Comparison, AnalysisError> {
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, (String, Vec<u64>)> = HashMap::new();
    let mut enter_events = Vec::with_capacity(runs.len());
    for (i, (_, events)) in runs.iter().enumerate() {
        enter_events.push(events.iter().filter(|e| matches!(e, TraceEvent::Enter { .. })).count() as u64);
        for r in build_profile(events)?.regions {
            let row = rows.entry(r.canonical_name.clone()).or_insert_with(|| {
                order.push(r.canonical_name.clone());
                (r.name.clone(), vec![0; runs.len()])
            });
            row.1[i] += r.visits;
        }
    }
    Ok(Comparison {
        labels: runs.iter().map(|(l, _)| l.clone()).collect(),
        enter_events,
        regions: order.into_iter().map(|k| rows.remove(&k).expect("every key has a row")).collect(),
    })
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.regions.iter().map(|(n, _)| n.len()).chain(["enter events".len()]).max().unwrap_or(0);
        let col = self.labels.iter().map(|l| l.len()).max().unwrap_or(0).max(10);
        write!(f, "{:<width$}", "")?;
        for l in &self.labels {
            write!(f, "  {l:>col$}")?;
        }
        writeln!(f)?;
        write!(f, "{:<width$}", "enter events")?;
        for n in &self.enter_events {
            write!(f, "  {n:>col$}")?;
        }
        writeln!(f)?;
        for (ri, (name, visits)) in self.regions.iter().enumerate() {
            write!(f, "{name:<width$}")?;
            for (run, v) in visits.iter().enumerate() {
                let cell = if run == 0 { v.to_string() } else { format!("{v} ({:+})", self.delta(ri, run)) };
                write!(f, "  {cell:>col$}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Excludes regions visited at least `min_visits` times whose mean inclusive
/// time is at most `max_ticks_per_visit`.
pub fn suggest_filter(profile: &Profile, max_ticks_per_visit: u64, min_visits: u64) -> FilterRuleSet {
    let mut names: Vec<&str> = profile
        .regions
        .iter()
        .filter(|r| r.visits > 0 && r.visits >= min_visits)
        .filter(|r| r.inclusive <= max_ticks_per_visit.saturating_mul(r.visits))
        .map(|r| r.name.as_str())
        .collect();
    let mut seen = std::collections::HashSet::new();
    names.retain(|n| seen.insert(*n));
    FilterRuleSet::exclude_regions(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn def(h: u32, name: &str) -> TraceEvent {
        TraceEvent::Definition {
            handle: RegionHandle(h),
            name: name.into(),
            canonical_name: format!("c_{name}"),
            file: String::new(),
            begin_lno: 0,
            end_lno: 0,
        }
    }
    fn e(ts: u64, h: u32) -> TraceEvent {
        TraceEvent::Enter { ts, handle: RegionHandle(h) }
    }
    fn x(ts: u64, h: u32) -> TraceEvent {
        TraceEvent::Exit { ts, handle: RegionHandle(h) }
    }

    #[test]
    fn inclusive_and_exclusive_times() {
        let events = [def(2, "main"), def(3, "f"), e(0, 2), e(10, 3), e(15, 3), x(20, 3), x(30, 3), x(100, 2)];
        let p = build_profile(&events).unwrap();
        let main = p.region("main").unwrap();
        assert_eq!((main.visits, main.inclusive, main.exclusive), (1, 100, 80));
        let f = p.region("c_f").unwrap();
        assert_eq!((f.visits, f.inclusive, f.exclusive), (2, 25, 20));
        assert_eq!(p.total_visits(), 3);
        let table = p.to_string();
        assert!(table.starts_with("region"));
        assert_eq!(table.lines().count(), 3);
    }

    #[test]
    fn broken_traces_are_rejected() {
        assert_eq!(
            build_profile(&[e(0, 2)]),
            Err(AnalysisError::UndefinedHandle { index: 0, handle: RegionHandle(2) })
        );
        assert_eq!(build_profile(&[def(2, "a"), e(0, 2)]), Err(AnalysisError::Unclosed(1)));
        assert!(matches!(build_profile(&[def(2, "a"), x(0, 2)]), Err(AnalysisError::BadNesting { .. })));
    }

    #[test]
    fn suggestion_thresholds_are_inclusive() {
        let mut events = vec![def(2, "main"), def(3, "hot"), def(4, "slow"), e(0, 2)];
        let mut ts = 0;
        for _ in 0..10 {
            events.push(e(ts, 3));
            ts += 5;
            events.push(x(ts, 3));
            events.push(e(ts, 4));
            ts += 6;
            events.push(x(ts, 4));
        }
        events.push(x(ts, 2));
        let p = build_profile(&events).unwrap();
        let names = |r: FilterRuleSet| r.region_rules.into_iter().map(|r| r.pattern).collect::<Vec<_>>();
        assert_eq!(names(suggest_filter(&p, 5, 10)), ["hot"]);
        assert_eq!(names(suggest_filter(&p, 6, 10)), ["hot", "slow"]);
        assert!(names(suggest_filter(&p, 6, 11)).is_empty());
    }

    #[test]
    fn comparison_aligns_by_canonical_name() {
        let a = vec![def(2, "main"), def(3, "f"), e(0, 2), e(1, 3), x(2, 3), x(3, 2)];
        let b = vec![def(2, "f"), def(3, "main"), e(0, 3), e(1, 2), x(2, 2), e(3, 2), x(4, 2), x(5, 3)];
        let c = compare_runs(&[("a".into(), a), ("b".into(), b)]).unwrap();
        assert_eq!(c.enter_events, [2, 3]);
        assert_eq!(c.regions, [("main".to_string(), vec![1, 1]), ("f".to_string(), vec![1, 2])]);
        assert_eq!(c.delta(1, 1), 1);
        assert!(c.to_string().contains("2 (+1)"));
    }
}
