//! Include/exclude rule sets over function names and source files.
//!
//! Patterns match the whole name; `*` matches any run of characters and `?`
//! exactly one. Within each rule list the last matching rule wins, and a
//! function is filtered when either list's deciding rule is an exclude.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    Include,
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionRule {
    pub kind: RuleKind,
    pub pattern: String,
    /// Match against the mangled name instead of the demangled one.
    pub match_mangled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileRule {
    pub kind: RuleKind,
    pub pattern: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FilterRuleSet {
    pub region_rules: Vec<RegionRule>,
    pub file_rules: Vec<FileRule>,
}

impl FilterRuleSet {
    pub fn is_empty(&self) -> bool {
        self.region_rules.is_empty() && self.file_rules.is_empty()
    }

    pub fn exclude_regions<I, S>(patterns: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        FilterRuleSet {
            region_rules: patterns
                .into_iter()
                .map(|p| RegionRule { kind: RuleKind::Exclude, pattern: p.into(), match_mangled: false })
                .collect(),
            file_rules: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleRef {
    Region(usize),
    File(usize),
}

impl fmt::Display for RuleRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleRef::Region(i) => write!(f, "region rule {i}"),
            RuleRef::File(i) => write!(f, "file rule {i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Instrument,
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchDecision {
    pub outcome: Outcome,
    pub deciding_rule: Option<RuleRef>,
    pub reason: String,
}

impl MatchDecision {
    pub fn is_filtered(&self) -> bool {
        self.outcome == Outcome::Filtered
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilterParseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: block opened here is never closed")]
    Unterminated { line: usize },
}

#[derive(Clone, Copy, PartialEq)]
enum Block {
    Regions,
    Files,
}

/// Parses a filter file, keeping rules in file order.
pub fn parse_filter(text: &str) -> Result<FilterRuleSet, FilterParseError> {
    let mut rules = FilterRuleSet::default();
    let mut open: Option<(Block, usize)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let syntax = |message: String| FilterParseError::Syntax { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut words = content.split_whitespace();
        let directive = words.next().unwrap_or_default();
        match (directive, open) {
            ("REGION_NAMES_BEGIN", None) => open = Some((Block::Regions, line)),
            ("FILE_NAMES_BEGIN", None) => open = Some((Block::Files, line)),
            ("REGION_NAMES_END", Some((Block::Regions, _))) | ("FILE_NAMES_END", Some((Block::Files, _))) => {
                open = None
            }
            ("REGION_NAMES_BEGIN" | "FILE_NAMES_BEGIN", Some(_)) => {
                return Err(syntax(format!("`{directive}` inside an open block")))
            }
            ("REGION_NAMES_END" | "FILE_NAMES_END", _) => {
                return Err(syntax(format!("`{directive}` does not close the open block")))
            }
            ("INCLUDE" | "EXCLUDE", Some((block, _))) => {
                let kind = if directive == "INCLUDE" { RuleKind::Include } else { RuleKind::Exclude };
                let rest = content[directive.len()..].trim_start();
                let (match_mangled, pattern) = match rest.split_once(char::is_whitespace) {
                    Some(("MANGLED", p)) => (true, p.trim()),
                    _ if rest == "MANGLED" => (true, ""),
                    _ => (false, rest),
                };
                if pattern.is_empty() {
                    return Err(syntax("rule without a pattern".into()));
                }
                match block {
                    Block::Regions => {
                        rules.region_rules.push(RegionRule { kind, pattern: pattern.to_string(), match_mangled })
                    }
                    Block::Files if match_mangled => {
                        return Err(syntax("`MANGLED` is only valid for region rules".into()))
                    }
                    Block::Files => rules.file_rules.push(FileRule { kind, pattern: pattern.to_string() }),
                }
            }
            ("INCLUDE" | "EXCLUDE", None) => return Err(syntax(format!("`{directive}` outside of a block"))),
            (other, _) => return Err(syntax(format!("unknown directive `{other}`"))),
        }
    }
    match open {
        Some((_, line)) => Err(FilterParseError::Unterminated { line }),
        None => Ok(rules),
    }
}

/// Renders a rule set in the filter file syntax.
pub fn write_filter(rules: &FilterRuleSet) -> String {
    let word = |k: RuleKind| match k {
        RuleKind::Include => "INCLUDE",
        RuleKind::Exclude => "EXCLUDE",
    };
    let mut out = String::from("REGION_NAMES_BEGIN\n");
    for r in &rules.region_rules {
        let mangled = if r.match_mangled { "MANGLED " } else { "" };
        out.push_str(&format!("  {} {mangled}{}\n", word(r.kind), r.pattern));
    }
    out.push_str("REGION_NAMES_END\n");
    if !rules.file_rules.is_empty() {
        out.push_str("FILE_NAMES_BEGIN\n");
        for r in &rules.file_rules {
            out.push_str(&format!("  {} {}\n", word(r.kind), r.pattern));
        }
        out.push_str("FILE_NAMES_END\n");
    }
    out
}

/// True iff `pattern` matches all of `name`.
pub fn wildcard_match(pattern: &str, name: &str) -> bool {
    let pat: Vec<char> = pattern.chars().collect();
    let text: Vec<char> = name.chars().collect();
    let (mut p, mut t) = (0, 0);
    // position after the last `*` seen, and the text position it was tried at
    let mut backtrack: Option<(usize, usize)> = None;
    while t < text.len() {
        match pat.get(p) {
            Some('*') => {
                backtrack = Some((p + 1, t));
                p += 1;
            }
            Some(&c) if c == '?' || c == text[t] => {
                p += 1;
                t += 1;
            }
            _ => match backtrack {
                Some((bp, bt)) => {
                    backtrack = Some((bp, bt + 1));
                    p = bp;
                    t = bt + 1;
                }
                None => return false,
            },
        }
    }
    pat[p..].iter().all(|&c| c == '*')
}

fn last_match<R>(rules: &[R], matches: impl Fn(&R) -> bool) -> Option<usize> {
    rules.iter().rposition(matches)
}

/// Decides whether a function is instrumented under `rules`.
///
/// An empty `file` skips the file rules.
pub fn classify(rules: &FilterRuleSet, mangled: &str, demangled: &str, file: &str) -> MatchDecision {
    let file_hit =
        if file.is_empty() { None } else { last_match(&rules.file_rules, |r| wildcard_match(&r.pattern, file)) };
    let region_hit = last_match(&rules.region_rules, |r| {
        wildcard_match(&r.pattern, if r.match_mangled { mangled } else { demangled })
    });

    if let Some(i) = file_hit.filter(|&i| rules.file_rules[i].kind == RuleKind::Exclude) {
        return MatchDecision {
            outcome: Outcome::Filtered,
            deciding_rule: Some(RuleRef::File(i)),
            reason: format!("file `{file}` excluded by `{}`", rules.file_rules[i].pattern),
        };
    }
    if let Some(i) = region_hit.filter(|&i| rules.region_rules[i].kind == RuleKind::Exclude) {
        return MatchDecision {
            outcome: Outcome::Filtered,
            deciding_rule: Some(RuleRef::Region(i)),
            reason: format!("excluded by `{}`", rules.region_rules[i].pattern),
        };
    }
    match (region_hit, file_hit) {
        (Some(i), _) => MatchDecision {
            outcome: Outcome::Instrument,
            deciding_rule: Some(RuleRef::Region(i)),
            reason: format!("included by `{}`", rules.region_rules[i].pattern),
        },
        (None, Some(i)) => MatchDecision {
            outcome: Outcome::Instrument,
            deciding_rule: Some(RuleRef::File(i)),
            reason: format!("file included by `{}`", rules.file_rules[i].pattern),
        },
        (None, None) => MatchDecision {
            outcome: Outcome::Instrument,
            deciding_rule: None,
            reason: "default: no rule matches".into(),
        },
    }
}
