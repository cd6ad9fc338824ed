use std::collections::{HashMap, HashSet};
use std::fmt;

use super::{is_valid_identifier, Instruction, IrModule, MAX_CALL_ARGS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    DuplicateName,
    InvalidName,
    UndefinedCallee,
    UndefinedLabel,
    DuplicateLabel,
    InvalidLabel,
    MissingTerminator,
    TerminatorMidBlock,
    NoBlocks,
    ExternWithBody,
    BadLines,
    TooManyArgs,
    ZeroWork,
    EntryHasPredecessor,
    EmptyBodyMismatch,
    UndefinedRegion,
    DuplicateRegion,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::DuplicateName => "duplicate-name",
            ViolationKind::InvalidName => "invalid-name",
            ViolationKind::UndefinedCallee => "undefined-callee",
            ViolationKind::UndefinedLabel => "undefined-label",
            ViolationKind::DuplicateLabel => "duplicate-label",
            ViolationKind::InvalidLabel => "invalid-label",
            ViolationKind::MissingTerminator => "missing-terminator",
            ViolationKind::TerminatorMidBlock => "terminator-mid-block",
            ViolationKind::NoBlocks => "no-blocks",
            ViolationKind::ExternWithBody => "extern-with-body",
            ViolationKind::BadLines => "bad-lines",
            ViolationKind::TooManyArgs => "too-many-args",
            ViolationKind::ZeroWork => "zero-work",
            ViolationKind::EntryHasPredecessor => "entry-has-predecessor",
            ViolationKind::EmptyBodyMismatch => "empty-body-mismatch",
            ViolationKind::UndefinedRegion => "undefined-region",
            ViolationKind::DuplicateRegion => "duplicate-region",
        }
    }
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One broken invariant, located by function, block and instruction index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub function: Option<String>,
    pub block: Option<String>,
    pub index: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if let Some(func) = &self.function {
            write!(f, " in @{func}")?;
        }
        if let Some(b) = &self.block {
            write!(f, " ^{b}")?;
        }
        if let Some(i) = self.index {
            write!(f, "[{i}]")?;
        }
        if !self.detail.is_empty() {
            write!(f, ": {}", self.detail)?;
        }
        Ok(())
    }
}

/// Checks every structural invariant of a module; an empty list means valid.
pub fn validate(m: &IrModule) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, function: Option<&str>, block: Option<&str>, index, detail: String| {
        out.push(Violation {
            kind,
            function: function.map(str::to_string),
            block: block.map(str::to_string),
            index,
            detail,
        })
    };

    let mut names = HashSet::new();
    for f in &m.functions {
        if !names.insert(f.mangled_name.as_str()) {
            push(ViolationKind::DuplicateName, Some(&f.mangled_name), None, None, String::new());
        }
    }

    let mut region_ids = HashSet::new();
    for r in &m.regions {
        if !region_ids.insert(r.region_id) {
            push(ViolationKind::DuplicateRegion, None, None, None, format!("region {}", r.region_id));
        }
    }

    for f in &m.functions {
        let fname = Some(f.mangled_name.as_str());
        if !is_valid_identifier(&f.mangled_name) {
            push(ViolationKind::InvalidName, fname, None, None, String::new());
        }
        if f.is_extern {
            if !f.blocks.is_empty() {
                push(ViolationKind::ExternWithBody, fname, None, None, String::new());
            }
            continue;
        }
        if f.begin_line == 0 || f.begin_line > f.end_line {
            push(ViolationKind::BadLines, fname, None, None, format!("lines={}:{}", f.begin_line, f.end_line));
        }
        if f.blocks.is_empty() {
            push(ViolationKind::NoBlocks, fname, None, None, String::new());
            continue;
        }
        if f.has_attr(super::FunctionAttr::EmptyBody) != f.body_is_empty() {
            push(ViolationKind::EmptyBodyMismatch, fname, None, None, String::new());
        }

        let mut labels: HashMap<&str, usize> = HashMap::new();
        for b in &f.blocks {
            *labels.entry(b.label.as_str()).or_default() += 1;
        }
        let entry = f.blocks[0].label.as_str();
        for (bi, b) in f.blocks.iter().enumerate() {
            let bname = Some(b.label.as_str());
            if labels[b.label.as_str()] > 1 && f.blocks[..bi].iter().all(|o| o.label != b.label) {
                push(ViolationKind::DuplicateLabel, fname, bname, None, String::new());
            }
            if !is_valid_identifier(&b.label) {
                push(ViolationKind::InvalidLabel, fname, bname, None, String::new());
            }
            match b.instructions.last() {
                Some(last) if last.is_terminator() => {}
                _ => push(
                    ViolationKind::MissingTerminator,
                    fname,
                    bname,
                    b.instructions.len().checked_sub(1),
                    String::new(),
                ),
            }
            for (ii, inst) in b.instructions.iter().enumerate() {
                let at = Some(ii);
                if inst.is_terminator() && ii + 1 != b.instructions.len() {
                    push(ViolationKind::TerminatorMidBlock, fname, bname, at, inst.to_string());
                }
                if let Some(callee) = inst.callee() {
                    if m.function(callee).is_none() {
                        push(ViolationKind::UndefinedCallee, fname, bname, at, callee.to_string());
                    }
                }
                if let Instruction::Call { args, .. } | Instruction::CallTry { args, .. } = inst {
                    if args.len() > MAX_CALL_ARGS {
                        push(ViolationKind::TooManyArgs, fname, bname, at, format!("{} args", args.len()));
                    }
                }
                if matches!(inst, Instruction::Work(0)) {
                    push(ViolationKind::ZeroWork, fname, bname, at, String::new());
                }
                for target in inst.successors() {
                    if !labels.contains_key(target) {
                        push(ViolationKind::UndefinedLabel, fname, bname, at, target.to_string());
                    } else if target == entry {
                        push(ViolationKind::EntryHasPredecessor, fname, bname, at, target.to_string());
                    }
                }
                if let Some(id) = inst.region() {
                    if !region_ids.contains(&id) {
                        push(ViolationKind::UndefinedRegion, fname, bname, at, format!("region {id}"));
                    }
                }
            }
        }
    }
    out
}
