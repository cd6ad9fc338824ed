//! Function inlining approximating the `-O0`..`-O3` optimization levels.
//!
//! Eligibility is decided from the callee as it appears in the input module,
//! and its original body is what gets spliced. Call sites copied in from an
//! inlined body are considered in turn, one level deeper, up to
//! [`MAX_INLINE_DEPTH`] levels. Because every decision only depends on the
//! input module and the level, the sites inlined at one level are a subset of
//! those inlined at any higher level.

mod liveness;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ir::{validate, BasicBlock, FunctionAttr, Instruction, IrFunction, IrModule, Reg, Violation};
use liveness::Liveness;

/// Maximum nesting of inlined bodies, i.e. the number of inlining rounds.
pub const MAX_INLINE_DEPTH: u8 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OptLevel {
    O0,
    O1,
    O2,
    O3,
}

impl OptLevel {
    pub const ALL: [OptLevel; 4] = [OptLevel::O0, OptLevel::O1, OptLevel::O2, OptLevel::O3];

    /// Largest callee instruction count that is still inlined.
    pub fn inline_threshold(self) -> usize {
        match self {
            OptLevel::O0 => 0,
            OptLevel::O1 => 4,
            OptLevel::O2 => 16,
            OptLevel::O3 => 64,
        }
    }
}

impl fmt::Display for OptLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "O{}", *self as u8)
    }
}

impl FromStr for OptLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim_start_matches('-').trim_start_matches('O') {
            "0" => Ok(OptLevel::O0),
            "1" => Ok(OptLevel::O1),
            "2" => Ok(OptLevel::O2),
            "3" => Ok(OptLevel::O3),
            _ => Err(format!("unknown optimization level `{s}`")),
        }
    }
}

/// A position in a function of the input module.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SitePos {
    pub block: String,
    pub index: usize,
}

/// A call site, named by where it came from rather than where it ended up.
///
/// `path[0]` is the call's position in the caller as given. Each further
/// entry locates the call inside the original body of the callee inlined at
/// the previous position, so the identity of a site is the same at every
/// optimization level.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InlineSite {
    pub caller: String,
    pub callee: String,
    pub path: Vec<SitePos>,
}

impl InlineSite {
    /// Number of inlined bodies enclosing the site.
    pub fn depth(&self) -> usize {
        self.path.len() - 1
    }
}

impl fmt::Display for InlineSite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{}", self.caller)?;
        for p in &self.path {
            write!(f, " ^{}[{}]", p.block, p.index)?;
        }
        write!(f, " -> @{}", self.callee)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InlineSkip {
    Extern,
    Recursive,
    NoInline,
    TooCostly {
        cost: usize,
        threshold: usize,
    },
    /// `call.try` sites keep their unwind edge and are never inlined.
    UnwindEdge,
    RegisterPressure {
        needed: usize,
        free: usize,
    },
    DepthBudget,
}

impl fmt::Display for InlineSkip {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InlineSkip::Extern => f.write_str("extern callee"),
            InlineSkip::Recursive => f.write_str("recursive callee"),
            InlineSkip::NoInline => f.write_str("no_inline"),
            InlineSkip::TooCostly { cost, threshold } => write!(f, "cost {cost} > threshold {threshold}"),
            InlineSkip::UnwindEdge => f.write_str("call.try site"),
            InlineSkip::RegisterPressure { needed, free } => {
                write!(f, "needs {needed} registers, {free} free")
            }
            InlineSkip::DepthBudget => write!(f, "nesting deeper than {MAX_INLINE_DEPTH}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InlineReport {
    pub inlined_sites: Vec<InlineSite>,
    pub skipped: Vec<(InlineSite, InlineSkip)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OptError {
    #[error("cannot compute inline cost of extern function `{0}`")]
    Extern(String),
    #[error("invalid module: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidModule(Vec<Violation>),
}

/// Total instruction count across all blocks; hooks count like any other instruction.
pub fn inline_cost(f: &IrFunction) -> Result<usize, OptError> {
    if f.is_extern {
        return Err(OptError::Extern(f.mangled_name.clone()));
    }
    Ok(f.instruction_count())
}

/// Functions that can reach themselves through the call graph.
pub fn recursive_functions(m: &IrModule) -> HashSet<String> {
    let edges: HashMap<&str, BTreeSet<&str>> = m
        .functions
        .iter()
        .map(|f| (f.mangled_name.as_str(), f.instructions().filter_map(Instruction::callee).collect()))
        .collect();
    let mut out = HashSet::new();
    for f in &m.functions {
        let start = f.mangled_name.as_str();
        let mut stack: Vec<&str> = edges[start].iter().copied().collect();
        let mut seen = HashSet::new();
        while let Some(n) = stack.pop() {
            if n == start {
                out.insert(start.to_string());
                break;
            }
            if seen.insert(n) {
                stack.extend(edges.get(n).into_iter().flatten().copied());
            }
        }
    }
    out
}

/// Inlines eligible plain call sites; `O0` returns the module unchanged.
pub fn inline_pass(m: &IrModule, level: OptLevel) -> Result<(IrModule, InlineReport), OptError> {
    let violations = validate(m);
    if !violations.is_empty() {
        return Err(OptError::InvalidModule(violations));
    }
    let mut report = InlineReport::default();
    if level == OptLevel::O0 {
        return Ok((m.clone(), report));
    }
    let ctx = Inliner {
        originals: m.functions.iter().map(|f| (f.mangled_name.as_str(), f)).collect(),
        recursive: recursive_functions(m),
        threshold: level.inline_threshold(),
    };
    let mut out = m.clone();
    for f in out.functions.iter_mut().filter(|f| !f.is_extern) {
        ctx.inline_into(f, &mut report);
        f.refresh_empty_body();
    }
    Ok((out, report))
}

struct Inliner<'a> {
    originals: HashMap<&'a str, &'a IrFunction>,
    recursive: HashSet<String>,
    threshold: usize,
}

impl Inliner<'_> {
    fn eligibility(&self, callee: &str, depth: u8) -> Result<&IrFunction, InlineSkip> {
        let f = self.originals[callee];
        if f.is_extern {
            return Err(InlineSkip::Extern);
        }
        if self.recursive.contains(callee) {
            return Err(InlineSkip::Recursive);
        }
        if f.has_attr(FunctionAttr::NoInline) {
            return Err(InlineSkip::NoInline);
        }
        let cost = f.instruction_count();
        if cost > self.threshold {
            return Err(InlineSkip::TooCostly { cost, threshold: self.threshold });
        }
        if depth >= MAX_INLINE_DEPTH {
            return Err(InlineSkip::DepthBudget);
        }
        Ok(f)
    }

    fn inline_into(&self, caller: &mut IrFunction, report: &mut InlineReport) {
        // where every instruction came from; see `InlineSite::path`
        let mut origin: Vec<Vec<Vec<SitePos>>> = caller
            .blocks
            .iter()
            .map(|b| (0..b.instructions.len()).map(|i| vec![SitePos { block: b.label.clone(), index: i }]).collect())
            .collect();
        let mut serial = 0usize;
        let mut bi = 0;
        while bi < caller.blocks.len() {
            let mut ii = 0;
            while ii < caller.blocks[bi].instructions.len() {
                let (callee_name, args, is_try) = match &caller.blocks[bi].instructions[ii] {
                    Instruction::Call { callee, args } => (callee.clone(), args.clone(), false),
                    Instruction::CallTry { callee, .. } => (callee.clone(), Vec::new(), true),
                    _ => {
                        ii += 1;
                        continue;
                    }
                };
                let site = InlineSite {
                    caller: caller.mangled_name.clone(),
                    callee: callee_name.clone(),
                    path: origin[bi][ii].clone(),
                };
                let outcome = if is_try {
                    Err(InlineSkip::UnwindEdge)
                } else {
                    self.eligibility(&callee_name, site.depth() as u8)
                        .and_then(|callee| splice(caller, &mut origin, bi, ii, callee, &args, &mut serial))
                };
                match outcome {
                    // the spliced code now starts at `ii` and is scanned next
                    Ok(()) => report.inlined_sites.push(site),
                    Err(reason) => {
                        report.skipped.push((site, reason));
                        ii += 1;
                    }
                }
            }
            bi += 1;
        }
    }
}

/// Replaces the call at `caller.blocks[bi].instructions[ii]` with `callee`'s body.
///
/// Callee registers are renamed onto caller registers that are dead after the
/// call and not used as arguments. Registers live on entry to the callee are
/// seeded from the arguments or zeroed, so the inlined code observes the same
/// initial frame as a real call.
fn splice(
    caller: &mut IrFunction,
    origin: &mut Vec<Vec<Vec<SitePos>>>,
    bi: usize,
    ii: usize,
    callee: &IrFunction,
    args: &[Reg],
    serial: &mut usize,
) -> Result<(), InlineSkip> {
    let live_after = Liveness::compute(caller, false).live_after(caller, bi, ii);
    let free: Vec<Reg> = Reg::all().filter(|r| !live_after.contains(r) && !args.contains(r)).collect();

    let mut body: Vec<BasicBlock> = callee.blocks.clone();
    let mut needed = BTreeSet::new();
    for inst in body.iter().flat_map(|b| &b.instructions) {
        if !matches!(inst, Instruction::Ret(_)) {
            needed.extend(inst.uses());
        }
        needed.extend(inst.def());
    }
    if needed.len() > free.len() {
        return Err(InlineSkip::RegisterPressure { needed: needed.len(), free: free.len() });
    }
    let map: HashMap<Reg, Reg> = needed.iter().copied().zip(free.iter().copied()).collect();
    let entry_live = Liveness::compute(callee, true).live_in_entry(callee);

    let mut prologue = Vec::new();
    for r in &entry_live {
        match args.get(r.index()) {
            Some(&src) => prologue.push(Instruction::Addi { dst: map[r], src, imm: 0 }),
            None => prologue.push(Instruction::Li { dst: map[r], imm: 0 }),
        }
    }

    *serial += 1;
    let k = *serial;
    let mut taken: HashSet<String> = caller.blocks.iter().map(|b| b.label.clone()).collect();
    let mut fresh = |base: String| -> String {
        let mut label = base.clone();
        let mut n = 1;
        while taken.contains(&label) {
            label = format!("{base}.{n}");
            n += 1;
        }
        taken.insert(label.clone());
        label
    };
    let cont = fresh(format!("{}.c{k}", caller.blocks[bi].label));
    let labels: HashMap<String, String> =
        body.iter().map(|b| (b.label.clone(), fresh(format!("{}.i{k}", b.label)))).collect();

    let site_path = origin[bi][ii].clone();
    let mut body_origin: Vec<Vec<Vec<SitePos>>> = body
        .iter()
        .map(|b| {
            (0..b.instructions.len())
                .map(|i| {
                    let mut p = site_path.clone();
                    p.push(SitePos { block: b.label.clone(), index: i });
                    p
                })
                .collect()
        })
        .collect();

    // a lone block ending in `ret` is spliced in place without a continuation block
    let single = body.len() == 1 && matches!(body[0].instructions.last(), Some(Instruction::Ret(_)));

    for b in &mut body {
        b.label = labels[&b.label].clone();
        for inst in &mut b.instructions {
            if matches!(inst, Instruction::Ret(_)) {
                *inst = Instruction::Jmp(cont.clone());
                continue;
            }
            inst.map_regs(|r| map[&r]);
            for target in inst.successors_mut() {
                *target = labels[target.as_str()].clone();
            }
        }
    }

    let block = &mut caller.blocks[bi];
    let post: Vec<Instruction> = block.instructions.split_off(ii + 1);
    let post_origin = origin[bi].split_off(ii + 1);
    block.instructions.pop();
    origin[bi].pop();

    let mut entry = body.remove(0).instructions;
    let mut entry_origin = body_origin.remove(0);
    if single {
        entry.pop();
        entry_origin.pop();
    }
    // prologue moves are never call sites; they borrow the entry's first position
    let prologue_origin = entry_origin.first().cloned().unwrap_or_else(|| site_path.clone());
    origin[bi].extend(std::iter::repeat_n(prologue_origin, prologue.len()));
    origin[bi].extend(entry_origin);
    block.instructions.extend(prologue);
    block.instructions.extend(entry);

    if single {
        block.instructions.extend(post);
        origin[bi].extend(post_origin);
        return Ok(());
    }

    let mut new_blocks: Vec<BasicBlock> = body;
    new_blocks.push(BasicBlock::new(cont, post));
    body_origin.push(post_origin);
    caller.blocks.splice(bi + 1..bi + 1, new_blocks);
    origin.splice(bi + 1..bi + 1, body_origin);
    Ok(())
}
