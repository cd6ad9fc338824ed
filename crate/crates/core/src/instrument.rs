//! The function instrumentation pass.
//!
//! Each selected function gets a static region descriptor and a guarded entry
//! sequence (`hook.register` then `hook.enter`) in its first block. The rest
//! of the body is rewritten so that every way out of the function passes
//! through exactly one exit hook:
//!
//! * returns jump to a single `^__fin_ret` block (`hook.exit; ret`),
//! * throws, rethrows and unwinding calls land in `^__fin_unwind`
//!   (`hook.exit; rethrow`).
//!
//! User `call.try` handlers stay inside the function, so a caught exception
//! does not exit the region.

use std::collections::HashSet;
use std::fmt;

use thiserror::Error;

use crate::filter::{classify, FilterRuleSet, MatchDecision};
pub use crate::ir::RegionDescriptor;
use crate::ir::{validate, BasicBlock, FunctionAttr, Instruction, IrFunction, IrModule, Reg, RegionId, Violation};
use crate::optimizer::{inline_pass, InlineReport, OptError, OptLevel};

pub const FIN_RET_LABEL: &str = "__fin_ret";
pub const FIN_UNWIND_LABEL: &str = "__fin_unwind";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InstrumentationMode {
    /// Every function, before inlining, without compile-time filters.
    Auto,
    /// After inlining, honouring compile-time filters.
    Plugin,
}

impl fmt::Display for InstrumentationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InstrumentationMode::Auto => "auto",
            InstrumentationMode::Plugin => "plugin",
        })
    }
}

impl std::str::FromStr for InstrumentationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(InstrumentationMode::Auto),
            "plugin" => Ok(InstrumentationMode::Plugin),
            _ => Err(format!("unknown instrumentation mode `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkipReason {
    Extern,
    EmptyBody,
    Builtin,
    OpenmpInternal,
    Artificial,
    CompileTimeFilter(MatchDecision),
}

impl fmt::Display for SkipReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SkipReason::Extern => f.write_str("extern"),
            SkipReason::EmptyBody => f.write_str("empty_body"),
            SkipReason::Builtin => f.write_str("builtin"),
            SkipReason::OpenmpInternal => f.write_str("openmp_internal"),
            SkipReason::Artificial => f.write_str("artificial"),
            SkipReason::CompileTimeFilter(d) => match d.deciding_rule {
                Some(rule) => write!(f, "compile_time_filter({rule}: {})", d.reason),
                None => write!(f, "compile_time_filter({})", d.reason),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decision {
    Instrument,
    Skip(SkipReason),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstrumentationReport {
    pub instrumented: Vec<(String, RegionId)>,
    pub skipped: Vec<(String, SkipReason)>,
    pub inline: InlineReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InstrumentError {
    #[error("invalid module: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidModule(Vec<Violation>),
    #[error("`{0}` is already instrumented")]
    AlreadyInstrumented(String),
    #[error("module is already instrumented")]
    ModuleAlreadyInstrumented,
    #[error("malformed function `{function}`: {detail}")]
    Malformed { function: String, detail: String },
    #[error(transparent)]
    Optimizer(#[from] OptError),
}

/// Decides whether `f` receives hooks.
pub fn should_instrument(f: &IrFunction, rules: &FilterRuleSet, mode: InstrumentationMode) -> Decision {
    if f.is_extern {
        return Decision::Skip(SkipReason::Extern);
    }
    for (attr, reason) in [
        (FunctionAttr::EmptyBody, SkipReason::EmptyBody),
        (FunctionAttr::Builtin, SkipReason::Builtin),
        (FunctionAttr::OpenmpInternal, SkipReason::OpenmpInternal),
        (FunctionAttr::Artificial, SkipReason::Artificial),
    ] {
        if f.has_attr(attr) {
            return Decision::Skip(reason);
        }
    }
    if mode == InstrumentationMode::Plugin {
        let decision = classify(rules, &f.mangled_name, &f.pretty_name(), &f.file);
        if decision.is_filtered() {
            return Decision::Skip(SkipReason::CompileTimeFilter(decision));
        }
    }
    Decision::Instrument
}

pub fn make_region_descriptor(f: &IrFunction, region_id: RegionId) -> RegionDescriptor {
    RegionDescriptor {
        region_id,
        name: f.pretty_name(),
        canonical_name: f.mangled_name.clone(),
        file: f.file.clone(),
        begin_lno: f.begin_line,
        end_lno: f.end_line,
        flags: 0,
    }
}

fn malformed(f: &IrFunction, detail: impl Into<String>) -> InstrumentError {
    InstrumentError::Malformed { function: f.mangled_name.clone(), detail: detail.into() }
}

/// Inserts `hook.register; hook.enter` into the entry block: before its first
/// call if it has one, otherwise right before its terminator.
pub fn insert_entry_hook(f: &IrFunction, region_id: RegionId) -> Result<IrFunction, InstrumentError> {
    if f.is_extern {
        return Err(malformed(f, "extern functions have no body"));
    }
    if f.contains_hooks() {
        return Err(InstrumentError::AlreadyInstrumented(f.mangled_name.clone()));
    }
    let mut out = f.clone();
    let entry = out.blocks.first_mut().ok_or_else(|| malformed(f, "no blocks"))?;
    let at = match entry.instructions.iter().position(|i| i.callee().is_some()) {
        Some(call) => call,
        None => {
            if entry.terminator().is_none() {
                return Err(malformed(f, "entry block has no terminator"));
            }
            entry.instructions.len() - 1
        }
    };
    entry.instructions.splice(at..at, [Instruction::HookRegister(region_id), Instruction::HookEnter(region_id)]);
    Ok(out)
}

/// Routes every exit of `f` through a single exit hook per path.
///
/// `is_extern` tells which callees cannot unwind; calls to everything else
/// become `call.try` with an unwind edge into the finally block.
pub fn enforce_finally(
    f: &IrFunction,
    region_id: RegionId,
    is_extern: impl Fn(&str) -> bool,
) -> Result<IrFunction, InstrumentError> {
    let entry = f.blocks.first().ok_or_else(|| malformed(f, "no blocks"))?;
    if !entry.instructions.contains(&Instruction::HookEnter(region_id)) {
        return Err(malformed(f, "entry hook missing"));
    }
    if f.instructions().any(|i| matches!(i, Instruction::HookExit(_))) {
        return Err(InstrumentError::AlreadyInstrumented(f.mangled_name.clone()));
    }

    let ret_operands: HashSet<Option<Reg>> = f
        .instructions()
        .filter_map(|i| match i {
            Instruction::Ret(r) => Some(*r),
            _ => None,
        })
        .collect();
    // a shared return register is only needed when the returns disagree
    let (final_ret, result_reg) = match ret_operands.len() {
        0 => (None, None),
        1 => (ret_operands.into_iter().next().unwrap(), None),
        _ => {
            let used = f.used_regs();
            let d = Reg::all()
                .find(|r| !used.contains(r))
                .ok_or_else(|| malformed(f, "no free register for the return value"))?;
            (Some(d), Some(d))
        }
    };

    let mut taken: HashSet<String> = f.blocks.iter().map(|b| b.label.clone()).collect();
    let mut fresh = |base: String| {
        let mut label = base.clone();
        let mut n = 1;
        while taken.contains(&label) {
            label = format!("{base}.{n}");
            n += 1;
        }
        taken.insert(label.clone());
        label
    };
    let fin_ret = fresh(FIN_RET_LABEL.to_string());
    let fin_unwind = fresh(FIN_UNWIND_LABEL.to_string());

    let mut blocks = Vec::with_capacity(f.blocks.len() + 2);
    for block in &f.blocks {
        let mut current = BasicBlock::new(block.label.clone(), Vec::new());
        let mut splits = 0;
        for inst in &block.instructions {
            match inst {
                Instruction::Call { callee, args } if !is_extern(callee) => {
                    splits += 1;
                    let cont = fresh(format!("{}.k{splits}", block.label));
                    current.instructions.push(Instruction::CallTry {
                        callee: callee.clone(),
                        args: args.clone(),
                        normal: cont.clone(),
                        unwind: fin_unwind.clone(),
                    });
                    blocks.push(std::mem::replace(&mut current, BasicBlock::new(cont, Vec::new())));
                }
                Instruction::Ret(value) => {
                    if let Some(d) = result_reg {
                        current.instructions.push(match value {
                            Some(src) => Instruction::Addi { dst: d, src: *src, imm: 0 },
                            None => Instruction::Li { dst: d, imm: 0 },
                        });
                    }
                    current.instructions.push(Instruction::Jmp(fin_ret.clone()));
                }
                Instruction::Throw | Instruction::Rethrow => {
                    current.instructions.push(Instruction::Jmp(fin_unwind.clone()));
                }
                other => current.instructions.push(other.clone()),
            }
        }
        blocks.push(current);
    }
    blocks.push(BasicBlock::new(fin_ret, vec![Instruction::HookExit(region_id), Instruction::Ret(final_ret)]));
    blocks.push(BasicBlock::new(fin_unwind, vec![Instruction::HookExit(region_id), Instruction::Rethrow]));

    let mut out = f.clone();
    out.blocks = blocks;
    out.refresh_empty_body();
    Ok(out)
}

/// Entry hook plus finally restructuring.
pub fn instrument_function(
    f: &IrFunction,
    region_id: RegionId,
    is_extern: impl Fn(&str) -> bool,
) -> Result<IrFunction, InstrumentError> {
    enforce_finally(&insert_entry_hook(f, region_id)?, region_id, is_extern)
}

fn instrument_functions(
    m: &IrModule,
    rules: &FilterRuleSet,
    mode: InstrumentationMode,
    report: &mut InstrumentationReport,
) -> Result<IrModule, InstrumentError> {
    let externs: HashSet<&str> = m.functions.iter().filter(|f| f.is_extern).map(|f| f.mangled_name.as_str()).collect();
    let mut out = m.clone();
    let mut next_id = 0u32;
    for f in out.functions.iter_mut() {
        match should_instrument(f, rules, mode) {
            Decision::Instrument => {
                let id = RegionId(next_id);
                next_id += 1;
                out.regions.push(make_region_descriptor(f, id));
                *f = instrument_function(f, id, |name| externs.contains(name))?;
                report.instrumented.push((f.mangled_name.clone(), id));
            }
            Decision::Skip(reason) => report.skipped.push((f.mangled_name.clone(), reason)),
        }
    }
    Ok(out)
}

/// Runs the whole pipeline for one mode and level.
///
/// Plugin mode inlines first and instruments what is left, applying `rules`.
/// Auto mode instruments every eligible function first, ignoring `rules`, and
/// inlines afterwards.
pub fn instrument_module(
    m: &IrModule,
    rules: &FilterRuleSet,
    mode: InstrumentationMode,
    level: OptLevel,
) -> Result<(IrModule, InstrumentationReport, Vec<RegionDescriptor>), InstrumentError> {
    let violations = validate(m);
    if !violations.is_empty() {
        return Err(InstrumentError::InvalidModule(violations));
    }
    if m.is_instrumented() {
        return Err(InstrumentError::ModuleAlreadyInstrumented);
    }
    let mut report = InstrumentationReport::default();
    let out = match mode {
        InstrumentationMode::Plugin => {
            let (optimized, inline) = inline_pass(m, level)?;
            report.inline = inline;
            instrument_functions(&optimized, rules, mode, &mut report)?
        }
        InstrumentationMode::Auto => {
            let instrumented = instrument_functions(m, &FilterRuleSet::default(), mode, &mut report)?;
            let (optimized, inline) = inline_pass(&instrumented, level)?;
            report.inline = inline;
            optimized
        }
    };
    let regions = out.regions.clone();
    Ok((out, report, regions))
}
