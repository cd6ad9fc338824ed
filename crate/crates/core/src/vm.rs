//! A deterministic interpreter that charges ticks per instruction and drives
//! the measurement runtime from the hook pseudo-ops.

use std::collections::HashMap;

use thiserror::Error;

use crate::filter::FilterRuleSet;
use crate::ir::{validate, Instruction, IrModule, RegionDescriptor, Violation, NUM_REGS};
use crate::monitor::{Monitor, MonitorError, RegionHandle, TraceEvent};

pub const DEFAULT_STEP_LIMIT: u64 = 100_000_000;

pub type Value = i64;

/// Tick prices. Every instruction not listed costs `base`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel {
    pub base: u64,
    /// Price of a call into an `extern` function (the callee does not run).
    pub extern_call: u64,
    /// Price of the handle check done by every enter and exit hook.
    pub hook_guard: u64,
    /// Additional price when an enter or exit is actually recorded.
    pub hook_event: u64,
    /// Additional price of the first execution of a region's registration.
    pub hook_register_first: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { base: 1, extern_call: 5, hook_guard: 1, hook_event: 20, hook_register_first: 10 }
    }
}

impl CostModel {
    /// Recording an event must cost more than skipping it.
    pub fn validate(&self) -> Result<(), VmError> {
        if self.hook_event == 0 || self.hook_event <= self.hook_guard {
            return Err(VmError::BadCostModel(format!(
                "hook_event ({}) must exceed hook_guard ({})",
                self.hook_event, self.hook_guard
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunConfig {
    pub entry: String,
    pub cost: CostModel,
    pub runtime_filter: FilterRuleSet,
    pub step_limit: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            entry: "main".into(),
            cost: CostModel::default(),
            runtime_filter: FilterRuleSet::default(),
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitValue {
    Value(Value),
    /// An exception escaped the entry function.
    Uncaught,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    pub exit: ExitValue,
    pub total_ticks: u64,
    pub steps: u64,
    pub events: Vec<TraceEvent>,
    /// Deepest call stack reached, counting the entry frame.
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmError {
    #[error("invalid module: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidModule(Vec<Violation>),
    #[error("entry function `{0}` not found")]
    NoEntry(String),
    #[error("entry function `{0}` is extern")]
    ExternEntry(String),
    #[error("step limit of {0} instructions exceeded")]
    StepLimit(u64),
    #[error("{0}")]
    BadCostModel(String),
    #[error("monitor: {0}")]
    Monitor(#[from] MonitorError),
}

enum Op {
    Li(usize, Value),
    Addi(usize, usize, Value),
    Add(usize, usize, usize),
    Work(u64),
    Call { callee: usize, args: Vec<usize>, edges: Option<(usize, usize)> },
    Jmp(usize),
    Jnz(usize, usize, usize),
    Ret(Option<usize>),
    Throw,
    HookRegister(usize),
    HookEnter(usize),
    HookExit(usize),
}

struct Func {
    is_extern: bool,
    blocks: Vec<Vec<Op>>,
}

struct Program {
    funcs: Vec<Func>,
    regions: Vec<RegionDescriptor>,
}

fn lower(m: &IrModule) -> Program {
    let func_index: HashMap<&str, usize> =
        m.functions.iter().enumerate().map(|(i, f)| (f.mangled_name.as_str(), i)).collect();
    let region_index: HashMap<_, usize> = m.regions.iter().enumerate().map(|(i, r)| (r.region_id, i)).collect();
    let funcs = m
        .functions
        .iter()
        .map(|f| {
            let labels: HashMap<&str, usize> =
                f.blocks.iter().enumerate().map(|(i, b)| (b.label.as_str(), i)).collect();
            let blocks = f
                .blocks
                .iter()
                .map(|b| {
                    b.instructions
                        .iter()
                        .map(|inst| match inst {
                            Instruction::Li { dst, imm } => Op::Li(dst.index(), *imm),
                            Instruction::Addi { dst, src, imm } => Op::Addi(dst.index(), src.index(), *imm),
                            Instruction::Add { dst, lhs, rhs } => Op::Add(dst.index(), lhs.index(), rhs.index()),
                            Instruction::Work(n) => Op::Work(*n),
                            Instruction::Call { callee, args } => Op::Call {
                                callee: func_index[callee.as_str()],
                                args: args.iter().map(|r| r.index()).collect(),
                                edges: None,
                            },
                            Instruction::CallTry { callee, args, normal, unwind } => Op::Call {
                                callee: func_index[callee.as_str()],
                                args: args.iter().map(|r| r.index()).collect(),
                                edges: Some((labels[normal.as_str()], labels[unwind.as_str()])),
                            },
                            Instruction::Jmp(l) => Op::Jmp(labels[l.as_str()]),
                            Instruction::Jnz { cond, then, otherwise } => {
                                Op::Jnz(cond.index(), labels[then.as_str()], labels[otherwise.as_str()])
                            }
                            Instruction::Ret(r) => Op::Ret(r.map(|r| r.index())),
                            Instruction::Throw | Instruction::Rethrow => Op::Throw,
                            Instruction::HookRegister(id) => Op::HookRegister(region_index[id]),
                            Instruction::HookEnter(id) => Op::HookEnter(region_index[id]),
                            Instruction::HookExit(id) => Op::HookExit(region_index[id]),
                        })
                        .collect()
                })
                .collect();
            Func { is_extern: f.is_extern, blocks }
        })
        .collect();
    Program { funcs, regions: m.regions.clone() }
}

struct Frame {
    func: usize,
    block: usize,
    ip: usize,
    regs: [Value; NUM_REGS],
}

/// Runs `m` from `config.entry`.
///
/// Arguments are copied into the callee's first registers and every other
/// register starts at zero. A call's result is discarded; only the entry
/// function's return value is reported. Exceptions unwind to the nearest
/// frame suspended in a `call.try`.
pub fn execute(m: &IrModule, config: &RunConfig) -> Result<ExecutionResult, VmError> {
    config.cost.validate()?;
    let violations = validate(m);
    if !violations.is_empty() {
        return Err(VmError::InvalidModule(violations));
    }
    let entry = m
        .functions
        .iter()
        .position(|f| f.mangled_name == config.entry)
        .ok_or_else(|| VmError::NoEntry(config.entry.clone()))?;
    if m.functions[entry].is_extern {
        return Err(VmError::ExternEntry(config.entry.clone()));
    }

    let program = lower(m);
    let cost = config.cost;
    let mut monitor = Monitor::new(config.runtime_filter.clone());
    // the per-region guard variable the hook sequence tests
    let mut handles = vec![RegionHandle::INVALID; program.regions.len()];
    let mut ticks: u64 = 0;
    let mut steps: u64 = 0;
    let mut stack = vec![Frame { func: entry, block: 0, ip: 0, regs: [0; NUM_REGS] }];
    let mut max_depth = 1;

    let exit = 'run: loop {
        steps += 1;
        if steps > config.step_limit {
            return Err(VmError::StepLimit(config.step_limit));
        }
        let frame = stack.last_mut().expect("stack is never empty while running");
        let op = &program.funcs[frame.func].blocks[frame.block][frame.ip];
        frame.ip += 1;
        match op {
            Op::Li(d, v) => {
                ticks += cost.base;
                frame.regs[*d] = *v;
            }
            Op::Addi(d, s, v) => {
                ticks += cost.base;
                frame.regs[*d] = frame.regs[*s].wrapping_add(*v);
            }
            Op::Add(d, a, b) => {
                ticks += cost.base;
                frame.regs[*d] = frame.regs[*a].wrapping_add(frame.regs[*b]);
            }
            Op::Work(n) => ticks += n,
            Op::Jmp(b) => {
                ticks += cost.base;
                frame.block = *b;
                frame.ip = 0;
            }
            Op::Jnz(c, t, e) => {
                ticks += cost.base;
                frame.block = if frame.regs[*c] != 0 { *t } else { *e };
                frame.ip = 0;
            }
            Op::Call { callee, args, edges } => {
                if program.funcs[*callee].is_extern {
                    ticks += cost.extern_call;
                    if let Some((normal, _)) = edges {
                        frame.block = *normal;
                        frame.ip = 0;
                    }
                    continue;
                }
                ticks += cost.base;
                let mut regs = [0; NUM_REGS];
                for (slot, &a) in regs.iter_mut().zip(args) {
                    *slot = frame.regs[a];
                }
                stack.push(Frame { func: *callee, block: 0, ip: 0, regs });
                max_depth = max_depth.max(stack.len());
            }
            Op::Ret(r) => {
                ticks += cost.base;
                let value = r.map_or(0, |r| frame.regs[r]);
                stack.pop();
                let Some(caller) = stack.last_mut() else {
                    break 'run ExitValue::Value(value);
                };
                if let Op::Call { edges: Some((normal, _)), .. } =
                    &program.funcs[caller.func].blocks[caller.block][caller.ip - 1]
                {
                    caller.block = *normal;
                    caller.ip = 0;
                }
            }
            Op::Throw => {
                ticks += cost.base;
                loop {
                    stack.pop();
                    let Some(caller) = stack.last_mut() else {
                        break 'run ExitValue::Uncaught;
                    };
                    if let Op::Call { edges: Some((_, unwind)), .. } =
                        &program.funcs[caller.func].blocks[caller.block][caller.ip - 1]
                    {
                        caller.block = *unwind;
                        caller.ip = 0;
                        break;
                    }
                }
            }
            Op::HookRegister(r) => {
                ticks += cost.base;
                if handles[*r] == RegionHandle::INVALID {
                    ticks += cost.hook_register_first;
                    handles[*r] = monitor.register(&program.regions[*r]);
                }
            }
            Op::HookEnter(r) => {
                let ts = ticks;
                ticks += cost.hook_guard;
                if monitor.on_enter(handles[*r], ts)? {
                    ticks += cost.hook_event;
                }
            }
            Op::HookExit(r) => {
                let ts = ticks;
                ticks += cost.hook_guard;
                if monitor.on_exit(handles[*r], ts)? {
                    ticks += cost.hook_event;
                }
            }
        }
    };

    Ok(ExecutionResult { exit, total_ticks: ticks, steps, events: monitor.finish()?, max_depth })
}
