//! The textual intermediate representation all passes operate on.
//!
//! A module holds functions, a function holds basic blocks and a basic block
//! holds instructions, the last of which is its only terminator. Instrumented
//! modules additionally carry a region descriptor table that the `hook.*`
//! pseudo-ops refer to by id.

mod parse;
mod print;
mod validate;

use std::collections::BTreeSet;
use std::fmt;

pub use parse::{parse_module, ParseError, ParseErrorKind};
pub use print::print_module;
pub(crate) use print::quote;
pub use validate::{validate, Violation, ViolationKind};

/// Number of registers in every frame.
pub const NUM_REGS: usize = 16;
/// Maximum number of register arguments a call may pass.
pub const MAX_CALL_ARGS: usize = 8;

/// A register index in `0..NUM_REGS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Reg(u8);

impl Reg {
    pub fn new(index: u8) -> Option<Self> {
        ((index as usize) < NUM_REGS).then_some(Reg(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Every register of a frame, in ascending order.
    pub fn all() -> impl Iterator<Item = Reg> {
        (0..NUM_REGS as u8).map(Reg)
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Module-local identifier of a region descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionId(pub u32);

impl fmt::Display for RegionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Li {
        dst: Reg,
        imm: i64,
    },
    Addi {
        dst: Reg,
        src: Reg,
        imm: i64,
    },
    Add {
        dst: Reg,
        lhs: Reg,
        rhs: Reg,
    },
    /// Burns the given number of ticks.
    Work(u64),
    Call {
        callee: String,
        args: Vec<Reg>,
    },
    /// A call whose unwind edge lands in `unwind`; otherwise continues at `normal`.
    CallTry {
        callee: String,
        args: Vec<Reg>,
        normal: String,
        unwind: String,
    },
    Jmp(String),
    Jnz {
        cond: Reg,
        then: String,
        otherwise: String,
    },
    Ret(Option<Reg>),
    Throw,
    Rethrow,
    HookRegister(RegionId),
    HookEnter(RegionId),
    HookExit(RegionId),
}

impl Instruction {
    pub fn is_terminator(&self) -> bool {
        matches!(
            self,
            Instruction::CallTry { .. }
                | Instruction::Jmp(_)
                | Instruction::Jnz { .. }
                | Instruction::Ret(_)
                | Instruction::Throw
                | Instruction::Rethrow
        )
    }

    pub fn is_hook(&self) -> bool {
        matches!(self, Instruction::HookRegister(_) | Instruction::HookEnter(_) | Instruction::HookExit(_))
    }

    /// The callee name for `call` and `call.try`.
    pub fn callee(&self) -> Option<&str> {
        match self {
            Instruction::Call { callee, .. } | Instruction::CallTry { callee, .. } => Some(callee),
            _ => None,
        }
    }

    /// Branch targets named by this instruction, in operand order.
    pub fn successors(&self) -> Vec<&str> {
        match self {
            Instruction::CallTry { normal, unwind, .. } => vec![normal, unwind],
            Instruction::Jmp(target) => vec![target],
            Instruction::Jnz { then, otherwise, .. } => vec![then, otherwise],
            _ => Vec::new(),
        }
    }

    pub fn successors_mut(&mut self) -> Vec<&mut String> {
        match self {
            Instruction::CallTry { normal, unwind, .. } => vec![normal, unwind],
            Instruction::Jmp(target) => vec![target],
            Instruction::Jnz { then, otherwise, .. } => vec![then, otherwise],
            _ => Vec::new(),
        }
    }

    /// Registers read by this instruction.
    pub fn uses(&self) -> Vec<Reg> {
        match self {
            Instruction::Addi { src, .. } => vec![*src],
            Instruction::Add { lhs, rhs, .. } => vec![*lhs, *rhs],
            Instruction::Call { args, .. } | Instruction::CallTry { args, .. } => args.clone(),
            Instruction::Jnz { cond, .. } => vec![*cond],
            Instruction::Ret(Some(r)) => vec![*r],
            _ => Vec::new(),
        }
    }

    /// Register written by this instruction.
    pub fn def(&self) -> Option<Reg> {
        match self {
            Instruction::Li { dst, .. } | Instruction::Addi { dst, .. } | Instruction::Add { dst, .. } => Some(*dst),
            _ => None,
        }
    }

    /// Applies `f` to every register operand, reads and writes alike.
    pub fn map_regs(&mut self, mut f: impl FnMut(Reg) -> Reg) {
        match self {
            Instruction::Li { dst, .. } => *dst = f(*dst),
            Instruction::Addi { dst, src, .. } => {
                *src = f(*src);
                *dst = f(*dst);
            }
            Instruction::Add { dst, lhs, rhs } => {
                *lhs = f(*lhs);
                *rhs = f(*rhs);
                *dst = f(*dst);
            }
            Instruction::Call { args, .. } | Instruction::CallTry { args, .. } => {
                for a in args.iter_mut() {
                    *a = f(*a);
                }
            }
            Instruction::Jnz { cond, .. } => *cond = f(*cond),
            Instruction::Ret(Some(r)) => *r = f(*r),
            _ => {}
        }
    }

    pub fn region(&self) -> Option<RegionId> {
        match self {
            Instruction::HookRegister(id) | Instruction::HookEnter(id) | Instruction::HookExit(id) => Some(*id),
            _ => None,
        }
    }
}

/// Function attributes that steer instrumentation and inlining.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FunctionAttr {
    EmptyBody,
    Builtin,
    OpenmpInternal,
    Artificial,
    NoInline,
}

impl FunctionAttr {
    pub const ALL: [FunctionAttr; 5] = [
        FunctionAttr::EmptyBody,
        FunctionAttr::Builtin,
        FunctionAttr::OpenmpInternal,
        FunctionAttr::Artificial,
        FunctionAttr::NoInline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FunctionAttr::EmptyBody => "empty_body",
            FunctionAttr::Builtin => "builtin",
            FunctionAttr::OpenmpInternal => "openmp_internal",
            FunctionAttr::Artificial => "artificial",
            FunctionAttr::NoInline => "no_inline",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == name)
    }
}

impl fmt::Display for FunctionAttr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub label: String,
    pub instructions: Vec<Instruction>,
}

impl BasicBlock {
    pub fn new(label: impl Into<String>, instructions: Vec<Instruction>) -> Self {
        BasicBlock { label: label.into(), instructions }
    }

    pub fn terminator(&self) -> Option<&Instruction> {
        self.instructions.last().filter(|i| i.is_terminator())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IrFunction {
    pub mangled_name: String,
    /// Explicit human-readable name; derived by demangling when absent.
    pub demangled_name: Option<String>,
    pub file: String,
    pub begin_line: u32,
    pub end_line: u32,
    pub attrs: BTreeSet<FunctionAttr>,
    pub blocks: Vec<BasicBlock>,
    pub is_extern: bool,
}

impl IrFunction {
    pub fn new_extern(name: impl Into<String>) -> Self {
        IrFunction {
            mangled_name: name.into(),
            demangled_name: None,
            file: String::new(),
            begin_line: 0,
            end_line: 0,
            attrs: BTreeSet::new(),
            blocks: Vec::new(),
            is_extern: true,
        }
    }

    /// The name shown to users: the explicit pretty name or the demangled one.
    pub fn pretty_name(&self) -> String {
        match &self.demangled_name {
            Some(name) => name.clone(),
            None => crate::symbols::demangle(&self.mangled_name),
        }
    }

    pub fn has_attr(&self, attr: FunctionAttr) -> bool {
        self.attrs.contains(&attr)
    }

    /// True iff the body is a single block holding only a `ret`.
    pub fn body_is_empty(&self) -> bool {
        matches!(self.blocks.as_slice(), [b] if matches!(b.instructions.as_slice(), [Instruction::Ret(_)]))
    }

    /// Re-derives the `empty_body` attribute from the current body.
    pub fn refresh_empty_body(&mut self) {
        if !self.is_extern && self.body_is_empty() {
            self.attrs.insert(FunctionAttr::EmptyBody);
        } else {
            self.attrs.remove(&FunctionAttr::EmptyBody);
        }
    }

    pub fn block(&self, label: &str) -> Option<&BasicBlock> {
        self.blocks.iter().find(|b| b.label == label)
    }

    pub fn instructions(&self) -> impl Iterator<Item = &Instruction> {
        self.blocks.iter().flat_map(|b| b.instructions.iter())
    }

    pub fn instruction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.instructions.len()).sum()
    }

    pub fn contains_hooks(&self) -> bool {
        self.instructions().any(Instruction::is_hook)
    }

    /// Every register mentioned by the body.
    pub fn used_regs(&self) -> BTreeSet<Reg> {
        let mut regs = BTreeSet::new();
        for inst in self.instructions() {
            regs.extend(inst.uses());
            regs.extend(inst.def());
        }
        regs
    }

    /// Returns `base` if no block uses it, else the first `base.N` that is free.
    pub fn fresh_label(&self, base: &str) -> String {
        if self.block(base).is_none() {
            return base.to_string();
        }
        (1..).map(|n| format!("{base}.{n}")).find(|l| self.block(l).is_none()).expect("label space is unbounded")
    }
}

/// Static metadata for one instrumented function, registered lazily at runtime.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionDescriptor {
    pub region_id: RegionId,
    pub name: String,
    pub canonical_name: String,
    pub file: String,
    pub begin_lno: u32,
    pub end_lno: u32,
    pub flags: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IrModule {
    pub name: String,
    pub functions: Vec<IrFunction>,
    /// File recorded for functions whose header omits `file=`.
    pub source_file_default: String,
    /// Descriptor table emitted by the instrumentation pass.
    pub regions: Vec<RegionDescriptor>,
}

impl IrModule {
    pub fn new(name: impl Into<String>) -> Self {
        IrModule { name: name.into(), functions: Vec::new(), source_file_default: String::new(), regions: Vec::new() }
    }

    pub fn function(&self, name: &str) -> Option<&IrFunction> {
        self.functions.iter().find(|f| f.mangled_name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut IrFunction> {
        self.functions.iter_mut().find(|f| f.mangled_name == name)
    }

    pub fn region(&self, id: RegionId) -> Option<&RegionDescriptor> {
        self.regions.iter().find(|r| r.region_id == id)
    }

    /// True if the module carries a descriptor table or any hook pseudo-op.
    pub fn is_instrumented(&self) -> bool {
        !self.regions.is_empty() || self.functions.iter().any(IrFunction::contains_hooks)
    }
}

/// Characters allowed in function names and block labels.
pub(crate) fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '$')
}

pub(crate) fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || matches!(c, '_' | '.' | '$')
}

pub fn is_valid_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if is_ident_start(c)) && chars.all(is_ident_char)
}
