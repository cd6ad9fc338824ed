//! Random program generator shared by the integration tests.
//!
//! Programs are terminating by construction: calls only go to functions with
//! a larger index, loops have small constant trip counts, and the only
//! recursion is a self call guarded by a small non-negative counter.
#![allow(dead_code)]

use std::fmt::Write as _;

use instrumenta::ir::{parse_module, IrModule};
use instrumenta::monitor::TraceEvent;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

/// Data registers written by statements; r0 is left alone so recursion
/// counters stay intact.
const DATA_REGS: std::ops::Range<u8> = 1..9;

#[derive(Debug, Clone)]
pub enum Stmt {
    Work(u64),
    Set(u8, i64),
    Add(u8, u8),
    Call { target: usize, arg: u8 },
    CallExtern(u8),
    TryCall { target: usize, arg: u8, rethrow: bool },
    Loop { count: u8, body: Vec<Stmt> },
    ThrowIf(u8),
    Throw,
    ReturnIf(u8, u8),
}

#[derive(Debug, Clone)]
pub struct FuncSpec {
    pub recursive: bool,
    pub mangled: bool,
    pub attr: Option<&'static str>,
    pub file: u8,
    pub body: Vec<Stmt>,
    pub ret: Option<u8>,
}

#[derive(Debug, Clone)]
pub struct ProgramSpec {
    pub funcs: Vec<FuncSpec>,
}

fn simple_stmt() -> impl Strategy<Value = Stmt> {
    prop_oneof![
        3 => (1u64..6).prop_map(Stmt::Work),
        2 => (DATA_REGS, -3i64..4).prop_map(|(r, v)| Stmt::Set(r, v)),
        1 => (DATA_REGS, 0u8..9).prop_map(|(a, b)| Stmt::Add(a, b)),
        4 => (any::<usize>(), 0u8..9).prop_map(|(target, arg)| Stmt::Call { target, arg }),
        1 => (0u8..9).prop_map(Stmt::CallExtern),
        2 => (any::<usize>(), 0u8..9, any::<bool>())
            .prop_map(|(target, arg, rethrow)| Stmt::TryCall { target, arg, rethrow }),
        1 => (0u8..9).prop_map(Stmt::ThrowIf),
        1 => Just(Stmt::Throw),
        1 => (0u8..9, 0u8..9).prop_map(|(c, v)| Stmt::ReturnIf(c, v)),
    ]
}

fn stmt() -> impl Strategy<Value = Stmt> {
    prop_oneof![
        6 => simple_stmt(),
        1 => (1u8..4, prop::collection::vec(simple_stmt(), 1..4))
            .prop_map(|(count, body)| Stmt::Loop { count, body }),
    ]
}

fn func_spec() -> impl Strategy<Value = FuncSpec> {
    let attr = prop_oneof![
        12 => Just(None),
        1 => Just(Some("no_inline")),
        1 => Just(Some("artificial")),
        1 => Just(Some("builtin")),
    ];
    (
        prop::bool::weighted(0.2),
        prop::bool::weighted(0.7),
        attr,
        0u8..2,
        prop::collection::vec(stmt(), 0..6),
        prop::option::of(0u8..9),
    )
        .prop_map(|(recursive, mangled, attr, file, body, ret)| FuncSpec {
            recursive,
            mangled,
            attr,
            file,
            body,
            ret,
        })
}

pub fn program() -> impl Strategy<Value = ProgramSpec> {
    prop::collection::vec(func_spec(), 1..6).prop_map(|mut funcs| {
        funcs[0].recursive = false;
        ProgramSpec { funcs }
    })
}

/// Deterministic samples of `strategy`, independent of proptest's own seeding.
pub fn sample<T: std::fmt::Debug>(strategy: impl Strategy<Value = T>, n: usize, seed: u8) -> Vec<T> {
    let rng = TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]);
    let mut runner = TestRunner::new_with_rng(Config::default(), rng);
    (0..n).map(|_| strategy.new_tree(&mut runner).expect("strategy never rejects").current()).collect()
}

impl ProgramSpec {
    pub fn name(&self, i: usize) -> String {
        if i == 0 {
            "main".to_string()
        } else if self.funcs[i].mangled {
            format!("_Z{}f{i}i", format!("f{i}").len())
        } else {
            format!("f{i}")
        }
    }

    fn target(&self, i: usize, t: usize) -> Option<usize> {
        let later = self.funcs.len() - i - 1;
        (later > 0).then(|| i + 1 + t % later)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("module \"gen\" file=\"gen0.c\"\n\nextern @ext\n");
        for i in 0..self.funcs.len() {
            out.push('\n');
            out.push_str(&self.render_function(i));
        }
        out
    }

    pub fn module(&self) -> IrModule {
        let text = self.render();
        parse_module(&text).unwrap_or_else(|e| panic!("generated program does not parse: {e}\n{text}"))
    }

    fn render_function(&self, i: usize) -> String {
        let f = &self.funcs[i];
        let mut b = Builder { blocks: vec![("entry".into(), Vec::new())], serial: 0 };
        if f.recursive {
            b.emit("jnz r0, ^rec, ^body".into());
            b.start("rec".into());
            b.emit("addi r14, r0, -1".into());
            b.emit(format!("call @{}, r14", self.name(i)));
            b.emit("jmp ^body".into());
            b.start("body".into());
        }
        for s in &f.body {
            self.render_stmt(i, s, &mut b);
        }
        b.emit(match f.ret {
            Some(r) => format!("ret r{r}"),
            None => "ret".into(),
        });

        let mut text = format!("func @{} file=\"gen{}.c\" lines={}:{}", self.name(i), f.file, 10 * i + 1, 10 * i + 9);
        if let Some(a) = f.attr {
            write!(text, " attrs={a}").unwrap();
        }
        text.push_str("\n{\n");
        for (label, insts) in &b.blocks {
            writeln!(text, "^{label}:").unwrap();
            for inst in insts {
                writeln!(text, "  {inst}").unwrap();
            }
        }
        text.push_str("}\n");
        text
    }

    /// Emits a call, passing a small counter to recursive callees.
    fn call_operands(&self, j: usize, arg: u8, b: &mut Builder) -> String {
        if self.funcs[j].recursive {
            b.emit(format!("li r13, {}", arg % 3));
            format!("@{}, r13", self.name(j))
        } else {
            format!("@{}, r{arg}", self.name(j))
        }
    }

    fn render_stmt(&self, i: usize, s: &Stmt, b: &mut Builder) {
        match s {
            Stmt::Work(n) => b.emit(format!("work {n}")),
            Stmt::Set(r, v) => b.emit(format!("li r{r}, {v}")),
            Stmt::Add(a, c) => b.emit(format!("add r{a}, r{a}, r{c}")),
            Stmt::Call { target, arg } => match self.target(i, *target) {
                Some(j) => {
                    let ops = self.call_operands(j, *arg, b);
                    b.emit(format!("call {ops}"));
                }
                None => b.emit("work 1".into()),
            },
            Stmt::CallExtern(arg) => b.emit(format!("call @ext, r{arg}")),
            Stmt::TryCall { target, arg, rethrow } => match self.target(i, *target) {
                Some(j) => {
                    let ops = self.call_operands(j, *arg, b);
                    let ok = b.fresh("ok");
                    let handler = b.fresh("h");
                    b.emit(format!("call.try {ops}, ^{ok}, ^{handler}"));
                    b.start(handler);
                    b.emit("work 1".into());
                    b.emit(if *rethrow { "rethrow".into() } else { format!("jmp ^{ok}") });
                    b.start(ok);
                }
                None => b.emit("work 2".into()),
            },
            Stmt::Loop { count, body } => {
                let head = b.fresh("loop");
                let exit = b.fresh("exit");
                b.emit(format!("li r15, {count}"));
                b.emit(format!("jmp ^{head}"));
                b.start(head.clone());
                for s in body {
                    self.render_stmt(i, s, b);
                }
                b.emit("addi r15, r15, -1".into());
                b.emit(format!("jnz r15, ^{head}, ^{exit}"));
                b.start(exit);
            }
            Stmt::ThrowIf(r) => {
                let t = b.fresh("throw");
                let c = b.fresh("cont");
                b.emit(format!("jnz r{r}, ^{t}, ^{c}"));
                b.start(t);
                b.emit("throw".into());
                b.start(c);
            }
            Stmt::Throw => {
                // code after an unconditional throw is unreachable but still valid
                let dead = b.fresh("dead");
                b.emit("throw".into());
                b.start(dead);
            }
            Stmt::ReturnIf(c, v) => {
                let r = b.fresh("early");
                let k = b.fresh("cont");
                b.emit(format!("jnz r{c}, ^{r}, ^{k}"));
                b.start(r);
                b.emit(format!("ret r{v}"));
                b.start(k);
            }
        }
    }
}

struct Builder {
    blocks: Vec<(String, Vec<String>)>,
    serial: usize,
}

impl Builder {
    fn emit(&mut self, inst: String) {
        self.blocks.last_mut().expect("builder starts with a block").1.push(inst);
    }

    fn start(&mut self, label: String) {
        self.blocks.push((label, Vec::new()));
    }

    fn fresh(&mut self, prefix: &str) -> String {
        self.serial += 1;
        format!("{prefix}{}", self.serial)
    }
}

/// Rewrites the layout of IR text without changing its meaning: extra
/// blanks, comment lines and trailing comments.
pub fn fuzz_layout(text: &str, seed: u64) -> String {
    let mut state = seed | 1;
    let mut next = move || {
        // xorshift64
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let mut out = String::new();
    for line in text.lines() {
        match next() % 6 {
            0 => out.push_str("; noise\n"),
            1 => out.push('\n'),
            _ => {}
        }
        let indent = " ".repeat((next() % 4) as usize);
        let spaced = if next() % 2 == 0 && !line.contains('"') { line.replace(", ", " ,  ") } else { line.to_string() };
        out.push_str(&indent);
        out.push_str(spaced.trim_start());
        if next() % 4 == 0 {
            out.push_str("   ; trailing");
        }
        out.push('\n');
    }
    out
}

pub fn enters(events: &[TraceEvent]) -> usize {
    events.iter().filter(|e| matches!(e, TraceEvent::Enter { .. })).count()
}

pub fn exits(events: &[TraceEvent]) -> usize {
    events.iter().filter(|e| matches!(e, TraceEvent::Exit { .. })).count()
}

/// Enter count equals exit count for every handle.
pub fn balanced_per_region(events: &[TraceEvent]) -> bool {
    let mut net = std::collections::HashMap::new();
    for e in events {
        match e {
            TraceEvent::Enter { handle, .. } => *net.entry(*handle).or_insert(0i64) += 1,
            TraceEvent::Exit { handle, .. } => *net.entry(*handle).or_insert(0i64) -= 1,
            TraceEvent::Definition { .. } => {}
        }
    }
    net.values().all(|&n| n == 0)
}
