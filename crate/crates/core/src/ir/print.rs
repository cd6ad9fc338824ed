use std::fmt::Write;

use super::{Instruction, IrFunction, IrModule, RegionDescriptor};

/// Renders a module in the canonical text form accepted by `parse_module`.
pub fn print_module(m: &IrModule) -> String {
    let mut out = String::new();
    write!(out, "module {}", quote(&m.name)).unwrap();
    if !m.source_file_default.is_empty() {
        write!(out, " file={}", quote(&m.source_file_default)).unwrap();
    }
    out.push('\n');
    for f in &m.functions {
        out.push('\n');
        print_function(&mut out, f);
    }
    if !m.regions.is_empty() {
        out.push_str("\nregions:\n");
        for r in &m.regions {
            print_region(&mut out, r);
        }
    }
    out
}

pub(crate) fn quote(s: &str) -> String {
    let mut q = String::with_capacity(s.len() + 2);
    q.push('"');
    for c in s.chars() {
        match c {
            '"' => q.push_str("\\\""),
            '\\' => q.push_str("\\\\"),
            '\n' => q.push_str("\\n"),
            c => q.push(c),
        }
    }
    q.push('"');
    q
}

fn print_function(out: &mut String, f: &IrFunction) {
    if f.is_extern {
        writeln!(out, "extern @{}", f.mangled_name).unwrap();
        return;
    }
    write!(out, "func @{}", f.mangled_name).unwrap();
    if let Some(p) = &f.demangled_name {
        write!(out, " pretty={}", quote(p)).unwrap();
    }
    write!(out, " file={} lines={}:{}", quote(&f.file), f.begin_line, f.end_line).unwrap();
    if !f.attrs.is_empty() {
        let attrs: Vec<&str> = f.attrs.iter().map(|a| a.as_str()).collect();
        write!(out, " attrs={}", attrs.join(",")).unwrap();
    }
    out.push_str("\n{\n");
    for b in &f.blocks {
        writeln!(out, "^{}:", b.label).unwrap();
        for i in &b.instructions {
            writeln!(out, "  {i}").unwrap();
        }
    }
    out.push_str("}\n");
}

fn print_region(out: &mut String, r: &RegionDescriptor) {
    writeln!(
        out,
        "region {} name={} canonical={} file={} lines={}:{} flags={}",
        r.region_id,
        quote(&r.name),
        quote(&r.canonical_name),
        quote(&r.file),
        r.begin_lno,
        r.end_lno,
        r.flags
    )
    .unwrap();
}

impl std::fmt::Display for Instruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let args = |args: &[super::Reg]| -> String { args.iter().map(|a| format!(", {a}")).collect() };
        match self {
            Instruction::Li { dst, imm } => write!(f, "li {dst}, {imm}"),
            Instruction::Addi { dst, src, imm } => write!(f, "addi {dst}, {src}, {imm}"),
            Instruction::Add { dst, lhs, rhs } => write!(f, "add {dst}, {lhs}, {rhs}"),
            Instruction::Work(n) => write!(f, "work {n}"),
            Instruction::Call { callee, args: a } => write!(f, "call @{callee}{}", args(a)),
            Instruction::CallTry { callee, args: a, normal, unwind } => {
                write!(f, "call.try @{callee}{}, ^{normal}, ^{unwind}", args(a))
            }
            Instruction::Jmp(l) => write!(f, "jmp ^{l}"),
            Instruction::Jnz { cond, then, otherwise } => write!(f, "jnz {cond}, ^{then}, ^{otherwise}"),
            Instruction::Ret(None) => f.write_str("ret"),
            Instruction::Ret(Some(r)) => write!(f, "ret {r}"),
            Instruction::Throw => f.write_str("throw"),
            Instruction::Rethrow => f.write_str("rethrow"),
            Instruction::HookRegister(id) => write!(f, "hook.register {id}"),
            Instruction::HookEnter(id) => write!(f, "hook.enter {id}"),
            Instruction::HookExit(id) => write!(f, "hook.exit {id}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    #[test]
    fn empty_module_prints_header_only() {
        assert_eq!(print_module(&IrModule::new("m")), "module \"m\"\n");
    }

    #[test]
    fn printing_is_idempotent() {
        let text = "module \"m\"   file=\"x.c\"\n; c\nextern @puts\nfunc @f pretty=\"f \\\"q\\\"\" lines=1:4 attrs=no_inline,builtin {\n^e:\n li r1,2\n  call @puts , r1\n  ret r1\n}\n";
        let once = print_module(&parse_module(text).unwrap());
        let twice = print_module(&parse_module(&once).unwrap());
        assert_eq!(once, twice);
        assert!(once.contains("attrs=builtin,no_inline"));
        assert!(once.contains("file=\"x.c\" lines=1:4"));
    }
}
