//! Line-oriented parser for the textual IR.

use std::collections::{BTreeSet, HashMap, HashSet};

use thiserror::Error;

use super::{
    is_ident_char, is_ident_start, validate, BasicBlock, FunctionAttr, Instruction, IrFunction, IrModule, Reg,
    RegionDescriptor, RegionId, Violation, MAX_CALL_ARGS,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {kind}")]
pub struct ParseError {
    /// 1-based; 0 when the error is not tied to a location.
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("duplicate function name `{0}`")]
    DuplicateFunction(String),
    #[error("undefined call target `{0}`")]
    UndefinedCallee(String),
    #[error("undefined branch label `{0}`")]
    UndefinedLabel(String),
    #[error("invalid module: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Parses and validates a module.
pub fn parse_module(text: &str) -> Result<IrModule, ParseError> {
    let parsed = Parser::default().run(text)?;
    parsed.resolve()?;
    let violations = validate(&parsed.module);
    if !violations.is_empty() {
        return Err(ParseError { line: 0, column: 0, kind: ParseErrorKind::Invalid(violations) });
    }
    Ok(parsed.module)
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Global(String),
    Label(String),
    Str(String),
    Int(i64),
    Word(String),
    Punct(char),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    col: usize,
}

fn err(line: usize, column: usize, msg: impl Into<String>) -> ParseError {
    ParseError { line, column, kind: ParseErrorKind::Syntax(msg.into()) }
}

fn lex_line(line: &str, lno: usize) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c == ';' {
            break;
        } else if c == '"' {
            let mut s = String::new();
            i += 1;
            loop {
                match chars.get(i) {
                    None => return Err(err(lno, col, "unterminated string")),
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => {
                        match chars.get(i + 1) {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            _ => return Err(err(lno, i + 1, "bad escape in string")),
                        }
                        i += 2;
                    }
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            out.push(Token { tok: Tok::Str(s), col });
        } else if c == '@' || c == '^' {
            let start = i + 1;
            let mut j = start;
            if j < chars.len() && is_ident_start(chars[j]) {
                j += 1;
                while j < chars.len() && is_ident_char(chars[j]) {
                    j += 1;
                }
            }
            if j == start {
                return Err(err(lno, col, format!("expected identifier after `{c}`")));
            }
            let name: String = chars[start..j].iter().collect();
            out.push(Token { tok: if c == '@' { Tok::Global(name) } else { Tok::Label(name) }, col });
            i = j;
        } else if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            let text: String = chars[i..j].iter().collect();
            let value = text.parse::<i64>().map_err(|_| err(lno, col, format!("integer out of range: {text}")))?;
            out.push(Token { tok: Tok::Int(value), col });
            i = j;
        } else if is_ident_start(c) {
            let mut j = i + 1;
            while j < chars.len() && is_ident_char(chars[j]) {
                j += 1;
            }
            out.push(Token { tok: Tok::Word(chars[i..j].iter().collect()), col });
            i = j;
        } else if matches!(c, ',' | ':' | '=' | '{' | '}') {
            out.push(Token { tok: Tok::Punct(c), col });
            i += 1;
        } else {
            return Err(err(lno, col, format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

/// Cursor over the tokens of one line.
struct Line<'a> {
    toks: &'a [Token],
    pos: usize,
    lno: usize,
    len: usize,
}

impl<'a> Line<'a> {
    fn new(toks: &'a [Token], lno: usize, len: usize) -> Self {
        Line { toks, pos: 0, lno, len }
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.len + 1, |t| t.col)
    }

    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(err(self.lno, self.col(), msg))
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn next(&mut self) -> Option<&Tok> {
        let t = self.toks.get(self.pos).map(|t| &t.tok);
        self.pos += 1;
        t
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn expect_end(&self) -> Result<(), ParseError> {
        if self.at_end() {
            Ok(())
        } else {
            self.fail("unexpected trailing tokens")
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Punct(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn punct(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat_punct(c) {
            Ok(())
        } else {
            self.fail(format!("expected `{c}`"))
        }
    }

    fn word(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Word(w)) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => self.fail(format!("expected {what}")),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(Tok::Word(w)) if w == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => self.fail(format!("expected `{kw}`")),
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.fail("expected quoted string"),
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => self.fail("expected integer"),
        }
    }

    fn uint<T: TryFrom<i64>>(&mut self, what: &str) -> Result<T, ParseError> {
        let col = self.col();
        let v = self.int()?;
        T::try_from(v).map_err(|_| err(self.lno, col, format!("{what} out of range: {v}")))
    }

    fn global(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Global(g)) => {
                let g = g.clone();
                self.pos += 1;
                Ok(g)
            }
            _ => self.fail("expected `@name`"),
        }
    }

    fn label(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Label(l)) => {
                let l = l.clone();
                self.pos += 1;
                Ok(l)
            }
            _ => self.fail("expected `^label`"),
        }
    }

    fn reg(&mut self) -> Result<Reg, ParseError> {
        let col = self.col();
        let w = self.word("register")?;
        w.strip_prefix('r')
            .and_then(|n| if n.len() > 1 && n.starts_with('0') { None } else { n.parse::<u8>().ok() })
            .and_then(Reg::new)
            .ok_or_else(|| err(self.lno, col, format!("invalid register `{w}`")))
    }

    /// `key=` prefix of a header attribute.
    fn key(&mut self, key: &str) -> Result<(), ParseError> {
        self.keyword(key)?;
        self.punct('=')
    }

    fn lines(&mut self) -> Result<(u32, u32), ParseError> {
        let a = self.uint("line number")?;
        self.punct(':')?;
        let b = self.uint("line number")?;
        Ok((a, b))
    }
}

/// Source location of a reference that must resolve after the whole text is read.
struct Pending {
    name: String,
    line: usize,
    column: usize,
}

#[derive(Default)]
struct Parsed {
    module: IrModule,
    callees: Vec<Pending>,
    /// Per function index: referenced labels.
    labels: Vec<Vec<Pending>>,
}

impl Parsed {
    fn resolve(&self) -> Result<(), ParseError> {
        let names: HashSet<&str> = self.module.functions.iter().map(|f| f.mangled_name.as_str()).collect();
        if let Some(p) = self.callees.iter().find(|p| !names.contains(p.name.as_str())) {
            return Err(ParseError {
                line: p.line,
                column: p.column,
                kind: ParseErrorKind::UndefinedCallee(p.name.clone()),
            });
        }
        for (f, refs) in self.module.functions.iter().zip(&self.labels) {
            if let Some(p) = refs.iter().find(|p| f.block(&p.name).is_none()) {
                return Err(ParseError {
                    line: p.line,
                    column: p.column,
                    kind: ParseErrorKind::UndefinedLabel(p.name.clone()),
                });
            }
        }
        Ok(())
    }
}

#[derive(Default, PartialEq)]
enum State {
    #[default]
    Start,
    Top,
    /// After a `func` header, waiting for `{`.
    AwaitBody,
    Body,
    Regions,
}

#[derive(Default)]
struct Parser {
    state: State,
    out: Parsed,
    seen: HashMap<String, usize>,
}

impl Parser {
    fn run(mut self, text: &str) -> Result<Parsed, ParseError> {
        let mut last = 0;
        for (idx, raw) in text.lines().enumerate() {
            let lno = idx + 1;
            last = lno;
            let toks = lex_line(raw, lno)?;
            if toks.is_empty() {
                continue;
            }
            let mut line = Line::new(&toks, lno, raw.chars().count());
            self.line(&mut line)?;
        }
        match self.state {
            State::Start => Err(err(last.max(1), 1, "missing `module` header")),
            State::AwaitBody | State::Body => Err(err(last, 1, "unterminated function body")),
            State::Top | State::Regions => Ok(self.out),
        }
    }

    fn current(&mut self) -> &mut IrFunction {
        self.out.module.functions.last_mut().expect("inside a function")
    }

    fn line(&mut self, line: &mut Line<'_>) -> Result<(), ParseError> {
        match self.state {
            State::Start => {
                line.keyword("module")?;
                self.out.module.name = line.string()?;
                if !line.at_end() {
                    line.key("file")?;
                    self.out.module.source_file_default = line.string()?;
                }
                line.expect_end()?;
                self.state = State::Top;
            }
            State::Top => match line.peek() {
                Some(Tok::Word(w)) if w == "extern" => {
                    line.next();
                    let col = line.col();
                    let name = line.global()?;
                    line.expect_end()?;
                    self.add_function(IrFunction::new_extern(name), line.lno, col)?;
                }
                Some(Tok::Word(w)) if w == "func" => self.func_header(line)?,
                Some(Tok::Word(w)) if w == "regions" => {
                    line.next();
                    line.punct(':')?;
                    line.expect_end()?;
                    self.state = State::Regions;
                }
                _ => return line.fail("expected `extern`, `func` or `regions:`"),
            },
            State::AwaitBody => {
                line.punct('{')?;
                line.expect_end()?;
                self.state = State::Body;
            }
            State::Body => self.body_line(line)?,
            State::Regions => self.region_line(line)?,
        }
        Ok(())
    }

    fn add_function(&mut self, f: IrFunction, lno: usize, col: usize) -> Result<(), ParseError> {
        if self.seen.contains_key(&f.mangled_name) {
            return Err(ParseError { line: lno, column: col, kind: ParseErrorKind::DuplicateFunction(f.mangled_name) });
        }
        self.seen.insert(f.mangled_name.clone(), self.out.module.functions.len());
        self.out.module.functions.push(f);
        self.out.labels.push(Vec::new());
        Ok(())
    }

    fn func_header(&mut self, line: &mut Line<'_>) -> Result<(), ParseError> {
        line.keyword("func")?;
        let col = line.col();
        let name = line.global()?;
        let mut f = IrFunction {
            mangled_name: name,
            demangled_name: None,
            file: self.out.module.source_file_default.clone(),
            begin_line: 0,
            end_line: 0,
            attrs: BTreeSet::new(),
            blocks: Vec::new(),
            is_extern: false,
        };
        let mut have_lines = false;
        let mut opened = false;
        while let Some(tok) = line.peek().cloned() {
            match tok {
                Tok::Word(w) if w == "pretty" && f.demangled_name.is_none() => {
                    line.key("pretty")?;
                    f.demangled_name = Some(line.string()?);
                }
                Tok::Word(w) if w == "file" => {
                    line.key("file")?;
                    f.file = line.string()?;
                }
                Tok::Word(w) if w == "lines" && !have_lines => {
                    line.key("lines")?;
                    (f.begin_line, f.end_line) = line.lines()?;
                    have_lines = true;
                }
                Tok::Word(w) if w == "attrs" => {
                    line.key("attrs")?;
                    loop {
                        let acol = line.col();
                        let a = line.word("attribute")?;
                        let attr = FunctionAttr::from_name(&a)
                            .ok_or_else(|| err(line.lno, acol, format!("unknown attribute `{a}`")))?;
                        f.attrs.insert(attr);
                        if !line.eat_punct(',') {
                            break;
                        }
                    }
                }
                Tok::Punct('{') => {
                    line.next();
                    line.expect_end()?;
                    opened = true;
                    break;
                }
                _ => return line.fail("unexpected token in function header"),
            }
        }
        if !have_lines {
            return line.fail("function header requires `lines=<a>:<b>`");
        }
        // empty_body is derived from the body once it is complete
        self.add_function(f, line.lno, col)?;
        self.state = if opened { State::Body } else { State::AwaitBody };
        Ok(())
    }

    fn body_line(&mut self, line: &mut Line<'_>) -> Result<(), ParseError> {
        let lno = line.lno;
        match line.peek() {
            Some(Tok::Punct('}')) => {
                line.next();
                line.expect_end()?;
                let f = self.current();
                if f.attrs.contains(&FunctionAttr::EmptyBody) && !f.body_is_empty() {
                    // leave the mismatch for the validator to report
                } else {
                    f.refresh_empty_body();
                }
                self.state = State::Top;
            }
            Some(Tok::Label(_)) => {
                let col = line.col();
                let label = line.label()?;
                line.punct(':')?;
                line.expect_end()?;
                let f = self.current();
                if f.block(&label).is_some() {
                    return Err(err(lno, col, format!("duplicate block label `{label}`")));
                }
                f.blocks.push(BasicBlock::new(label, Vec::new()));
            }
            _ => {
                let inst = self.instruction(line)?;
                let f = self.current();
                match f.blocks.last_mut() {
                    Some(b) => b.instructions.push(inst),
                    None => return Err(err(lno, 1, "instruction outside of a labelled block")),
                }
            }
        }
        Ok(())
    }

    fn note_label(&mut self, name: &str, line: &Line<'_>, col: usize) {
        let lno = line.lno;
        self.out.labels.last_mut().expect("inside a function").push(Pending {
            name: name.to_string(),
            line: lno,
            column: col,
        });
    }

    fn label_ref(&mut self, line: &mut Line<'_>) -> Result<String, ParseError> {
        let col = line.col();
        let l = line.label()?;
        self.note_label(&l, line, col);
        Ok(l)
    }

    fn instruction(&mut self, line: &mut Line<'_>) -> Result<Instruction, ParseError> {
        let op = line.word("instruction")?;
        let inst = match op.as_str() {
            "li" => {
                let dst = line.reg()?;
                line.punct(',')?;
                Instruction::Li { dst, imm: line.int()? }
            }
            "addi" => {
                let dst = line.reg()?;
                line.punct(',')?;
                let src = line.reg()?;
                line.punct(',')?;
                Instruction::Addi { dst, src, imm: line.int()? }
            }
            "add" => {
                let dst = line.reg()?;
                line.punct(',')?;
                let lhs = line.reg()?;
                line.punct(',')?;
                Instruction::Add { dst, lhs, rhs: line.reg()? }
            }
            "work" => {
                let col = line.col();
                let n: u64 = line.uint("work amount")?;
                if n == 0 {
                    return Err(err(line.lno, col, "`work` needs at least one tick"));
                }
                Instruction::Work(n)
            }
            "call" | "call.try" => {
                let col = line.col();
                let callee = line.global()?;
                self.out.callees.push(Pending { name: callee.clone(), line: line.lno, column: col });
                let mut args = Vec::new();
                let mut targets = Vec::new();
                while line.eat_punct(',') {
                    match line.peek() {
                        Some(Tok::Label(_)) if op == "call.try" => targets.push(self.label_ref(line)?),
                        _ if targets.is_empty() => {
                            if args.len() == MAX_CALL_ARGS {
                                return line.fail(format!("more than {MAX_CALL_ARGS} call arguments"));
                            }
                            args.push(line.reg()?)
                        }
                        _ => return line.fail("expected `^label`"),
                    }
                }
                if op == "call" {
                    Instruction::Call { callee, args }
                } else {
                    let [normal, unwind]: [String; 2] =
                        targets.try_into().or_else(|_| line.fail("`call.try` needs `^normal, ^unwind`"))?;
                    Instruction::CallTry { callee, args, normal, unwind }
                }
            }
            "jmp" => Instruction::Jmp(self.label_ref(line)?),
            "jnz" => {
                let cond = line.reg()?;
                line.punct(',')?;
                let then = self.label_ref(line)?;
                line.punct(',')?;
                Instruction::Jnz { cond, then, otherwise: self.label_ref(line)? }
            }
            "ret" => Instruction::Ret(if line.at_end() { None } else { Some(line.reg()?) }),
            "throw" => Instruction::Throw,
            "rethrow" => Instruction::Rethrow,
            "hook.register" => Instruction::HookRegister(RegionId(line.uint("region id")?)),
            "hook.enter" => Instruction::HookEnter(RegionId(line.uint("region id")?)),
            "hook.exit" => Instruction::HookExit(RegionId(line.uint("region id")?)),
            other => {
                line.pos -= 1;
                return line.fail(format!("unknown instruction `{other}`"));
            }
        };
        line.expect_end()?;
        Ok(inst)
    }

    fn region_line(&mut self, line: &mut Line<'_>) -> Result<(), ParseError> {
        line.keyword("region")?;
        let region_id = RegionId(line.uint("region id")?);
        line.key("name")?;
        let name = line.string()?;
        line.key("canonical")?;
        let canonical_name = line.string()?;
        line.key("file")?;
        let file = line.string()?;
        line.key("lines")?;
        let (begin_lno, end_lno) = line.lines()?;
        line.key("flags")?;
        let flags = line.uint("flags")?;
        line.expect_end()?;
        self.out.module.regions.push(RegionDescriptor {
            region_id,
            name,
            canonical_name,
            file,
            begin_lno,
            end_lno,
            flags,
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_module() {
        let m = parse_module("module \"m\"").unwrap();
        assert_eq!(m.name, "m");
        assert!(m.functions.is_empty());
    }

    #[test]
    fn undefined_label_is_named() {
        let text = "module \"m\"\nfunc @main file=\"a.c\" lines=1:2\n{\n^e:\n  jmp ^nowhere\n}\n";
        let e = parse_module(text).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UndefinedLabel("nowhere".into()));
        assert_eq!((e.line, e.column), (5, 7));
    }

    #[test]
    fn undefined_callee() {
        let text = "module \"m\"\nfunc @main file=\"a.c\" lines=1:2 {\n^e:\n  call @g\n  ret\n}\n";
        let e = parse_module(text).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::UndefinedCallee("g".into()));
        assert_eq!(e.line, 4);
    }

    #[test]
    fn duplicate_function() {
        let text = "module \"m\"\nextern @_Z4funci\nextern @_Z4funci\n";
        let e = parse_module(text).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::DuplicateFunction("_Z4funci".into()));
        assert_eq!(e.line, 3);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let e = parse_module("module \"m\"\nfunc @f file=\"a\" lines=1:1\n{\n^e:\n  li r16, 3\n}\n").unwrap_err();
        assert_eq!((e.line, e.column), (5, 6));
        let e = parse_module("module \"m\"\nfunc @f lines=1:1\n{\n^e:\n  frob\n}\n").unwrap_err();
        assert_eq!((e.line, e.column), (5, 3));
        let e = parse_module("module \"m\"\nfunc @f lines=1:1\n{\n^e:\n  ret\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Syntax(ref s) if s.contains("unterminated")));
        assert!(parse_module("").is_err());
        assert!(parse_module("module m").is_err());
    }

    #[test]
    fn comments_and_strings() {
        let text = "module \"m;x\" ; trailing\nfunc @f file=\"a;b.c\" lines=1:1 ; c\n{\n^e: ; label\n  ret ; done\n}\n";
        let m = parse_module(text).unwrap();
        assert_eq!(m.name, "m;x");
        assert_eq!(m.functions[0].file, "a;b.c");
    }

    #[test]
    fn empty_body_is_derived() {
        let m = parse_module("module \"m\"\nfunc @f lines=1:1\n{\n^e:\n  ret\n}\n").unwrap();
        assert!(m.functions[0].has_attr(FunctionAttr::EmptyBody));
        let e =
            parse_module("module \"m\"\nfunc @f lines=1:1 attrs=empty_body\n{\n^e:\n  work 1\n  ret\n}\n").unwrap_err();
        assert!(matches!(e.kind, ParseErrorKind::Invalid(_)));
    }

    #[test]
    fn call_operands() {
        let text = "module \"m\"\nextern @g\nfunc @f lines=1:3\n{\n^e:\n  call @g, r1, r2\n  call.try @g, r3, ^n, ^u\n^n:\n  ret\n^u:\n  ret\n}\n";
        let m = parse_module(text).unwrap();
        let b = &m.functions[1].blocks[0];
        assert_eq!(b.instructions[0], Instruction::Call { callee: "g".into(), args: vec![Reg(1), Reg(2)] });
        assert_eq!(
            b.instructions[1],
            Instruction::CallTry { callee: "g".into(), args: vec![Reg(3)], normal: "n".into(), unwind: "u".into() }
        );
        let nine = "module \"m\"\nextern @g\nfunc @f lines=1:3\n{\n^e:\n  call @g, r1, r1, r1, r1, r1, r1, r1, r1, r1\n  ret\n}\n";
        assert!(parse_module(nine).is_err());
    }
}
