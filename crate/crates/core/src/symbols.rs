//! Demangling for a small subset of the Itanium C++ ABI.
//!
//! Supported: `_Z<len><name><params>` and `_ZN(<len><name>)+E<params>`, where
//! `<params>` is either a lone `v` (no parameters) or a run of the builtin
//! codes `i`, `l`, `c`, `d`, `b`. Everything else is passed through unchanged
//! and flagged as raw.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolName {
    pub mangled: String,
    pub pretty: String,
    /// Set when `mangled` is outside the supported subset and `pretty` is a copy.
    pub raw: bool,
}

impl SymbolName {
    pub fn new(mangled: &str) -> Self {
        match demangle_subset(mangled) {
            Some(pretty) => SymbolName { mangled: mangled.to_string(), pretty, raw: false },
            None => SymbolName { mangled: mangled.to_string(), pretty: mangled.to_string(), raw: true },
        }
    }
}

pub fn is_mangled(name: &str) -> bool {
    name.starts_with("_Z")
}

/// Human-readable form of `mangled`, or `mangled` itself when unsupported.
pub fn demangle(mangled: &str) -> String {
    demangle_subset(mangled).unwrap_or_else(|| mangled.to_string())
}

fn builtin_type(code: u8) -> Option<&'static str> {
    Some(match code {
        b'v' => "void",
        b'i' => "int",
        b'l' => "long",
        b'c' => "char",
        b'd' => "double",
        b'b' => "bool",
        _ => return None,
    })
}

fn demangle_subset(mangled: &str) -> Option<String> {
    let rest = mangled.strip_prefix("_Z")?.as_bytes();
    let mut pos = 0;
    let mut parts = Vec::new();
    if rest.first() == Some(&b'N') {
        pos += 1;
        while rest.get(pos) != Some(&b'E') {
            parts.push(source_name(rest, &mut pos)?);
        }
        pos += 1;
        // a nested name needs at least a scope and a member
        if parts.len() < 2 {
            return None;
        }
    } else {
        parts.push(source_name(rest, &mut pos)?);
    }

    let params = &rest[pos..];
    let rendered = match params {
        [] => return None,
        [b'v'] => String::new(),
        codes => {
            let names =
                codes.iter().map(|&c| if c == b'v' { None } else { builtin_type(c) }).collect::<Option<Vec<_>>>()?;
            names.join(", ")
        }
    };
    Some(format!("{}({})", parts.join("::"), rendered))
}

/// `<len><identifier>`
fn source_name<'a>(bytes: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    let digits = std::str::from_utf8(&bytes[start..*pos]).ok()?;
    if digits.is_empty() || digits.starts_with('0') {
        return None;
    }
    let len: usize = digits.parse().ok()?;
    let end = pos.checked_add(len)?;
    let ident = bytes.get(*pos..end)?;
    if !ident.iter().all(|b| b.is_ascii_alphanumeric() || *b == b'_') || ident[0].is_ascii_digit() {
        return None;
    }
    *pos = end;
    std::str::from_utf8(ident).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(demangle("main"), "main");
        assert_eq!(demangle("_Z4funci"), "func(int)");
        assert_eq!(demangle("_ZN3app4initEv"), "app::init()");
        assert_eq!(demangle("_Z3addlldcb"), "add(long, long, double, char, bool)");
        assert_eq!(demangle("_ZN1a1b1cEi"), "a::b::c(int)");
    }

    #[test]
    fn unsupported_passes_through_raw() {
        for s in [
            "_Z",
            "_Z4func",
            "_Z4funcx",
            "_Z5funci",
            "_Z04funci",
            "_ZN4funcEi",
            "_ZN3app4initv",
            "_Z4funcvi",
            "_ZSt4movei",
            ".omp_outlined.",
        ] {
            assert_eq!(demangle(s), s, "{s}");
            assert!(SymbolName::new(s).raw, "{s}");
        }
        assert!(!SymbolName::new("_Z4funci").raw);
    }

    #[test]
    fn is_mangled_prefix() {
        assert!(is_mangled("_Z4funci"));
        assert!(!is_mangled("func"));
        assert!(!is_mangled(""));
    }
}
