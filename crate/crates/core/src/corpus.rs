//! Reference programs used by the test suites and the README walkthrough.

/// The loop-plus-recursion example: `main` calls `func(i)` for `i = 0..2`.
pub const RECURSION: &str = include_str!("../corpus/recursion.ir");
/// A tiny leaf called 100000 times plus a `no_inline` kernel called 5000 times.
pub const HOTLOOP: &str = include_str!("../corpus/hotloop.ir");
/// Leaves that become inlinable at O1, O2 and O3 respectively.
pub const LEAVES: &str = include_str!("../corpus/leaves.ir");
pub const THROW_CATCH: &str = include_str!("../corpus/throw_catch.ir");
pub const UNCAUGHT: &str = include_str!("../corpus/uncaught.ir");
pub const EXCEPTIONS: &str = include_str!("../corpus/exceptions.ir");
/// Functions skipped for their attributes (OpenMP runtime, outlined, builtin, empty).
pub const ATTRIBUTES: &str = include_str!("../corpus/attributes.ir");

pub const ALL: &[(&str, &str)] = &[
    ("recursion", RECURSION),
    ("hotloop", HOTLOOP),
    ("leaves", LEAVES),
    ("throw_catch", THROW_CATCH),
    ("uncaught", UNCAUGHT),
    ("exceptions", EXCEPTIONS),
    ("attributes", ATTRIBUTES),
];
