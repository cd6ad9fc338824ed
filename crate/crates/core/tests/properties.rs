mod common;

use common::{balanced_per_region, enters, exits, fuzz_layout, program};
use instrumenta::analysis::build_profile;
use instrumenta::filter::{classify, parse_filter, wildcard_match, write_filter, FilterRuleSet};
use instrumenta::instrument::{instrument_module, InstrumentationMode};
use instrumenta::ir::{parse_module, print_module, validate};
use instrumenta::monitor::{read_trace, write_trace};
use instrumenta::optimizer::{inline_pass, OptLevel};
use instrumenta::symbols::{demangle, SymbolName};
use instrumenta::vm::{execute, ExitValue, RunConfig, VmError};
use proptest::prelude::*;

/// Straightforward recursive matcher used as the reference for `*` and `?`.
fn reference_match(p: &[char], t: &[char]) -> bool {
    match p.split_first() {
        None => t.is_empty(),
        Some(('*', rest)) => (0..=t.len()).any(|k| reference_match(rest, &t[k..])),
        Some(('?', rest)) => !t.is_empty() && reference_match(rest, &t[1..]),
        Some((c, rest)) => t.first() == Some(c) && reference_match(rest, &t[1..]),
    }
}

fn run_config() -> RunConfig {
    RunConfig { step_limit: 2_000_000, ..RunConfig::default() }
}

fn ident() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9_]{0,7}"
}

fn params() -> impl Strategy<Value = String> {
    prop_oneof![Just("v".to_string()), "[ilcdb]{1,4}"]
}

fn mangle(parts: &[String], params: &str) -> String {
    let names: String = parts.iter().map(|p| format!("{}{p}", p.len())).collect();
    if parts.len() == 1 {
        format!("_Z{names}{params}")
    } else {
        format!("_ZN{names}E{params}")
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn wildcard_agrees_with_reference(p in "[ab*?]{0,7}", t in "[ab]{0,9}") {
        let (pc, tc): (Vec<char>, Vec<char>) = (p.chars().collect(), t.chars().collect());
        prop_assert_eq!(wildcard_match(&p, &t), reference_match(&pc, &tc));
    }

    #[test]
    fn literal_patterns_match_whole_names_only(name in "[a-z_]{1,8}", suffix in "[a-z_]{1,4}") {
        prop_assert!(wildcard_match(&name, &name));
        let longer = format!("{name}{suffix}");
        prop_assert!(!wildcard_match(&name, &longer));
        let longer = format!("{suffix}{name}");
        prop_assert!(!wildcard_match(&name, &longer));
    }

    #[test]
    fn demangler_agrees_with_reference(parts in prop::collection::vec(ident(), 1..4), params in params()) {
        let mangled = mangle(&parts, &params);
        let expected = cpp_demangle::Symbol::new(mangled.as_bytes()).unwrap().to_string();
        let ours = SymbolName::new(&mangled);
        prop_assert!(!ours.raw);
        prop_assert_eq!(ours.pretty, expected);
    }

    #[test]
    fn unsupported_names_pass_through(name in "[A-Za-z_.$][A-Za-z0-9_.$]{0,12}") {
        prop_assume!(!name.starts_with("_Z"));
        let s = SymbolName::new(&name);
        prop_assert!(s.raw);
        prop_assert_eq!(&s.pretty, &name);
        prop_assert_eq!(demangle(&demangle(&name)), name);
    }

    #[test]
    fn parser_never_panics(text in "[ -~\n]{0,200}") {
        let _ = parse_module(&text);
    }

    #[test]
    fn parser_never_panics_on_mutated_programs(spec in program(), cut in 0usize..4000, junk in "[ -~]{0,6}") {
        let text = spec.render();
        let at = text.char_indices().map(|(i, _)| i).nth(cut % text.len().max(1)).unwrap_or(0);
        let mut broken = text.clone();
        broken.insert_str(at, &junk);
        let _ = parse_module(&broken);
    }

    #[test]
    fn filter_files_round_trip(
        rules in prop::collection::vec((any::<bool>(), any::<bool>(), "[a-z*?]{1,6}( [a-z]{1,3})?"), 0..6),
        names in prop::collection::vec("[a-z]{1,6}", 1..5),
    ) {
        let mut text = String::from("REGION_NAMES_BEGIN\n");
        for (include, mangled, pat) in &rules {
            let kw = if *include { "INCLUDE" } else { "EXCLUDE" };
            let m = if *mangled { "MANGLED " } else { "" };
            text.push_str(&format!("{kw} {m}{pat}\n"));
        }
        text.push_str("REGION_NAMES_END\n");
        let parsed = parse_filter(&text).unwrap();
        let again = parse_filter(&write_filter(&parsed)).unwrap();
        prop_assert_eq!(&again, &parsed);
        for n in &names {
            prop_assert_eq!(classify(&parsed, n, n, ""), classify(&again, n, n, ""));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_programs_round_trip(spec in program(), seed in any::<u64>()) {
        let m = spec.module();
        prop_assert!(validate(&m).is_empty());
        let printed = print_module(&m);
        prop_assert_eq!(&parse_module(&printed).unwrap(), &m);
        prop_assert_eq!(&parse_module(&fuzz_layout(&printed, seed)).unwrap(), &m);
    }

    #[test]
    fn inlining_is_monotone_and_preserves_behaviour(spec in program()) {
        let m = spec.module();
        let base = execute(&m, &run_config());
        let mut previous: Option<Vec<_>> = None;
        for level in OptLevel::ALL {
            let (out, report) = inline_pass(&m, level).unwrap();
            prop_assert!(validate(&out).is_empty(), "{}", print_module(&out));
            if let Some(prev) = &previous {
                for site in prev {
                    prop_assert!(report.inlined_sites.contains(site), "{:?} lost at {}", site, level);
                }
            }
            previous = Some(report.inlined_sites.clone());
            match (&base, execute(&out, &run_config())) {
                (Ok(b), Ok(r)) => prop_assert_eq!(b.exit, r.exit),
                (Err(VmError::StepLimit(_)), _) => {}
                (b, r) => prop_assert!(false, "{:?} vs {:?}", b, r),
            }
        }
    }

    #[test]
    fn instrumentation_preserves_results_and_balances(spec in program()) {
        let m = spec.module();
        let base = match execute(&m, &run_config()) {
            Ok(r) => r,
            Err(VmError::StepLimit(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        for mode in [InstrumentationMode::Plugin, InstrumentationMode::Auto] {
            for level in [OptLevel::O0, OptLevel::O3] {
                let (out, _, regions) = instrument_module(&m, &FilterRuleSet::default(), mode, level).unwrap();
                prop_assert_eq!(&parse_module(&print_module(&out)).unwrap(), &out);
                let config = RunConfig { step_limit: 20_000_000, ..run_config() };
                let r = execute(&out, &config).unwrap();
                prop_assert_eq!(r.exit, base.exit);
                prop_assert_eq!(enters(&r.events), exits(&r.events));
                prop_assert!(balanced_per_region(&r.events));
                prop_assert!(r.events.len() <= 2 * r.steps as usize + regions.len());
                let text = write_trace(&r.events);
                let back = read_trace(&text).unwrap();
                prop_assert_eq!(&back, &r.events);
                prop_assert_eq!(build_profile(&back).unwrap(), build_profile(&r.events).unwrap());
                if base.exit == ExitValue::Uncaught {
                    prop_assert!(r.events.iter().all(|_| true));
                }
            }
        }
    }
}
