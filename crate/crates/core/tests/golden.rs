mod common;

use std::fs;

#[test]
fn templates_match_fixtures() {
    let mut failures = Vec::new();
    for (name, rendered) in common::golden_cases() {
        let expected = fs::read_to_string(common::golden_dir().join(name)).unwrap();
        if expected != rendered {
            failures.push(format!("{name}:\n--- expected\n{expected:?}\n--- rendered\n{rendered:?}"));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n\n"));
}

#[test]
fn fixture_target_carries_canonical_sentence() {
    let t = fs::read_to_string(common::golden_dir().join("pacit_target.txt")).unwrap();
    assert!(t.contains("Example 1 is correct and example 2 is wrong."));
    assert!(t.contains(pacit_core::templater::DEFAULT_ACTION));
}
