//! Replays the checked-in fuzz corpus through the fuzz target bodies and
//! mutates the seeds with proptest, so the parsers get exercised on stable.

#[path = "../../../fuzz/src/checks.rs"]
mod checks;

use std::path::PathBuf;

use proptest::prelude::*;

type Target = fn(&[u8]);

const TARGETS: [(&str, Target); 5] = [
    ("read_csv", checks::read_csv),
    ("parse_report", checks::parse_report),
    ("parse_delay_spec", checks::parse_delay_spec),
    ("parse_profile_spec", checks::parse_profile_spec),
    ("parse_config_toml", checks::parse_config_toml),
];

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files.iter().map(|p| std::fs::read(p).unwrap()).collect()
}

#[test]
fn corpus_seeds_pass() {
    for (name, target) in TARGETS {
        let s = seeds(name);
        assert!(!s.is_empty(), "{name} has no seeds");
        for data in s {
            target(&data);
        }
    }
}

/// Applies byte edits to a seed: overwrite, insert or delete at a position.
fn mutate(seed: &[u8], edits: &[(u8, usize, u8)]) -> Vec<u8> {
    let mut out = seed.to_vec();
    for &(op, pos, byte) in edits {
        let at = if out.is_empty() {
            0
        } else {
            pos % (out.len() + 1)
        };
        match op % 3 {
            0 if at < out.len() => out[at] = byte,
            1 => out.insert(at, byte),
            _ if at < out.len() => {
                out.remove(at);
            }
            _ => {}
        }
    }
    out
}

fn interesting_byte() -> impl Strategy<Value = u8> {
    prop_oneof![
        any::<u8>(),
        prop::sample::select(b",;:@\n\"=[]{}0123456789.-eE".to_vec()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn mutated_seeds_do_not_break_invariants(
        target in 0usize..TARGETS.len(),
        pick in any::<usize>(),
        edits in prop::collection::vec((any::<u8>(), any::<usize>(), interesting_byte()), 0..8),
    ) {
        let (name, f) = TARGETS[target];
        let s = seeds(name);
        let data = mutate(&s[pick % s.len()], &edits);
        f(&data);
    }

    #[test]
    fn arbitrary_bytes_do_not_break_invariants(target in 0usize..TARGETS.len(), data in prop::collection::vec(any::<u8>(), 0..256)) {
        (TARGETS[target].1)(&data);
    }
}
