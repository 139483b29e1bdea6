//! One PASS/FAIL line per acceptance criterion, from the built-in scenarios.

use std::collections::BTreeMap;
use std::time::Instant;

use kahler_flow::scenario::Check;
use kahler_flow::{run_scenario, ExperimentSpec, ScenarioId};

/// Checks that cannot be met by torus-invariant models; they must be the
/// only failures of their criterion and are reported as FAIL.
const OUT_OF_SCOPE: [(u8, &str); 2] =
    [(7, "non-invariant seed bounded and plateau"), (9, "pairing residual scaling with the X' amplitude")];

fn run(id: ScenarioId) -> (Vec<Check>, f64, Vec<String>) {
    let start = Instant::now();
    let b = run_scenario(&ExperimentSpec::preset(id), None).unwrap_or_else(|e| panic!("{}: {e}", id.name()));
    (b.checks, start.elapsed().as_secs_f64(), b.notes)
}

#[test]
fn acceptance_criteria() {
    let slow = std::thread::spawn(|| run(ScenarioId::SolitonInvariantSeed));
    let mut results = Vec::new();
    for id in [
        ScenarioId::IdentitySuite,
        ScenarioId::KeStability,
        ScenarioId::GaugeNecessity,
        ScenarioId::SolitonStability,
        ScenarioId::UniquenessRestart,
    ] {
        results.push((id, run(id)));
    }
    results.push((ScenarioId::SolitonInvariantSeed, slow.join().expect("soliton scenario panicked")));

    let mut by_criterion: BTreeMap<u8, Vec<(ScenarioId, f64, Check)>> = BTreeMap::new();
    for (id, (checks, seconds, notes)) in &results {
        println!("scenario {} finished in {seconds:.1} s", id.name());
        for n in notes {
            println!("    note: {n}");
        }
        for c in checks {
            by_criterion.entry(c.criterion).or_default().push((*id, *seconds, c.clone()));
        }
    }

    let mut unexpected = Vec::new();
    for criterion in 1..=10u8 {
        let entries = by_criterion.get(&criterion).map(Vec::as_slice).unwrap_or(&[]);
        let pass = !entries.is_empty() && entries.iter().all(|(_, _, c)| c.pass);
        let scenarios: Vec<&str> = {
            let mut v: Vec<&str> = entries.iter().map(|(id, _, _)| id.name()).collect();
            v.dedup();
            v
        };
        let seconds: f64 = {
            let mut seen = Vec::new();
            entries.iter().filter(|(id, _, _)| { let new = !seen.contains(id); seen.push(*id); new }).map(|(_, s, _)| s).sum()
        };
        println!(
            "{} criterion {criterion} ({} checks; {}; {seconds:.1} s)",
            if pass { "PASS" } else { "FAIL" },
            entries.len(),
            scenarios.join(", ")
        );
        for (_, _, c) in entries {
            println!("    {}", c.line());
            let declared = OUT_OF_SCOPE.iter().any(|(k, n)| *k == c.criterion && c.name == *n);
            if !c.pass && !declared {
                unexpected.push(c.line());
            }
        }
        if entries.is_empty() {
            unexpected.push(format!("criterion {criterion} has no checks"));
        }
    }
    assert!(unexpected.is_empty(), "unexpected failures:\n{}", unexpected.join("\n"));
}
