#![no_main]
use libfuzzer_sys::fuzz_target;

use toda_hydro::config::{apply_override, apply_overrides, parse_config};
use toda_hydro::mc::ExperimentConfig;

// Assignments are separated by newlines. Each accepted override must leave a
// configuration whose echo parses back to the same value.
fuzz_target!(|data: &str| {
    let base = ExperimentConfig::default();
    let assignments: Vec<&str> = data.lines().collect();
    for a in &assignments {
        let _ = apply_override(&base, a);
    }
    if let Ok(cfg) = apply_overrides(&base, &assignments) {
        let echo = serde_json::to_string(&cfg).unwrap();
        let again = parse_config(&echo).expect("the echo of an overridden config parses");
        assert_eq!(serde_json::to_value(&cfg).unwrap(), serde_json::to_value(&again).unwrap());
    }
});
