#![no_main]
use libfuzzer_sys::fuzz_target;

use toda_hydro::config::parse_config;

// Any document that parses must survive an echo round trip unchanged.
fuzz_target!(|data: &str| {
    if let Ok(cfg) = parse_config(data) {
        let echo = serde_json::to_string(&cfg).expect("a parsed config serializes");
        let again = parse_config(&echo).expect("the echo of a parsed config parses");
        assert_eq!(
            serde_json::to_value(&cfg).unwrap(),
            serde_json::to_value(&again).unwrap(),
            "echo changed the configuration: {echo}"
        );
    }
});
