#![no_main]

use libfuzzer_sys::fuzz_target;
use precache_core::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    // Parse + validate must never panic; errors are expected.
    let _ = ExperimentConfig::from_json_str(text);
});
