#![no_main]

use libfuzzer_sys::fuzz_target;
use precache_core::teacher::CompressionMap;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(map) = CompressionMap::from_json(text) {
        // A validated map must accept a matching raw vector.
        let raw = vec![0.5; map.d_raw];
        let _ = map.apply(&raw);
    }
});
