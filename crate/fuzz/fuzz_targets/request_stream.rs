#![no_main]

use libfuzzer_sys::fuzz_target;
use precache_core::replay::requests_from_jsonl;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = requests_from_jsonl(text);
});
