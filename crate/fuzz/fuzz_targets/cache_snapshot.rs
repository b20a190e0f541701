#![no_main]

use libfuzzer_sys::fuzz_target;
use precache_core::cache::EmbedCache;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cache) = EmbedCache::load_snapshot_json(text, 4096) {
        // A loaded snapshot must round-trip through the oracle surface.
        let _ = cache.dump();
    }
});
