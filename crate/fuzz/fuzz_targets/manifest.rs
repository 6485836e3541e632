#![no_main]

use libfuzzer_sys::fuzz_target;
use resemote_core::data::parse_manifest;

fuzz_target!(|text: &str| {
    if let Ok(entries) = parse_manifest(text, "fuzz") {
        for e in entries {
            assert!(!e.path.is_empty() && e.label < 7);
        }
    }
});
