#![no_main]

use libfuzzer_sys::fuzz_target;
use resemote_core::data::{parse_fer_csv, Split};

fuzz_target!(|data: &[u8]| {
    for split in [None, Some(Split::Train), Some(Split::Test)] {
        if let Ok(ds) = parse_fer_csv(data, "fuzz", split) {
            for s in &ds.samples {
                assert_eq!(s.pixels.dims(), [1, 48, 48]);
                assert!(s.label < 7);
            }
        }
    }
});
