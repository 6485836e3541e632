#![no_main]

use libfuzzer_sys::fuzz_target;
use resemote_core::data::{decode_pnm, encode_pnm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_pnm(data) {
        assert_eq!(img.data.len(), img.channels * img.width * img.height);
        assert_eq!(decode_pnm(&encode_pnm(&img)).unwrap(), img);
        let _ = img.to_tensor();
    }
});
