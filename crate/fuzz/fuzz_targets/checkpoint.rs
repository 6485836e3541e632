#![no_main]

use libfuzzer_sys::fuzz_target;
use resemote_core::checkpoint;

fuzz_target!(|data: &[u8]| {
    if let Ok(loaded) = checkpoint::from_bytes::<f32>(data, None) {
        let again = checkpoint::to_bytes(&loaded.model, &loaded.info, loaded.resume.as_ref()).unwrap();
        assert!(checkpoint::from_bytes::<f32>(&again, None).is_ok());
    }
    let _ = checkpoint::from_bytes::<f64>(data, None);
});
