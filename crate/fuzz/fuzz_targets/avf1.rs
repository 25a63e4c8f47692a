#![no_main]

use avhubert::features::{decode_features, encode_features};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = decode_features(data) {
        let bytes = encode_features(&f);
        let again = decode_features(&bytes).expect("re-encoded features decode");
        assert_eq!(encode_features(&again), bytes);
    }
});
