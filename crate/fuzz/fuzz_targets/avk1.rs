#![no_main]

use avhubert::clusterlab::{decode_codebook, encode_codebook};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = decode_codebook(data) {
        assert_eq!(encode_codebook(&c), data);
    }
});
