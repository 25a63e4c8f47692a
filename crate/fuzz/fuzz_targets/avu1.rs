#![no_main]

use avhubert::synthcorpus::{decode_utterance, encode_utterance};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(u) = decode_utterance(data) {
        let bytes = encode_utterance(&u).expect("decoded utterance re-encodes");
        let again = decode_utterance(&bytes).expect("re-encoded utterance decodes");
        assert_eq!(encode_utterance(&again).unwrap(), bytes);
    }
});
