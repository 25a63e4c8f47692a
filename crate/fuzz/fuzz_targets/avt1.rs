#![no_main]

use avhubert::clusterlab::{decode_targets, encode_targets, TargetSource};
use libfuzzer_sys::fuzz_target;

fn source() -> TargetSource {
    TargetSource {
        feature_kind: "fuzz".into(),
        iteration: 0,
        layer: None,
    }
}

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = decode_targets(data, source()) {
        let bytes = encode_targets(&t);
        assert_eq!(bytes, data);
        assert_eq!(decode_targets(&bytes, source()).unwrap(), t);
    }
});
