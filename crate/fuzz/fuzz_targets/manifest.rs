#![no_main]

use avhubert::synthcorpus::CorpusManifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = serde_json::from_slice::<CorpusManifest>(data) {
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<CorpusManifest>(&text).unwrap(), m);
    }
});
