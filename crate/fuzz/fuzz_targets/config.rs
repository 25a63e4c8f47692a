#![no_main]

use avhubert_cli::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(value) = serde_json::from_str(text) else { return };
    if let Ok(cfg) = ExperimentConfig::from_value(value, Some(text)) {
        if cfg.validate().is_ok() {
            cfg.plan().expect("validated configuration has a plan");
        }
    }
});
