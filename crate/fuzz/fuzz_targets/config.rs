#![no_main]

use grnlink_core::config::parse_key_values;
use grnlink_core::model::ModelConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(map) = parse_key_values(text) {
        let _ = ModelConfig::from_key_values(&map);
        let mut cfg = ModelConfig::default();
        for (k, v) in &map {
            let _ = cfg.set(k, v);
        }
    }
});
