#![no_main]

use grnlink_core::data::parse_tf_list;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_tf_list(text);
    }
});
