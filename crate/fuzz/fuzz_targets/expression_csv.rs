#![no_main]

use grnlink_core::data::{bin_expression, parse_expression, Orientation};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    for orientation in [Orientation::Auto, Orientation::CellsAsRows, Orientation::GenesAsRows] {
        if let Ok(x) = parse_expression(data, orientation) {
            // parsed matrices must bin without panicking
            let _ = bin_expression(&x, 7);
        }
    }
});
