#![no_main]

use grnlink_core::checkpoint::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ck) = Checkpoint::decode(data) {
        // the canonical encoding is a fixed point
        let bytes = ck.encode().expect("decoded checkpoint encodes");
        let again = Checkpoint::decode(&bytes).expect("canonical bytes decode");
        assert_eq!(again.encode().unwrap(), bytes);
        let _ = ck.vocabulary();
    }
});
