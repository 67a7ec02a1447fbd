#![no_main]

use libfuzzer_sys::fuzz_target;
use railsynth::flow::{decode_flow, encode_flow};

fuzz_target!(|data: &[u8]| {
    if let Ok(flow) = decode_flow(data) {
        assert!(flow.first_non_finite().is_none());
        assert_eq!(encode_flow(&flow), data);
    }
});
