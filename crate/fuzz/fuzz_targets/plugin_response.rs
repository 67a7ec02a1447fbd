#![no_main]

use libfuzzer_sys::fuzz_target;
use railsynth::extraction::parse_detect_response;
use railsynth::flow::parse_flow_response;
use railsynth::plugin::parse_response_line;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(value) = parse_response_line(line) {
        let _ = parse_flow_response(&value);
        if let Ok(boxes) = parse_detect_response(&value) {
            for b in boxes {
                assert!((0.0..=1.0).contains(&b.confidence));
            }
        }
    }
});
