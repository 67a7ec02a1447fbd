#![no_main]

use libfuzzer_sys::fuzz_target;
use railsynth::manifest::{parse_manifest, parse_record_line};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(record) = parse_record_line(text, 1) {
        // Whatever parses must survive a write/parse round trip.
        let line = serde_json::to_string(&record).unwrap();
        assert_eq!(parse_record_line(&line, 1).unwrap(), record);
    }
    let _ = parse_manifest(text);
});
