#![no_main]

use libfuzzer_sys::fuzz_target;
use railsynth::config::RootConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = RootConfig::from_toml_str(text) {
            config.validate().unwrap();
        }
    }
});
