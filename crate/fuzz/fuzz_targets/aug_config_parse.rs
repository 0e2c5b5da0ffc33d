//! Augmentation-config TOML through the parser: no panics, and accepted
//! configurations round-trip through printing unchanged.

#![no_main]

use gluenote::augment::AugmentationConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(config) = AugmentationConfig::from_toml_str(text) else {
        return;
    };
    config.validate().expect("parser admitted an invalid config");
    let printed = config.to_toml_string();
    let again = AugmentationConfig::from_toml_str(&printed).expect("printed config parses");
    assert_eq!(printed, again.to_toml_string(), "printing is not stable");
});
