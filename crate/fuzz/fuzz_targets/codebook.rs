#![no_main]

use deduce_core::types::ClassSet;
use deduce_core::Codebook;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for cs in [ClassSet::home7(), ClassSet::office5()] {
        if let Ok(cb) = Codebook::from_config_str(text, &cs) {
            let canon = cb.to_config_string();
            assert_eq!(Codebook::from_config_str(&canon, &cs).expect("reparse").to_config_string(), canon);
        }
    }
});
