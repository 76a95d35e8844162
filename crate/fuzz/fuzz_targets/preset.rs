#![no_main]

use deduce_core::synth::SceneModelSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(models) = SceneModelSet::from_preset_str(text) {
        let again = SceneModelSet::from_preset_str(&models.to_preset_string()).expect("reparse");
        assert_eq!(again, models);
    }
});
