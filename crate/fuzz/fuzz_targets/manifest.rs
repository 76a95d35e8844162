#![no_main]

use deduce_core::parse_manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // Anything that parses must survive its own serialization.
    if let Ok(m) = parse_manifest(text) {
        let again = parse_manifest(&m.to_text()).expect("reparse");
        assert_eq!(again, m);
    }
});
