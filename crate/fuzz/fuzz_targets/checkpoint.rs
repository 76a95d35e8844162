#![no_main]

use deduce_core::LinearHead;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(head) = LinearHead::from_checkpoint(text) {
        let again = LinearHead::from_checkpoint(&head.to_checkpoint()).expect("reparse");
        assert_eq!(again, head);
        let _ = head.forward(&vec![0.5; head.input_dim()]);
    }
});
