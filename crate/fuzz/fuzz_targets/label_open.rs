#![no_main]

use confroute_core::evaluation::{label_open, normalize_answer};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let (response, gold) = text.split_once('\n').unwrap_or((text, ""));
    let _ = label_open(response, &[gold]);
    // a response always matches itself as the sole alias
    if !normalize_answer(response).is_empty() {
        assert_eq!(label_open(response, &[response]).ok(), Some(true));
    }
});
