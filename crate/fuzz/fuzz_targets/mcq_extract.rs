#![no_main]

use confroute_core::evaluation::extract_letter;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = extract_letter(text);
});
