#![no_main]

use confroute_core::records::{parse_line, to_line, Generation};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(g) = parse_line::<Generation>(text, 1) {
        let line = to_line(&g).expect("parsed generation re-serializes");
        assert_eq!(parse_line::<Generation>(&line, 1).expect("round trip"), g);
    }
});
