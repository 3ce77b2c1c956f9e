#![no_main]

use confroute_core::records::{parse_line, to_line, Query};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(q) = parse_line::<Query>(text, 1) {
        let line = to_line(&q).expect("parsed query re-serializes");
        assert_eq!(parse_line::<Query>(&line, 1).expect("round trip"), q);
    }
});
