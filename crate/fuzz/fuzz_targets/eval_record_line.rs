#![no_main]

use confroute_core::records::{parse_line, to_line, EvalRecord};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(r) = parse_line::<EvalRecord>(text, 1) {
        let line = to_line(&r).expect("parsed record re-serializes");
        assert_eq!(parse_line::<EvalRecord>(&line, 1).expect("round trip"), r);
    }
});
