#![no_main]

use confroute_core::records::{parse_records, KbEntry};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(entries) = parse_records::<KbEntry>(text) {
        let _ = confroute_core::kb::KnowledgeIndex::build(entries);
    }
});
