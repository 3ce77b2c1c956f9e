#![no_main]

use confroute_core::backends::http::parse_embedding;
use confroute_core::backends::normalize_embedding;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(raw) = parse_embedding(text) {
        let dim = raw.len();
        if let Ok(v) = normalize_embedding(raw, dim) {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }
});
