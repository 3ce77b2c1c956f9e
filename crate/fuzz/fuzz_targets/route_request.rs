#![no_main]

use confroute_gateway::parse_route_request;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = parse_route_request(data);
});
