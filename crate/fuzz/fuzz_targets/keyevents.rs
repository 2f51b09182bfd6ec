#![no_main]
use libfuzzer_sys::fuzz_target;
use mevtr::keyevents::parse_key_events;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = parse_key_events(s);
    }
});
