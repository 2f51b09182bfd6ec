#![no_main]
use libfuzzer_sys::fuzz_target;
use mevtr::loss::BatchLayout;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(layout) = BatchLayout::from_json(s) {
            for t in 0..layout.n_texts() {
                assert!(layout.positives(layout.owner(t)).contains(&t));
            }
        }
    }
});
