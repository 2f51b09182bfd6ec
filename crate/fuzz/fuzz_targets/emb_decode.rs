#![no_main]
use libfuzzer_sys::fuzz_target;
use mevtr::corpus::EmbeddingMatrix;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = EmbeddingMatrix::from_bytes(data) {
        // accepted input must re-encode to the same bytes
        assert_eq!(m.to_bytes().unwrap(), data);
    }
});
