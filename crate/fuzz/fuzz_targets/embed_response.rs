#![no_main]

use libfuzzer_sys::fuzz_target;
use patchlink_core::embedding::decode_embed_response;

fuzz_target!(|data: &[u8]| {
    let Some((&n, body)) = data.split_first() else { return };
    if let Ok(vectors) = decode_embed_response(body, usize::from(n % 4)) {
        assert_eq!(vectors.len(), usize::from(n % 4));
        assert!(vectors.iter().all(|v| v.values().iter().all(|x| x.is_finite())));
    }
});
