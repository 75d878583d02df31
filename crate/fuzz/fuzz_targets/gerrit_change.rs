#![no_main]

use libfuzzer_sys::fuzz_target;
use patchlink_gerrit::decode_change;

fuzz_target!(|data: &[u8]| {
    let _ = decode_change(data, "https://review.example.org");
});
