#![no_main]

use libfuzzer_sys::fuzz_target;
use patchlink_gerrit::decode_change_list;

fuzz_target!(|data: &[u8]| {
    if let Ok((changes, _)) = decode_change_list(data, "https://review.example.org") {
        assert!(changes.iter().all(|c| c.files.iter().all(|f| !f.starts_with('/'))));
    }
});
