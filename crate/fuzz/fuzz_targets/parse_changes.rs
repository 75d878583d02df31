#![no_main]

use libfuzzer_sys::fuzz_target;
use patchlink_core::model::{parse_changes_file, write_changes_file};

fuzz_target!(|data: &[u8]| {
    if let Ok(changes) = parse_changes_file(data) {
        let mut out = Vec::new();
        write_changes_file(&mut out, &changes).unwrap();
        assert_eq!(parse_changes_file(out.as_slice()).unwrap(), changes);
    }
});
