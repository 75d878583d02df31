#![no_main]

use libfuzzer_sys::fuzz_target;
use patchlink_gerrit::{description_from_message, parse_gerrit_timestamp, strip_xssi_prefix};

fuzz_target!(|data: &str| {
    let _ = parse_gerrit_timestamp(data);
    let d = description_from_message(data);
    assert!(d.len() <= data.len());
    assert!(strip_xssi_prefix(data.as_bytes()).len() <= data.len());
});
