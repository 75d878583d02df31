#![no_main]

use libfuzzer_sys::fuzz_target;
use patchlink_core::model::{parse_links_file, write_links_file};

fuzz_target!(|data: &[u8]| {
    if let Ok(links) = parse_links_file(data) {
        assert!(links.windows(2).all(|w| w[0] < w[1]));
        let mut out = Vec::new();
        write_links_file(&mut out, &links).unwrap();
        assert_eq!(parse_links_file(out.as_slice()).unwrap(), links);
    }
});
