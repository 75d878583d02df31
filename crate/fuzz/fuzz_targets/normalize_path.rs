#![no_main]

use libfuzzer_sys::fuzz_target;
use patchlink_core::features::path_segments;
use patchlink_core::model::normalize_path;

fuzz_target!(|data: &str| {
    if let Ok(p) = normalize_path(data) {
        assert_eq!(normalize_path(&p).as_deref(), Ok(p.as_str()));
        assert!(!path_segments(&p).is_empty());
    }
});
