#![no_main]

use libfuzzer_sys::fuzz_target;
use patchlink_core::model::parse_change_json;

fuzz_target!(|data: &[u8]| {
    if let Ok(rec) = parse_change_json(data) {
        let text = to_line(&rec);
        assert_eq!(parse_change_json(text.as_bytes()).unwrap(), rec);
    }
});

fn to_line(rec: &patchlink_core::ChangeRecord) -> String {
    let mut out = Vec::new();
    patchlink_core::model::write_changes_file(&mut out, std::slice::from_ref(rec)).unwrap();
    String::from_utf8(out).unwrap()
}
