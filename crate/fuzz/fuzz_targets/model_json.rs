#![no_main]

use libfuzzer_sys::fuzz_target;
use patchlink_core::ForestModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = ForestModel::from_json(data) {
        for x in [[0.0; 6], [1.0, 1.0, 1.0, 1.0, 1.0, 0.0], [0.5, 0.2, 0.9, 0.1, 500.0, 10.0]] {
            let p = model.predict_proba(&x).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
        let again = ForestModel::from_json(model.to_json().unwrap().as_bytes()).unwrap();
        assert_eq!(again, model);
    }
});
