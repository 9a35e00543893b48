#![no_main]

use condgap::autodiff::ParamStore;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(store) = ParamStore::from_json(text) {
        let back = ParamStore::from_json(&store.to_json().unwrap()).unwrap();
        assert_eq!(store.len(), back.len());
    }
});
