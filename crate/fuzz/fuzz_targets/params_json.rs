#![no_main]
use libfuzzer_sys::fuzz_target;
use lds_core::lds::SystemParams;

fuzz_target!(|data: &str| {
    if let Ok(p) = SystemParams::from_json(data) {
        let text = p.to_json();
        let q = SystemParams::from_json(&text).expect("own output parses");
        assert_eq!(q.to_json(), text);
    }
});
