#![no_main]
use libfuzzer_sys::fuzz_target;
use lds_core::poly::Polynomial;

fuzz_target!(|data: &str| {
    if let Ok(p) = Polynomial::from_json(data) {
        let text = p.to_json();
        assert_eq!(Polynomial::from_json(&text).expect("own output parses").to_json(), text);
        let _ = p.roots();
    }
});
