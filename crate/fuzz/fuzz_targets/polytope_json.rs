#![no_main]
use libfuzzer_sys::fuzz_target;
use lds_core::acq::AcqPolytope;

fuzz_target!(|data: &str| {
    if let Ok(p) = AcqPolytope::from_json(data) {
        let text = p.to_json();
        assert_eq!(AcqPolytope::from_json(&text).expect("own output parses").to_json(), text);
    }
});
