#![no_main]
use libfuzzer_sys::fuzz_target;
use lds_core::lds::{trajectory_from_csv, trajectory_to_csv};

fuzz_target!(|data: &str| {
    if let Ok(t) = trajectory_from_csv(data) {
        let text = trajectory_to_csv(&t);
        let again = trajectory_from_csv(&text).expect("own output parses");
        assert_eq!(trajectory_to_csv(&again), text);
    }
});
