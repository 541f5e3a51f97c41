#![no_main]
use libfuzzer_sys::fuzz_target;
use lds_core::lds::{trajectory_from_binary, trajectory_to_binary};

fuzz_target!(|data: &[u8]| {
    if let Ok(t) = trajectory_from_binary(data) {
        let bytes = trajectory_to_binary(&t).expect("decoded trajectories re-encode");
        let again = trajectory_from_binary(&bytes).expect("own output parses");
        assert_eq!(trajectory_to_binary(&again).unwrap(), bytes);
    }
});
