#![no_main]
use libfuzzer_sys::fuzz_target;
use lds_cli::commands::read_coefficients;

fuzz_target!(|data: &str| {
    let _ = read_coefficients(data);
});
