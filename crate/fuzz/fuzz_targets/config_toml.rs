#![no_main]
use libfuzzer_sys::fuzz_target;
use lds_cli::config::ExperimentConfig;

fuzz_target!(|data: &str| {
    if let Ok(cfg) = ExperimentConfig::parse(data) {
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::parse(&text).expect("own output parses").to_toml(), text);
    }
});
