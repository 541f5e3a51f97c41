use lds_cli::config::{ExperimentConfig, Mode};
use lds_cli::{effective_config, Cli};
use clap::Parser;

const FULL: &str = r#"
seed = 3
format = "csv"
cone = { tau0 = 0.2, tau1 = 0.1, tau2 = 5.0 }

[gen]
n = 4
alpha = 0.8
strategy = "gaussian_coeff"
sigma = 0.5
t_len = 16
count = 2
seed = 0
h0 = { kind = "gaussian", scale = 1.0 }

[train]
mode = "improper"
extension = 2
[train.sgd]
learning_rate = { kind = "theory_rule", v = 1.0, gamma = 2.0, tau = 0.5 }

[check]
alpha = 0.9
"#;

#[test]
fn round_trips_through_toml() {
    let cfg = ExperimentConfig::parse(FULL).unwrap();
    assert_eq!(cfg.train.as_ref().unwrap().mode, Mode::Improper);
    assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn rejects_unknown_keys() {
    assert!(ExperimentConfig::parse("sede = 1").is_err());
    assert!(ExperimentConfig::parse("[check]\nalpah = 1.0").is_err());
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.toml");
    std::fs::write(&path, FULL).unwrap();
    let p = path.to_str().unwrap();
    let cli = Cli::parse_from(["lds-sgd", "--config", p, "--seed", "11", "train", "--mode", "split"]);
    let cfg = effective_config(&cli).unwrap();
    assert_eq!(cfg.seed, Some(11));
    assert_eq!(cfg.gen.unwrap().seed, 11);
    let t = cfg.train.unwrap();
    assert_eq!(t.sgd.seed, 11);
    assert_eq!(t.mode, Mode::Split);
    let cli = Cli::parse_from(["lds-sgd", "--config", p, "check", "--alpha", "0.7"]);
    assert_eq!(effective_config(&cli).unwrap().check.unwrap().alpha, 0.7);
}
