use levicav_core::config::{load_config, parse_config, to_toml};
use levicav_core::params::validate_config;
use levicav_core::{Config, Error};

#[test]
fn defaults_survive_a_file_round_trip() {
    let cfg = Config::paper_defaults();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("levicav.toml");
    std::fs::write(&path, to_toml(&cfg)).unwrap();
    let back = load_config(&path).unwrap();
    assert_eq!(back, cfg);
    assert!(validate_config(&back).is_ok());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_config("/nonexistent/levicav.toml").unwrap_err();
    assert!(err.is_io());
}

#[test]
fn malformed_text_is_a_parse_error() {
    let err = parse_config("[cavity]\nlinewidth = \"wide\"\n").unwrap_err();
    assert!(matches!(err, Error::Parse(_)));
    assert!(err.is_validation());
}

#[test]
fn every_bad_field_is_reported() {
    let mut text = to_toml(&Config::paper_defaults());
    text = text.replacen("\npower = 0.13", "\npower = -0.13", 1);
    text = text.replacen("linewidth = 600000.0", "linewidth = 0.0", 1);
    let cfg = parse_config(&text).unwrap();
    let err = validate_config(&cfg).unwrap_err();
    assert!(err.issues.len() >= 2, "{err}");
    assert!(err.mentions("linewidth"), "{err}");
    assert!(err.mentions("power"), "{err}");
}
