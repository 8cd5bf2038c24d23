//! The JSON scenarios under `scenarios/` are the presets, written out.
//! Run with `HOMEWATCH_BLESS=1` to regenerate them.

use std::path::PathBuf;

use homewatch::sim::{presets, ScenarioConfig};

fn check(name: &str, cfg: ScenarioConfig) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    let text = cfg.to_json();
    if std::env::var_os("HOMEWATCH_BLESS").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &text).unwrap();
    }
    let on_disk = ScenarioConfig::load(&path).unwrap();
    assert_eq!(on_disk, cfg, "{} is stale", path.display());
}

#[test]
fn s0_file_matches_preset() {
    check("s0.json", presets::s0(7, 60_000));
}

#[test]
fn s1_file_matches_preset() {
    check("s1.json", presets::s1());
}

#[test]
fn motion_bulb_file_matches_preset() {
    check("motion_bulb.json", presets::motion_bulb(600));
}
