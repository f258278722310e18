//! The configuration, permission-map and trace examples in `docs/` stay valid.

use std::path::PathBuf;

use chiplet_sni::apu::{ApuTable, Permission, RegionId};
use chiplet_sni::harness::workload::parse_trace;
use chiplet_sni::harness::{self, HaltCause, SimConfig};

fn docs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs")
}

fn fenced_blocks(text: &str, lang: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut current: Option<String> = None;
    for line in text.lines() {
        match (&mut current, line.trim_start()) {
            (None, l) if l == format!("```{lang}") => current = Some(String::new()),
            (Some(_), "```") => blocks.push(current.take().unwrap()),
            (Some(b), _) => {
                b.push_str(line);
                b.push('\n');
            }
            _ => {}
        }
    }
    blocks
}

#[test]
fn formats_examples_parse() {
    let text = std::fs::read_to_string(docs().join("formats.md")).unwrap();
    let blocks = fenced_blocks(&text, "toml");
    assert_eq!(blocks.len(), 2);

    let cfg = SimConfig::from_toml(&blocks[0]).unwrap();
    let v = cfg.validate().unwrap();
    assert_eq!(v.updates.len(), 1);
    assert_eq!(cfg.attacks.len(), 1);
    assert_eq!(SimConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);

    let table = ApuTable::from_map_str(&blocks[1]).unwrap();
    assert_eq!(table.geometry().regions, 8);
    assert_eq!(table.entry(RegionId(6)).unwrap().permission_of(1).unwrap(), Permission::ReadOnly);
    assert_eq!(table.entry(RegionId(3)).unwrap().permission_of(0).unwrap(), Permission::NoAccess);

    let trace = fenced_blocks(&text, "").into_iter().find(|b| b.starts_with("# cycle")).unwrap();
    assert_eq!(parse_trace(&trace).unwrap().len(), 2);
}

#[test]
fn sample_run_completes() {
    let cfg = SimConfig::load(&docs().join("samples/run.toml")).unwrap();
    let (report, _) = harness::simulate(&cfg).unwrap();
    assert_eq!(report.halt, HaltCause::Completed);
    assert_eq!(report.operations, 10);
    assert!(report.violations.is_empty());
}
