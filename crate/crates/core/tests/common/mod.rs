#![allow(dead_code)]

use std::path::PathBuf;

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

/// Parses a hex-dump file: whitespace-separated byte pairs, `#` comments.
pub fn read_hex(name: &str) -> Vec<u8> {
    let text = std::fs::read_to_string(golden_path(name)).expect("golden file");
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace().map(str::to_owned).collect::<Vec<_>>())
        .map(|tok| u8::from_str_radix(&tok, 16).expect("hex byte"))
        .collect()
}

pub fn read_text(name: &str) -> String {
    std::fs::read_to_string(golden_path(name)).expect("golden file")
}
