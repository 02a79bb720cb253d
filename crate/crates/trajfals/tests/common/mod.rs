#![allow(dead_code)]

use std::path::PathBuf;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn scenario(id: &str) -> PathBuf {
    scenarios_dir().join(format!("{id}.tsc"))
}
