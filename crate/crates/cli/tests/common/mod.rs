#![allow(dead_code)]

use std::path::{Path, PathBuf};

use carebi_cli::config;

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Full pipeline on the bundled cohort and config.
pub fn run_bundled(out: &Path) -> carebi_cli::error::Result<()> {
    let ctx = config::load(Some(&data_dir().join("carebi.toml")), &[], None, Some(out))?;
    carebi_cli::run_pipeline(&ctx, |_, _| {})
}

/// Relative paths of every artifact except the manifest, sorted.
pub fn artifacts(root: &Path) -> Vec<String> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<String>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, acc);
            } else {
                acc.push(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    let mut acc = vec![];
    if root.is_dir() {
        walk(root, root, &mut acc);
    }
    acc.retain(|r| r != "manifest.json");
    acc.sort();
    acc
}

/// Differences between two artifact trees, as readable lines.
pub fn diff_trees(a: &Path, b: &Path) -> Vec<String> {
    let (la, lb) = (artifacts(a), artifacts(b));
    let mut out = vec![];
    for r in la.iter().filter(|r| !lb.contains(r)) {
        out.push(format!("only in {}: {r}", a.display()));
    }
    for r in lb.iter().filter(|r| !la.contains(r)) {
        out.push(format!("only in {}: {r}", b.display()));
    }
    for r in la.iter().filter(|r| lb.contains(r)) {
        if std::fs::read(a.join(r)).unwrap() != std::fs::read(b.join(r)).unwrap() {
            out.push(format!("differs: {r}"));
        }
    }
    out
}

/// Replace the golden tree with `from` when CAREBI_UPDATE_GOLDEN is set.
pub fn maybe_update_golden(from: &Path) -> bool {
    if std::env::var_os("CAREBI_UPDATE_GOLDEN").is_none() {
        return false;
    }
    let g = golden_dir();
    let _ = std::fs::remove_dir_all(&g);
    for r in artifacts(from) {
        let dst = g.join(&r);
        std::fs::create_dir_all(dst.parent().unwrap()).unwrap();
        std::fs::copy(from.join(&r), dst).unwrap();
    }
    true
}
