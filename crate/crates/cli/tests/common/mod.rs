#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

use sha2::{Digest, Sha256};

/// Runs the CLI in-process with `--out out` appended.
pub fn huwin(args: &[&str], out: &Path) -> u8 {
    let mut argv = vec!["huwin".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.push("--out".into());
    argv.push(out.to_string_lossy().into_owned());
    huwin_cli::run_from(argv)
}

/// Runs the built binary from `cwd`; returns the exit code.
pub fn huwin_bin(cwd: &Path, args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_huwin"))
        .current_dir(cwd)
        .args(args)
        .output()
        .expect("spawn huwin")
        .status
        .code()
        .unwrap_or(-1)
}

/// SHA-256 over every file under `root`: relative path and contents, in
/// sorted path order.
pub fn tree_hash(root: &Path) -> String {
    fn walk(dir: &Path, root: &Path, files: &mut Vec<(String, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, files);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut files = Vec::new();
    walk(root, root, &mut files);
    files.sort();
    let mut h = Sha256::new();
    for (rel, bytes) in files {
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
