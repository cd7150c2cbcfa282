use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return;
    };
    for entry in entries.flatten() {
        let path = entry.path();
        if path.is_dir() {
            collect(&path, out);
        } else if path.extension().is_some_and(|e| e == "rs") {
            out.push(path);
        }
    }
}

fn main() {
    let root = PathBuf::from(std::env::var("CARGO_MANIFEST_DIR").unwrap());
    let mut files = Vec::new();
    for dir in ["src", "../autograd/src"] {
        collect(&root.join(dir), &mut files);
    }
    files.sort();
    let mut hasher = Sha256::new();
    for f in &files {
        let body = std::fs::read(f).unwrap_or_default();
        // blob-style framing: "<relative path>\0<len>\0<content>"
        let rel = f.strip_prefix(&root).unwrap_or(f);
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update(body.len().to_string().as_bytes());
        hasher.update([0]);
        hasher.update(&body);
        println!("cargo:rerun-if-changed={}", f.display());
    }
    println!("cargo:rerun-if-changed=src");
    println!("cargo:rerun-if-changed=../autograd/src");
    println!(
        "cargo:rustc-env=DCCYCLE_SOURCE_HASH={}",
        hex::encode(hasher.finalize())
    );
}
