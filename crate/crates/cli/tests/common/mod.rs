#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// A pipeline small enough to run end-to-end in a few seconds: 4 classes x 2 variants.
pub const SMALL_CONFIG: &str = r#"{
  "seed": 7,
  "world": {
    "classes": 4, "variants": 2, "height": 16, "width": 16, "glimpse": 4, "stride": 4,
    "blobs": 2, "blob_size": 2, "jitter": 1, "confuser": {"x": 0, "y": 0, "width": 4, "height": 4}
  },
  "data": {"train": 64, "val": 32, "test": 32, "bank": 64},
  "avp": {"epochs": 3, "batch": 16, "val_histories": 64, "lr": 0.01},
  "pca": {"latent": 8},
  "boed": {"steps": 2, "samples": 16, "count": 8, "completion": {"k1": 64, "k2": 16}, "handcrafted": [[1, 1], [2, 2]]},
  "attention": {"embed": 8, "hidden": 8, "train": {"steps": 2, "batch": 16, "epochs": 3}, "eval_episodes": 1}
}"#;

pub fn glimpse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glimpse"))
        .args(args)
        .output()
        .expect("spawn glimpse binary")
}

pub fn glimpse_ok(args: &[&str]) -> Output {
    let out = glimpse(args);
    assert!(
        out.status.success(),
        "glimpse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

/// Runs world-gen through eval for every method into `out`.
pub fn full_pipeline(config: &str, out: &Path) {
    let out = out.to_str().unwrap();
    let base = ["--config", config, "--out", out];
    let run = |extra: &[&str]| {
        let args: Vec<&str> = extra.iter().chain(base.iter()).copied().collect();
        glimpse_ok(&args);
    };
    run(&["world-gen"]);
    run(&["avp-train"]);
    run(&["pca-fit"]);
    for kind in ["nogs", "h1", "h5", "hgs"] {
        run(&["annotate", "--kind", kind]);
    }
    for method in ["ram", "ps-nogs", "ps-h1", "ps-h5", "ps-hgs"] {
        run(&["attn-train", "--method", method]);
        run(&["eval", "--method", method]);
    }
    run(&["heatmap", "--image", "3"]);
}

/// Every regular file in `dir` by name.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect()
}
