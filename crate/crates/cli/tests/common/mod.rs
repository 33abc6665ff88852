#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small pipeline: 40 bend frames at 96 points, 24 presses, a 2 x 2 sweep.
pub const TINY: &str = r#"
seed = 3

[render]
pixel_mm = 1.0

[[render.scenarios]]
name = "straight"

[[render.scenarios]]
name = "bent"
bend = { kappa_long_per_mm = 0.01 }

[[render.indents]]
name = "sphere"
indenter = { kind = "sphere", radius_mm = 5.0 }
center_mm = [55.0, 20.0]
depth_mm = 1.0

[design]
group_size = 6
pixel_mm = 1.0

[dataset]
frames = 30
holdout = 10
n_points = 96
mask_resolution = 64

[autoencoder.train]
epochs = 3
batch_size = 8

[proprio.train]
epochs = 3
batch_size = 8

[tactile]
data = { n_samples = 24, pixel_mm = 0.5 }
model = { hidden = 32 }
train = { epochs = 2, batch_size = 256 }

[reconstruct]
sweep = { locations = 2, bend_levels = 2, pixel_mm = 0.5 }

[evaluate]
latency_points = 256
latency_reps = 2
"#;

pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new(config: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("config.toml"), config).unwrap();
        Self { dir }
    }

    pub fn config_path(&self) -> PathBuf {
        self.dir.path().join("config.toml")
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Run `gelsim --config <cfg> --out <dir>/<out> args...`.
    pub fn run(&self, out: &str, args: &[&str]) -> Output {
        gelsim(&self.config_path(), &self.out(out), args)
    }

    pub fn ok(&self, out: &str, args: &[&str]) {
        let o = self.run(out, args);
        assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    }
}

pub fn gelsim(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gelsim"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

pub fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

/// Every file below `root`, relative and sorted.
pub fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}
