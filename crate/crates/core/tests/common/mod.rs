#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

/// Overrides that shrink the toy config to a few seconds of work.
pub const TINY: &[&str] = &[
    "num_seeds=1",
    "dataset.per_class=12",
    "dataset.image_size=8",
    "dataset.test_per_class=6",
    "dataset.aux_per_class=6",
    "train.max_steps=6",
    "train.batch_size=8",
    "train.eval_interval=3",
    "pretrain.train.max_steps=4",
    "pretrain.train.batch_size=8",
    "pretrain.train.eval_interval=2",
    "vae.latent_dim=4",
    "vae.decoder_channels=8",
    "vae.epochs=2",
    "vae.batch_size=8",
    "vae.pad_count=null",
    "mixmatch.max_steps=4",
    "mixmatch.batch_size=8",
    "mixmatch.eval_interval=2",
    "k_synth=10",
    "num_iterations=2",
];

pub fn cgssl(args: &[&str], run_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cgssl"));
    cmd.args(args).env_remove("CGSSL_RUN_DIR").env("RUST_LOG", "error");
    if let Some(dir) = run_dir {
        cmd.arg("--run-dir").arg(dir);
    }
    cmd.output().expect("binary runs")
}

/// `args` followed by one `--set` per tiny override.
pub fn with_tiny<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut out = args.to_vec();
    for o in TINY {
        out.push("--set");
        out.push(o);
    }
    out
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

/// Relative path -> sha256 of every file under `dir`.
pub fn tree_digest(dir: &Path) -> BTreeMap<PathBuf, String> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).unwrap();
                let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), hex);
            }
        }
    }
    out
}

pub fn read(path: impl AsRef<Path>) -> Vec<u8> {
    let path = path.as_ref();
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_slice(&read(path)).unwrap()
}

pub struct GradCheck {
    /// Largest relative error over the coordinates where the stencil is smooth.
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates whose `eps` stencil straddles a ReLU kink: the central
    /// difference at `eps` disagrees with the one at `eps / 10`.
    pub kinks: usize,
}

fn relative(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compare `analytic` with central finite differences of `f` at every
/// coordinate of `x`, using `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    x: &mut [f64],
    analytic: &[f64],
    eps: f64,
    floor: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> GradCheck {
    let mut central = |x: &mut [f64], i: usize, h: f64| {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(x);
        x[i] = orig - h;
        let down = f(x);
        x[i] = orig;
        (up - down) / (2.0 * h)
    };
    let mut out = GradCheck {
        max_relative_error: 0.0,
        checked: 0,
        kinks: 0,
    };
    for i in 0..x.len() {
        let numeric = central(x, i, eps);
        let err = relative(analytic[i], numeric, floor);
        if err > 1e-3 && relative(numeric, central(x, i, eps / 10.0), floor) > 1e-3 {
            out.kinks += 1;
            continue;
        }
        out.checked += 1;
        out.max_relative_error = out.max_relative_error.max(err);
    }
    out
}
