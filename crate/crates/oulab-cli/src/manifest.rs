//! Run manifest: config hash, seed, tool version, wall time, and the fully
//! resolved config (defaults included) echoed back.

use crate::{AppError, RunContext};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Serialize)]
struct RunMeta<'a> {
    tool_version: String,
    command: &'a str,
    config_hash: String,
    seed: u64,
    threads: usize,
    wall_seconds: f64,
    violations: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: RunMeta<'a>,
    effective_config: &'a crate::config::RunConfig,
}

pub fn write(ctx: &RunContext, command: &str, violations: u64) -> Result<(), AppError> {
    let manifest = Manifest {
        run: RunMeta {
            tool_version: format!("oulab {}", env!("CARGO_PKG_VERSION")),
            command,
            config_hash: format!("sha256:{}", ctx.config_hash),
            seed: ctx.cfg.simulation.seed,
            threads: ctx.threads,
            wall_seconds: ctx.started.elapsed().as_secs_f64(),
            violations,
        },
        effective_config: &ctx.cfg,
    };
    let text = toml::to_string(&manifest)
        .map_err(|e| AppError::Runtime(format!("manifest serialization: {e}")))?;
    let path = ctx.out_dir.join("manifest.toml");
    std::fs::write(&path, text)
        .map_err(|e| AppError::Runtime(format!("cannot write {}: {e}", path.display())))
}
