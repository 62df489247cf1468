use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::CliResult;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Record of one invocation: what was asked, what it resolved to, what it wrote.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub args: Vec<String>,
    pub resolved: &'a C,
    pub outputs: Vec<String>,
}

/// Writes `manifest.json` into `dir`. The argument list leaves out the
/// program path so manifests do not depend on where the binary lives.
pub fn write_manifest<C: Serialize>(
    dir: &Path,
    subcommand: &'static str,
    resolved: &C,
    mut outputs: Vec<String>,
) -> CliResult<()> {
    outputs.sort();
    let manifest = Manifest {
        tool: "seft",
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        args: std::env::args().skip(1).collect(),
        resolved,
        outputs,
    };
    fs::write(
        dir.join(MANIFEST_FILE),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<String> {
    fs::write(dir.join(name), serde_json::to_vec_pretty(value)?)?;
    Ok(name.to_string())
}
