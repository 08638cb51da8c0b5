//! Run manifests. A manifest is a valid config file: provenance lines are
//! `#` comments and the body is the fully resolved config, so
//! `nexf <cmd> --config <run>/manifest.txt` repeats the run.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nexf_core::RunConfig;
use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.txt";

pub fn sha256_file(path: &Path) -> io::Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub struct Manifest {
    pub command: String,
    pub threads: usize,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started: u64,
}

impl Manifest {
    pub fn start(command: &str, threads: usize) -> Self {
        Self {
            command: command.to_string(),
            threads,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: unix_now(),
        }
    }

    pub fn write(&self, dir: &Path, config: &RunConfig) -> io::Result<PathBuf> {
        let mut text = String::new();
        text.push_str(&format!("# tool: nexf {}\n", env!("CARGO_PKG_VERSION")));
        text.push_str(&format!("# command: {}\n", self.command));
        text.push_str(&format!("# threads: {}\n", self.threads));
        text.push_str(&format!("# started: {}\n", self.started));
        text.push_str(&format!("# finished: {}\n", unix_now()));
        for input in &self.inputs {
            text.push_str(&format!(
                "# input: {} sha256={}\n",
                input.display(),
                sha256_file(input)?
            ));
        }
        for output in &self.outputs {
            let hash = sha256_file(output).unwrap_or_else(|_| "missing".into());
            text.push_str(&format!("# output: {} sha256={}\n", output.display(), hash));
        }
        text.push('\n');
        text.push_str(&config.to_text());
        let path = dir.join(FILE_NAME);
        fs::write(&path, text)?;
        Ok(path)
    }
}
