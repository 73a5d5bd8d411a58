use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut file = File::open(path).map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(format!("{:x}", hasher.finalize()))
}

/// A CSV file whose leading `#` lines record the command, the resolved
/// configuration and the hash of every input file.
pub struct CsvOut {
    w: BufWriter<File>,
}

impl CsvOut {
    pub fn create(path: &Path, command: &str, cfg: &ExperimentConfig, inputs: &[&Path], extra: &[String]) -> Result<Self, CliError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# jfp {command}")?;
        writeln!(w, "# config: {}", cfg.echo())?;
        for input in inputs {
            writeln!(w, "# input: {} sha256:{}", input.display(), sha256_file(input)?)?;
        }
        for line in extra {
            writeln!(w, "# {line}")?;
        }
        Ok(CsvOut { w })
    }

    pub fn line(&mut self, text: &str) -> Result<(), CliError> {
        writeln!(self.w, "{text}")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.w.flush()?;
        Ok(())
    }
}
