use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use koopmankit::dynamics::{write_table, Trajectory};
use serde::Serialize;

use crate::CliResult;

/// Output directory with a fixed file-name prefix; records what it wrote.
pub struct Sink {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    pub fn trajectory(&mut self, name: &str, traj: &Trajectory) -> CliResult<()> {
        let w = self.create(name)?;
        traj.write_csv(w)?;
        Ok(())
    }

    pub fn table(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> CliResult<()> {
        let w = self.create(name)?;
        let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
        write_table(w, &header, rows)?;
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(koopmankit::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    pub fn text(&mut self, name: &str, body: &str) -> CliResult<()> {
        let mut w = self.create(name)?;
        w.write_all(body.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn report(&self) {
        for p in &self.written {
            println!("{}", p.display());
        }
    }
}
