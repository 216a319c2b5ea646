use std::fs;
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

/// The only directory a command may write into.
pub struct OutDir {
    root: PathBuf,
}

/// Turns a run id into a file-name stem.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Path of `rel` inside the directory. `rel` must stay inside it.
    pub fn file(&self, rel: &str) -> Result<PathBuf> {
        let p = Path::new(rel);
        if !p.components().all(|c| matches!(c, Component::Normal(_))) {
            bail!("refusing to write `{rel}` outside the output directory");
        }
        let full = self.root.join(p);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(full)
    }

    /// A fresh, empty stream file.
    pub fn fresh(&self, rel: &str) -> Result<PathBuf> {
        let p = self.file(rel)?;
        if p.exists() {
            fs::remove_file(&p)?;
        }
        Ok(p)
    }

    pub fn write_csv<T: Serialize>(&self, rel: &str, rows: &[T]) -> Result<PathBuf> {
        let p = self.file(rel)?;
        let mut w = csv::Writer::from_path(&p)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<PathBuf> {
        let p = self.file(rel)?;
        fs::write(&p, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stays_inside() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(dir.path()).unwrap();
        assert!(out.file("../x").is_err());
        assert!(out.file("/etc/x").is_err());
        assert!(out.file("a/b.csv").unwrap().starts_with(dir.path()));
        assert_eq!(file_stem("matrix-game-fixed:1,0-7"), "matrix-game-fixed_1_0-7");
    }
}
