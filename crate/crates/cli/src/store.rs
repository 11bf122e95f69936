//! Output directory: provenance-stamped files and resumable stage results.

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Config hash and root seed stamped into every emitted file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    #[serde(flatten)]
    provenance: Provenance,
    stage: String,
    value: T,
}

pub struct Store {
    dir: PathBuf,
    pub provenance: Provenance,
}

impl Store {
    pub fn open(dir: &Path, provenance: Provenance) -> Result<Self> {
        std::fs::create_dir_all(dir.join("stages")).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Store { dir: dir.to_path_buf(), provenance })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn stage_path(&self, stage: &str) -> PathBuf {
        self.dir.join("stages").join(format!("{stage}.json"))
    }

    /// Returns the persisted result of `stage` when it was produced under the
    /// same config, otherwise runs `f` and persists its result.
    pub fn stage<T, F>(&self, stage: &str, f: F) -> Result<T>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce() -> Result<T>,
    {
        let path = self.stage_path(stage);
        if let Some(value) = self.load_stage(&path)? {
            log::info!("stage {stage}: reusing {}", path.display());
            return Ok(value);
        }
        log::info!("stage {stage}: running");
        let value = f().with_context(|| format!("stage {stage}"))?;
        let env = Envelope { provenance: self.provenance.clone(), stage: stage.to_string(), value };
        write_atomic(&path, serde_json::to_string(&env)?.as_bytes())?;
        Ok(env.value)
    }

    fn load_stage<T: DeserializeOwned>(&self, path: &Path) -> Result<Option<T>> {
        let Ok(text) = std::fs::read_to_string(path) else { return Ok(None) };
        match serde_json::from_str::<Envelope<T>>(&text) {
            Ok(env) if env.provenance == self.provenance => Ok(Some(env.value)),
            Ok(_) => {
                log::info!("{}: written under another config, recomputing", path.display());
                Ok(None)
            }
            Err(e) => {
                log::warn!("{}: unreadable ({e}), recomputing", path.display());
                Ok(None)
            }
        }
    }

    /// Writes a CSV whose first line is a provenance comment.
    pub fn write_csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<PathBuf> {
        let mut buf = self.comment_header().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        let path = self.path(name);
        write_atomic(&path, &buf)?;
        Ok(path)
    }

    /// Writes a JSON object carrying the provenance next to `value`'s fields.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Stamped<'a, T> {
            #[serde(flatten)]
            provenance: &'a Provenance,
            #[serde(flatten)]
            value: &'a T,
        }
        let text = serde_json::to_string_pretty(&Stamped { provenance: &self.provenance, value })?;
        let path = self.path(name);
        write_atomic(&path, format!("{text}\n").as_bytes())?;
        Ok(path)
    }

    pub fn write_text(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.path(name);
        write_atomic(&path, format!("{}{body}", self.comment_header()).as_bytes())?;
        Ok(path)
    }

    fn comment_header(&self) -> String {
        format!("# config_sha256={} seed={}\n", self.provenance.config_sha256, self.provenance.seed)
    }
}

/// Reads a JSON file written by [`Store::write_json`].
pub fn read_stamped<T: DeserializeOwned>(path: &Path) -> Result<(Provenance, T)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let provenance: Provenance =
        serde_json::from_str(&text).with_context(|| format!("{} lacks provenance", path.display()))?;
    let value: T = serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
    Ok((provenance, value))
}

/// Reads the value of a stage envelope, or the raw value when the file has none.
pub fn read_stage_or_raw<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    if let Ok(env) = serde_json::from_str::<Envelope<T>>(&text) {
        return Ok(env.value);
    }
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).with_context(|| format!("cannot write {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("cannot move {} into place", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn prov(hash: &str) -> Provenance {
        Provenance { config_sha256: hash.into(), seed: 1 }
    }

    #[test]
    fn stages_resume_only_under_the_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let runs = Cell::new(0);
        let work = || {
            runs.set(runs.get() + 1);
            Ok(vec![1.5, 2.5])
        };
        let a = Store::open(dir.path(), prov("a")).unwrap();
        assert_eq!(a.stage("s", work).unwrap(), vec![1.5, 2.5]);
        assert_eq!(a.stage("s", work).unwrap(), vec![1.5, 2.5]);
        assert_eq!(runs.get(), 1);
        let b = Store::open(dir.path(), prov("b")).unwrap();
        b.stage("s", work).unwrap();
        assert_eq!(runs.get(), 2);
    }

    #[test]
    fn emitted_files_carry_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path(), prov("abc")).unwrap();
        #[derive(Serialize)]
        struct Row {
            x: u32,
        }
        let csv = std::fs::read_to_string(s.write_csv("t.csv", &[Row { x: 1 }]).unwrap()).unwrap();
        assert_eq!(csv, "# config_sha256=abc seed=1\nx\n1\n");
        let path = s.write_json("t.json", &serde_json::json!({"k": 2})).unwrap();
        let (p, v): (Provenance, serde_json::Value) = read_stamped(&path).unwrap();
        assert_eq!(p, prov("abc"));
        assert_eq!(v["k"], 2);
    }
}
