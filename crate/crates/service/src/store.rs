//! On-disk layout under the data directory:
//!
//! ```text
//! banks/{id}.json
//! policies/{id}.json
//! sessions/{id}/snapshot.json
//! sessions/{id}/events.jsonl
//! ```

use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use deepcat_core::mirt::BankDocument;
use deepcat_rl::Checkpoint;
use uuid::Uuid;

use crate::live::{SessionEvent, SessionSnapshot};

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents)?;
    fs::rename(tmp, path)
}

fn invalid(path: &Path, e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display()))
}

fn json_files(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        for sub in ["banks", "policies", "sessions"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn save_bank(&self, id: &str, doc: &BankDocument) -> io::Result<()> {
        write_atomic(
            &self.root.join("banks").join(format!("{id}.json")),
            &serde_json::to_vec(doc)?,
        )
    }

    pub fn load_banks(&self) -> io::Result<Vec<(String, BankDocument)>> {
        json_files(&self.root.join("banks"))?
            .into_iter()
            .map(|p| {
                let doc = serde_json::from_slice(&fs::read(&p)?).map_err(|e| invalid(&p, e))?;
                Ok((stem(&p), doc))
            })
            .collect()
    }

    pub fn save_policy(&self, id: &str, ckpt: &Checkpoint) -> io::Result<()> {
        let json = ckpt.to_json().map_err(|e| io::Error::other(e.to_string()))?;
        write_atomic(&self.root.join("policies").join(format!("{id}.json")), json.as_bytes())
    }

    /// Policies ordered oldest first by modification time.
    pub fn load_policies(&self) -> io::Result<Vec<(String, Checkpoint)>> {
        let mut out: Vec<(SystemTime, String, Checkpoint)> = json_files(&self.root.join("policies"))?
            .into_iter()
            .map(|p| {
                let ckpt = Checkpoint::from_json(&fs::read_to_string(&p)?).map_err(|e| invalid(&p, e))?;
                Ok((fs::metadata(&p)?.modified()?, stem(&p), ckpt))
            })
            .collect::<io::Result<_>>()?;
        out.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        Ok(out.into_iter().map(|(_, id, c)| (id, c)).collect())
    }

    fn session_dir(&self, id: Uuid) -> PathBuf {
        self.root.join("sessions").join(id.to_string())
    }

    /// Append the event, then replace the snapshot.
    pub fn persist(&self, snap: &SessionSnapshot, event: &SessionEvent) -> io::Result<()> {
        let dir = self.session_dir(snap.id);
        fs::create_dir_all(&dir)?;
        let mut log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join("events.jsonl"))?;
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        log.write_all(&line)?;
        log.sync_data()?;
        write_atomic(&dir.join("snapshot.json"), &serde_json::to_vec(snap)?)
    }

    pub fn load_sessions(&self) -> io::Result<Vec<SessionSnapshot>> {
        let mut out = Vec::new();
        let mut dirs: Vec<PathBuf> = fs::read_dir(self.root.join("sessions"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("snapshot.json").is_file())
            .collect();
        dirs.sort();
        for d in dirs {
            let p = d.join("snapshot.json");
            out.push(serde_json::from_slice(&fs::read(&p)?).map_err(|e| invalid(&p, e))?);
        }
        Ok(out)
    }

    pub fn read_events(&self, id: Uuid) -> io::Result<Vec<SessionEvent>> {
        let path = self.session_dir(id).join("events.jsonl");
        let file = match fs::File::open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        io::BufReader::new(file)
            .lines()
            .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
            .map(|l| serde_json::from_str(&l?).map_err(|e| invalid(&path, e)))
            .collect()
    }
}
