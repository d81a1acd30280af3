//! Snapshot inbox: a directory into which the feed drops snapshot documents.
//! Writers should create files under a temporary name (`*.tmp` or a leading
//! dot) and rename them into place.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use gridsa_core::netmodel::{load_snapshot, Snapshot};

pub const PROCESSED: &str = "processed";
pub const SUPERSEDED: &str = "superseded";
pub const REJECTED: &str = "rejected";

#[derive(Debug)]
pub struct Pending {
    pub path: PathBuf,
    pub snapshot: Snapshot,
}

fn candidates(inbox: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(inbox)? {
        let entry = entry?;
        if !entry.file_type()?.is_file() {
            continue;
        }
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !name.ends_with(".json") {
            continue;
        }
        out.push(path);
    }
    out.sort();
    Ok(out)
}

/// Moves `path` into the `sub` directory of `inbox`.
pub fn file_away(inbox: &Path, path: &Path, sub: &str) -> io::Result<PathBuf> {
    let dir = inbox.join(sub);
    fs::create_dir_all(&dir)?;
    let dest = dir.join(path.file_name().unwrap_or_default());
    fs::rename(path, &dest)?;
    Ok(dest)
}

/// Moves `path` to `rejected/` next to a note giving the reason.
pub fn reject(inbox: &Path, path: &Path, reason: &str) -> io::Result<()> {
    let dest = file_away(inbox, path, REJECTED)?;
    let mut note = dest.into_os_string();
    note.push(".error.txt");
    fs::write(note, format!("{reason}\n"))
}

/// The newest snapshot in the inbox by timestamp. Older ones move to
/// `superseded/`, unreadable ones to `rejected/`.
pub fn take_newest(inbox: &Path) -> io::Result<Option<Pending>> {
    let mut parsed = Vec::new();
    for path in candidates(inbox)? {
        let result = fs::File::open(&path)
            .map_err(|e| e.to_string())
            .and_then(|f| load_snapshot(io::BufReader::new(f)).map_err(|e| e.to_string()));
        match result {
            Ok(snapshot) => parsed.push(Pending { path, snapshot }),
            Err(reason) => {
                tracing::warn!(file = %path.display(), %reason, "rejecting inbox file");
                reject(inbox, &path, &reason)?;
            }
        }
    }
    parsed.sort_by(|a, b| {
        (a.snapshot.timestamp, &a.path).cmp(&(b.snapshot.timestamp, &b.path))
    });
    let newest = parsed.pop();
    for old in parsed {
        tracing::info!(file = %old.path.display(), "superseded by a newer snapshot");
        file_away(inbox, &old.path, SUPERSEDED)?;
    }
    Ok(newest)
}
