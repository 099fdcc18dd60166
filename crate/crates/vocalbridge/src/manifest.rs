//! Tab-separated manifests tying utterances to their on-disk artifacts.
//!
//! Dataset manifest lines:
//! `speaker_id<TAB>utt_id<TAB>clean_latent_path<TAB>protected_latent_path<TAB>alignment_path`
//! Trial manifest lines:
//! `speaker_id<TAB>protected_path<TAB>purified_path`
//!
//! Paths are stored relative to the manifest's own directory when possible,
//! so a whole experiment tree can be moved or compared byte-for-byte.

use std::path::{Component, Path, PathBuf};

use crate::error::{CliError, Result};
use crate::files::atomic_write;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub speaker_id: String,
    pub utt_id: String,
    pub clean_path: PathBuf,
    pub protected_path: PathBuf,
    pub alignment_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRow {
    pub speaker_id: String,
    pub protected_path: PathBuf,
    pub purified_path: PathBuf,
}

fn format_err(path: &Path, line_no: usize, message: &str) -> CliError {
    CliError::Format {
        path: path.to_path_buf(),
        message: format!("line {line_no}: {message}"),
    }
}

/// Best-effort relative path from `base` to `target`; falls back to the
/// absolute target when the two share no usable prefix.
pub fn relative_to(base: &Path, target: &Path) -> PathBuf {
    let base_comps: Vec<Component> = base.components().collect();
    let target_comps: Vec<Component> = target.components().collect();
    if base.is_absolute() != target.is_absolute() {
        return target.to_path_buf();
    }
    let mut shared = 0;
    while shared < base_comps.len()
        && shared < target_comps.len()
        && base_comps[shared] == target_comps[shared]
    {
        shared += 1;
    }
    if shared == 0 {
        return target.to_path_buf();
    }
    let mut rel = PathBuf::new();
    for _ in shared..base_comps.len() {
        rel.push("..");
    }
    for comp in &target_comps[shared..] {
        rel.push(comp);
    }
    if rel.as_os_str().is_empty() {
        rel.push(".");
    }
    rel
}

/// Lexically removes `.` and resolvable `..` components.
fn normalize(path: &Path) -> PathBuf {
    let mut out: Vec<Component> = Vec::new();
    for comp in path.components() {
        match comp {
            Component::CurDir => {}
            Component::ParentDir => {
                if matches!(out.last(), Some(Component::Normal(_))) {
                    out.pop();
                } else {
                    out.push(comp);
                }
            }
            other => out.push(other),
        }
    }
    out.iter().collect()
}

fn resolve(manifest_dir: &Path, stored: &str) -> PathBuf {
    let p = Path::new(stored);
    if p.is_absolute() {
        normalize(p)
    } else {
        normalize(&manifest_dir.join(p))
    }
}

fn encode(manifest_dir: &Path, target: &Path) -> String {
    relative_to(manifest_dir, target).to_string_lossy().into_owned()
}

pub fn write_dataset_manifest(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut text = String::new();
    for r in records {
        text.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.speaker_id,
            r.utt_id,
            encode(dir, &r.clean_path),
            encode(dir, &r.protected_path),
            encode(dir, &r.alignment_path),
        ));
    }
    atomic_write(path, text.as_bytes())
}

pub fn read_dataset_manifest(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(format_err(path, idx + 1, "expected 5 tab-separated fields"));
        }
        records.push(DatasetRecord {
            speaker_id: fields[0].to_string(),
            utt_id: fields[1].to_string(),
            clean_path: resolve(dir, fields[2]),
            protected_path: resolve(dir, fields[3]),
            alignment_path: resolve(dir, fields[4]),
        });
    }
    Ok(records)
}

pub fn write_trial_manifest(path: &Path, rows: &[TrialRow]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut text = String::new();
    for r in rows {
        text.push_str(&format!(
            "{}\t{}\t{}\n",
            r.speaker_id,
            encode(dir, &r.protected_path),
            encode(dir, &r.purified_path),
        ));
    }
    atomic_write(path, text.as_bytes())
}

pub fn read_trial_manifest(path: &Path) -> Result<Vec<TrialRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(format_err(path, idx + 1, "expected 3 tab-separated fields"));
        }
        rows.push(TrialRow {
            speaker_id: fields[0].to_string(),
            protected_path: resolve(dir, fields[1]),
            purified_path: resolve(dir, fields[2]),
        });
    }
    Ok(rows)
}

pub fn manifest_exists(path: &Path) -> bool {
    path.is_file()
}

/// The `<speaker>/<file-stem>` identity of a path, used to match trial rows
/// back to dataset records and to enforce dev/trial disjointness.
pub fn utt_key(path: &Path) -> String {
    let stem = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem = stem.split('.').next().unwrap_or("").to_string();
    let speaker = path
        .parent()
        .and_then(|p| p.file_name())
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{speaker}/{stem}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let manifest_path = root.join("data/train.tsv");
        let rec = DatasetRecord {
            speaker_id: "spk000".into(),
            utt_id: "utt003".into(),
            clean_path: root.join("data/spk000/utt003.clean.vblt"),
            protected_path: root.join("data/spk000/utt003.prot.vblt"),
            alignment_path: root.join("data/spk000/utt003.align.tsv"),
        };
        write_dataset_manifest(&manifest_path, &[rec.clone()]).unwrap();
        let text = std::fs::read_to_string(&manifest_path).unwrap();
        assert!(text.contains("spk000/utt003.clean.vblt"));
        assert!(!text.contains(root.to_str().unwrap()), "paths must be relative");
        let records = read_dataset_manifest(&manifest_path).unwrap();
        assert_eq!(records, vec![rec]);
    }

    #[test]
    fn sibling_directory_paths_use_dotdot() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let manifest_path = root.join("out/trials.tsv");
        let row = TrialRow {
            speaker_id: "spk001".into(),
            protected_path: root.join("data/spk001/utt000.prot.vblt"),
            purified_path: root.join("out/purified/spk001_utt000.vblt"),
        };
        write_trial_manifest(&manifest_path, &[row.clone()]).unwrap();
        let text = std::fs::read_to_string(&manifest_path).unwrap();
        assert!(text.contains("../data/spk001/utt000.prot.vblt"), "{text}");
        let rows = read_trial_manifest(&manifest_path).unwrap();
        assert_eq!(rows, vec![row]);
    }

    #[test]
    fn malformed_manifest_line_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, "only\ttwo\n").unwrap();
        let err = read_dataset_manifest(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn utt_key_extracts_speaker_and_stem() {
        let key = utt_key(Path::new("/x/data/spk003/utt007.prot.vblt"));
        assert_eq!(key, "spk003/utt007");
    }
}
