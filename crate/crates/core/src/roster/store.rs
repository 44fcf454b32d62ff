//! On-disk layout:
//!
//! ```text
//! <root>/roster/<student_id>/meta.json
//! <root>/roster/<student_id>/photos/<photo_id>.<ext>
//! ```
//!
//! `meta.json` holds id, name, consent, wtoi, history, the photo manifest
//! and the embeddings as base64 of little-endian f32.

use std::fs;
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Consent, FacePhoto, Pose, RosterError, StudentId, StudentRecord, WtoIChange, WtoILevel};
use crate::clock::Timestamp;
use crate::recognizer::Embedding;

#[derive(Debug, Serialize, Deserialize)]
struct PhotoEntry {
    photo_id: String,
    pose: Pose,
    uploaded_at: Timestamp,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    id: StudentId,
    name: String,
    consent: Consent,
    wtoi: WtoILevel,
    history: Vec<WtoIChange>,
    photos: Vec<PhotoEntry>,
    embeddings: Vec<String>,
}

fn student_dir(root: &Path, id: &StudentId) -> PathBuf {
    root.join("roster").join(&id.0)
}

fn extension(bytes: &[u8]) -> &'static str {
    match image::guess_format(bytes) {
        Ok(image::ImageFormat::Png) => "png",
        Ok(image::ImageFormat::Jpeg) => "jpg",
        _ => "bin",
    }
}

pub(super) fn encode_embedding(e: &Embedding) -> String {
    let bytes: Vec<u8> = e.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub(super) fn decode_embedding(s: &str) -> Result<Embedding, String> {
    let bytes = B64.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 || bytes.is_empty() {
        return Err("embedding byte length is not a positive multiple of 4".into());
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Embedding::from_raw(values))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

pub(super) fn write_record(root: &Path, rec: &StudentRecord) -> Result<(), RosterError> {
    let dir = student_dir(root, &rec.student_id);
    let photo_dir = dir.join("photos");
    fs::create_dir_all(&dir)?;
    let mut entries = Vec::with_capacity(rec.photos.len());
    for p in &rec.photos {
        let file = format!("{}.{}", p.photo_id, extension(&p.image));
        let path = photo_dir.join(&file);
        if !path.exists() {
            fs::create_dir_all(&photo_dir)?;
            write_atomic(&path, &p.image)?;
        }
        entries.push(PhotoEntry {
            photo_id: p.photo_id.clone(),
            pose: p.pose,
            uploaded_at: p.uploaded_at,
            file,
        });
    }
    let meta = Meta {
        id: rec.student_id.clone(),
        name: rec.display_name.clone(),
        consent: rec.consent,
        wtoi: rec.wtoi,
        history: rec.wtoi_history.clone(),
        photos: entries,
        embeddings: rec.embeddings.iter().map(encode_embedding).collect(),
    };
    let json = serde_json::to_vec_pretty(&meta).map_err(std::io::Error::other)?;
    write_atomic(&dir.join("meta.json"), &json)?;
    Ok(())
}

pub(super) fn purge_photos(root: &Path, id: &StudentId) -> Result<(), RosterError> {
    let photo_dir = student_dir(root, id).join("photos");
    if photo_dir.exists() {
        fs::remove_dir_all(photo_dir)?;
    }
    Ok(())
}

fn read_record(dir: &Path) -> Result<StudentRecord, RosterError> {
    let corrupt = |m: String| RosterError::CorruptStore(format!("{}: {m}", dir.display()));
    let text = fs::read_to_string(dir.join("meta.json")).map_err(|e| corrupt(e.to_string()))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    if dir.file_name().and_then(|n| n.to_str()) != Some(meta.id.0.as_str()) {
        return Err(corrupt("directory name does not match id".into()));
    }
    let mut photos = Vec::with_capacity(meta.photos.len());
    for p in meta.photos {
        let image = fs::read(dir.join("photos").join(&p.file))
            .map_err(|e| corrupt(format!("photo {}: {e}", p.photo_id)))?;
        photos.push(FacePhoto {
            photo_id: p.photo_id,
            pose: p.pose,
            image,
            uploaded_at: p.uploaded_at,
        });
    }
    let embeddings = meta
        .embeddings
        .iter()
        .map(|s| decode_embedding(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(corrupt)?;
    let rec = StudentRecord {
        student_id: meta.id,
        display_name: meta.name,
        consent: meta.consent,
        wtoi: meta.wtoi,
        photos,
        embeddings,
        wtoi_history: meta.history,
    };
    rec.check_invariants().map_err(corrupt)?;
    Ok(rec)
}

/// Write every record under `root/roster/`.
pub fn save_store(root: &Path, records: &[StudentRecord]) -> Result<(), RosterError> {
    for rec in records {
        write_record(root, rec)?;
        if rec.consent == Consent::Withdrawn {
            purge_photos(root, &rec.student_id)?;
        }
    }
    Ok(())
}

/// Read and validate every record under `root/roster/`.
pub fn load_store(root: &Path) -> Result<Vec<StudentRecord>, RosterError> {
    read_all(root)
}

pub(super) fn read_all(root: &Path) -> Result<Vec<StudentRecord>, RosterError> {
    let dir = root.join("roster");
    let mut records = Vec::new();
    for entry in fs::read_dir(&dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            records.push(read_record(&entry.path())?);
        }
    }
    records.sort_by(|a, b| a.student_id.cmp(&b.student_id));
    let dims: std::collections::BTreeSet<usize> = records
        .iter()
        .flat_map(|r| r.embeddings.iter().map(|e| e.dim()))
        .collect();
    if dims.len() > 1 {
        return Err(RosterError::CorruptStore(format!("mixed embedding dimensions {dims:?}")));
    }
    Ok(records)
}
