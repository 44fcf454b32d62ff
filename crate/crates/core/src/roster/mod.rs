//! Students, their face photos and embeddings, consent and willingness to
//! interact. The roster is the only source of matchable identities.
//!
//! Mutations go through a single writer; readers get cloned records.
//! Withdrawing consent purges photos and embeddings from memory and from
//! the backing store.

mod store;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, Timestamp};
use crate::raster::Raster;
use crate::recognizer::{Embedder, Embedding, GalleryEntry};

pub use store::{load_store, save_store};

#[derive(Debug, Error)]
pub enum RosterError {
    #[error("enrollment needs at least 1 front and 2 side photos, got {front} front and {side} side")]
    InsufficientPhotos { front: usize, side: usize },
    #[error("photo {index} is empty")]
    EmptyPhoto { index: usize },
    #[error("could not embed photo {index}: {reason}")]
    EmbeddingFailure { index: usize, reason: String },
    #[error("display name must not be empty")]
    InvalidName,
    #[error("unknown student {0}")]
    UnknownStudent(StudentId),
    #[error("student {0} has withdrawn consent")]
    WithdrawnStudent(StudentId),
    #[error("corrupt store: {0}")]
    CorruptStore(String),
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StudentId(pub String);

impl std::fmt::Display for StudentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for StudentId {
    fn from(s: &str) -> Self {
        StudentId(s.to_string())
    }
}

/// Willingness to interact, set by the student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WtoILevel {
    High,
    Medium,
    Low,
}

impl WtoILevel {
    pub const ALL: [WtoILevel; 3] = [WtoILevel::High, WtoILevel::Medium, WtoILevel::Low];

    pub fn color(self) -> ColorClass {
        match self {
            WtoILevel::High => ColorClass::Green,
            WtoILevel::Medium => ColorClass::Yellow,
            WtoILevel::Low => ColorClass::Red,
        }
    }

    /// Numeric coding used for averages: High 2, Medium 1, Low 0.
    pub fn code(self) -> u8 {
        match self {
            WtoILevel::High => 2,
            WtoILevel::Medium => 1,
            WtoILevel::Low => 0,
        }
    }
}

impl std::fmt::Display for WtoILevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            WtoILevel::High => "High",
            WtoILevel::Medium => "Medium",
            WtoILevel::Low => "Low",
        };
        f.write_str(s)
    }
}

/// Overlay color class; `Neutral` marks boxes without an identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorClass {
    Green,
    Yellow,
    Red,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pose {
    Front,
    Side,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Consent {
    Enrolled,
    Withdrawn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacePhoto {
    pub photo_id: String,
    pub pose: Pose,
    /// Original uploaded bytes.
    #[serde(skip)]
    pub image: Vec<u8>,
    pub uploaded_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WtoIChange {
    pub at: Timestamp,
    pub wtoi: WtoILevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub student_id: StudentId,
    pub display_name: String,
    pub consent: Consent,
    pub wtoi: WtoILevel,
    pub photos: Vec<FacePhoto>,
    /// One per photo, same order.
    #[serde(skip)]
    pub embeddings: Vec<Embedding>,
    pub wtoi_history: Vec<WtoIChange>,
}

fn pose_counts<'a>(poses: impl Iterator<Item = &'a Pose>) -> (usize, usize) {
    poses.fold((0, 0), |(f, s), p| match p {
        Pose::Front => (f + 1, s),
        Pose::Side => (f, s + 1),
    })
}

impl StudentRecord {
    /// Check the record-level invariants; the message names the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        match self.consent {
            Consent::Withdrawn => {
                if !self.photos.is_empty() || !self.embeddings.is_empty() {
                    return Err(format!("{}: withdrawn record still holds data", self.student_id));
                }
            }
            Consent::Enrolled => {
                let (front, side) = pose_counts(self.photos.iter().map(|p| &p.pose));
                if front < 1 || side < 2 {
                    return Err(format!("{}: pose mix {front} front / {side} side", self.student_id));
                }
                if self.embeddings.is_empty() || self.embeddings.len() != self.photos.len() {
                    return Err(format!("{}: embeddings do not match photos", self.student_id));
                }
                if self.photos.iter().any(|p| p.image.is_empty()) {
                    return Err(format!("{}: empty photo", self.student_id));
                }
            }
        }
        for e in &self.embeddings {
            if (e.norm() - 1.0).abs() > 1e-6 {
                return Err(format!("{}: embedding norm {}", self.student_id, e.norm()));
            }
        }
        match self.wtoi_history.last() {
            Some(last) if last.wtoi == self.wtoi => Ok(()),
            _ => Err(format!("{}: history does not end at current wtoi", self.student_id)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhotoUpload {
    pub image: Vec<u8>,
    pub pose: Pose,
}

#[derive(Debug, Default)]
struct RosterState {
    records: BTreeMap<StudentId, StudentRecord>,
    next_student: u64,
    next_photo: u64,
}

impl RosterState {
    fn from_records(records: Vec<StudentRecord>) -> Self {
        fn seq(s: &str) -> u64 {
            s.rsplit('-').next().and_then(|d| d.parse().ok()).unwrap_or(0)
        }
        let next_student = records.iter().map(|r| seq(&r.student_id.0)).max().unwrap_or(0) + 1;
        let next_photo = records
            .iter()
            .flat_map(|r| r.photos.iter().map(|p| seq(&p.photo_id)))
            .max()
            .unwrap_or(0)
            + 1;
        RosterState {
            records: records
                .into_iter()
                .map(|r| (r.student_id.clone(), r))
                .collect(),
            next_student,
            next_photo,
        }
    }
}

/// Read access held across a publish, so a withdrawal cannot complete
/// between the consent check and the publication.
pub struct RosterReadGuard<'a>(RwLockReadGuard<'a, RosterState>);

impl RosterReadGuard<'_> {
    pub fn is_enrolled(&self, id: &StudentId) -> bool {
        self.0
            .records
            .get(id)
            .is_some_and(|r| r.consent == Consent::Enrolled)
    }
}

pub struct Roster {
    state: RwLock<RosterState>,
    writer: Mutex<()>,
    store_root: Option<PathBuf>,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Roster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Roster")
            .field("store_root", &self.store_root)
            .field("students", &self.state.read().unwrap().records.len())
            .finish()
    }
}

fn embed_photo(
    index: usize,
    upload: &PhotoUpload,
    embedder: &dyn Embedder,
) -> Result<Embedding, RosterError> {
    if upload.image.is_empty() {
        return Err(RosterError::EmptyPhoto { index });
    }
    let fail = |reason: String| RosterError::EmbeddingFailure { index, reason };
    let raster = Raster::from_image_bytes(&upload.image).map_err(|e| fail(e.to_string()))?;
    let e = embedder.embed(&raster).map_err(|e| fail(e.to_string()))?;
    if e.dim() != embedder.dim() {
        return Err(fail(format!("dimension {} != {}", e.dim(), embedder.dim())));
    }
    Ok(e)
}

impl Roster {
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Roster {
            state: RwLock::new(RosterState {
                next_student: 1,
                next_photo: 1,
                ..Default::default()
            }),
            writer: Mutex::new(()),
            store_root: None,
            clock,
        }
    }

    /// Open a write-through roster under `dir` (layout `dir/roster/<id>/...`),
    /// loading whatever is already there.
    pub fn open(dir: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, RosterError> {
        let dir = dir.as_ref().to_path_buf();
        let records = if dir.join("roster").exists() {
            store::read_all(&dir)?
        } else {
            Vec::new()
        };
        Ok(Roster {
            state: RwLock::new(RosterState::from_records(records)),
            writer: Mutex::new(()),
            store_root: Some(dir),
            clock,
        })
    }

    pub(crate) fn from_records(records: Vec<StudentRecord>, clock: Arc<dyn Clock>) -> Self {
        Roster {
            state: RwLock::new(RosterState::from_records(records)),
            writer: Mutex::new(()),
            store_root: None,
            clock,
        }
    }

    pub fn store_root(&self) -> Option<&Path> {
        self.store_root.as_deref()
    }

    fn persist(&self, rec: &StudentRecord) -> Result<(), RosterError> {
        if let Some(root) = &self.store_root {
            store::write_record(root, rec)?;
        }
        Ok(())
    }

    pub fn enroll(
        &self,
        name: &str,
        photos: Vec<PhotoUpload>,
        wtoi: WtoILevel,
        embedder: &dyn Embedder,
    ) -> Result<StudentRecord, RosterError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(RosterError::InvalidName);
        }
        let (front, side) = pose_counts(photos.iter().map(|p| &p.pose));
        if front < 1 || side < 2 {
            return Err(RosterError::InsufficientPhotos { front, side });
        }
        let embeddings = photos
            .iter()
            .enumerate()
            .map(|(i, p)| embed_photo(i, p, embedder))
            .collect::<Result<Vec<_>, _>>()?;

        let _w = self.writer.lock().unwrap();
        let now = self.clock.now();
        let (id, first_photo) = {
            let s = self.state.read().unwrap();
            (StudentId(format!("stu-{:06}", s.next_student)), s.next_photo)
        };
        let record = StudentRecord {
            student_id: id.clone(),
            display_name: name.to_string(),
            consent: Consent::Enrolled,
            wtoi,
            photos: photos
                .into_iter()
                .enumerate()
                .map(|(i, p)| FacePhoto {
                    photo_id: format!("ph-{:06}", first_photo + i as u64),
                    pose: p.pose,
                    image: p.image,
                    uploaded_at: now,
                })
                .collect(),
            embeddings,
            wtoi_history: vec![WtoIChange { at: now, wtoi }],
        };
        self.persist(&record)?;
        let mut s = self.state.write().unwrap();
        s.next_student += 1;
        s.next_photo += record.photos.len() as u64;
        s.records.insert(id, record.clone());
        Ok(record)
    }

    /// Add one more photo (and its embedding) to an enrolled student.
    pub fn add_photo(
        &self,
        id: &StudentId,
        upload: PhotoUpload,
        embedder: &dyn Embedder,
    ) -> Result<StudentRecord, RosterError> {
        self.enrolled(id)?;
        let embedding = embed_photo(0, &upload, embedder)?;
        let _w = self.writer.lock().unwrap();
        let mut rec = self.enrolled(id)?;
        let photo_id = format!("ph-{:06}", self.state.read().unwrap().next_photo);
        rec.photos.push(FacePhoto {
            photo_id,
            pose: upload.pose,
            image: upload.image,
            uploaded_at: self.clock.now(),
        });
        rec.embeddings.push(embedding);
        self.persist(&rec)?;
        let mut s = self.state.write().unwrap();
        s.next_photo += 1;
        s.records.insert(id.clone(), rec.clone());
        Ok(rec)
    }

    fn enrolled(&self, id: &StudentId) -> Result<StudentRecord, RosterError> {
        let rec = self.get(id).ok_or_else(|| RosterError::UnknownStudent(id.clone()))?;
        if rec.consent == Consent::Withdrawn {
            return Err(RosterError::WithdrawnStudent(id.clone()));
        }
        Ok(rec)
    }

    pub fn set_wtoi(&self, id: &StudentId, level: WtoILevel) -> Result<StudentRecord, RosterError> {
        let _w = self.writer.lock().unwrap();
        let mut rec = self.enrolled(id)?;
        rec.wtoi = level;
        rec.wtoi_history.push(WtoIChange {
            at: self.clock.now(),
            wtoi: level,
        });
        self.persist(&rec)?;
        self.state
            .write()
            .unwrap()
            .records
            .insert(id.clone(), rec.clone());
        Ok(rec)
    }

    /// Withdraw consent: photos and embeddings are deleted, not hidden.
    pub fn withdraw(&self, id: &StudentId) -> Result<StudentRecord, RosterError> {
        let _w = self.writer.lock().unwrap();
        let mut rec = self
            .get(id)
            .ok_or_else(|| RosterError::UnknownStudent(id.clone()))?;
        rec.consent = Consent::Withdrawn;
        rec.photos.clear();
        rec.embeddings.clear();
        if let Some(root) = &self.store_root {
            store::write_record(root, &rec)?;
            store::purge_photos(root, id)?;
        }
        self.state
            .write()
            .unwrap()
            .records
            .insert(id.clone(), rec.clone());
        Ok(rec)
    }

    pub fn get(&self, id: &StudentId) -> Option<StudentRecord> {
        self.state.read().unwrap().records.get(id).cloned()
    }

    pub fn records(&self) -> Vec<StudentRecord> {
        self.state.read().unwrap().records.values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.state.read().unwrap().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Matchable identities: exactly the enrolled records.
    pub fn gallery(&self) -> Vec<GalleryEntry> {
        self.state
            .read()
            .unwrap()
            .records
            .values()
            .filter(|r| r.consent == Consent::Enrolled)
            .map(|r| GalleryEntry {
                student_id: r.student_id.clone(),
                display_name: r.display_name.clone(),
                wtoi: r.wtoi,
                photo_ids: r.photos.iter().map(|p| p.photo_id.clone()).collect(),
                embeddings: r.embeddings.clone(),
            })
            .collect()
    }

    pub fn read_guard(&self) -> RosterReadGuard<'_> {
        RosterReadGuard(self.state.read().unwrap())
    }

    /// Write the full roster under `dir` (layout `dir/roster/<id>/...`).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), RosterError> {
        let _w = self.writer.lock().unwrap();
        save_store(dir.as_ref(), &self.records())
    }

    pub fn load(dir: impl AsRef<Path>, clock: Arc<dyn Clock>) -> Result<Self, RosterError> {
        Ok(Roster::from_records(load_store(dir.as_ref())?, clock))
    }
}
