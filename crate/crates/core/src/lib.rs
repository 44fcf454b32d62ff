//! classview-core: the processing side of a classroom interaction-support
//! service.
//!
//! A pan-tilt camera sweeps the room under a rotation-speed cap, the frames
//! are stitched into a cylindrical panorama, faces are matched against the
//! gallery of enrolled and consenting students, and the teacher gets an
//! annotated view in which clicking a face reveals the student's name and
//! willingness to interact.
//!
//! Modules:
//!
//! 1. [`roster`] – students, photos, embeddings, consent and willingness.
//! 2. [`scanplan`] – pan/tilt sweep planning and timing under the speed cap.
//! 3. [`camsim`] – deterministic simulated classroom and camera driver.
//! 4. [`stitcher`] – known-rotation cylindrical stitching with mask-aware seams.
//! 5. [`recognizer`] – pluggable detection/embedding backends and open-set matching.
//! 6. [`session`] – the sweep → stitch → recognize → publish loop, clicks, events, reports.
//! 7. [`study_metrics`] – survey schema and the evaluation statistics.

pub mod camsim;
pub mod clock;
pub mod geometry;
pub mod projection;
pub mod raster;
pub mod recognizer;
pub mod roster;
pub mod scanplan;
pub mod session;
pub mod stitcher;
pub mod study_metrics;

pub use camsim::{Frame, Person, Scene, SceneDescription, SimCamera, TruthBox};
pub use clock::{Clock, SimClock, Timestamp, WallClock};
pub use geometry::BoxPx;
pub use raster::Raster;
pub use recognizer::{
    annotate_sweep, match_query, AnnotateConfig, Detection, Detector, Embedder, Embedding,
    FaceAnnotation, FixtureDetector, FixtureEmbedder, GalleryEntry, MatchParams, MatchResult,
    SubprocessBackend,
};
pub use roster::{
    ColorClass, Consent, FacePhoto, PhotoUpload, Pose, Roster, RosterError, StudentId,
    StudentRecord, WtoILevel,
};
pub use scanplan::{plan_sweep, sweep_duration, CameraSpec, ScanPlan, SweepDirection, Waypoint};
pub use session::{
    InteractionEvent, SessionConfig, SessionError, SessionId, SessionManager, SessionReport,
    SessionSnapshot,
};
pub use stitcher::{composite, project_to_cylinder, CylTile, Panorama, PersonMask, StitchConfig};
