use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::mock::SceneDescriptor;
use super::GenerationRequest;

const ARTIFACT_DIR: &str = "artifacts";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("invalid artifact reference `{0}`")]
    BadRef(String),
    #[error("artifact `{image_ref}` content hash mismatch")]
    HashMismatch { image_ref: String },
    #[error("artifact metadata for `{image_ref}`: {message}")]
    BadMeta { image_ref: String, message: String },
    #[error("artifact store i/o: {0}")]
    Io(#[from] io::Error),
}

/// Side information recorded next to an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub request: GenerationRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneDescriptor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageArtifact {
    pub image_ref: String,
    pub bytes: Vec<u8>,
    pub mime: &'static str,
    pub meta: Option<ArtifactMeta>,
}

/// Content-addressed files under `<root>/artifacts/`.
///
/// References look like `artifacts/<sha256>.<ext>`; the hash is verified on
/// load.
#[derive(Debug, Clone)]
pub struct ArtifactStore {
    root: PathBuf,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write through a uniquely named temporary file so concurrent writers of
/// the same content never expose a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}-{n}", std::process::id()));
    let tmp = path.with_file_name(name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}

fn mime_for(ext: &str) -> &'static str {
    match ext {
        "bmp" => "image/bmp",
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "webp" => "image/webp",
        _ => "application/octet-stream",
    }
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(root.join(ARTIFACT_DIR))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Store bytes, returning their reference. Existing content is reused.
    pub fn put(&self, bytes: &[u8], ext: &str) -> Result<String, StoreError> {
        if ext.is_empty() || !ext.chars().all(|c| c.is_ascii_alphanumeric()) {
            return Err(StoreError::BadRef(format!("extension `{ext}`")));
        }
        let image_ref = format!("{ARTIFACT_DIR}/{}.{ext}", sha256_hex(bytes));
        let path = self.root.join(&image_ref);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(image_ref)
    }

    pub fn put_meta(&self, image_ref: &str, meta: &ArtifactMeta) -> Result<(), StoreError> {
        let path = self.meta_path(image_ref)?;
        let body = serde_json::to_vec(meta).map_err(|e| StoreError::BadMeta {
            image_ref: image_ref.into(),
            message: e.to_string(),
        })?;
        write_atomic(&path, &body)?;
        Ok(())
    }

    /// Absolute path of a reference, rejecting anything outside the store.
    pub fn path_of(&self, image_ref: &str) -> Result<PathBuf, StoreError> {
        let rel = Path::new(image_ref);
        let mut comps = rel.components();
        let ok = matches!(comps.next(), Some(Component::Normal(d)) if d == ARTIFACT_DIR)
            && matches!(comps.next(), Some(Component::Normal(_)))
            && comps.next().is_none();
        if !ok {
            return Err(StoreError::BadRef(image_ref.into()));
        }
        Ok(self.root.join(rel))
    }

    fn meta_path(&self, image_ref: &str) -> Result<PathBuf, StoreError> {
        let path = self.path_of(image_ref)?;
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".meta.json");
        Ok(path.with_file_name(name))
    }

    pub fn read_bytes(&self, image_ref: &str) -> Result<Vec<u8>, StoreError> {
        let path = self.path_of(image_ref)?;
        let bytes = fs::read(&path)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| StoreError::BadRef(image_ref.into()))?;
        if sha256_hex(&bytes) != stem {
            return Err(StoreError::HashMismatch {
                image_ref: image_ref.into(),
            });
        }
        Ok(bytes)
    }

    pub fn load(&self, image_ref: &str) -> Result<ImageArtifact, StoreError> {
        let bytes = self.read_bytes(image_ref)?;
        let ext = Path::new(image_ref)
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("");
        let meta_path = self.meta_path(image_ref)?;
        let meta = if meta_path.exists() {
            let raw = fs::read(&meta_path)?;
            Some(
                serde_json::from_slice(&raw).map_err(|e| StoreError::BadMeta {
                    image_ref: image_ref.into(),
                    message: e.to_string(),
                })?,
            )
        } else {
            None
        };
        Ok(ImageArtifact {
            image_ref: image_ref.into(),
            bytes,
            mime: mime_for(ext),
            meta,
        })
    }
}
