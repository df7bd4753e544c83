//! Content-addressed image storage.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{GeneratedImage, ImageRef, ProviderError};

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn image_ref(image: &GeneratedImage) -> ImageRef {
    let hash = content_hash(&image.bytes);
    ImageRef {
        id: format!("img-{}", &hash[..16]),
        uri: format!("images/{hash}.{}", image.extension),
        hash,
        width: image.width,
        height: image.height,
        media_type: image.media_type.clone(),
    }
}

pub trait ImageStore: Send + Sync {
    fn put(&self, image: &GeneratedImage) -> Result<ImageRef, ProviderError>;
    fn get(&self, image: &ImageRef) -> Result<Vec<u8>, ProviderError>;
}

#[derive(Debug, Default)]
pub struct MemoryImageStore {
    images: Mutex<HashMap<String, Vec<u8>>>,
}

impl ImageStore for MemoryImageStore {
    fn put(&self, image: &GeneratedImage) -> Result<ImageRef, ProviderError> {
        let r = image_ref(image);
        self.images
            .lock()
            .expect("image store poisoned")
            .insert(r.hash.clone(), image.bytes.clone());
        Ok(r)
    }

    fn get(&self, image: &ImageRef) -> Result<Vec<u8>, ProviderError> {
        self.images
            .lock()
            .expect("image store poisoned")
            .get(&image.hash)
            .cloned()
            .ok_or_else(|| ProviderError::UnresolvableImage(image.id.clone()))
    }
}

/// Images under `<root>/images/<sha256>.<ext>`; `uri` is relative to `root`.
#[derive(Debug, Clone)]
pub struct DirImageStore {
    root: PathBuf,
}

impl DirImageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl ImageStore for DirImageStore {
    fn put(&self, image: &GeneratedImage) -> Result<ImageRef, ProviderError> {
        let r = image_ref(image);
        let path = self.root.join(&r.uri);
        if path.exists() {
            return Ok(r);
        }
        let io = |e: std::io::Error| ProviderError::Transport(format!("writing {}: {e}", path.display()));
        std::fs::create_dir_all(path.parent().expect("uri has a directory")).map_err(io)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, &image.bytes).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)?;
        Ok(r)
    }

    fn get(&self, image: &ImageRef) -> Result<Vec<u8>, ProviderError> {
        if image.uri.contains("..") || Path::new(&image.uri).is_absolute() {
            return Err(ProviderError::UnresolvableImage(image.id.clone()));
        }
        let bytes = std::fs::read(self.root.join(&image.uri))
            .map_err(|_| ProviderError::UnresolvableImage(image.id.clone()))?;
        if content_hash(&bytes) != image.hash {
            return Err(ProviderError::UnresolvableImage(format!("{} (hash mismatch)", image.id)));
        }
        Ok(bytes)
    }
}
