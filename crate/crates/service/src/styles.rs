//! Persisted reference styles with their unwrapped texture and pattern mask
//! computed once at upload.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};
use uvmakeup_core::checkpoint::Checkpoint;
use uvmakeup_core::nn::Tensor;
use uvmakeup_core::pipeline::{PreparedFace, PATTERN_PRESENCE_THRESHOLD};
use uvmakeup_core::{Error, Image, PositionMap, Result, TextureMap};

const STYLE_KIND: &str = "style";
const REFERENCE_FILE: &str = "reference.png";
const THUMBNAIL_FILE: &str = "thumbnail.png";
const POSITION_FILE: &str = "position.uvpm";
const ARTIFACTS_FILE: &str = "style.ckpt";
const THUMBNAIL_FACTOR: usize = 4;

#[derive(Clone, Debug)]
pub struct StyleEntry {
    pub id: String,
    /// Seconds since the Unix epoch.
    pub created: u64,
    pub reference: Image,
    pub reference_png: Vec<u8>,
    pub thumbnail_png: Vec<u8>,
    pub face: PreparedFace,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StyleInfo {
    pub id: String,
    pub created: u64,
    /// Whether a pattern mask was stored (a segmentation model was loaded).
    pub segmented: bool,
    /// Some texel of the stored mask exceeds the presence threshold.
    pub has_pattern: bool,
}

impl StyleEntry {
    pub fn info(&self) -> StyleInfo {
        StyleInfo {
            id: self.id.clone(),
            created: self.created,
            segmented: self.face.mask.is_some(),
            has_pattern: self.face.mask.as_ref().is_some_and(|m| !m.is_empty_at(PATTERN_PRESENCE_THRESHOLD)),
        }
    }
}

/// Content id of an uploaded reference: the first 16 hex digits of its SHA-256.
pub fn style_id(png: &[u8]) -> String {
    hex::encode(Sha256::digest(png))[..16].to_string()
}

pub struct StyleLibrary {
    dir: PathBuf,
    entries: BTreeMap<String, StyleEntry>,
}

impl StyleLibrary {
    /// Opens (creating if needed) a library directory and loads every style in it.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut entries = BTreeMap::new();
        for item in std::fs::read_dir(&dir)? {
            let path = item?.path();
            if !path.join(ARTIFACTS_FILE).is_file() {
                continue;
            }
            let entry = read_entry(&path)?;
            entries.insert(entry.id.clone(), entry);
        }
        log::info!("style library {}: {} styles", dir.display(), entries.len());
        Ok(Self { dir, entries })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&StyleEntry> {
        self.entries.get(id)
    }

    pub fn list(&self) -> Vec<StyleInfo> {
        self.entries.values().map(StyleEntry::info).collect()
    }

    /// Stores a prepared reference. Uploading the same bytes again returns the
    /// existing entry.
    pub fn insert(&mut self, reference_png: Vec<u8>, reference: Image, face: PreparedFace) -> Result<StyleInfo> {
        let id = style_id(&reference_png);
        if let Some(e) = self.entries.get(&id) {
            return Ok(e.info());
        }
        let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let thumbnail_png = reference.downscale(THUMBNAIL_FACTOR)?.encode_png()?;
        let entry = StyleEntry { id: id.clone(), created, reference, reference_png, thumbnail_png, face };

        // staged in a scratch directory, then renamed into place
        let tmp = self.dir.join(format!(".{id}.tmp"));
        if tmp.exists() {
            std::fs::remove_dir_all(&tmp)?;
        }
        std::fs::create_dir_all(&tmp)?;
        write_entry(&tmp, &entry)?;
        std::fs::rename(&tmp, self.dir.join(&id))?;
        let info = entry.info();
        self.entries.insert(id, entry);
        Ok(info)
    }

    /// SHA-256 of every stored file, keyed `id/file`.
    pub fn checksums(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for id in self.entries.keys() {
            for file in [REFERENCE_FILE, THUMBNAIL_FILE, POSITION_FILE, ARTIFACTS_FILE] {
                let bytes = std::fs::read(self.dir.join(id).join(file))?;
                out.insert(format!("{id}/{file}"), hex::encode(Sha256::digest(bytes)));
            }
        }
        Ok(out)
    }
}

fn write_entry(dir: &Path, e: &StyleEntry) -> Result<()> {
    std::fs::write(dir.join(REFERENCE_FILE), &e.reference_png)?;
    std::fs::write(dir.join(THUMBNAIL_FILE), &e.thumbnail_png)?;
    e.face.position.save(dir.join(POSITION_FILE))?;
    let mut ck = Checkpoint::new(STYLE_KIND, serde_json::json!({ "id": e.id, "created": e.created }));
    ck.push("texture", Tensor::from_image(e.face.texture.image()));
    if let Some(m) = &e.face.mask {
        ck.push("mask", Tensor::from_masks(&[m])?);
    }
    ck.save(dir.join(ARTIFACTS_FILE))
}

fn read_entry(dir: &Path) -> Result<StyleEntry> {
    let ck = Checkpoint::load(dir.join(ARTIFACTS_FILE))?;
    ck.expect_kind(STYLE_KIND)?;
    let id = ck.meta["id"].as_str().ok_or_else(|| Error::Dataset(format!("{}: style without id", dir.display())))?;
    let reference_png = std::fs::read(dir.join(REFERENCE_FILE))?;
    if style_id(&reference_png) != id {
        return Err(Error::Dataset(format!("{}: reference image does not match style id {id}", dir.display())));
    }
    let texture = ck.get("texture")?;
    let mask = ck.get("mask").ok();
    if texture.shape()[..2] != [1, 3]
        || mask.is_some_and(|m| m.shape() != [1, 1, texture.shape()[2], texture.shape()[3]])
    {
        return Err(Error::Dataset(format!("{}: stored style tensors have unexpected shapes", dir.display())));
    }
    Ok(StyleEntry {
        id: id.to_string(),
        created: ck.meta["created"].as_u64().unwrap_or(0),
        reference: Image::decode_png(&reference_png)?,
        thumbnail_png: std::fs::read(dir.join(THUMBNAIL_FILE))?,
        reference_png,
        face: PreparedFace {
            position: PositionMap::load(dir.join(POSITION_FILE))?,
            texture: TextureMap::from_image(texture.to_image(0)),
            mask: mask.map(|m| m.to_mask(0)),
        },
    })
}
