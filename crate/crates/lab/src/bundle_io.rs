//! Bundle directories: `manifest.json` plus one little-endian `f32` payload
//! per map (or per raw grid). Binary masks are stored as 0.0/1.0.

use std::fs;
use std::path::{Component, Path};

use serde::{Deserialize, Serialize};

use semcom_core::bundle::{
    AttentionMap, BinaryAttentionMap, RawEntry, RawScoreStack, SemComBundle, WordAnnotation, WordMap, BUNDLE_VERSION,
};

use crate::error::{LabError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    prompt: String,
    image_width: usize,
    image_height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_image_id: Option<String>,
    words: Vec<WordEntry>,
    maps: Vec<MapEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WordEntry {
    index: usize,
    text: String,
    pos: String,
    /// −1 for the root.
    head_index: i64,
    dep_label: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapEntry {
    word_index: usize,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entries: Option<Vec<RawEntryFile>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntryFile {
    t: u32,
    block: u32,
    head: u32,
    direction: String,
    width: usize,
    height: usize,
    file: String,
}

#[derive(Deserialize)]
struct VersionOnly {
    version: u32,
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<SemComBundle> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| LabError::io(&manifest_path, e))?;
    let malformed = |e: serde_json::Error| LabError::format(&manifest_path, format!("malformed manifest: {e}"));
    // Gate on the version before the rest of the schema.
    let VersionOnly { version } = serde_json::from_str(&text).map_err(malformed)?;
    if version != BUNDLE_VERSION {
        return Err(semcom_core::Error::UnsupportedVersion(version).into());
    }
    let m: Manifest = serde_json::from_str(&text).map_err(malformed)?;

    let words =
        m.words
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let pos = w.pos.parse().map_err(|_| {
                    LabError::format(&manifest_path, format!("words[{i}].pos: unknown tag `{}`", w.pos))
                })?;
                let head = match w.head_index {
                    -1 => None,
                    h if h >= 0 => Some(h as usize),
                    h => {
                        return Err(LabError::format(
                            &manifest_path,
                            format!("words[{i}].head_index: {h} is out of range"),
                        ));
                    }
                };
                Ok(WordAnnotation::new(w.index, &w.text, pos, head, &w.dep_label))
            })
            .collect::<Result<Vec<_>>>()?;

    let (w, h) = (m.image_width, m.image_height);
    let mut maps = Vec::with_capacity(m.maps.len());
    for (k, e) in m.maps.iter().enumerate() {
        let wi = e.word_index;
        let need_file = || {
            e.file
                .as_deref()
                .ok_or_else(|| LabError::format(&manifest_path, format!("maps[{k}].file is missing")))
        };
        let map = match e.kind.as_str() {
            "aggregated" => {
                let values = read_f32(dir, need_file()?, w * h)?;
                WordMap::Aggregated(AttentionMap::new(wi, w, h, values)?)
            }
            "binary" => {
                let file = need_file()?;
                let values = read_f32(dir, file, w * h)?;
                let mut mask = Vec::with_capacity(values.len());
                for v in values {
                    mask.push(match v {
                        0.0 => false,
                        1.0 => true,
                        other => {
                            return Err(LabError::format(dir.join(file), format!("binary mask holds {other}")));
                        }
                    });
                }
                WordMap::Binary(BinaryAttentionMap::new(wi, w, h, mask)?)
            }
            "raw" => {
                let files = e
                    .entries
                    .as_ref()
                    .ok_or_else(|| LabError::format(&manifest_path, format!("maps[{k}].entries is missing")))?;
                let entries = files
                    .iter()
                    .map(|r| {
                        Ok(RawEntry {
                            step: r.t,
                            block: r.block,
                            head: r.head,
                            direction: r.direction.parse()?,
                            width: r.width,
                            height: r.height,
                            values: read_f32(dir, &r.file, r.width * r.height)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                WordMap::Raw {
                    word_index: wi,
                    stack: RawScoreStack { entries },
                }
            }
            other => {
                return Err(LabError::format(
                    &manifest_path,
                    format!("maps[{k}].kind: unknown kind `{other}`"),
                ));
            }
        };
        maps.push(map);
    }

    let bundle = SemComBundle {
        version: m.version,
        prompt: m.prompt,
        image_width: w,
        image_height: h,
        words,
        maps,
        source_image_id: m.source_image_id,
    };
    bundle.validate()?;
    Ok(bundle)
}

pub fn save_bundle(bundle: &SemComBundle, dir: impl AsRef<Path>) -> Result<()> {
    bundle.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;

    let mut maps = Vec::with_capacity(bundle.maps.len());
    for map in &bundle.maps {
        let wi = map.word_index();
        let entry = match map {
            WordMap::Aggregated(a) => {
                let file = format!("map_{wi}.bin");
                write_f32(dir, &file, &a.values)?;
                MapEntry {
                    word_index: wi,
                    kind: map.kind().into(),
                    file: Some(file),
                    entries: None,
                }
            }
            WordMap::Binary(b) => {
                let file = format!("mask_{wi}.bin");
                let values: Vec<f32> = b.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
                write_f32(dir, &file, &values)?;
                MapEntry {
                    word_index: wi,
                    kind: map.kind().into(),
                    file: Some(file),
                    entries: None,
                }
            }
            WordMap::Raw { stack, .. } => {
                let mut entries = Vec::with_capacity(stack.entries.len());
                for (k, e) in stack.entries.iter().enumerate() {
                    let file = format!("raw_{wi}_{k}.bin");
                    write_f32(dir, &file, &e.values)?;
                    entries.push(RawEntryFile {
                        t: e.step,
                        block: e.block,
                        head: e.head,
                        direction: e.direction.as_str().into(),
                        width: e.width,
                        height: e.height,
                        file,
                    });
                }
                MapEntry {
                    word_index: wi,
                    kind: map.kind().into(),
                    file: None,
                    entries: Some(entries),
                }
            }
        };
        maps.push(entry);
    }

    let manifest = Manifest {
        version: bundle.version,
        prompt: bundle.prompt.clone(),
        image_width: bundle.image_width,
        image_height: bundle.image_height,
        source_image_id: bundle.source_image_id.clone(),
        words: bundle
            .words
            .iter()
            .map(|w| WordEntry {
                index: w.index,
                text: w.text.clone(),
                pos: w.pos.as_str().into(),
                head_index: w.head.map_or(-1, |h| h as i64),
                dep_label: w.dep_label.clone(),
            })
            .collect(),
        maps,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let path = dir.join(MANIFEST);
    fs::write(&path, text).map_err(|e| LabError::io(path, e))
}

/// Reads exactly `expected` little-endian `f32` values from `dir/file`.
fn read_f32(dir: &Path, file: &str, expected: usize) -> Result<Vec<f32>> {
    let path = dir.join(file);
    if Path::new(file).is_absolute() || Path::new(file).components().any(|c| c == Component::ParentDir) {
        return Err(LabError::format(&path, "payload paths must stay inside the bundle"));
    }
    let bytes = fs::read(&path).map_err(|e| LabError::io(&path, e))?;
    if bytes.len() != expected * 4 {
        return Err(LabError::format(
            &path,
            format!(
                "payload is {} bytes, expected {} ({expected} f32 values)",
                bytes.len(),
                expected * 4
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_f32(dir: &Path, file: &str, values: &[f32]) -> Result<()> {
    let path = dir.join(file);
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&path, bytes).map_err(|e| LabError::io(path, e))
}
