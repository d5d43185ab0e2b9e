//! Synthetic bundles with hand-written parses and cone-shaped attention,
//! and a demo corpus on disk. Used by the tests and `semcom demo`.

use std::path::{Path, PathBuf};

use semcom_core::bundle::{AttentionMap, Pos, SemComBundle, WordAnnotation, WordMap, BUNDLE_VERSION};

use crate::bundle_io::save_bundle;
use crate::error::{LabError, Result};

/// Elliptical cone: 1 at `(cx, cy)`, falling linearly to 0 at radii `(rx, ry)`.
pub fn cone(w: usize, h: usize, (cx, cy): (f64, f64), (rx, ry): (f64, f64)) -> Vec<f32> {
    let mut v = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let d = (((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2)).sqrt();
            v.push((1.0 - d).max(0.0) as f32);
        }
    }
    v
}

/// One word: text, tag, head, label and an attention cone (centre, radii).
pub type WordSpec<'a> = (&'a str, Pos, Option<usize>, &'a str, (f64, f64), (f64, f64));

pub fn scene(id: &str, w: usize, h: usize, words: &[WordSpec<'_>]) -> SemComBundle {
    let prompt = words.iter().map(|s| s.0).collect::<Vec<_>>().join(" ");
    SemComBundle {
        version: BUNDLE_VERSION,
        prompt,
        image_width: w,
        image_height: h,
        words: words
            .iter()
            .enumerate()
            .map(|(i, &(text, pos, head, dep, _, _))| WordAnnotation::new(i, text, pos, head, dep))
            .collect(),
        maps: words
            .iter()
            .enumerate()
            .map(|(i, &(_, _, _, _, c, r))| {
                WordMap::Aggregated(AttentionMap::new(i, w, h, cone(w, h, c, r)).expect("cone is valid"))
            })
            .collect(),
        source_image_id: Some(id.into()),
    }
}

/// "A blue car driving through the city ." on a 64×64 grid. The root verb
/// overlaps both the car and the preposition.
pub fn blue_car() -> SemComBundle {
    use Pos::*;
    scene(
        "blue_car",
        64,
        64,
        &[
            ("A", X, Some(2), "det", (10.0, 10.0), (8.0, 8.0)),
            ("blue", Adj, Some(2), "amod", (30.0, 38.0), (12.0, 8.0)),
            ("car", Nn, Some(3), "nsubj", (30.0, 38.0), (40.0, 25.0)),
            ("driving", Verb, None, "ROOT", (32.0, 40.0), (22.0, 14.0)),
            ("through", Adp, Some(3), "prep", (36.0, 44.0), (20.0, 12.0)),
            ("the", X, Some(6), "det", (50.0, 10.0), (8.0, 8.0)),
            ("city", Nn, Some(4), "pobj", (32.0, 16.0), (60.0, 30.0)),
            (".", X, Some(3), "punct", (60.0, 60.0), (4.0, 4.0)),
        ],
    )
}

pub fn red_bird() -> SemComBundle {
    use Pos::*;
    scene(
        "red_bird",
        64,
        64,
        &[
            ("A", X, Some(2), "det", (8.0, 8.0), (6.0, 6.0)),
            ("red", Adj, Some(2), "amod", (24.0, 24.0), (8.0, 8.0)),
            ("bird", Nn, Some(3), "nsubj", (24.0, 24.0), (30.0, 30.0)),
            ("sitting", Verb, None, "ROOT", (26.0, 28.0), (14.0, 14.0)),
            ("on", Adp, Some(3), "prep", (28.0, 34.0), (12.0, 8.0)),
            ("a", X, Some(6), "det", (56.0, 8.0), (6.0, 6.0)),
            ("branch", Nn, Some(4), "pobj", (34.0, 40.0), (60.0, 20.0)),
            (".", X, Some(3), "punct", (60.0, 60.0), (4.0, 4.0)),
        ],
    )
}

pub fn old_lighthouse() -> SemComBundle {
    use Pos::*;
    scene(
        "old_lighthouse",
        64,
        64,
        &[
            ("An", X, Some(2), "det", (6.0, 6.0), (5.0, 5.0)),
            ("old", Adj, Some(2), "amod", (32.0, 28.0), (8.0, 20.0)),
            ("lighthouse", Nn, Some(3), "nsubj", (32.0, 28.0), (25.0, 60.0)),
            ("standing", Verb, None, "ROOT", (32.0, 34.0), (16.0, 26.0)),
            ("by", Adp, Some(3), "prep", (32.0, 50.0), (24.0, 10.0)),
            ("the", X, Some(6), "det", (58.0, 6.0), (5.0, 5.0)),
            ("sea", Nn, Some(4), "pobj", (32.0, 56.0), (80.0, 25.0)),
            (".", X, Some(3), "punct", (60.0, 60.0), (3.0, 3.0)),
        ],
    )
}

pub fn demo_bundles() -> Vec<SemComBundle> {
    vec![blue_car(), red_bird(), old_lighthouse()]
}

/// Writes the demo bundles and a three-user `scenario.json` under `dir`;
/// returns the scenario path.
pub fn write_demo(dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let mut corpus = Vec::new();
    for b in demo_bundles() {
        let name = b.source_image_id.clone().expect("demo bundles are named");
        save_bundle(&b, dir.join("corpus").join(&name))?;
        corpus.push(format!("corpus/{name}"));
    }
    let scenario = serde_json::json!({
        "corpus": corpus,
        "users": [
            {"bundle": 0, "distance_m": 80.0, "latency_s": 0.002},
            {"bundle": 1, "distance_m": 150.0, "latency_s": 0.002},
            {"bundle": 2, "distance_m": 250.0, "latency_s": 0.002}
        ],
        "scorer": {"kind": "proxy"},
        "add": {"episodes": 300, "hidden": [32, 32], "env": {"kind": "synthetic", "users": 3}},
        "seed": 7
    });
    let path = dir.join("scenario.json");
    let text = serde_json::to_string_pretty(&scenario).expect("json") + "\n";
    std::fs::write(&path, text).map_err(|e| LabError::io(&path, e))?;
    Ok(path)
}
