use std::fs;
use std::path::Path;

use semcom_core::add::{AddAgent, AddConfig};
use semcom_core::bundle::{AttentionMap, BinaryAttentionMap, Pos, RawEntry, RawScoreStack, WordMap};
use semcom_core::metrics::{Breakpoint, ScoreTable};
use semcom_core::rng;
use semcom_lab::bundle_io::{load_bundle, save_bundle, MANIFEST};
use semcom_lab::checkpoint::{
    agent_from_arrays, agent_to_arrays, decode_arrays, encode_arrays, load_agent, save_agent,
};
use semcom_lab::fixtures::{blue_car, scene};
use semcom_lab::table_io::{load_score_table, parse_score_table, render_score_table, save_score_table};
use semcom_lab::LabError;

fn edit_manifest(dir: &Path, f: impl FnOnce(&mut serde_json::Value)) {
    let path = dir.join(MANIFEST);
    let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
}

#[test]
fn bundle_round_trips_every_map_kind() {
    let mut b = blue_car();
    let (w, h) = (b.image_width, b.image_height);
    b.maps[1] = WordMap::Binary(BinaryAttentionMap::new(1, w, h, (0..w * h).map(|k| k % 3 == 0).collect()).unwrap());
    b.maps[2] = WordMap::Raw {
        word_index: 2,
        stack: RawScoreStack {
            entries: vec![RawEntry {
                step: 3,
                block: 1,
                head: 0,
                direction: "up".parse().unwrap(),
                width: 16,
                height: 16,
                values: (0..256).map(|k| k as f32 / 256.0).collect(),
            }],
        },
    };
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&b, dir.path()).unwrap();
    assert_eq!(load_bundle(dir.path()).unwrap(), b);
}

#[test]
fn version_two_is_rejected_before_anything_else() {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&blue_car(), dir.path()).unwrap();
    edit_manifest(dir.path(), |v| {
        v["version"] = 2.into();
        v["something_new"] = "ignored".into();
    });
    let err = load_bundle(dir.path()).unwrap_err();
    assert!(
        matches!(err, LabError::Core(semcom_core::Error::UnsupportedVersion(2))),
        "{err}"
    );
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn truncated_payload_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&blue_car(), dir.path()).unwrap();
    let file = dir.path().join("map_3.bin");
    let bytes = fs::read(&file).unwrap();
    fs::write(&file, &bytes[..bytes.len() - 4]).unwrap();
    let err = load_bundle(dir.path()).unwrap_err().to_string();
    assert!(err.contains("map_3.bin"), "{err}");
    assert!(err.contains("expected"), "{err}");
}

#[test]
fn malformed_manifests_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&blue_car(), dir.path()).unwrap();

    edit_manifest(dir.path(), |v| v["words"][1]["pos"] = "NOUNISH".into());
    assert!(matches!(load_bundle(dir.path()), Err(LabError::Format { .. })));

    save_bundle(&blue_car(), dir.path()).unwrap();
    edit_manifest(dir.path(), |v| v["maps"][0]["file"] = "../escape.bin".into());
    let err = load_bundle(dir.path()).unwrap_err().to_string();
    assert!(err.contains("inside the bundle"), "{err}");

    save_bundle(&blue_car(), dir.path()).unwrap();
    edit_manifest(dir.path(), |v| v["words"][3]["head_index"] = 0.into());
    assert!(load_bundle(dir.path()).is_err(), "two words without a root");

    save_bundle(&blue_car(), dir.path()).unwrap();
    edit_manifest(dir.path(), |v| v["maps"][0]["kind"] = "mystery".into());
    assert!(matches!(load_bundle(dir.path()), Err(LabError::Format { .. })));
}

#[test]
fn binary_payloads_must_hold_zero_or_one() {
    use Pos::*;
    let mut b = scene("t", 8, 8, &[("car", Nn, None, "ROOT", (4.0, 4.0), (3.0, 3.0))]);
    b.maps[0] = WordMap::Binary(BinaryAttentionMap::new(0, 8, 8, vec![true; 64]).unwrap());
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&b, dir.path()).unwrap();
    let file = dir.path().join("mask_0.bin");
    let mut bytes = fs::read(&file).unwrap();
    bytes[..4].copy_from_slice(&0.5f32.to_le_bytes());
    fs::write(&file, bytes).unwrap();
    assert!(load_bundle(dir.path()).unwrap_err().to_string().contains("binary mask"));
}

#[test]
fn aggregated_maps_keep_f32_bits() {
    use Pos::*;
    let mut b = scene("t", 4, 4, &[("car", Nn, None, "ROOT", (2.0, 2.0), (2.0, 2.0))]);
    let values: Vec<f32> = (0..16).map(|k| (k as f32).sqrt() / 7.0).collect();
    b.maps[0] = WordMap::Aggregated(AttentionMap::new(0, 4, 4, values.clone()).unwrap());
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&b, dir.path()).unwrap();
    let raw = fs::read(dir.path().join("map_0.bin")).unwrap();
    let expected: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(raw, expected);
}

fn table() -> ScoreTable {
    let mut t = ScoreTable::new();
    for (id, rows) in [
        ("a,b", [(0.0, 0.6, 4.9), (100.0, 0.2, 5.1)]),
        ("zeta", [(0.0, 0.5, 4.95), (1e5, 0.1, 5.2651)]),
    ] {
        for (tokens, dreamsim, nima_mu) in rows {
            t.push(
                id,
                Breakpoint {
                    tokens,
                    dreamsim,
                    nima_mu,
                },
            )
            .unwrap();
        }
    }
    t
}

#[test]
fn score_table_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scores.csv");
    save_score_table(&table(), &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("image_id,tokens,dreamsim,nima_mu\n"));
    assert!(text.contains("\"a,b\",0,0.6,4.9\n"));
    assert!(!text.contains('\r'));
    let back = load_score_table(&path).unwrap();
    assert_eq!(render_score_table(&back), text);
    assert_eq!(back.breakpoints("zeta").unwrap(), table().breakpoints("zeta").unwrap());
}

#[test]
fn score_table_contract_violations() {
    let p = Path::new("t.csv");
    let bad = [
        "image,tokens,dreamsim,nima_mu\n",
        "image_id,tokens,dreamsim,nima_mu\nx,10,0.1,5\nx,5,0.2,5\n",
        "image_id,tokens,dreamsim,nima_mu\nx,10,0.1,5\nx,10,0.2,5\n",
        "image_id,tokens,dreamsim,nima_mu\nb,0,0.1,5\na,0,0.1,5\n",
        "image_id,tokens,dreamsim,nima_mu\nx,-1,0.1,5\n",
        "image_id,tokens,dreamsim,nima_mu\nx,1,nan,5\n",
        "image_id,tokens,dreamsim,nima_mu\nx,1,0.1\n",
    ];
    for text in bad {
        assert!(
            matches!(parse_score_table(text, p), Err(LabError::Format { .. })),
            "{text:?}"
        );
    }
    assert!(parse_score_table("image_id,tokens,dreamsim,nima_mu\nx,0,0.5,4.9\nx,10,0.1,5\n", p).is_ok());
}

fn agent(users: usize, seed: u64) -> AddAgent {
    let config = AddConfig {
        hidden: vec![6, 5],
        ..AddConfig::default()
    };
    AddAgent::new(users, &config, &mut rng::seeded(seed)).unwrap()
}

#[test]
fn checkpoint_round_trips_bit_for_bit() {
    let a = agent(3, 1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("add.ckpt");
    save_agent(&a, &path).unwrap();
    let back = load_agent(&path).unwrap();
    assert_eq!(back, a);
    let bytes = fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"SEMCKPT\0");
    assert_eq!(encode_arrays(&agent_to_arrays(&back)), bytes);
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let bytes = encode_arrays(&agent_to_arrays(&agent(2, 3)));
    assert!(decode_arrays(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_arrays(&extra).unwrap_err().contains("trailing"));
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(decode_arrays(&magic).is_err());
    let mut version = bytes.clone();
    version[8] = 9;
    assert!(decode_arrays(&version).unwrap_err().contains("version"));

    // Header claims a user count the networks were not built for.
    let mut arrays = agent_to_arrays(&agent(2, 3));
    arrays[0].data[0] = 3.0;
    assert!(agent_from_arrays(&arrays).is_err());
    let mut arrays = agent_to_arrays(&agent(2, 3));
    arrays.pop();
    assert!(agent_from_arrays(&arrays).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt");
    fs::write(&path, b"nope").unwrap();
    assert!(matches!(load_agent(&path), Err(LabError::Format { .. })));
}
