use std::fs;

use rvos_data::{generate_sample, make_ti_suite, read_dataset, read_manifest, write_dataset, DataError, FrameFormat, SynthConfig};

#[test]
fn single_sample_roundtrip_raw_and_png() {
    let s = generate_sample(1, &SynthConfig { num_segments: 2, scene_cuts: 2, ..Default::default() }).unwrap();
    for format in [FrameFormat::Bin, FrameFormat::Png] {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(std::slice::from_ref(&s), dir.path(), format).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.samples, vec![s.clone()]);
        assert_eq!(back.vocabulary, rvos_data::Vocabulary::default());
    }
}

#[test]
fn missing_file_is_schema_error() {
    let s = generate_sample(2, &SynthConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&[s.clone()], dir.path(), FrameFormat::Bin).unwrap();
    fs::remove_file(dir.path().join(format!("samples/{}/frames/010.bin", s.id))).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(DataError::Schema(_))));

    let dir = tempfile::tempdir().unwrap();
    write_dataset(&[s.clone()], dir.path(), FrameFormat::Bin).unwrap();
    fs::remove_file(dir.path().join(format!("samples/{}/masks.rle", s.id))).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(DataError::Schema(_))));

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(read_dataset(empty.path()), Err(DataError::Schema(_))));
}

#[test]
fn version_mismatch_is_schema_error() {
    let s = generate_sample(3, &SynthConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&[s], dir.path(), FrameFormat::Bin).unwrap();
    let path = dir.path().join("manifest.json");
    let text = fs::read_to_string(&path).unwrap().replacen("\"version\": 1", "\"version\": 99", 1);
    fs::write(&path, text).unwrap();
    assert!(matches!(read_manifest(dir.path()), Err(DataError::Schema(_))));
}

#[test]
fn suite_roundtrip_preserves_ti() {
    let targets: Vec<f64> = (0..16).map(|i| i as f64 / 16.0).collect();
    let seeds: Vec<u64> = (100..116).collect();
    let suite = make_ti_suite(&seeds, &targets, &SynthConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&suite, dir.path(), FrameFormat::Bin).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.samples, suite);
    for ((orig, loaded), rec) in suite.iter().zip(&back.samples).zip(&manifest.samples) {
        let present = (0..loaded.t()).filter(|&f| !loaded.gt.masks[f].is_empty()).count();
        let recount = 1.0 - present as f64 / loaded.t() as f64;
        assert_eq!(recount, orig.ti_rate());
        assert_eq!(rec.ti, orig.ti_rate());
    }
}

#[test]
fn corrupted_frame_header_is_rejected() {
    let bytes = rvos_data::encode_raw(&[0u8; 3 * 4 * 4], 4, 4);
    assert_eq!(rvos_data::decode_raw(&bytes, 4, 4).unwrap(), vec![0u8; 48]);
    assert!(rvos_data::decode_raw(&bytes, 4, 8).is_err());
    assert!(rvos_data::decode_raw(&bytes[..30], 4, 4).is_err());
}
