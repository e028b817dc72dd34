use std::fs;

use laif_core::data::{
    decode_pgm, encode_pgm, load_dataset, read_pgm, synth_glyphs, write_pgm, Dataset, MANIFEST,
};
use laif_core::{Error, Tensor};
use proptest::prelude::*;

fn bits(ds: &Dataset) -> Vec<(usize, String, Vec<u32>)> {
    ds.samples
        .iter()
        .map(|s| (s.label, s.id.clone(), s.image.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}

#[test]
fn thirty_classes_two_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_glyphs(4, 2, 30).unwrap();
    ds.write_to(dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 60);
    assert_eq!(back.class_names, ds.class_names);
    let labels: Vec<usize> = back.samples.iter().map(|s| s.label).collect();
    assert_eq!(labels, (0..60).map(|i| i / 2).collect::<Vec<_>>());
    // stored images are the quantized originals
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.id, b.id);
        for (&x, &y) in a.image.data().iter().zip(b.image.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-7);
        }
    }
}

#[test]
fn creation_order_does_not_matter() {
    let ds = synth_glyphs(4, 3, 5).unwrap();
    let forward = tempfile::tempdir().unwrap();
    ds.write_to(forward.path()).unwrap();

    // write the same tree in reverse order of classes and files
    let reverse = tempfile::tempdir().unwrap();
    for s in ds.samples.iter().rev() {
        let class_dir = reverse.path().join(&ds.class_names[s.label]);
        fs::create_dir_all(&class_dir).unwrap();
        write_pgm(&s.image, class_dir.join(format!("{}.pgm", s.id))).unwrap();
    }
    assert_eq!(
        bits(&load_dataset(forward.path()).unwrap()),
        bits(&load_dataset(reverse.path()).unwrap())
    );
}

#[test]
fn missing_class_dir_is_named() {
    let dir = tempfile::tempdir().unwrap();
    synth_glyphs(4, 2, 30).unwrap().write_to(dir.path()).unwrap();
    fs::remove_dir_all(dir.path().join("ö")).unwrap();
    match load_dataset(dir.path()) {
        Err(Error::EmptyClass(name)) => assert_eq!(name, "ö"),
        other => panic!("expected EmptyClass, got {other:?}"),
    }
}

#[test]
fn empty_class_dir_without_manifest() {
    let dir = tempfile::tempdir().unwrap();
    synth_glyphs(4, 2, 3).unwrap().write_to(dir.path()).unwrap();
    fs::remove_file(dir.path().join(MANIFEST)).unwrap();
    for f in fs::read_dir(dir.path().join("b")).unwrap() {
        fs::remove_file(f.unwrap().path()).unwrap();
    }
    assert!(matches!(load_dataset(dir.path()), Err(Error::EmptyClass(c)) if c == "b"));
}

#[test]
fn unknown_extension() {
    let dir = tempfile::tempdir().unwrap();
    synth_glyphs(4, 1, 3).unwrap().write_to(dir.path()).unwrap();
    fs::write(dir.path().join("a").join("notes.png"), b"x").unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::UnknownExtension(_))));
}

#[test]
fn pgm_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.pgm");
    let mut bytes = b"P5\n3 2\n255\n".to_vec();
    bytes.extend([0u8, 1, 2, 253, 254, 255]);
    fs::write(&path, &bytes).unwrap();
    let t = read_pgm(&path).unwrap();
    write_pgm(&t, &path).unwrap();
    assert_eq!(fs::read(&path).unwrap(), bytes);
}

proptest! {
    #[test]
    fn pgm_bytes_roundtrip(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let mut state = seed;
        let raster: Vec<u8> = (0..w * h).map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 56) as u8
        }).collect();
        let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
        bytes.extend(&raster);
        let t = decode_pgm(&bytes).unwrap();
        prop_assert_eq!(encode_pgm(&t).unwrap(), bytes);
    }

    #[test]
    fn float_roundtrip_within_half_level(vals in prop::collection::vec(0.0f32..=1.0, 1..64)) {
        let n = vals.len();
        let t = Tensor::new(vec![1, 1, n], vals.clone()).unwrap();
        let back = decode_pgm(&encode_pgm(&t).unwrap()).unwrap();
        for (a, b) in vals.iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
