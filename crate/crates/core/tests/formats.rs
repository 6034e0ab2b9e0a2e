mod common;

use common::*;
use proptest::prelude::*;
use psad_core::membank::{BankKind, BankSet, MemoryBank};
use psad_core::segtrain::{load_checkpoint, save_checkpoint, sidecar_path, PixelClassifier, TrainConfig};
use psad_core::tensorio::{read_segmap, read_tensor, write_segmap, write_tensor, SegMap, Tensor};
use psad_core::PsadError;

#[test]
fn tensor_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::new(vec![3, 4, 5], (0..60).map(|i| i as f32 * 0.25 - 3.0).collect()).unwrap();
    let p = dir.path().join("x.pft");
    write_tensor(&t, &p).unwrap();
    assert_eq!(std::fs::metadata(&p).unwrap().len(), 4 + 1 + 3 * 8 + 60 * 4);
    assert_eq!(read_tensor(&p).unwrap(), t);
}

#[test]
fn segmap_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let s = SegMap::new(64, 64, 5, (0..64 * 64).map(|i| (i % 5) as u16).collect()).unwrap();
    let p = dir.path().join("x.psm");
    write_segmap(&s, &p).unwrap();
    assert_eq!(read_segmap(&p).unwrap(), s);
}

#[test]
fn missing_file_error_names_path() {
    let err = read_tensor("/nonexistent/dir/img.pft").unwrap_err();
    assert!(matches!(err, PsadError::Io { .. }));
    assert!(err.to_string().contains("/nonexistent/dir/img.pft"));
}

#[test]
fn every_format_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let bad = format_suite(60, dir.path());
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn checkpoint_keeps_config_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(4);
    let clf = random_classifier(&mut r);
    let cfg = TrainConfig {
        seed: 99,
        ..TrainConfig::default()
    };
    let p = dir.path().join("seg.pcl");
    save_checkpoint(&clf, &cfg, &p).unwrap();
    assert!(sidecar_path(&p).exists());
    let (back, back_cfg) = load_checkpoint(&p).unwrap();
    assert_eq!(back, clf);
    assert_eq!(back_cfg, Some(cfg));
    std::fs::remove_file(sidecar_path(&p)).unwrap();
    assert_eq!(load_checkpoint(&p).unwrap().1, None);
}

#[test]
fn truncated_classifier_is_a_format_error() {
    let clf = random_classifier(&mut rng(5));
    let bytes = clf.encode();
    assert!(matches!(
        PixelClassifier::decode(&bytes[..bytes.len() - 1]),
        Err(PsadError::Format(_))
    ));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(PixelClassifier::decode(&extra), Err(PsadError::Format(_))));
}

#[test]
fn bank_with_wrong_scale_is_rejected() {
    let bank = MemoryBank::new(BankKind::Hist, 1, 1, vec![0.0, 1.0, 3.0]).unwrap();
    let mut bytes = bank.encode();
    let n = bytes.len();
    bytes[n - 8..].copy_from_slice(&7.0f64.to_le_bytes());
    assert!(matches!(MemoryBank::decode(&bytes), Err(PsadError::Format(_))));
}

#[test]
fn bank_set_round_trips() {
    let mut r = rng(6);
    let clf = PixelClassifier::zeros(3, 0, 2);
    let mk =
        |r: &mut rand_chacha::ChaCha8Rng, kind, d, g| MemoryBank::new(kind, d, g, f32_values(r, 3 * d * g)).unwrap();
    let set = BankSet {
        classifier: clf,
        stride: 8,
        hist: mk(&mut r, BankKind::Hist, 2, 1),
        comp: mk(&mut r, BankKind::Comp, 4, 1),
        patch: mk(&mut r, BankKind::Patch, 3, 4),
    };
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("banks.pbs");
    set.save(&p).unwrap();
    assert_eq!(BankSet::load(&p).unwrap(), set);
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..4], b"PBS1");
    assert!(BankSet::decode(&bytes[..bytes.len() - 3]).is_err());
}

proptest! {
    #[test]
    fn classifier_round_trip_is_bit_exact(seed in any::<u64>()) {
        let clf = random_classifier(&mut rng(seed));
        prop_assert_eq!(PixelClassifier::decode(&clf.encode()).unwrap(), clf);
    }

    #[test]
    fn bank_round_trip_is_bit_exact(seed in any::<u64>()) {
        let bank = random_bank(&mut rng(seed));
        let back = MemoryBank::decode(&bank.encode()).unwrap();
        prop_assert!(back.raw_elements().iter().zip(bank.raw_elements()).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back, bank);
    }
}
