use proptest::prelude::*;
use sprayeval::core::{LabelMask, Tensor};
use sprayeval::format::{decode_mask, decode_tensor, encode_mask, encode_tensor};
use sprayeval::{read_mask, read_tensor, write_mask, write_tensor, Error};

/// Hand-assembled TNSR bytes.
fn tnsr(extents: &[u32], values: &[f32]) -> Vec<u8> {
    let mut b = b"TNSR".to_vec();
    b.push(1);
    b.push(extents.len() as u8);
    b.extend([0, 0]);
    for e in extents {
        b.extend(e.to_le_bytes());
    }
    for v in values {
        b.extend(v.to_le_bytes());
    }
    b
}

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    prop_oneof![
        (1usize..6, 1usize..9).prop_flat_map(|(h, w)| {
            prop::collection::vec(-1e6f32..1e6, h * w).prop_map(move |d| Tensor::new(vec![h, w], d).unwrap())
        }),
        (1usize..8, 1usize..6, 1usize..6).prop_flat_map(|(c, h, w)| {
            prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), c * h * w)
                .prop_map(move |d| Tensor::new(vec![c, h, w], d).unwrap())
        }),
    ]
}

proptest! {
    #[test]
    fn tensor_round_trip(t in tensor_strategy()) {
        let bytes = encode_tensor(&t);
        let extents: Vec<u32> = t.shape().iter().map(|&d| d as u32).collect();
        prop_assert_eq!(&bytes, &tnsr(&extents, t.data()));
        let back = decode_tensor(&bytes).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        // bitwise, so -0.0 survives
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn mask_round_trip(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let labels: Vec<u8> = (0..h * w).map(|i| ((seed >> (i % 60)) as u8) % 7).collect();
        let m = LabelMask::new(h, w, labels).unwrap();
        prop_assert_eq!(decode_mask(&encode_mask(&m)).unwrap(), m);
    }

    #[test]
    fn decoders_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_tensor(&bytes);
        let _ = decode_mask(&bytes);
    }
}

#[test]
fn files_round_trip_and_report_paths() {
    let dir = tempfile::tempdir().unwrap();
    let t = Tensor::new(vec![2, 2, 3], (0..12).map(|i| i as f32 * 0.5).collect()).unwrap();
    let path = dir.path().join("t.tnsr");
    write_tensor(&t, &path).unwrap();
    assert_eq!(read_tensor(&path).unwrap(), t);

    let m = LabelMask::new(2, 3, vec![0, 1, 2, 3, 4, 6]).unwrap();
    let mpath = dir.path().join("m.lmsk");
    write_mask(&m, &mpath).unwrap();
    assert_eq!(read_mask(&mpath).unwrap(), m);
    assert_eq!(std::fs::read(&mpath).unwrap()[..8], *b"LMSK\x01\x02\x00\x00");

    // a mask file is not a tensor file
    match read_tensor(&mpath) {
        Err(Error::Format { path, .. }) => assert!(path.ends_with("m.lmsk")),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn zero_byte_file_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.tnsr");
    std::fs::write(&path, b"").unwrap();
    let err = read_tensor(&path).unwrap_err();
    assert!(matches!(err, Error::Format { .. }), "{err:?}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn corruption_is_detected() {
    let good = tnsr(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    assert!(decode_tensor(&good).is_ok());

    let short = &good[..good.len() - 1];
    assert!(matches!(decode_tensor(short), Err(Error::Corrupt { .. })));
    let mut long = good.clone();
    long.push(0);
    assert!(matches!(decode_tensor(&long), Err(Error::Corrupt { .. })));

    for (offset, value) in [(0, b'X'), (4, 2), (5, 4), (6, 1)] {
        let mut bad = good.clone();
        bad[offset] = value;
        assert!(matches!(decode_tensor(&bad), Err(Error::Format { .. })), "offset {offset}");
    }
    assert!(matches!(decode_tensor(&tnsr(&[0, 2], &[])), Err(Error::Corrupt { .. })));
    assert!(matches!(decode_tensor(&tnsr(&[1, 2], &[1.0, f32::INFINITY])), Err(Error::Corrupt { .. })));
    assert!(matches!(decode_tensor(&good[..10]), Err(Error::Format { .. })));

    let mut rank3_mask = encode_mask(&LabelMask::filled(2, 2, 0).unwrap());
    rank3_mask[5] = 3;
    assert!(matches!(decode_mask(&rank3_mask), Err(Error::Format { .. })));
}
