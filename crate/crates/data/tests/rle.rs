use proptest::prelude::*;
use rvos_data::{rle, DataError, Mask};

#[test]
fn counts_start_with_background() {
    let m = Mask::from_bits(2, 3, vec![true, true, false, false, true, true]);
    assert_eq!(rle::encode(&m), vec![0, 2, 2, 2]);
    let e = Mask::empty(2, 2);
    assert_eq!(rle::encode(&e), vec![4]);
}

#[test]
fn decode_rejects_wrong_total() {
    assert!(matches!(rle::decode(2, 2, &[1, 2]), Err(DataError::Schema(_))));
}

#[test]
fn truncated_file_is_schema_error() {
    let masks = vec![Mask::from_fn(4, 4, |y, x| x == y)];
    let bytes = rle::write_masks(&masks, 4, 4);
    assert!(matches!(rle::read_masks(&bytes[..bytes.len() - 2]), Err(DataError::Schema(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(rle::read_masks(&bad), Err(DataError::Schema(_))));
}

proptest! {
    #[test]
    fn roundtrip(h in 1usize..12, w in 1usize..12, frames in 0usize..4, seed in any::<u64>()) {
        let masks: Vec<Mask> = (0..frames)
            .map(|f| Mask::from_fn(h, w, |y, x| (seed.rotate_left((y * w + x + f) as u32 % 64) & 3) == 0))
            .collect();
        for m in &masks {
            prop_assert_eq!(&rle::decode(h, w, &rle::encode(m)).unwrap(), m);
        }
        let (back, bh, bw) = rle::read_masks(&rle::write_masks(&masks, h, w)).unwrap();
        prop_assert_eq!((bh, bw), (h, w));
        prop_assert_eq!(back, masks);
    }
}
