use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;

const BATCH_STREAM: u64 = 0xBA7C;

/// Groups `0..n` into batches of `batch_size` (the last may be short). With
/// `shuffle`, the order is a permutation seeded by `(seed, epoch)`.
pub fn make_batches(n: usize, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be at least 1"));
    }
    if n == 0 {
        return Err(Error::Data("cannot batch an empty split".into()));
    }
    let order = if shuffle {
        Rng::from_parts(&[seed, epoch, BATCH_STREAM]).permutation(n)
    } else {
        (0..n).collect()
    };
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sizes() {
        let b = make_batches(100, 32, 1, 0, true).unwrap();
        let sizes: Vec<usize> = b.iter().map(Vec::len).collect();
        assert_eq!(sizes, [32, 32, 32, 4]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn ordered_without_shuffle() {
        let b = make_batches(5, 2, 9, 3, false).unwrap();
        assert_eq!(b, [vec![0, 1], vec![2, 3], vec![4]]);
    }

    #[test]
    fn epochs_differ() {
        let a = make_batches(50, 50, 7, 0, true).unwrap();
        let b = make_batches(50, 50, 7, 1, true).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, make_batches(50, 50, 7, 0, true).unwrap());
    }

    #[test]
    fn errors() {
        assert!(make_batches(0, 4, 0, 0, true).is_err());
        assert!(make_batches(4, 0, 0, 0, true).is_err());
    }
}
