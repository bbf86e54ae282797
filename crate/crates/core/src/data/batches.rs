use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Shuffled index batches for one epoch.
///
/// The permutation depends only on `(seed, epoch)`. The last batch may be
/// short; a trailing singleton is folded into the batch before it.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 training samples, got {n}")));
    }
    if batch_size == 0 {
        return Err(Error::Usage("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut out: Vec<Vec<usize>> = perm.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("at least one left").extend(tail);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(n: usize, b: usize) -> Vec<usize> {
        batches(n, b, 3, 0).unwrap().iter().map(Vec::len).collect()
    }

    #[test]
    fn size_rules() {
        assert_eq!(sizes(130, 64), vec![64, 64, 2]);
        assert_eq!(sizes(65, 64), vec![65]);
        assert_eq!(sizes(32, 64), vec![32]);
        assert_eq!(sizes(7, 1), vec![1, 1, 1, 1, 1, 2]);
    }

    #[test]
    fn deterministic_permutation() {
        assert_eq!(batches(50, 8, 9, 4).unwrap(), batches(50, 8, 9, 4).unwrap());
        assert_ne!(batches(50, 8, 9, 4).unwrap(), batches(50, 8, 9, 5).unwrap());
        assert_ne!(batches(50, 8, 9, 4).unwrap(), batches(50, 8, 10, 4).unwrap());
    }

    #[test]
    fn covers_every_index_once() {
        let mut all: Vec<usize> = batches(77, 10, 1, 2).unwrap().concat();
        all.sort_unstable();
        assert_eq!(all, (0..77).collect::<Vec<_>>());
    }

    #[test]
    fn single_sample_is_a_data_error() {
        assert!(matches!(batches(1, 64, 0, 0), Err(Error::Data(_))));
    }
}
