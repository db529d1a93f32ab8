use rand::seq::SliceRandom;
use rand::Rng;

use super::sample::{Category, Sample, Split};
use crate::error::{Error, Result};

/// Largest number of samples stored in one block.
pub const MAX_BLOCK: usize = 250;

#[derive(Clone, Debug, PartialEq)]
pub struct DataBlock {
    pub category: Category,
    pub split: Split,
    pub samples: Vec<Sample>,
}

impl DataBlock {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Training share of a block of `n`: 90%, rounded up.
pub fn train_count(n: usize) -> usize {
    (9 * n).div_ceil(10)
}

fn chunk(category: Category, split: Split, samples: Vec<Sample>) -> Vec<DataBlock> {
    let mut out = Vec::new();
    let mut it = samples.into_iter().peekable();
    while it.peek().is_some() {
        out.push(DataBlock {
            category,
            split,
            samples: it.by_ref().take(MAX_BLOCK).collect(),
        });
    }
    out
}

/// Group samples of one category into blocks of at most [`MAX_BLOCK`].
///
/// General and urban samples are shuffled, chunked, and each chunk keeps its
/// first 90% for training and the rest for testing. Bridge samples follow
/// their declared split and are chunked per split in the given order.
pub fn make_blocks<R: Rng + ?Sized>(
    mut samples: Vec<Sample>,
    category: Category,
    rng: &mut R,
) -> Result<(Vec<DataBlock>, Vec<DataBlock>)> {
    if let Some(s) = samples.iter().find(|s| s.category != category) {
        return Err(Error::Data(format!(
            "{} is {}, expected {category}",
            s.id, s.category
        )));
    }
    if category == Category::Bridge {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for s in samples {
            match s.split {
                Some(Split::Train) => train.push(s),
                Some(Split::Test) => test.push(s),
                None => {
                    return Err(Error::Data(format!("bridge sample {} declares no split", s.id)));
                }
            }
        }
        return Ok((chunk(category, Split::Train, train), chunk(category, Split::Test, test)));
    }

    samples.shuffle(rng);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for block in chunk(category, Split::Train, samples) {
        let n = train_count(block.len());
        let mut all = block.samples;
        let rest = all.split_off(n);
        train.push(DataBlock {
            category,
            split: Split::Train,
            samples: all,
        });
        if !rest.is_empty() {
            test.push(DataBlock {
                category,
                split: Split::Test,
                samples: rest,
            });
        }
    }
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::image::{LabelMap, RgbImage};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn samples(n: usize, category: Category) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                id: format!("{category}-{i}"),
                category,
                rgb: RgbImage::filled(1, 1, [0; 3]),
                scene: LabelMap::filled(1, 1, 0),
                component: None,
                split: Some(if i % 4 == 0 { Split::Test } else { Split::Train }),
            })
            .collect()
    }

    #[test]
    fn ninety_percent_rule() {
        assert_eq!(train_count(250), 225);
        assert_eq!(train_count(10), 9);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (tr, te) = make_blocks(samples(250, Category::General), Category::General, &mut rng).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 1));
        assert_eq!((tr[0].len(), te[0].len()), (225, 25));
        let (tr, te) = make_blocks(samples(10, Category::Urban), Category::Urban, &mut rng).unwrap();
        assert_eq!((tr[0].len(), te[0].len()), (9, 1));
    }

    #[test]
    fn blocks_are_bounded_and_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (tr, te) = make_blocks(samples(600, Category::General), Category::General, &mut rng).unwrap();
        assert_eq!(tr.len(), 3);
        assert!(tr.iter().chain(&te).all(|b| b.len() <= MAX_BLOCK));
        let train: HashSet<&str> = tr.iter().flat_map(|b| b.samples.iter().map(|s| s.id.as_str())).collect();
        let test: HashSet<&str> = te.iter().flat_map(|b| b.samples.iter().map(|s| s.id.as_str())).collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len() + test.len(), 600);
    }

    #[test]
    fn bridge_split_is_declared() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (tr, te) = make_blocks(samples(20, Category::Bridge), Category::Bridge, &mut rng).unwrap();
        assert!(te[0].samples.iter().all(|s| s.split == Some(Split::Test)));
        assert_eq!(te[0].len(), 5);
        assert_eq!(tr[0].len(), 15);
        let mut s = samples(2, Category::Bridge);
        s[0].split = None;
        assert!(make_blocks(s, Category::Bridge, &mut rng).is_err());
    }

    #[test]
    fn category_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(make_blocks(samples(2, Category::Urban), Category::General, &mut rng).is_err());
    }
}
