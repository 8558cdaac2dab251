//! Batching: seeded epoch permutations and tensor assembly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{load_sample, DatasetManifest, Sample};
use crate::error::Result;
use crate::tensor::Tensor;

/// All samples of a dataset preprocessed and resident in memory.
pub struct SampleSet {
    samples: Vec<Sample>,
}

impl SampleSet {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        let samples = (0..manifest.len())
            .map(|i| load_sample(manifest, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleSet { samples })
    }

    pub fn from_samples(samples: Vec<Sample>) -> Self {
        SampleSet { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, i: usize) -> &Sample {
        &self.samples[i]
    }
}

/// One batch of stacked input tensors and labels.
pub struct TensorBatch {
    pub face: Tensor<f32>,
    pub left_eye: Tensor<f32>,
    pub right_eye: Tensor<f32>,
    pub gaze: Tensor<f32>,
    pub indices: Vec<usize>,
}

impl TensorBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Record order of one epoch: the identity without a seed, otherwise a
/// seeded permutation. The last partial batch is kept.
pub fn epoch_indices(n: usize, shuffle_seed: Option<u64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(seed) = shuffle_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
    }
    order
}

pub struct BatchIterator<'a> {
    set: &'a SampleSet,
    order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl<'a> BatchIterator<'a> {
    pub fn new(set: &'a SampleSet, batch_size: usize, shuffle_seed: Option<u64>) -> Self {
        assert!(batch_size >= 1, "batch_size must be >= 1");
        BatchIterator {
            set,
            order: epoch_indices(set.len(), shuffle_seed),
            batch_size,
            cursor: 0,
        }
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = TensorBatch;

    fn next(&mut self) -> Option<TensorBatch> {
        if self.cursor >= self.order.len() {
            return None;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let indices = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        Some(assemble_batch(self.set, &indices))
    }
}

pub fn assemble_batch(set: &SampleSet, indices: &[usize]) -> TensorBatch {
    let b = indices.len();
    let plane = 3 * 64 * 64;
    let mut face = vec![0.0f32; b * plane];
    let mut leye = vec![0.0f32; b * plane];
    let mut reye = vec![0.0f32; b * plane];
    let mut gaze = vec![0.0f32; b * 3];
    for (row, &i) in indices.iter().enumerate() {
        let s = set.get(i);
        face[row * plane..(row + 1) * plane].copy_from_slice(s.face.data());
        leye[row * plane..(row + 1) * plane].copy_from_slice(s.left_eye.data());
        reye[row * plane..(row + 1) * plane].copy_from_slice(s.right_eye.data());
        gaze[row * 3] = s.gaze.x as f32;
        gaze[row * 3 + 1] = s.gaze.y as f32;
        gaze[row * 3 + 2] = s.gaze.z as f32;
    }
    let img_shape = vec![b, 3, 64, 64];
    TensorBatch {
        face: Tensor::new(img_shape.clone(), face).expect("face shape"),
        left_eye: Tensor::new(img_shape.clone(), leye).expect("leye shape"),
        right_eye: Tensor::new(img_shape, reye).expect("reye shape"),
        gaze: Tensor::new(vec![b, 3], gaze).expect("gaze shape"),
        indices: indices.to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GazeVector;

    fn tiny_set(n: usize) -> SampleSet {
        let samples = (0..n)
            .map(|i| Sample {
                face: Tensor::filled(&[3, 64, 64], i as f32),
                left_eye: Tensor::filled(&[3, 64, 64], i as f32 + 0.25),
                right_eye: Tensor::filled(&[3, 64, 64], i as f32 + 0.5),
                gaze: GazeVector::new(0.0, 0.0, -1.0),
                meta: i,
            })
            .collect();
        SampleSet::from_samples(samples)
    }

    #[test]
    fn batch_sizes_are_4_4_2_for_ten_records() {
        let set = tiny_set(10);
        let sizes: Vec<usize> = BatchIterator::new(&set, 4, None).map(|b| b.len()).collect();
        assert_eq!(sizes, [4, 4, 2]);
    }

    #[test]
    fn same_seed_same_order_and_partition_property() {
        let set = tiny_set(23);
        let a: Vec<Vec<usize>> = BatchIterator::new(&set, 5, Some(99))
            .map(|b| b.indices)
            .collect();
        let b: Vec<Vec<usize>> = BatchIterator::new(&set, 5, Some(99))
            .map(|b| b.indices)
            .collect();
        assert_eq!(a, b);

        let mut all: Vec<usize> = a.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..23).collect::<Vec<_>>());
    }

    #[test]
    fn unseeded_iteration_keeps_manifest_order() {
        let set = tiny_set(7);
        let order: Vec<usize> = BatchIterator::new(&set, 3, None)
            .flat_map(|b| b.indices)
            .collect();
        assert_eq!(order, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn batch_rows_match_source_samples() {
        let set = tiny_set(5);
        let batch = assemble_batch(&set, &[4, 1]);
        assert_eq!(batch.face.at(&[0, 0, 0, 0]), 4.0);
        assert_eq!(batch.face.at(&[1, 0, 0, 0]), 1.0);
        assert_eq!(batch.left_eye.at(&[0, 2, 63, 63]), 4.25);
        assert_eq!(batch.gaze.at(&[0, 2]), -1.0);
    }
}
