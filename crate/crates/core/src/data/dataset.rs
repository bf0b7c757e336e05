use rayon::prelude::*;

use super::augment::{augment, AugmentConfig};
use super::manifest::NUM_CLASSES;
use super::packed::PackedDataset;
use super::preprocess::{to_unit, Normalization};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Augmentation settings for one training epoch.
#[derive(Debug, Clone, Copy)]
pub struct EpochAugment<'a> {
    pub config: &'a AugmentConfig,
    pub seed: u64,
    pub epoch: u64,
}

/// Prepared images with labels and the statistics used to standardize them.
#[derive(Debug, Clone)]
pub struct Dataset {
    packed: PackedDataset,
    norm: Normalization,
    refs: Vec<String>,
}

impl Dataset {
    pub fn new(packed: PackedDataset, norm: Normalization) -> Result<Self> {
        if norm.channels() != packed.channels() {
            return Err(Error::dim(
                "dataset",
                format!(
                    "{} image channels, normalization for {}",
                    packed.channels(),
                    norm.channels()
                ),
            ));
        }
        if let Some(&l) = packed.labels().iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Input(format!("label {l} outside 0..{NUM_CLASSES}")));
        }
        let refs = (0..packed.len()).map(|i| format!("#{i}")).collect();
        Ok(Dataset { packed, norm, refs })
    }

    /// Replace the default `#index` sample references (e.g. with file paths).
    pub fn with_refs(mut self, refs: Vec<String>) -> Result<Self> {
        if refs.len() != self.len() {
            return Err(Error::Input(format!(
                "{} references for {} samples",
                refs.len(),
                self.len()
            )));
        }
        self.refs = refs;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.packed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packed.is_empty()
    }

    /// `(channels, height, width)` of every sample.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        (
            self.packed.channels(),
            self.packed.height(),
            self.packed.width(),
        )
    }

    pub fn normalization(&self) -> &Normalization {
        &self.norm
    }

    pub fn packed(&self) -> &PackedDataset {
        &self.packed
    }

    pub fn label(&self, i: usize) -> usize {
        self.packed.labels()[i] as usize
    }

    pub fn labels(&self) -> Vec<usize> {
        self.packed.labels().iter().map(|&l| l as usize).collect()
    }

    pub fn reference(&self, i: usize) -> &str {
        &self.refs[i]
    }

    /// Sample `i` as a `[C, H, W]` tensor in `[0, 1]`.
    pub fn unit(&self, i: usize) -> Result<Tensor<f32>> {
        let (_, img) = self.packed.get(i)?;
        Ok(to_unit(&img))
    }

    /// Standardized `[B, C, H, W]` batch and its labels. With `aug`, each
    /// sample is augmented in unit scale before standardization.
    pub fn batch(
        &self,
        indices: &[usize],
        aug: Option<EpochAugment<'_>>,
    ) -> Result<(Tensor<f32>, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::Input("empty batch".into()));
        }
        let (c, h, w) = self.sample_shape();
        let per = c * h * w;
        let images: Vec<Tensor<f32>> = indices
            .par_iter()
            .map(|&i| {
                let t = self.unit(i)?;
                match aug {
                    Some(a) => augment(&t, a.config, a.seed, a.epoch, i as u64),
                    None => Ok(t),
                }
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(indices.len() * per);
        for t in &images {
            data.extend_from_slice(t.data());
        }
        let mut x = Tensor::from_vec(&[indices.len(), c, h, w], data)?;
        self.norm.apply(&mut x)?;
        let labels = indices.iter().map(|&i| self.label(i)).collect();
        Ok((x, labels))
    }

    /// The samples at `indices`, as a new dataset with the same statistics.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut packed = PackedDataset::new(
            self.packed.height(),
            self.packed.width(),
            self.packed.channels(),
        )?;
        let mut refs = Vec::with_capacity(indices.len());
        for &i in indices {
            let (label, img) = self.packed.get(i)?;
            packed.push(label, &img)?;
            refs.push(self.refs[i].clone());
        }
        Dataset::new(packed, self.norm.clone())?.with_refs(refs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::image::RawImage;

    fn toy() -> Dataset {
        let mut p = PackedDataset::new(4, 4, 1).unwrap();
        for l in 0..5u8 {
            p.push(l, &RawImage::new(4, 4, 1, vec![l * 50; 16]).unwrap())
                .unwrap();
        }
        Dataset::new(
            p,
            Normalization {
                mean: vec![0.5],
                std: vec![0.25],
            },
        )
        .unwrap()
    }

    #[test]
    fn batch_standardizes_and_labels() {
        let d = toy();
        let (x, y) = d.batch(&[4, 0], None).unwrap();
        assert_eq!(x.shape(), &[2, 1, 4, 4]);
        assert_eq!(y, [4, 0]);
        let expect = |v: u8| (v as f32 / 255.0 - 0.5) / 0.25;
        assert_eq!(x.data()[0], expect(200));
        assert_eq!(x.data()[16], expect(0));
    }

    #[test]
    fn augmented_batches_are_reproducible() {
        let d = toy();
        let cfg = AugmentConfig::default();
        let aug = Some(EpochAugment {
            config: &cfg,
            seed: 1,
            epoch: 2,
        });
        assert_eq!(
            d.batch(&[1, 2], aug).unwrap().0,
            d.batch(&[1, 2], aug).unwrap().0
        );
    }

    #[test]
    fn channel_mismatch_rejected() {
        let p = PackedDataset::new(2, 2, 3).unwrap();
        assert!(Dataset::new(p, Normalization::identity(1)).is_err());
    }

    #[test]
    fn subset_keeps_refs() {
        let d = toy()
            .with_refs((0..5).map(|i| format!("img{i}")).collect())
            .unwrap();
        let s = d.subset(&[3, 1]).unwrap();
        assert_eq!(s.labels(), [3, 1]);
        assert_eq!(s.reference(0), "img3");
    }
}
