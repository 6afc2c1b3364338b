//! Sequence-labeled scene datasets.
//!
//! A [`SceneDataset`] is a list of [`Sequence`]s; each sequence is one meal
//! with a single label and an ordered run of `H × W × 3` frames. Sequences
//! are the unit of partitioning and of majority voting, frames the unit of
//! training.

mod folds;
mod generator;
mod io;

use std::collections::BTreeSet;

pub use folds::{kfold_partition, FoldPartition};
pub use generator::{
    generate_auxiliary, generate_generic_pretrain, generate_target, pattern_distance, ClassSpec,
    GeneratorConfig, PatternOrigin, PatternSpec, PatternWorld, TARGET_CLASSES,
};
pub use io::{load_dataset, save_dataset};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHANNELS: usize = 3;

/// Counting unit for class statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Granularity {
    Sequence,
    Frame,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    id: u32,
    label: usize,
    frame_len: usize,
    /// Frames back to back, each `H × W × 3` row-major.
    pixels: Vec<f32>,
}

impl Sequence {
    pub fn new(id: u32, label: usize, frame_len: usize, pixels: Vec<f32>) -> Result<Self> {
        if frame_len == 0 || pixels.is_empty() || !pixels.len().is_multiple_of(frame_len) {
            return Err(Error::invalid(format!(
                "sequence {id}: {} values do not form whole frames of {frame_len}",
                pixels.len()
            )));
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!(
                "sequence {id}: pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            id,
            label,
            frame_len,
            pixels,
        })
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn label(&self) -> usize {
        self.label
    }

    pub fn num_frames(&self) -> usize {
        self.pixels.len() / self.frame_len
    }

    pub fn frame(&self, i: usize) -> &[f32] {
        &self.pixels[i * self.frame_len..(i + 1) * self.frame_len]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub(crate) fn relabel(mut self, label: usize) -> Self {
        self.label = label;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    classes: Vec<String>,
    sequences: Vec<Sequence>,
    height: usize,
    width: usize,
    provenance: String,
}

impl SceneDataset {
    /// Validates labels, unique ids, unique class names and frame sizes.
    pub fn new(
        classes: Vec<String>,
        sequences: Vec<Sequence>,
        height: usize,
        width: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Empty("class list"));
        }
        let mut names = BTreeSet::new();
        if let Some(dup) = classes.iter().find(|c| !names.insert(c.as_str())) {
            return Err(Error::invalid(format!("duplicate class `{dup}`")));
        }
        let frame_len = height * width * CHANNELS;
        let mut ids = BTreeSet::new();
        for s in &sequences {
            if s.label >= classes.len() {
                return Err(Error::LabelOutOfRange {
                    label: s.label,
                    classes: classes.len(),
                });
            }
            if !ids.insert(s.id) {
                return Err(Error::invalid(format!("duplicate sequence id {}", s.id)));
            }
            if s.frame_len != frame_len {
                return Err(Error::invalid(format!(
                    "sequence {} has frames of {} values, expected {frame_len}",
                    s.id, s.frame_len
                )));
            }
        }
        Ok(Self {
            classes,
            sequences,
            height,
            width,
            provenance: provenance.into(),
        })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn sequences(&self) -> &[Sequence] {
        &self.sequences
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * CHANNELS
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn num_frames(&self) -> usize {
        self.sequences.iter().map(Sequence::num_frames).sum()
    }

    pub fn sequence_ids(&self) -> Vec<u32> {
        self.sequences.iter().map(|s| s.id).collect()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn label_name(&self, seq: &Sequence) -> &str {
        &self.classes[seq.label]
    }

    pub fn class_counts(&self, granularity: Granularity) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.sequences {
            counts[s.label] += match granularity {
                Granularity::Sequence => 1,
                Granularity::Frame => s.num_frames(),
            };
        }
        counts
    }

    /// Sequences whose ids are in `ids`, in dataset order.
    pub fn subset(&self, ids: &[u32]) -> Result<SceneDataset> {
        let wanted: BTreeSet<u32> = ids.iter().copied().collect();
        let known: BTreeSet<u32> = self.sequences.iter().map(|s| s.id).collect();
        if let Some(missing) = wanted.difference(&known).next() {
            return Err(Error::invalid(format!("unknown sequence id {missing}")));
        }
        Ok(Self {
            classes: self.classes.clone(),
            sequences: self
                .sequences
                .iter()
                .filter(|s| wanted.contains(&s.id))
                .cloned()
                .collect(),
            height: self.height,
            width: self.width,
            provenance: self.provenance.clone(),
        })
    }

    /// All frames of one sequence as a `[F, H, W, 3]` batch.
    pub fn sequence_tensor(&self, seq: &Sequence) -> Tensor {
        let data = seq.pixels.iter().map(|&v| f64::from(v)).collect();
        Tensor::new(
            vec![seq.num_frames(), self.height, self.width, CHANNELS],
            data,
        )
        .expect("validated sequence")
    }

    pub fn frame_view(&self) -> FrameView<'_> {
        let mut entries = Vec::with_capacity(self.num_frames());
        let mut labels = Vec::with_capacity(self.num_frames());
        for (si, s) in self.sequences.iter().enumerate() {
            for f in 0..s.num_frames() {
                entries.push((si, f));
                labels.push(s.label);
            }
        }
        FrameView {
            dataset: self,
            entries,
            labels,
        }
    }
}

/// Flat frame-level index over a dataset: the training sample space.
#[derive(Clone, Debug)]
pub struct FrameView<'a> {
    dataset: &'a SceneDataset,
    entries: Vec<(usize, usize)>,
    labels: Vec<usize>,
}

impl<'a> FrameView<'a> {
    pub fn dataset(&self) -> &'a SceneDataset {
        self.dataset
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.dataset.classes.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Frames at `indices` as a `[B, H, W, 3]` batch plus their labels.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let d = self.dataset;
        let mut data = Vec::with_capacity(indices.len() * d.frame_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let &(si, f) = self
                .entries
                .get(i)
                .ok_or_else(|| Error::invalid(format!("frame index {i} out of range")))?;
            data.extend(d.sequences[si].frame(f).iter().map(|&v| f64::from(v)));
            labels.push(self.labels[i]);
        }
        let images = Tensor::new(vec![indices.len(), d.height, d.width, CHANNELS], data)?;
        Ok((images, labels))
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Tiny dataset: `counts[c]` sequences of class `c`, `frames` frames each,
    /// every pixel of class `c` set to `(c + 1) / (n + 1)`.
    pub fn toy(counts: &[usize], frames: usize, h: usize, w: usize) -> SceneDataset {
        let n = counts.len();
        let classes = (0..n).map(|c| format!("c{c}")).collect();
        let mut seqs = Vec::new();
        let mut id = 0;
        for (c, &k) in counts.iter().enumerate() {
            for _ in 0..k {
                let v = (c + 1) as f32 / (n + 1) as f32;
                seqs.push(Sequence::new(id, c, h * w * 3, vec![v; frames * h * w * 3]).unwrap());
                id += 1;
            }
        }
        SceneDataset::new(classes, seqs, h, w, "toy").unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::toy;
    use super::*;

    #[test]
    fn rejects_invalid_sequences() {
        assert!(Sequence::new(0, 0, 12, vec![0.5; 13]).is_err());
        assert!(Sequence::new(0, 0, 12, vec![]).is_err());
        assert!(Sequence::new(0, 0, 3, vec![0.5, 1.5, 0.0]).is_err());
    }

    #[test]
    fn rejects_invalid_datasets() {
        let s = |id, label| Sequence::new(id, label, 3, vec![0.1; 6]).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(SceneDataset::new(names.clone(), vec![s(0, 2)], 1, 1, "").is_err());
        assert!(SceneDataset::new(names.clone(), vec![s(0, 0), s(0, 1)], 1, 1, "").is_err());
        assert!(SceneDataset::new(vec!["a".into(), "a".into()], vec![], 1, 1, "").is_err());
        assert!(SceneDataset::new(names, vec![s(0, 0)], 2, 1, "").is_err());
    }

    #[test]
    fn counts_and_views() {
        let d = toy(&[2, 1], 3, 2, 2);
        assert_eq!(d.class_counts(Granularity::Sequence), vec![2, 1]);
        assert_eq!(d.class_counts(Granularity::Frame), vec![6, 3]);
        let v = d.frame_view();
        assert_eq!(v.len(), 9);
        let (x, y) = v.gather(&[0, 8]).unwrap();
        assert_eq!(x.shape(), &[2, 2, 2, 3]);
        assert_eq!(y, vec![0, 1]);
        assert!(v.gather(&[9]).is_err());
        let sub = d.subset(&[2]).unwrap();
        assert_eq!(sub.sequence_ids(), vec![2]);
        assert!(d.subset(&[7]).is_err());
    }
}
