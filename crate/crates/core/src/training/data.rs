use crate::error::{Error, Result};
use crate::model::{LabelMask, Volume};
use crate::network::Tensor;
use crate::preprocess::PreprocessedIndex;

/// One 2-D training sample in patch geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSlice {
    pub case_id: String,
    pub fold: Option<usize>,
    pub slice: usize,
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
}

/// All slices of a preprocessed dataset, held in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SliceDataset {
    pub rows: usize,
    pub cols: usize,
    pub slices: Vec<TrainSlice>,
}

impl SliceDataset {
    pub fn new(rows: usize, cols: usize) -> Self {
        SliceDataset {
            rows,
            cols,
            slices: Vec::new(),
        }
    }

    /// Appends every slice of a case; extents must match the dataset's patch size.
    pub fn push_case(&mut self, fold: Option<usize>, image: &Volume, mask: &LabelMask) -> Result<()> {
        let e = image.extents();
        let id = image.case_id();
        if mask.extents() != e {
            return Err(Error::Shape(format!("mask {} vs image {}", mask.extents(), e)).for_case(id));
        }
        if (e.rows, e.cols) != (self.rows, self.cols) {
            return Err(Error::Shape(format!(
                "slices are {}x{}, dataset expects {}x{}",
                e.rows, e.cols, self.rows, self.cols
            ))
            .for_case(id));
        }
        if mask.data().iter().any(|&v| v > 1) {
            return Err(Error::Contract("training masks must be binary".into()).for_case(id));
        }
        let p = e.plane_len();
        for s in 0..e.slices {
            self.slices.push(TrainSlice {
                case_id: id.to_string(),
                fold,
                slice: s,
                image: image.data()[s * p..(s + 1) * p].to_vec(),
                mask: mask.data()[s * p..(s + 1) * p].to_vec(),
            });
        }
        Ok(())
    }

    /// Loads every case of a preprocessed index; all files are checked before any is read.
    pub fn from_index(index: &PreprocessedIndex) -> Result<Self> {
        index.check_files(true)?;
        let [rows, cols] = index.config.patch_size;
        let mut ds = SliceDataset::new(rows, cols);
        for entry in &index.cases {
            let image = index.load_image(entry)?;
            let mask = index
                .load_mask(entry)?
                .ok_or_else(|| Error::Data("preprocessed case has no mask".into()).for_case(&entry.case_id))?;
            ds.push_case(entry.fold, &image, &mask)?;
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    /// Indices of slices outside / inside the held-out folds. Cases without a fold always train.
    pub fn split(&self, held_out: &[usize]) -> (Vec<usize>, Vec<usize>) {
        (0..self.slices.len()).partition(|&i| !self.slices[i].fold.is_some_and(|f| held_out.contains(&f)))
    }

    /// `(image batch, flattened targets)` for the given slice indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<u8>) {
        let p = self.rows * self.cols;
        let mut x = Vec::with_capacity(indices.len() * p);
        let mut t = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            x.extend_from_slice(&self.slices[i].image);
            t.extend_from_slice(&self.slices[i].mask);
        }
        (Tensor::from_vec(indices.len(), 1, self.rows, self.cols, x), t)
    }
}
