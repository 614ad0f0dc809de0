//! Dataset manifests and cross-validation fold assignment.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CaseRecord, LabelSchema, SplitTag};

/// A named list of cases, their label schema and the seed used for fold assignment.
///
/// Relative image and mask paths are resolved against `root`, which is the
/// directory holding the manifest file when it was loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub seed: u64,
    pub label_schema: LabelSchema,
    pub cases: Vec<CaseRecord>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(dataset_name: impl Into<String>, seed: u64, label_schema: LabelSchema, cases: Vec<CaseRecord>) -> Result<Self> {
        let m = DatasetManifest {
            dataset_name: dataset_name.into(),
            seed,
            label_schema,
            cases,
            root: PathBuf::new(),
        };
        m.check_unique_ids()?;
        Ok(m)
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for c in &self.cases {
            if !seen.insert(c.case_id.as_str()) {
                return Err(Error::Data(format!("duplicate case_id {:?} in manifest", c.case_id)));
            }
        }
        Ok(())
    }

    /// Loads and validates a manifest, including the existence of every referenced file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut m: DatasetManifest = crate::fsutil::read_json(path)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check_unique_ids()?;
        m.validate_files()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::fsutil::write_json_atomic(path.as_ref(), self)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn validate_files(&self) -> Result<()> {
        for c in &self.cases {
            let mut paths = vec![&c.image_path];
            paths.extend(c.mask_path.as_ref());
            for p in paths {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::Data(format!("missing file {}", full.display())).for_case(&c.case_id));
                }
            }
        }
        Ok(())
    }

    pub fn case(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    /// Cases whose split tag is `train` or `unassigned`.
    pub fn training_cases(&self) -> impl Iterator<Item = &CaseRecord> {
        self.cases
            .iter()
            .filter(|c| matches!(c.split_tag, SplitTag::Train | SplitTag::Unassigned))
    }

    pub fn fold_count(&self) -> usize {
        self.cases.iter().filter_map(|c| c.fold_index).max().map_or(0, |m| m + 1)
    }

    /// Returns a copy with every case assigned to one of `k` folds.
    pub fn assign_folds(&self, k: usize, seed: u64) -> Result<DatasetManifest> {
        let folds = assign_folds(self.cases.iter().map(|c| c.case_id.as_str()), k, seed)?;
        let mut out = self.clone();
        for c in &mut out.cases {
            c.fold_index = Some(folds[c.case_id.as_str()]);
        }
        Ok(out)
    }
}

/// SplitMix64: a 64-bit state advanced by the golden-ratio increment and
/// finalised with two xor-shift-multiply rounds.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// Assigns each case id to a fold in `0..k`.
///
/// Ids are sorted lexicographically, shuffled with Fisher-Yates driven by
/// [`SplitMix64`] (`j = next_u64() % (i + 1)` for `i` from `n - 1` down to 1),
/// then dealt round-robin. The result depends only on the id set and the seed.
pub fn assign_folds<'a>(
    case_ids: impl IntoIterator<Item = &'a str>,
    k: usize,
    seed: u64,
) -> Result<std::collections::BTreeMap<&'a str, usize>> {
    if k < 2 {
        return Err(Error::Config(format!("fold count {k} must be at least 2")));
    }
    let mut ids: Vec<&str> = case_ids.into_iter().collect();
    ids.sort_unstable();
    let before = ids.len();
    ids.dedup();
    if ids.len() != before {
        return Err(Error::Data("duplicate case ids passed to fold assignment".into()));
    }
    if ids.len() < k {
        return Err(Error::Config(format!("{} cases cannot fill {k} folds", ids.len())));
    }
    let mut rng = SplitMix64::new(seed);
    for i in (1..ids.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        ids.swap(i, j);
    }
    Ok(ids.into_iter().enumerate().map(|(pos, id)| (id, pos % k)).collect())
}
