use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::explain::ClassNames;
use crate::features::FeatureMatrix;
use crate::split::Split;

use super::cv::seed_splits;
use super::synth::SynthData;

/// Features, labels, class names and a train/val/test split.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetBundle {
    pub features: FeatureMatrix,
    pub labels: Vec<usize>,
    pub classes: ClassNames,
    pub split: Split,
}

/// Standard file names inside a dataset directory.
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub features: PathBuf,
    pub labels: PathBuf,
    pub classes: Option<PathBuf>,
    pub splits: Option<PathBuf>,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| Some(dir.join(name)).filter(|p| p.exists());
        Self {
            features: dir.join("features.txt"),
            labels: dir.join("labels.csv"),
            classes: opt("classes.csv"),
            splits: opt("splits.csv"),
        }
    }
}

/// CSV with header `node,label`, nodes listed in order.
pub fn parse_labels(text: &str, path: Option<&Path>) -> Result<Vec<usize>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "node,label" => {}
        _ => return Err(Error::parse(path, 1, "expected header `node,label`")),
    }
    let mut labels = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let (node, label) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(path, idx + 1, "expected `node,label`"))?;
        let node: usize = node.trim().parse().map_err(|_| Error::parse(path, idx + 1, "bad node id"))?;
        if node != labels.len() {
            return Err(Error::parse(path, idx + 1, format!("expected node {}", labels.len())));
        }
        labels.push(label.trim().parse().map_err(|_| Error::parse(path, idx + 1, "bad label"))?);
    }
    Ok(labels)
}

pub fn labels_to_csv(labels: &[usize]) -> String {
    let mut s = String::from("node,label\n");
    for (i, y) in labels.iter().enumerate() {
        s.push_str(&format!("{i},{y}\n"));
    }
    s
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    parse_labels(&fs::read_to_string(path)?, Some(path))
}

pub fn read_split(path: &Path) -> Result<Split> {
    Split::parse_csv(&fs::read_to_string(path)?, Some(path))
}

impl DatasetBundle {
    /// Checks dims, label range and that the split partitions the nodes.
    pub fn new(features: FeatureMatrix, labels: Vec<usize>, classes: Option<ClassNames>, split: Split) -> Result<Self> {
        let n = features.n_nodes();
        if labels.len() != n {
            return Err(Error::Dataset(format!(
                "{} labels for {n} feature rows",
                labels.len()
            )));
        }
        let classes = match classes {
            Some(c) => c,
            None => ClassNames::numbered(labels.iter().max().map_or(0, |m| m + 1)),
        };
        if let Some(&label) = labels.iter().find(|&&y| y >= classes.len()) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: classes.len(),
            });
        }
        if classes.len() < 2 {
            return Err(Error::Dataset("need at least 2 classes".into()));
        }
        split.roles(n)?;
        Ok(Self {
            features,
            labels,
            classes,
            split,
        })
    }

    pub fn from_synth(data: SynthData, split: Split) -> Result<Self> {
        Self::new(data.features, data.labels, Some(data.classes), split)
    }

    pub fn n_nodes(&self) -> usize {
        self.features.n_nodes()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// Writes `features.txt`, `labels.csv`, `classes.csv` and `splits.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<DatasetPaths> {
        fs::create_dir_all(dir)?;
        let paths = DatasetPaths {
            features: dir.join("features.txt"),
            labels: dir.join("labels.csv"),
            classes: Some(dir.join("classes.csv")),
            splits: Some(dir.join("splits.csv")),
        };
        self.features.write_text(&paths.features)?;
        fs::write(&paths.labels, labels_to_csv(&self.labels))?;
        fs::write(paths.classes.as_ref().expect("set above"), self.classes.to_csv())?;
        fs::write(paths.splits.as_ref().expect("set above"), self.split.to_csv())?;
        Ok(paths)
    }
}

/// Loads a bundle. Without a splits file, fold `fold` of the 3-fold
/// cross-validation plan for `seed` is used.
pub fn load_dataset(paths: &DatasetPaths, seed: u64, fold: usize) -> Result<DatasetBundle> {
    let features = FeatureMatrix::read(&paths.features)?;
    let labels = read_labels(&paths.labels)?;
    let classes = paths.classes.as_deref().map(ClassNames::load).transpose()?;
    let split = match &paths.splits {
        Some(p) => read_split(p)?,
        None => {
            let n = features.n_nodes();
            let mut splits = seed_splits(n, seed, 3, 0.8)?;
            if fold >= splits.len() {
                return Err(Error::Config(format!("fold {fold} out of range for 3 folds")));
            }
            splits.swap_remove(fold)
        }
    };
    DatasetBundle::new(features, labels, classes, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> DatasetBundle {
        let features = FeatureMatrix::new(10, 2, (0..20).map(|i| i as f64 + 1.0).collect()).unwrap();
        let labels = (0..10).map(|i| i % 2).collect();
        let split = seed_splits(10, 1, 3, 0.8).unwrap().remove(0);
        DatasetBundle::new(features, labels, None, split).unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = toy();
        let paths = b.save(dir.path()).unwrap();
        assert_eq!(load_dataset(&paths, 0, 0).unwrap(), b);
        let no_split = DatasetPaths { splits: None, ..paths };
        let regenerated = load_dataset(&no_split, 1, 0).unwrap();
        assert_eq!(regenerated.split, b.split);
        assert_eq!(regenerated.n_nodes(), 10);
    }

    #[test]
    fn mismatches_are_rejected() {
        let b = toy();
        assert!(DatasetBundle::new(b.features.clone(), vec![0; 9], None, b.split.clone()).is_err());
        let few = Some(ClassNames::numbered(1));
        assert!(DatasetBundle::new(b.features.clone(), b.labels.clone(), few, b.split.clone()).is_err());
        assert!(matches!(parse_labels("node,label\n0,1\n2,0\n", None), Err(Error::Parse { line: 3, .. })));
    }
}
