//! Dataset manifests: CSV index of `.csit` files with labels and splits.
//!
//! Format: UTF-8 CSV, header `path,class_index,atoms,split`, one row per
//! sample; `atoms` is a `|`-separated id list; `split` is `train` or `test`.
//! Paths are stored relative to the manifest's directory.

use super::{read_csi_file, CompositeLabel, CsiError, CsiSample};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub label: CompositeLabel,
    pub split: Split,
}

/// Index of a dataset on disk.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// class_index → human-readable name ("3" or "0+2+1" for composites).
    pub class_names: BTreeMap<u32, String>,
}

impl DatasetManifest {
    pub fn new(root: PathBuf, entries: Vec<ManifestEntry>) -> Self {
        let mut class_names = BTreeMap::new();
        for e in &entries {
            class_names.entry(e.label.class_index).or_insert_with(|| {
                e.label
                    .atoms
                    .iter()
                    .map(u32::to_string)
                    .collect::<Vec<_>>()
                    .join("+")
            });
        }
        DatasetManifest {
            root,
            entries,
            class_names,
        }
    }

    /// Number of classes; valid when indices are dense.
    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    /// Checks that class indices are dense `0..K−1` and every referenced file
    /// exists.
    pub fn validate(&self) -> Result<(), CsiError> {
        if self.entries.is_empty() {
            return Err(CsiError::InvalidSample("manifest has no entries".into()));
        }
        let k = self.class_names.len() as u32;
        for idx in self.class_names.keys() {
            if *idx >= k {
                return Err(CsiError::InvalidSample(format!(
                    "class indices not dense: found {idx} among {k} classes"
                )));
            }
        }
        for e in &self.entries {
            let p = self.root.join(&e.path);
            if !p.is_file() {
                return Err(CsiError::InvalidSample(format!(
                    "missing sample file {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    /// Loads and parses a manifest CSV, validating density and existence.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CsiError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CsiError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));

        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim_end() == "path,class_index,atoms,split" => {}
            Some((_, header)) => {
                return Err(CsiError::Manifest {
                    line: 1,
                    reason: format!(
                        "bad header {header:?}, expected \"path,class_index,atoms,split\""
                    ),
                })
            }
            None => {
                return Err(CsiError::Manifest {
                    line: 1,
                    reason: "empty manifest".into(),
                })
            }
        }

        let mut entries = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(CsiError::Manifest {
                    line: line_no,
                    reason: format!("expected 4 fields, found {}", fields.len()),
                });
            }
            let class_index: u32 = fields[1].parse().map_err(|_| CsiError::Manifest {
                line: line_no,
                reason: format!("bad class_index {:?}", fields[1]),
            })?;
            let atoms: Vec<u32> = fields[2]
                .split('|')
                .map(|a| {
                    a.parse().map_err(|_| CsiError::Manifest {
                        line: line_no,
                        reason: format!("bad atom id {a:?}"),
                    })
                })
                .collect::<Result<_, _>>()?;
            let split = match fields[3].trim_end() {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(CsiError::Manifest {
                        line: line_no,
                        reason: format!("bad split {other:?}, expected train or test"),
                    })
                }
            };
            entries.push(ManifestEntry {
                path: PathBuf::from(fields[0]),
                label: CompositeLabel { atoms, class_index },
                split,
            });
        }

        let manifest = DatasetManifest::new(root, entries);
        manifest.validate()?;
        Ok(manifest)
    }

    /// Writes the manifest CSV (paths as stored, i.e. relative to `root`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CsiError> {
        let path = path.as_ref();
        let mut out = String::from("path,class_index,atoms,split\n");
        for e in &self.entries {
            let atoms = e
                .label
                .atoms
                .iter()
                .map(u32::to_string)
                .collect::<Vec<_>>()
                .join("|");
            writeln!(
                out,
                "{},{},{},{}",
                e.path.display(),
                e.label.class_index,
                atoms,
                e.split.as_str()
            )
            .expect("string write");
        }
        std::fs::write(path, out).map_err(|source| CsiError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Parses every sample of one split, in manifest order.
    ///
    /// Each file's label must agree with its manifest row.
    pub fn load_split(&self, split: Split) -> Result<Vec<CsiSample>, CsiError> {
        let mut out = Vec::new();
        for e in self.entries.iter().filter(|e| e.split == split) {
            let sample = read_csi_file(self.root.join(&e.path))?;
            if sample.label != e.label {
                return Err(CsiError::InvalidSample(format!(
                    "label mismatch for {}: file says class {}, manifest says {}",
                    e.path.display(),
                    sample.label.class_index,
                    e.label.class_index
                )));
            }
            out.push(sample);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi::write_csi_file;

    fn tiny_sample(class: u32) -> CsiSample {
        CsiSample::new(
            1,
            2,
            3,
            vec![class as f32; 6],
            CompositeLabel {
                atoms: vec![class],
                class_index: class,
            },
            10.0,
        )
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for c in 0..2u32 {
            write_csi_file(&tiny_sample(c), dir.path().join(format!("s{c}.csit"))).unwrap();
        }
        let entries = vec![
            ManifestEntry {
                path: "s0.csit".into(),
                label: CompositeLabel {
                    atoms: vec![0],
                    class_index: 0,
                },
                split: Split::Train,
            },
            ManifestEntry {
                path: "s1.csit".into(),
                label: CompositeLabel {
                    atoms: vec![1],
                    class_index: 1,
                },
                split: Split::Test,
            },
        ];
        let m = DatasetManifest::new(dir.path().to_path_buf(), entries.clone());
        m.save(dir.path().join("manifest.csv")).unwrap();
        let back = DatasetManifest::load(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(back.entries, entries);
        assert_eq!(back.class_count(), 2);
        let test_samples = back.load_split(Split::Test).unwrap();
        assert_eq!(test_samples.len(), 1);
        assert_eq!(test_samples[0].label.class_index, 1);
    }

    #[test]
    fn bad_header_and_sparse_classes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.csv");
        std::fs::write(&p, "path,class,atoms,split\n").unwrap();
        assert!(matches!(
            DatasetManifest::load(&p),
            Err(CsiError::Manifest { line: 1, .. })
        ));

        write_csi_file(&tiny_sample(5), dir.path().join("s5.csit")).unwrap();
        std::fs::write(&p, "path,class_index,atoms,split\ns5.csit,5,5,train\n").unwrap();
        assert!(matches!(
            DatasetManifest::load(&p),
            Err(CsiError::InvalidSample(_))
        ));
    }

    #[test]
    fn missing_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.csv");
        std::fs::write(&p, "path,class_index,atoms,split\nnope.csit,0,0,train\n").unwrap();
        assert!(matches!(
            DatasetManifest::load(&p),
            Err(CsiError::InvalidSample(_))
        ));
    }
}
