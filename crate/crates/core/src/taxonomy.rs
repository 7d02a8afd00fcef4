//! Two-level label hierarchy: coarse categories partitioning fine classes.
//!
//! The taxonomy is data, not code: any two-level tree can be loaded from a
//! JSON file of the form
//!
//! ```json
//! {"coarse": [{"name": "Water Areas", "fine": ["beach", "river"]}, ...]}
//! ```
//!
//! Label ids are assigned by file order (coarse ids over the outer list, fine
//! ids over the concatenated inner lists). All computation uses ids; names
//! appear only at I/O boundaries.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a coarse (first-level) category.
pub type CoarseId = usize;
/// Index of a fine (second-level) class.
pub type FineId = usize;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("cannot read taxonomy file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse taxonomy file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("taxonomy has no coarse categories")]
    Empty,
    #[error("duplicate coarse label {0:?}")]
    DuplicateCoarse(String),
    #[error("duplicate fine label {0:?}")]
    DuplicateFine(String),
    #[error("empty label name under coarse category {0:?}")]
    EmptyName(String),
    #[error("coarse category {0:?} has no fine classes")]
    EmptyCategory(String),
    #[error("coarse id {0} out of range (C = {1})")]
    CoarseOutOfRange(CoarseId, usize),
    #[error("fine id {0} out of range (F = {1})")]
    FineOutOfRange(FineId, usize),
    #[error("unknown fine label {0:?}")]
    UnknownFine(String),
}

/// A fine (leaf) class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineLabel {
    pub id: FineId,
    pub name: String,
}

/// A coarse (first-level) category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoarseLabel {
    pub id: CoarseId,
    pub name: String,
}

/// On-disk form: one entry per coarse category with its fine class names.
#[derive(Debug, Serialize, Deserialize)]
struct TaxonomyFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    notes: Option<String>,
    coarse: Vec<TaxonomyFileEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TaxonomyFileEntry {
    name: String,
    fine: Vec<String>,
}

/// A validated two-level hierarchy. Immutable after load; every fine class
/// has exactly one coarse parent and every coarse category is non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    coarse: Vec<CoarseLabel>,
    fine: Vec<FineLabel>,
    parent: Vec<CoarseId>,
    children: Vec<Vec<FineId>>,
    notes: Option<String>,
}

impl Taxonomy {
    /// Build and validate a taxonomy from (coarse name, fine names) pairs.
    pub fn new<S: AsRef<str>>(groups: &[(S, Vec<S>)]) -> Result<Self, TaxonomyError> {
        Self::from_entries(
            groups.iter().map(|(c, fs)| {
                (
                    c.as_ref().to_string(),
                    fs.iter().map(|f| f.as_ref().to_string()).collect(),
                )
            }),
            None,
        )
    }

    fn from_entries(
        groups: impl IntoIterator<Item = (String, Vec<String>)>,
        notes: Option<String>,
    ) -> Result<Self, TaxonomyError> {
        let mut coarse = Vec::new();
        let mut fine = Vec::new();
        let mut parent = Vec::new();
        let mut children = Vec::new();
        let mut seen_coarse = BTreeMap::new();
        let mut seen_fine = BTreeMap::new();

        for (cname, fnames) in groups {
            if cname.trim().is_empty() {
                return Err(TaxonomyError::EmptyName(cname));
            }
            if seen_coarse.insert(cname.clone(), ()).is_some() {
                return Err(TaxonomyError::DuplicateCoarse(cname));
            }
            let cid = coarse.len();
            if fnames.is_empty() {
                return Err(TaxonomyError::EmptyCategory(cname));
            }
            let mut kids = Vec::with_capacity(fnames.len());
            for fname in fnames {
                if fname.trim().is_empty() {
                    return Err(TaxonomyError::EmptyName(cname.clone()));
                }
                if seen_fine.insert(fname.clone(), ()).is_some() {
                    return Err(TaxonomyError::DuplicateFine(fname));
                }
                let fid = fine.len();
                fine.push(FineLabel {
                    id: fid,
                    name: fname,
                });
                parent.push(cid);
                kids.push(fid);
            }
            coarse.push(CoarseLabel {
                id: cid,
                name: cname,
            });
            children.push(kids);
        }
        if coarse.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        Ok(Taxonomy {
            coarse,
            fine,
            parent,
            children,
            notes,
        })
    }

    /// Parse and validate a taxonomy from JSON text.
    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let file: TaxonomyFile = serde_json::from_str(text)?;
        Self::from_entries(
            file.coarse.into_iter().map(|e| (e.name, e.fine)),
            file.notes,
        )
    }

    /// Load a taxonomy from a JSON file. All invariants are checked.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Serialize to the JSON file format.
    pub fn to_json(&self) -> String {
        let file = TaxonomyFile {
            notes: self.notes.clone(),
            coarse: self
                .coarse
                .iter()
                .map(|c| TaxonomyFileEntry {
                    name: c.name.clone(),
                    fine: self.children[c.id]
                        .iter()
                        .map(|&f| self.fine[f].name.clone())
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("taxonomy serializes")
    }

    /// Save to a JSON file; `load(save(t))` structurally equals `t`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TaxonomyError> {
        std::fs::write(path.as_ref(), self.to_json()).map_err(|source| TaxonomyError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })
    }

    /// The bundled NW45 two-level grouping (5 coarse categories, 44 fine classes).
    pub fn nw45() -> Self {
        Self::from_json(NW45_JSON).expect("bundled taxonomy is valid")
    }

    /// Number of coarse categories.
    pub fn num_coarse(&self) -> usize {
        self.coarse.len()
    }

    /// Number of fine classes.
    pub fn num_fine(&self) -> usize {
        self.fine.len()
    }

    pub fn coarse_labels(&self) -> &[CoarseLabel] {
        &self.coarse
    }

    pub fn fine_labels(&self) -> &[FineLabel] {
        &self.fine
    }

    pub fn coarse_name(&self, c: CoarseId) -> &str {
        &self.coarse[c].name
    }

    pub fn fine_name(&self, f: FineId) -> &str {
        &self.fine[f].name
    }

    pub fn notes(&self) -> Option<&str> {
        self.notes.as_deref()
    }

    /// The coarse parent of a fine class.
    pub fn coarse_of(&self, f: FineId) -> Result<CoarseId, TaxonomyError> {
        self.parent
            .get(f)
            .copied()
            .ok_or(TaxonomyError::FineOutOfRange(f, self.fine.len()))
    }

    /// The fine classes under a coarse category, in ascending id order.
    pub fn fine_set(&self, c: CoarseId) -> Result<&[FineId], TaxonomyError> {
        self.children
            .get(c)
            .map(Vec::as_slice)
            .ok_or(TaxonomyError::CoarseOutOfRange(c, self.coarse.len()))
    }

    /// Position of a fine class within its coarse category's `fine_set`.
    pub fn local_index(&self, f: FineId) -> Result<usize, TaxonomyError> {
        let c = self.coarse_of(f)?;
        Ok(self.children[c]
            .iter()
            .position(|&x| x == f)
            .expect("child lists are consistent with parent map"))
    }

    /// Resolve a fine label by name.
    pub fn fine_by_name(&self, name: &str) -> Result<FineId, TaxonomyError> {
        self.fine
            .iter()
            .find(|l| l.name == name)
            .map(|l| l.id)
            .ok_or_else(|| TaxonomyError::UnknownFine(name.to_string()))
    }
}

impl fmt::Display for Taxonomy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} coarse categories, {} fine classes",
            self.num_coarse(),
            self.num_fine()
        )?;
        for c in &self.coarse {
            writeln!(f, "  [{}] {} ({})", c.id, c.name, self.children[c.id].len())?;
        }
        Ok(())
    }
}

/// Bundled NW45 grouping, shipped alongside the crate as
/// `data/nw45.taxonomy.json`.
pub const NW45_JSON: &str = include_str!("../data/nw45.taxonomy.json");
