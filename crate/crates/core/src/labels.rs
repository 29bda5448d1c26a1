use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class index stored in masks and dictionaries.
pub type ClassId = u16;

/// Name reserved for clusters that are dropped as mixtures.
pub const MIXTURE: &str = "mixture";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TissueClass {
    pub id: ClassId,
    pub name: String,
}

/// Ordered tissue vocabulary with ids `0..len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TissueClass>", into = "Vec<TissueClass>")]
pub struct TissueLabelMap {
    classes: Vec<TissueClass>,
}

impl TissueLabelMap {
    pub fn new(classes: Vec<TissueClass>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("label map has no classes"));
        }
        if classes.len() > ClassId::MAX as usize {
            return Err(Error::invalid("too many classes"));
        }
        let mut names = HashSet::new();
        for (i, c) in classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(Error::invalid(format!(
                    "class ids must be contiguous from 0; position {i} has id {}",
                    c.id
                )));
            }
            if c.name.eq_ignore_ascii_case(MIXTURE) {
                return Err(Error::invalid("\"mixture\" is reserved and cannot be a class"));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::invalid(format!("duplicate class name {:?}", c.name)));
            }
        }
        Ok(Self { classes })
    }

    pub fn from_names<S: AsRef<str>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::new(
            names
                .into_iter()
                .enumerate()
                .map(|(i, n)| TissueClass {
                    id: i as ClassId,
                    name: n.as_ref().to_owned(),
                })
                .collect(),
        )
    }

    /// `class_0 .. class_{n-1}`.
    pub fn numbered(n: usize) -> Result<Self> {
        Self::from_names((0..n).map(|i| format!("class_{i}")))
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, id: ClassId) -> bool {
        (id as usize) < self.classes.len()
    }

    pub fn name(&self, id: ClassId) -> Option<&str> {
        self.classes.get(id as usize).map(|c| c.name.as_str())
    }

    pub fn classes(&self) -> &[TissueClass] {
        &self.classes
    }

    pub fn check(&self, id: ClassId) -> Result<()> {
        if self.contains(id) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "class id {id} not in label map of {} classes",
                self.len()
            )))
        }
    }
}

impl TryFrom<Vec<TissueClass>> for TissueLabelMap {
    type Error = Error;

    fn try_from(v: Vec<TissueClass>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TissueLabelMap> for Vec<TissueClass> {
    fn from(m: TissueLabelMap) -> Self {
        m.classes
    }
}
