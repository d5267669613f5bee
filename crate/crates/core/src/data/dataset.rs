use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type ClassId = u32;

/// `(channels, height, width)`
pub type ImageShape = (usize, usize, usize);

pub fn image_numel(shape: ImageShape) -> usize {
    shape.0 * shape.1 * shape.2
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Base,
    Novel,
}

/// All instances of one class, stored back to back.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassEntry {
    pub id: ClassId,
    pub name: String,
    /// Alphabet for Omniglot characters, empty when the source has no grouping.
    pub group: String,
    pixels: Vec<f32>,
    count: usize,
}

impl ClassEntry {
    pub fn new(id: ClassId, name: impl Into<String>, group: impl Into<String>, images: Vec<Vec<f32>>) -> Self {
        let count = images.len();
        Self { id, name: name.into(), group: group.into(), pixels: images.concat(), count }
    }

    pub(crate) fn from_pixels(id: ClassId, name: String, group: String, pixels: Vec<f32>, count: usize) -> Self {
        Self { id, name, group, pixels, count }
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn image(&self, index: usize) -> &[f32] {
        let n = self.pixels.len() / self.count;
        &self.pixels[index * n..(index + 1) * n]
    }

    pub fn images(&self) -> impl Iterator<Item = &[f32]> {
        self.pixels.chunks_exact(self.pixels.len() / self.count.max(1))
    }
}

/// Labelled images grouped by class, ordered by ascending class id.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassIndexedDataset {
    image_shape: ImageShape,
    pub role: Role,
    classes: Vec<ClassEntry>,
    /// Non-fatal issues noticed while building the dataset.
    pub warnings: Vec<String>,
}

impl ClassIndexedDataset {
    pub fn new(image_shape: ImageShape, role: Role, mut classes: Vec<ClassEntry>) -> Result<Self> {
        let numel = image_numel(image_shape);
        if numel == 0 {
            return Err(Error::shape(format!("image shape {image_shape:?} is empty")));
        }
        classes.sort_by_key(|c| c.id);
        for pair in classes.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::Contract(format!("class id {} appears twice", pair[0].id)));
            }
        }
        for c in &classes {
            if c.count == 0 {
                return Err(Error::InsufficientData(format!("class {} ({}) has no images", c.id, c.name)));
            }
            if c.pixels.len() != c.count * numel {
                return Err(Error::shape(format!(
                    "class {} ({}) holds images that are not {image_shape:?}",
                    c.id, c.name
                )));
            }
        }
        Ok(Self { image_shape, role, classes, warnings: Vec::new() })
    }

    pub fn image_shape(&self) -> ImageShape {
        self.image_shape
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_images(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn classes(&self) -> &[ClassEntry] {
        &self.classes
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn class(&self, id: ClassId) -> Result<&ClassEntry> {
        self.classes
            .binary_search_by_key(&id, |c| c.id)
            .map(|i| &self.classes[i])
            .map_err(|_| Error::Precondition(format!("class id {id} is not in the dataset")))
    }

    pub fn image(&self, id: ClassId, index: usize) -> Result<&[f32]> {
        let c = self.class(id)?;
        if index >= c.count {
            return Err(Error::Precondition(format!("class {id} has no instance {index}")));
        }
        Ok(c.image(index))
    }

    /// Distinct group names in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        self.classes
            .iter()
            .filter(|c| seen.insert(c.group.clone()))
            .map(|c| c.group.clone())
            .collect()
    }

    /// Classes with the given ids, under a new role.
    pub fn subset(&self, ids: &[ClassId], role: Role) -> Result<Self> {
        let mut classes = Vec::with_capacity(ids.len());
        for &id in ids {
            classes.push(self.class(id)?.clone());
        }
        Self::new(self.image_shape, role, classes)
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Merges two datasets with disjoint class ids.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.image_shape != other.image_shape {
            return Err(Error::shape(format!(
                "cannot merge {:?} and {:?} images",
                self.image_shape, other.image_shape
            )));
        }
        let mut classes = self.classes.clone();
        classes.extend(other.classes.iter().cloned());
        Self::new(self.image_shape, self.role, classes)
    }

    /// Applies `f` to every image, producing images of `shape`.
    pub fn map_images(&self, shape: ImageShape, mut f: impl FnMut(&[f32]) -> Result<Vec<f32>>) -> Result<Self> {
        let mut classes = Vec::with_capacity(self.classes.len());
        for c in &self.classes {
            let images = c.images().map(&mut f).collect::<Result<Vec<_>>>()?;
            classes.push(ClassEntry::new(c.id, c.name.clone(), c.group.clone(), images));
        }
        let mut out = Self::new(shape, self.role, classes)?;
        out.warnings = self.warnings.clone();
        Ok(out)
    }
}

/// One instance per novel class.
#[derive(Clone, Debug, PartialEq)]
pub struct OneShotSet {
    image_shape: ImageShape,
    shots: BTreeMap<ClassId, Vec<f32>>,
}

impl OneShotSet {
    pub fn new(image_shape: ImageShape, shots: BTreeMap<ClassId, Vec<f32>>) -> Result<Self> {
        let n = image_numel(image_shape);
        if let Some((id, _)) = shots.iter().find(|(_, v)| v.len() != n) {
            return Err(Error::shape(format!("one-shot image of class {id} is not {image_shape:?}")));
        }
        Ok(Self { image_shape, shots })
    }

    pub fn image_shape(&self) -> ImageShape {
        self.image_shape
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.shots.keys().copied().collect()
    }

    pub fn image(&self, id: ClassId) -> Result<&[f32]> {
        self.shots
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Precondition(format!("no one-shot instance for class {id}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &[f32])> {
        self.shots.iter().map(|(&k, v)| (k, v.as_slice()))
    }
}

/// Stacks equally sized images into an `[N, C, H, W]` tensor.
pub fn stack_images<I, S>(images: I, shape: ImageShape) -> Result<Tensor<f32>>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[f32]>,
{
    let n = image_numel(shape);
    let mut data = Vec::new();
    let mut count = 0;
    for img in images {
        let img = img.as_ref();
        if img.len() != n {
            return Err(Error::shape(format!("image of {} values is not {shape:?}", img.len())));
        }
        data.extend_from_slice(img);
        count += 1;
    }
    Tensor::new(vec![count, shape.0, shape.1, shape.2], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: ClassId, n: usize) -> ClassEntry {
        ClassEntry::new(id, format!("c{id}"), "g", (0..n).map(|i| vec![i as f32; 4]).collect())
    }

    #[test]
    fn classes_are_sorted_and_addressable() {
        let d = ClassIndexedDataset::new((1, 2, 2), Role::Base, vec![entry(5, 2), entry(1, 3)]).unwrap();
        assert_eq!(d.class_ids(), vec![1, 5]);
        assert_eq!(d.num_images(), 5);
        assert_eq!(d.image(1, 2).unwrap(), &[2.0; 4]);
        assert!(d.image(1, 3).is_err());
        assert!(d.class(7).is_err());
    }

    #[test]
    fn invalid_datasets_are_rejected() {
        assert!(ClassIndexedDataset::new((1, 2, 2), Role::Base, vec![entry(1, 1), entry(1, 2)]).is_err());
        assert!(ClassIndexedDataset::new((1, 2, 2), Role::Base, vec![entry(1, 0)]).is_err());
        assert!(ClassIndexedDataset::new((1, 3, 2), Role::Base, vec![entry(1, 1)]).is_err());
    }

    #[test]
    fn stacking_builds_batches() {
        let t = stack_images([vec![1.0; 4], vec![2.0; 4]], (1, 2, 2)).unwrap();
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert!(stack_images([vec![1.0; 3]], (1, 2, 2)).is_err());
    }
}
