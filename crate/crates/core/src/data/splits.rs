use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use super::dataset::{ClassId, ClassIndexedDataset, OneShotSet, Role};
use crate::error::{Error, Result};

/// Background alphabets held out for hyper-parameter selection. Together they
/// hold 331 characters; the remaining 20 alphabets hold 633.
pub const OMNIGLOT_VALIDATION_ALPHABETS: [&str; 10] = [
    "Alphabet_of_the_Magi",
    "Anglo-Saxon_Futhorc",
    "Arcadian",
    "Armenian",
    "Asomtavruli_(Georgian)",
    "Balinese",
    "Bengali",
    "Blackfoot_(Canadian_Aboriginal_Syllabics)",
    "Grantha",
    "Gujarati",
];

/// Class counts of the standard natural-image split.
pub const NATURAL_SPLIT: [usize; 3] = [64, 16, 20];

/// Splits by group name. Returns `(rest, held_out)`.
pub fn split_by_group<S: AsRef<str>>(
    dataset: &ClassIndexedDataset,
    held_out_groups: &[S],
) -> Result<(ClassIndexedDataset, ClassIndexedDataset)> {
    let wanted: BTreeSet<&str> = held_out_groups.iter().map(|s| s.as_ref()).collect();
    if wanted.len() != held_out_groups.len() {
        return Err(Error::Config("held-out group list names a group twice".into()));
    }
    let present: BTreeSet<String> = dataset.groups().into_iter().collect();
    if let Some(missing) = wanted.iter().find(|g| !present.contains(**g)) {
        return Err(Error::Config(format!("group `{missing}` is not in the dataset")));
    }
    let (held, rest): (Vec<_>, Vec<_>) =
        dataset.classes().iter().partition(|c| wanted.contains(c.group.as_str()));
    let ids = |v: Vec<&super::dataset::ClassEntry>| v.iter().map(|c| c.id).collect::<Vec<_>>();
    Ok((dataset.subset(&ids(rest), dataset.role)?, dataset.subset(&ids(held), dataset.role)?))
}

/// Partitions the dataset into explicitly listed class sets, which must be
/// disjoint and present.
pub fn partition_by_ids(dataset: &ClassIndexedDataset, parts: &[Vec<ClassId>]) -> Result<Vec<ClassIndexedDataset>> {
    let mut seen = BTreeSet::new();
    for id in parts.iter().flatten() {
        if !seen.insert(*id) {
            return Err(Error::Config(format!("class {id} is listed in more than one split")));
        }
    }
    parts.iter().map(|ids| dataset.subset(ids, dataset.role)).collect()
}

/// Seeded class-level partition into consecutive chunks of `counts` classes.
pub fn split_classes<R: Rng + ?Sized>(
    dataset: &ClassIndexedDataset,
    counts: &[usize],
    rng: &mut R,
) -> Result<Vec<ClassIndexedDataset>> {
    let total: usize = counts.iter().sum();
    if total > dataset.num_classes() {
        return Err(Error::InsufficientData(format!(
            "split of {total} classes requested from {}",
            dataset.num_classes()
        )));
    }
    let mut ids = dataset.class_ids();
    ids.shuffle(rng);
    let mut parts = Vec::with_capacity(counts.len());
    let mut start = 0;
    for &n in counts {
        let mut chunk = ids[start..start + n].to_vec();
        chunk.sort_unstable();
        parts.push(chunk);
        start += n;
    }
    partition_by_ids(dataset, &parts)
}

/// Errors when two datasets share a class id.
pub fn ensure_disjoint(a: &ClassIndexedDataset, b: &ClassIndexedDataset) -> Result<()> {
    let ids: BTreeSet<ClassId> = a.class_ids().into_iter().collect();
    if let Some(id) = b.class_ids().into_iter().find(|id| ids.contains(id)) {
        return Err(Error::Contract(format!("class {id} is both a base and a novel class")));
    }
    Ok(())
}

/// Moves one random instance per class into a [`OneShotSet`]; the rest form
/// the novel test pool.
pub fn extract_one_shot<R: Rng + ?Sized>(
    novel: &ClassIndexedDataset,
    rng: &mut R,
) -> Result<(OneShotSet, ClassIndexedDataset)> {
    let mut shots = BTreeMap::new();
    let mut pool = Vec::with_capacity(novel.num_classes());
    for c in novel.classes() {
        if c.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "class {} ({}) needs a one-shot instance and at least one test instance",
                c.id, c.name
            )));
        }
        let pick = rng.random_range(0..c.len());
        shots.insert(c.id, c.image(pick).to_vec());
        let rest: Vec<Vec<f32>> = (0..c.len()).filter(|&i| i != pick).map(|i| c.image(i).to_vec()).collect();
        pool.push(super::dataset::ClassEntry::new(c.id, c.name.clone(), c.group.clone(), rest));
    }
    let shots = OneShotSet::new(novel.image_shape(), shots)?;
    Ok((shots, ClassIndexedDataset::new(novel.image_shape(), Role::Novel, pool)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::ClassEntry;
    use crate::rng;

    fn grouped() -> ClassIndexedDataset {
        let entries = (0..6u32)
            .map(|c| {
                let group = if c < 2 { "A" } else if c < 5 { "B" } else { "C" };
                ClassEntry::new(c, format!("c{c}"), group, vec![vec![c as f32], vec![c as f32 + 0.5]])
            })
            .collect();
        ClassIndexedDataset::new((1, 1, 1), Role::Base, entries).unwrap()
    }

    #[test]
    fn validation_alphabets_hold_331_characters() {
        let counts: BTreeMap<&str, usize> = [
            ("Alphabet_of_the_Magi", 20),
            ("Anglo-Saxon_Futhorc", 29),
            ("Arcadian", 26),
            ("Armenian", 41),
            ("Asomtavruli_(Georgian)", 40),
            ("Balinese", 24),
            ("Bengali", 46),
            ("Blackfoot_(Canadian_Aboriginal_Syllabics)", 14),
            ("Grantha", 43),
            ("Gujarati", 48),
        ]
        .into_iter()
        .collect();
        let total: usize = OMNIGLOT_VALIDATION_ALPHABETS.iter().map(|a| counts[a]).sum();
        assert_eq!(total, 331);
        assert_eq!(964 - total, 633);
    }

    #[test]
    fn group_split_partitions_classes() {
        let d = grouped();
        let (rest, held) = split_by_group(&d, &["A", "C"]).unwrap();
        assert_eq!(held.class_ids(), vec![0, 1, 5]);
        assert_eq!(rest.class_ids(), vec![2, 3, 4]);
        assert!(split_by_group(&d, &["Z"]).is_err());
        assert!(split_by_group(&d, &["A", "A"]).is_err());
    }

    #[test]
    fn overlapping_partitions_are_rejected() {
        let d = grouped();
        assert!(partition_by_ids(&d, &[vec![0, 1], vec![1, 2]]).is_err());
        let parts = partition_by_ids(&d, &[vec![0, 1], vec![2]]).unwrap();
        ensure_disjoint(&parts[0], &parts[1]).unwrap();
        assert!(ensure_disjoint(&parts[0], &d).is_err());
    }

    #[test]
    fn seeded_split_is_reproducible_and_disjoint() {
        let d = grouped();
        let a = split_classes(&d, &[3, 2, 1], &mut rng::stream(5, 0, 0)).unwrap();
        let b = split_classes(&d, &[3, 2, 1], &mut rng::stream(5, 0, 0)).unwrap();
        assert_eq!(a, b);
        let all: BTreeSet<ClassId> = a.iter().flat_map(|p| p.class_ids()).collect();
        assert_eq!(all.len(), 6);
        assert!(split_classes(&d, &[5, 2], &mut rng::stream(5, 0, 0)).is_err());
    }

    #[test]
    fn one_shot_extraction_leaves_disjoint_pool() {
        let d = grouped();
        let (shots, pool) = extract_one_shot(&d, &mut rng::stream(0, 0, 0)).unwrap();
        assert_eq!(shots.len(), 6);
        assert_eq!(pool.num_classes(), 6);
        for c in pool.classes() {
            assert_eq!(c.len(), 1);
            assert_ne!(c.image(0), shots.image(c.id).unwrap());
        }
    }
}
