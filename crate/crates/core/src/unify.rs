//! Unified label space construction and dataset remapping.
//!
//! Source categories are merged when their names resolve to the same text,
//! either because they are equal after lowercasing or because a curated
//! [`AliasMap`] group contains them. Unified ids are assigned by sorting the
//! resolved names, so the result does not depend on input order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{normalize_name, CategorySpec, Dataset, Detection, LabelSpace, ModelError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UnifyError {
    #[error("`{name}` resolves through more than one alias group")]
    AliasConflict { name: String },
    #[error("alias map line {line}: {message}")]
    AliasSyntax { line: usize, message: String },
    #[error("no label spaces to unify")]
    EmptyInput,
    #[error("remap table does not fit dataset `{dataset}`: {reason}")]
    TableMismatch { dataset: String, reason: String },
    #[error("category {0} is not covered by the remap table")]
    UnknownCategory(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasGroup {
    pub canonical: String,
    pub members: BTreeSet<String>,
}

/// Curated groups of names that denote the same class.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasMap {
    groups: Vec<AliasGroup>,
    index: BTreeMap<String, usize>,
}

impl AliasMap {
    /// Validates that no name (canonical or member) appears in two groups.
    pub fn new(groups: Vec<AliasGroup>) -> Result<Self, UnifyError> {
        let mut normalized = Vec::with_capacity(groups.len());
        let mut index = BTreeMap::new();
        for (gi, g) in groups.into_iter().enumerate() {
            let canonical = normalize_name(&g.canonical);
            if canonical.is_empty() {
                return Err(ModelError::EmptyName.into());
            }
            let members: BTreeSet<String> =
                g.members.iter().map(|m| normalize_name(m)).filter(|m| !m.is_empty()).collect();
            for name in core::iter::once(&canonical).chain(members.iter()) {
                match index.insert(name.clone(), gi) {
                    Some(prev) if prev != gi => return Err(UnifyError::AliasConflict { name: name.clone() }),
                    _ => {}
                }
            }
            normalized.push(AliasGroup { canonical, members });
        }
        Ok(Self { groups: normalized, index })
    }

    /// Parses `canonical = member1, member2, ...`, one group per line.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, UnifyError> {
        let mut groups = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (canonical, members) = line.split_once('=').ok_or_else(|| UnifyError::AliasSyntax {
                line: i + 1,
                message: format!("expected `canonical = members`, got `{line}`"),
            })?;
            let canonical = canonical.trim();
            if canonical.is_empty() {
                return Err(UnifyError::AliasSyntax { line: i + 1, message: "empty canonical name".into() });
            }
            let members = members.split(',').map(str::trim).filter(|m| !m.is_empty()).map(String::from).collect();
            groups.push(AliasGroup { canonical: canonical.into(), members });
        }
        Self::new(groups)
    }

    pub fn groups(&self) -> &[AliasGroup] {
        &self.groups
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    fn group_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Resolves a bare name: its group's canonical name, or the name itself.
    pub fn resolve_name(&self, name: &str) -> String {
        let name = normalize_name(name);
        match self.group_of(&name) {
            Some(g) => self.groups[g].canonical.clone(),
            None => name,
        }
    }

    /// Resolves a category through its canonical name and all its aliases.
    /// Hitting two different groups is a conflict.
    pub fn resolve_category(&self, category: &CategorySpec) -> Result<String, UnifyError> {
        let mut hit: Option<usize> = None;
        for name in core::iter::once(&category.canonical_name).chain(category.aliases.iter()) {
            if let Some(g) = self.group_of(name) {
                match hit {
                    Some(prev) if prev != g => {
                        return Err(UnifyError::AliasConflict { name: category.canonical_name.clone() })
                    }
                    _ => hit = Some(g),
                }
            }
        }
        Ok(match hit {
            Some(g) => self.groups[g].canonical.clone(),
            None => category.canonical_name.clone(),
        })
    }
}

/// Total map from a source space's category ids to unified ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemapTable {
    pub dataset_id: String,
    /// `mapping[old] = new`.
    pub mapping: Vec<u32>,
}

impl RemapTable {
    pub fn identity(dataset_id: impl Into<String>, len: usize) -> Self {
        Self { dataset_id: dataset_id.into(), mapping: (0..len as u32).collect() }
    }

    pub fn get(&self, old: u32) -> Option<u32> {
        self.mapping.get(old as usize).copied()
    }

    /// Unified ids that the source space natively annotates.
    pub fn native_classes(&self) -> BTreeSet<u32> {
        self.mapping.iter().copied().collect()
    }

    fn check(&self, dataset_id: &str, source: &LabelSpace, target: &LabelSpace) -> Result<(), UnifyError> {
        let mismatch = |reason: String| UnifyError::TableMismatch { dataset: dataset_id.into(), reason };
        if self.dataset_id != dataset_id {
            return Err(mismatch(format!("table is for `{}`", self.dataset_id)));
        }
        if self.mapping.len() != source.len() {
            return Err(mismatch(format!(
                "table covers {} categories, dataset has {}",
                self.mapping.len(),
                source.len()
            )));
        }
        if let Some(bad) = self.mapping.iter().find(|&&to| !target.contains(to)) {
            return Err(mismatch(format!("target id {bad} is outside the unified space")));
        }
        Ok(())
    }
}

/// Builds `L_U` from the input spaces and one remap table per input.
pub fn build_unified_space(
    spaces: &[(String, LabelSpace)],
    aliases: &AliasMap,
) -> Result<(LabelSpace, Vec<RemapTable>), UnifyError> {
    if spaces.is_empty() {
        return Err(UnifyError::EmptyInput);
    }

    let mut resolved: Vec<Vec<String>> = Vec::with_capacity(spaces.len());
    let mut merged: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (_, space) in spaces {
        let mut names = Vec::with_capacity(space.len());
        for cat in space.categories() {
            let target = aliases.resolve_category(cat)?;
            let entry = merged.entry(target.clone()).or_default();
            entry.insert(cat.canonical_name.clone());
            entry.extend(cat.aliases.iter().cloned());
            if let Some(g) = aliases.group_of(&target) {
                entry.extend(aliases.groups[g].members.iter().cloned());
            }
            names.push(target);
        }
        resolved.push(names);
    }

    let canonical: BTreeSet<String> = merged.keys().cloned().collect();
    let categories = merged
        .into_iter()
        .enumerate()
        .map(|(id, (name, aliases))| {
            let aliases = aliases.into_iter().filter(|a| !canonical.contains(a));
            CategorySpec::new(id as u32, &name, aliases)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let unified = LabelSpace::new(categories)?;

    let tables = spaces
        .iter()
        .zip(resolved)
        .map(|((dataset_id, _), names)| RemapTable {
            dataset_id: dataset_id.clone(),
            mapping: names
                .iter()
                .map(|n| unified.find(n).expect("every resolved name is a unified category"))
                .collect(),
        })
        .collect();
    Ok((unified, tables))
}

/// Moves a dataset into the target space. Only `category_id` changes.
pub fn remap_dataset(d: &Dataset, t: &RemapTable, target: &LabelSpace) -> Result<Dataset, UnifyError> {
    t.check(&d.id, &d.label_space, target)?;
    let annotations = d
        .annotations
        .iter()
        .map(|a| {
            let mut a = a.clone();
            a.category_id = t.get(a.category_id).ok_or(UnifyError::UnknownCategory(a.category_id))?;
            Ok(a)
        })
        .collect::<Result<Vec<_>, UnifyError>>()?;
    Ok(Dataset { id: d.id.clone(), label_space: target.clone(), images: d.images.clone(), annotations })
}

/// Moves detections produced in `source` space into the target space.
pub fn remap_detections(
    dets: &[Detection],
    t: &RemapTable,
    source: &LabelSpace,
    target: &LabelSpace,
) -> Result<Vec<Detection>, UnifyError> {
    t.check(&t.dataset_id, source, target)?;
    dets.iter()
        .map(|d| {
            let mut d = d.clone();
            d.category_id = t.get(d.category_id).ok_or(UnifyError::UnknownCategory(d.category_id))?;
            Ok(d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Annotation, BoundingBox, ImageRecord, Provenance};
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn space(names: &[&str]) -> LabelSpace {
        LabelSpace::from_names(names).unwrap()
    }

    fn names(s: &LabelSpace) -> Vec<&str> {
        s.categories().iter().map(|c| c.canonical_name.as_str()).collect()
    }

    fn input(spaces: &[&[&str]]) -> Vec<(String, LabelSpace)> {
        spaces.iter().enumerate().map(|(i, s)| (format!("d{i}"), space(s))).collect()
    }

    #[test]
    fn single_space_is_sorted_identity_shape() {
        let (u, t) = build_unified_space(&input(&[&["car", "person"]]), &AliasMap::default()).unwrap();
        assert_eq!(names(&u), ["car", "person"]);
        assert_eq!(t[0].mapping, vec![0, 1]);
    }

    #[test]
    fn non_disjoint_union() {
        let (u, t) =
            build_unified_space(&input(&[&["car", "person"], &["car", "rider"]]), &AliasMap::default()).unwrap();
        assert_eq!(names(&u), ["car", "person", "rider"]);
        assert_eq!(t[0].mapping, vec![0, 1]);
        assert_eq!(t[1].mapping, vec![0, 2]);
    }

    #[test]
    fn alias_group_merges() {
        let aliases = AliasMap::parse("person = pedestrian\n").unwrap();
        let (u, t) = build_unified_space(&input(&[&["person"], &["Pedestrian"]]), &aliases).unwrap();
        assert_eq!(names(&u), ["person"]);
        assert!(u.categories()[0].aliases.contains("pedestrian"));
        assert_eq!(t[0].mapping, vec![0]);
        assert_eq!(t[1].mapping, vec![0]);
    }

    #[test]
    fn casing_merges_without_alias() {
        let a = LabelSpace::from_names(["CAR"]).unwrap();
        let b = LabelSpace::from_names(["car"]).unwrap();
        let (u, _) = build_unified_space(&[("a".into(), a), ("b".into(), b)], &AliasMap::default()).unwrap();
        assert_eq!(u.len(), 1);
    }

    #[test]
    fn eight_class_fixture() {
        // Eight opaque class names, split across two sources with overlap.
        let (u, _) = build_unified_space(
            &input(&[&["a", "ts", "m", "r", "p"], &["p", "c", "ca", "vf", "a"]]),
            &AliasMap::default(),
        )
        .unwrap();
        assert_eq!(u.len(), 8);
    }

    #[test]
    fn conflicts_and_errors() {
        assert!(matches!(
            AliasMap::parse("person = pedestrian\nhuman = pedestrian"),
            Err(UnifyError::AliasConflict { .. })
        ));
        assert!(matches!(AliasMap::parse("no equals sign"), Err(UnifyError::AliasSyntax { line: 1, .. })));
        assert_eq!(build_unified_space(&[], &AliasMap::default()), Err(UnifyError::EmptyInput));

        // a category whose name and alias fall in different groups
        let aliases = AliasMap::parse("person = pedestrian\nvehicle = car").unwrap();
        let cat = CategorySpec::new(0, "pedestrian", ["car"]).unwrap();
        let s = LabelSpace::new(vec![cat]).unwrap();
        assert!(matches!(build_unified_space(&[("d".into(), s)], &aliases), Err(UnifyError::AliasConflict { .. })));
    }

    #[test]
    fn alias_parse_skips_comments() {
        let m = AliasMap::parse("# comment\n\n Person = Pedestrian , walker,\n").unwrap();
        assert_eq!(m.groups().len(), 1);
        assert_eq!(m.resolve_name("WALKER"), "person");
        assert_eq!(m.resolve_name("car"), "car");
    }

    fn dataset_with(cat: u32) -> Dataset {
        let sp = space(&["car"]);
        let img = ImageRecord::new("1", "d", "1.png", 10, 10).unwrap();
        let ann =
            Annotation::new(&img, cat, BoundingBox::new(1.0, 1.0, 2.0, 2.0).unwrap(), Provenance::GroundTruth, &sp)
                .unwrap();
        Dataset::new("d", sp, vec![img], vec![ann]).unwrap()
    }

    #[test]
    fn remap_single_substitution() {
        let d = dataset_with(0);
        let target = space(&["a", "b", "car"]);
        let t = RemapTable { dataset_id: "d".into(), mapping: vec![2] };
        let r = remap_dataset(&d, &t, &target).unwrap();
        assert_eq!(r.annotations[0].category_id, 2);
        assert_eq!(r.label_space, target);
        assert_eq!(r.images, d.images);
        assert_eq!(r.annotations[0].bbox, d.annotations[0].bbox);

        // composing with identity changes nothing
        let again = remap_dataset(&r, &RemapTable::identity("d", 3), &target).unwrap();
        assert_eq!(again, r);
    }

    #[test]
    fn remap_identity_keeps_structure() {
        let d = dataset_with(0);
        let r = remap_dataset(&d, &RemapTable::identity("d", 1), &d.label_space).unwrap();
        assert_eq!(r, d);
    }

    #[test]
    fn remap_mismatches() {
        let d = dataset_with(0);
        let target = space(&["car"]);
        let wrong_id = RemapTable::identity("other", 1);
        assert!(matches!(remap_dataset(&d, &wrong_id, &target), Err(UnifyError::TableMismatch { .. })));
        let short = RemapTable::identity("d", 0);
        assert!(matches!(remap_dataset(&d, &short, &target), Err(UnifyError::TableMismatch { .. })));
        let out_of_space = RemapTable { dataset_id: "d".into(), mapping: vec![4] };
        assert!(matches!(remap_dataset(&d, &out_of_space, &target), Err(UnifyError::TableMismatch { .. })));
    }

    // Random instances over a small vocabulary so that overlaps are common.
    const VOCAB: [&str; 8] = ["car", "Car", "person", "pedestrian", "rider", "truck", "lorry", "sign"];

    fn arb_spaces() -> impl Strategy<Value = Vec<(String, LabelSpace)>> {
        prop::collection::vec(prop::sample::subsequence(VOCAB.to_vec(), 0..5), 1..5).prop_map(|spaces| {
            spaces
                .into_iter()
                .enumerate()
                .map(|(i, names)| {
                    let mut seen = BTreeSet::new();
                    let names: Vec<_> = names.into_iter().filter(|n| seen.insert(n.to_lowercase())).collect();
                    (format!("d{i}"), LabelSpace::from_names(names).unwrap())
                })
                .collect()
        })
    }

    fn arb_aliases() -> impl Strategy<Value = AliasMap> {
        prop::sample::subsequence(vec!["person = pedestrian", "truck = lorry", "vehicle = car, van"], 0..2)
            .prop_map(|lines| AliasMap::parse(&lines.join("\n")).unwrap())
    }

    proptest! {
        #[test]
        fn unify_matches_brute_force_grouping(spaces in arb_spaces(), aliases in arb_aliases()) {
            let (u, tables) = build_unified_space(&spaces, &aliases).unwrap();
            // oracle: resolve every source name, collect the distinct results
            let mut oracle = BTreeSet::new();
            for (_, s) in &spaces {
                for c in s.categories() {
                    oracle.insert(aliases.resolve_name(&c.canonical_name));
                }
            }
            prop_assert_eq!(u.len(), oracle.len());
            prop_assert_eq!(names(&u), oracle.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            let total: usize = spaces.iter().map(|(_, s)| s.len()).sum();
            prop_assert!(u.len() <= total);
            // conservation: every source category maps to exactly one unified category
            let mut per_unified = vec![0usize; u.len()];
            for t in &tables {
                for &to in &t.mapping { per_unified[to as usize] += 1; }
            }
            prop_assert_eq!(per_unified.iter().sum::<usize>(), total);
            // same unified id iff same resolved name
            for ((_, s), t) in spaces.iter().zip(&tables) {
                for c in s.categories() {
                    let to = t.get(c.id).unwrap();
                    prop_assert_eq!(u.name(to).unwrap(), aliases.resolve_name(&c.canonical_name));
                }
            }
        }

        #[test]
        fn unify_is_order_independent(spaces in arb_spaces(), aliases in arb_aliases()) {
            let (u, _) = build_unified_space(&spaces, &aliases).unwrap();
            let mut reversed = spaces.clone();
            reversed.reverse();
            let (r, _) = build_unified_space(&reversed, &aliases).unwrap();
            prop_assert_eq!(u, r);
        }

        #[test]
        fn unify_is_idempotent(spaces in arb_spaces(), aliases in arb_aliases()) {
            let (u, _) = build_unified_space(&spaces, &aliases).unwrap();
            let (again, tables) = build_unified_space(&[("u".to_string(), u.clone())], &aliases).unwrap();
            prop_assert_eq!(&again, &u);
            prop_assert_eq!(&tables[0], &RemapTable::identity("u", u.len()));
        }
    }
}
