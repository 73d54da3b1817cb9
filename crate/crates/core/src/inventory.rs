//! Alliance inventory: paired patient/therapist statements tagged by subscale.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Speaker;
use crate::error::{Error, Result};

/// Item count of the standard instrument.
pub const STANDARD_SIZE: usize = 36;

const PLACEHOLDER: &str = include_str!("../data/placeholder_inventory.jsonl");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subscale {
    Task,
    Bond,
    Goal,
}

impl Subscale {
    pub const ALL: [Subscale; 3] = [Subscale::Task, Subscale::Bond, Subscale::Goal];

    pub fn as_str(self) -> &'static str {
        match self {
            Subscale::Task => "task",
            Subscale::Bond => "bond",
            Subscale::Goal => "goal",
        }
    }
}

impl fmt::Display for Subscale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subscale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subscale::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown subscale '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InventoryItem {
    pub rater: Speaker,
    pub index: usize,
    pub subscale: Subscale,
    pub text: String,
}

/// Validated inventory: `size` items per rater, indices `1..=size`, sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inventory {
    patient_items: Vec<InventoryItem>,
    therapist_items: Vec<InventoryItem>,
}

impl Inventory {
    /// Validates items for an instrument of `size` statements per rater.
    pub fn from_items(items: Vec<InventoryItem>, size: usize) -> Result<Self> {
        let (mut patient, mut therapist): (Vec<_>, Vec<_>) =
            items.into_iter().partition(|i| i.rater == Speaker::Patient);
        for (rater, list) in [
            (Speaker::Patient, &mut patient),
            (Speaker::Therapist, &mut therapist),
        ] {
            list.sort_by_key(|i| i.index);
            let mut seen = BTreeSet::new();
            for item in list.iter() {
                if item.index == 0 || item.index > size {
                    return Err(Error::Validation(format!(
                        "{rater} item {}: index outside 1..={size}",
                        item.index
                    )));
                }
                if !seen.insert(item.index) {
                    return Err(Error::Validation(format!(
                        "{rater} item {}: duplicate index",
                        item.index
                    )));
                }
                if item.text.trim().is_empty() {
                    return Err(Error::Validation(format!(
                        "{rater} item {}: empty text",
                        item.index
                    )));
                }
            }
            if list.len() != size {
                let missing: Vec<usize> = (1..=size).filter(|i| !seen.contains(i)).collect();
                return Err(Error::Validation(format!(
                    "{rater} items: expected {size}, found {} (missing indices {missing:?})",
                    list.len()
                )));
            }
        }
        for (p, t) in patient.iter().zip(&therapist) {
            if p.subscale != t.subscale {
                return Err(Error::Validation(format!(
                    "item {}: patient subscale {} differs from therapist subscale {}",
                    p.index, p.subscale, t.subscale
                )));
            }
        }
        Ok(Self {
            patient_items: patient,
            therapist_items: therapist,
        })
    }

    /// The placeholder inventory shipped with the crate.
    pub fn placeholder() -> Self {
        parse_inventory(PLACEHOLDER.as_bytes(), STANDARD_SIZE).expect("bundled inventory is valid")
    }

    /// Items per rater.
    pub fn size(&self) -> usize {
        self.patient_items.len()
    }

    pub fn items(&self, rater: Speaker) -> &[InventoryItem] {
        match rater {
            Speaker::Patient => &self.patient_items,
            Speaker::Therapist => &self.therapist_items,
        }
    }

    pub fn item(&self, rater: Speaker, index: usize) -> Option<&InventoryItem> {
        self.items(rater).get(index.checked_sub(1)?)
    }

    pub fn subscale_mask(&self, subscale: Subscale) -> BTreeSet<usize> {
        self.patient_items
            .iter()
            .filter(|i| i.subscale == subscale)
            .map(|i| i.index)
            .collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for item in self.patient_items.iter().chain(&self.therapist_items) {
            out.push_str(&serde_json::to_string(item).expect("item serialises"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Free function form of [`Inventory::subscale_mask`].
pub fn subscale_mask(inventory: &Inventory, subscale: Subscale) -> BTreeSet<usize> {
    inventory.subscale_mask(subscale)
}

pub fn parse_inventory<R: BufRead>(reader: R, size: usize) -> Result<Inventory> {
    let mut items = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let item: InventoryItem = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Inventory::from_items(items, size)
}

pub fn load_inventory(path: impl AsRef<Path>) -> Result<Inventory> {
    load_inventory_sized(path, STANDARD_SIZE)
}

pub fn load_inventory_sized(path: impl AsRef<Path>, size: usize) -> Result<Inventory> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_inventory(BufReader::new(file), size).map_err(|e| e.context(path.display().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines_without(pred: impl Fn(&InventoryItem) -> bool) -> String {
        let inv = Inventory::placeholder();
        inv.items(Speaker::Patient)
            .iter()
            .chain(inv.items(Speaker::Therapist))
            .filter(|i| !pred(i))
            .map(|i| serde_json::to_string(i).unwrap() + "\n")
            .collect()
    }

    #[test]
    fn placeholder_has_36_per_rater() {
        let inv = Inventory::placeholder();
        assert_eq!(inv.items(Speaker::Patient).len(), 36);
        assert_eq!(inv.items(Speaker::Therapist).len(), 36);
        assert_eq!(PLACEHOLDER.lines().count(), 72);
    }

    #[test]
    fn missing_item_is_reported_with_counts() {
        let text = lines_without(|i| i.rater == Speaker::Patient && i.index == 17);
        let err = parse_inventory(text.as_bytes(), 36)
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("patient items: expected 36, found 35"),
            "{err}"
        );
    }

    #[test]
    fn subscale_disagreement_is_rejected() {
        let mut inv = Inventory::placeholder().to_jsonl();
        inv = inv.replacen(
            "{\"rater\":\"therapist\",\"index\":5,\"subscale\":\"bond\"",
            "{\"rater\":\"therapist\",\"index\":5,\"subscale\":\"task\"",
            1,
        );
        let err = parse_inventory(inv.as_bytes(), 36).unwrap_err().to_string();
        assert!(err.contains("item 5"), "{err}");
    }

    #[test]
    fn duplicate_and_empty_items_are_rejected() {
        let inv = Inventory::placeholder();
        let mut items: Vec<InventoryItem> = inv
            .items(Speaker::Patient)
            .iter()
            .chain(inv.items(Speaker::Therapist))
            .cloned()
            .collect();
        items[3].index = 3;
        let err = Inventory::from_items(items.clone(), 36)
            .unwrap_err()
            .to_string();
        assert!(err.contains("duplicate"), "{err}");
        items[3].index = 4;
        items[3].text = "   ".into();
        let err = Inventory::from_items(items, 36).unwrap_err().to_string();
        assert!(err.contains("patient item 4: empty text"), "{err}");
    }

    #[test]
    fn masks_partition_the_indices() {
        let inv = Inventory::placeholder();
        let masks: Vec<_> = Subscale::ALL
            .iter()
            .map(|&s| inv.subscale_mask(s))
            .collect();
        assert_eq!(masks[0].len(), 12);
        let union: BTreeSet<usize> = masks.iter().flatten().copied().collect();
        assert_eq!(union, (1..=36).collect());
        for a in 0..3 {
            for b in a + 1..3 {
                assert!(masks[a].is_disjoint(&masks[b]));
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inv.jsonl");
        let inv = Inventory::placeholder();
        inv.save(&path).unwrap();
        assert_eq!(load_inventory(&path).unwrap(), inv);
    }
}
