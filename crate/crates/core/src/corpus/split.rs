use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::record::{ScaffoldKey, SpectrumRecord};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Train,
    Test,
}

/// Record and scaffold membership of a scaffold-disjoint split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub train_scaffolds: BTreeSet<ScaffoldKey>,
    pub test_scaffolds: BTreeSet<ScaffoldKey>,
}

impl DatasetSplit {
    pub fn side(&self, record_id: &str) -> Option<Side> {
        if self.train_ids.contains(record_id) {
            Some(Side::Train)
        } else if self.test_ids.contains(record_id) {
            Some(Side::Test)
        } else {
            None
        }
    }

    pub fn scaffold_overlap(&self) -> usize {
        self.train_scaffolds.intersection(&self.test_scaffolds).count()
    }

    /// Records on `side`, in input order.
    pub fn select<'r>(&self, records: &'r [SpectrumRecord], side: Side) -> Vec<&'r SpectrumRecord> {
        let ids = match side {
            Side::Train => &self.train_ids,
            Side::Test => &self.test_ids,
        };
        records.iter().filter(|r| ids.contains(&r.record_id)).collect()
    }

    /// Checks every split invariant against the records it was built from.
    pub fn audit(&self, records: &[SpectrumRecord]) -> Result<()> {
        if self.scaffold_overlap() != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} scaffolds on both sides",
                self.scaffold_overlap()
            )));
        }
        if !self.train_ids.is_disjoint(&self.test_ids) {
            return Err(Error::InvalidArgument("record on both sides".into()));
        }
        for r in records {
            let key = r.scaffold()?;
            let ok = match self.side(&r.record_id) {
                Some(Side::Train) => self.train_scaffolds.contains(&key),
                Some(Side::Test) => self.test_scaffolds.contains(&key),
                None => false,
            };
            if !ok {
                return Err(Error::InvalidArgument(format!("record `{}` misplaced", r.record_id)));
            }
        }
        Ok(())
    }

    /// Split file: one `side<TAB>record_id<TAB>scaffold` line per record,
    /// followed by a leakage audit section.
    pub fn to_text(&self, records: &[SpectrumRecord]) -> Result<String> {
        let mut out = String::from("# scaffold-disjoint split v1\n");
        let mut rows: Vec<(&str, &str, String)> = Vec::new();
        for r in records {
            let side = match self.side(&r.record_id) {
                Some(Side::Train) => "train",
                Some(Side::Test) => "test",
                None => continue,
            };
            rows.push((side, &r.record_id, r.scaffold()?.to_string()));
        }
        rows.sort();
        for (side, id, key) in rows {
            let _ = writeln!(out, "{side}\t{id}\t{key}");
        }
        out.push_str("# audit\n");
        let _ = writeln!(out, "audit.scaffold_overlap = {}", self.scaffold_overlap());
        let _ = writeln!(out, "audit.test_records = {}", self.test_ids.len());
        let _ = writeln!(out, "audit.test_scaffolds = {}", self.test_scaffolds.len());
        let _ = writeln!(out, "audit.train_records = {}", self.train_ids.len());
        let _ = writeln!(out, "audit.train_scaffolds = {}", self.train_scaffolds.len());
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut split = DatasetSplit::default();
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.starts_with("audit.") || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || Error::InvalidArgument(format!("split file line {}: `{line}`", i + 1));
            let [side, id, key] = cols[..] else { return Err(bad()) };
            let key = ScaffoldKey::new(key).map_err(|_| bad())?;
            match side {
                "train" => {
                    split.train_ids.insert(id.to_string());
                    split.train_scaffolds.insert(key);
                }
                "test" => {
                    split.test_ids.insert(id.to_string());
                    split.test_scaffolds.insert(key);
                }
                _ => return Err(bad()),
            }
        }
        if split.scaffold_overlap() != 0 {
            return Err(Error::InvalidArgument("split file has overlapping scaffolds".into()));
        }
        Ok(split)
    }
}

/// Groups records by scaffold, shuffles the (sorted) scaffold list with the
/// seeded `split` substream, and moves whole scaffolds to the test side until
/// it holds at least `test_fraction` of all scaffolds. The train side always
/// keeps at least one scaffold.
pub fn scaffold_disjoint_split(records: &[SpectrumRecord], test_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to split".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in (0,1), got {test_fraction}"
        )));
    }
    let mut groups: BTreeMap<ScaffoldKey, Vec<&str>> = BTreeMap::new();
    for r in records {
        groups.entry(r.scaffold()?).or_default().push(&r.record_id);
    }
    if groups.len() < 2 {
        return Err(Error::TooFewScaffolds(groups.len()));
    }
    let mut keys: Vec<ScaffoldKey> = groups.keys().cloned().collect();
    keys.shuffle(&mut rng::substream(seed, rng::SPLIT));
    let n = keys.len();
    let n_test = ((test_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let mut split = DatasetSplit::default();
    for (i, key) in keys.into_iter().enumerate() {
        let ids = &groups[&key];
        if i < n_test {
            split.test_ids.extend(ids.iter().map(|s| s.to_string()));
            split.test_scaffolds.insert(key);
        } else {
            split.train_ids.extend(ids.iter().map(|s| s.to_string()));
            split.train_scaffolds.insert(key);
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Peak;
    use proptest::prelude::*;

    fn rec(id: &str, key: &str) -> SpectrumRecord {
        SpectrumRecord {
            record_id: id.into(),
            peaks: vec![Peak {
                mz: 10.0,
                intensity: 1.0,
            }],
            smiles: "C".into(),
            inchikey: key.into(),
            instrument_tag: None,
        }
    }

    fn scaffold(i: usize) -> String {
        let letters: String = (0..14)
            .map(|k| (b'A' + ((i >> k) & 1) as u8 + (k as u8 % 3) * 2) as char)
            .collect();
        format!("{letters}-BBBBBBBBBB-N")
    }

    #[test]
    fn ten_scaffolds_twenty_percent() {
        let recs: Vec<_> = (0..10).map(|i| rec(&format!("r{i}"), &scaffold(i))).collect();
        let s = scaffold_disjoint_split(&recs, 0.2, 3).unwrap();
        assert_eq!(s.test_scaffolds.len(), 2);
        assert_eq!(s.train_scaffolds.len(), 8);
        assert_eq!(s.scaffold_overlap(), 0);
        s.audit(&recs).unwrap();
    }

    #[test]
    fn shared_scaffold_stays_together() {
        let mut recs: Vec<_> = (0..4).map(|i| rec(&format!("same{i}"), &scaffold(0))).collect();
        recs.push(rec("other", &scaffold(1)));
        for seed in 0..20 {
            let s = scaffold_disjoint_split(&recs, 0.5, seed).unwrap();
            let sides: BTreeSet<_> = (0..4).map(|i| format!("{:?}", s.side(&format!("same{i}")))).collect();
            assert_eq!(sides.len(), 1);
        }
    }

    #[test]
    fn deterministic_and_text_round_trip() {
        let recs: Vec<_> = (0..12).map(|i| rec(&format!("r{i}"), &scaffold(i % 6))).collect();
        let a = scaffold_disjoint_split(&recs, 0.3, 9).unwrap();
        let b = scaffold_disjoint_split(&recs, 0.3, 9).unwrap();
        assert_eq!(a, b);
        let text = a.to_text(&recs).unwrap();
        assert_eq!(text, b.to_text(&recs).unwrap());
        assert!(text.contains("audit.scaffold_overlap = 0"));
        assert_eq!(DatasetSplit::from_text(&text).unwrap(), a);
    }

    #[test]
    fn single_scaffold_fails() {
        let recs = vec![rec("a", &scaffold(0)), rec("b", &scaffold(0))];
        assert!(matches!(
            scaffold_disjoint_split(&recs, 0.5, 0),
            Err(Error::TooFewScaffolds(1))
        ));
    }

    proptest! {
        #[test]
        fn stereoisomers_share_side(n in 2usize..30, seed in any::<u64>(), frac in 0.05f64..0.95) {
            // Two stereo variants per scaffold: identical first block, different second block.
            let recs: Vec<_> = (0..n).flat_map(|i| {
                let base = scaffold(i);
                let variant = format!("{}-CCCCCCCCCC-M", &base[..14]);
                [rec(&format!("a{i}"), &base), rec(&format!("b{i}"), &variant)]
            }).collect();
            let s = scaffold_disjoint_split(&recs, frac, seed).unwrap();
            prop_assert_eq!(s.scaffold_overlap(), 0);
            s.audit(&recs).unwrap();
            for i in 0..n {
                prop_assert_eq!(s.side(&format!("a{i}")), s.side(&format!("b{i}")));
            }
        }
    }
}
