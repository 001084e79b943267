use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            _ => Err(Error::Data(format!("unknown split '{}' (expected train, val or test)", s))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Split sizes for `n` items: validation and test each take half of what
/// remains after `⌊0.9·n⌋`, rounded down, and the training split takes the
/// rest. Validation and test are never empty.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held_out = n - n * 9 / 10;
    let each = (held_out / 2).max(1);
    (n - 2 * each, each, each)
}

/// Seeded shuffle of `0..n`, then slicing into train/val/test.
pub fn split_dataset(n: usize, seed: u64) -> Result<DatasetSplit> {
    if n < 3 {
        return Err(Error::invalid("split_dataset", format!("need at least 3 items, got {}", n)));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (n_train, n_val, _) = split_sizes(n);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(DatasetSplit {
        train: idx,
        val,
        test,
        seed,
    })
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, s: SplitName) -> &[usize] {
        match s {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    /// Manifest rows `(index, split)` using the given item identifiers.
    pub fn write_manifest(&self, path: &Path, ids: &[usize]) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["index", "split"]).map_err(csv_err)?;
        for s in [SplitName::Train, SplitName::Val, SplitName::Test] {
            for &i in self.get(s) {
                w.write_record([ids[i].to_string(), s.name().to_string()]).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a manifest, mapping identifiers back to positions in `ids`.
    pub fn read_manifest(path: &Path, ids: &[usize], seed: u64) -> Result<Self> {
        let pos: std::collections::HashMap<usize, usize> = ids.iter().enumerate().map(|(p, &i)| (i, p)).collect();
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut split = DatasetSplit {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            seed,
        };
        let mut seen = vec![false; ids.len()];
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let at = |msg: String| Error::parse(line + 2, msg);
            if rec.len() != 2 {
                return Err(at(format!("expected 2 fields, got {}", rec.len())));
            }
            let id: usize = rec[0].trim().parse().map_err(|_| at(format!("bad index '{}'", &rec[0])))?;
            let p = *pos
                .get(&id)
                .ok_or_else(|| at(format!("index {} is not in the dataset", id)))?;
            if std::mem::replace(&mut seen[p], true) {
                return Err(at(format!("index {} listed twice", id)));
            }
            let s: SplitName = rec[1].trim().parse().map_err(|e: Error| at(e.to_string()))?;
            match s {
                SplitName::Train => split.train.push(p),
                SplitName::Val => split.val.push(p),
                SplitName::Test => split.test.push(p),
            }
        }
        Ok(split)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Data(format!("csv: {}", e))
}
