//! Target preprocessing, dataset loading, splitting and batching.

mod lsm;
mod split;
mod transform;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::GraphBatch;
use crate::molgraph::{
    center_molecule, parse_qm9_xyz, random_rotation_matrix, DirectedEdgeGraph, Element, Molecule, Qm9Record, Target,
};

pub use lsm::{fit_lsm, LsmModel, SPECIES};
pub use split::{split_dataset, split_sizes, DatasetSplit, SplitName};
pub use transform::{Standardize, TargetTransform};

/// Per-element reference energies in eV, columns U0, U, H, G.
#[derive(Clone, Debug, PartialEq)]
pub struct AtomRef {
    pub energies: [[f64; 4]; 5],
}

impl AtomRef {
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::parse(1, e.to_string()))?
            .iter()
            .map(|h| h.to_string())
            .collect();
        if header != ["element", "U0", "U", "H", "G"] {
            return Err(Error::parse(1, format!("expected header element,U0,U,H,G, got {}", header.join(","))));
        }
        let mut energies = [[f64::NAN; 4]; 5];
        let mut seen = [false; 5];
        for (i, rec) in r.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| Error::parse(line, e.to_string()))?;
            let el: Element = rec[0].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?;
            for c in 0..4 {
                energies[el.index()][c] = rec[c + 1]
                    .parse()
                    .map_err(|_| Error::parse(line, format!("bad energy '{}'", &rec[c + 1])))?;
            }
            seen[el.index()] = true;
        }
        if let Some(missing) = Element::ALL.iter().find(|e| !seen[e.index()]) {
            return Err(Error::Data(format!("atom reference table has no row for {}", missing)));
        }
        Ok(AtomRef { energies })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text).map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))
    }

    /// Sum of reference energies for a composition, or `None` for targets
    /// without a reference column.
    pub fn total(&self, target: Target, counts: &[usize; 5]) -> Option<f64> {
        let c = target.atomref_column()?;
        Some(counts.iter().zip(&self.energies).map(|(&n, row)| n as f64 * row[c]).sum())
    }
}

/// One prepared molecule: centered, featurized, with its raw target.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub index: usize,
    pub molecule: Molecule,
    pub graph: DirectedEdgeGraph,
    pub counts: [usize; 5],
    pub target: f64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub target: Target,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Energy targets become atomization energies when `atomref` is given.
    pub fn from_records(records: &[Qm9Record], target: Target, atomref: Option<&AtomRef>) -> Result<Self> {
        let samples = records
            .iter()
            .map(|r| {
                let counts = r.molecule.species_counts();
                let mut y = r.target(target);
                if let Some(total) = atomref.and_then(|a| a.total(target, &counts)) {
                    y -= total;
                }
                Sample::new(&r.molecule, r.index as usize, counts, y)
            })
            .collect::<Result<_>>()?;
        Ok(Dataset { target, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.index).collect()
    }

    pub fn counts(&self, idx: &[usize]) -> Vec<[usize; 5]> {
        idx.iter().map(|&i| self.samples[i].counts).collect()
    }

    pub fn targets(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().map(|&i| self.samples[i].target).collect()
    }

    pub fn all(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

impl Sample {
    pub fn new(molecule: &Molecule, index: usize, counts: [usize; 5], target: f64) -> Result<Self> {
        let molecule = center_molecule(molecule);
        Ok(Sample {
            id: molecule.id.clone(),
            graph: DirectedEdgeGraph::from_molecule(&molecule)?,
            molecule,
            index,
            counts,
            target,
        })
    }
}

/// Every `*.xyz` file in `dir`, sorted by name.
pub fn list_xyz(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::Data(format!("cannot read {}: {}", dir.display(), e)))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.ends_with(".xyz"))
        .collect();
    names.sort_unstable();
    Ok(names.into_iter().map(|n| dir.join(n)).collect())
}

/// Parses QM9 records from `dir`. With `sample = Some((k, seed))` only a
/// seeded random subset of `k` files is read.
pub fn load_qm9_dir(dir: &Path, sample: Option<(usize, u64)>) -> Result<Vec<Qm9Record>> {
    let mut paths = list_xyz(dir)?;
    if paths.is_empty() {
        return Err(Error::Data(format!("no .xyz files in {}", dir.display())));
    }
    if let Some((k, seed)) = sample {
        if k < paths.len() {
            paths.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            paths.truncate(k);
            paths.sort_unstable();
        }
    }
    let mut records: Vec<Qm9Record> = paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            parse_qm9_xyz(&text).map_err(|e| Error::Data(format!("{}: {}", p.display(), e)))
        })
        .collect::<Result<_>>()?;
    records.sort_by_key(|r| r.index);
    Ok(records)
}

/// One training or evaluation batch.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Positions in the dataset.
    pub indices: Vec<usize>,
    pub graph: GraphBatch,
    /// Transformed targets, one per molecule.
    pub targets: Vec<f64>,
}

impl Batch {
    /// `false` entries of the padding mask for molecule `b`.
    pub fn padding(&self, b: usize) -> usize {
        self.graph.padding(b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BatchOptions {
    pub batch_size: usize,
    pub shuffle: bool,
    pub augment: bool,
    pub seed: u64,
    pub epoch: usize,
}

/// Lazily assembled batches for one pass over `indices`. Order and
/// rotations depend only on `(seed, epoch)`.
pub struct Batches<'a> {
    dataset: &'a Dataset,
    targets: &'a [f64],
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rotate: Option<ChaCha8Rng>,
}

/// `targets` holds transformed targets for every sample of `dataset`.
pub fn make_batches<'a>(
    dataset: &'a Dataset,
    indices: &[usize],
    targets: &'a [f64],
    opts: BatchOptions,
) -> Result<Batches<'a>> {
    if opts.batch_size == 0 {
        return Err(Error::invalid("make_batches", "batch size must be positive"));
    }
    if targets.len() != dataset.len() {
        return Err(Error::invalid(
            "make_batches",
            format!("{} targets for {} samples", targets.len(), dataset.len()),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(opts.epoch as u64);
    let mut order = indices.to_vec();
    if opts.shuffle {
        order.shuffle(&mut rng);
    }
    Ok(Batches {
        dataset,
        targets,
        order,
        pos: 0,
        batch_size: opts.batch_size,
        rotate: opts.augment.then_some(rng),
    })
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let indices = self.order[self.pos..end].to_vec();
        self.pos = end;
        let rotated: Vec<DirectedEdgeGraph>;
        let graphs: Vec<&DirectedEdgeGraph> = match &mut self.rotate {
            Some(rng) => {
                rotated = indices
                    .iter()
                    .map(|&i| self.dataset.samples[i].graph.rotated(&random_rotation_matrix(rng)))
                    .collect();
                rotated.iter().collect()
            }
            None => indices.iter().map(|&i| &self.dataset.samples[i].graph).collect(),
        };
        let targets = indices.iter().map(|&i| self.targets[i]).collect();
        Some(GraphBatch::new(&graphs).map(|graph| Batch {
            indices,
            graph,
            targets,
        }))
    }
}

impl Batches<'_> {
    pub fn n_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }
}
