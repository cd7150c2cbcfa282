//! Two image pools, their seeded train/test split, batch sampling and the
//! toy two-modality corpus.

mod io;
mod toy;

pub use io::{
    export_png, ingest_dirs, ingest_manifest, normalize_pixels, read_png, resize_bilinear, write_manifest, ManifestEntry,
};
pub use toy::{make_toy_data, toy_dataset, toy_pair, ToyParams};

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{derive_seed, Translator};
use crate::{Error, Image, Result, ValueRange};

/// Seed stream reserved for the split shuffle.
pub const SPLIT_STREAM: u64 = 0x5EED_0001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    X,
    Y,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::X => Domain::Y,
            Domain::Y => Domain::X,
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::X => "x",
            Domain::Y => "y",
        })
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "x" => Ok(Domain::X),
            "y" => Ok(Domain::Y),
            other => Err(Error::Config(format!("unknown domain `{other}` (expected x or y)"))),
        }
    }
}

/// Translation direction: `a2b` runs G (X to Y), `b2a` runs F (Y to X).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    A2b,
    B2a,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::A2b, Direction::B2a];

    pub fn source(self) -> Domain {
        match self {
            Direction::A2b => Domain::X,
            Direction::B2a => Domain::Y,
        }
    }

    pub fn target(self) -> Domain {
        self.source().other()
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::A2b => "a2b",
            Direction::B2a => "b2a",
        })
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "a2b" | "x_to_y" | "x2y" => Ok(Direction::A2b),
            "b2a" | "y_to_x" | "y2x" => Ok(Direction::B2a),
            other => Err(Error::Config(format!(
                "unknown direction `{other}` (expected a2b or b2a)"
            ))),
        }
    }
}

/// An image tagged with where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub domain: Domain,
    pub pair_id: Option<String>,
    pub image: Image,
}

/// Two pools of model-space images at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct UnpairedDataset {
    domain_x: Vec<Sample>,
    domain_y: Vec<Sample>,
    size: usize,
}

impl UnpairedDataset {
    /// Checks domain tags, unique ids, the shared square resolution and that
    /// every image is in model space.
    pub fn new(domain_x: Vec<Sample>, domain_y: Vec<Sample>) -> Result<Self> {
        if domain_x.is_empty() || domain_y.is_empty() {
            return Err(Error::Empty(format!(
                "domain {} has no images",
                if domain_x.is_empty() { "x" } else { "y" }
            )));
        }
        let size = domain_x[0].image.height();
        for (domain, pool) in [(Domain::X, &domain_x), (Domain::Y, &domain_y)] {
            let mut seen = HashSet::new();
            for s in pool.iter() {
                if s.domain != domain {
                    return Err(Error::Config(format!("sample {} tagged {} in pool {domain}", s.id, s.domain)));
                }
                if !seen.insert(s.id.as_str()) {
                    return Err(Error::Config(format!("duplicate id {} in domain {domain}", s.id)));
                }
                if s.image.height() != size || s.image.width() != size {
                    return Err(Error::Shape(format!(
                        "{} is {}x{}, expected {size}x{size}",
                        s.id,
                        s.image.height(),
                        s.image.width()
                    )));
                }
                if s.image.range() != ValueRange::Model {
                    return Err(Error::Config(format!("{} is not in model space", s.id)));
                }
            }
        }
        Ok(UnpairedDataset {
            domain_x,
            domain_y,
            size,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pool(&self, domain: Domain) -> &[Sample] {
        match domain {
            Domain::X => &self.domain_x,
            Domain::Y => &self.domain_y,
        }
    }

    /// True when both domains carry the same set of pair ids, one image each.
    pub fn is_fully_paired(&self) -> bool {
        let ids = |pool: &[Sample]| -> Option<Vec<String>> {
            let mut v: Vec<String> = pool.iter().map(|s| s.pair_id.clone()).collect::<Option<_>>()?;
            v.sort();
            let n = v.len();
            v.dedup();
            (v.len() == n).then_some(v)
        };
        match (ids(&self.domain_x), ids(&self.domain_y)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }

    /// Seeded train/test split. A fully paired corpus is split by pair so
    /// test pairs stay complete; otherwise each domain is shuffled on its own.
    /// `floor(n * train_fraction)` images per domain go to training.
    pub fn split(&self, seed: u64, train_fraction: f64) -> Result<Split> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        for domain in [Domain::X, Domain::Y] {
            if self.pool(domain).len() < 2 {
                return Err(Error::Empty(format!(
                    "domain {domain} has {} image(s); at least 2 are needed to split",
                    self.pool(domain).len()
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SPLIT_STREAM));
        let cut = |n: usize| -> Result<usize> {
            let k = (n as f64 * train_fraction).floor() as usize;
            if k == 0 || k == n {
                return Err(Error::Config(format!(
                    "train_fraction {train_fraction} leaves an empty side for {n} images"
                )));
            }
            Ok(k)
        };
        let (train_x, test_x, train_y, test_y);
        if self.is_fully_paired() {
            let mut units: Vec<&str> = self.domain_x.iter().map(|s| s.pair_id.as_deref().unwrap()).collect();
            units.sort_unstable();
            units.shuffle(&mut rng);
            let k = cut(units.len())?;
            let index = |pool: &[Sample]| -> BTreeMap<String, usize> {
                pool.iter()
                    .enumerate()
                    .map(|(i, s)| (s.pair_id.clone().unwrap(), i))
                    .collect()
            };
            let (ix, iy) = (index(&self.domain_x), index(&self.domain_y));
            let pick = |m: &BTreeMap<String, usize>, ids: &[&str]| ids.iter().map(|u| m[*u]).collect::<Vec<_>>();
            train_x = pick(&ix, &units[..k]);
            test_x = pick(&ix, &units[k..]);
            train_y = pick(&iy, &units[..k]);
            test_y = pick(&iy, &units[k..]);
        } else {
            let mut px: Vec<usize> = (0..self.domain_x.len()).collect();
            px.shuffle(&mut rng);
            let mut py: Vec<usize> = (0..self.domain_y.len()).collect();
            py.shuffle(&mut rng);
            let (kx, ky) = (cut(px.len())?, cut(py.len())?);
            train_x = px[..kx].to_vec();
            test_x = px[kx..].to_vec();
            train_y = py[..ky].to_vec();
            test_y = py[ky..].to_vec();
        }
        let mut split = Split {
            seed,
            train_x,
            test_x,
            train_y,
            test_y,
        };
        // test order is by id so downstream reports are stable
        split.test_x.sort_by(|&a, &b| self.domain_x[a].id.cmp(&self.domain_x[b].id));
        split.test_y.sort_by(|&a, &b| self.domain_y[a].id.cmp(&self.domain_y[b].id));
        Ok(split)
    }

    pub fn train_view<'a>(&'a self, split: &'a Split) -> TrainView<'a> {
        TrainView { data: self, split }
    }

    /// Test samples of `direction`'s source domain with their paired
    /// ground truth from the target domain, ordered by source id.
    pub fn paired_test<'a>(&'a self, split: &Split, direction: Direction) -> Result<Vec<(&'a Sample, &'a Sample)>> {
        let (src, dst) = (direction.source(), direction.target());
        let targets: BTreeMap<&str, &Sample> = self
            .pool(dst)
            .iter()
            .filter_map(|s| s.pair_id.as_deref().map(|p| (p, s)))
            .collect();
        let mut missing = Vec::new();
        let mut out = Vec::new();
        for &i in split.test(src) {
            let s = &self.pool(src)[i];
            match s.pair_id.as_deref().and_then(|p| targets.get(p)) {
                Some(t) => out.push((s, *t)),
                None => missing.push(s.id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingPairs(missing));
        }
        Ok(out)
    }
}

/// Index sets into each domain's pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train_x: Vec<usize>,
    pub test_x: Vec<usize>,
    pub train_y: Vec<usize>,
    pub test_y: Vec<usize>,
}

impl Split {
    pub fn train(&self, domain: Domain) -> &[usize] {
        match domain {
            Domain::X => &self.train_x,
            Domain::Y => &self.train_y,
        }
    }

    pub fn test(&self, domain: Domain) -> &[usize] {
        match domain {
            Domain::X => &self.test_x,
            Domain::Y => &self.test_y,
        }
    }

    pub fn test_ids(&self, data: &UnpairedDataset, domain: Domain) -> Vec<String> {
        self.test(domain).iter().map(|&i| data.pool(domain)[i].id.clone()).collect()
    }
}

/// One training draw. `x_neg` comes from the X pool and serves as the
/// negative for D_Y; `y_neg` from the Y pool serves D_X.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub x: Vec<Sample>,
    pub y: Vec<Sample>,
    pub x_neg: Vec<Sample>,
    pub y_neg: Vec<Sample>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn images(samples: &[Sample]) -> Vec<&Image> {
        samples.iter().map(|s| &s.image).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TrainView<'a> {
    data: &'a UnpairedDataset,
    split: &'a Split,
}

impl<'a> TrainView<'a> {
    pub fn len(&self, domain: Domain) -> usize {
        self.split.train(domain).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len(Domain::X) == 0 || self.len(Domain::Y) == 0
    }

    pub fn sample(&self, domain: Domain, k: usize) -> &'a Sample {
        &self.data.pool(domain)[self.split.train(domain)[k]]
    }

    /// Draws `x`, `y`, `x_neg`, `y_neg` (in that order, `batch_size` each)
    /// uniformly and independently from the training pools.
    pub fn next_batch<R: Rng>(&self, rng: &mut R, batch_size: usize) -> Result<TrainingBatch> {
        if self.is_empty() {
            return Err(Error::Empty("training pool".into()));
        }
        let mut draw = |domain: Domain| -> Vec<Sample> {
            (0..batch_size)
                .map(|_| self.sample(domain, rng.random_range(0..self.len(domain))).clone())
                .collect()
        };
        let x = draw(Domain::X);
        let y = draw(Domain::Y);
        let x_neg = draw(Domain::X);
        let y_neg = draw(Domain::Y);
        Ok(TrainingBatch { x, y, x_neg, y_neg })
    }
}

/// One synthetic image per test image of `source`, ordered by id.
pub fn synthesize_test_set(
    translator: &dyn Translator,
    data: &UnpairedDataset,
    split: &Split,
    source: Domain,
) -> Result<Vec<(String, Image)>> {
    let mut out = split
        .test(source)
        .iter()
        .map(|&i| {
            let s = &data.pool(source)[i];
            Ok((s.id.clone(), translator.translate(&s.image)?))
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}
