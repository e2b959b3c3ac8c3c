//! Character-frequency intervals for few-shot analysis.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed count interval `[lo, hi]`; `hi = None` is unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    pub lo: u64,
    pub hi: Option<u64>,
}

impl Bucket {
    pub const fn new(lo: u64, hi: u64) -> Self {
        Self { lo, hi: Some(hi) }
    }

    pub const fn open(lo: u64) -> Self {
        Self { lo, hi: None }
    }

    pub fn contains(&self, count: u64) -> bool {
        count >= self.lo && self.hi.is_none_or(|hi| count <= hi)
    }

    fn overlaps(&self, other: &Bucket) -> bool {
        let below = |a: &Bucket, b: &Bucket| a.hi.is_some_and(|hi| hi < b.lo);
        !(below(self, other) || below(other, self))
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.hi {
            Some(hi) => write!(f, "{}-{}", self.lo, hi),
            None => write!(f, "{}+", self.lo),
        }
    }
}

impl FromStr for Bucket {
    type Err = Error;

    /// Parses `"lo-hi"` or `"lo+"`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad bucket `{s}`; expected `lo-hi` or `lo+`"));
        let num = |t: &str| t.trim().parse::<u64>().map_err(|_| bad());
        if let Some(lo) = s.strip_suffix('+') {
            return Ok(Bucket::open(num(lo)?));
        }
        let (lo, hi) = s.split_once('-').ok_or_else(bad)?;
        Ok(Bucket::new(num(lo)?, num(hi)?))
    }
}

/// Index of the bucket containing `count`, or `None` when no bucket covers
/// it. Fails on malformed or overlapping buckets.
pub fn bucket_of(count: u64, buckets: &[Bucket]) -> Result<Option<usize>> {
    validate(buckets)?;
    Ok(buckets.iter().position(|b| b.contains(count)))
}

fn validate(buckets: &[Bucket]) -> Result<()> {
    for (i, b) in buckets.iter().enumerate() {
        if b.hi.is_some_and(|hi| hi < b.lo) {
            return Err(Error::Config(format!("bucket {b} is empty")));
        }
        if let Some(o) = buckets[..i].iter().find(|o| o.overlaps(b)) {
            return Err(Error::Config(format!("buckets {o} and {b} overlap")));
        }
    }
    Ok(())
}

/// Validated list of disjoint buckets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Bucket>", into = "Vec<Bucket>")]
pub struct BucketSet(Vec<Bucket>);

impl BucketSet {
    pub fn new(buckets: Vec<Bucket>) -> Result<Self> {
        validate(&buckets)?;
        Ok(Self(buckets))
    }

    /// Edges suited to corpora of a few thousand lines.
    pub fn desk() -> Self {
        Self(vec![
            Bucket::new(0, 0),
            Bucket::new(1, 10),
            Bucket::new(11, 20),
            Bucket::new(21, 30),
            Bucket::new(31, 100),
            Bucket::open(101),
        ])
    }

    /// Edges suited to large corpora; leaves the 31-199 range uncovered.
    pub fn large() -> Self {
        Self(vec![
            Bucket::new(0, 0),
            Bucket::new(1, 10),
            Bucket::new(11, 20),
            Bucket::new(21, 30),
            Bucket::new(200, 400),
            Bucket::new(401, 800),
        ])
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "large" => Ok(Self::large()),
            other => Err(Error::Config(format!("unknown bucket preset `{other}` (expected desk or large)"))),
        }
    }

    pub fn buckets(&self) -> &[Bucket] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, count: u64) -> Option<usize> {
        self.0.iter().position(|b| b.contains(count))
    }

    pub fn labels(&self) -> Vec<String> {
        self.0.iter().map(Bucket::to_string).collect()
    }
}

impl TryFrom<Vec<Bucket>> for BucketSet {
    type Error = Error;

    fn try_from(v: Vec<Bucket>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BucketSet> for Vec<Bucket> {
    fn from(b: BucketSet) -> Self {
        b.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup() {
        let large = BucketSet::large();
        assert_eq!(bucket_of(0, large.buckets()).unwrap(), Some(0));
        assert_eq!(large.labels()[0], "0-0");
        assert_eq!(bucket_of(15, large.buckets()).unwrap(), Some(2));
        assert_eq!(large.labels()[2], "11-20");
        assert_eq!(bucket_of(100, large.buckets()).unwrap(), None);
        assert_eq!(BucketSet::desk().index_of(5000), Some(5));
    }

    #[test]
    fn overlap_and_empty_are_rejected() {
        let e = bucket_of(3, &[Bucket::new(0, 5), Bucket::new(5, 9)]);
        assert!(matches!(e, Err(Error::Config(_))));
        assert!(bucket_of(3, &[Bucket::open(10), Bucket::new(20, 30)]).is_err());
        assert!(BucketSet::new(vec![Bucket::new(4, 2)]).is_err());
        assert!(bucket_of(3, &[Bucket::new(0, 2), Bucket::open(3)]).unwrap() == Some(1));
    }

    #[test]
    fn parse_round_trip() {
        for s in ["0-0", "31-100", "101+"] {
            assert_eq!(s.parse::<Bucket>().unwrap().to_string(), s);
        }
        assert!("x-1".parse::<Bucket>().is_err());
        assert!("5".parse::<Bucket>().is_err());
    }
}
