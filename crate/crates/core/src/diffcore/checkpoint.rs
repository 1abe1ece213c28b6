//! Plain-text container for parameters and other training state.
//!
//! ```text
//! EBMSSL-CKPT v1
//! body.l0.w 2 32 2
//! 1.2345678901234567e-1 -4.0000000000000000e0 ...
//! noise.bigram 2 17 16
//! 3 0 12 ...
//! ```
//!
//! Real entries are written with 17 significant digits, which round-trips
//! every `f64` exactly. Integer entries (counts, RNG positions) are written
//! as plain decimal integers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ParamStore, RealArray};
use crate::error::{Error, Result};

pub const MAGIC: &str = "EBMSSL-CKPT v1";

#[derive(Clone, Debug, PartialEq)]
pub enum Entry {
    Real(RealArray),
    Count { shape: Vec<usize>, data: Vec<u64> },
}

impl Entry {
    pub fn counts(data: Vec<u64>) -> Self {
        Entry::Count {
            shape: vec![data.len()],
            data,
        }
    }
}

/// Ordered list of named entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    entries: Vec<(String, Entry)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(store: &ParamStore) -> Self {
        let mut ck = Self::new();
        for (name, p) in store.iter() {
            ck.push(name, Entry::Real(p.value.clone()));
        }
        ck
    }

    pub fn push(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.push((name.into(), entry));
    }

    pub fn push_real(&mut self, name: impl Into<String>, value: RealArray) {
        self.push(name, Entry::Real(value));
    }

    pub fn push_counts(&mut self, name: impl Into<String>, data: Vec<u64>) {
        self.push(name, Entry::counts(data));
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn real(&self, name: &str) -> Result<&RealArray> {
        match self.get(name) {
            Some(Entry::Real(a)) => Ok(a),
            _ => Err(Error::Unbound(name.to_string())),
        }
    }

    pub fn counts(&self, name: &str) -> Result<&[u64]> {
        match self.get(name) {
            Some(Entry::Count { data, .. }) => Ok(data),
            _ => Err(Error::Unbound(name.to_string())),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Entry)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    /// Real entries whose names start with `prefix`, with the prefix removed.
    pub fn params_with_prefix(&self, prefix: &str) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, e) in self.entries() {
            if let (Some(rest), Entry::Real(a)) = (name.strip_prefix(prefix), e) {
                store.insert(rest, a.clone())?;
            }
        }
        Ok(store)
    }

    /// All real entries as a parameter store.
    pub fn to_params(&self) -> Result<ParamStore> {
        self.params_with_prefix("")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (name, entry) in &self.entries {
            let shape = match entry {
                Entry::Real(a) => a.shape(),
                Entry::Count { shape, .. } => shape.as_slice(),
            };
            let _ = write!(out, "{name} {}", shape.len());
            for d in shape {
                let _ = write!(out, " {d}");
            }
            out.push('\n');
            match entry {
                Entry::Real(a) => {
                    for (i, v) in a.data().iter().enumerate() {
                        if i > 0 {
                            out.push(' ');
                        }
                        let _ = write!(out, "{v:.16e}");
                    }
                }
                Entry::Count { data, .. } => {
                    for (i, v) in data.iter().enumerate() {
                        if i > 0 {
                            out.push(' ');
                        }
                        let _ = write!(out, "{v}");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Checkpoint {
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l.trim_end() == MAGIC => {}
            _ => return Err(err(1, "missing `EBMSSL-CKPT v1` header")),
        }
        let mut ck = Checkpoint::new();
        while let Some((ln, header)) = lines.next() {
            if header.trim().is_empty() {
                continue;
            }
            let mut parts = header.split_whitespace();
            let name = parts.next().ok_or_else(|| err(ln, "missing name"))?;
            let ndims: usize = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err(ln, "bad dimension count"))?;
            let shape: Vec<usize> = parts
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err(ln, "bad dimension"))?;
            if shape.len() != ndims {
                return Err(err(ln, "dimension count does not match shape"));
            }
            let expected: usize = shape.iter().product();
            let (vln, values) = lines.next().ok_or_else(|| err(ln + 1, "missing value line"))?;
            let tokens: Vec<&str> = values.split_whitespace().collect();
            if tokens.len() != expected {
                return Err(err(vln, &format!("expected {expected} values, found {}", tokens.len())));
            }
            let integral = tokens
                .iter()
                .all(|t| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit()));
            let entry = if integral {
                let data = tokens
                    .iter()
                    .map(|t| t.parse::<u64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| err(vln, "bad integer"))?;
                Entry::Count { shape, data }
            } else {
                let data = tokens
                    .iter()
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| err(vln, "bad number"))?;
                let arr = RealArray::new(shape, data).map_err(|e| err(vln, &e.to_string()))?;
                Entry::Real(arr)
            };
            if ck.get(name).is_some() {
                return Err(err(ln, &format!("duplicate entry `{name}`")));
            }
            ck.push(name, entry);
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_text())?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn corrupted_files_are_errors() {
        assert!(Checkpoint::parse("").is_err());
        assert!(Checkpoint::parse("EBMSSL-CKPT v2\n").is_err());
        assert!(Checkpoint::parse("EBMSSL-CKPT v1\nw 1 3\n1.0 2.0\n").is_err());
        assert!(Checkpoint::parse("EBMSSL-CKPT v1\nw 2 3\n1.0 2.0 3.0\n").is_err());
        assert!(Checkpoint::parse("EBMSSL-CKPT v1\nw 1 2\n1.0 nan\n").is_err());
        assert!(Checkpoint::parse("EBMSSL-CKPT v1\nw 1 2\n").is_err());
        assert!(Checkpoint::parse("EBMSSL-CKPT v1\nw 1 1\n1.5\nw 1 1\n1.5\n").is_err());
    }

    #[test]
    fn scalar_and_count_entries() {
        let mut ck = Checkpoint::new();
        ck.push_real("c", RealArray::scalar(-0.5));
        ck.push_counts("n", vec![0, 7, u64::MAX]);
        let text = ck.to_text();
        assert!(text.starts_with("EBMSSL-CKPT v1\nc 0\n"));
        let back = Checkpoint::parse(&text).unwrap();
        assert_eq!(back, ck);
    }

    proptest! {
        #[test]
        fn real_entries_round_trip_bit_exactly(
            values in prop::collection::vec(
                prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO,
                1..40,
            )
        ) {
            let mut store = ParamStore::new();
            let n = values.len();
            store.insert("a.w", RealArray::vector(values.clone()).unwrap()).unwrap();
            store.insert("b", RealArray::new(vec![1, n], values).unwrap()).unwrap();
            let text = Checkpoint::from_params(&store).to_text();
            let back = Checkpoint::parse(&text).unwrap().to_params().unwrap();
            for (name, p) in store.iter() {
                let q = back.value(name).unwrap();
                prop_assert_eq!(p.value.shape(), q.shape());
                for (a, b) in p.value.data().iter().zip(q.data()) {
                    prop_assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }
}
