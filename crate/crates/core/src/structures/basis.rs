use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::elements;
use crate::{Error, Result};

/// Orbital shells per element: an ordered list of angular momenta `l`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BasisSpec {
    shells: BTreeMap<u32, Vec<usize>>,
}

impl BasisSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, z: u32, shells: &[usize]) -> Self {
        self.shells.insert(z, shells.to_vec());
        self
    }

    pub fn insert(&mut self, z: u32, shells: Vec<usize>) {
        self.shells.insert(z, shells);
    }

    pub fn shells(&self, z: u32) -> Result<&[usize]> {
        self.shells
            .get(&z)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownSpecies(z))
    }

    pub fn species(&self) -> impl Iterator<Item = u32> + '_ {
        self.shells.keys().copied()
    }

    pub fn max_l(&self) -> usize {
        self.shells.values().flatten().copied().max().unwrap_or(0)
    }

    /// Orbitals on one atom of species `z`: Σ (2l + 1) over its shells.
    pub fn n_orb(&self, z: u32) -> Result<usize> {
        Ok(self.shells(z)?.iter().map(|l| 2 * l + 1).sum())
    }

    /// Offset of each shell's first orbital within the atom's orbital block.
    pub fn shell_offsets(&self, z: u32) -> Result<Vec<usize>> {
        let mut off = 0;
        Ok(self
            .shells(z)?
            .iter()
            .map(|l| {
                let o = off;
                off += 2 * l + 1;
                o
            })
            .collect())
    }

    /// Total matrix dimension for a list of atomic numbers.
    pub fn total_orbitals(&self, species: &[u32]) -> Result<usize> {
        species.iter().map(|&z| self.n_orb(z)).sum()
    }

    /// Parse `Symbol = l l l ...` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = BasisSpec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Parse {
                path: "<basis>".into(),
                line: k + 1,
                msg,
            };
            let (sym, rest) = line
                .split_once(['=', ':'])
                .ok_or_else(|| bad(format!("expected `Symbol = l ...`, found {line:?}")))?;
            let z = elements::atomic_number(sym.trim())
                .ok_or_else(|| bad(format!("unknown element {:?}", sym.trim())))?;
            let shells: Vec<usize> = rest
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse().map_err(|_| bad(format!("bad shell degree {t:?}"))))
                .collect::<Result<_>>()?;
            if shells.is_empty() {
                return Err(bad(format!("element {} has no shells", sym.trim())));
            }
            spec.insert(z, shells);
        }
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.as_ref().to_path_buf(),
                line,
                msg,
            },
            other => other,
        })
    }

    pub fn to_config_string(&self) -> String {
        self.shells
            .iter()
            .map(|(&z, ls)| {
                let ls: Vec<String> = ls.iter().map(|l| l.to_string()).collect();
                format!("{} = {}\n", elements::symbol(z).unwrap_or("X"), ls.join(" "))
            })
            .collect()
    }
}
