use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::harmonics::cg_transform;
use crate::structures::BasisSpec;
use crate::{Error, Result};

/// Identifies the sub-matrix `H_ij` between atom `i` in the home cell and
/// atom `j` shifted by `image` lattice vectors. On-site blocks are
/// `(i, i, [0, 0, 0])`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockKey {
    pub i: usize,
    pub j: usize,
    pub image: [i32; 3],
}

impl BlockKey {
    pub fn onsite(i: usize) -> Self {
        BlockKey { i, j: i, image: [0; 3] }
    }

    pub fn is_onsite(&self) -> bool {
        self.i == self.j && self.image == [0; 3]
    }

    /// Key of the transposed block `H_ji`.
    pub fn transposed(&self) -> Self {
        BlockKey {
            i: self.j,
            j: self.i,
            image: [-self.image[0], -self.image[1], -self.image[2]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisMode {
    /// Per shell pair, the Clebsch-Gordan components `L = |l_a−l_b| ..= l_a+l_b`.
    Coupled,
    /// Plain orbital-orbital matrix elements, row-major.
    Uncoupled,
}

/// Dense block. In uncoupled mode `data` is the `rows × cols` row-major
/// matrix; in coupled mode it holds the same number of values laid out as
/// shell pairs (row-major over shells) each followed by its coupled blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Block {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Block {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }
}

/// Uncoupled block of species pair `(zs, zd)` → coupled layout.
pub fn block_to_coupled(basis: &BasisSpec, zs: u32, zd: u32, block: &[f64]) -> Result<Vec<f64>> {
    convert(basis, zs, zd, block, true)
}

/// Coupled layout → uncoupled block of species pair `(zs, zd)`.
pub fn block_to_uncoupled(basis: &BasisSpec, zs: u32, zd: u32, coupled: &[f64]) -> Result<Vec<f64>> {
    convert(basis, zs, zd, coupled, false)
}

fn convert(basis: &BasisSpec, zs: u32, zd: u32, input: &[f64], forward: bool) -> Result<Vec<f64>> {
    let (sa, sb) = (basis.shells(zs)?, basis.shells(zd)?);
    let (oa, ob) = (basis.shell_offsets(zs)?, basis.shell_offsets(zd)?);
    let rows = basis.n_orb(zs)?;
    let cols = basis.n_orb(zd)?;
    if input.len() != rows * cols {
        return Err(Error::Shape(format!(
            "block for Z=({zs},{zd}) needs {} values, got {}",
            rows * cols,
            input.len()
        )));
    }
    let mut out = vec![0.0; rows * cols];
    let mut seg = 0;
    for (a, &la) in sa.iter().enumerate() {
        for (b, &lb) in sb.iter().enumerate() {
            let (na, nb) = (2 * la + 1, 2 * lb + 1);
            let t = cg_transform(la, lb);
            if forward {
                let mut sub = Vec::with_capacity(na * nb);
                for r in 0..na {
                    let start = (oa[a] + r) * cols + ob[b];
                    sub.extend_from_slice(&input[start..start + nb]);
                }
                out[seg..seg + na * nb].copy_from_slice(&t.to_coupled(&sub)?);
            } else {
                let sub = t.to_uncoupled(&input[seg..seg + na * nb])?;
                for r in 0..na {
                    let start = (oa[a] + r) * cols + ob[b];
                    out[start..start + nb].copy_from_slice(&sub[r * nb..(r + 1) * nb]);
                }
            }
            seg += na * nb;
        }
    }
    Ok(out)
}

/// Block-sparse Hamiltonian keyed by `(i, j, image)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    pub basis: BasisSpec,
    pub mode: BasisMode,
    pub species: Vec<u32>,
    pub blocks: BTreeMap<BlockKey, Block>,
}

impl BlockMatrix {
    pub fn new(basis: BasisSpec, mode: BasisMode, species: Vec<u32>) -> Self {
        BlockMatrix {
            basis,
            mode,
            species,
            blocks: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    fn species_of(&self, atom: usize) -> Result<u32> {
        self.species
            .get(atom)
            .copied()
            .ok_or_else(|| Error::Invalid(format!("atom {atom} out of range ({} atoms)", self.species.len())))
    }

    /// Expected `(rows, cols)` of a block.
    pub fn block_shape(&self, key: &BlockKey) -> Result<(usize, usize)> {
        Ok((
            self.basis.n_orb(self.species_of(key.i)?)?,
            self.basis.n_orb(self.species_of(key.j)?)?,
        ))
    }

    pub fn insert(&mut self, key: BlockKey, block: Block) -> Result<()> {
        let (r, c) = self.block_shape(&key)?;
        if block.rows != r || block.cols != c || block.data.len() != r * c {
            return Err(Error::Shape(format!(
                "block {key:?} is {}×{} ({} values), expected {r}×{c}",
                block.rows,
                block.cols,
                block.data.len()
            )));
        }
        self.blocks.insert(key, block);
        Ok(())
    }

    pub fn get(&self, key: &BlockKey) -> Option<&Block> {
        self.blocks.get(key)
    }

    fn converted(&self, to: BasisMode) -> Result<BlockMatrix> {
        if self.mode == to {
            return Ok(self.clone());
        }
        let mut out = BlockMatrix::new(self.basis.clone(), to, self.species.clone());
        for (key, b) in &self.blocks {
            let (zs, zd) = (self.species_of(key.i)?, self.species_of(key.j)?);
            let data = match to {
                BasisMode::Coupled => block_to_coupled(&self.basis, zs, zd, &b.data)?,
                BasisMode::Uncoupled => block_to_uncoupled(&self.basis, zs, zd, &b.data)?,
            };
            out.insert(*key, Block { rows: b.rows, cols: b.cols, data })?;
        }
        Ok(out)
    }

    pub fn to_coupled(&self) -> Result<BlockMatrix> {
        self.converted(BasisMode::Coupled)
    }

    /// Dimension of the assembled matrix: Σ over atoms of `n_orb(Z)`.
    pub fn matrix_dimension(&self) -> Result<usize> {
        self.basis.total_orbitals(&self.species)
    }

    /// Γ-point dense matrix: blocks of all periodic images summed into their
    /// home-cell position. Uncoupled mode only.
    pub fn assemble_dense(&self) -> Result<Vec<f64>> {
        if self.mode != BasisMode::Uncoupled {
            return Err(Error::Invalid("dense assembly needs uncoupled blocks".into()));
        }
        let n = self.matrix_dimension()?;
        let mut offsets = Vec::with_capacity(self.species.len());
        let mut off = 0;
        for &z in &self.species {
            offsets.push(off);
            off += self.basis.n_orb(z)?;
        }
        let mut dense = vec![0.0; n * n];
        for (key, b) in &self.blocks {
            for r in 0..b.rows {
                let row = offsets[key.i] + r;
                for c in 0..b.cols {
                    dense[row * n + offsets[key.j] + c] += b.data[r * b.cols + c];
                }
            }
        }
        Ok(dense)
    }

    /// Replace every block pair `H_ij`, `H_ji` by their symmetric average
    /// (blocks without a partner are left as they are). Uncoupled mode only.
    pub fn symmetrized(&self) -> Result<BlockMatrix> {
        if self.mode != BasisMode::Uncoupled {
            return Err(Error::Invalid("symmetrization needs uncoupled blocks".into()));
        }
        let mut out = self.clone();
        for (key, b) in &self.blocks {
            let Some(t) = self.blocks.get(&key.transposed()) else {
                continue;
            };
            let dst = out.blocks.get_mut(key).expect("same keys");
            for r in 0..b.rows {
                for c in 0..b.cols {
                    dst.data[r * b.cols + c] = 0.5 * (b.data[r * b.cols + c] + t.data[c * t.cols + r]);
                }
            }
        }
        Ok(out)
    }

    /// Largest absolute difference over the common keys, and the number of
    /// keys present in only one of the two.
    pub fn max_abs_diff(&self, other: &BlockMatrix) -> (f64, usize) {
        let mut worst = 0.0f64;
        let mut unmatched = 0;
        for (key, a) in &self.blocks {
            match other.blocks.get(key) {
                Some(b) => {
                    for (x, y) in a.data.iter().zip(&b.data) {
                        worst = worst.max((x - y).abs());
                    }
                }
                None => unmatched += 1,
            }
        }
        unmatched += other.blocks.keys().filter(|k| !self.blocks.contains_key(k)).count();
        (worst, unmatched)
    }

    /// Text format: optional `# mode` header, then one block per line as
    /// `i j ix iy iz rows cols v0 v1 ...`.
    pub fn to_text(&self) -> String {
        let mode = match self.mode {
            BasisMode::Coupled => "coupled",
            BasisMode::Uncoupled => "uncoupled",
        };
        let mut out = format!("# blocks {mode}\n");
        for (k, b) in &self.blocks {
            let _ = write!(
                out,
                "{} {} {} {} {} {} {}",
                k.i, k.j, k.image[0], k.image[1], k.image[2], b.rows, b.cols
            );
            for v in &b.data {
                let _ = write!(out, " {v:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_text(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Parse the text format. Blocks default to uncoupled unless the header
    /// says otherwise.
    pub fn parse_text(text: &str, origin: &Path, basis: &BasisSpec, species: &[u32]) -> Result<Self> {
        let mut out = BlockMatrix::new(basis.clone(), BasisMode::Uncoupled, species.to_vec());
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(rest) = line.strip_prefix('#') {
                let words: Vec<_> = rest.split_whitespace().collect();
                if words.first() == Some(&"blocks") {
                    out.mode = match words.get(1) {
                        Some(&"coupled") => BasisMode::Coupled,
                        Some(&"uncoupled") => BasisMode::Uncoupled,
                        other => return Err(err(n + 1, format!("unknown block mode {other:?}"))),
                    };
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<_> = line.split_whitespace().collect();
            if fields.len() < 7 {
                return Err(err(n + 1, "expected `i j ix iy iz rows cols values...`".into()));
            }
            let int = |s: &str| s.parse::<i64>().map_err(|e| err(n + 1, format!("bad integer {s:?}: {e}")));
            let (i, j) = (int(fields[0])?, int(fields[1])?);
            if i < 0 || j < 0 {
                return Err(err(n + 1, "negative atom index".into()));
            }
            let image = [int(fields[2])? as i32, int(fields[3])? as i32, int(fields[4])? as i32];
            let (rows, cols) = (int(fields[5])? as usize, int(fields[6])? as usize);
            let data = fields[7..]
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| err(n + 1, format!("bad value {s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if data.len() != rows * cols {
                return Err(err(n + 1, format!("{rows}×{cols} block with {} values", data.len())));
            }
            let key = BlockKey { i: i as usize, j: j as usize, image };
            out.insert(key, Block { rows, cols, data })
                .map_err(|e| err(n + 1, e.to_string()))?;
        }
        Ok(out)
    }

    pub fn read_text(path: impl AsRef<Path>, basis: &BasisSpec, species: &[u32]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::parse_text(&text, path, basis, species)
    }
}

/// Apply the inverse coupling transform to every block of a coupled matrix.
pub fn reconstruct_uncoupled(pred: &BlockMatrix) -> Result<BlockMatrix> {
    if pred.mode != BasisMode::Coupled {
        return Err(Error::Invalid("expected a coupled-basis block matrix".into()));
    }
    pred.converted(BasisMode::Uncoupled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis() -> BasisSpec {
        BasisSpec::new().with(8, &[0, 1]).with(72, &[0, 0, 1, 2])
    }

    fn random_matrix(rng: &mut ChaCha8Rng) -> BlockMatrix {
        let mut m = BlockMatrix::new(basis(), BasisMode::Uncoupled, vec![72, 8, 8]);
        for key in [
            BlockKey::onsite(0),
            BlockKey::onsite(1),
            BlockKey { i: 0, j: 1, image: [0, 0, 0] },
            BlockKey { i: 1, j: 0, image: [0, 0, 0] },
            BlockKey { i: 2, j: 1, image: [1, 0, -1] },
        ] {
            let (r, c) = m.block_shape(&key).unwrap();
            let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
            m.insert(key, Block { rows: r, cols: c, data }).unwrap();
        }
        m
    }

    #[test]
    fn coupled_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_matrix(&mut rng);
        let c = m.to_coupled().unwrap();
        assert_eq!(c.mode, BasisMode::Coupled);
        let back = reconstruct_uncoupled(&c).unwrap();
        let (d, unmatched) = back.max_abs_diff(&m);
        assert!(d < 1e-12);
        assert_eq!(unmatched, 0);
        assert!(reconstruct_uncoupled(&m).is_err());
    }

    #[test]
    fn zero_blocks_stay_zero() {
        let mut m = BlockMatrix::new(basis(), BasisMode::Coupled, vec![72]);
        m.insert(BlockKey::onsite(0), Block::zeros(10, 10)).unwrap();
        let u = reconstruct_uncoupled(&m).unwrap();
        assert!(u.blocks[&BlockKey::onsite(0)].data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_checked_on_insert() {
        let mut m = BlockMatrix::new(basis(), BasisMode::Uncoupled, vec![72, 8]);
        assert!(m.insert(BlockKey { i: 0, j: 1, image: [0; 3] }, Block::zeros(10, 10)).is_err());
        assert!(m.insert(BlockKey { i: 0, j: 1, image: [0; 3] }, Block::zeros(10, 4)).is_ok());
        assert!(m.insert(BlockKey { i: 5, j: 1, image: [0; 3] }, Block::zeros(10, 4)).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_matrix(&mut rng);
        let txt = m.to_text();
        let back = BlockMatrix::parse_text(&txt, Path::new("t"), &basis(), &[72, 8, 8]).unwrap();
        assert_eq!(back, m);
        let bad = "0 0 0 0 0 10 10 1.0\n";
        match BlockMatrix::parse_text(bad, Path::new("t"), &basis(), &[72]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dense_assembly_and_symmetrization() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_matrix(&mut rng);
        assert_eq!(m.matrix_dimension().unwrap(), 18);
        let s = m.symmetrized().unwrap();
        let a = &s.blocks[&BlockKey { i: 0, j: 1, image: [0; 3] }];
        let b = &s.blocks[&BlockKey { i: 1, j: 0, image: [0; 3] }];
        for r in 0..a.rows {
            for c in 0..a.cols {
                assert!((a.data[r * a.cols + c] - b.data[c * b.cols + r]).abs() < 1e-15);
            }
        }
        let dense = s.assemble_dense().unwrap();
        assert_eq!(dense.len(), 18 * 18);
        // on-site block of atom 0 is symmetric after symmetrization
        for r in 0..10 {
            for c in 0..10 {
                assert!((dense[r * 18 + c] - dense[c * 18 + r]).abs() < 1e-15);
            }
        }
    }
}
