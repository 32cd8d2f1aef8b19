use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::{MolecularGraph, SmilesError};

pub const DEFAULT_FP_WIDTH: usize = 2048;
/// Longest path enumerated, in bonds.
pub const MAX_PATH_BONDS: usize = 7;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Fixed-width bit set of hashed path labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    width: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn empty(width: usize) -> Fingerprint {
        assert!(width > 0, "fingerprint width must be positive");
        Fingerprint {
            width,
            words: vec![0; width.div_ceil(64)],
        }
    }

    pub fn from_bits(width: usize, bits: impl IntoIterator<Item = usize>) -> Fingerprint {
        let mut fp = Fingerprint::empty(width);
        for b in bits {
            fp.set(b);
        }
        fp
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn set(&mut self, bit: usize) {
        assert!(bit < self.width);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.width && self.words[bit / 64] & (1 << (bit % 64)) != 0
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(|&b| self.get(b))
    }
}

/// Hashes every simple path of 0..=7 bonds into a `width`-bit set.
///
/// A path label alternates atom symbols (lowercase when aromatic) and bond
/// symbols; the lexicographically smaller of the two reading directions is
/// hashed with 64-bit FNV-1a, so the result does not depend on atom order.
pub fn fingerprint(g: &MolecularGraph, width: usize) -> Fingerprint {
    let mut fp = Fingerprint::empty(width);
    let adj = g.adjacency();
    let labels: Vec<String> = g
        .atoms
        .iter()
        .map(|a| {
            if a.aromatic {
                a.element.symbol().to_ascii_lowercase()
            } else {
                String::from(a.element.symbol())
            }
        })
        .collect();
    let mut path_atoms = Vec::with_capacity(MAX_PATH_BONDS + 1);
    let mut path_bonds = Vec::with_capacity(MAX_PATH_BONDS);
    let mut on_path = vec![false; g.atoms.len()];
    for start in 0..g.atoms.len() {
        path_atoms.push(start);
        on_path[start] = true;
        walk(
            g,
            &adj,
            &labels,
            &mut path_atoms,
            &mut path_bonds,
            &mut on_path,
            &mut fp,
        );
        on_path[start] = false;
        path_atoms.pop();
    }
    fp
}

fn walk(
    g: &MolecularGraph,
    adj: &[Vec<(usize, usize)>],
    labels: &[String],
    atoms: &mut Vec<usize>,
    bonds: &mut Vec<usize>,
    on_path: &mut [bool],
    fp: &mut Fingerprint,
) {
    record(g, labels, atoms, bonds, fp);
    if bonds.len() == MAX_PATH_BONDS {
        return;
    }
    let tail = *atoms.last().unwrap();
    for &(v, b) in &adj[tail] {
        if on_path[v] {
            continue;
        }
        on_path[v] = true;
        atoms.push(v);
        bonds.push(b);
        walk(g, adj, labels, atoms, bonds, on_path, fp);
        bonds.pop();
        atoms.pop();
        on_path[v] = false;
    }
}

fn record(
    g: &MolecularGraph,
    labels: &[String],
    atoms: &[usize],
    bonds: &[usize],
    fp: &mut Fingerprint,
) {
    let build = |rev: bool| {
        let mut s = String::new();
        let n = atoms.len();
        for k in 0..n {
            let ai = if rev { atoms[n - 1 - k] } else { atoms[k] };
            if k > 0 {
                let bi = if rev { bonds[n - 1 - k] } else { bonds[k - 1] };
                s.push(g.bonds[bi].order.symbol());
            }
            s.push_str(&labels[ai]);
        }
        s
    };
    let fwd = build(false);
    let rev = build(true);
    let label = if rev < fwd { rev } else { fwd };
    let bit = (fnv1a(label.as_bytes()) % fp.width as u64) as usize;
    fp.set(bit);
}

/// |a ∧ b| / |a ∨ b|, and 1.0 when both sets are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, SmilesError> {
    if a.width != b.width {
        return Err(SmilesError::WidthMismatch(a.width, b.width));
    }
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    if either == 0 {
        return Ok(1.0);
    }
    Ok(both as f64 / either as f64)
}
