//! SMILES parsing, validation, canonicalization, fingerprints and scaffolds.
//!
//! Everything here is a pure function of its inputs. The parsed form is a
//! [`MolecularGraph`]: a flat list of atoms and bonds. Multi-component input
//! ("." separated) produces one graph; [`MolecularGraph::components`] splits it.

mod canon;
mod element;
mod fingerprint;
mod parse;
mod scaffold;
mod valence;

use alloc::vec;
use alloc::vec::Vec;

pub use canon::{canonical_ranks, canonicalize, write_smiles};
pub use element::Element;
pub use fingerprint::{fingerprint, tanimoto, Fingerprint, DEFAULT_FP_WIDTH, MAX_PATH_BONDS};
pub use parse::parse;
pub use scaffold::{ring_bonds, scaffold};
pub use valence::{check_valence, hydrogen_counts, implicit_hydrogens};

/// Tetrahedral chirality marker, kept verbatim.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Chirality {
    /// `@`
    Anticlockwise,
    /// `@@`
    Clockwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BondStereo {
    /// `/`
    Up,
    /// `\`
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Integer code used by ranking and path labels.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            BondOrder::Single => '-',
            BondOrder::Double => '=',
            BondOrder::Triple => '#',
            BondOrder::Aromatic => ':',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub charge: i8,
    pub aromatic: bool,
    /// Hydrogen count written inside brackets; unset for organic-subset atoms.
    pub explicit_h: Option<u8>,
    pub bracket: bool,
    pub isotope: Option<u16>,
    pub chirality: Option<Chirality>,
}

impl Atom {
    /// A bare organic-subset atom.
    pub fn organic(element: Element, aromatic: bool) -> Atom {
        Atom {
            element,
            charge: 0,
            aromatic,
            explicit_h: None,
            bracket: false,
            isotope: None,
            chirality: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub stereo: Option<BondStereo>,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct MolecularGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
}

/// Errors from parsing and validation. Offsets are byte offsets into the input.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SmilesError {
    #[error("empty SMILES")]
    Empty,
    #[error("unbalanced parenthesis at byte {0}")]
    UnbalancedParenthesis(usize),
    #[error("ring bond opened at byte {0} is never closed")]
    UnclosedRingBond(usize),
    #[error("unknown element at byte {0}")]
    UnknownElement(usize),
    #[error("malformed bracket atom at byte {0}")]
    MalformedBracketAtom(usize),
    #[error("unexpected character at byte {0}")]
    UnexpectedCharacter(usize),
    #[error("bond symbol at byte {0} is not followed by an atom")]
    DanglingBond(usize),
    #[error("ring closure at byte {0} conflicts with its opening bond")]
    RingBondMismatch(usize),
    #[error("ring closure at byte {0} duplicates an existing bond")]
    DuplicateBond(usize),
    #[error("ring closure at byte {0} bonds an atom to itself")]
    SelfBond(usize),
    #[error("valence violation at atom {0}")]
    ValenceViolation(usize),
    #[error("fingerprint widths differ ({0} vs {1})")]
    WidthMismatch(usize, usize),
}

impl MolecularGraph {
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Per-atom list of `(neighbor, bond index)`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for (i, b) in self.bonds.iter().enumerate() {
            adj[b.a].push((b.b, i));
            adj[b.b].push((b.a, i));
        }
        adj
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.bonds
            .iter()
            .filter(|b| b.a == atom || b.b == atom)
            .count()
    }

    pub fn bond_between(&self, x: usize, y: usize) -> Option<&Bond> {
        self.bonds
            .iter()
            .find(|b| (b.a == x && b.b == y) || (b.a == y && b.b == x))
    }

    /// Component label per atom; labels are numbered in order of first atom.
    pub fn component_labels(&self) -> (usize, Vec<usize>) {
        let adj = self.adjacency();
        let mut label = vec![usize::MAX; self.atoms.len()];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..self.atoms.len() {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &(v, _) in &adj[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        (next, label)
    }

    /// Splits into connected components, preserving relative atom order.
    pub fn components(&self) -> Vec<MolecularGraph> {
        let (count, label) = self.component_labels();
        if count <= 1 {
            return vec![self.clone()];
        }
        let mut keep = vec![false; self.atoms.len()];
        (0..count)
            .map(|c| {
                for (k, l) in keep.iter_mut().zip(&label) {
                    *k = *l == c;
                }
                self.induced(&keep)
            })
            .collect()
    }

    /// Subgraph on the atoms flagged in `keep`.
    pub fn induced(&self, keep: &[bool]) -> MolecularGraph {
        let mut map = vec![usize::MAX; self.atoms.len()];
        let mut atoms = Vec::new();
        for (i, a) in self.atoms.iter().enumerate() {
            if keep[i] {
                map[i] = atoms.len();
                atoms.push(a.clone());
            }
        }
        let bonds = self
            .bonds
            .iter()
            .filter(|b| keep[b.a] && keep[b.b])
            .map(|b| Bond {
                a: map[b.a],
                b: map[b.b],
                ..b.clone()
            })
            .collect();
        MolecularGraph { atoms, bonds }
    }

    /// Renumbers atoms: atom `i` moves to position `perm[i]`. Bond list order
    /// follows the new numbering.
    pub fn renumbered(&self, perm: &[usize]) -> MolecularGraph {
        assert_eq!(perm.len(), self.atoms.len());
        let mut atoms = vec![None; self.atoms.len()];
        for (i, a) in self.atoms.iter().enumerate() {
            atoms[perm[i]] = Some(a.clone());
        }
        let mut bonds: Vec<Bond> = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                ..b.clone()
            })
            .collect();
        bonds.sort_by_key(|b| (b.a.min(b.b), b.a.max(b.b)));
        MolecularGraph {
            atoms: atoms.into_iter().map(|a| a.expect("permutation")).collect(),
            bonds,
        }
    }
}
