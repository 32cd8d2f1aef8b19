use alloc::vec::Vec;

use super::{BondOrder, MolecularGraph, SmilesError};

/// Implicit hydrogens an atom would carry if written without brackets, or
/// `None` when no standard valence fits its bonds.
///
/// Aromatic bonds count 1.5 each. Their total is rounded to one of two
/// Kekulé-consistent integers, `n + 1` (the atom carries one double bond) or
/// `n` (the atom donates a lone pair), whichever leaves fewer implicit
/// hydrogens; ties go to `n + 1`.
pub fn implicit_hydrogens(g: &MolecularGraph, atom: usize) -> Option<u8> {
    let valences = g.atoms[atom].element.default_valences();
    let mut explicit = 0u32;
    let mut aromatic = 0u32;
    for b in g.bonds.iter().filter(|b| b.a == atom || b.b == atom) {
        match b.order {
            BondOrder::Single => explicit += 1,
            BondOrder::Double => explicit += 2,
            BondOrder::Triple => explicit += 3,
            BondOrder::Aromatic => aromatic += 1,
        }
    }
    let fit = |sum: u32| {
        valences
            .iter()
            .find(|&&v| v as u32 >= sum)
            .map(|&v| (v as u32 - sum) as u8)
    };
    if aromatic == 0 && !g.atoms[atom].aromatic {
        return fit(explicit);
    }
    let base = explicit + aromatic;
    match (fit(base + 1), fit(base)) {
        (Some(a), Some(b)) => Some(if b < a { b } else { a }),
        (a, b) => a.or(b),
    }
}

/// Total hydrogen count per atom: as written for bracket atoms, implicit
/// otherwise.
pub fn hydrogen_counts(g: &MolecularGraph) -> Result<Vec<u8>, SmilesError> {
    (0..g.atoms.len())
        .map(|i| match g.atoms[i].explicit_h {
            Some(h) if g.atoms[i].bracket => Ok(h),
            _ => implicit_hydrogens(g, i).ok_or(SmilesError::ValenceViolation(i)),
        })
        .collect()
}

/// Checks every non-bracket atom against the standard valence table.
/// Bracket atoms are accepted as written.
pub fn check_valence(g: &MolecularGraph) -> Result<(), SmilesError> {
    hydrogen_counts(g).map(|_| ())
}
