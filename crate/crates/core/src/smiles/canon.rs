//! Canonical atom ranking and SMILES writing.
//!
//! Ranks start from atom invariants (element, degree, charge, aromaticity,
//! hydrogen count, isotope) and are refined by neighbor rank multisets until
//! the partition is stable. Remaining ties are broken by splitting the
//! lowest tied class; every member of that class is tried and the
//! lexicographically smallest output string wins, so the result does not
//! depend on input atom numbering.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use super::valence::{hydrogen_counts, implicit_hydrogens};
use super::{Atom, BondOrder, BondStereo, Chirality, MolecularGraph, SmilesError};

/// Upper bound on completed tie-break branches. Past it only the first
/// candidate of each tied class is explored.
const SEARCH_BUDGET: usize = 4096;

/// Canonical SMILES for a valid graph. Components are canonicalized
/// independently and joined with "." in sorted order.
pub fn canonicalize(g: &MolecularGraph) -> Result<String, SmilesError> {
    hydrogen_counts(g)?;
    if g.atoms.is_empty() {
        return Ok(String::new());
    }
    let mut parts = Vec::new();
    for comp in g.components() {
        let (text, _) = canonical_component(&comp)?;
        parts.push(text);
    }
    parts.sort();
    Ok(parts.join("."))
}

/// Canonical rank (0 = first written) for each atom of a connected graph.
pub fn canonical_ranks(g: &MolecularGraph) -> Result<Vec<usize>, SmilesError> {
    if g.atoms.is_empty() {
        return Ok(Vec::new());
    }
    canonical_component(g).map(|(_, r)| r)
}

fn canonical_component(g: &MolecularGraph) -> Result<(String, Vec<usize>), SmilesError> {
    let hs = hydrogen_counts(g)?;
    let ctx = Context::new(g, hs);
    let mut search = Search {
        ctx: &ctx,
        best: None,
        leaves: 0,
    };
    search.explore(ctx.initial_ranks());
    let (text, ranks) = search.best.expect("at least one leaf");
    Ok((text, ranks))
}

/// Writes SMILES following the given atom priority (lower first). `order`
/// must be a permutation of `0..n`; passing `0..n` writes the graph in its
/// own numbering.
pub fn write_smiles(g: &MolecularGraph, order: &[usize]) -> Result<String, SmilesError> {
    let hs = hydrogen_counts(g)?;
    let ctx = Context::new(g, hs);
    Ok(ctx.write(order))
}

struct Context<'a> {
    g: &'a MolecularGraph,
    hs: Vec<u8>,
    adj: Vec<Vec<(usize, usize)>>,
}

struct Search<'a, 'b> {
    ctx: &'b Context<'a>,
    best: Option<(String, Vec<usize>)>,
    leaves: usize,
}

impl Search<'_, '_> {
    fn explore(&mut self, ranks: Vec<usize>) {
        let ranks = self.ctx.refine(ranks);
        match tied_class(&ranks) {
            None => {
                self.leaves += 1;
                let text = self.ctx.write(&ranks);
                let better = match &self.best {
                    Some((b, _)) => text < *b,
                    None => true,
                };
                if better {
                    self.best = Some((text, ranks));
                }
            }
            Some(r) => {
                let members: Vec<usize> = (0..ranks.len()).filter(|&i| ranks[i] == r).collect();
                for (i, &m) in members.iter().enumerate() {
                    if i > 0 && self.leaves >= SEARCH_BUDGET {
                        break;
                    }
                    self.explore(split(&ranks, m));
                }
            }
        }
    }
}

/// Lowest rank shared by two or more atoms.
fn tied_class(ranks: &[usize]) -> Option<usize> {
    let mut counts = vec![0usize; ranks.len()];
    for &r in ranks {
        counts[r] += 1;
    }
    counts.iter().position(|&c| c > 1)
}

fn split(ranks: &[usize], chosen: usize) -> Vec<usize> {
    let keys: Vec<(usize, bool)> = ranks
        .iter()
        .enumerate()
        .map(|(i, &r)| (r, i != chosen))
        .collect();
    dense_ranks(&keys)
}

fn dense_ranks<K: Ord>(keys: &[K]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0; keys.len()];
    let mut r = 0;
    for w in 0..idx.len() {
        if w > 0 && keys[idx[w]] != keys[idx[w - 1]] {
            r += 1;
        }
        ranks[idx[w]] = r;
    }
    ranks
}

fn distinct(ranks: &[usize]) -> usize {
    ranks.iter().copied().max().map_or(0, |m| m + 1)
}

impl<'a> Context<'a> {
    fn new(g: &'a MolecularGraph, hs: Vec<u8>) -> Self {
        Context {
            g,
            hs,
            adj: g.adjacency(),
        }
    }

    fn initial_ranks(&self) -> Vec<usize> {
        let keys: Vec<_> = self
            .g
            .atoms
            .iter()
            .enumerate()
            .map(|(i, a)| {
                (
                    a.element.atomic_number(),
                    self.adj[i].len(),
                    a.charge,
                    a.aromatic,
                    self.hs[i],
                    a.isotope,
                )
            })
            .collect();
        dense_ranks(&keys)
    }

    fn refine(&self, mut ranks: Vec<usize>) -> Vec<usize> {
        let mut classes = distinct(&ranks);
        loop {
            if classes == ranks.len() {
                return ranks;
            }
            let keys: Vec<(usize, Vec<(usize, u8)>)> = (0..ranks.len())
                .map(|i| {
                    let mut nb: Vec<(usize, u8)> = self.adj[i]
                        .iter()
                        .map(|&(v, b)| (ranks[v], self.g.bonds[b].order.code()))
                        .collect();
                    nb.sort_unstable();
                    (ranks[i], nb)
                })
                .collect();
            let next = dense_ranks(&keys);
            let c = distinct(&next);
            ranks = next;
            if c == classes {
                return ranks;
            }
            classes = c;
        }
    }

    fn write(&self, order: &[usize]) -> String {
        let n = self.g.atoms.len();
        let mut sorted_adj = self.adj.clone();
        for list in &mut sorted_adj {
            list.sort_by_key(|&(v, _)| order[v]);
        }
        let mut w = Writer {
            ctx: self,
            adj: sorted_adj,
            visited: vec![false; n],
            bond_done: vec![false; self.g.bonds.len()],
            children: vec![Vec::new(); n],
            ring_open: vec![Vec::new(); n],
            ring_close: vec![Vec::new(); n],
            digit_of: vec![0; self.g.bonds.len()],
            in_use: [false; 100],
            out: String::new(),
        };
        let mut starts: Vec<usize> = (0..n).collect();
        starts.sort_by_key(|&i| order[i]);
        let mut first = true;
        for s in starts {
            if w.visited[s] {
                continue;
            }
            w.discover(s, None);
            if !first {
                w.out.push('.');
            }
            first = false;
            w.emit(s);
        }
        w.out
    }
}

struct Writer<'a, 'b> {
    ctx: &'b Context<'a>,
    adj: Vec<Vec<(usize, usize)>>,
    visited: Vec<bool>,
    bond_done: Vec<bool>,
    children: Vec<Vec<(usize, usize)>>,
    ring_open: Vec<Vec<usize>>,
    ring_close: Vec<Vec<usize>>,
    digit_of: Vec<u8>,
    in_use: [bool; 100],
    out: String,
}

impl Writer<'_, '_> {
    fn discover(&mut self, u: usize, parent_bond: Option<usize>) {
        self.visited[u] = true;
        for k in 0..self.adj[u].len() {
            let (v, b) = self.adj[u][k];
            if Some(b) == parent_bond || self.bond_done[b] {
                continue;
            }
            self.bond_done[b] = true;
            if self.visited[v] {
                self.ring_open[v].push(b);
                self.ring_close[u].push(b);
            } else {
                self.children[u].push((v, b));
                self.discover(v, Some(b));
            }
        }
    }

    fn emit(&mut self, u: usize) {
        let text = atom_text(self.ctx, u);
        self.out.push_str(&text);
        let closes = core::mem::take(&mut self.ring_close[u]);
        for &b in &closes {
            push_digit(&mut self.out, self.digit_of[b]);
        }
        let opens = core::mem::take(&mut self.ring_open[u]);
        for &b in &opens {
            let d = (1..100u8)
                .find(|&d| !self.in_use[d as usize])
                .expect("fewer than 100 open rings");
            self.in_use[d as usize] = true;
            self.digit_of[b] = d;
            self.out.push_str(bond_text(self.ctx, b));
            push_digit(&mut self.out, d);
        }
        for &b in &closes {
            self.in_use[self.digit_of[b] as usize] = false;
        }
        let kids = core::mem::take(&mut self.children[u]);
        let last = kids.len().saturating_sub(1);
        for (i, &(v, b)) in kids.iter().enumerate() {
            if i < last {
                self.out.push('(');
            }
            self.out.push_str(bond_text(self.ctx, b));
            self.emit(v);
            if i < last {
                self.out.push(')');
            }
        }
    }
}

fn push_digit(out: &mut String, d: u8) {
    if d < 10 {
        out.push((b'0' + d) as char);
    } else {
        let _ = write!(out, "%{}", d);
    }
}

fn bond_text(ctx: &Context<'_>, b: usize) -> &'static str {
    let bond = &ctx.g.bonds[b];
    let both_aromatic = ctx.g.atoms[bond.a].aromatic && ctx.g.atoms[bond.b].aromatic;
    match (bond.stereo, bond.order) {
        (Some(BondStereo::Up), _) => "/",
        (Some(BondStereo::Down), _) => "\\",
        (None, BondOrder::Single) if both_aromatic => "-",
        (None, BondOrder::Single) => "",
        (None, BondOrder::Double) => "=",
        (None, BondOrder::Triple) => "#",
        (None, BondOrder::Aromatic) if both_aromatic => "",
        (None, BondOrder::Aromatic) => ":",
    }
}

fn atom_text(ctx: &Context<'_>, i: usize) -> String {
    let a: &Atom = &ctx.g.atoms[i];
    let el = a.element;
    let h = ctx.hs[i];
    let bare = el.is_organic_subset()
        && a.charge == 0
        && a.isotope.is_none()
        && a.chirality.is_none()
        && (!a.aromatic || el.is_aromatic_organic())
        && implicit_hydrogens(ctx.g, i) == Some(h);
    let mut s = String::new();
    if !bare {
        s.push('[');
        if let Some(iso) = a.isotope {
            let _ = write!(s, "{}", iso);
        }
    }
    if a.aromatic {
        for c in el.symbol().chars() {
            s.push(c.to_ascii_lowercase());
        }
    } else {
        s.push_str(el.symbol());
    }
    if bare {
        return s;
    }
    match a.chirality {
        Some(Chirality::Anticlockwise) => s.push('@'),
        Some(Chirality::Clockwise) => s.push_str("@@"),
        None => {}
    }
    if h == 1 {
        s.push('H');
    } else if h > 1 {
        let _ = write!(s, "H{}", h);
    }
    match a.charge {
        0 => {}
        1 => s.push('+'),
        -1 => s.push('-'),
        c if c > 0 => {
            let _ = write!(s, "+{}", c);
        }
        c => {
            let _ = write!(s, "-{}", -c);
        }
    }
    s.push(']');
    s
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn canon(s: &str) -> String {
        canonicalize(&parse(s).unwrap()).unwrap()
    }

    #[test]
    fn ethanol_spellings_agree() {
        let c = canon("CCO");
        assert_eq!(c, canon("OCC"));
        assert_eq!(c, canon("C(O)C"));
        assert_eq!(c, canon("[CH3][CH2][OH]"));
    }

    #[test]
    fn benzene_variants() {
        let c = canon("c1ccccc1");
        assert_eq!(c, "c1ccccc1");
        assert_eq!(canon("Oc1ccccc1"), canon("c1ccc(O)cc1"));
        assert_eq!(canon("Oc1ccccc1"), canon("c1cc(O)ccc1"));
    }

    #[test]
    fn idempotent_on_examples() {
        for s in [
            "CC(=O)O",
            "c1ccc2ccccc2c1",
            "C1CC2CCC1CC2",
            "[NH4+].[Cl-]",
            "CC(C)(C)C(=O)N[C@@H](C)c1ccncc1",
            "C%10CCCCC%10",
            "O=[N+]([O-])c1ccc(cc1)C#N",
            "[2H]C([2H])([2H])O",
            "c1ccsc1-c1ccoc1",
        ] {
            let c = canon(s);
            assert_eq!(canon(&c), c, "{s}");
        }
    }

    #[test]
    fn components_are_sorted() {
        assert_eq!(canon("O.C"), canon("C.O"));
        assert_eq!(canon("O.C"), "C.O");
    }

    #[test]
    fn brackets_only_when_needed() {
        assert_eq!(canon("[CH4]"), "C");
        assert_eq!(canon("[CH3]"), "[CH3]");
        assert_eq!(canon("[nH]1cccc1"), canon("c1cc[nH]c1"));
        assert!(canon("[nH]1cccc1").contains("[nH]"));
    }

    #[test]
    fn writer_identity_order_reparses() {
        let g = parse("CC(=O)Oc1ccccc1C(=O)O").unwrap();
        let order: Vec<usize> = (0..g.atoms.len()).collect();
        let s = write_smiles(&g, &order).unwrap();
        let h = parse(&s).unwrap();
        assert_eq!(h.atoms.len(), g.atoms.len());
        assert_eq!(h.bonds.len(), g.bonds.len());
    }

    #[test]
    fn invalid_graph_is_rejected() {
        assert_eq!(
            canonicalize(&parse("F=F").unwrap()),
            Err(SmilesError::ValenceViolation(0))
        );
    }
}
