//! Molecule corpus and graph isomorphism oracle shared by property tests.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smited_core::smiles::{
    hydrogen_counts, write_smiles, Atom, Bond, BondOrder, Element, MolecularGraph,
};

pub const HAND_PICKED: [&str; 40] = [
    "CCO",
    "c1ccccc1O",
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "NCCc1ccc(O)c(O)c1",
    "c1ccc2ccccc2c1",
    "c1ccc2c(c1)ccc1ccccc12",
    "O=[N+]([O-])c1ccccc1",
    "[NH4+]",
    "[13CH4]",
    "C[N+](C)(C)C",
    "c1cc[nH]c1",
    "c1ccoc1",
    "c1ccsc1",
    "c1ccncc1",
    "C1CC1",
    "C1CCC2CCCCC2C1",
    "C12C3C4C1C5C2C3C45",
    "FC(F)(F)c1ccccc1",
    "ClC(Cl)Cl",
    "BrCCBr",
    "OC(=O)CC(O)(CC(=O)O)C(=O)O",
    "C#N",
    "CC#CC",
    "C=CC=C",
    "O=C=O",
    "CS(=O)(=O)O",
    "OP(=O)(O)O",
    "c1ccc(cc1)-c1ccccc1",
    "CC(=O)Nc1ccc(O)cc1",
    "C1COCCN1",
    "CN(C)C=O",
    "[O-]C(=O)C.[Na+]",
    "C1=CC=CC=C1",
    "OCC1OC(O)C(O)C(O)C1O",
    "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
    "N#Cc1ccccc1C#N",
    "c1ccc2[nH]ccc2c1",
    "CC(C)(C)OC(=O)N",
];

fn capacity(e: Element) -> u8 {
    match e {
        Element::C => 4,
        Element::N => 3,
        Element::O | Element::S => 2,
        _ => 1,
    }
}

/// Random connected molecule: an optional benzene core grown into a tree,
/// plus up to two ring closures, all within default valences.
pub fn random_molecule(rng: &mut ChaCha8Rng) -> MolecularGraph {
    let palette = [
        Element::C,
        Element::C,
        Element::C,
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::F,
        Element::CL,
    ];
    let mut g = MolecularGraph::default();
    let mut free: Vec<u8> = Vec::new();
    if rng.random_bool(0.35) {
        for i in 0..6 {
            g.atoms.push(Atom::organic(Element::C, true));
            free.push(1);
            g.bonds.push(Bond {
                a: i,
                b: (i + 1) % 6,
                order: BondOrder::Aromatic,
                stereo: None,
            });
        }
    } else {
        g.atoms.push(Atom::organic(Element::C, false));
        free.push(4);
    }
    let target = rng.random_range(g.atoms.len() + 1..=16);
    while g.atoms.len() < target {
        let open: Vec<usize> = (0..free.len()).filter(|&i| free[i] > 0).collect();
        let Some(&j) = open.choose(rng) else { break };
        let e = *palette.choose(rng).unwrap();
        let max = free[j].min(capacity(e)).min(3);
        let order = if max >= 2 && rng.random_bool(0.25) {
            rng.random_range(2..=max)
        } else {
            1
        };
        let i = g.atoms.len();
        g.atoms.push(Atom::organic(e, false));
        free.push(capacity(e) - order);
        free[j] -= order;
        g.bonds.push(Bond {
            a: j,
            b: i,
            order: [BondOrder::Single, BondOrder::Double, BondOrder::Triple][order as usize - 1],
            stereo: None,
        });
    }
    for _ in 0..rng.random_range(0..=2) {
        let open: Vec<usize> = (0..free.len())
            .filter(|&i| free[i] > 0 && !g.atoms[i].aromatic)
            .collect();
        if open.len() < 2 {
            break;
        }
        let (x, y) = (*open.choose(rng).unwrap(), *open.choose(rng).unwrap());
        if x == y || g.bond_between(x, y).is_some() {
            continue;
        }
        free[x] -= 1;
        free[y] -= 1;
        g.bonds.push(Bond {
            a: x,
            b: y,
            order: BondOrder::Single,
            stereo: None,
        });
    }
    g
}

/// 200 SMILES: the hand-picked set plus random molecules, each written in
/// a random atom order.
pub fn corpus() -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out: Vec<String> = HAND_PICKED.iter().map(|s| s.to_string()).collect();
    while out.len() < 200 {
        let g = random_molecule(&mut rng);
        let mut order: Vec<usize> = (0..g.atoms.len()).collect();
        order.shuffle(&mut rng);
        let s = write_smiles(&g, &order).expect("generator respects valence");
        out.push(s);
    }
    out
}

pub fn perm(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

type Label = (Element, i8, bool, Option<u16>, u8);

fn labels(g: &MolecularGraph) -> Vec<Label> {
    let hs = hydrogen_counts(g).unwrap();
    g.atoms
        .iter()
        .zip(hs)
        .map(|(a, h)| (a.element, a.charge, a.aromatic, a.isotope, h))
        .collect()
}

fn bond_matrix(g: &MolecularGraph) -> Vec<Vec<Option<BondOrder>>> {
    let n = g.atoms.len();
    let mut m = vec![vec![None; n]; n];
    for b in &g.bonds {
        m[b.a][b.b] = Some(b.order);
        m[b.b][b.a] = Some(b.order);
    }
    m
}

/// Exhaustive backtracking isomorphism on labelled atoms and bond orders.
pub fn isomorphic(x: &MolecularGraph, y: &MolecularGraph) -> bool {
    if x.atoms.len() != y.atoms.len() || x.bonds.len() != y.bonds.len() {
        return false;
    }
    let (lx, ly) = (labels(x), labels(y));
    let (mx, my) = (bond_matrix(x), bond_matrix(y));
    fn extend(
        i: usize,
        map: &mut Vec<usize>,
        used: &mut Vec<bool>,
        l: (&[Label], &[Label]),
        m: (&[Vec<Option<BondOrder>>], &[Vec<Option<BondOrder>>]),
    ) -> bool {
        if i == l.0.len() {
            return true;
        }
        for cand in 0..l.1.len() {
            if used[cand] || l.0[i] != l.1[cand] {
                continue;
            }
            if (0..i).any(|p| m.0[i][p] != m.1[cand][map[p]]) {
                continue;
            }
            map.push(cand);
            used[cand] = true;
            if extend(i + 1, map, used, l, m) {
                return true;
            }
            map.pop();
            used[cand] = false;
        }
        false
    }
    extend(
        0,
        &mut Vec::new(),
        &mut vec![false; y.atoms.len()],
        (&lx, &ly),
        (&mx, &my),
    )
}
