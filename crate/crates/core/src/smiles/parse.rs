use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{Atom, Bond, BondOrder, BondStereo, Chirality, Element, MolecularGraph, SmilesError};

#[derive(Clone, Copy)]
struct BondSpec {
    order: BondOrder,
    stereo: Option<BondStereo>,
    offset: usize,
}

struct RingOpening {
    atom: usize,
    bond: Option<BondSpec>,
    offset: usize,
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
    graph: MolecularGraph,
    prev: Option<usize>,
    branches: Vec<(Option<usize>, usize)>,
    pending: Option<BondSpec>,
    rings: BTreeMap<u16, RingOpening>,
}

/// Parses a SMILES string into a molecular graph.
///
/// Lowercase atoms are flagged aromatic and bonds between two aromatic atoms
/// default to aromatic order. Stereo marks are kept on the atoms and bonds but
/// carry no further meaning.
pub fn parse(smiles: &str) -> Result<MolecularGraph, SmilesError> {
    if smiles.is_empty() {
        return Err(SmilesError::Empty);
    }
    let mut p = Parser {
        bytes: smiles.as_bytes(),
        pos: 0,
        graph: MolecularGraph::default(),
        prev: None,
        branches: Vec::new(),
        pending: None,
        rings: BTreeMap::new(),
    };
    p.run()?;
    Ok(p.graph)
}

impl Parser<'_> {
    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn run(&mut self) -> Result<(), SmilesError> {
        while let Some(c) = self.peek() {
            let at = self.pos;
            match c {
                b'(' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(SmilesError::UnexpectedCharacter(at));
                    }
                    self.branches.push((self.prev, at));
                    self.pos += 1;
                }
                b')' => {
                    if let Some(p) = self.pending {
                        return Err(SmilesError::DanglingBond(p.offset));
                    }
                    match self.branches.pop() {
                        Some((prev, _)) => self.prev = prev,
                        None => return Err(SmilesError::UnbalancedParenthesis(at)),
                    }
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if self.pending.is_some() || self.prev.is_none() {
                        return Err(SmilesError::UnexpectedCharacter(at));
                    }
                    let (order, stereo) = match c {
                        b'-' => (BondOrder::Single, None),
                        b'=' => (BondOrder::Double, None),
                        b'#' => (BondOrder::Triple, None),
                        b':' => (BondOrder::Aromatic, None),
                        b'/' => (BondOrder::Single, Some(BondStereo::Up)),
                        _ => (BondOrder::Single, Some(BondStereo::Down)),
                    };
                    self.pending = Some(BondSpec {
                        order,
                        stereo,
                        offset: at,
                    });
                    self.pos += 1;
                }
                b'.' => {
                    if let Some(b) = self.pending {
                        return Err(SmilesError::DanglingBond(b.offset));
                    }
                    if self.prev.is_none() {
                        return Err(SmilesError::UnexpectedCharacter(at));
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    self.pos += 1;
                    self.ring_bond((c - b'0') as u16, at)?;
                }
                b'%' => {
                    let digits = self.bytes.get(at + 1..at + 3);
                    match digits {
                        Some(d) if d.iter().all(u8::is_ascii_digit) => {
                            let n = ((d[0] - b'0') * 10 + (d[1] - b'0')) as u16;
                            self.pos += 3;
                            self.ring_bond(n, at)?;
                        }
                        _ => return Err(SmilesError::UnexpectedCharacter(at)),
                    }
                }
                b'[' => {
                    let atom = self.bracket_atom()?;
                    self.add_atom(atom, at)?;
                }
                _ if c.is_ascii_alphabetic() => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom, at)?;
                }
                _ => return Err(SmilesError::UnexpectedCharacter(at)),
            }
        }
        if let Some(b) = self.pending {
            return Err(SmilesError::DanglingBond(b.offset));
        }
        if let Some(&(_, at)) = self.branches.last() {
            return Err(SmilesError::UnbalancedParenthesis(at));
        }
        if let Some(open) = self.rings.values().min_by_key(|r| r.offset) {
            return Err(SmilesError::UnclosedRingBond(open.offset));
        }
        if self.prev.is_none() {
            // trailing '.'
            return Err(SmilesError::UnexpectedCharacter(self.bytes.len() - 1));
        }
        Ok(())
    }

    fn implicit_order(&self, a: usize, b: usize) -> BondOrder {
        if self.graph.atoms[a].aromatic && self.graph.atoms[b].aromatic {
            BondOrder::Aromatic
        } else {
            BondOrder::Single
        }
    }

    fn add_atom(&mut self, atom: Atom, _at: usize) -> Result<(), SmilesError> {
        let idx = self.graph.atoms.len();
        self.graph.atoms.push(atom);
        if let Some(prev) = self.prev {
            let (order, stereo) = match self.pending.take() {
                Some(spec) => (spec.order, spec.stereo),
                None => (self.implicit_order(prev, idx), None),
            };
            self.graph.bonds.push(Bond {
                a: prev,
                b: idx,
                order,
                stereo,
            });
        } else if let Some(b) = self.pending {
            return Err(SmilesError::DanglingBond(b.offset));
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_bond(&mut self, digit: u16, at: usize) -> Result<(), SmilesError> {
        let current = self.prev.ok_or(SmilesError::UnexpectedCharacter(at))?;
        let here = self.pending.take();
        match self.rings.remove(&digit) {
            None => {
                self.rings.insert(
                    digit,
                    RingOpening {
                        atom: current,
                        bond: here,
                        offset: at,
                    },
                );
            }
            Some(open) => {
                if open.atom == current {
                    return Err(SmilesError::SelfBond(at));
                }
                if self.graph.bond_between(open.atom, current).is_some() {
                    return Err(SmilesError::DuplicateBond(at));
                }
                let spec = match (open.bond, here) {
                    (Some(x), Some(y)) => {
                        if x.order != y.order {
                            return Err(SmilesError::RingBondMismatch(at));
                        }
                        Some(x)
                    }
                    (x, y) => x.or(y),
                };
                let (order, stereo) = match spec {
                    Some(s) => (s.order, s.stereo),
                    None => (self.implicit_order(open.atom, current), None),
                };
                self.graph.bonds.push(Bond {
                    a: open.atom,
                    b: current,
                    order,
                    stereo,
                });
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let at = self.pos;
        let c = self.bytes[at];
        let next = self.bytes.get(at + 1).copied();
        let (element, aromatic, len) = match (c, next) {
            (b'C', Some(b'l')) => (Element::CL, false, 2),
            (b'B', Some(b'r')) => (Element::BR, false, 2),
            (b'B', _) => (Element::B, false, 1),
            (b'C', _) => (Element::C, false, 1),
            (b'N', _) => (Element::N, false, 1),
            (b'O', _) => (Element::O, false, 1),
            (b'P', _) => (Element::P, false, 1),
            (b'S', _) => (Element::S, false, 1),
            (b'F', _) => (Element::F, false, 1),
            (b'I', _) => (Element::I, false, 1),
            (b'b', _) => (Element::B, true, 1),
            (b'c', _) => (Element::C, true, 1),
            (b'n', _) => (Element::N, true, 1),
            (b'o', _) => (Element::O, true, 1),
            (b'p', _) => (Element::P, true, 1),
            (b's', _) => (Element::S, true, 1),
            _ => return Err(SmilesError::UnknownElement(at)),
        };
        self.pos += len;
        Ok(Atom::organic(element, aromatic))
    }

    fn bracket_atom(&mut self) -> Result<Atom, SmilesError> {
        let start = self.pos;
        let malformed = SmilesError::MalformedBracketAtom(start);
        let end = self.bytes[start..]
            .iter()
            .position(|&b| b == b']')
            .map(|i| start + i)
            .ok_or(malformed.clone())?;
        let body = &self.bytes[start + 1..end];
        self.pos = end + 1;
        let mut i = 0;

        let mut isotope: Option<u16> = None;
        while i < body.len() && body[i].is_ascii_digit() {
            let v = isotope.unwrap_or(0) as u32 * 10 + (body[i] - b'0') as u32;
            if v > 999 {
                return Err(malformed);
            }
            isotope = Some(v as u16);
            i += 1;
        }

        let (element, aromatic) = match body.get(i) {
            Some(c) if c.is_ascii_uppercase() => {
                let two = body
                    .get(i + 1)
                    .filter(|n| n.is_ascii_lowercase())
                    .and_then(|&n| {
                        let s = [*c, n];
                        Element::from_symbol(core::str::from_utf8(&s).ok()?)
                    });
                match two {
                    Some(e) => {
                        i += 2;
                        (e, false)
                    }
                    None => {
                        let s = [*c];
                        let e = Element::from_symbol(core::str::from_utf8(&s).unwrap())
                            .ok_or(SmilesError::UnknownElement(start + 1 + i))?;
                        i += 1;
                        (e, false)
                    }
                }
            }
            Some(c) if c.is_ascii_lowercase() => {
                let pair = body.get(i..i + 2);
                if pair == Some(b"se") {
                    i += 2;
                    (Element::from_symbol("Se").unwrap(), true)
                } else if pair == Some(b"as") {
                    i += 2;
                    (Element::from_symbol("As").unwrap(), true)
                } else {
                    let e = match c {
                        b'b' => Element::B,
                        b'c' => Element::C,
                        b'n' => Element::N,
                        b'o' => Element::O,
                        b'p' => Element::P,
                        b's' => Element::S,
                        _ => return Err(SmilesError::UnknownElement(start + 1 + i)),
                    };
                    i += 1;
                    (e, true)
                }
            }
            _ => return Err(malformed),
        };

        let mut chirality = None;
        if body.get(i) == Some(&b'@') {
            if body.get(i + 1) == Some(&b'@') {
                chirality = Some(Chirality::Clockwise);
                i += 2;
            } else {
                chirality = Some(Chirality::Anticlockwise);
                i += 1;
            }
        }

        let mut hcount = 0u8;
        if body.get(i) == Some(&b'H') {
            i += 1;
            hcount = 1;
            if let Some(d) = body.get(i).filter(|d| d.is_ascii_digit()) {
                hcount = d - b'0';
                i += 1;
            }
        }

        let mut charge: i32 = 0;
        if let Some(&sign @ (b'+' | b'-')) = body.get(i) {
            let unit = if sign == b'+' { 1 } else { -1 };
            i += 1;
            if body.get(i).is_some_and(u8::is_ascii_digit) {
                let mut mag = 0i32;
                while let Some(d) = body.get(i).filter(|d| d.is_ascii_digit()) {
                    mag = mag * 10 + (d - b'0') as i32;
                    i += 1;
                    if mag > 15 {
                        return Err(malformed);
                    }
                }
                charge = unit * mag;
            } else {
                charge = unit;
                while body.get(i) == Some(&sign) {
                    charge += unit;
                    i += 1;
                }
            }
        }

        if body.get(i) == Some(&b':') {
            i += 1;
            let digits = body[i..].iter().take_while(|d| d.is_ascii_digit()).count();
            if digits == 0 {
                return Err(malformed);
            }
            i += digits;
        }

        if i != body.len() {
            return Err(malformed);
        }
        Ok(Atom {
            element,
            charge: charge as i8,
            aromatic,
            explicit_h: Some(hcount),
            bracket: true,
            isotope,
            chirality,
        })
    }
}
