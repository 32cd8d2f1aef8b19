use alloc::string::String;
use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    CC,
    CO,
    CN,
    CS,
    CF,
    CP,
}

pub const FAMILIES: [Family; 6] = [
    Family::CC,
    Family::CO,
    Family::CN,
    Family::CS,
    Family::CF,
    Family::CP,
];

/// Longest chain index generated per family.
pub const MAX_CHAIN: usize = 10;

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::CC => "CC",
            Family::CO => "CO",
            Family::CN => "CN",
            Family::CS => "CS",
            Family::CF => "CF",
            Family::CP => "CP",
        }
    }

    fn suffix(self) -> char {
        self.name().as_bytes()[1] as char
    }
}

/// `n` carbons followed by the family's terminal atom.
pub fn family_member(family: Family, n: usize) -> String {
    let mut s: String = core::iter::repeat_n('C', n).collect();
    s.push(family.suffix());
    s
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FamilyTriple {
    pub a: String,
    pub b: String,
    pub c: String,
    pub family: Family,
    pub n: usize,
    pub k: usize,
}

/// All 60 family members and the 120 composition triples. `c` carries the
/// carbons of `a` and `b` together: (CC, CCO) composes to CCCCO.
pub fn generate_families() -> (Vec<String>, Vec<FamilyTriple>) {
    let molecules = FAMILIES
        .iter()
        .flat_map(|&f| (1..=MAX_CHAIN).map(move |n| family_member(f, n)))
        .collect();
    let mut triples = Vec::with_capacity(120);
    for &family in &FAMILIES {
        for n in 1..=4 {
            for k in 1..=5 {
                triples.push(FamilyTriple {
                    a: family_member(Family::CC, n),
                    b: family_member(family, k),
                    c: family_member(family, n + k + 1),
                    family,
                    n,
                    k,
                });
            }
        }
    }
    (molecules, triples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn carbons(s: &str) -> usize {
        s.chars().filter(|&c| c == 'C').count()
    }

    #[test]
    fn counts_and_members() {
        let (mols, triples) = generate_families();
        assert_eq!(mols.len(), 60);
        assert_eq!(triples.len(), 120);
        assert_eq!(mols.iter().collect::<BTreeSet<_>>().len(), 60);
        assert_eq!(family_member(Family::CO, 2), "CCO");
        assert_eq!(family_member(Family::CO, 10), "CCCCCCCCCCO");
        assert_eq!(family_member(Family::CC, 1), "CC");
        for f in FAMILIES {
            assert_eq!(triples.iter().filter(|t| t.family == f).count(), 20);
        }
    }

    #[test]
    fn composition_adds_carbons() {
        let (mols, triples) = generate_families();
        let t = triples
            .iter()
            .find(|t| t.family == Family::CO && t.n == 1 && t.k == 2)
            .unwrap();
        assert_eq!(
            (t.a.as_str(), t.b.as_str(), t.c.as_str()),
            ("CC", "CCO", "CCCCO")
        );
        for t in &triples {
            assert_eq!(carbons(&t.c), carbons(&t.a) + carbons(&t.b));
            assert!(mols.contains(&t.c) && mols.contains(&t.a) && mols.contains(&t.b));
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_families(), generate_families());
    }
}
