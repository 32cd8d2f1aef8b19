mod common;

use common::{corpus, isomorphic, perm, HAND_PICKED};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smited_core::curation::{canonical_form, curate};
use smited_core::smiles::{canonicalize, check_valence, parse, write_smiles};

#[test]
fn corpus_is_valid_and_sized() {
    let c = corpus();
    assert_eq!(c.len(), 200);
    for s in &c {
        check_valence(&parse(s).unwrap()).unwrap_or_else(|e| panic!("{s}: {e}"));
    }
}

#[test]
fn canonical_form_is_idempotent() {
    for s in corpus() {
        let c = canonicalize(&parse(&s).unwrap()).unwrap();
        let again = canonicalize(&parse(&c).unwrap()).unwrap();
        assert_eq!(c, again, "input {s}");
    }
}

#[test]
fn canonical_form_ignores_atom_numbering() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for s in corpus() {
        let g = parse(&s).unwrap();
        let c = canonicalize(&g).unwrap();
        for _ in 0..50 {
            let p = perm(g.atoms.len(), &mut rng);
            assert_eq!(canonicalize(&g.renumbered(&p)).unwrap(), c, "input {s}");
        }
        // the same holds when the renumbering goes through text
        let order = perm(g.atoms.len(), &mut rng);
        let text = write_smiles(&g, &order).unwrap();
        assert_eq!(
            canonicalize(&parse(&text).unwrap()).unwrap(),
            c,
            "{s} as {text}"
        );
    }
}

#[test]
fn canonical_text_parses_to_an_isomorphic_graph() {
    let mut checked = 0;
    for s in corpus() {
        let g = parse(&s).unwrap();
        if g.atoms.len() > 16 {
            continue;
        }
        let back = parse(&canonicalize(&g).unwrap()).unwrap();
        assert!(isomorphic(&g, &back), "{s}");
        checked += 1;
    }
    assert!(checked >= 150);
}

#[test]
fn isomorphism_oracle_discriminates() {
    let p = |s: &str| parse(s).unwrap();
    assert!(isomorphic(&p("OCC"), &p("CCO")));
    assert!(!isomorphic(&p("CCO"), &p("COC")));
    assert!(!isomorphic(&p("C=CC"), &p("CCC")));
    assert!(!isomorphic(&p("C1CCCCC1"), &p("c1ccccc1")));
}

fn line_pool() -> Vec<String> {
    let mut pool: Vec<String> = HAND_PICKED.iter().take(12).map(|s| s.to_string()).collect();
    // alternative spellings of pool members
    pool.extend(["OCC", "Oc1ccccc1", "C1=CC=CC=N1", "C(C)O"].map(String::from));
    // malformed
    pool.extend(["C(", "C1CC", "[Zz]", "c1cc", "CC)", "=C"].map(String::from));
    // valence failures
    pool.extend(["C(C)(C)(C)(C)C", "O=O=O", "FF(F)F"].map(String::from));
    pool.extend(["", "   "].map(String::from));
    pool
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn curation_conserves_lines(picks in proptest::collection::vec(0usize..31, 0..120)) {
        let pool = line_pool();
        let lines: Vec<&str> = picks.iter().map(|&i| pool[i % pool.len()].as_str()).collect();
        let mut out = Vec::new();
        let report = curate(&lines, |s| {
            out.push(s.to_string());
            Ok::<(), ()>(())
        })
        .unwrap();
        let counted = lines.iter().filter(|l| !l.trim().is_empty()).count() as u64;
        prop_assert_eq!(report.input_count, counted);
        prop_assert!(report.is_conserved());
        prop_assert_eq!(report.output_count as usize, out.len());
        let mut sorted = out.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), out.len());
        for s in &out {
            prop_assert_eq!(canonical_form(s).unwrap(), s.clone());
        }
    }
}
