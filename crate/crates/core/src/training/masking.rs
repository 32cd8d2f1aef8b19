use alloc::vec::Vec;

use rand::Rng;

use crate::tokenizer::{MASK, NUM_SPECIAL};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskingPolicy {
    pub select_frac: f64,
    pub mask_frac: f64,
    pub random_frac: f64,
    pub keep_frac: f64,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        MaskingPolicy {
            select_frac: 0.15,
            mask_frac: 0.8,
            random_frac: 0.1,
            keep_frac: 0.1,
        }
    }
}

impl MaskingPolicy {
    pub fn is_valid(&self) -> bool {
        let fracs = [
            self.select_frac,
            self.mask_frac,
            self.random_frac,
            self.keep_frac,
        ];
        fracs.iter().all(|f| (0.0..=1.0).contains(f))
            && (self.mask_frac + self.random_frac + self.keep_frac - 1.0).abs() < 1e-9
    }
}

/// Corrupts `ids` for masked-LM training. Returns the corrupted ids and the
/// positions selected as targets. Special ids are never selected; random
/// replacements are drawn uniformly from the non-special ids.
pub fn apply_masking<R: Rng + ?Sized>(
    ids: &[u32],
    policy: &MaskingPolicy,
    vocab_size: usize,
    rng: &mut R,
) -> (Vec<u32>, Vec<bool>) {
    let mut out = ids.to_vec();
    let mut selected = Vec::with_capacity(ids.len());
    let has_regular = vocab_size > NUM_SPECIAL as usize;
    for (slot, &id) in out.iter_mut().zip(ids) {
        let pick = id >= NUM_SPECIAL && rng.random::<f64>() < policy.select_frac;
        selected.push(pick);
        if !pick {
            continue;
        }
        let u = rng.random::<f64>();
        if u < policy.mask_frac {
            *slot = MASK;
        } else if u < policy.mask_frac + policy.random_frac && has_regular {
            *slot = rng.random_range(NUM_SPECIAL..vocab_size as u32);
        }
    }
    (out, selected)
}
