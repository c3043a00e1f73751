#![allow(dead_code)]

use ecg_core::{build_row_partition, CsrMatrix, DistMatrix, Topology};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random symmetric, strictly diagonally dominant matrix with a scattered
/// sparsity pattern (hence SPD).
pub fn random_spd(n: usize, seed: u64) -> CsrMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_row = rng.gen_range(1..=4usize);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut triplets = Vec::new();
    let mut diag = vec![1.0f64; n];
    for i in 0..n {
        for _ in 0..per_row {
            // mostly local couplings plus some long-range ones
            let j = if rng.gen_bool(0.7) {
                let w = rng.gen_range(1..=8usize);
                (i + w) % n
            } else {
                rng.gen_range(0..n)
            };
            if j == i {
                continue;
            }
            let v: f64 = rng.gen_range(-1.0..1.0);
            let (a, b) = (perm[i], perm[j]);
            triplets.push((a, b, v));
            triplets.push((b, a, v));
            diag[a] += v.abs();
            diag[b] += v.abs();
        }
    }
    triplets.extend(diag.iter().enumerate().map(|(i, &d)| (i, i, d)));
    CsrMatrix::from_triplets(n, n, triplets).expect("valid triplets")
}

#[derive(Debug, Clone, Copy)]
pub struct Instance {
    pub seed: u64,
    pub n: usize,
    pub p: usize,
    pub ppn: usize,
    pub t: usize,
}

impl Instance {
    pub fn matrix(&self) -> CsrMatrix {
        random_spd(self.n, self.seed)
    }

    pub fn distribute(&self, a: &CsrMatrix) -> DistMatrix {
        let part = build_row_partition(self.n, self.p).unwrap();
        DistMatrix::new(a, &part, Topology::new(self.p, self.ppn).unwrap()).unwrap()
    }
}

/// Seeded corpus covering every (p, ppn, t) combination several times.
pub fn corpus(count: usize) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let (ps, ppns, ts) = ([2, 4, 8, 16], [1, 2, 4], [1, 2, 5, 20]);
    (0..count)
        .map(|k| {
            let p = ps[k % 4];
            let ppn = ppns[(k / 4) % 3];
            let t = ts[(k / 12) % 4];
            Instance {
                seed: rng.gen(),
                n: rng.gen_range(p.max(16)..=200),
                p,
                ppn,
                t,
            }
        })
        .collect()
}

