//! Properties of relevance paths read off routing outcomes.

use capsx::explain::relevance_path;
use capsx::model::{route, NormAxis};
use capsx::tensor::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn axis(over_children: bool) -> NormAxis {
    if over_children {
        NormAxis::OverChildren
    } else {
        NormAxis::OverParents
    }
}

/// `aligned` children vote `dir` for `target`; every other vote is a random
/// unit vector.
fn aligned_votes(rng: &mut ChaCha8Rng, aligned: usize, random: usize, m: usize, r: usize, target: usize) -> Tensor {
    let dir = unit(rng, r);
    let n = aligned + random;
    let mut data = Vec::with_capacity(n * m * r);
    for i in 0..n {
        for j in 0..m {
            data.extend(if i < aligned && j == target { dir.clone() } else { unit(rng, r) });
        }
    }
    Tensor::new(vec![n, m, r], data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// Relabelling the children permutes the path and nothing else.
    #[test]
    fn relevance_is_permutation_equivariant(seed in any::<u64>(), n in 2usize..10, m in 1usize..4, r in 1usize..5, over_children in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let votes: Vec<f64> = (0..n * m * r).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        // Child p of the permuted problem is child perm[p] of the original.
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| votes[i * m * r..(i + 1) * m * r].to_vec()).collect();
        let a = Tensor::new(vec![n, m, r], votes).unwrap();
        let b = Tensor::new(vec![n, m, r], permuted).unwrap();
        let (ra, rb) = (route(&a, 3, axis(over_children)).unwrap(), route(&b, 3, axis(over_children)).unwrap());
        for class in 0..m {
            let pa = relevance_path(&a, &ra, None, class, n).unwrap();
            let pb = relevance_path(&b, &rb, None, class, n).unwrap();
            let score = |p: &capsx::explain::RelevancePath, id: usize| p.entries.iter().find(|e| e.id == id).unwrap().score;
            for (p, &i) in perm.iter().enumerate() {
                prop_assert!((score(&pa, i) - score(&pb, p)).abs() <= 1e-12 * (1.0 + score(&pa, i).abs()));
            }
            prop_assert!((pa.blocks[0].score - pb.blocks[0].score).abs() <= 1e-12 * (1.0 + pa.blocks[0].score.abs()));
        }
    }

    // Aligned children are generated in the regime where they dominate the
    // weighted sum: `k` random unit votes add up to a vector of length about
    // `√k`, so a few aligned children among many random ones carry no signal.

    /// Agreeing children draw more coupling to their parent than random ones.
    #[test]
    fn agreement_concentrates_coupling(seed in any::<u64>(), aligned in 6usize..10, extra in 1usize..3, m in 2usize..5) {
        let random = aligned * extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = rng.gen_range(0..m);
        let votes = aligned_votes(&mut rng, aligned, random, m, 8, target);
        let out = route(&votes, 3, NormAxis::OverParents).unwrap();
        let c = out.coupling();
        let mean = |ids: std::ops::Range<usize>| {
            let len = ids.len() as f64;
            ids.map(|i| c.coupling(i, target)).sum::<f64>() / len
        };
        prop_assert!(mean(0..aligned) > mean(aligned..aligned + random));
        // Couplings start uniform, so the first iteration carries no preference.
        let first = &out.history[0];
        prop_assert!((first.coupling(0, target) - 1.0 / m as f64).abs() < 1e-15);
    }

    /// The relevance path ranks aligned children above random ones for the
    /// class they agree on.
    #[test]
    fn relevance_ranks_aligned_children_first(seed in any::<u64>(), aligned in 6usize..10, extra in 1usize..3, m in 2usize..5) {
        let random = aligned * extra;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = rng.gen_range(0..m);
        let votes = aligned_votes(&mut rng, aligned, random, m, 16, target);
        let out = route(&votes, 3, NormAxis::OverParents).unwrap();
        let path = relevance_path(&votes, &out, None, target, aligned).unwrap();
        let hits = path.entries.iter().filter(|e| e.id < aligned).count();
        prop_assert!(path.entries[0].id < aligned, "top entry {} is random", path.entries[0].id);
        prop_assert!(hits * 5 >= aligned * 4, "{hits} of the top {aligned} are aligned");
    }
}
