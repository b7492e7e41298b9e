use cotforge::metrics::{self, BleuMode, DfStats};
use cotforge_testkit::metric_oracles as oracle;
use cotforge_testkit::{random_sentence, seq};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn corpus_bleu_matches_exhaustive_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let n = rng.gen_range(1..=6);
        let hyps: Vec<_> = (0..n).map(|_| random_sentence(&mut rng, 4, 8)).collect();
        let refs: Vec<_> = (0..n).map(|_| random_sentence(&mut rng, 4, 8)).collect();
        let want = oracle::bleu_corpus(&hyps, &refs);
        let h: Vec<_> = hyps.iter().map(|s| seq(s)).collect();
        let r: Vec<_> = refs.iter().map(|s| seq(s)).collect();
        let got = metrics::bleu(&h, &r, BleuMode::Corpus).unwrap();
        for k in 0..4 {
            assert!((got[k] - want[k]).abs() <= 1e-12, "order {}: {} vs {}", k + 1, got[k], want[k]);
        }
    }
}

#[test]
fn lcs_matches_subsequence_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let a = random_sentence(&mut rng, 3, 8);
        let b = random_sentence(&mut rng, 3, 8);
        assert_eq!(metrics::lcs_len(&a, &b), oracle::lcs_exhaustive(&a, &b));
        let got = metrics::rouge_l(&seq(&a), &seq(&b));
        assert!((got - oracle::rouge_l(&a, &b)).abs() <= 1e-12);
    }
}

#[test]
fn meteor_matches_alignment_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..500 {
        let a = random_sentence(&mut rng, 3, 6);
        let b = random_sentence(&mut rng, 3, 6);
        let al = metrics::align(&seq(&a), &seq(&b));
        assert_eq!((al.matches, al.chunks), oracle::meteor_alignment(&a, &b), "{a:?} / {b:?}");
        let got = metrics::meteor_exact(&seq(&a), &seq(&b));
        assert!((got - oracle::meteor(&a, &b)).abs() <= 1e-12);
        assert!((0.0..=1.0).contains(&got));
    }
}

#[test]
fn cider_matches_dense_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..300 {
        let n = rng.gen_range(2..=4);
        let hyps: Vec<_> = (0..n).map(|_| random_sentence(&mut rng, 5, 7)).collect();
        let refs: Vec<_> = (0..n).map(|_| random_sentence(&mut rng, 5, 7)).collect();
        let h: Vec<_> = hyps.iter().map(|s| seq(s)).collect();
        let r: Vec<_> = refs.iter().map(|s| seq(s)).collect();
        let df = DfStats::from_references(&r);
        let got = metrics::cider(&h, &r, &df).unwrap();
        assert!((got - oracle::cider(&hyps, &refs)).abs() <= 1e-10);
    }
}

#[test]
fn corpus_metrics_are_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..100 {
        let n = rng.gen_range(2..=6);
        let mut pairs: Vec<_> = (0..n)
            .map(|_| (seq(&random_sentence(&mut rng, 4, 8)), seq(&random_sentence(&mut rng, 4, 8))))
            .collect();
        let score = |p: &[(cotforge::corpus::TokenSequence, cotforge::corpus::TokenSequence)]| {
            let h: Vec<_> = p.iter().map(|x| x.0.clone()).collect();
            let r: Vec<_> = p.iter().map(|x| x.1.clone()).collect();
            let df = DfStats::from_references(&r);
            (metrics::bleu(&h, &r, BleuMode::Corpus).unwrap(), metrics::cider(&h, &r, &df).unwrap())
        };
        let before = score(&pairs);
        pairs.reverse();
        let after = score(&pairs);
        for k in 0..4 {
            assert!((before.0[k] - after.0[k]).abs() < 1e-12);
        }
        assert!((before.1 - after.1).abs() < 1e-12);
    }
}

#[test]
fn auc_matches_pair_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for _ in 0..300 {
        let n = rng.gen_range(2..=12);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        // coarse scores so ties occur
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..5)) / 4.0).collect();
        let got = metrics::auc(&labels, &scores).unwrap();
        assert!((got - oracle::auc_pairs(&labels, &scores)).abs() < 1e-12);
    }
}

#[test]
fn iou_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let mut b = || {
            let x: f64 = rng.gen_range(0.0..5.0);
            let y: f64 = rng.gen_range(0.0..5.0);
            metrics::BBox::new(x, y, x + rng.gen_range(0.1..3.0), y + rng.gen_range(0.1..3.0)).unwrap()
        };
        let (p, q) = (b(), b());
        assert_eq!(metrics::iou(&p, &q), metrics::iou(&q, &p));
        assert!((metrics::iou(&p, &p) - 1.0).abs() < 1e-15);
    }
}
