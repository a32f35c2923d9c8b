//! Study statistics against brute-force enumeration and null simulations.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use synthrad::turing::{
    analyze_study, build_quartets, fleiss_kappa, holm_adjust, identification_accuracy, wilcoxon_signed_rank,
    AgreementTable, Quartet, ResponseRecord, TestMethod,
};

fn pools(n: usize) -> Vec<Vec<String>> {
    ["r", "a", "b", "c"].iter().map(|p| (0..n).map(|i| format!("{p}{i}")).collect()).collect()
}

fn quartets(n: usize, seed: u64) -> Vec<Quartet> {
    let p = pools(n);
    build_quartets(&p[0], [&p[1], &p[2], &p[3]], n, seed).unwrap()
}

/// Two-sided p by listing all 2^n sign vectors of ranks 1..n.
fn brute_force_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        le += (s <= w + 1e-9) as u64;
        ge += (s >= w - 1e-9) as u64;
    }
    let total = (1u64 << n) as f64;
    (2.0 * (le as f64 / total).min(ge as f64 / total)).min(1.0)
}

proptest! {
    #[test]
    fn exact_p_matches_enumeration(mags in prop::collection::btree_set(1u32..1000, 1..=10), signs in prop::collection::vec(any::<bool>(), 10)) {
        let d: Vec<f64> = mags.iter().zip(&signs).map(|(&m, &s)| if s { m as f64 } else { -(m as f64) }).collect();
        let zeros = vec![0.0; d.len()];
        let r = wilcoxon_signed_rank(&d, &zeros).unwrap();
        prop_assert_eq!(r.method, TestMethod::Exact);
        let ranks: Vec<f64> = (1..=d.len()).map(|x| x as f64).collect();
        prop_assert_eq!(r.p_two_sided, brute_force_p(&ranks, r.statistic));
        prop_assert!(r.p_two_sided > 0.0 && r.p_two_sided <= 1.0);
        prop_assert!(r.statistic <= (d.len() * (d.len() + 1) / 2) as f64);
    }

    #[test]
    fn holm_is_monotone_and_dominating(ps in prop::collection::vec(1e-6f64..=1.0, 1..12)) {
        let adj = holm_adjust(&ps).unwrap();
        let mut idx: Vec<usize> = (0..ps.len()).collect();
        idx.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]));
        for w in idx.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]]);
        }
        for (a, p) in adj.iter().zip(&ps) {
            prop_assert!(a >= p && *a <= 1.0);
        }
    }

    #[test]
    fn kappa_invariances(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<usize>> = (0..12)
            .map(|_| {
                let mut row = vec![0usize; 4];
                for _ in 0..5 {
                    row[rng.random_range(0..4)] += 1;
                }
                row
            })
            .collect();
        let base = fleiss_kappa(&AgreementTable::new(rows.clone()).unwrap()).unwrap();
        let mut perm = [0usize, 1, 2, 3];
        perm.shuffle(&mut rng);
        let relabeled: Vec<Vec<usize>> = rows.iter().map(|r| perm.iter().map(|&j| r[j]).collect()).collect();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut rng);
        for t in [relabeled, shuffled] {
            prop_assert!((fleiss_kappa(&AgreementTable::new(t).unwrap()).unwrap() - base).abs() < 1e-12);
        }
    }
}

#[test]
fn tied_differences_use_the_tie_corrected_normal_approximation() {
    // d = (1, 1, 2, -3): |d| ranks 1.5, 1.5, 3, 4; W = 6; one tie group of 2.
    let r = wilcoxon_signed_rank(&[1.0, 1.0, 2.0, -3.0], &[0.0; 4]).unwrap();
    assert_eq!(r.method, TestMethod::NormalApprox);
    assert_eq!(r.statistic, 6.0);
    let var: f64 = 4.0 * 5.0 * 9.0 / 24.0 - 6.0 / 48.0;
    let z = (6.0 - 5.0 - 0.5) / var.sqrt();
    let norm = statrs::distribution::Normal::standard();
    let expected = 2.0 * (1.0 - norm.cdf(z));
    assert!((r.p_two_sided - expected).abs() < 1e-12);
}

#[test]
fn real_slot_is_uniform() {
    let q = quartets(10_000, 42);
    let mut counts = [0f64; 4];
    for x in &q {
        counts[x.hidden_truth as usize - 1] += 1.0;
    }
    let chi2: f64 = counts.iter().map(|c| (c - 2500.0).powi(2) / 2500.0).sum();
    let p = 1.0 - ChiSquared::new(3.0).unwrap().cdf(chi2);
    assert!(p > 0.001, "chi2 {chi2} p {p}");
    for c in counts {
        assert!((c / 10_000.0 - 0.25).abs() < 0.02);
    }
}

fn random_responses(qs: &[Quartet], raters: usize, rng: &mut ChaCha8Rng) -> Vec<ResponseRecord> {
    (0..raters)
        .flat_map(|r| {
            qs.iter()
                .map(|q| ResponseRecord {
                    rater_id: format!("rater{r}"),
                    quartet_id: q.quartet_id.clone(),
                    chosen_slot: rng.random_range(1..=4),
                    ratings: [(); 4].map(|_| rng.random_range(1..=4)),
                    timestamp: String::new(),
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

#[test]
fn chance_raters_score_a_quarter() {
    let qs = quartets(50, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let reps = 1000;
    let mean = (0..reps)
        .map(|_| identification_accuracy(&random_responses(&qs, 8, &mut rng), &qs).unwrap())
        .sum::<f64>()
        / reps as f64;
    assert!((mean - 0.25).abs() < 0.01, "{mean}");
}

#[test]
fn accuracy_ignores_response_order() {
    let qs = quartets(50, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rs = random_responses(&qs, 8, &mut rng);
    let a = identification_accuracy(&rs, &qs).unwrap();
    rs.shuffle(&mut rng);
    assert_eq!(a, identification_accuracy(&rs, &qs).unwrap());
}

#[test]
fn null_study_looks_null() {
    let qs = quartets(50, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let reps = 200;
    let (mut acc, mut kappa, mut small_p) = (0.0, 0.0, 0usize);
    for _ in 0..reps {
        let report = analyze_study(&random_responses(&qs, 8, &mut rng), &qs).unwrap();
        assert_eq!(report.tests.len(), 3);
        for t in &report.tests {
            assert!(t.p_holm >= t.test.p_two_sided);
            small_p += (t.test.p_two_sided < 0.05) as usize;
        }
        acc += report.accuracy;
        kappa += report.kappa.unwrap();
    }
    assert!((acc / reps as f64 - 0.25).abs() < 0.01);
    assert!((kappa / reps as f64).abs() < 0.01);
    // Rejections at 5% stay near or below nominal rate under the null.
    assert!((small_p as f64) / (3 * reps) as f64 <= 0.08, "{small_p}");
}
