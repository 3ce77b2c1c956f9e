use confroute_core::kb::{dot, KnowledgeIndex};
use confroute_core::records::KbEntry;
use confroute_core::rng::{self, Rng, Stream};
use proptest::prelude::*;

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_unit(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    unit((0..dim).map(|_| r.gen_range(-1.0..1.0)).collect())
}

/// Reference: score everything, sort by score descending then id.
fn exhaustive(entries: &[KbEntry], q: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = entries.iter().map(|e| (e.id.clone(), dot(&e.embedding, q))).collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn check(n: usize, dim: usize, k: usize, seed: u64, duplicate: bool) {
    let mut r = rng::stream(seed, Stream::Synthetic);
    let mut entries: Vec<KbEntry> = (0..n)
        .map(|i| KbEntry { id: format!("e{i:04}"), text: String::new(), embedding: random_unit(&mut r, dim) })
        .collect();
    if duplicate && n > 2 {
        // exact ties must break by id
        entries[n - 1].embedding = entries[0].embedding.clone();
    }
    let index = KnowledgeIndex::build(entries.clone()).unwrap();
    let q = if duplicate { entries[0].embedding.clone() } else { random_unit(&mut r, dim) };
    let got: Vec<(String, f64)> = index.top_k(&q, k).unwrap().iter().map(|h| (h.entry.id.clone(), h.score)).collect();
    assert_eq!(got, exhaustive(&entries, &q, k));
    let max = index.max_similarity(&q).unwrap();
    assert_eq!(max, got[0].1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn top_k_matches_exhaustive_sort(n in 1usize..300, dim in 1usize..24, k in 1usize..12, seed in any::<u64>(), duplicate in any::<bool>()) {
        check(n, dim, k, seed, duplicate);
    }
}

#[test]
fn top_k_matches_at_thousand_entries() {
    for seed in 0..5 {
        check(1000, 64, 5, seed, seed % 2 == 0);
        check(1000, 8, 1000, seed, false);
    }
}
