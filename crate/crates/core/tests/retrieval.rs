use mvembed_core::retrieval::{
    cosine_distance, load_embeddings, save_embeddings, write_ranked_csv, Embedding, EmbeddingIndex,
};
use proptest::prelude::*;

fn corpus(vectors: Vec<Vec<f32>>) -> Vec<Embedding> {
    vectors
        .into_iter()
        .enumerate()
        .map(|(i, v)| Embedding::new(format!("m{i:03}"), format!("c{}", i % 3), v))
        .collect()
}

/// Recomputes every distance in plain f64 and sorts by (distance, id).
fn oracle(items: &[Embedding], q: usize) -> Vec<(String, f64)> {
    let qv: Vec<f64> = items[q].vector.iter().map(|&x| x as f64).collect();
    let mut out: Vec<(String, f64)> = items
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != q)
        .map(|(_, e)| {
            let v: Vec<f64> = e.vector.iter().map(|&x| x as f64).collect();
            let dot: f64 = qv.iter().zip(&v).map(|(a, b)| a * b).sum();
            let nq = qv.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let d = if nq == 0.0 || nv == 0.0 {
                1.0
            } else {
                (1.0 - dot / (nq * nv)).clamp(0.0, 2.0)
            };
            (e.model_id.clone(), d)
        })
        .collect();
    out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    out
}

fn vectors() -> impl Strategy<Value = Vec<Vec<f32>>> {
    prop::collection::vec(prop::collection::vec(-3.0f32..3.0, 8), 2..30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rank_all_matches_brute_force(v in vectors()) {
        let items = corpus(v);
        let index = EmbeddingIndex::new(items.clone()).unwrap();
        for q in 0..items.len() {
            let got = index.rank_all(&items[q].model_id).unwrap();
            let want = oracle(&items, q);
            prop_assert_eq!(got.entries.len(), items.len() - 1);
            for ((gi, gd), (wi, wd)) in got.entries.iter().zip(&want) {
                prop_assert!((gd - wd).abs() < 1e-12);
                prop_assert_eq!(gi, wi);
            }
        }
    }

    #[test]
    fn ranking_ignores_positive_scale(v in vectors(), s in prop::sample::select(vec![0.5f32, 2.0, 4.0, 0.25])) {
        let items = corpus(v);
        let scaled: Vec<Embedding> = items
            .iter()
            .map(|e| Embedding::new(e.model_id.clone(), e.label.clone(), e.vector.iter().map(|x| x * s).collect()))
            .collect();
        let (a, b) = (EmbeddingIndex::new(items.clone()).unwrap(), EmbeddingIndex::new(scaled).unwrap());
        for e in &items {
            let ids = |i: &EmbeddingIndex| -> Vec<String> {
                i.rank_all(&e.model_id).unwrap().entries.into_iter().map(|(id, _)| id).collect()
            };
            prop_assert_eq!(ids(&a), ids(&b));
        }
    }

    #[test]
    fn distance_is_symmetric_and_bounded(u in prop::collection::vec(-5.0f32..5.0, 6), v in prop::collection::vec(-5.0f32..5.0, 6)) {
        let d = cosine_distance(&u, &v);
        prop_assert!((0.0..=2.0).contains(&d));
        prop_assert_eq!(d, cosine_distance(&v, &u));
    }
}

#[test]
fn query_is_excluded_and_ties_break_by_id() {
    let items = corpus(vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0], vec![0.0, 1.0]]);
    let index = EmbeddingIndex::new(items).unwrap();
    let r = index.rank_all("m000").unwrap();
    let ids: Vec<&str> = r.entries.iter().map(|(i, _)| i.as_str()).collect();
    assert_eq!(ids, ["m001", "m002", "m003"]);
}

#[test]
fn files_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let items = corpus(vec![vec![0.5, -1.0, 2.0], vec![1.0, 1.0, 1.0], vec![-0.25, 0.0, 3.0]]);
    let path = tmp.path().join("e.mvem");
    save_embeddings(&items, &path).unwrap();
    assert_eq!(load_embeddings(&path).unwrap(), items);
    assert!(load_embeddings(&tmp.path().join("missing.mvem")).is_err());

    let index = EmbeddingIndex::new(items).unwrap();
    let lists: Vec<_> = ["m000", "m001"].iter().map(|q| index.rank_all(q).unwrap()).collect();
    let mut buf = Vec::new();
    write_ranked_csv(&lists, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "query_id,rank,item_id,distance");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].starts_with("m000,1,"));
}
