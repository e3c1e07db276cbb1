use proptest::prelude::*;

use super::*;
use crate::embedding::{rect_quad, CharMask, Document, GrayImage, Segment};
use crate::tensor::gradcheck::{random_tensor, GradCheck};
use crate::tensor::{Float, Graph, ParamStore, Tensor};

/// Every tag path of length `m` over `k` tags, first position slowest.
fn all_paths(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..m {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..k).map(move |t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    out
}

/// Direct path score in f64, summed left to right.
fn path_score(z: &Tensor, t: &Tensor, y: &[usize]) -> f64 {
    let k = z.shape()[1];
    let tr = |a: usize, b: usize| t.at(a, b) as f64;
    let mut s = tr(k, y[0]) + z.at(0, y[0]) as f64;
    for i in 1..y.len() {
        s += tr(y[i - 1], y[i]);
        s += z.at(i, y[i]) as f64;
    }
    s + tr(y[y.len() - 1], k + 1)
}

fn brute_partition(z: &Tensor, t: &Tensor) -> f64 {
    let (m, k) = z.dims2().unwrap();
    let scores: Vec<f64> = all_paths(m, k).iter().map(|y| path_score(z, t, y)).collect();
    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mx + scores.iter().map(|s| (s - mx).exp()).sum::<f64>().ln()
}

/// Best path; among equal scores the one that is smallest when compared
/// from the last position backwards.
fn brute_viterbi(z: &Tensor, t: &Tensor) -> Vec<usize> {
    let (m, k) = z.dims2().unwrap();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for y in all_paths(m, k) {
        let s = path_score(z, t, &y);
        let better = match &best {
            None => true,
            Some((bs, by)) => s > *bs || (s == *bs && y.iter().rev().lt(by.iter().rev())),
        };
        if better {
            best = Some((s, y));
        }
    }
    best.unwrap().1
}

fn transitions(seed: u64, k: usize) -> Tensor {
    let mut t = random_tensor(seed, 1, &[k + 2, k + 2], 2.0);
    let n = k + 2;
    for i in 0..n {
        t.data_mut()[i * n + k] = Float::NEG_INFINITY;
        t.data_mut()[(k + 1) * n + i] = Float::NEG_INFINITY;
    }
    t
}

fn integer_instance(zs: &[i8], ts: &[i8], m: usize, k: usize) -> (Tensor, Tensor) {
    let z = Tensor::new(vec![m, k], zs[..m * k].iter().map(|&v| v as Float).collect()).unwrap();
    let n = k + 2;
    let mut t = Tensor::new(vec![n, n], ts[..n * n].iter().map(|&v| v as Float).collect()).unwrap();
    for i in 0..n {
        t.data_mut()[i * n + k] = Float::NEG_INFINITY;
        t.data_mut()[(k + 1) * n + i] = Float::NEG_INFINITY;
    }
    (z, t)
}

fn loss_value(z: &Tensor, t: &Tensor, y: &[usize]) -> f64 {
    let mut g = Graph::new();
    let (zv, tv) = (g.constant(z.clone()), g.constant(t.clone()));
    let l = crf_loss(&mut g, zv, tv, y).unwrap();
    g.value(l).item() as f64
}

#[test]
fn score_examples() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::zeros(&[1, 3]));
    let t = g.constant(Tensor::zeros(&[5, 5]));
    let s = crf_score(&mut g, z, t, &[1]).unwrap();
    assert_eq!(g.value(s).item(), 0.0);

    let z_t = random_tensor(1, 0, &[1, 3], 1.0);
    let t_t = transitions(1, 3);
    let z = g.constant(z_t.clone());
    let t = g.constant(t_t.clone());
    let s = crf_score(&mut g, z, t, &[2]).unwrap();
    let expect = t_t.at(3, 2) + z_t.at(0, 2) + t_t.at(2, 4);
    assert!((g.value(s).item() - expect).abs() < 1e-6);

    assert!(matches!(
        crf_score(&mut g, z, t, &[0, 1]),
        Err(crate::tensor::TensorError::Contract(_))
    ));
}

#[test]
fn loss_single_step_uniform_is_ln2() {
    let z = Tensor::zeros(&[1, 2]);
    let t = Tensor::zeros(&[4, 4]);
    for y in 0..2 {
        assert!((loss_value(&z, &t, &[y]) - std::f64::consts::LN_2).abs() < 1e-6);
    }
}

#[test]
fn viterbi_examples() {
    let z = random_tensor(2, 0, &[5, 1], 1.0);
    assert_eq!(viterbi(&z, &transitions(2, 1)).unwrap(), vec![0; 5]);

    let z = Tensor::from_rows(&[vec![0.1, 0.9, 0.3], vec![2.0, -1.0, 0.0], vec![0.0, 0.0, 0.5]]).unwrap();
    assert_eq!(viterbi(&z, &Tensor::zeros(&[5, 5])).unwrap(), vec![1, 0, 2]);

    let tied = Tensor::zeros(&[3, 2]);
    assert_eq!(viterbi(&tied, &Tensor::zeros(&[4, 4])).unwrap(), vec![0, 0, 0]);
}

#[test]
fn score_matches_direct_sum() {
    for seed in 0..50 {
        let (m, k) = (1 + seed as usize % 6, 1 + seed as usize % 4);
        let z = random_tensor(seed, 0, &[m, k], 2.0);
        let t = transitions(seed, k);
        let y: Vec<usize> = (0..m).map(|i| (i * 7 + seed as usize) % k).collect();
        let mut g = Graph::new();
        let (zv, tv) = (g.constant(z.clone()), g.constant(t.clone()));
        let s = crf_score(&mut g, zv, tv, &y).unwrap();
        assert!((g.value(s).item() as f64 - path_score(&z, &t, &y)).abs() < 1e-5);
    }
}

#[test]
fn paths_are_normalized() {
    for seed in 0..20 {
        let (m, k) = (1 + seed as usize % 4, 1 + seed as usize % 3);
        let z = random_tensor(seed, 0, &[m, k], 2.0);
        let t = transitions(seed, k);
        let total: f64 = all_paths(m, k).iter().map(|y| (-loss_value(&z, &t, y)).exp()).sum();
        assert!((total - 1.0).abs() < 1e-5, "{total}");
    }
}

#[test]
fn strict_mask_forces_legal_paths() {
    let tags = TagSet::new(["a", "b"]);
    let k = tags.len();
    let mut t = Tensor::zeros(&[k + 2, k + 2]);
    for (v, m) in t.data_mut().iter_mut().zip(strict_mask(&tags).data()) {
        *v += m;
    }
    // Emissions alone favour I-a everywhere, which is illegal at the start.
    let mut z = Tensor::zeros(&[4, k]);
    for i in 0..4 {
        z.data_mut()[i * k + 2] = 3.0;
    }
    let path = viterbi(&z, &t).unwrap();
    assert!(tags.is_bio_legal(&path), "{path:?}");
    assert_eq!(path, vec![1, 2, 2, 2]);
}

#[test]
fn crf_loss_gradients() {
    for (seed, m, k) in [(3u64, 1, 2), (4, 3, 3), (5, 5, 4)] {
        let y: Vec<usize> = (0..m).map(|i| (i + 1) % k).collect();
        let inputs = [
            random_tensor(seed, 0, &[m, k], 1.0),
            random_tensor(seed, 1, &[k + 2, k + 2], 1.0),
        ];
        let r = GradCheck::default()
            .run(&inputs, |g, v| crf_loss(g, v[0], v[1], &y))
            .unwrap();
        assert!(r.passed(), "{r:?}");
    }
}

fn lstm_store(d: usize, h: usize, k: usize) -> ParamStore {
    let mut s = ParamStore::new();
    init_bilstm(&mut s, 3, d, h, k).unwrap();
    s
}

fn run_bilstm(s: &ParamStore, de: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let x = g.constant(de.clone());
    let z = bilstm_project(&mut g, s, x).unwrap();
    g.value(z).clone()
}

#[test]
fn bilstm_zero_weights_give_zero_emissions() {
    let mut s = lstm_store(3, 4, 5);
    let names: Vec<String> = s.names().map(String::from).collect();
    for n in names {
        let shape = s.value(&n).unwrap().shape().to_vec();
        s.set(&n, Tensor::zeros(&shape)).unwrap();
    }
    let z = run_bilstm(&s, &random_tensor(1, 0, &[6, 3], 1.0));
    assert_eq!(z, Tensor::zeros(&[6, 5]));
}

#[test]
fn bilstm_direction_swap_reverses_rows() {
    let (d, h, k, m) = (3, 4, 2, 5);
    let s = lstm_store(d, h, k);
    let mut swapped = ParamStore::new();
    for (a, b) in [("fwd", "bwd"), ("bwd", "fwd")] {
        for p in ["wx", "wh", "b"] {
            let v = s.value(&format!("lstm.{b}.{p}")).unwrap().clone();
            swapped.insert(&format!("lstm.{a}.{p}"), v).unwrap();
        }
    }
    let proj = s.value("crf.proj").unwrap();
    let mut rows: Vec<Vec<Float>> = (h..2 * h).map(|r| proj.row(r).to_vec()).collect();
    rows.extend((0..h).map(|r| proj.row(r).to_vec()));
    swapped.insert("crf.proj", Tensor::from_rows(&rows).unwrap()).unwrap();

    let de = random_tensor(2, 0, &[m, d], 1.0);
    let mut rev = Tensor::zeros(&[m, d]);
    for i in 0..m {
        rev.data_mut()[i * d..(i + 1) * d].copy_from_slice(de.row(m - 1 - i));
    }
    let z = run_bilstm(&s, &de);
    let zr = run_bilstm(&swapped, &rev);
    for i in 0..m {
        for (a, b) in z.row(i).iter().zip(zr.row(m - 1 - i)) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn bilstm_single_step_sees_same_input_both_ways() {
    let (d, h) = (3, 4);
    let mut s = lstm_store(d, h, 2);
    for p in ["wx", "wh", "b"] {
        let v = s.value(&format!("lstm.fwd.{p}")).unwrap().clone();
        s.set(&format!("lstm.bwd.{p}"), v).unwrap();
    }
    // Column j of the projection reads forward unit j minus backward unit j.
    let mut w = Tensor::zeros(&[2 * h, 2]);
    for j in 0..2 {
        w.data_mut()[j * 2 + j] = 1.0;
        w.data_mut()[(h + j) * 2 + j] = -1.0;
    }
    s.set("crf.proj", w).unwrap();
    let z = run_bilstm(&s, &random_tensor(4, 0, &[1, d], 1.0));
    assert_eq!(z, Tensor::zeros(&[1, 2]));
    let z = run_bilstm(&s, &random_tensor(4, 0, &[3, d], 1.0));
    assert_ne!(z, Tensor::zeros(&[3, 2]));
}

#[test]
fn bilstm_gradients() {
    let s = lstm_store(3, 2, 3);
    let de = random_tensor(5, 0, &[4, 3], 1.0);
    let r = GradCheck::default()
        .run_with_params(&s, &[de], |g, store, v| bilstm_project(g, store, v[0]))
        .unwrap();
    assert!(r.passed(), "{r:?}");
}

fn doc(boxes: &[(f64, f64, f64, f64)], texts: &[&str]) -> Document {
    Document {
        id: "d".into(),
        segments: boxes
            .iter()
            .zip(texts)
            .map(|(&(x0, y0, x1, y1), t)| Segment {
                text: t.to_string(),
                quad: rect_quad(x0, y0, x1, y1),
                tags: None,
            })
            .collect(),
        image: GrayImage::white(100, 100),
        page_size: (100, 100),
    }
}

#[test]
fn ordering_examples() {
    let one = doc(&[(10.0, 10.0, 40.0, 20.0)], &["abc"]);
    let m = CharMask::from_doc(&one, 4);
    let o = SeqOrder::new(&one, &m).unwrap();
    assert_eq!(o.rows, vec![0, 1, 2]);
    let mut g = Graph::new();
    let e = g.constant(random_tensor(6, 0, &[4, 2], 1.0));
    let de = order_document(&mut g, e, &o).unwrap();
    assert_eq!(g.value(de).data(), &g.value(e).data()[..6]);

    let row = doc(&[(60.0, 10.0, 90.0, 20.0), (10.0, 10.0, 40.0, 20.0)], &["ab", "c"]);
    let o = SeqOrder::new(&row, &CharMask::from_doc(&row, 3)).unwrap();
    assert_eq!(o.spans.iter().map(|s| s.segment).collect::<Vec<_>>(), vec![1, 0]);
    assert_eq!(o.rows, vec![3, 0, 1]);

    let stack = doc(&[(5.0, 50.0, 30.0, 60.0), (80.0, 10.0, 95.0, 20.0)], &["x", "y"]);
    let o = SeqOrder::new(&stack, &CharMask::from_doc(&stack, 1)).unwrap();
    assert_eq!(o.spans[0].segment, 1);
}

#[test]
fn gold_tags_follow_reading_order() {
    let mut d = doc(&[(10.0, 50.0, 40.0, 60.0), (10.0, 10.0, 40.0, 20.0)], &["ab", "c"]);
    d.segments[0].tags = Some(vec!["B-x".into(), "I-x".into()]);
    d.segments[1].tags = Some(vec!["O".into()]);
    let tags = TagSet::new(["x"]);
    let o = SeqOrder::new(&d, &CharMask::from_doc(&d, 2)).unwrap();
    assert_eq!(o.gold(&d, &tags).unwrap(), vec![0, 1, 2]);
}

#[test]
fn majority_vote_examples() {
    let tags = TagSet::new(["date", "total"]);
    let enc = |s: &[&str]| {
        tags.encode(&s.iter().map(|x| x.to_string()).collect::<Vec<_>>())
            .unwrap()
    };
    assert_eq!(
        majority_vote(&enc(&["B-date", "I-date", "O", "B-date", "I-date"]), &tags),
        "date"
    );
    assert_eq!(majority_vote(&enc(&["O", "O"]), &tags), "O");
    assert_eq!(majority_vote(&enc(&["B-total", "I-total", "I-total"]), &tags), "total");
    assert_eq!(majority_vote(&enc(&["O", "B-total"]), &tags), "total");
    assert_eq!(majority_vote(&enc(&["B-total", "B-date"]), &tags), "date");
}

fn ents(id: &str, list: &[(&str, &str)]) -> DocEntities {
    DocEntities {
        id: id.into(),
        entities: list
            .iter()
            .map(|(c, t)| Entity {
                class: c.to_string(),
                text: t.to_string(),
                segments: vec![],
            })
            .collect(),
    }
}

#[test]
fn entity_f1_examples() {
    let gold = vec![ents("a", &[("date", "01/18"), ("total", "9.50")])];
    assert_eq!(entity_f1(&gold, &gold).unwrap(), (1.0, 1.0, 1.0));
    assert_eq!(entity_f1(&[ents("a", &[])], &gold).unwrap(), (0.0, 0.0, 0.0));
    let pred = vec![ents("a", &[("date", "01/18"), ("total", "9.00")])];
    assert_eq!(entity_f1(&pred, &gold).unwrap(), (0.5, 0.5, 0.5));
    assert!(entity_f1(&[ents("zzz", &[])], &gold).is_err());
}

#[test]
fn located_matching_separates_equal_texts() {
    let mk = |seg_date: usize, seg_total: usize| DocEntities {
        id: "a".into(),
        entities: vec![
            Entity {
                class: "date".into(),
                text: "12".into(),
                segments: vec![seg_date],
            },
            Entity {
                class: "total".into(),
                text: "12".into(),
                segments: vec![seg_total],
            },
        ],
    };
    let gold = [mk(0, 1)];
    let swapped = [mk(1, 0)];
    let text = EntityScores::compute(&swapped, &gold, MatchKey::Text, None).unwrap();
    assert_eq!(text.micro.f1(), 1.0);
    let located = EntityScores::compute(&swapped, &gold, MatchKey::Located, None).unwrap();
    assert_eq!(located.micro.f1(), 0.0);
    let only_date = EntityScores::compute(&gold, &gold, MatchKey::Located, Some(&["date".to_string()])).unwrap();
    assert_eq!(only_date.micro.gold, 1);
}

#[test]
fn prediction_json_shape() {
    let mut d = doc(&[(10.0, 10.0, 40.0, 20.0), (10.0, 30.0, 40.0, 40.0)], &["ab", "c"]);
    d.id = "doc1".into();
    let tags = TagSet::new(["x"]);
    let o = SeqOrder::new(&d, &CharMask::from_doc(&d, 2)).unwrap();
    let p = DocPrediction::new(&d, &o, &[1, 2, 0], &tags);
    let v: serde_json::Value = serde_json::to_value(&p).unwrap();
    assert_eq!(v["id"], "doc1");
    assert_eq!(v["segments"][0]["tags"], serde_json::json!(["B-x", "I-x"]));
    assert_eq!(v["segments"][0]["label"], "x");
    assert_eq!(v["segments"][1]["label"], "O");
    assert_eq!(v["segments"][0]["box"][2], serde_json::json!([40.0, 20.0]));
    assert_eq!(v["entities"], serde_json::json!([{"class": "x", "text": "ab"}]));
}

proptest! {
    #[test]
    fn partition_matches_enumeration(seed in 0u64..100_000, m in 1usize..=6, k in 1usize..=4) {
        let z = random_tensor(seed, 0, &[m, k], 3.0);
        let t = transitions(seed, k);
        let b = brute_partition(&z, &t);
        let f = log_partition_f64(&z, &t).unwrap();
        prop_assert!((f - b).abs() <= 1e-5, "{f} vs {b}");
        let mut g = Graph::new();
        let (zv, tv) = (g.constant(z), g.constant(t));
        let lp = log_partition(&mut g, zv, tv).unwrap();
        let taped = g.value(lp).item() as f64;
        prop_assert!((taped - b).abs() <= 1e-5 * b.abs().max(1.0), "{taped} vs {b}");
    }

    #[test]
    fn viterbi_matches_enumeration(seed in 0u64..100_000, m in 1usize..=8, k in 1usize..=5) {
        let z = random_tensor(seed, 0, &[m, k], 3.0);
        let t = transitions(seed, k);
        prop_assert_eq!(viterbi(&z, &t).unwrap(), brute_viterbi(&z, &t));
    }

    #[test]
    fn viterbi_ties_match_enumeration(
        zs in prop::collection::vec(-1i8..=1, 40),
        ts in prop::collection::vec(-1i8..=1, 49),
        m in 1usize..=6,
        k in 1usize..=5,
    ) {
        let (z, t) = integer_instance(&zs, &ts, m, k);
        prop_assert_eq!(viterbi(&z, &t).unwrap(), brute_viterbi(&z, &t));
    }

    #[test]
    fn emission_shift_changes_nothing(seed in 0u64..100_000, m in 1usize..=6, k in 1usize..=4, c in -5.0f64..5.0) {
        let z = random_tensor(seed, 0, &[m, k], 2.0);
        let t = transitions(seed, k);
        let shifted = Tensor::new(vec![m, k], z.data().iter().map(|v| v + c as Float).collect()).unwrap();
        prop_assert_eq!(viterbi(&z, &t).unwrap(), viterbi(&shifted, &t).unwrap());
        let y: Vec<usize> = (0..m).map(|i| (i + seed as usize) % k).collect();
        let (a, b) = (loss_value(&z, &t, &y), loss_value(&shifted, &t, &y));
        prop_assert!((a - b).abs() <= 1e-4 * a.abs().max(1.0), "{a} vs {b}");
        prop_assert!(a >= -1e-5);
    }
}
