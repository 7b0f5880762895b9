use super::*;
use crate::numerics::Prng;
use crate::testutil::{toy_model, toy_vocab};

const TEXT: &str = "a b c . d e a . b says c .";

fn models() -> (SummarizerModel, BackwardModel) {
    (
        toy_model(6, 1),
        BackwardModel::new(toy_vocab(), 4, 2).unwrap(),
    )
}

fn kinds(s: &Session) -> Vec<EventKind> {
    s.history().iter().map(|e| e.kind).collect()
}

#[test]
fn new_session_selects_everything() {
    let s = Session::new("s1", TEXT).unwrap();
    assert_eq!(s.selection, BTreeSet::from([0, 1, 2]));
    assert_eq!(kinds(&s), vec![EventKind::Create]);
    assert!(s.coverage.is_none() && s.aggregated().is_none());
    assert!(Session::new("s2", "   ").is_err());
}

#[test]
fn selection_complement_is_deselected() {
    let mut s = Session::new("s", TEXT).unwrap();
    s.set_selection(&[0, 1]).unwrap();
    let selected = s.selected_positions();
    let deselected: Vec<usize> = (0..s.document.len())
        .filter(|p| !selected.contains(p))
        .collect();
    let (a, b) = s.document.sentence_spans[2];
    assert_eq!(deselected, (a..b).collect::<Vec<_>>());
    s.set_selection(&[]).unwrap();
    assert!(s.selected_positions().is_empty());
}

#[test]
fn repeated_selection_is_idempotent_but_logged() {
    let mut s = Session::new("s", TEXT).unwrap();
    s.set_selection(&[2, 0]).unwrap();
    let first = s.selection.clone();
    s.set_selection(&[0, 2]).unwrap();
    assert_eq!(s.selection, first);
    assert_eq!(
        kinds(&s),
        vec![EventKind::Create, EventKind::Select, EventKind::Select]
    );
}

#[test]
fn invalid_selection_leaves_session_unchanged() {
    let mut s = Session::new("s", TEXT).unwrap();
    let before = s.clone();
    assert!(matches!(
        s.set_selection(&[0, 3]),
        Err(SessionError::InvalidIndex { index: 3, .. })
    ));
    assert_eq!(s, before);
}

#[test]
fn templates() {
    let (fwd, bwd) = models();
    let mut s = Session::new("s", TEXT).unwrap();
    s.select_template(Template::All).unwrap();
    s.select_template(Template::None).unwrap();
    assert!(s.selection.is_empty());
    assert!(matches!(
        s.select_template(Template::Match),
        Err(SessionError::NoBackwardResult)
    ));
    s.select_template(Template::All).unwrap();
    s.run_forward(&fwd, &bwd, &ForwardRequest::init_with(1))
        .unwrap();
    s.select_template(Template::Match).unwrap();
    let covered: BTreeSet<usize> = s
        .coverage
        .as_ref()
        .unwrap()
        .covered_sentences
        .iter()
        .copied()
        .collect();
    assert_eq!(s.selection, covered);
    s.select_template(Template::Match).unwrap();
    assert_eq!(s.selection, covered);
}

#[test]
fn init_with_then_add_sentence() {
    let (fwd, bwd) = models();
    let mut s = Session::new("s", TEXT).unwrap();
    s.run_forward(&fwd, &bwd, &ForwardRequest::init_with(2))
        .unwrap();
    assert_eq!(s.summary().len(), 2);
    assert!(s.summary().iter().all(|x| x.origin() == Origin::Model));
    assert!(s.coverage.is_some());
    let before: Vec<SummarySentence> = s.summary().to_vec();
    s.run_forward(&fwd, &bwd, &ForwardRequest::add_sentence())
        .unwrap();
    assert_eq!(s.summary().len(), 3);
    assert_eq!(&s.summary()[..2], before.as_slice());
    let k = kinds(&s);
    assert_eq!(
        &k[1..],
        &[
            EventKind::Forward,
            EventKind::Backward,
            EventKind::Forward,
            EventKind::Backward
        ]
    );
}

#[test]
fn aggregated_columns_count_output_tokens() {
    let (fwd, bwd) = models();
    let mut s = Session::new("s", TEXT).unwrap();
    s.run_forward(&fwd, &bwd, &ForwardRequest::init_with(3))
        .unwrap();
    let m = s.aggregated().unwrap();
    assert_eq!(m.len(), 3);
    for (o, sentence) in s.summary().iter().enumerate() {
        let col: f64 = m.iter().map(|row| row[o]).sum();
        assert!((col - sentence.len() as f64).abs() < 1e-9);
    }
}

#[test]
fn deleting_only_sentence_leaves_empty_summary_with_warning() {
    let (fwd, bwd) = models();
    let mut s = Session::new("s", TEXT).unwrap();
    s.run_forward(&fwd, &bwd, &ForwardRequest::init_with(1))
        .unwrap();
    s.delete_sentence(0, &bwd).unwrap();
    assert!(s.summary().is_empty());
    assert!(s.coverage.as_ref().unwrap().warning.is_some());
    assert_eq!(&kinds(&s)[3..], &[EventKind::Delete, EventKind::Backward]);
    assert!(s.aggregated().is_none());
    assert!(matches!(
        s.delete_sentence(0, &bwd),
        Err(SessionError::InvalidIndex { .. })
    ));
}

#[test]
fn partial_edit_is_mixed_and_triggers_one_backward() {
    let (fwd, bwd) = models();
    let mut s = Session::new("s", "the water is low . b says c .").unwrap();
    s.run_forward(&fwd, &bwd, &ForwardRequest::complete("the water is ..."))
        .unwrap();
    assert_eq!(&s.summary()[0].tokens()[..3], &["the", "water", "is"]);
    assert_eq!(s.summary()[0].origin(), Origin::Mixed);

    let n_before = s.trace().len();
    let words = s.summary()[0].tokens();
    let edited: Vec<&str> = words
        .iter()
        .map(|w| if w == "is" { "was" } else { w.as_str() })
        .collect();
    s.edit_sentence(0, &edited.join(" "), &bwd).unwrap();
    assert_eq!(s.trace().len(), n_before - 1);
    assert_eq!(&s.summary()[0].tokens()[..3], &["the", "water", "was"]);

    let mut t = Session::new("t", TEXT).unwrap();
    t.run_forward(&fwd, &bwd, &ForwardRequest::init_with(1))
        .unwrap();
    let n_before = t.trace().len();
    let edited = format!("extra {}", t.summary()[0].tokens().join(" "));
    t.edit_sentence(0, &edited, &bwd).unwrap();
    assert_eq!(t.summary()[0].origin(), Origin::Mixed);
    assert_eq!(t.trace().len(), n_before);
    let k = kinds(&t);
    assert_eq!(&k[k.len() - 2..], &[EventKind::Edit, EventKind::Backward]);
    assert_eq!(k.iter().filter(|&&e| e == EventKind::Backward).count(), 2);
}

#[test]
fn identical_edit_keeps_origin_and_full_rewrite_is_user() {
    let (fwd, bwd) = models();
    let mut s = Session::new("s", TEXT).unwrap();
    s.run_forward(&fwd, &bwd, &ForwardRequest::init_with(1))
        .unwrap();
    let same = s.summary()[0].tokens().join(" ");
    s.edit_sentence(0, &same, &bwd).unwrap();
    assert_eq!(s.summary()[0].origin(), Origin::Model);
    s.edit_sentence(0, "totally new words !", &bwd).unwrap();
    assert_eq!(s.summary()[0].origin(), Origin::User);
    assert!(s.aggregated().is_none());
}

#[test]
fn edit_can_split_a_sentence() {
    let (fwd, bwd) = models();
    let mut s = Session::new("s", TEXT).unwrap();
    s.run_forward(&fwd, &bwd, &ForwardRequest::init_with(1))
        .unwrap();
    s.edit_sentence(0, "one . two .", &bwd).unwrap();
    assert_eq!(s.summary().len(), 2);
    assert_eq!(s.summary()[1].tokens(), vec!["two", "."]);
}

#[test]
fn word_selection_needs_aggregation_off() {
    let mut s = Session::new("s", TEXT).unwrap();
    assert!(s.set_word_selection(&[0]).is_err());
    s.set_aggregate(false);
    s.set_word_selection(&[0, 5]).unwrap();
    assert_eq!(s.selected_positions(), BTreeSet::from([0, 5]));
    assert!(s.set_word_selection(&[99]).is_err());
    s.set_aggregate(true);
    assert!(s.word_selection.is_none());
}

#[test]
fn aggregation_hand_case() {
    let m = aggregate_attention(&[vec![0.3, 0.7]], &[(0, 1), (1, 2)], &[(0, 1)]);
    assert_eq!(m, vec![vec![0.3], vec![0.7]]);
}

#[test]
fn aggregation_conserves_mass_on_random_traces() {
    let mut prng = Prng::new(31);
    for _ in 0..100 {
        let n_src = 2 + prng.below(20);
        let mut spans = Vec::new();
        let mut start = 0;
        while start < n_src {
            let end = (start + 1 + prng.below(5)).min(n_src);
            spans.push((start, end));
            start = end;
        }
        let n_rows = 1 + prng.below(15);
        let rows: Vec<Vec<f64>> = (0..n_rows)
            .map(|_| {
                let raw: Vec<f64> = (0..n_src).map(|_| prng.uniform()).collect();
                let z: f64 = raw.iter().sum();
                raw.iter().map(|r| r / z).collect()
            })
            .collect();
        let mut outputs = Vec::new();
        let mut start = 0;
        while start < n_rows {
            let end = (start + 1 + prng.below(4)).min(n_rows);
            outputs.push((start, end));
            start = end;
        }
        let m = aggregate_attention(&rows, &spans, &outputs);
        let total: f64 = m.iter().flatten().sum();
        let word_level: f64 = rows.iter().flatten().sum();
        assert!((total - n_rows as f64).abs() < 1e-9);
        assert!((total - word_level).abs() < 1e-12);
    }
}

#[test]
fn json_uses_documented_keys() {
    let (fwd, bwd) = models();
    let mut s = Session::new("s", TEXT).unwrap();
    s.run_forward(&fwd, &bwd, &ForwardRequest::init_with(1))
        .unwrap();
    let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
    for key in [
        "id",
        "document",
        "selection",
        "summary",
        "coverage",
        "aggregated",
        "history",
    ] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    assert!(v["document"]["sentences"][0].is_array());
    assert_eq!(v["summary"][0]["origin"], "MODEL");
    for key in [
        "usage_probs",
        "covered_words",
        "covered_sentences",
        "threshold",
    ] {
        assert!(v["coverage"].get(key).is_some());
    }
    assert_eq!(s.to_json(), s.to_json());
}
