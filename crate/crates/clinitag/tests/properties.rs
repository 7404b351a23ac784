//! Property tests over the codec, the stable reductions, and the scoring
//! identities.

use proptest::prelude::*;

use clinitag::metrics::{micro_identity_check, span_micro_f1};
use clinitag::numerics::{log_sum_exp, softmax, Tensor};
use clinitag::tags::{
    decode_bilou, encode_bilou, filter_neg_only, DecodeMode, Span, TagScheme, TagSequence,
};

const CATEGORIES: [&str; 3] = ["problem", "treatment", "test"];

/// Non-overlapping spans with at least one gap between them, over a sequence
/// of the returned length.
fn span_sets() -> impl Strategy<Value = (usize, Vec<Span>)> {
    (1usize..16).prop_flat_map(|length| {
        let spans = proptest::collection::vec((0usize..16, 1usize..4, 0usize..3), 0..6).prop_map(
            move |raw| {
                let mut spans: Vec<Span> = Vec::new();
                let mut cursor = 0usize;
                for (gap, len, cat) in raw {
                    let start = cursor + gap % 4;
                    let end = start + (len - 1);
                    if end >= length {
                        break;
                    }
                    spans.push(Span::new(start, end, CATEGORIES[cat]));
                    cursor = end + 2; // enforce a gap
                }
                spans
            },
        );
        (Just(length), spans)
    })
}

proptest! {
    #[test]
    fn bilou_round_trip_is_identity((length, spans) in span_sets()) {
        let scheme = TagScheme::bilou(&CATEGORIES);
        let seq = encode_bilou(&spans, length, &scheme).unwrap();
        let decoded = decode_bilou(&seq, DecodeMode::Strict).unwrap();
        let mut expected = spans.clone();
        expected.sort();
        prop_assert_eq!(decoded, expected);
    }

    #[test]
    fn lenient_decode_never_errors_and_spans_are_sane(
        tags in proptest::collection::vec(0usize..13, 1..16)
    ) {
        let scheme = TagScheme::bilou(&CATEGORIES);
        let length = tags.len();
        let seq = TagSequence::from_indices(scheme, tags).unwrap();
        let spans = decode_bilou(&seq, DecodeMode::Lenient).unwrap();
        for span in &spans {
            prop_assert!(span.start <= span.end);
            prop_assert!(span.end < length);
        }
        for pair in spans.windows(2) {
            prop_assert!(pair[0].end < pair[1].start);
        }
    }

    #[test]
    fn filter_neg_only_is_idempotent(
        tags in proptest::collection::vec(0usize..9, 1..12)
    ) {
        let scheme = TagScheme::bilou(&["NEG", "POS"]);
        let seq = TagSequence::from_indices(scheme, tags).unwrap();
        let once = filter_neg_only(&seq);
        let twice = filter_neg_only(&once);
        prop_assert_eq!(once.names(), twice.names());
        prop_assert_eq!(once.scheme().tags(), twice.scheme().tags());
    }

    #[test]
    fn micro_identity_holds_on_random_single_label_pairs(
        pair in proptest::collection::vec((1usize..6, 1usize..6), 1..50)
    ) {
        let gold: Vec<usize> = pair.iter().map(|p| p.0).collect();
        let pred: Vec<usize> = pair.iter().map(|p| p.1).collect();
        let value = micro_identity_check(&gold, &pred).unwrap();
        let agreements = gold.iter().zip(&pred).filter(|(g, p)| g == p).count();
        prop_assert_eq!(value, agreements as f64 / gold.len() as f64);
    }

    #[test]
    fn span_f1_swap_exchanges_precision_and_recall((length, gold) in span_sets()) {
        let _ = length;
        let pred: Vec<Span> = gold
            .iter()
            .filter(|s| s.start % 2 == 0)
            .cloned()
            .collect();
        let (forward, _) = span_micro_f1(&gold, &pred);
        let (swapped, _) = span_micro_f1(&pred, &gold);
        prop_assert_eq!(forward.precision, swapped.recall);
        prop_assert_eq!(forward.recall, swapped.precision);
    }

    #[test]
    fn log_sum_exp_bounded_by_max_plus_log_len(
        values in proptest::collection::vec(-50.0f64..50.0, 1..20)
    ) {
        let len = values.len();
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let t = Tensor::from_vec(&[len], values).unwrap();
        let lse = log_sum_exp(&t, 0).unwrap().at(&[]);
        prop_assert!(lse >= max - 1e-12);
        prop_assert!(lse <= max + (len as f64).ln() + 1e-12);
    }

    #[test]
    fn softmax_positive_and_argmax_preserving(
        values in proptest::collection::vec(-30.0f64..30.0, 2..12)
    ) {
        let len = values.len();
        let argmax_in = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let t = Tensor::from_vec(&[len], values).unwrap();
        let s = softmax(&t, 0).unwrap();
        prop_assert!(s.data().iter().all(|&v| v > 0.0));
        let sum: f64 = s.data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        let argmax_out = s
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        prop_assert_eq!(argmax_in, argmax_out);
    }
}
