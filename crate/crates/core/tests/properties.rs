use proptest::prelude::*;
use revise_core::audit::{parse_recourse_table, render_recourse_table, summarize, ResultSummary, TableColumn, TableFormat};
use revise_core::data::{Attribute, AttributeKind, ColumnStats, Dataset, Encoder, Label, Schema};
use revise_core::revise::{cost, recourse_tuple, CostKind, RecourseResult};
use revise_core::tensor::Tensor;

fn schema() -> Schema {
    let a = |name: &str, kind, immutable| Attribute {
        name: name.into(),
        kind,
        immutable,
    };
    Schema::new(vec![
        a("r", AttributeKind::Real, false),
        a("p", AttributeKind::PositiveReal, false),
        a("c", AttributeKind::Categorical(3), false),
        a("g", AttributeKind::Categorical(2), true),
    ])
    .unwrap()
}

fn encoder() -> Encoder {
    let s = |mean, std, mad| Some(ColumnStats { mean, std, mad });
    Encoder::from_parts(schema(), vec![s(0.5, 2.0, 1.3), s(1.0, 0.7, 0.4), None, None]).unwrap()
}

fn raw_row() -> impl Strategy<Value = Vec<f64>> {
    (-50.0..50.0f64, 0.0..500.0f64, 0..3u8, 0..2u8).prop_map(|(r, p, c, g)| vec![r, p, c as f64, g as f64])
}

/// Encoded row whose categorical blocks are probability vectors.
fn soft_row() -> impl Strategy<Value = Vec<f64>> {
    (-5.0..5.0f64, -5.0..5.0f64, prop::array::uniform3(0.01..1.0f64), 0.0..1.0f64).prop_map(|(a, b, c, g)| {
        let s: f64 = c.iter().sum();
        vec![a, b, c[0] / s, c[1] / s, c[2] / s, g, 1.0 - g]
    })
}

fn summary() -> impl Strategy<Value = ResultSummary> {
    (any::<bool>(), 0.0..10.0f64, 0.0..10.0f64, 0.0..100.0f64, 0..8usize).prop_map(|(success, dz, c, l1, k)| {
        ResultSummary {
            lambda: 0.1,
            success,
            delta_z: dz,
            cost: c,
            raw_l1: l1,
            changes: k,
        }
    })
}

fn close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12 * x.abs().max(1.0),
        (None, None) => true,
        _ => false,
    }
}

fn result_for(x_star: &[f64], x: &[f64], enc: &Encoder) -> RecourseResult {
    RecourseResult {
        success: true,
        lambda: 1.0,
        target: Label::Positive,
        original: x_star.to_vec(),
        counterfactual: x.to_vec(),
        z0: vec![0.0],
        z_final: vec![1.0],
        iterations: 1,
        crossing: Some(1),
        changes: recourse_tuple(enc, x_star, x),
        cost: 0.0,
        raw_l1: 0.0,
        trajectory: None,
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(v in prop::collection::vec(-30.0..30.0f64, 12)) {
        let p = Tensor::new(3, 4, v).unwrap().softmax_rows();
        for r in 0..3 {
            let row = p.row_slice(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn metrics_ignore_order(items in prop::collection::vec(summary(), 1..30), seed in any::<u64>()) {
        let mut shuffled = items.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed.wrapping_mul(i as u64 + 7) % (i as u64 + 1)) as usize);
        }
        let a = summarize(&items).unwrap();
        let b = summarize(&shuffled).unwrap();
        prop_assert_eq!(a.count, b.count);
        prop_assert_eq!(a.successes, b.successes);
        prop_assert_eq!(a.success_rate, b.success_rate);
        prop_assert_eq!(a.median_changes, b.median_changes);
        prop_assert_eq!(a.max_changes, b.max_changes);
        prop_assert!(close(a.mean_delta_z, b.mean_delta_z));
        prop_assert!(close(a.mean_cost, b.mean_cost));
        prop_assert!(close(a.mean_raw_l1, b.mean_raw_l1));
    }

    #[test]
    fn tuple_lists_exactly_the_changes(xs in raw_row(), x in raw_row(), keep in prop::array::uniform4(any::<bool>())) {
        let enc = encoder();
        let x: Vec<f64> = x.iter().zip(&xs).zip(keep).map(|((&a, &b), k)| if k { b } else { a }).collect();
        let tuple = recourse_tuple(&enc, &xs, &x);
        for j in 0..xs.len() {
            match tuple.iter().find(|c| c.index == j) {
                Some(c) => {
                    prop_assert_eq!(c.original, xs[j]);
                    prop_assert_eq!(c.proposed, x[j]);
                    prop_assert_eq!(c.delta, xs[j] - x[j]);
                }
                None if j >= 2 => prop_assert_eq!(xs[j], x[j]),
                None => prop_assert!((enc.encode_numeric(j, xs[j]) - enc.encode_numeric(j, x[j])).abs() < 1e-6),
            }
        }
    }

    #[test]
    fn costs_are_nonnegative(xs in raw_row(), x in soft_row()) {
        let enc = encoder();
        let xs = enc.encode_row(&xs).unwrap();
        for kind in [CostKind::L1Mad, CostKind::L1, CostKind::L2Squared] {
            prop_assert!(cost(&xs, &x, &enc, kind).unwrap() >= 0.0);
        }
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec(raw_row(), 1..20), signs in prop::collection::vec(any::<bool>(), 20)) {
        let labelled = schema().with_label("y").unwrap();
        let labels: Vec<Label> = signs[..rows.len()].iter().map(|&s| if s { Label::Positive } else { Label::Negative }).collect();
        let d = Dataset::new(labelled.clone(), rows.clone(), Some(labels.clone()), None, None).unwrap();
        let back = Dataset::from_csv_reader(d.to_csv_string().as_bytes(), &labelled).unwrap();
        prop_assert_eq!(back.rows(), &rows[..]);
        prop_assert_eq!(back.labels().unwrap(), &labels[..]);
    }

    #[test]
    fn table_reparse_gives_exact_deltas(xs in raw_row(), a in raw_row(), b in raw_row()) {
        let enc = encoder();
        let s = schema();
        let ra = result_for(&xs, &a, &enc);
        let rb = result_for(&xs, &b, &enc);
        let cols = [
            TableColumn { name: "first", schema: &s, result: &ra },
            TableColumn { name: "second", schema: &s, result: &rb },
        ];
        let tsv = render_recourse_table(&xs, &s, &cols, TableFormat::Tsv).unwrap();
        let (methods, rows) = parse_recourse_table(&tsv).unwrap();
        prop_assert_eq!(methods, vec!["first".to_string(), "second".to_string()]);
        for row in &rows {
            let j = s.index_of(&row.attribute).unwrap();
            for (m, r) in [&ra, &rb].iter().enumerate() {
                let expect = r.changes.iter().find(|c| c.index == j).map(|c| c.delta);
                prop_assert_eq!(row.deltas()[m], expect);
            }
        }
        let changed = (0..s.len()).filter(|&j| ra.changes.iter().chain(&rb.changes).any(|c| c.index == j)).count();
        prop_assert_eq!(rows.len(), changed);
    }
}
