use proptest::prelude::*;

use seqset::assignment::{hungarian, CostMatrix};
use seqset::eval::{chrf::chrf, chrf_f1, exact_f1, extract_records, score_table, Part};
use seqset::table::{parse_table, serialize_table, validate, Table, CELL_SEP, ROW_SEP};
use seqset::tokenizer::Vocabulary;

fn cell() -> impl Strategy<Value = String> {
    prop_oneof![
        1 => Just(String::new()),
        6 => "[a-z0-9]{1,4}( [a-z0-9]{1,4}){0,2}",
    ]
}

fn table() -> impl Strategy<Value = Table> {
    (1usize..5, 0usize..6).prop_flat_map(|(cols, rows)| {
        (
            prop::collection::vec(cell(), cols),
            prop::collection::vec(prop::collection::vec(cell(), cols), rows),
        )
            .prop_map(|(header, body)| Table::new(header, body))
    })
}

/// A table plus a row permutation and a permutation of columns 1.. .
fn permuted_table() -> impl Strategy<Value = (Table, Table)> {
    table().prop_flat_map(|t| {
        let rows: Vec<usize> = (0..t.body.len()).collect();
        let cols: Vec<usize> = (1..t.columns()).collect();
        (Just(t), Just(rows).prop_shuffle(), Just(cols).prop_shuffle()).prop_map(|(t, rp, cp)| {
            let order: Vec<usize> = std::iter::once(0).chain(cp).collect();
            let permute = |row: &Vec<String>| order.iter().map(|&c| row[c].clone()).collect::<Vec<_>>();
            let body = rp.iter().map(|&r| permute(&t.body[r])).collect();
            let p = Table::new(permute(&t.header), body);
            (t, p)
        })
    })
}

fn brute_force(c: &[Vec<f64>]) -> f64 {
    fn go(c: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == c.len() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..c.len() {
            if !used[j] {
                used[j] = true;
                best = best.min(c[row][j] + go(c, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(c, 0, &mut vec![false; c.len()])
}

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..7).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-20.0f64..0.0, n), n))
}

proptest! {
    #[test]
    fn serialization_round_trips(t in table()) {
        let s = serialize_table(&t).unwrap();
        prop_assert_eq!(s.matches(ROW_SEP).count(), t.body.len());
        prop_assert_eq!(s.matches(CELL_SEP).count(), (t.body.len() + 1) * (t.columns() - 1));
        prop_assert_eq!(parse_table(&s).unwrap(), t);
    }

    #[test]
    fn well_formedness_ignores_row_order((t, p) in permuted_table()) {
        prop_assert!(validate(&t).well_formed());
        prop_assert!(validate(&p).well_formed());
    }

    #[test]
    fn tokenizer_round_trips(words in prop::collection::vec("[a-z]{1,3}", 1..20), text in "[a-zé0-9 .,]{0,40}") {
        let vocab = Vocabulary::train(&words, 300).unwrap();
        let norm = text.split_whitespace().collect::<Vec<_>>().join(" ");
        prop_assert_eq!(vocab.decode(&vocab.encode(&text)).unwrap(), norm);
    }

    #[test]
    fn cells_round_trip(words in prop::collection::vec("[a-z]{1,3}", 1..10), t in table()) {
        let vocab = Vocabulary::train(&words, 300).unwrap();
        for row in std::iter::once(&t.header).chain(&t.body) {
            prop_assert_eq!(&vocab.decode_cells(&vocab.encode_cells(row)).unwrap(), row);
        }
    }

    #[test]
    fn hungarian_is_optimal(c in matrix()) {
        let a = hungarian(&CostMatrix::new(c.clone()).unwrap());
        let mut seen = a.perm.clone();
        seen.sort();
        prop_assert_eq!(seen, (0..c.len()).collect::<Vec<_>>());
        prop_assert!((a.total_cost - brute_force(&c)).abs() < 1e-9);
    }

    #[test]
    fn hungarian_follows_column_permutations(c in matrix(), seed in any::<u64>()) {
        let n = c.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.rotate_left((seed % n as u64) as usize);
        let permuted: Vec<Vec<f64>> = c.iter().map(|r| order.iter().map(|&j| r[j]).collect()).collect();
        let a = hungarian(&CostMatrix::new(c).unwrap());
        let b = hungarian(&CostMatrix::new(permuted).unwrap());
        prop_assert!((a.total_cost - b.total_cost).abs() < 1e-9);
    }

    #[test]
    fn scores_ignore_row_and_column_order((gold, gold_p) in permuted_table(), (pred, pred_p) in permuted_table()) {
        let reference = score_table(&pred, &gold).unwrap();
        prop_assert_eq!(score_table(&pred_p, &gold).unwrap(), reference);
        prop_assert_eq!(score_table(&pred, &gold_p).unwrap(), reference);
        prop_assert_eq!(score_table(&pred_p, &gold_p).unwrap(), reference);
    }

    #[test]
    fn exact_f1_is_symmetric(a in table(), b in table()) {
        let (ra, rb) = (extract_records(&a).unwrap(), extract_records(&b).unwrap());
        for part in Part::ALL {
            let (x, y) = (exact_f1(ra.part(part), rb.part(part)), exact_f1(rb.part(part), ra.part(part)));
            prop_assert_eq!(x.precision, y.recall);
            prop_assert_eq!(x.recall, y.precision);
            prop_assert!((x.f1 - y.f1).abs() < 1e-12);
        }
    }

    #[test]
    fn self_similarity_is_perfect(t in table(), s in "\\PC{0,20}") {
        let r = extract_records(&t).unwrap();
        for part in Part::ALL {
            prop_assert_eq!(chrf_f1(r.part(part), r.part(part)).f1, 100.0);
        }
        prop_assert_eq!(chrf(&s, &s), 100.0);
    }

    #[test]
    fn chrf_is_bounded(a in "[a-c ]{0,12}", b in "[a-c ]{0,12}") {
        let v = chrf(&a, &b);
        prop_assert!((0.0..=100.0).contains(&v));
    }
}
