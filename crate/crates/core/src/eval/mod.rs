//! Table scoring: exact-match and chrF F1 over the header, the first column
//! and the data cells, averaged per table, plus the format error rate.

pub mod chrf;

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::table::{parse_table, validate, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Part {
    Header,
    FirstColumn,
    Data,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Header, Part::FirstColumn, Part::Data];

    pub fn key(self) -> &'static str {
        match self {
            Part::Header => "header",
            Part::FirstColumn => "first_column",
            Part::Data => "data",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellRecord {
    pub part: Part,
    pub row_key: String,
    pub col_key: String,
    pub content: String,
}

impl CellRecord {
    /// Text compared by the similarity metric.
    pub fn similarity_text(&self) -> String {
        format!("{} | {} | {}", self.row_key, self.col_key, self.content)
    }
}

/// Records of one table, split by part.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Records {
    pub header: Vec<CellRecord>,
    pub first_column: Vec<CellRecord>,
    pub data: Vec<CellRecord>,
}

impl Records {
    pub fn part(&self, p: Part) -> &[CellRecord] {
        match p {
            Part::Header => &self.header,
            Part::FirstColumn => &self.first_column,
            Part::Data => &self.data,
        }
    }
}

/// Header cells (an empty top-left cell excluded), first-column cells, and
/// one record per non-empty data cell keyed by its row's first cell and its
/// column's header cell.
pub fn extract_records(t: &Table) -> Result<Records> {
    let report = validate(t);
    if !report.well_formed() {
        return Err(Error::Format(report.to_string()));
    }
    let rec = |part, row_key: &str, col_key: &str, content: &str| CellRecord {
        part,
        row_key: row_key.to_string(),
        col_key: col_key.to_string(),
        content: content.to_string(),
    };
    let mut out = Records::default();
    for (j, h) in t.header.iter().enumerate() {
        if j == 0 && h.is_empty() {
            continue;
        }
        out.header.push(rec(Part::Header, "", "", h));
    }
    for row in &t.body {
        let key = &row[0];
        out.first_column.push(rec(Part::FirstColumn, key, "", key));
        for (j, cell) in row.iter().enumerate().skip(1) {
            if !cell.is_empty() {
                out.data.push(rec(Part::Data, key, &t.header[j], cell));
            }
        }
    }
    Ok(out)
}

/// Precision, recall and F1 on a 0 to 100 scale.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }

    const PERFECT: Prf = Prf {
        precision: 100.0,
        recall: 100.0,
        f1: 100.0,
    };
}

/// Multiset overlap. Two empty sides score 100; one empty side scores 0.
pub fn exact_f1(preds: &[CellRecord], golds: &[CellRecord]) -> Prf {
    if preds.is_empty() && golds.is_empty() {
        return Prf::PERFECT;
    }
    if preds.is_empty() || golds.is_empty() {
        return Prf::default();
    }
    let mut counts: HashMap<&CellRecord, usize> = HashMap::new();
    for g in golds {
        *counts.entry(g).or_insert(0) += 1;
    }
    let mut hit = 0usize;
    for p in preds {
        if let Some(c) = counts.get_mut(p) {
            if *c > 0 {
                *c -= 1;
                hit += 1;
            }
        }
    }
    Prf::from_pr(
        100.0 * hit as f64 / preds.len() as f64,
        100.0 * hit as f64 / golds.len() as f64,
    )
}

/// Greedy one-to-one matching on chrF similarity: pairs are taken in order of
/// decreasing similarity, ties by prediction text, gold text, then indices.
/// Ordering ties by text keeps the result independent of record order. Returns
/// `(pred, gold, similarity)` triples.
pub fn greedy_match(preds: &[CellRecord], golds: &[CellRecord]) -> Vec<(usize, usize, f64)> {
    let ptext: Vec<String> = preds.iter().map(CellRecord::similarity_text).collect();
    let gtext: Vec<String> = golds.iter().map(CellRecord::similarity_text).collect();
    let mut pairs = Vec::with_capacity(preds.len() * golds.len());
    for (i, p) in ptext.iter().enumerate() {
        for (j, g) in gtext.iter().enumerate() {
            pairs.push((i, j, chrf::chrf(p, g)));
        }
    }
    pairs.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| ptext[a.0].cmp(&ptext[b.0]))
            .then_with(|| gtext[a.1].cmp(&gtext[b.1]))
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });
    let (mut pu, mut gu) = (vec![false; preds.len()], vec![false; golds.len()]);
    let mut out = Vec::new();
    for (i, j, s) in pairs {
        if !pu[i] && !gu[j] {
            pu[i] = true;
            gu[j] = true;
            out.push((i, j, s));
        }
    }
    out
}

/// Soft precision and recall: matched similarity summed and divided by the
/// number of predictions and of golds respectively.
pub fn chrf_f1(preds: &[CellRecord], golds: &[CellRecord]) -> Prf {
    if preds.is_empty() && golds.is_empty() {
        return Prf::PERFECT;
    }
    if preds.is_empty() || golds.is_empty() {
        return Prf::default();
    }
    let total: f64 = greedy_match(preds, golds).iter().map(|m| m.2).sum();
    Prf::from_pr(total / preds.len() as f64, total / golds.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PartScores {
    pub header: Prf,
    pub first_column: Prf,
    pub data: Prf,
}

impl PartScores {
    pub fn part(&self, p: Part) -> Prf {
        match p {
            Part::Header => self.header,
            Part::FirstColumn => self.first_column,
            Part::Data => self.data,
        }
    }

    fn part_mut(&mut self, p: Part) -> &mut Prf {
        match p {
            Part::Header => &mut self.header,
            Part::FirstColumn => &mut self.first_column,
            Part::Data => &mut self.data,
        }
    }
}

/// Scores of one predicted table against its gold table.
pub fn score_table(pred: &Table, gold: &Table) -> Result<(PartScores, PartScores)> {
    let (p, g) = (extract_records(pred)?, extract_records(gold)?);
    let mut exact = PartScores::default();
    let mut soft = PartScores::default();
    for part in Part::ALL {
        *exact.part_mut(part) = exact_f1(p.part(part), g.part(part));
        *soft.part_mut(part) = chrf_f1(p.part(part), g.part(part));
    }
    Ok((exact, soft))
}

/// Corpus scores: every number is the mean of the per-table values.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ScoreReport {
    pub exact: PartScores,
    pub chrf: PartScores,
    pub error_rate: f64,
    pub tables: usize,
}

/// Scores raw predicted lines against gold tables. Lines that do not parse
/// count toward the error rate and score 0 everywhere.
pub fn evaluate_corpus(pred_lines: &[String], golds: &[Table]) -> Result<ScoreReport> {
    if pred_lines.len() != golds.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} gold tables",
            pred_lines.len(),
            golds.len()
        )));
    }
    let mut report = ScoreReport {
        tables: golds.len(),
        ..ScoreReport::default()
    };
    if golds.is_empty() {
        return Ok(report);
    }
    let mut errors = 0usize;
    let add = |acc: &mut PartScores, s: &PartScores| {
        for part in Part::ALL {
            let (a, b) = (acc.part_mut(part), s.part(part));
            a.precision += b.precision;
            a.recall += b.recall;
            a.f1 += b.f1;
        }
    };
    for (line, gold) in pred_lines.iter().zip(golds) {
        match parse_table(line) {
            Ok(pred) => {
                let (e, c) = score_table(&pred, gold)?;
                add(&mut report.exact, &e);
                add(&mut report.chrf, &c);
            }
            Err(_) => errors += 1,
        }
    }
    let n = golds.len() as f64;
    for acc in [&mut report.exact, &mut report.chrf] {
        for part in Part::ALL {
            let a = acc.part_mut(part);
            a.precision /= n;
            a.recall /= n;
            a.f1 /= n;
        }
    }
    report.error_rate = 100.0 * errors as f64 / n;
    Ok(report)
}

impl ScoreReport {
    /// `metric.part.stat = value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (name, scores) in [("exact", &self.exact), ("chrf", &self.chrf)] {
            for part in Part::ALL {
                let s = scores.part(part);
                for (stat, v) in [("precision", s.precision), ("recall", s.recall), ("f1", s.f1)] {
                    out.push_str(&format!("{name}.{}.{stat} = {v:.4}\n", part.key()));
                }
            }
        }
        out.push_str(&format!("error_rate = {:.4}\ntables = {}\n", self.error_rate, self.tables));
        out
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>8} {:>8} {:>8}   {:>8} {:>8} {:>8}", "", "P", "R", "F1", "P", "R", "F1")?;
        writeln!(f, "{:<14} {:>26}   {:>26}", "", "exact", "chrf")?;
        for part in Part::ALL {
            let (e, c) = (self.exact.part(part), self.chrf.part(part));
            writeln!(
                f,
                "{:<14} {:>8.2} {:>8.2} {:>8.2}   {:>8.2} {:>8.2} {:>8.2}",
                part.key(),
                e.precision,
                e.recall,
                e.f1,
                c.precision,
                c.recall,
                c.f1
            )?;
        }
        writeln!(f, "error rate     {:>8.2}", self.error_rate)?;
        write!(f, "tables         {:>8}", self.tables)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn figure() -> Table {
        Table::new(
            s(&["", "AST", "PTS"]),
            vec![s(&["Kevin Durant", "5", "22"]), s(&["Stephen Curry", "8", "31"])],
        )
    }

    fn data(row: &str, col: &str, content: &str) -> CellRecord {
        CellRecord {
            part: Part::Data,
            row_key: row.into(),
            col_key: col.into(),
            content: content.into(),
        }
    }

    #[test]
    fn figure_records() {
        let r = extract_records(&figure()).unwrap();
        assert!(r.data.contains(&data("Kevin Durant", "AST", "5")));
        assert!(r.data.contains(&data("Kevin Durant", "PTS", "22")));
        assert_eq!(r.header.len(), 2);
        assert_eq!(r.first_column.len(), 2);
        assert_eq!(r.data.len(), 4);
    }

    #[test]
    fn header_only_table() {
        let r = extract_records(&Table::new(s(&["A", "B"]), vec![])).unwrap();
        assert!(r.first_column.is_empty() && r.data.is_empty());
        assert_eq!(r.header.len(), 2);
    }

    #[test]
    fn empty_cells_are_skipped() {
        let t = Table::new(s(&["", "A", "B"]), vec![s(&["x", "", "1"]), s(&["y", "", ""])]);
        assert_eq!(extract_records(&t).unwrap().data.len(), 1);
    }

    #[test]
    fn malformed_rejected() {
        let t = Table::new(s(&["A", "B"]), vec![s(&["x"])]);
        assert!(extract_records(&t).is_err());
    }

    #[test]
    fn exact_cases() {
        let g = vec![data("a", "b", "1"), data("a", "c", "2"), data("d", "b", "3"), data("d", "c", "4")];
        assert_eq!(exact_f1(&g, &g), Prf::PERFECT);
        assert_eq!(exact_f1(&[data("z", "z", "z")], &g), Prf::default());
        let mut p = g.clone();
        p.push(data("q", "b", "9"));
        let r = exact_f1(&p, &g);
        assert!((r.precision - 80.0).abs() < 1e-12);
        assert!((r.recall - 100.0).abs() < 1e-12);
        assert!((r.f1 - 800.0 / 9.0).abs() < 1e-12);
        assert_eq!(exact_f1(&[], &[]), Prf::PERFECT);
        assert_eq!(exact_f1(&[], &g), Prf::default());
    }

    #[test]
    fn exact_counts_duplicates_once_each() {
        let g = vec![data("a", "b", "1")];
        let p = vec![data("a", "b", "1"), data("a", "b", "1")];
        let r = exact_f1(&p, &g);
        assert_eq!((r.precision, r.recall), (50.0, 100.0));
    }

    #[test]
    fn chrf_identity_and_edit() {
        let g = vec![data("Kevin Durant", "PTS", "22")];
        assert!((chrf_f1(&g, &g).f1 - 100.0).abs() < 1e-12);
        let p = vec![data("Kevin Durant", "PTS", "23")];
        let sim = chrf::chrf("Kevin Durant | PTS | 23", "Kevin Durant | PTS | 22");
        let r = chrf_f1(&p, &g);
        assert!((r.precision - sim).abs() < 1e-12 && (r.recall - sim).abs() < 1e-12);
        assert!(sim < 100.0 && sim > 80.0);
    }

    #[test]
    fn tied_similarities_do_not_depend_on_order() {
        // Both golds are equally close to "a"; which one it takes decides b's score.
        let a = data("r", "c", "xxxx");
        let b = data("r", "c", "pzzz");
        let x = data("r", "c", "xxxp");
        let y = data("r", "c", "xxxq");
        let (p0, g0) = (vec![a.clone(), b.clone()], vec![x.clone(), y.clone()]);
        let sim = |p: &CellRecord, g: &CellRecord| chrf::chrf(&p.similarity_text(), &g.similarity_text());
        assert_eq!(sim(&a, &x), sim(&a, &y));
        assert!(sim(&b, &x) > sim(&b, &y) && sim(&b, &x) < sim(&a, &x));
        let reference = chrf_f1(&p0, &g0);
        for (p, g) in [(vec![b.clone(), a.clone()], g0.clone()), (p0.clone(), vec![y, x])] {
            assert_eq!(chrf_f1(&p, &g), reference);
        }
    }

    #[test]
    fn corpus_is_macro_averaged() {
        let gold = figure();
        let mut half = figure();
        half.body.truncate(1);
        // Second table: data precision 100, recall 50, f1 66.67; first-column likewise.
        let lines = vec![
            crate::table::serialize_table(&gold).unwrap(),
            crate::table::serialize_table(&half).unwrap(),
        ];
        let r = evaluate_corpus(&lines, &[gold.clone(), gold.clone()]).unwrap();
        let f = 2.0 * 100.0 * 50.0 / 150.0;
        assert!((r.exact.data.f1 - (100.0 + f) / 2.0).abs() < 1e-12);
        assert!((r.exact.data.recall - 75.0).abs() < 1e-12);
        assert_eq!(r.error_rate, 0.0);
    }

    #[test]
    fn perfect_and_malformed_corpora() {
        let gold = figure();
        let line = crate::table::serialize_table(&gold).unwrap();
        let r = evaluate_corpus(std::slice::from_ref(&line), std::slice::from_ref(&gold)).unwrap();
        for part in Part::ALL {
            assert_eq!(r.exact.part(part).f1, 100.0);
            assert_eq!(r.chrf.part(part).f1, 100.0);
        }
        let bad = vec!["A ⟨s⟩ B ⟨n⟩ x".to_string(), String::new()];
        let r = evaluate_corpus(&bad, &[gold.clone(), gold]).unwrap();
        assert_eq!(r.error_rate, 100.0);
        assert_eq!(r.exact.data.f1, 0.0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(evaluate_corpus(&[], &[figure()]).is_err());
    }

    #[test]
    fn key_value_output() {
        let gold = figure();
        let line = crate::table::serialize_table(&gold).unwrap();
        let kv = evaluate_corpus(&[line], &[gold]).unwrap().to_key_values();
        assert!(kv.contains("exact.data.f1 = 100.0000\n"));
        assert!(kv.contains("error_rate = 0.0000\n"));
    }
}
