//! Score a small hand-written corpus of predictions.
//!
//! cargo run --example evaluate

use seqset::eval::{evaluate_corpus, extract_records, Part};
use seqset::table::{serialize_table, Table};

fn t(header: &[&str], body: &[&[&str]]) -> Table {
    let row = |r: &[&str]| r.iter().map(|c| c.to_string()).collect::<Vec<_>>();
    Table::new(row(header), body.iter().map(|r| row(r)).collect())
}

fn main() -> seqset::Result<()> {
    let gold = t(&["", "AST", "PTS"], &[&["Kevin Durant", "5", "22"], &["Stephen Curry", "7", "30"]]);
    // Same content with rows and stat columns swapped scores perfectly.
    let reordered = t(&["", "PTS", "AST"], &[&["Stephen Curry", "30", "7"], &["Kevin Durant", "22", "5"]]);
    let close = t(&["", "AST", "PTS"], &[&["Kevin Durant", "5", "23"], &["Steph Curry", "7", "30"]]);
    let preds = vec![
        serialize_table(&reordered)?,
        serialize_table(&close)?,
        "Kevin Durant ⟨s⟩ 5 ⟨n⟩ broken".to_string(),
    ];
    for part in Part::ALL {
        let r = extract_records(&gold)?;
        let records: Vec<String> = r.part(part).iter().map(|c| c.similarity_text()).collect();
        println!("{:12} {records:?}", part.key());
    }
    println!();
    let report = evaluate_corpus(&preds, &[gold.clone(), gold.clone(), gold])?;
    println!("{report}");
    println!();
    print!("{}", report.to_key_values());
    Ok(())
}
