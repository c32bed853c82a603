//! Match the row slots of an untrained model to the rows of one table and
//! print the cost matrix with the chosen assignment marked.
//!
//! cargo run --example matching

use seqset::assignment::assign_targets;
use seqset::data::{datagen, SynthSpec};
use seqset::model::{DecoderState, ModelConfig, Seq2SeqSet, Session};
use seqset::pipeline::{build_vocab, encode_dataset};

fn main() -> seqset::Result<()> {
    let d = datagen(&SynthSpec {
        n_instances: 1,
        rows_min: 3,
        rows_max: 3,
        ..SynthSpec::default()
    })?;
    let vocab = build_vocab(&d, 512)?;
    let config = ModelConfig {
        vocab_size: vocab.len(),
        max_rows: 5,
        ..ModelConfig::default()
    };
    let model = Seq2SeqSet::new(config, 0)?;
    let inst = &encode_dataset(&vocab, &d)[0];
    let targets = inst.padded(model.config.max_rows)?;

    // Run the header greedily from the gold tokens so the slots see a finished header.
    let mut session = Session::new(&model, &inst.source)?;
    let mut state = DecoderState::new(&model);
    let mut prev = seqset::tokenizer::BOS;
    for &t in &inst.header {
        session.header_step(&mut state, prev)?;
        prev = t;
    }
    let (assignment, cost) = assign_targets(&mut session, &state, &targets)?;

    println!("{}", d.sources[0]);
    for (j, row) in d.tables[0].body.iter().enumerate() {
        println!("target {j}: {}", row.join(" | "));
    }
    println!("targets {}.. are null rows\n", d.tables[0].body.len());
    print!("{}", cost.dump(Some(&assignment)));
    println!("\nslot -> target {:?}, total cost {:.4}", assignment.perm, assignment.total_cost);
    Ok(())
}
