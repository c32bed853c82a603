//! Finite-difference check of the full training loss on a tiny model.
//!
//! cargo run --example gradient_check

use seqset::data::{datagen, SynthSpec};
use seqset::model::{ModelConfig, Seq2SeqSet};
use seqset::pipeline::{build_vocab, encode_dataset};
use seqset::training::{check_instance_gradients, TrainConfig};

fn main() -> seqset::Result<()> {
    let d = datagen(&SynthSpec {
        n_instances: 3,
        rows_min: 1,
        rows_max: 2,
        ..SynthSpec::default()
    })?;
    let vocab = build_vocab(&d, 300)?;
    let config = ModelConfig {
        encoder_layers: 1,
        decoder_layers: 1,
        d_model: 8,
        heads: 2,
        ffn_dim: 16,
        max_rows: 2,
        max_pos: 64,
        max_cols: 4,
        vocab_size: vocab.len(),
    };
    let model = Seq2SeqSet::new(config, 0)?;
    for (i, inst) in encode_dataset(&vocab, &d).iter().enumerate() {
        let (report, assignment) = check_instance_gradients(&model, inst, &TrainConfig::default(), 1e-5, 1e-5)?;
        let perm = assignment.map(|a| a.perm).unwrap_or_default();
        println!(
            "instance {i}: {} partials, assignment {perm:?}, max relative error {:.3e}",
            report.checked, report.max_rel_error
        );
        if let Some((name, idx, analytic, numeric)) = report.worst {
            println!("  worst {name}[{idx}]: backprop {analytic:.6e}, numeric {numeric:.6e}");
        }
    }
    Ok(())
}
