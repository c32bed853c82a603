//! Print a few synthetic documents with their target tables.
//!
//! cargo run --example synthetic_data -- [count] [seed]

use seqset::data::{datagen, SynthSpec};
use seqset::table::serialize_table;

fn main() -> seqset::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<u64>().ok());
    let count = args.next().flatten().unwrap_or(3) as usize;
    let seed = args.next().flatten().unwrap_or(0);
    let spec = SynthSpec {
        n_instances: count,
        distractor_sentences: 1,
        seed,
        ..SynthSpec::default()
    };
    let d = datagen(&spec)?;
    for (src, t) in d.sources.iter().zip(&d.tables) {
        println!("text:  {src}");
        println!("table: {}", serialize_table(t)?);
        println!();
    }
    Ok(())
}
