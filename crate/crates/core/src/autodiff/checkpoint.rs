//! Parameter checkpoints.
//!
//! Layout: a UTF-8 manifest, one `name<TAB>rows x cols<TAB>offset` line per
//! tensor between a `seqset-checkpoint 1` line and an `end` line, followed
//! immediately by every tensor's values as little-endian `f64`. Offsets count
//! `f64` elements from the start of the binary section.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "seqset-checkpoint 1";

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> std::io::Result<()> {
    let mut manifest = String::new();
    manifest.push_str(MAGIC);
    manifest.push('\n');
    let mut offset = 0;
    for (_, p) in store.iter() {
        manifest.push_str(&format!(
            "{}\t{}x{}\t{}\n",
            p.name,
            p.value.rows(),
            p.value.cols(),
            offset
        ));
        offset += p.value.len();
    }
    manifest.push_str("end\n");
    out.write_all(manifest.as_bytes())?;
    for (_, p) in store.iter() {
        for v in p.value.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(store, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

/// Parses a checkpoint into its named tensors, in file order.
pub fn read_checkpoint<R: Read>(input: R) -> Result<Vec<(String, Tensor)>> {
    let mut reader = BufReader::new(input);
    let mut line = String::new();
    let bad = |m: String| Error::Data(format!("checkpoint: {m}"));
    let read_line = |reader: &mut BufReader<R>, line: &mut String| -> Result<()> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| Error::Data(format!("checkpoint: {e}")))?;
        if n == 0 {
            return Err(Error::Data("checkpoint: truncated manifest".into()));
        }
        Ok(())
    };
    read_line(&mut reader, &mut line)?;
    if line.trim_end() != MAGIC {
        return Err(bad(format!("bad header {:?}", line.trim_end())));
    }
    let mut entries = Vec::new();
    loop {
        read_line(&mut reader, &mut line)?;
        let l = line.trim_end_matches('\n');
        if l == "end" {
            break;
        }
        let fields: Vec<&str> = l.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(format!("bad manifest line {l:?}")));
        }
        let (r, c) = fields[1]
            .split_once('x')
            .ok_or_else(|| bad(format!("bad shape {:?}", fields[1])))?;
        let rows: usize = r.parse().map_err(|_| bad(format!("bad shape {:?}", fields[1])))?;
        let cols: usize = c.parse().map_err(|_| bad(format!("bad shape {:?}", fields[1])))?;
        let offset: usize = fields[2]
            .parse()
            .map_err(|_| bad(format!("bad offset {:?}", fields[2])))?;
        entries.push((fields[0].to_string(), rows, cols, offset));
    }
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Data(format!("checkpoint: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(bad("binary section is not a whole number of f64".into()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    entries
        .into_iter()
        .map(|(name, rows, cols, offset)| {
            let end = offset + rows * cols;
            if end > values.len() {
                return Err(bad(format!("tensor {name} runs past the end of the file")));
            }
            Ok((name, Tensor::new(rows, cols, values[offset..end].to_vec())?))
        })
        .collect()
}

/// Loads checkpoint values into `store`, which must have exactly the same names and shapes.
pub fn load_into(store: &mut ParamStore, entries: Vec<(String, Tensor)>) -> Result<()> {
    if entries.len() != store.len() {
        return Err(Error::Dimension(format!(
            "checkpoint has {} tensors, model expects {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, tensor) in entries {
        let id = store
            .find(&name)
            .ok_or_else(|| Error::Dimension(format!("checkpoint tensor {name} is not a model parameter")))?;
        let expected = store.value(id).shape();
        if expected != tensor.shape() {
            return Err(Error::Dimension(format!(
                "{name}: checkpoint shape {:?}, model shape {:?}",
                tensor.shape(),
                expected
            )));
        }
        *store.value_mut(id) = tensor;
    }
    Ok(())
}

pub fn load_checkpoint(store: &mut ParamStore, path: &Path) -> Result<()> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_into(store, read_checkpoint(file)?)
}
