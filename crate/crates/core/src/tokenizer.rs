//! Word-level vocabulary with byte fallback and the reserved control tokens.
//!
//! Text is split on whitespace. A piece that is a known word becomes one
//! token, a piece equal to a table marker becomes its control token, and
//! anything else is spelled out as byte tokens. Byte-spelled pieces are
//! separated from their neighbours by an explicit space byte so decoding can
//! restore word boundaries.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::table::{CELL_SEP, NULL_ROW, ROW_SEP};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const NEWROW: TokenId = 4;
pub const NULL: TokenId = 5;

pub const NUM_SPECIALS: usize = 6;
const BYTE_BASE: usize = NUM_SPECIALS;
/// Specials plus one token per byte value.
pub const MIN_VOCAB: usize = NUM_SPECIALS + 256;

const SPECIAL_STRINGS: [&str; NUM_SPECIALS] = ["<pad>", "<bos>", "<eos>", CELL_SEP, ROW_SEP, NULL_ROW];

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

pub fn is_control(id: TokenId) -> bool {
    (id as usize) < NUM_SPECIALS
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, TokenId>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn base() -> Self {
        let mut id_to_token: Vec<String> = SPECIAL_STRINGS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend((0..=255u8).map(byte_token));
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Self {
            token_to_id,
            id_to_token,
        }
    }

    /// Builds a vocabulary from the most frequent whitespace-delimited words
    /// of `corpus`; equal counts are ordered lexicographically.
    pub fn train<S: AsRef<str>>(corpus: &[S], max_size: usize) -> Result<Self> {
        if max_size < MIN_VOCAB {
            return Err(Error::Config(format!(
                "vocabulary size {max_size} below minimum {MIN_VOCAB}"
            )));
        }
        let mut vocab = Self::base();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for line in corpus {
            for w in line.as_ref().split_whitespace() {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !vocab.token_to_id.contains_key(*w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        for (w, _) in words.into_iter().take(max_size - MIN_VOCAB) {
            let id = vocab.id_to_token.len() as TokenId;
            vocab.id_to_token.push(w.to_string());
            vocab.token_to_id.insert(w.to_string(), id);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    fn is_byte(id: TokenId) -> bool {
        (BYTE_BASE..BYTE_BASE + 256).contains(&(id as usize))
    }

    pub fn encode(&self, s: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut prev_bytes = false;
        for (i, piece) in s.split_whitespace().enumerate() {
            let marker = match piece {
                CELL_SEP => Some(SEP),
                ROW_SEP => Some(NEWROW),
                NULL_ROW => Some(NULL),
                _ => None,
            };
            let word = marker.or_else(|| self.id(piece).filter(|&id| !Self::is_byte(id) && !is_control(id)));
            match word {
                Some(id) => {
                    if prev_bytes {
                        out.push((BYTE_BASE + b' ' as usize) as TokenId);
                    }
                    out.push(id);
                    prev_bytes = false;
                }
                None => {
                    if i > 0 {
                        out.push((BYTE_BASE + b' ' as usize) as TokenId);
                    }
                    out.extend(piece.bytes().map(|b| (BYTE_BASE + b as usize) as TokenId));
                    prev_bytes = true;
                }
            }
        }
        out
    }

    /// Encodes cells one at a time joined by SEP. Empty cells contribute no tokens.
    pub fn encode_cells<S: AsRef<str>>(&self, cells: &[S]) -> Vec<TokenId> {
        let mut out = Vec::new();
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                out.push(SEP);
            }
            out.extend(self.encode(c.as_ref()));
        }
        out
    }

    /// Splits on SEP and decodes each cell. Control tokens are dropped and the
    /// text is made a legal cell, so the result always satisfies the cell invariant.
    pub fn decode_cells(&self, ids: &[TokenId]) -> Result<Vec<String>> {
        ids.split(|&t| t == SEP)
            .map(|cell| {
                let kept: Vec<TokenId> = cell.iter().copied().filter(|&t| !is_control(t)).collect();
                Ok(crate::table::sanitize_cell(&self.decode(&kept)?))
            })
            .collect()
    }

    /// Inverse of [`Vocabulary::encode`] up to whitespace normalization.
    /// PAD, BOS and EOS are dropped.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut bytes: Vec<u8> = Vec::new();
        let mut prev_word = false;
        for &id in ids {
            let tok = self.token(id).ok_or(Error::UnknownToken(id))?;
            if matches!(id, PAD | BOS | EOS) {
                continue;
            }
            if Self::is_byte(id) {
                bytes.push((id as usize - BYTE_BASE) as u8);
                prev_word = false;
            } else {
                if prev_word {
                    bytes.push(b' ');
                }
                bytes.extend_from_slice(tok.as_bytes());
                prev_word = true;
            }
        }
        let text = String::from_utf8_lossy(&bytes);
        Ok(text.split_whitespace().collect::<Vec<_>>().join(" "))
    }

    /// Writes `token<TAB>id` lines, specials first.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, t) in self.id_to_token.iter().enumerate() {
            writeln!(out, "{t}\t{i}")?;
        }
        out.flush()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let base = Self::base();
        let mut id_to_token = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Data(format!("vocabulary: {e}")))?;
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Data(format!("vocabulary line {}: missing tab", n + 1)))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::Data(format!("vocabulary line {}: bad id {id:?}", n + 1)))?;
            if id != n {
                return Err(Error::Data(format!("vocabulary line {}: id {id} out of order", n + 1)));
            }
            id_to_token.push(tok.to_string());
        }
        if id_to_token.len() < MIN_VOCAB || id_to_token[..MIN_VOCAB] != base.id_to_token[..] {
            return Err(Error::Data("vocabulary does not start with the reserved tokens".into()));
        }
        let token_to_id: HashMap<String, TokenId> = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        if token_to_id.len() != id_to_token.len() {
            return Err(Error::Data("vocabulary has duplicate tokens".into()));
        }
        Ok(Self {
            token_to_id,
            id_to_token,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(file))
    }
}
