//! Synthetic box-score style documents with their target tables.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::table::Table;

const FIRST_NAMES: [&str; 24] = [
    "Kevin", "Stephen", "Chris", "James", "Deron", "Tony", "Kyle", "Paul", "Marcus", "Jamal", "Andre", "Elton",
    "Dwight", "Blake", "Rudy", "Jrue", "Klay", "Tyson", "Derrick", "Gordon", "Ricky", "Nikola", "Luol", "Serge",
];

const LAST_NAMES: [&str; 24] = [
    "Durant", "Curry", "Paul", "Harden", "Williams", "Parker", "Lowry", "George", "Smart", "Crawford", "Iguodala",
    "Brand", "Howard", "Griffin", "Gobert", "Holiday", "Thompson", "Chandler", "Rose", "Hayward", "Rubio", "Vucevic",
    "Deng", "Ibaka",
];

const DISTRACTORS: [&str; 6] = [
    "The crowd was loud all night .",
    "The game went down to the wire .",
    "Both teams struggled from deep .",
    "The bench played a key role .",
    "It was a physical contest .",
    "The home fans left happy .",
];

/// One numeric statistic column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatColumn {
    /// Header text.
    pub name: String,
    /// Word used in sentences after the number.
    pub noun: String,
    pub max: u32,
}

impl StatColumn {
    pub fn new(name: &str, noun: &str, max: u32) -> Self {
        Self {
            name: name.into(),
            noun: noun.into(),
            max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub n_instances: usize,
    pub rows_min: usize,
    pub rows_max: usize,
    pub columns: Vec<StatColumn>,
    /// Number of distinct full names drawn from.
    pub name_pool: usize,
    pub shuffle_sentences: bool,
    /// Sentences without table content added to each document.
    pub distractor_sentences: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_instances: 2000,
            rows_min: 2,
            rows_max: 6,
            columns: vec![StatColumn::new("PTS", "points", 40), StatColumn::new("AST", "assists", 15)],
            name_pool: 24,
            shuffle_sentences: true,
            distractor_sentences: 0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    /// Checks the spec on its own and against a model with `slots` row slots,
    /// which must leave at least two slots free.
    pub fn validate(&self, slots: Option<usize>) -> Result<()> {
        if self.rows_min > self.rows_max {
            return Err(Error::Config(format!(
                "rows_min {} exceeds rows_max {}",
                self.rows_min, self.rows_max
            )));
        }
        if self.columns.is_empty() {
            return Err(Error::Config("at least one stat column is required".into()));
        }
        let available = FIRST_NAMES.len() * LAST_NAMES.len();
        if self.name_pool > available {
            return Err(Error::Config(format!(
                "name_pool {} exceeds the {available} available names",
                self.name_pool
            )));
        }
        if self.name_pool < self.rows_max {
            return Err(Error::Config(format!(
                "name_pool {} is smaller than rows_max {}",
                self.name_pool, self.rows_max
            )));
        }
        if let Some(m) = slots {
            if self.rows_max + 2 > m {
                return Err(Error::Config(format!(
                    "rows_max {} must be at most {} for {m} row slots",
                    self.rows_max,
                    m.saturating_sub(2)
                )));
            }
        }
        Ok(())
    }

    fn names(&self) -> Vec<String> {
        // Deterministic walk over the product. The first 24 names use each first
        // and last name once; larger pools start reusing them.
        let mut out = Vec::with_capacity(self.name_pool);
        let (nf, nl) = (FIRST_NAMES.len(), LAST_NAMES.len());
        for k in 0..self.name_pool {
            let f = k % nf;
            let l = (k / nf + k) % nl;
            out.push(format!("{} {}", FIRST_NAMES[f], LAST_NAMES[l]));
        }
        out
    }
}

fn sentence(name: &str, columns: &[StatColumn], values: &[u32]) -> String {
    let parts: Vec<String> = columns
        .iter()
        .zip(values)
        .map(|(c, v)| format!("{v} {}", c.noun))
        .collect();
    let stats = match parts.len() {
        1 => parts[0].clone(),
        n => format!("{} and {}", parts[..n - 1].join(" , "), parts[n - 1]),
    };
    format!("{name} scored {stats} .")
}

/// Generates `spec.n_instances` documents and tables. Names within one
/// table are distinct; row order follows the sentence order before shuffling.
pub fn datagen(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate(None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool = spec.names();
    let mut header = vec![String::new()];
    header.extend(spec.columns.iter().map(|c| c.name.clone()));
    let mut sources = Vec::with_capacity(spec.n_instances);
    let mut tables = Vec::with_capacity(spec.n_instances);
    for _ in 0..spec.n_instances {
        let rows = rng.random_range(spec.rows_min..=spec.rows_max);
        let names: Vec<&String> = pool.choose_multiple(&mut rng, rows).collect();
        let mut body = Vec::with_capacity(rows);
        let mut sentences = Vec::new();
        for name in names {
            let values: Vec<u32> = spec.columns.iter().map(|c| rng.random_range(0..=c.max)).collect();
            sentences.push(sentence(name, &spec.columns, &values));
            let mut row = vec![name.clone()];
            row.extend(values.iter().map(|v| v.to_string()));
            body.push(row);
        }
        for _ in 0..spec.distractor_sentences {
            sentences.push(DISTRACTORS.choose(&mut rng).expect("nonempty").to_string());
        }
        if spec.shuffle_sentences {
            sentences.shuffle(&mut rng);
        }
        sources.push(sentences.join(" "));
        tables.push(Table::new(header.clone(), body));
    }
    Ok(Dataset { sources, tables })
}
