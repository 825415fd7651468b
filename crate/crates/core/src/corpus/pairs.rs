use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CorpusError, FamilyCode};

/// A natural photo / tactile drawing pair.
///
/// Image references are paths, resolved against an image root at use time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePair {
    pub pair_id: String,
    pub natural_ref: String,
    pub tactile_ref: String,
    pub object_class: String,
    pub family: FamilyCode,
}

impl ImagePair {
    pub fn natural_path(&self, root: &Path) -> PathBuf {
        root.join(&self.natural_ref)
    }

    pub fn tactile_path(&self, root: &Path) -> PathBuf {
        root.join(&self.tactile_ref)
    }
}

/// Parses a pairs CSV (`pair_id,natural_ref,tactile_ref,object_class,family`).
pub fn parse_pairs(reader: impl Read) -> Result<BTreeMap<String, ImagePair>, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut pairs = BTreeMap::new();
    for row in rdr.deserialize::<ImagePair>() {
        let pair = row.map_err(|e| CorpusError::MalformedPairs(e.to_string()))?;
        if pair.pair_id.is_empty() || pair.object_class.is_empty() {
            return Err(CorpusError::MalformedPairs(format!(
                "pair {:?} needs a non-empty id and object class",
                pair.pair_id
            )));
        }
        if pairs.contains_key(&pair.pair_id) {
            return Err(CorpusError::MalformedPairs(format!(
                "duplicate pair id {:?}",
                pair.pair_id
            )));
        }
        pairs.insert(pair.pair_id.clone(), pair);
    }
    Ok(pairs)
}

pub fn read_pairs(path: &Path) -> Result<BTreeMap<String, ImagePair>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_pairs(file)
}

pub fn write_pairs<'a>(
    pairs: impl IntoIterator<Item = &'a ImagePair>,
    out: impl Write,
) -> Result<(), CorpusError> {
    let mut wtr = csv::Writer::from_writer(out);
    for pair in pairs {
        wtr.serialize(pair)
            .map_err(|e| CorpusError::MalformedPairs(e.to_string()))?;
    }
    wtr.flush()
        .map_err(|e| CorpusError::MalformedPairs(e.to_string()))
}
