//! Spectrum records: parsing, annotation checks, scaffold keys, the
//! scaffold-disjoint split and synthetic corpora.

mod parse;
mod record;
mod smiles;
mod split;
mod synth;

pub use parse::{import_peak_table, parse_bytes, parse_records, read_records, write_records, ParseIssue, ParseReport};
pub use record::{is_valid_inchikey, scaffold_key, Peak, ScaffoldKey, SpectrumRecord};
pub use smiles::validate_smiles;
pub use split::{scaffold_disjoint_split, DatasetSplit, Side};
pub use synth::{fragment_alphabet, generate_synthetic_corpus, synthetic_inchikey, Fragment, SynthParams};
