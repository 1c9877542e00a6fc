//! SMILES tokenization and the LoRA-adapted molecular transformer.

mod encoder;
mod vocab;

pub use encoder::{
    adapter_parameter_count, is_adapter, is_output_projection, trainable_parameter_fraction, MolMode, MolecularConfig,
    MolecularEncoder, PREFIX,
};
pub use vocab::{tokenize_smiles, SmilesVocabulary, CLS, PAD, UNK};

#[cfg(test)]
mod tests;
