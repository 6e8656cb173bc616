//! Gazetteer-enhanced character-level NER.
//!
//! The pipeline is: load a [`corpus::Dataset`] and a [`gazetteer::Gazetteer`],
//! match lexemes with [`matcher::LexemeMatcher`], turn matches into per-token
//! features ([`features::Featurizer`]), train a linear-chain CRF
//! ([`tagger::CrfModel`]) and score it ([`evaluation::evaluate`]).
//! [`analysis`] holds the lexeme-set masking experiments and ablations.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod evaluation;
pub mod features;
pub mod gazetteer;
pub mod matcher;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod tagger;
