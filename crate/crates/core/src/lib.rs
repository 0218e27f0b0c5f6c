pub mod corpus;
pub mod lexicon;
pub mod prompting;
pub mod client;
pub mod metrics;
pub mod stats;
pub mod finetune;
pub mod par;
pub mod audit;
pub mod synth;
