//! Synthetic scenes, the frozen encoder stub, captions and probe sets.

pub mod io;
mod probes;
pub mod vocab;
mod world;

pub use probes::{
    gen_pretrain_corpus, gen_probe_set, measure_rates, CaptionRecord, CompanionRate, Corpus, EditTag, Flavor,
    ProbeKind, ProbeRecord, ProbeSet, MAX_RETRIES, REFERENCE_SCENES, TOP_K,
};
pub use world::{fnv1a, CoOccurrence, Placed, Scene, World, WorldSpec, DEFAULT_PAIRS, GENERATOR_VERSION};
