//! Attention attribution by modality, heatmaps and attention dumps.

mod compare;
pub mod dump;
pub mod heatmap;
mod profile;

pub use compare::{comparison_summary, comparison_to_csv, compare_profiles, LayerDelta, ProfileComparison, COMPARISON_HEADER};
pub use dump::{decode_dump, encode_dump, read_dump, write_dump};
pub use heatmap::{color, heatmap, render_heatmap, HeadSelect, Heatmap};
pub use profile::{
    aggregate, position_mass_csv, profile_to_csv, visual_fraction, ModalityProfile, QueryFilter, PROFILE_HEADER,
};
