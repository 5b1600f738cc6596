//! Page records in, cleaned and ordered text out, emitted as conversation
//! records. Includes a synthetic page generator with exact ground truth.

pub mod merge;
pub mod page;
pub mod qa;
pub mod synth;

pub use merge::{clean_page, merge_splits, reading_order, CleanPage, MergeParams};
pub use page::{check_unicode, PageRecord, TextSpan, UnicodeVerdict};
pub use qa::{layout_regions, page_to_qa, LayoutClass, LayoutRegion, OcrMode};
pub use synth::{synth_page, GroundTruth, SynthParams};
