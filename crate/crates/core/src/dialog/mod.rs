//! Unified multi-turn multi-modal dialog format, task converters and loss masking.

pub mod convert;
pub mod coords;
pub mod record;
pub mod tokenize;

pub use convert::{
    convert_classification, convert_detection, convert_grounding, convert_pose, convert_som, convert_vqa,
    BoxAnnotation, ImageRef, Keypoint, Mark, MarkShape, TaskSample,
};
pub use coords::{parse_box, textualize_box, BBox};
pub use record::{ConversationRecord, Media, Role, Segment, Tags, Turn};
pub use tokenize::{tokenize_prompt, tokenize_with_loss_mask, ByteTokenizer, MediaSlot, Special, TokenizedDialog, Tokenizer};
