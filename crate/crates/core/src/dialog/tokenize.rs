//! Byte-level tokenization of conversation records with an assistant-only loss mask.

use super::record::{ConversationRecord, Role, Segment};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Special {
    Bos,
    System,
    User,
    Assistant,
    EndOfTurn,
}

pub trait Tokenizer {
    fn encode(&self, text: &str) -> Vec<u32>;
    /// Decodes text tokens; special tokens are dropped.
    fn decode(&self, ids: &[u32]) -> String;
    fn special(&self, which: Special) -> u32;
    fn vocab_size(&self) -> usize;
}

/// UTF-8 bytes map to ids 0..=255; role and turn markers follow.
#[derive(Clone, Copy, Debug, Default)]
pub struct ByteTokenizer;

impl Tokenizer for ByteTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    fn decode(&self, ids: &[u32]) -> String {
        let bytes: Vec<u8> = ids.iter().filter(|&&i| i < 256).map(|&i| i as u8).collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    fn special(&self, which: Special) -> u32 {
        256 + which as u32
    }

    fn vocab_size(&self) -> usize {
        261
    }
}

/// Position in the token stream where a visual sequence is spliced in
/// (before `ids[position]`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MediaSlot {
    pub position: usize,
    pub media: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedDialog {
    pub ids: Vec<u32>,
    /// 1 on assistant content tokens and assistant end-of-turn tokens.
    pub mask: Vec<u8>,
    pub media_slots: Vec<MediaSlot>,
}

impl TokenizedDialog {
    pub fn n_supervised(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

fn role_marker(role: Role) -> Special {
    match role {
        Role::System => Special::System,
        Role::User => Special::User,
        Role::Assistant => Special::Assistant,
    }
}

fn push_turns<T: Tokenizer + ?Sized>(
    record: &ConversationRecord,
    turns: &[super::record::Turn],
    tok: &T,
    out: &mut TokenizedDialog,
) -> Result<()> {
    for turn in turns {
        out.ids.push(tok.special(role_marker(turn.role)));
        out.mask.push(0);
        let supervised = u8::from(turn.role == Role::Assistant);
        for seg in &turn.segments {
            match seg {
                Segment::Text { text } => {
                    let ids = tok.encode(text);
                    out.mask.extend(std::iter::repeat_n(supervised, ids.len()));
                    out.ids.extend(ids);
                }
                Segment::Image { image } => {
                    if *image >= record.media.len() {
                        return Err(Error::Validation(format!(
                            "record {:?}: image segment {image} does not resolve",
                            record.id
                        )));
                    }
                    out.media_slots.push(MediaSlot { position: out.ids.len(), media: *image });
                }
            }
        }
        out.ids.push(tok.special(Special::EndOfTurn));
        out.mask.push(supervised);
    }
    Ok(())
}

/// `[BOS] (role-marker segments… EOT)*` with media slots recorded in place of image segments.
pub fn tokenize_with_loss_mask<T: Tokenizer + ?Sized>(record: &ConversationRecord, tok: &T) -> Result<TokenizedDialog> {
    let mut out = TokenizedDialog { ids: vec![tok.special(Special::Bos)], mask: vec![0], media_slots: Vec::new() };
    push_turns(record, &record.turns, tok, &mut out)?;
    if out.n_supervised() == 0 {
        log::warn!("record {:?} has no supervised tokens", record.id);
    }
    Ok(out)
}

/// Prompt for generating the answer of turn `turn_index` (an assistant turn):
/// every earlier turn followed by the assistant marker.
pub fn tokenize_prompt<T: Tokenizer + ?Sized>(record: &ConversationRecord, turn_index: usize, tok: &T) -> Result<TokenizedDialog> {
    if record.turns.get(turn_index).map(|t| t.role) != Some(Role::Assistant) {
        return Err(Error::Input(format!("turn {turn_index} of {:?} is not an assistant turn", record.id)));
    }
    let mut out = TokenizedDialog { ids: vec![tok.special(Special::Bos)], mask: vec![0], media_slots: Vec::new() };
    push_turns(record, &record.turns[..turn_index], tok, &mut out)?;
    out.ids.push(tok.special(Special::Assistant));
    out.mask.push(0);
    Ok(out)
}
