use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Media {
    pub path: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segment {
    Text { text: String },
    Image { image: usize },
}

impl Segment {
    pub fn text(s: impl Into<String>) -> Self {
        Segment::Text { text: s.into() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub segments: Vec<Segment>,
}

impl Turn {
    pub fn user(segments: Vec<Segment>) -> Self {
        Turn { role: Role::User, segments }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Turn { role: Role::Assistant, segments: vec![Segment::text(text)] }
    }

    /// Concatenated text segments.
    pub fn text(&self) -> String {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Text { text } => Some(text.as_str()),
                Segment::Image { .. } => None,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tags {
    pub domain: String,
    pub source: String,
}

/// One multi-turn, multi-modal training sample. This is the single on-disk
/// training format; every task converter emits it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationRecord {
    pub id: String,
    pub media: Vec<Media>,
    pub turns: Vec<Turn>,
    pub tags: Tags,
}

impl ConversationRecord {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("record {:?}: {msg}", self.id)));
        let mut turns = self.turns.iter().peekable();
        if turns.peek().map(|t| t.role) == Some(Role::System) {
            turns.next();
        }
        let mut expect = Role::User;
        let mut n_assistant = 0;
        for (i, turn) in turns.enumerate() {
            if turn.role != expect {
                return fail(format!("turn {i} has role {:?}, expected {:?}", turn.role, expect));
            }
            for seg in &turn.segments {
                if let Segment::Image { image } = seg {
                    if turn.role == Role::Assistant {
                        return fail("assistant turns cannot contain images".into());
                    }
                    if *image >= self.media.len() {
                        return fail(format!("image segment {image} does not resolve ({} media)", self.media.len()));
                    }
                }
            }
            if turn.role == Role::Assistant {
                n_assistant += 1;
            }
            expect = if expect == Role::User { Role::Assistant } else { Role::User };
        }
        if n_assistant == 0 {
            return fail("no assistant turn".into());
        }
        Ok(())
    }

    pub fn assistant_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.role == Role::Assistant)
    }

    pub fn first_assistant_text(&self) -> Option<String> {
        self.assistant_turns().next().map(Turn::text)
    }
}
