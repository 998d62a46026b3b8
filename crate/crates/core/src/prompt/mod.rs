//! Prompt compilation and the interchange text format.

mod compile;
mod interchange;

use thiserror::Error;

use crate::ids::PageId;

pub use compile::{
    compile, compile_page, fingerprint, identity_prompt, IdentityPrompt, PagePrompt, PromptBundle,
    PromptSource,
};
pub(crate) use compile::{
    compile_any, english_list, indefinite_article, mentions, starts_with_article, style_head,
    subject_phrase,
};
pub use interchange::{
    export_interchange, export_record, export_records, parse_interchange, parse_records,
    InterchangeRecord, ParseError, FRAME_LIST_FLAG, ID_PROMPT_FLAG,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("story has no pages")]
    EmptyStory,
    #[error("unknown page {0}")]
    UnknownPage(PageId),
}
