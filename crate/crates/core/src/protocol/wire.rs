//! Tagged text format for structured replies.
//!
//! ```text
//! <think>…</think>
//! <call>{"api_name":"detect","api_params":{"target":"navigation probe"}}</call>
//! <reply>…</reply>
//! ```
//!
//! Blocks appear in this order, separated by `\n`; `think` and `call` are
//! optional. Inside any block `\` is written `\\` and `<` is written `\<`.
//! An unescaped `<` that does not start one of the six tags is kept as text,
//! as is a backslash before any other character.

use serde::{Deserialize, Serialize};

use super::reply::{is_valid_api_name, FunctionCall, StructuredReply};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Think,
    Call,
    Reply,
}

impl Block {
    const ALL: [Block; 3] = [Block::Think, Block::Call, Block::Reply];

    pub fn tag(self) -> &'static str {
        match self {
            Block::Think => "think",
            Block::Call => "call",
            Block::Reply => "reply",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Block {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Parse failure with the byte offset it was detected at.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum ParseError {
    #[error("no non-empty reply block (at byte {offset})")]
    MissingReply { offset: usize },
    #[error("second <{block}> block at byte {offset}; first at byte {first_offset}")]
    DuplicateBlock {
        block: Block,
        offset: usize,
        first_offset: usize,
    },
    #[error("malformed call payload at bytes {start}..{end}: {detail}")]
    MalformedCallPayload { start: usize, end: usize, detail: String },
    #[error("unbalanced tags at byte {offset}: {detail}")]
    UnbalancedTags { offset: usize, detail: String },
    #[error("text outside any block at byte {offset}")]
    UnexpectedContent { offset: usize },
    #[error("<{block}> block at byte {offset} is out of order")]
    OutOfOrder { block: Block, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            Self::MissingReply { offset }
            | Self::DuplicateBlock { offset, .. }
            | Self::UnbalancedTags { offset, .. }
            | Self::UnexpectedContent { offset }
            | Self::OutOfOrder { offset, .. } => *offset,
            Self::MalformedCallPayload { start, .. } => *start,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::MissingReply { .. } => "missing_reply",
            Self::DuplicateBlock { .. } => "duplicate_block",
            Self::MalformedCallPayload { .. } => "malformed_call_payload",
            Self::UnbalancedTags { .. } => "unbalanced_tags",
            Self::UnexpectedContent { .. } => "unexpected_content",
            Self::OutOfOrder { .. } => "out_of_order",
        }
    }
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '<' => out.push_str("\\<"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some(n @ ('\\' | '<')) => out.push(n),
            Some(n) => {
                out.push('\\');
                out.push(n);
            }
            None => out.push('\\'),
        }
    }
    out
}

pub fn render_structured(reply: &StructuredReply) -> String {
    let mut out = format!("<think>{}</think>\n", escape(&reply.thinking));
    if let Some(call) = &reply.calling {
        let payload = serde_json::to_string(call).expect("string maps always serialize");
        out.push_str(&format!("<call>{}</call>\n", escape(&payload)));
    }
    out.push_str(&format!("<reply>{}</reply>", escape(&reply.replying)));
    out
}

#[derive(Debug, Clone, Copy)]
enum Token {
    Text { start: usize, end: usize },
    Open { block: Block, start: usize, end: usize },
    Close { block: Block, start: usize },
}

fn tag_at(bytes: &[u8], at: usize) -> Option<(bool, Block, usize)> {
    let rest = &bytes[at + 1..];
    let (closing, rest) = match rest.first() {
        Some(b'/') => (true, &rest[1..]),
        _ => (false, rest),
    };
    for block in Block::ALL {
        let tag = block.tag().as_bytes();
        if rest.len() > tag.len() && &rest[..tag.len()] == tag && rest[tag.len()] == b'>' {
            let len = 1 + closing as usize + tag.len() + 1;
            return Some((closing, block, at + len));
        }
    }
    None
}

fn tokenize(text: &str) -> Vec<Token> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            b'<' => match tag_at(bytes, i) {
                Some((closing, block, end)) => {
                    if text_start < i {
                        tokens.push(Token::Text { start: text_start, end: i });
                    }
                    tokens.push(if closing {
                        Token::Close { block, start: i }
                    } else {
                        Token::Open { block, start: i, end }
                    });
                    i = end;
                    text_start = end;
                }
                None => i += 1,
            },
            _ => i += 1,
        }
    }
    if text_start < bytes.len() {
        tokens.push(Token::Text {
            start: text_start,
            end: bytes.len(),
        });
    }
    tokens
}

struct Found {
    open: usize,
    start: usize,
    end: usize,
}

fn parse_call(text: &str, found: &Found) -> Result<Option<FunctionCall>, ParseError> {
    let payload = unescape(&text[found.start..found.end]);
    let payload = payload.trim();
    if matches!(payload, "" | "None" | "none" | "null") {
        return Ok(None);
    }
    let malformed = |detail: String| ParseError::MalformedCallPayload {
        start: found.start,
        end: found.end,
        detail,
    };
    let call: FunctionCall = serde_json::from_str(payload).map_err(|e| malformed(e.to_string()))?;
    if !is_valid_api_name(&call.api_name) {
        return Err(malformed(format!("invalid api_name {:?}", call.api_name)));
    }
    Ok(Some(call))
}

/// Parses tagged text into a [`StructuredReply`]. Total: every input yields
/// either a reply or exactly one [`ParseError`].
pub fn parse_structured(text: &str) -> Result<StructuredReply, ParseError> {
    let mut found: [Option<Found>; 3] = [None, None, None];
    let mut open: Option<(Block, usize, usize)> = None;
    let mut last_order: Option<usize> = None;

    for token in tokenize(text) {
        match (open, token) {
            (None, Token::Text { start, end }) => {
                let chunk = &text[start..end];
                if let Some(pos) = chunk.find(|c: char| !c.is_whitespace()) {
                    return Err(ParseError::UnexpectedContent { offset: start + pos });
                }
            }
            (None, Token::Open { block, start, end }) => {
                if let Some(first) = &found[block.index()] {
                    return Err(ParseError::DuplicateBlock {
                        block,
                        offset: start,
                        first_offset: first.open,
                    });
                }
                if last_order.is_some_and(|last| block.index() < last) {
                    return Err(ParseError::OutOfOrder { block, offset: start });
                }
                open = Some((block, start, end));
            }
            (None, Token::Close { block, start, .. }) => {
                return Err(ParseError::UnbalancedTags {
                    offset: start,
                    detail: format!("</{block}> without a matching <{block}>"),
                });
            }
            (Some(_), Token::Text { .. }) => {}
            (Some((outer, _, _)), Token::Open { block, start, .. }) => {
                return Err(ParseError::UnbalancedTags {
                    offset: start,
                    detail: format!("<{block}> opened inside <{outer}>"),
                });
            }
            (Some((outer, open_at, content_start)), Token::Close { block, start, .. }) => {
                if block != outer {
                    return Err(ParseError::UnbalancedTags {
                        offset: start,
                        detail: format!("</{block}> closes <{outer}> opened at byte {open_at}"),
                    });
                }
                found[block.index()] = Some(Found {
                    open: open_at,
                    start: content_start,
                    end: start,
                });
                last_order = Some(block.index());
                open = None;
            }
        }
    }
    if let Some((block, open_at, _)) = open {
        return Err(ParseError::UnbalancedTags {
            offset: open_at,
            detail: format!("<{block}> is never closed"),
        });
    }

    let [think, call, reply] = found;
    let replying = match &reply {
        Some(f) => unescape(&text[f.start..f.end]).trim().to_string(),
        None => return Err(ParseError::MissingReply { offset: text.len() }),
    };
    if replying.is_empty() {
        let offset = reply.map(|f| f.open).unwrap_or(text.len());
        return Err(ParseError::MissingReply { offset });
    }
    let calling = match &call {
        Some(f) => parse_call(text, f)?,
        None => None,
    };
    let thinking = think
        .map(|f| unescape(&text[f.start..f.end]).trim().to_string())
        .unwrap_or_default();
    Ok(StructuredReply {
        thinking,
        calling,
        replying,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2() -> StructuredReply {
        StructuredReply::new(
            "The surgeon asks where the navigation probe is; detection can localize it.",
            Some(FunctionCall::new("detect").param("target", "navigation probe")),
            "Running detection.",
        )
    }

    #[test]
    fn no_call_has_two_blocks() {
        let text = render_structured(&StructuredReply::new("t", None, "r"));
        assert_eq!(text, "<think>t</think>\n<reply>r</reply>");
        assert_eq!(text.matches("<think>").count(), 1);
        assert!(!text.contains("<call>"));
    }

    #[test]
    fn detection_call_round_trips() {
        let r = fig2();
        let text = render_structured(&r);
        assert!(text.contains(r#"<call>{"api_name":"detect","api_params":{"target":"navigation probe"}}</call>"#));
        assert_eq!(parse_structured(&text).unwrap(), r);
    }

    #[test]
    fn delimiters_in_text_are_escaped() {
        let r = StructuredReply::new(
            r"a </think> b \ c <reply>",
            Some(FunctionCall::new("x").param("<call>", "</call>\\")),
            r"see </reply> and \< literally\",
        );
        let text = render_structured(&r);
        assert_eq!(parse_structured(&text).unwrap(), r);
    }

    #[test]
    fn escaping_table() {
        assert_eq!(escape(r"a<b\c"), r"a\<b\\c");
        assert_eq!(unescape(r"a\<b\\c"), r"a<b\c");
        assert_eq!(unescape(r"\n"), r"\n");
        assert_eq!(unescape("x\\"), "x\\");
    }

    #[test]
    fn whitespace_is_normalized() {
        let r = parse_structured("\n <think>  t </think>\n\n<reply>\n r \n</reply>  \n").unwrap();
        assert_eq!(r, StructuredReply::new("t", None, "r"));
    }

    #[test]
    fn none_payload_means_no_call() {
        for p in ["", "None", " none ", "null"] {
            let r = parse_structured(&format!("<call>{p}</call><reply>ok</reply>")).unwrap();
            assert_eq!(r.calling, None);
        }
    }

    #[test]
    fn error_kinds() {
        let cases = [
            ("<think>t</think>", "missing_reply"),
            ("<reply>  </reply>", "missing_reply"),
            ("<reply>a</reply><reply>b</reply>", "duplicate_block"),
            ("<call>{nope</call><reply>a</reply>", "malformed_call_payload"),
            (r#"<call>{"api_name":"a b"}</call><reply>a</reply>"#, "malformed_call_payload"),
            ("<reply>a", "unbalanced_tags"),
            ("<reply>a</think>", "unbalanced_tags"),
            ("</reply>", "unbalanced_tags"),
            ("<think><reply>a</reply></think>", "unbalanced_tags"),
            ("hello <reply>a</reply>", "unexpected_content"),
            ("<reply>a</reply><think>t</think>", "out_of_order"),
        ];
        for (text, code) in cases {
            let err = parse_structured(text).unwrap_err();
            assert_eq!(err.code(), code, "{text:?}: {err}");
        }
    }

    #[test]
    fn malformed_payload_carries_span() {
        let text = "<call>{nope}</call><reply>a</reply>";
        match parse_structured(text).unwrap_err() {
            ParseError::MalformedCallPayload { start, end, .. } => assert_eq!(&text[start..end], "{nope}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn offsets_point_at_problem() {
        let text = "<reply>a</reply>\nxyz";
        assert_eq!(parse_structured(text).unwrap_err().offset(), 17);
    }

    #[test]
    fn unknown_angle_brackets_are_text() {
        let r = parse_structured("<reply>a < b and <b>bold</b></reply>").unwrap();
        assert_eq!(r.replying, "a < b and <b>bold</b>");
    }
}
