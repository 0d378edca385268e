//! Byte-level tokenizer with a handful of atomic special tokens.
//!
//! Ids `0..=255` are raw bytes. Specials follow: `PAD`, `BOS`, `EOS`, `SEP`,
//! `YES`, `NO` and the subject tags `SUBJ1..SUBJ3`. In text, specials are
//! spelled `<pad>`, `<bos>`, `<eos>`, `<sep>`, `<yes>`, `<no>` and
//! `subject1`..`subject3`; encoding recognises those spellings, so decoding
//! any encoded byte string gives the original bytes back.

pub type TokenId = u32;

pub const PAD: TokenId = 256;
pub const BOS: TokenId = 257;
pub const EOS: TokenId = 258;
pub const SEP: TokenId = 259;
pub const YES: TokenId = 260;
pub const NO: TokenId = 261;
pub const SUBJ1: TokenId = 262;
pub const SUBJ2: TokenId = 263;
pub const SUBJ3: TokenId = 264;

pub const VOCAB_SIZE: usize = 265;
pub const TOKENIZER_VERSION: u32 = 1;

const SPECIALS: [(TokenId, &[u8]); 9] = [
    (PAD, b"<pad>"),
    (BOS, b"<bos>"),
    (EOS, b"<eos>"),
    (SEP, b"<sep>"),
    (YES, b"<yes>"),
    (NO, b"<no>"),
    (SUBJ1, b"subject1"),
    (SUBJ2, b"subject2"),
    (SUBJ3, b"subject3"),
];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tokenizer;

impl Tokenizer {
    pub fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        self.encode_bytes(text.as_bytes())
    }

    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<TokenId> {
        let mut out = Vec::with_capacity(bytes.len());
        let mut i = 0;
        'outer: while i < bytes.len() {
            for (id, spelling) in SPECIALS {
                if bytes[i..].starts_with(spelling) {
                    out.push(id);
                    i += spelling.len();
                    continue 'outer;
                }
            }
            out.push(TokenId::from(bytes[i]));
            i += 1;
        }
        out
    }

    pub fn decode_bytes(&self, tokens: &[TokenId]) -> Vec<u8> {
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            match t {
                0..=255 => out.push(t as u8),
                _ => match SPECIALS.iter().find(|(id, _)| *id == t) {
                    Some((_, spelling)) => out.extend_from_slice(spelling),
                    None => out.extend_from_slice(b"<unk>"),
                },
            }
        }
        out
    }

    /// Lossy for byte sequences that are not UTF-8.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        String::from_utf8_lossy(&self.decode_bytes(tokens)).into_owned()
    }

    /// Subject tag token for a 1-based subject ordinal.
    pub fn subject_token(ordinal: usize) -> Option<TokenId> {
        match ordinal {
            1 => Some(SUBJ1),
            2 => Some(SUBJ2),
            3 => Some(SUBJ3),
            _ => None,
        }
    }

    pub fn is_special(token: TokenId) -> bool {
        token >= PAD
    }

    /// Word-level tokens: whitespace-separated runs with each ASCII
    /// punctuation character split off on its own.
    pub fn words(text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let mut current = String::new();
            for c in chunk.chars() {
                if c.is_ascii_punctuation() {
                    if !current.is_empty() {
                        out.push(std::mem::take(&mut current));
                    }
                    out.push(c.to_string());
                } else {
                    current.push(c);
                }
            }
            if !current.is_empty() {
                out.push(current);
            }
        }
        out
    }
}
