//! Byte-level BPE compatible with GPT-2 `vocab.json` / `merges.txt` files.
//!
//! Text is split with the GPT-2 pre-tokenization pattern, each piece's bytes
//! are mapped to their byte tokens, and adjacent symbols are merged by
//! ascending merge rank until no ranked pair remains. Because every byte has
//! a token, encoding is lossless for arbitrary input.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use fancy_regex::Regex;
use thiserror::Error;

use super::TokenId;

pub const VOCAB_FILE: &str = "vocab.json";
pub const MERGES_FILE: &str = "merges.txt";
pub const END_OF_TEXT: &str = "<|endoftext|>";

const GPT2_PATTERN: &str = r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot read {path}")]
    Io { path: String, source: std::io::Error },
    #[error("vocab JSON does not parse: {0}")]
    Vocab(String),
    #[error("merges line {line}: {reason}")]
    Merges { line: usize, reason: String },
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(TokenId),
}

/// GPT-2's reversible byte → printable-char table.
pub fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut printable = vec![false; 256];
    for range in [(b'!', b'~'), (0xA1u8, 0xACu8), (0xAEu8, 0xFFu8)] {
        for b in range.0..=range.1 {
            printable[b as usize] = true;
        }
    }
    let mut extra = 0u32;
    for b in 0..256usize {
        table[b] = if printable[b] {
            char::from_u32(b as u32).unwrap()
        } else {
            let c = char::from_u32(256 + extra).unwrap();
            extra += 1;
            c
        };
    }
    table
}

#[derive(Debug, Clone)]
pub struct Tokenizer {
    encoder: HashMap<String, TokenId>,
    decoder: Vec<Option<Vec<u8>>>,
    byte_ids: [TokenId; 256],
    /// `(left, right) → (rank, merged)`
    merges: HashMap<(TokenId, TokenId), (u32, TokenId)>,
    merge_list: Vec<(String, String)>,
    pattern: Regex,
}

impl Tokenizer {
    pub fn from_dir(dir: &Path) -> Result<Self, TokenizerError> {
        Self::from_files(&dir.join(VOCAB_FILE), &dir.join(MERGES_FILE))
    }

    pub fn from_files(vocab: &Path, merges: &Path) -> Result<Self, TokenizerError> {
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|source| TokenizerError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        Self::from_strs(&read(vocab)?, &read(merges)?)
    }

    pub fn from_strs(vocab_json: &str, merges_txt: &str) -> Result<Self, TokenizerError> {
        let encoder: HashMap<String, TokenId> =
            serde_json::from_str(vocab_json).map_err(|e| TokenizerError::Vocab(e.to_string()))?;
        let mut merge_list = Vec::new();
        for (idx, line) in merges_txt.lines().enumerate() {
            if (idx == 0 && line.starts_with("#version")) || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merge_list.push((idx + 1, a.to_string(), b.to_string()))
                }
                _ => {
                    return Err(TokenizerError::Merges {
                        line: idx + 1,
                        reason: format!("expected two space-separated symbols, got {line:?}"),
                    })
                }
            }
        }
        Self::build(encoder, merge_list)
    }

    /// A tokenizer whose vocabulary is the 256 byte tokens followed by the
    /// products of `merges`, in order.
    pub fn byte_level(merges: &[(&str, &str)]) -> Result<Self, TokenizerError> {
        let table = bytes_to_unicode();
        let mut encoder: HashMap<String, TokenId> = table
            .iter()
            .enumerate()
            .map(|(b, c)| (c.to_string(), b as TokenId))
            .collect();
        let mut list = Vec::new();
        for (i, (a, b)) in merges.iter().enumerate() {
            let merged = format!("{a}{b}");
            let next = encoder.len() as TokenId;
            encoder.entry(merged).or_insert(next);
            list.push((i + 1, a.to_string(), b.to_string()));
        }
        Self::build(encoder, list)
    }

    fn build(
        encoder: HashMap<String, TokenId>,
        merge_list: Vec<(usize, String, String)>,
    ) -> Result<Self, TokenizerError> {
        let table = bytes_to_unicode();
        let size = encoder.values().map(|&id| id as usize + 1).max().unwrap_or(0);
        let mut reverse = HashMap::with_capacity(256);
        for (b, c) in table.iter().enumerate() {
            reverse.insert(*c, b as u8);
        }
        let mut decoder = vec![None; size];
        for (token, &id) in &encoder {
            // Tokens containing chars outside the byte table (none in GPT-2)
            // decode as their UTF-8 text.
            let bytes: Vec<u8> = if token.chars().all(|c| reverse.contains_key(&c)) {
                token.chars().map(|c| reverse[&c]).collect()
            } else {
                token.as_bytes().to_vec()
            };
            decoder[id as usize] = Some(bytes);
        }
        let mut byte_ids = [0; 256];
        for (b, c) in table.iter().enumerate() {
            byte_ids[b] = *encoder
                .get(&c.to_string())
                .ok_or_else(|| TokenizerError::Vocab(format!("byte token {c:?} (byte {b}) missing from vocab")))?;
        }
        let mut merges = HashMap::with_capacity(merge_list.len());
        for (rank, (line, a, b)) in merge_list.iter().enumerate() {
            let lookup = |s: &str| {
                encoder.get(s).copied().ok_or_else(|| TokenizerError::Merges {
                    line: *line,
                    reason: format!("symbol {s:?} is not in the vocabulary"),
                })
            };
            let (left, right, merged) = (lookup(a)?, lookup(b)?, lookup(&format!("{a}{b}"))?);
            merges.entry((left, right)).or_insert((rank as u32, merged));
        }
        Ok(Self {
            encoder,
            decoder,
            byte_ids,
            merges,
            merge_list: merge_list.into_iter().map(|(_, a, b)| (a, b)).collect(),
            pattern: Regex::new(GPT2_PATTERN).expect("static pattern compiles"),
        })
    }

    /// One past the largest id in the vocabulary.
    pub fn vocab_size(&self) -> usize {
        self.decoder.len()
    }

    pub fn token_id(&self, token: &str) -> Option<TokenId> {
        self.encoder.get(token).copied()
    }

    pub fn eos_id(&self) -> Option<TokenId> {
        self.token_id(END_OF_TEXT)
    }

    pub fn token_bytes(&self, id: TokenId) -> Option<&[u8]> {
        self.decoder.get(id as usize).and_then(|b| b.as_deref())
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merge_list
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        self.encode_str_into(text, &mut out);
        out
    }

    /// Encodes arbitrary bytes. Valid UTF-8 runs are pre-tokenized as text;
    /// each invalid byte becomes its own piece.
    pub fn encode_bytes(&self, bytes: &[u8]) -> Vec<TokenId> {
        let mut out = Vec::new();
        for chunk in bytes.utf8_chunks() {
            self.encode_str_into(chunk.valid(), &mut out);
            for &b in chunk.invalid() {
                out.push(self.byte_ids[b as usize]);
            }
        }
        out
    }

    fn encode_str_into(&self, text: &str, out: &mut Vec<TokenId>) {
        let mut last = 0;
        for m in self.pattern.find_iter(text) {
            // The pattern matches every char, so a match error or a gap can
            // only come from backtrack limits; fall back to raw bytes.
            match m {
                Ok(m) => {
                    if m.start() > last {
                        self.bpe_into(&text.as_bytes()[last..m.start()], out);
                    }
                    self.bpe_into(m.as_str().as_bytes(), out);
                    last = m.end();
                }
                Err(_) => break,
            }
        }
        if last < text.len() {
            self.bpe_into(&text.as_bytes()[last..], out);
        }
    }

    fn bpe_into(&self, piece: &[u8], out: &mut Vec<TokenId>) {
        let mut symbols: Vec<TokenId> = piece.iter().map(|&b| self.byte_ids[b as usize]).collect();
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .filter_map(|w| {
                    self.merges
                        .get(&(w[0], w[1]))
                        .map(|&(rank, merged)| (rank, w[0], w[1], merged))
                })
                .min_by_key(|&(rank, ..)| rank);
            let Some((_, left, right, merged)) = best else {
                break;
            };
            let mut next = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = next;
        }
        out.extend(symbols);
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<u8>, TokenizerError> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(self.token_bytes(id).ok_or(TokenizerError::UnknownId(id))?);
        }
        Ok(out)
    }

    /// Decodes to text, replacing invalid UTF-8 and unknown ids with U+FFFD.
    pub fn decode_lossy(&self, ids: &[TokenId]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            match self.token_bytes(id) {
                Some(b) => bytes.extend_from_slice(b),
                None => bytes.extend_from_slice("\u{FFFD}".as_bytes()),
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    /// Printable rendering of one token: control characters and whitespace
    /// are escaped, a space shows as `␣`, and undecodable bytes as `\xNN`.
    pub fn display_token(&self, id: TokenId) -> String {
        let Some(bytes) = self.token_bytes(id) else {
            return format!("<unk:{id}>");
        };
        let mut out = String::new();
        for chunk in bytes.utf8_chunks() {
            for c in chunk.valid().chars() {
                match c {
                    ' ' => out.push('␣'),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    '\r' => out.push_str("\\r"),
                    c if c.is_control() || c.is_whitespace() => out.push_str(&format!("\\u{{{:x}}}", c as u32)),
                    c => out.push(c),
                }
            }
            for b in chunk.invalid() {
                out.push_str(&format!("\\x{b:02x}"));
            }
        }
        out
    }

    pub fn vocab_json(&self) -> String {
        let mut entries: Vec<(&String, &TokenId)> = self.encoder.iter().collect();
        entries.sort_by_key(|(_, &id)| id);
        let map: serde_json::Map<String, serde_json::Value> = entries
            .into_iter()
            .map(|(k, &v)| (k.clone(), serde_json::Value::from(v)))
            .collect();
        serde_json::to_string(&map).expect("vocab serializes")
    }

    pub fn merges_txt(&self) -> String {
        let mut s = String::from("#version: 0.2\n");
        for (a, b) in &self.merge_list {
            s.push_str(a);
            s.push(' ');
            s.push_str(b);
            s.push('\n');
        }
        s
    }

    pub fn save_dir(&self, dir: &Path) -> Result<(), TokenizerError> {
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|source| TokenizerError::Io {
                path: p.display().to_string(),
                source,
            })
        };
        write(VOCAB_FILE, self.vocab_json())?;
        write(MERGES_FILE, self.merges_txt())
    }
}
