use std::collections::HashMap;
use std::path::Path;

use proptest::prelude::*;
use slot_core::model::synthetic::gpt2_tokenizer;
use slot_core::Tokenizer;

fn gpt2() -> &'static Tokenizer {
    static TOK: std::sync::OnceLock<Tokenizer> = std::sync::OnceLock::new();
    TOK.get_or_init(gpt2_tokenizer)
}

// Ids produced by the reference JavaScript encoder (gpt-3-encoder 1.1.4).
#[test]
fn frozen_gpt2_ids() {
    let cases: &[(&str, &[u32])] = &[
        ("Hello world", &[15496, 995]),
        (" the quick brown fox", &[262, 2068, 7586, 21831]),
        (
            "1,234 apples!\n\tcafé 😀",
            &[16, 11, 24409, 22514, 0, 198, 197, 66, 1878, 2634, 30325, 222],
        ),
        ("<|endoftext|>", &[27, 91, 437, 1659, 5239, 91, 29]),
        ("I'll don't   spaces", &[40, 1183, 836, 470, 220, 220, 9029]),
    ];
    for (text, ids) in cases {
        assert_eq!(gpt2().encode(text), *ids, "{text:?}");
        assert_eq!(gpt2().decode(ids).unwrap(), text.as_bytes());
    }
    assert_eq!(gpt2().vocab_size(), 50257);
    assert_eq!(gpt2().eos_id(), Some(50256));
}

/// Textbook merge loop over string symbols: repeatedly merge the
/// lowest-ranked adjacent pair everywhere it occurs.
struct ReferenceBpe {
    vocab: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
    byte_chars: Vec<char>,
    pattern: fancy_regex::Regex,
}

impl ReferenceBpe {
    fn load(dir: &Path) -> Self {
        let vocab: HashMap<String, u32> =
            serde_json::from_str(&std::fs::read_to_string(dir.join("vocab.json")).unwrap()).unwrap();
        let ranks = std::fs::read_to_string(dir.join("merges.txt"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("#version") && !l.is_empty())
            .enumerate()
            .map(|(i, l)| {
                let (a, b) = l.split_once(' ').unwrap();
                ((a.to_string(), b.to_string()), i)
            })
            .collect();
        let printable: Vec<u32> = (33..=126).chain(161..=172).chain(174..=255).collect();
        let mut byte_chars = vec!['\0'; 256];
        let mut extra = 0;
        for b in 0..256u32 {
            if printable.contains(&b) {
                byte_chars[b as usize] = char::from_u32(b).unwrap();
            } else {
                byte_chars[b as usize] = char::from_u32(256 + extra).unwrap();
                extra += 1;
            }
        }
        let pattern =
            fancy_regex::Regex::new(r"'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+")
                .unwrap();
        Self {
            vocab,
            ranks,
            byte_chars,
            pattern,
        }
    }

    fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for piece in self.pattern.find_iter(text) {
            let piece = piece.unwrap().as_str();
            let mut word: Vec<String> = piece.bytes().map(|b| self.byte_chars[b as usize].to_string()).collect();
            while word.len() > 1 {
                let best = word
                    .windows(2)
                    .filter_map(|w| {
                        self.ranks
                            .get(&(w[0].clone(), w[1].clone()))
                            .map(|&r| (r, w[0].clone(), w[1].clone()))
                    })
                    .min();
                let Some((_, a, b)) = best else { break };
                let mut merged = Vec::with_capacity(word.len());
                let mut i = 0;
                while i < word.len() {
                    if i + 1 < word.len() && word[i] == a && word[i + 1] == b {
                        merged.push(format!("{a}{b}"));
                        i += 2;
                    } else {
                        merged.push(word[i].clone());
                        i += 1;
                    }
                }
                word = merged;
            }
            out.extend(word.iter().map(|s| self.vocab[s]));
        }
        out
    }
}

fn assets() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../assets/gpt2"))
}

#[test]
fn agrees_with_reference_merger() {
    let reference = ReferenceBpe::load(assets());
    let words = [
        "the",
        "farmer",
        "bought",
        "12",
        "apples",
        "and",
        "1,250",
        "sheep",
        "tokenization",
        "isn't",
        "we'll",
        "über",
        "naïve",
        "日本語",
        "😀",
        "\n\n",
        "  ",
        "$4.50",
        "-17",
        "x²",
        "CamelCaseWord",
        "http://a.b/c?d=e",
        "multiplication",
        "Question:",
        "Answer:",
        "####",
        "\t",
        "don't",
    ];
    let mut rng = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = || {
        rng ^= rng << 13;
        rng ^= rng >> 7;
        rng ^= rng << 17;
        rng
    };
    for _ in 0..100 {
        let n = 1 + (next() % 12) as usize;
        let mut text = String::new();
        for _ in 0..n {
            let w = words[(next() % words.len() as u64) as usize];
            if next() % 3 != 0 {
                text.push(' ');
            }
            text.push_str(w);
        }
        assert_eq!(gpt2().encode(&text), reference.encode(&text), "{text:?}");
    }
}

#[test]
fn loads_from_files_on_disk() {
    let tok = Tokenizer::from_dir(assets()).unwrap();
    assert_eq!(tok.encode("Hello world"), [15496, 995]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn byte_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..48)) {
        let ids = gpt2().encode_bytes(&bytes);
        prop_assert_eq!(gpt2().decode(&ids).unwrap(), bytes);
    }

    #[test]
    fn string_round_trip(s in "\\PC{0,32}") {
        let ids = gpt2().encode(&s);
        prop_assert_eq!(gpt2().decode_lossy(&ids), s);
    }
}
