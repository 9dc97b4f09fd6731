//! Toy dual-track estimator: kana to phoneme lookup with a parallel prosody
//! track. Stands in for a trained phoneme/prosodic-symbol model.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::{Agent, AgentRequest, AgentResponse, RequestKind};
use crate::cascade::prosody;
use crate::error::{Error, Result};
use crate::timeline::Token;

const MONO: &[(&str, &str)] = &[
    ("あ", "a"),
    ("い", "i"),
    ("う", "u"),
    ("え", "e"),
    ("お", "o"),
    ("か", "k a"),
    ("き", "k i"),
    ("く", "k u"),
    ("け", "k e"),
    ("こ", "k o"),
    ("さ", "s a"),
    ("し", "sh i"),
    ("す", "s u"),
    ("せ", "s e"),
    ("そ", "s o"),
    ("た", "t a"),
    ("ち", "ch i"),
    ("つ", "ts u"),
    ("て", "t e"),
    ("と", "t o"),
    ("な", "n a"),
    ("に", "n i"),
    ("ぬ", "n u"),
    ("ね", "n e"),
    ("の", "n o"),
    ("は", "h a"),
    ("ひ", "h i"),
    ("ふ", "f u"),
    ("へ", "h e"),
    ("ほ", "h o"),
    ("ま", "m a"),
    ("み", "m i"),
    ("む", "m u"),
    ("め", "m e"),
    ("も", "m o"),
    ("や", "y a"),
    ("ゆ", "y u"),
    ("よ", "y o"),
    ("ら", "r a"),
    ("り", "r i"),
    ("る", "r u"),
    ("れ", "r e"),
    ("ろ", "r o"),
    ("わ", "w a"),
    ("を", "o"),
    ("ん", "N"),
    ("が", "g a"),
    ("ぎ", "g i"),
    ("ぐ", "g u"),
    ("げ", "g e"),
    ("ご", "g o"),
    ("ざ", "z a"),
    ("じ", "j i"),
    ("ず", "z u"),
    ("ぜ", "z e"),
    ("ぞ", "z o"),
    ("だ", "d a"),
    ("ぢ", "j i"),
    ("づ", "z u"),
    ("で", "d e"),
    ("ど", "d o"),
    ("ば", "b a"),
    ("び", "b i"),
    ("ぶ", "b u"),
    ("べ", "b e"),
    ("ぼ", "b o"),
    ("ぱ", "p a"),
    ("ぴ", "p i"),
    ("ぷ", "p u"),
    ("ぺ", "p e"),
    ("ぽ", "p o"),
    ("ぁ", "a"),
    ("ぃ", "i"),
    ("ぅ", "u"),
    ("ぇ", "e"),
    ("ぉ", "o"),
    ("ゃ", "y a"),
    ("ゅ", "y u"),
    ("ょ", "y o"),
    ("っ", "cl"),
    ("ー", ":"),
    ("ゔ", "v u"),
];

const DIGRAPH_ONSETS: &[(&str, &str)] = &[
    ("き", "ky"),
    ("に", "ny"),
    ("ひ", "hy"),
    ("み", "my"),
    ("り", "ry"),
    ("ぎ", "gy"),
    ("び", "by"),
    ("ぴ", "py"),
    ("し", "sh"),
    ("ち", "ch"),
    ("じ", "j"),
];

const EXTRA_DIGRAPHS: &[(&str, &str)] = &[
    ("ふぁ", "f a"),
    ("ふぃ", "f i"),
    ("ふぇ", "f e"),
    ("ふぉ", "f o"),
    ("てぃ", "t i"),
    ("でぃ", "d i"),
    ("うぃ", "w i"),
    ("うぇ", "w e"),
];

/// Whole-word readings that differ from their spelling.
const LEXICON: &[(&str, &str)] = &[("こんにちは", "k o N n i ch i w a"), ("こんばんは", "k o N b a N w a")];

const PUNCTUATION: &[char] = &['。', '、', '，', '．', '！', '？', '.', ',', '!', '?'];

fn table() -> &'static HashMap<String, Vec<String>> {
    static TABLE: OnceLock<HashMap<String, Vec<String>>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let split = |s: &str| s.split(' ').map(str::to_string).collect::<Vec<_>>();
        let mut m: HashMap<String, Vec<String>> = MONO.iter().map(|(k, v)| (k.to_string(), split(v))).collect();
        for (base, onset) in DIGRAPH_ONSETS {
            for (small, vowel) in [("ゃ", "a"), ("ゅ", "u"), ("ょ", "o")] {
                m.insert(format!("{base}{small}"), vec![onset.to_string(), vowel.to_string()]);
            }
        }
        for (k, v) in EXTRA_DIGRAPHS.iter().chain(LEXICON) {
            m.insert(k.to_string(), split(v));
        }
        m
    })
}

/// The kana-to-phoneme table as sorted `(kana, space-separated phonemes)`
/// pairs. Katakana input is folded to hiragana before lookup.
pub fn table_entries() -> Vec<(String, String)> {
    let mut entries: Vec<_> = table().iter().map(|(k, v)| (k.clone(), v.join(" "))).collect();
    entries.sort();
    entries
}

fn to_hiragana(c: char) -> char {
    match c {
        'ァ'..='ヶ' => char::from_u32(c as u32 - 0x60).unwrap_or(c),
        _ => c,
    }
}

/// Phonemes and prosodic symbols for one text token. Punctuation becomes a
/// pause carrying the phrase-boundary symbol; everything else has blank prosody.
pub fn romanize(token: &str) -> (Vec<Token>, Vec<Token>) {
    let kana: String = token.chars().map(to_hiragana).collect();
    let table = table();
    let mut phonemes = Vec::new();
    let mut prosodies = Vec::new();
    if let Some(p) = LEXICON.iter().find(|(w, _)| *w == kana).map(|(w, _)| &table[*w]) {
        prosodies.resize(p.len(), prosody::BLANK.to_string());
        return (p.clone(), prosodies);
    }
    let chars: Vec<char> = kana.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if PUNCTUATION.contains(&chars[i]) {
            phonemes.push("pau".to_string());
            prosodies.push(prosody::BOUNDARY.to_string());
            i += 1;
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let (ph, used) = if chars.len() - i >= 2 && table.contains_key(&two) {
            (table[&two].clone(), 2)
        } else {
            let one = chars[i].to_string();
            (table.get(&one).cloned().unwrap_or_else(|| vec![one]), 1)
        };
        prosodies.extend(std::iter::repeat_n(prosody::BLANK.to_string(), ph.len()));
        phonemes.extend(ph);
        i += used;
    }
    (phonemes, prosodies)
}

/// In-process dual-track agent. Each phoneme attends one-hot to the text
/// token it was read from.
#[derive(Debug, Clone, Default)]
pub struct ToyRomanizer {
    pub calls: usize,
}

impl Agent for ToyRomanizer {
    fn call(&mut self, request: &AgentRequest) -> Result<AgentResponse> {
        match request.kind {
            RequestKind::DualDecode => {
                self.calls += 1;
                let text = request.source.as_deref().unwrap_or(&[]);
                let frames = request.frames_available.min(text.len());
                let mut tokens = Vec::new();
                let mut aux = Vec::new();
                let mut attention = Vec::new();
                for (pos, word) in text[..frames].iter().enumerate() {
                    let (ph, pr) = romanize(word);
                    for _ in 0..ph.len() {
                        let mut row = vec![0.0; frames];
                        row[pos] = 1.0;
                        attention.push(row);
                    }
                    tokens.extend(ph);
                    aux.extend(pr);
                }
                if let Some(pos) = request
                    .committed_prefix
                    .iter()
                    .enumerate()
                    .position(|(i, c)| tokens.get(i) != Some(c))
                {
                    return Err(Error::PrefixConflict { position: pos });
                }
                Ok(AgentResponse {
                    tokens,
                    attention: Some(attention),
                    aux_tokens: Some(aux),
                    ..Default::default()
                })
            }
            RequestKind::Decode => Err(Error::ProtocolError("romanizer only supports dual_decode".into())),
            RequestKind::Reset | RequestKind::Close => Ok(AgentResponse::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greeting() {
        let (ph, pr) = romanize("こんにちは");
        assert_eq!(ph, vec!["k", "o", "N", "n", "i", "ch", "i", "w", "a"]);
        assert_eq!(pr.len(), ph.len());
        assert!(pr.iter().all(|p| p == prosody::BLANK));
    }

    #[test]
    fn katakana_and_digraphs() {
        let (ph, _) = romanize("フォーミュラワン");
        assert_eq!(ph, vec!["f", "o", ":", "my", "u", "r", "a", "w", "a", "N"]);
        let (ph, pr) = romanize("予算。");
        assert_eq!(ph, vec!["予", "算", "pau"]);
        assert_eq!(pr.last().map(String::as_str), Some(prosody::BOUNDARY));
    }
}
