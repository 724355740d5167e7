//! Byte-level BPE token counting compatible with the CLIP text encoder.
//!
//! Text is whitespace-collapsed and lowercased, split by the encoder's
//! pre-tokenizer pattern, mapped byte-wise onto printable code points and
//! merged by rank. Unicode repair of mojibake and HTML unescaping are not
//! applied.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use regex::Regex;

use super::CaptionError;

const BUNDLED_VOCAB: &[u8] = include_bytes!("../../assets/bpe_simple_vocab_16e6.txt.gz");

/// 49152 ids minus 256 byte symbols minus 2 special tokens.
const MERGE_COUNT: usize = 49152 - 256 - 2;

pub const START_OF_TEXT: &str = "<start_of_text>";
pub const END_OF_TEXT: &str = "<end_of_text>";
/// Tokens added around every encoded text.
pub const BOUNDARY_TOKENS: usize = 2;
/// Context window of the CLIP text encoder.
pub const CONTEXT_LENGTH: usize = 77;

pub struct Vocabulary {
    byte_encoder: [char; 256],
    ranks: HashMap<(String, String), usize>,
    encoder: HashMap<String, u32>,
    pattern: Regex,
}

impl std::fmt::Debug for Vocabulary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Vocabulary")
            .field("merges", &self.ranks.len())
            .field("size", &self.encoder.len())
            .finish()
    }
}

/// Printable stand-ins for the 256 byte values.
fn bytes_to_unicode() -> [char; 256] {
    let printable = |b: u32| (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
    let mut table = ['\0'; 256];
    let mut n = 0;
    for b in 0..256u32 {
        let cp = if printable(b) {
            b
        } else {
            n += 1;
            255 + n
        };
        table[b as usize] = char::from_u32(cp).expect("valid code point");
    }
    table
}

impl Vocabulary {
    /// The merge table shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_gzip(BUNDLED_VOCAB).expect("bundled vocabulary is valid")
    }

    /// Loads a merge table, gzip-compressed or plain text.
    pub fn from_file(path: &Path) -> Result<Self, CaptionError> {
        let bytes = std::fs::read(path).map_err(|e| CaptionError::VocabularyMissing(format!("{}: {e}", path.display())))?;
        if bytes.starts_with(&[0x1f, 0x8b]) {
            Self::from_gzip(&bytes)
        } else {
            let text = String::from_utf8(bytes)
                .map_err(|e| CaptionError::VocabularyMissing(format!("{}: {e}", path.display())))?;
            Self::from_merges(&text)
        }
    }

    fn from_gzip(bytes: &[u8]) -> Result<Self, CaptionError> {
        let mut text = String::new();
        GzDecoder::new(bytes)
            .read_to_string(&mut text)
            .map_err(|e| CaptionError::VocabularyMissing(format!("gzip: {e}")))?;
        Self::from_merges(&text)
    }

    /// Parses the merges file: a version line, then one `a b` pair per line.
    pub fn from_merges(text: &str) -> Result<Self, CaptionError> {
        let merges: Vec<(String, String)> = text
            .split('\n')
            .skip(1)
            .take(MERGE_COUNT)
            .filter(|l| !l.is_empty())
            .map(|l| {
                let mut parts = l.split_whitespace();
                match (parts.next(), parts.next()) {
                    (Some(a), Some(b)) => Ok((a.to_owned(), b.to_owned())),
                    _ => Err(CaptionError::VocabularyMissing(format!("malformed merge line {l:?}"))),
                }
            })
            .collect::<Result<_, _>>()?;
        if merges.is_empty() {
            return Err(CaptionError::VocabularyMissing("no merges".into()));
        }

        let byte_encoder = bytes_to_unicode();
        // Base symbols are ordered printable bytes first, then the remapped
        // ones, i.e. by code point of their stand-in.
        let mut base: Vec<char> = byte_encoder.to_vec();
        base.sort_unstable();
        let mut vocab: Vec<String> = base.iter().map(|c| c.to_string()).collect();
        vocab.extend(base.iter().map(|c| format!("{c}</w>")));
        vocab.extend(merges.iter().map(|(a, b)| format!("{a}{b}")));
        vocab.push(START_OF_TEXT.into());
        vocab.push(END_OF_TEXT.into());
        let encoder = vocab.into_iter().enumerate().map(|(i, v)| (v, i as u32)).collect();
        let ranks = merges.into_iter().enumerate().map(|(i, m)| (m, i)).collect();

        let pattern = Regex::new(&format!(
            r"(?i){START_OF_TEXT}|{END_OF_TEXT}|'s|'t|'re|'ve|'m|'ll|'d|[\p{{L}}]+|[\p{{N}}]|[^\s\p{{L}}\p{{N}}]+"
        ))
        .expect("static pattern");

        Ok(Self {
            byte_encoder,
            ranks,
            encoder,
            pattern,
        })
    }

    pub fn len(&self) -> usize {
        self.encoder.len()
    }

    pub fn is_empty(&self) -> bool {
        self.encoder.is_empty()
    }

    /// Applies merges to one pre-token in byte-unicode form.
    fn bpe(&self, token: &str) -> Vec<String> {
        if token == START_OF_TEXT || token == END_OF_TEXT {
            return vec![token.to_owned()];
        }
        let chars: Vec<char> = token.chars().collect();
        let mut word: Vec<String> = chars.iter().map(|c| c.to_string()).collect();
        if let Some(last) = word.last_mut() {
            last.push_str("</w>");
        }
        // Scratch key reused for rank lookups.
        let mut key = (String::new(), String::new());
        loop {
            let mut best: Option<(usize, usize)> = None;
            for i in 0..word.len().saturating_sub(1) {
                key.0.clone_from(&word[i]);
                key.1.clone_from(&word[i + 1]);
                if let Some(&r) = self.ranks.get(&key) {
                    if best.is_none_or(|(br, _)| r < br) {
                        best = Some((r, i));
                    }
                }
            }
            let Some((_, at)) = best else { break };
            let (first, second) = (word[at].clone(), word[at + 1].clone());
            let mut merged = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && word[i] == first && word[i + 1] == second {
                    merged.push(format!("{first}{second}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut word[i]));
                    i += 1;
                }
            }
            word = merged;
            if word.len() == 1 {
                break;
            }
        }
        word
    }

    fn pieces(&self, text: &str) -> Vec<String> {
        let cleaned = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let mut out = Vec::new();
        for m in self.pattern.find_iter(&cleaned) {
            let mapped: String = m.as_str().bytes().map(|b| self.byte_encoder[b as usize]).collect();
            out.extend(self.bpe(&mapped));
        }
        out
    }

    /// Token ids including the start and end markers, without truncation.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = vec![self.encoder[START_OF_TEXT]];
        ids.extend(self.pieces(text).iter().map(|p| self.encoder[p.as_str()]));
        ids.push(self.encoder[END_OF_TEXT]);
        ids
    }

    /// Number of tokens the encoder sees before truncation, markers included.
    pub fn count_tokens(&self, text: &str) -> usize {
        self.pieces(text).len() + BOUNDARY_TOKENS
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn vocab() -> &'static Vocabulary {
        static V: OnceLock<Vocabulary> = OnceLock::new();
        V.get_or_init(Vocabulary::bundled)
    }

    #[test]
    fn byte_table_is_a_bijection() {
        let t = bytes_to_unicode();
        let mut seen: Vec<char> = t.to_vec();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 256);
        assert_eq!(t[b'a' as usize], 'a');
        assert_eq!(t[b' ' as usize], '\u{120}');
        assert_eq!(t[0], '\u{100}');
    }

    #[test]
    fn vocabulary_size() {
        assert_eq!(vocab().len(), 49408);
    }

    #[test]
    fn empty_and_single_word() {
        assert_eq!(vocab().count_tokens(""), BOUNDARY_TOKENS);
        assert_eq!(vocab().count_tokens("   "), BOUNDARY_TOKENS);
        assert_eq!(vocab().count_tokens("product"), BOUNDARY_TOKENS + 1);
        assert_eq!(vocab().count_tokens("Product"), BOUNDARY_TOKENS + 1);
    }

    #[test]
    fn special_tokens() {
        let ids = vocab().encode("");
        assert_eq!(ids, [49406, 49407]);
        assert_eq!(vocab().count_tokens("<start_of_text>"), 3);
    }

    // Expected ids come from the reference Python tokenizer run on the
    // same merges file.
    #[test]
    fn matches_reference_ids() {
        let cases: [(&str, &[u32]); 7] = [
            ("a photo of a cat", &[49406, 320, 1125, 539, 320, 2368, 49407]),
            (
                "The product is Hershey's Genuine Chocolate Syrup, a fat-free, 16 oz dark brown chocolate syrup in a bottle with a black cap.",
                &[
                    49406, 518, 4306, 533, 29734, 568, 12184, 3820, 16611, 267, 320, 5484, 268, 1139, 267, 272, 277,
                    6044, 3144, 2866, 3820, 16611, 530, 320, 5392, 593, 320, 1449, 3938, 269, 49407,
                ],
            ),
            (
                "Café   naïve  rösti 12.5% off!!",
                &[49406, 15304, 1097, 35689, 563, 81, 7255, 12439, 272, 273, 269, 276, 260, 1007, 748, 49407],
            ),
            ("don't you'll we've I'M", &[49406, 847, 713, 592, 1342, 649, 1200, 328, 880, 49407]),
            (
                "日本語のテキスト 😀 emoji",
                &[49406, 39121, 44353, 34002, 252, 21575, 2429, 228, 47121, 32421, 486, 7334, 16327, 49407],
            ),
            (
                "supercalifragilisticexpialidocious",
                &[49406, 1642, 2857, 13093, 2076, 5868, 26850, 835, 639, 38466, 49407],
            ),
            ("<start_of_text> hello", &[49406, 49406, 3306, 49407]),
        ];
        for (text, want) in cases {
            assert_eq!(vocab().encode(text), want, "{text}");
            assert_eq!(vocab().count_tokens(text), want.len(), "{text}");
        }
    }

    #[test]
    fn missing_file() {
        let err = Vocabulary::from_file(Path::new("/nonexistent/vocab.txt.gz")).unwrap_err();
        assert!(matches!(err, CaptionError::VocabularyMissing(_)));
    }

    #[test]
    fn plain_text_merges() {
        let v = Vocabulary::from_merges("#version\nc a\nca t</w>\n").unwrap();
        assert_eq!(v.count_tokens("cat"), 3);
        assert_eq!(v.count_tokens("cab"), 4);
        assert!(Vocabulary::from_merges("#version\n").is_err());
    }
}
