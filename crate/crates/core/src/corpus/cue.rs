use std::collections::{HashMap, HashSet};
use std::path::Path;

use crate::error::{Error, Result};

use super::vocab::{is_reserved, EPT_TOKEN};
use super::Session;

/// Index of the "no cue word" entry in every [`CueVocab`].
pub const EPT_CUE: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PosClass {
    Noun,
    Verb,
    Adjective,
    Other,
}

impl PosClass {
    fn parse(tag: &str) -> Option<Self> {
        match tag {
            "N" => Some(PosClass::Noun),
            "V" => Some(PosClass::Verb),
            "ADJ" => Some(PosClass::Adjective),
            "OTHER" => Some(PosClass::Other),
            _ => None,
        }
    }
}

/// Decides which tokens count as content words.
#[derive(Clone, Debug)]
pub enum ContentLexicon {
    /// Token → POS class. Tokens missing from the table are not content words.
    Tagged(HashMap<String, PosClass>),
    /// Everything outside the stopword list is a content word.
    Stopwords(HashSet<String>),
}

impl ContentLexicon {
    pub fn is_content(&self, token: &str) -> bool {
        if is_reserved(token) {
            return false;
        }
        match self {
            ContentLexicon::Tagged(map) => matches!(
                map.get(token),
                Some(PosClass::Noun | PosClass::Verb | PosClass::Adjective)
            ),
            ContentLexicon::Stopwords(stop) => !stop.contains(token),
        }
    }

    pub fn parse_tagged(text: &str, origin: &str) -> Result<Self> {
        let mut map = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (token, tag) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(origin, format!("line {}: expected token<TAB>class", n + 1)))?;
            let class = PosClass::parse(tag.trim())
                .ok_or_else(|| Error::format(origin, format!("line {}: unknown class {tag:?}", n + 1)))?;
            map.insert(token.to_string(), class);
        }
        Ok(ContentLexicon::Tagged(map))
    }

    pub fn parse_stopwords(text: &str) -> Self {
        ContentLexicon::Stopwords(text.split_whitespace().map(str::to_string).collect())
    }

    /// Loads `lexicon` if it exists, else `stopwords`.
    pub fn load(lexicon: Option<&Path>, stopwords: Option<&Path>) -> Result<Self> {
        if let Some(p) = lexicon.filter(|p| p.exists()) {
            return Self::parse_tagged(&std::fs::read_to_string(p)?, &p.display().to_string());
        }
        if let Some(p) = stopwords.filter(|p| p.exists()) {
            return Ok(Self::parse_stopwords(&std::fs::read_to_string(p)?));
        }
        Err(Error::MissingLexicon)
    }
}

/// Cue-word inventory: `<ept>` at index 0, then content words by
/// descending reply frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct CueVocab {
    words: Vec<String>,
    freq: Vec<u64>,
    index: HashMap<String, usize>,
}

impl CueVocab {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, u64)>) -> Self {
        let mut words = vec![EPT_TOKEN.to_string()];
        let mut freq = vec![0];
        for (w, f) in entries {
            if w != EPT_TOKEN {
                words.push(w);
                freq.push(f);
            }
        }
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        CueVocab { words, freq, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() == 1
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn frequency(&self, id: usize) -> u64 {
        self.freq[id]
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn check(&self, id: usize) -> Result<()> {
        if id < self.len() {
            Ok(())
        } else {
            Err(Error::Argument(format!("cue index {id} out of range for {} cue words", self.len())))
        }
    }

    /// `word<TAB>frequency` per line, in index order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (w, f) in self.words.iter().zip(&self.freq) {
            text.push_str(&format!("{w}\t{f}\n"));
        }
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let origin = path.display().to_string();
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (w, f) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(&origin, format!("line {}: expected word<TAB>count", n + 1)))?;
            let f: u64 = f
                .parse()
                .map_err(|_| Error::format(&origin, format!("line {}: bad count", n + 1)))?;
            if n == 0 {
                if w != EPT_TOKEN {
                    return Err(Error::format(&origin, "first cue word must be <ept>"));
                }
                continue;
            }
            entries.push((w.to_string(), f));
        }
        Ok(Self::from_entries(entries))
    }
}

/// Counts content words over replies (every utterance after the first).
pub fn reply_content_counts(sessions: &[Session], lexicon: &ContentLexicon) -> HashMap<String, u64> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for s in sessions {
        for u in s.utterances.iter().skip(1) {
            for t in u.iter() {
                if lexicon.is_content(t) {
                    *counts.entry(t.clone()).or_default() += 1;
                }
            }
        }
    }
    counts
}

/// The `k` most frequent content words of the replies plus `<ept>`.
pub fn build_cue_vocab(sessions: &[Session], lexicon: Option<&ContentLexicon>, k: usize) -> Result<CueVocab> {
    let lexicon = lexicon.ok_or(Error::MissingLexicon)?;
    let mut ranked: Vec<(String, u64)> = reply_content_counts(sessions, lexicon).into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(CueVocab::from_entries(ranked))
}

/// Longest cue word in `reply` (by characters); ties go to the more
/// frequent word, then the earlier position. `EPT_CUE` if none matches.
pub fn extract_cue_word(reply: &[String], cues: &CueVocab) -> usize {
    let mut best: Option<(usize, usize, u64)> = None;
    for t in reply {
        let Some(id) = cues.id(t) else { continue };
        if id == EPT_CUE {
            continue;
        }
        let len = t.chars().count();
        let freq = cues.frequency(id);
        let better = match best {
            None => true,
            Some((_, l, f)) => len > l || (len == l && freq > f),
        };
        if better {
            best = Some((id, len, freq));
        }
    }
    best.map_or(EPT_CUE, |b| b.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn sessions(turns: &[&str]) -> Vec<Session> {
        vec![Session {
            id: "s".into(),
            utterances: turns.iter().map(|t| Utterance::parse(t)).collect(),
        }]
    }

    fn no_stopwords() -> ContentLexicon {
        ContentLexicon::Stopwords(HashSet::new())
    }

    #[test]
    fn three_content_words_all_kept() {
        let lex = ContentLexicon::parse_stopwords("the a");
        let v = build_cue_vocab(&sessions(&["ignored", "the cat", "a dog sat"]), Some(&lex), 999).unwrap();
        assert_eq!(v.words(), ["<ept>", "cat", "dog", "sat"]);
    }

    #[test]
    fn cutoff_tie_keeps_lexicographically_smaller() {
        let v = build_cue_vocab(&sessions(&["q", "zeta alpha", "beta beta"]), Some(&no_stopwords()), 2).unwrap();
        assert_eq!(v.words(), ["<ept>", "beta", "alpha"]);
    }

    #[test]
    fn missing_lexicon_is_an_error() {
        let err = build_cue_vocab(&sessions(&["a", "b", "c"]), None, 5).unwrap_err();
        assert!(matches!(err, Error::MissingLexicon));
        assert!(ContentLexicon::load(None, None).is_err());
    }

    #[test]
    fn tagged_lexicon_filters_function_words() {
        let lex = ContentLexicon::parse_tagged("cat\tN\nrun\tV\nthe\tOTHER\nred\tADJ\n", "t").unwrap();
        assert!(lex.is_content("cat") && lex.is_content("run") && lex.is_content("red"));
        assert!(!lex.is_content("the") && !lex.is_content("unknown"));
        assert!(ContentLexicon::parse_tagged("cat\tNOUN\n", "t").is_err());
    }

    #[test]
    fn longest_match_rule() {
        let v = CueVocab::from_entries([("go".into(), 5), ("home".into(), 1)]);
        assert_eq!(v.word(extract_cue_word(&toks("go home now"), &v)), "home");
        assert_eq!(extract_cue_word(&toks("nothing here"), &v), EPT_CUE);
    }

    #[test]
    fn length_tie_goes_to_more_frequent() {
        let v = CueVocab::from_entries([("cat".into(), 2), ("dog".into(), 7)]);
        assert_eq!(v.word(extract_cue_word(&toks("cat dog"), &v)), "dog");
        let v = CueVocab::from_entries([("cat".into(), 7), ("dog".into(), 7)]);
        assert_eq!(v.word(extract_cue_word(&toks("dog cat"), &v)), "dog");
    }

    #[test]
    fn multibyte_length_counts_characters() {
        let v = CueVocab::from_entries([("日本語".into(), 1), ("abcd".into(), 1)]);
        assert_eq!(v.word(extract_cue_word(&toks("日本語 abcd"), &v)), "abcd");
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cues.tsv");
        let v = CueVocab::from_entries([("x".into(), 3), ("y".into(), 1)]);
        v.save(&path).unwrap();
        assert_eq!(CueVocab::load(&path).unwrap(), v);
    }

    proptest! {
        #[test]
        fn ranking_matches_direct_count(
            turns in proptest::collection::vec(proptest::collection::vec(0usize..8, 1..6), 3..8),
            k in 1usize..10,
        ) {
            let words = ["ant", "bee", "cat", "dog", "eel", "fox", "gnu", "hen"];
            let utterances: Vec<Utterance> = turns
                .iter()
                .map(|t| Utterance::new(t.iter().map(|&i| words[i])))
                .collect();
            let s = vec![Session { id: "p".into(), utterances: utterances.clone() }];
            let v = build_cue_vocab(&s, Some(&no_stopwords()), k).unwrap();

            let mut counts = [0u64; 8];
            for u in &turns[1..] {
                for &i in u {
                    counts[i] += 1;
                }
            }
            let mut expected: Vec<usize> = (0..8).filter(|&i| counts[i] > 0).collect();
            expected.sort_by_key(|&i| (std::cmp::Reverse(counts[i]), words[i]));
            expected.truncate(k);
            let got: Vec<&str> = v.words()[1..].iter().map(String::as_str).collect();
            let want: Vec<&str> = expected.iter().map(|&i| words[i]).collect();
            prop_assert_eq!(got, want);
        }
    }
}
