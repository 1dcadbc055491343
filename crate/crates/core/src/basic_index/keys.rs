use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::AnnotatedInstance;
use crate::error::{Error, Result};
use crate::fingerprint;

/// Word → lemma lookup read from a two-column TSV.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LemmaTable {
    map: HashMap<String, String>,
    fingerprint: String,
}

impl LemmaTable {
    pub fn from_pairs<I, A, B>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut map: HashMap<String, String> = HashMap::new();
        for (w, l) in pairs {
            map.insert(w.into().to_lowercase(), l.into().to_lowercase());
        }
        let mut sorted: Vec<_> = map.iter().collect();
        sorted.sort();
        let mut bytes = Vec::new();
        for (w, l) in sorted {
            bytes.extend_from_slice(w.as_bytes());
            bytes.push(b'\t');
            bytes.extend_from_slice(l.as_bytes());
            bytes.push(b'\n');
        }
        LemmaTable {
            map,
            fingerprint: fingerprint::sha256_hex(&bytes),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (w, l) = line.split_once('\t').ok_or_else(|| {
                Error::Validation(format!("{}:{}: expected `word<TAB>lemma`", path.display(), i + 1))
            })?;
            pairs.push((w.trim().to_string(), l.trim().to_string()));
        }
        Ok(Self::from_pairs(pairs))
    }

    pub fn lemma<'a>(&'a self, word: &str) -> Option<&'a str> {
        self.map.get(&word.to_lowercase()).map(String::as_str)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyKind {
    Surface,
    Lemma,
}

impl std::str::FromStr for KeyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surface" => Ok(KeyKind::Surface),
            "lemma" => Ok(KeyKind::Lemma),
            other => Err(Error::Config(format!("unknown key policy `{other}`"))),
        }
    }
}

/// How a target word is turned into the key its literal pool is filed under.
///
/// `Surface` lowercases the word. `Lemma` maps it through a [`LemmaTable`],
/// falling back to the lowercased word when the table has no entry. With
/// `pos` set, the instance's POS tag is appended as `key/POS`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPolicy {
    kind: KeyKind,
    lemmas: Option<LemmaTable>,
    pos: bool,
}

impl Default for KeyPolicy {
    fn default() -> Self {
        Self::surface()
    }
}

impl KeyPolicy {
    pub fn surface() -> Self {
        KeyPolicy {
            kind: KeyKind::Surface,
            lemmas: None,
            pos: false,
        }
    }

    pub fn lemma(table: LemmaTable) -> Self {
        KeyPolicy {
            kind: KeyKind::Lemma,
            lemmas: Some(table),
            pos: false,
        }
    }

    pub fn with_pos(mut self, pos: bool) -> Self {
        self.pos = pos;
        self
    }

    pub fn kind(&self) -> KeyKind {
        self.kind
    }

    /// Identifier persisted with an index; lemma policies include the table hash.
    pub fn id(&self) -> String {
        let base = match (&self.kind, &self.lemmas) {
            (KeyKind::Lemma, Some(t)) => format!("lemma:{}", &t.fingerprint[..16]),
            _ => "surface".to_string(),
        };
        if self.pos {
            format!("{base}+pos")
        } else {
            base
        }
    }

    pub fn key_for_word(&self, word: &str, pos_tag: Option<&str>) -> String {
        let lower = word.to_lowercase();
        let mut key = match &self.lemmas {
            Some(t) if self.kind == KeyKind::Lemma => t.lemma(&lower).map(str::to_string).unwrap_or(lower),
            _ => lower,
        };
        if self.pos {
            key.push('/');
            key.push_str(pos_tag.unwrap_or("_"));
        }
        key
    }

    pub fn key(&self, instance: &AnnotatedInstance) -> String {
        self.key_for_word(instance.target_word(), instance.pos_tag.as_deref())
    }
}
