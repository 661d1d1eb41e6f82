//! Glossary loading and lookup.
//!
//! A glossary is an ordered list of source-language terms with per-language
//! translations. Two on-disk formats are accepted: UTF-8 TSV with a
//! `term<TAB>lang1<TAB>lang2...` header, and JSON-lines objects of the shape
//! `{"term": ..., "target_translations": {lang: ...}}`.

use crate::lang::Lang;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GlossaryError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("line {line}: duplicate term {term:?}")]
    Duplicate { line: usize, term: String },
    #[error("line {line}: term {term:?} has no {lang} translation")]
    MissingLanguage { line: usize, term: String, lang: Lang },
}

/// Position of an entry within its glossary; doubles as the row index of the
/// term's vector in a [`crate::index::TermIndex`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermId(pub u32);

impl TermId {
    pub fn as_usize(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlossaryEntry {
    pub term_id: TermId,
    pub source_term: String,
    pub translations: BTreeMap<Lang, String>,
}

/// An ordered, duplicate-free term list. Term ids are sequential from 0.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Glossary {
    entries: Vec<GlossaryEntry>,
    by_lower: HashMap<String, TermId>,
}

/// JSON-lines record shape for glossary files.
#[derive(Serialize, Deserialize)]
struct JsonRecord {
    term: String,
    target_translations: BTreeMap<String, String>,
}

impl Glossary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a glossary file, sniffing JSON-lines (first byte `{`) vs TSV.
    /// Every entry must carry all of `langs`; duplicate source terms
    /// (case-insensitive, trimmed) are an error naming the later line.
    pub fn load(path: &Path, langs: &[Lang]) -> Result<Self, GlossaryError> {
        let text = fs::read_to_string(path).map_err(|source| GlossaryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, langs)
    }

    pub fn parse(text: &str, langs: &[Lang]) -> Result<Self, GlossaryError> {
        if text.trim_start().starts_with('{') {
            Self::parse_jsonl(text, langs)
        } else {
            Self::parse_tsv(text, langs)
        }
    }

    pub fn parse_tsv(text: &str, langs: &[Lang]) -> Result<Self, GlossaryError> {
        let mut lines = text.lines().enumerate();
        let header = match lines.next() {
            None => return Ok(Self::new()),
            Some((_, h)) if h.trim().is_empty() => return Ok(Self::new()),
            Some((_, h)) => h,
        };
        let columns: Vec<&str> = header.split('\t').collect();
        if columns.first().map(|c| c.trim()) != Some("term") {
            return Err(GlossaryError::Format {
                line: 1,
                msg: format!("expected header starting with 'term', got {header:?}"),
            });
        }
        let header_langs: Vec<Lang> = columns[1..].iter().map(|c| Lang::new(c)).collect();
        for lang in langs {
            if !header_langs.contains(lang) {
                return Err(GlossaryError::Format {
                    line: 1,
                    msg: format!("header has no {lang} column"),
                });
            }
        }

        let mut glossary = Self::new();
        for (idx, raw) in lines {
            let line_no = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != columns.len() {
                return Err(GlossaryError::Format {
                    line: line_no,
                    msg: format!("expected {} fields, got {}", columns.len(), fields.len()),
                });
            }
            let translations = header_langs
                .iter()
                .zip(&fields[1..])
                .map(|(lang, value)| (lang.clone(), value.trim().to_string()))
                .collect();
            glossary.push_checked(fields[0], translations, langs, line_no)?;
        }
        Ok(glossary)
    }

    pub fn parse_jsonl(text: &str, langs: &[Lang]) -> Result<Self, GlossaryError> {
        let mut glossary = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let record: JsonRecord =
                serde_json::from_str(raw).map_err(|e| GlossaryError::Format {
                    line: line_no,
                    msg: e.to_string(),
                })?;
            let translations = record
                .target_translations
                .into_iter()
                .map(|(code, value)| (Lang::new(&code), value.trim().to_string()))
                .collect();
            glossary.push_checked(&record.term, translations, langs, line_no)?;
        }
        Ok(glossary)
    }

    fn push_checked(
        &mut self,
        term: &str,
        translations: BTreeMap<Lang, String>,
        langs: &[Lang],
        line: usize,
    ) -> Result<(), GlossaryError> {
        let term = term.trim();
        if term.is_empty() {
            return Err(GlossaryError::Format {
                line,
                msg: "empty source term".into(),
            });
        }
        for lang in langs {
            match translations.get(lang) {
                Some(t) if !t.is_empty() => {}
                _ => {
                    return Err(GlossaryError::MissingLanguage {
                        line,
                        term: term.to_string(),
                        lang: lang.clone(),
                    })
                }
            }
        }
        let lower = term.to_lowercase();
        if self.by_lower.contains_key(&lower) {
            return Err(GlossaryError::Duplicate {
                line,
                term: term.to_string(),
            });
        }
        let term_id = TermId(self.entries.len() as u32);
        self.by_lower.insert(lower, term_id);
        self.entries.push(GlossaryEntry {
            term_id,
            source_term: term.to_string(),
            translations,
        });
        Ok(())
    }

    /// Builds a glossary from `(term, translations)` pairs, applying the same
    /// trimming and duplicate checks as file loading.
    pub fn from_pairs<I, S>(pairs: I, langs: &[Lang]) -> Result<Self, GlossaryError>
    where
        I: IntoIterator<Item = (S, BTreeMap<Lang, String>)>,
        S: AsRef<str>,
    {
        let mut glossary = Self::new();
        for (i, (term, translations)) in pairs.into_iter().enumerate() {
            glossary.push_checked(term.as_ref(), translations, langs, i + 1)?;
        }
        Ok(glossary)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[GlossaryEntry] {
        &self.entries
    }

    pub fn get(&self, id: TermId) -> Option<&GlossaryEntry> {
        self.entries.get(id.as_usize())
    }

    pub fn term(&self, id: TermId) -> Option<&str> {
        self.get(id).map(|e| e.source_term.as_str())
    }

    pub fn translation(&self, id: TermId, lang: &Lang) -> Option<&str> {
        self.get(id)
            .and_then(|e| e.translations.get(lang))
            .map(String::as_str)
    }

    /// Case-insensitive trimmed lookup of a source term.
    pub fn find(&self, term: &str) -> Option<TermId> {
        self.by_lower.get(&term.trim().to_lowercase()).copied()
    }

    /// Serializes the glossary as JSON-lines in entry order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            let record = JsonRecord {
                term: entry.source_term.clone(),
                target_translations: entry
                    .translations
                    .iter()
                    .map(|(lang, t)| (lang.code().to_string(), t.clone()))
                    .collect(),
            };
            out.push_str(&serde_json::to_string(&record).expect("glossary record serializes"));
            out.push('\n');
        }
        out
    }

    /// Languages present in every entry (empty glossary reports none).
    pub fn common_langs(&self) -> Vec<Lang> {
        let Some(first) = self.entries.first() else {
            return Vec::new();
        };
        first
            .translations
            .keys()
            .filter(|lang| self.entries.iter().all(|e| e.translations.contains_key(lang)))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zh() -> Vec<Lang> {
        vec![Lang::new("zh")]
    }

    #[test]
    fn tsv_two_lines() {
        let text = "term\tzh\nBERT\tBERT\nattention mechanism\t注意力机制\n";
        let g = Glossary::parse_tsv(text, &zh()).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.entries()[0].term_id, TermId(0));
        assert_eq!(g.entries()[1].term_id, TermId(1));
        assert_eq!(g.term(TermId(0)), Some("BERT"));
        assert_eq!(
            g.translation(TermId(1), &Lang::new("zh")),
            Some("注意力机制")
        );
    }

    #[test]
    fn empty_file_is_empty_glossary() {
        let g = Glossary::parse("", &zh()).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn duplicate_reports_later_line() {
        // Lines 3 and 7 carry the same term; the error must name line 7.
        let text = "term\tzh\n\
                    a\tA\n\
                    dup\tD\n\
                    b\tB\n\
                    c\tC\n\
                    d\tD2\n\
                    DUP\tD\n";
        let err = Glossary::parse_tsv(text, &zh()).unwrap_err();
        match err {
            GlossaryError::Duplicate { line, term } => {
                assert_eq!(line, 7);
                assert_eq!(term, "DUP");
            }
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn missing_language_rejected() {
        let text = "term\tzh\nBERT\tBERT\n";
        let err = Glossary::parse_tsv(text, &[Lang::new("zh"), Lang::new("de")]).unwrap_err();
        assert!(matches!(err, GlossaryError::Format { line: 1, .. }));

        let jsonl = r#"{"term": "BERT", "target_translations": {"zh": "BERT"}}"#;
        let err = Glossary::parse_jsonl(jsonl, &[Lang::new("de")]).unwrap_err();
        assert!(matches!(err, GlossaryError::MissingLanguage { line: 1, .. }));
    }

    #[test]
    fn jsonl_round_trip() {
        let text = "term\tzh\tde\nBERT\tBERT\tBERT\nattention mechanism\t注意力机制\tAufmerksamkeitsmechanismus\n";
        let langs = vec![Lang::new("zh"), Lang::new("de")];
        let g = Glossary::parse_tsv(text, &langs).unwrap();
        let back = Glossary::parse_jsonl(&g.to_jsonl(), &langs).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn parse_error_names_line() {
        let text = "term\tzh\ngood\tG\nbad line without tab\n";
        let err = Glossary::parse_tsv(text, &zh()).unwrap_err();
        assert!(matches!(err, GlossaryError::Format { line: 3, .. }));
    }

    #[test]
    fn find_is_case_insensitive() {
        let text = "term\tzh\nBERT\tBERT\n";
        let g = Glossary::parse_tsv(text, &zh()).unwrap();
        assert_eq!(g.find(" bert "), Some(TermId(0)));
        assert_eq!(g.find("gpt"), None);
    }
}
