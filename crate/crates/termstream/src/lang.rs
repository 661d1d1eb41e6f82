//! Target-language codes and their text-handling conventions.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// A lowercase ISO-639-1 style language code (`zh`, `de`, `ja`, ...).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lang(String);

impl Lang {
    pub fn new(code: &str) -> Self {
        Lang(code.trim().to_lowercase())
    }

    pub fn code(&self) -> &str {
        &self.0
    }

    /// English name used in prompts; falls back to the raw code.
    pub fn display_name(&self) -> &str {
        match self.0.as_str() {
            "zh" => "Chinese",
            "de" => "German",
            "ja" => "Japanese",
            "en" => "English",
            "fr" => "French",
            "es" => "Spanish",
            "ko" => "Korean",
            other => other,
        }
    }

    /// Languages scored at character granularity (no whitespace between units).
    pub fn char_tokenized(&self) -> bool {
        matches!(self.0.as_str(), "zh" | "ja")
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Lang {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(Lang::new(s))
    }
}

impl From<&str> for Lang {
    fn from(s: &str) -> Self {
        Lang::new(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_case_and_whitespace() {
        assert_eq!(Lang::new(" ZH ").code(), "zh");
    }

    #[test]
    fn display_names() {
        assert_eq!(Lang::new("zh").display_name(), "Chinese");
        assert_eq!(Lang::new("xx").display_name(), "xx");
    }

    #[test]
    fn char_tokenized_languages() {
        assert!(Lang::new("zh").char_tokenized());
        assert!(Lang::new("ja").char_tokenized());
        assert!(!Lang::new("de").char_tokenized());
    }
}
