use std::collections::HashMap;

use crate::error::{Error, Result};

/// Ordered gene symbols with a transcription-factor flag per gene.
///
/// Symbols are stored upper-cased; lookups upper-case their argument.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneVocabulary {
    symbols: Vec<String>,
    is_tf: Vec<bool>,
    index: HashMap<String, usize>,
}

pub(crate) fn normalize_symbol(s: &str) -> String {
    s.trim().to_uppercase()
}

impl GeneVocabulary {
    pub fn new<S: AsRef<str>>(symbols: &[S]) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        let mut out = Vec::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            let sym = normalize_symbol(s.as_ref());
            if sym.is_empty() {
                return Err(Error::validation(format!("empty gene symbol at position {}", i + 1)));
            }
            if index.insert(sym.clone(), i).is_some() {
                return Err(Error::validation(format!("duplicate gene symbol {sym:?}")));
            }
            out.push(sym);
        }
        Ok(GeneVocabulary {
            is_tf: vec![false; out.len()],
            symbols: out,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, i: usize) -> &str {
        &self.symbols[i]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(&normalize_symbol(symbol)).copied()
    }

    pub fn is_tf(&self, i: usize) -> bool {
        self.is_tf[i]
    }

    pub fn set_tf(&mut self, i: usize) {
        self.is_tf[i] = true;
    }

    pub fn tf_flags(&self) -> &[bool] {
        &self.is_tf
    }

    pub fn tf_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_tf[i]).collect()
    }

    pub fn n_tfs(&self) -> usize {
        self.is_tf.iter().filter(|&&b| b).count()
    }

    /// Flags every listed symbol as a TF; returns how many were unknown.
    pub fn mark_tfs<S: AsRef<str>>(&mut self, symbols: &[S]) -> usize {
        let mut unknown = 0;
        for s in symbols {
            match self.index_of(s.as_ref()) {
                Some(i) => self.is_tf[i] = true,
                None => unknown += 1,
            }
        }
        unknown
    }

    pub fn require_tf(&self) -> Result<()> {
        if self.n_tfs() == 0 {
            return Err(Error::validation("vocabulary has no transcription factors"));
        }
        Ok(())
    }
}

/// Reads a one-symbol-per-line TF list (first CSV column; `#` comments and a
/// header named `tf`/`gene`/`symbol` skipped).
pub fn parse_tf_list(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let first = l.split(',').next().unwrap_or("").trim().trim_matches('"');
        if out.is_empty() && matches!(first.to_lowercase().as_str(), "tf" | "gene" | "symbol" | "tfs") {
            continue;
        }
        if !first.is_empty() {
            out.push(first.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_are_upper_cased_and_unique() {
        let v = GeneVocabulary::new(&["Sox2", "nanog"]).unwrap();
        assert_eq!(v.symbol(0), "SOX2");
        assert_eq!(v.index_of("sox2"), Some(0));
        assert!(GeneVocabulary::new(&["a", "A"]).is_err());
    }

    #[test]
    fn tf_marking() {
        let mut v = GeneVocabulary::new(&["a", "b", "c"]).unwrap();
        assert!(v.require_tf().is_err());
        assert_eq!(v.mark_tfs(&["B", "zz"]), 1);
        assert_eq!(v.tf_indices(), vec![1]);
        assert!(v.require_tf().is_ok());
    }

    #[test]
    fn tf_list_parsing() {
        assert_eq!(parse_tf_list("TF\nsox2\n# c\n\nPOU5F1,x\n"), vec!["sox2", "POU5F1"]);
    }
}
