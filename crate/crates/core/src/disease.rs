//! Disease reference text, loaded from a JSON-lines file.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DiseaseSections {
    pub description: String,
    pub symptoms: String,
    pub causes: String,
    pub diagnosis: String,
    pub treatments: String,
    pub prognosis: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiseaseDescription {
    pub code: String,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub sections: DiseaseSections,
    /// False for the empty stub returned on a miss.
    #[serde(default = "found_default")]
    pub found: bool,
}

fn found_default() -> bool {
    true
}

#[derive(Debug, Clone, Default)]
pub struct DiseaseCatalog {
    records: HashMap<String, DiseaseDescription>,
}

impl DiseaseCatalog {
    /// One JSON record per non-blank line. A repeated code replaces the
    /// earlier record and logs a warning.
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = HashMap::new();
        for (line, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let mut record: DiseaseDescription =
                serde_json::from_str(raw).map_err(|e| Error::Parse(format!("description line {}: {e}", line + 1)))?;
            record.found = true;
            if records.contains_key(&record.code) {
                log::warn!("description line {}: duplicate code {:?}, keeping this later record", line + 1, record.code);
            }
            records.insert(record.code.clone(), record);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The stored record, or a stub with empty sections and `found = false`.
    pub fn lookup(&self, code: &str) -> DiseaseDescription {
        self.records.get(code).cloned().unwrap_or_else(|| DiseaseDescription {
            code: code.to_string(),
            name: String::new(),
            sections: DiseaseSections::default(),
            found: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = r#"{"code":"D000","name":"Sepsis","sections":{"description":"first","symptoms":"fever"}}

{"code":"D001","name":"Anemia","sections":{"prognosis":"good"}}
{"code":"D000","name":"Sepsis","sections":{"description":"second"}}
"#;

    #[test]
    fn lookup_hits_misses_and_duplicates() {
        let cat = DiseaseCatalog::parse(FILE).unwrap();
        assert_eq!(cat.len(), 2);
        let d = cat.lookup("D000");
        assert!(d.found);
        assert_eq!(d.sections.description, "second");
        assert_eq!(d.sections.symptoms, "");
        let miss = cat.lookup("X9");
        assert!(!miss.found);
        assert_eq!(miss.code, "X9");
        assert_eq!(miss.sections, DiseaseSections::default());
        assert_eq!(cat.lookup("D001"), cat.lookup("D001"));
    }

    #[test]
    fn every_section_is_serialized() {
        let cat = DiseaseCatalog::parse(FILE).unwrap();
        let v = serde_json::to_value(cat.lookup("D001")).unwrap();
        let sections = v["sections"].as_object().unwrap();
        for key in ["description", "symptoms", "causes", "diagnosis", "treatments", "prognosis"] {
            assert!(sections.contains_key(key), "{key}");
        }
        assert_eq!(sections.len(), 6);
    }

    #[test]
    fn malformed_line_names_its_number() {
        let err = DiseaseCatalog::parse("{\"code\":\"a\"}\nnot json\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
