use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_logits, AttentionRef, ModelBackend, ModelRequest, ModelResponse, TAG_MAIN};
use crate::error::AdapterError;

/// One line of a replay / response log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseRecord {
    pub item_id: String,
    #[serde(default = "default_tag")]
    pub tag: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_logits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_file: Option<String>,
}

fn default_tag() -> String {
    TAG_MAIN.to_string()
}

impl ResponseRecord {
    /// Builds a log record. Inline dumps are not representable here; pass the
    /// file they were written to as `attention_file`.
    pub fn from_response(response: &ModelResponse, attention_file: Option<String>) -> Self {
        let attention_file = attention_file.or_else(|| match &response.attention {
            Some(AttentionRef::File { declared, .. }) => Some(declared.clone()),
            _ => None,
        });
        ResponseRecord {
            item_id: response.item_id.clone(),
            tag: response.tag.clone(),
            text: response.raw_text.clone(),
            option_logits: response.option_logits.map(|l| l.to_vec()),
            attention_file,
        }
    }

    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("record serializes");
        line.push('\n');
        line
    }

    fn into_response(self, base_dir: &Path) -> Result<ModelResponse, String> {
        let option_logits = self
            .option_logits
            .as_deref()
            .map(check_logits)
            .transpose()?;
        let attention = self.attention_file.map(|declared| AttentionRef::File {
            resolved: base_dir.join(&declared),
            declared,
        });
        Ok(ModelResponse {
            item_id: self.item_id,
            tag: self.tag,
            raw_text: self.text,
            option_logits,
            attention,
        })
    }
}

pub fn write_records<W: Write>(records: &[ResponseRecord], mut writer: W) -> std::io::Result<()> {
    for r in records {
        writer.write_all(r.to_line().as_bytes())?;
    }
    Ok(())
}

/// Serves recorded responses keyed by `(item_id, tag)`.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    responses: HashMap<(String, String), ModelResponse>,
}

impl ReplayBackend {
    /// Loads a log; attention paths resolve against the log's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, AdapterError> {
        let path = path.as_ref();
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(PathBuf::new);
        Self::from_reader(BufReader::new(File::open(path)?), &base)
    }

    pub fn from_reader<R: BufRead>(reader: R, base_dir: &Path) -> Result<Self, AdapterError> {
        let mut responses = HashMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: ResponseRecord =
                serde_json::from_str(&line).map_err(|e| AdapterError::ReplayLog {
                    line: line_no,
                    reason: e.to_string(),
                })?;
            let key = (record.item_id.clone(), record.tag.clone());
            let response =
                record
                    .into_response(base_dir)
                    .map_err(|reason| AdapterError::ReplayLog {
                        line: line_no,
                        reason,
                    })?;
            if responses.insert(key.clone(), response).is_some() {
                return Err(AdapterError::ReplayLog {
                    line: line_no,
                    reason: format!("duplicate record for item \"{}\" tag \"{}\"", key.0, key.1),
                });
            }
        }
        Ok(ReplayBackend { responses })
    }

    pub fn from_responses(responses: impl IntoIterator<Item = ModelResponse>) -> Self {
        ReplayBackend {
            responses: responses
                .into_iter()
                .map(|r| ((r.item_id.clone(), r.tag.clone()), r))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn get(&self, item_id: &str, tag: &str) -> Option<&ModelResponse> {
        self.responses.get(&(item_id.to_string(), tag.to_string()))
    }
}

impl ModelBackend for ReplayBackend {
    fn send(&self, request: &ModelRequest) -> Result<ModelResponse, AdapterError> {
        self.get(&request.item_id, &request.tag)
            .cloned()
            .ok_or_else(|| AdapterError::ReplayMiss {
                item_id: request.item_id.clone(),
                tag: request.tag.clone(),
            })
    }
}
