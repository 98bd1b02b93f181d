//! Prompt template assets. Defaults are compiled in; a directory with the same
//! file names can override them.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::TemplateError;

pub const INSTRUCTION_FILE: &str = "instruction.txt";
pub const CGR_EXTRACT_FILE: &str = "cgr_extract.txt";
pub const CGR_ANSWER_FILE: &str = "cgr_answer.txt";
pub const GEN_COMMON_FILE: &str = "gen_common.txt";
pub const GEN_VERSION_FILES: [&str; 4] = ["gen_v0.txt", "gen_v1.txt", "gen_v2.txt", "gen_v3.txt"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub instruction: String,
    pub cgr_extract: String,
    pub cgr_answer: String,
    pub gen_common: String,
    pub gen_versions: [String; 4],
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            instruction: include_str!("../prompts/instruction.txt").to_string(),
            cgr_extract: include_str!("../prompts/cgr_extract.txt").to_string(),
            cgr_answer: include_str!("../prompts/cgr_answer.txt").to_string(),
            gen_common: include_str!("../prompts/gen_common.txt").to_string(),
            gen_versions: [
                include_str!("../prompts/gen_v0.txt").to_string(),
                include_str!("../prompts/gen_v1.txt").to_string(),
                include_str!("../prompts/gen_v2.txt").to_string(),
                include_str!("../prompts/gen_v3.txt").to_string(),
            ],
        }
    }
}

impl PromptSet {
    /// Reads every asset from `dir`. All files must be present.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            if !path.is_file() {
                return Err(TemplateError::MissingAsset(path));
            }
            Ok(std::fs::read_to_string(path)?)
        };
        Ok(PromptSet {
            instruction: read(INSTRUCTION_FILE)?,
            cgr_extract: read(CGR_EXTRACT_FILE)?,
            cgr_answer: read(CGR_ANSWER_FILE)?,
            gen_common: read(GEN_COMMON_FILE)?,
            gen_versions: [
                read(GEN_VERSION_FILES[0])?,
                read(GEN_VERSION_FILES[1])?,
                read(GEN_VERSION_FILES[2])?,
                read(GEN_VERSION_FILES[3])?,
            ],
        })
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_][a-z0-9_]*)\}").unwrap())
}

/// Substitutes `{name}` placeholders in one pass. Substituted values are not
/// rescanned, so they may contain braces. Any placeholder without a value is
/// an error.
pub fn render_template(template: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for caps in placeholder_re().captures_iter(template) {
        let whole = caps.get(0).unwrap();
        let name = &caps[1];
        let value = vars
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| TemplateError::UnresolvedPlaceholder(name.to_string()))?;
        out.push_str(&template[last..whole.start()]);
        out.push_str(value);
        last = whole.end();
    }
    out.push_str(&template[last..]);
    Ok(out)
}
