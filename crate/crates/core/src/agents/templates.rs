//! Agent prompt templates with `$name` placeholders.

use std::fs;
use std::io;
use std::path::Path;

/// System/user template pair for one agent role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatePair {
    pub system: String,
    pub user: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub verifier: TemplatePair,
    pub captioner: TemplatePair,
    pub proposer: TemplatePair,
    pub proposer_prompt_only: TemplatePair,
}

macro_rules! builtin {
    ($name:literal) => {
        TemplatePair {
            system: include_str!(concat!("../../assets/templates/", $name, ".system.txt"))
                .to_string(),
            user: include_str!(concat!("../../assets/templates/", $name, ".user.txt")).to_string(),
        }
    };
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    /// The templates compiled into the binary.
    pub fn builtin() -> Self {
        Self {
            verifier: builtin!("verifier"),
            captioner: builtin!("captioner"),
            proposer: builtin!("proposer"),
            proposer_prompt_only: builtin!("proposer_prompt_only"),
        }
    }

    /// Built-ins overridden by any `<role>.{system,user}.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> io::Result<Self> {
        let mut t = Self::builtin();
        for (name, pair) in [
            ("verifier", &mut t.verifier),
            ("captioner", &mut t.captioner),
            ("proposer", &mut t.proposer),
            ("proposer_prompt_only", &mut t.proposer_prompt_only),
        ] {
            for (part, slot) in [("system", &mut pair.system), ("user", &mut pair.user)] {
                let path = dir.join(format!("{name}.{part}.txt"));
                match fs::read_to_string(&path) {
                    Ok(s) => *slot = s,
                    Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(t)
    }
}

/// Replace `$identifier` occurrences with their values. Unknown names are
/// left in place; substituted values are not rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find('$') {
        out.push_str(&rest[..pos]);
        let after = &rest[pos + 1..];
        let len = after
            .char_indices()
            .find(|&(i, c)| !(c == '_' || c.is_ascii_alphabetic() || (i > 0 && c.is_ascii_digit())))
            .map_or(after.len(), |(i, _)| i);
        let name = &after[..len];
        match vars.iter().find(|(k, _)| *k == name) {
            Some((_, v)) if !name.is_empty() => out.push_str(v),
            _ => {
                out.push('$');
                out.push_str(name);
            }
        }
        rest = &after[len..];
    }
    out.push_str(rest);
    out
}
