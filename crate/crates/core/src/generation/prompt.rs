//! Prompt assembly from versioned templates.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GenerationError;
use crate::retrieval::ExamplePair;
use crate::sql::TableDef;

pub const DESCRIBE_TEMPLATE: &str = "describe-v1";
pub const MERGE_TEMPLATE: &str = "merge-v1";
pub const BACKTRANSLATE_TEMPLATE: &str = "backtranslate-v1";

pub const TABLES_HEADING: &str = "### Tables";
pub const EXAMPLES_HEADING: &str = "### Examples";
pub const NOTES_HEADING: &str = "### Refinement notes";
pub const SUBS_HEADING: &str = "### Step descriptions";
pub const TARGET_HEADING: &str = "### Target SQL";
pub const QUESTION_HEADING: &str = "### Question";
pub const NOTE_PREFIX: &str = "Annotator guidance: ";

const TEMPLATES: &[(&str, &str)] = &[
    (DESCRIBE_TEMPLATE, include_str!("../../templates/describe-v1.txt")),
    (MERGE_TEMPLATE, include_str!("../../templates/merge-v1.txt")),
    (BACKTRANSLATE_TEMPLATE, include_str!("../../templates/backtranslate-v1.txt")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    Describe,
    Merge,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptContext {
    pub target_sql: String,
    pub tables: Vec<TableDef>,
    pub examples: Vec<ExamplePair>,
    pub refinement_notes: Vec<String>,
    pub mode: PromptMode,
    /// Merge mode: (step name, accepted description) in plan order, `final` last.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sub_descriptions: Vec<(String, String)>,
}

struct Template {
    instruction: String,
    output: String,
}

fn template(id: &str) -> Result<Template, GenerationError> {
    let (_, text) = TEMPLATES
        .iter()
        .find(|(name, _)| *name == id)
        .ok_or_else(|| GenerationError::UnknownTemplate(id.to_string()))?;
    let mut instruction = String::new();
    let mut output = String::new();
    let mut current: Option<&mut String> = None;
    for line in text.lines() {
        match line.trim() {
            "[instruction]" => current = Some(&mut instruction),
            "[output]" => current = Some(&mut output),
            _ => {
                if let Some(buf) = current.as_deref_mut() {
                    if !buf.is_empty() {
                        buf.push('\n');
                    }
                    buf.push_str(line);
                }
            }
        }
    }
    Ok(Template {
        instruction: instruction.trim().to_string(),
        output: output.trim().to_string(),
    })
}

pub fn template_ids() -> impl Iterator<Item = &'static str> {
    TEMPLATES.iter().map(|(id, _)| *id)
}

fn table_section(out: &mut String, tables: &[TableDef]) {
    out.push_str(TABLES_HEADING);
    out.push('\n');
    for t in tables {
        out.push_str(&t.describe());
        out.push('\n');
    }
}

/// Renders `ctx` with the named template. Sections appear in a fixed order:
/// instruction, tables, examples, step descriptions (merge), notes, target
/// SQL, output instruction.
pub fn build_prompt(ctx: &PromptContext, template_id: &str) -> Result<String, GenerationError> {
    let tpl = template(template_id)?;
    let mut out = String::new();
    out.push_str(&tpl.instruction);
    out.push_str("\n\n");
    table_section(&mut out, &ctx.tables);
    if !ctx.examples.is_empty() {
        out.push('\n');
        out.push_str(EXAMPLES_HEADING);
        out.push('\n');
        for (i, ex) in ctx.examples.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str("SQL: ");
            out.push_str(&ex.sql);
            out.push_str("\nDescription: ");
            out.push_str(&ex.nl);
            out.push('\n');
        }
    }
    if ctx.mode == PromptMode::Merge {
        out.push('\n');
        out.push_str(SUBS_HEADING);
        out.push('\n');
        for (name, nl) in &ctx.sub_descriptions {
            out.push_str(name);
            out.push_str(": ");
            out.push_str(nl);
            out.push('\n');
        }
    }
    if !ctx.refinement_notes.is_empty() {
        out.push('\n');
        out.push_str(NOTES_HEADING);
        out.push('\n');
        for note in &ctx.refinement_notes {
            out.push_str(NOTE_PREFIX);
            out.push_str(note);
            out.push('\n');
        }
    }
    out.push('\n');
    out.push_str(TARGET_HEADING);
    out.push_str("\n```sql\n");
    out.push_str(ctx.target_sql.trim());
    out.push_str("\n```\n\n");
    out.push_str(&tpl.output);
    out.push('\n');
    Ok(out)
}

/// Backtranslation prompt: schema and question only, never examples.
pub fn build_backtranslation_prompt(nl: &str, tables: &[TableDef]) -> String {
    let tpl = template(BACKTRANSLATE_TEMPLATE).expect("built-in template");
    let mut out = String::new();
    out.push_str(&tpl.instruction);
    out.push_str("\n\n");
    table_section(&mut out, tables);
    out.push('\n');
    out.push_str(QUESTION_HEADING);
    out.push('\n');
    out.push_str(nl.trim());
    out.push_str("\n\n");
    out.push_str(&tpl.output);
    out.push('\n');
    out
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Lines of the section headed `heading`, up to the next heading or blank line.
pub(crate) fn section<'a>(prompt: &'a str, heading: &str) -> Vec<&'a str> {
    let mut lines = prompt.lines();
    if !lines.any(|l| l == heading) {
        return Vec::new();
    }
    lines.take_while(|l| !l.is_empty() && !l.starts_with("### ")).collect()
}

/// Body of the first ```sql fence after `heading`.
pub(crate) fn fenced_after<'a>(prompt: &'a str, heading: &str) -> Option<&'a str> {
    let start = prompt.find(heading)? + heading.len();
    let rest = &prompt[start..];
    let open = rest.find("```sql\n")? + "```sql\n".len();
    let close = rest[open..].find("\n```")?;
    Some(&rest[open..open + close])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sql::ColumnDef;

    fn table() -> TableDef {
        TableDef {
            name: "t".into(),
            columns: vec![ColumnDef {
                name: "a".into(),
                data_type: "INT".into(),
                nullable: true,
            }],
            primary_key: vec![],
        }
    }

    fn ctx() -> PromptContext {
        PromptContext {
            target_sql: "SELECT a FROM t".into(),
            tables: vec![table()],
            ..Default::default()
        }
    }

    #[test]
    fn cold_start_prompt_has_table_line_and_no_examples() {
        let p = build_prompt(&ctx(), DESCRIBE_TEMPLATE).unwrap();
        assert!(p.contains("t(a INT)"));
        assert!(!p.contains(EXAMPLES_HEADING));
        assert_eq!(fenced_after(&p, TARGET_HEADING), Some("SELECT a FROM t"));
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            build_prompt(&ctx(), DESCRIBE_TEMPLATE).unwrap(),
            build_prompt(&ctx(), DESCRIBE_TEMPLATE).unwrap()
        );
    }

    #[test]
    fn refinement_note_included_verbatim_in_order() {
        let mut c = ctx();
        c.examples.push(ExamplePair {
            sql: "SELECT 1".into(),
            nl: "One.".into(),
        });
        c.refinement_notes = vec!["emphasize the filtering logic".into(), "be brief".into()];
        let p = build_prompt(&c, DESCRIBE_TEMPLATE).unwrap();
        let first = p.find("Annotator guidance: emphasize the filtering logic").unwrap();
        let second = p.find("Annotator guidance: be brief").unwrap();
        let examples = p.find(EXAMPLES_HEADING).unwrap();
        let target = p.find(TARGET_HEADING).unwrap();
        assert!(examples < first && first < second && second < target);
        assert_eq!(section(&p, NOTES_HEADING).len(), 2);
    }

    #[test]
    fn unknown_template() {
        assert!(matches!(
            build_prompt(&ctx(), "nope"),
            Err(GenerationError::UnknownTemplate(_))
        ));
    }

    #[test]
    fn backtranslation_prompt_is_vanilla() {
        let p = build_backtranslation_prompt("How many rows are in t?", &[table()]);
        assert!(!p.contains(EXAMPLES_HEADING));
        assert_eq!(section(&p, QUESTION_HEADING), vec!["How many rows are in t?"]);
    }

    #[test]
    fn hash_is_sha256_hex() {
        assert_eq!(
            prompt_hash(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
