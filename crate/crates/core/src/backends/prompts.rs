//! Prompt templates, stored byte-for-byte as shipped assets.

pub const QUERY_PARSING_PROMPT: &str = include_str!("../../assets/prompts/query_parsing.txt");
pub const GROUNDING_PROMPT: &str = include_str!("../../assets/prompts/grounding.txt");
pub const SELECTION_PROMPT: &str = include_str!("../../assets/prompts/selection.txt");

/// Extra line appended when only operable-core boxes are wanted.
pub const POSITIVE_ONLY_SUFFIX: &str =
    "\nReturn only part_index 1 boxes; omit part_index 0 boxes entirely.\n";

pub fn grounding_prompt(instruction: &str, category: &str, positive_only: bool) -> String {
    let mut p = GROUNDING_PROMPT
        .replace("{instruction}", instruction)
        .replace("{category}", category);
    if positive_only {
        p.push_str(POSITIVE_ONLY_SUFFIX);
    }
    p
}

pub fn selection_prompt(instruction: &str, n_candidates: usize) -> String {
    SELECTION_PROMPT
        .replace("{instruction}", instruction)
        .replace("{len(affordance_nodes)}", &n_candidates.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_carry_their_placeholders() {
        assert!(GROUNDING_PROMPT.contains("{instruction}"));
        assert!(GROUNDING_PROMPT.contains("{category}"));
        assert!(SELECTION_PROMPT.contains("{len(affordance_nodes)}"));
        assert!(QUERY_PARSING_PROMPT.contains("original_prompt"));
    }

    #[test]
    fn substitution_leaves_rest_untouched() {
        let p = selection_prompt("open it", 3);
        assert!(p.contains("Instruction: \"open it\""));
        assert!(p.contains("(1-3)"));
        assert_eq!(p.len(), SELECTION_PROMPT.len() - "{instruction}{len(affordance_nodes)}".len() + 8);
        let g = grounding_prompt("open it", "handle", false);
        assert!(g.ends_with("part_index.\"\"\"\n"));
        assert!(grounding_prompt("a", "b", true).ends_with(POSITIVE_ONLY_SUFFIX));
    }
}
