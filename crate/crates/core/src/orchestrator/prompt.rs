use crate::orchestrator::{HistoryEntry, Query, RoleSpec};

const SUMMARY_CHARS: usize = 120;

pub const TASK_INSTRUCTIONS: &str =
    "Work on the task from the perspective of your role. If you make the final decision, reply with the final answer only.";

/// Counts tokens as maximal alphanumeric runs plus one token per other
/// non-whitespace character.
pub fn count_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}

/// First line of a role prompt, shortened for context listings.
pub fn role_summary(role_prompt: &str) -> String {
    let line = role_prompt.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    line.chars().take(SUMMARY_CHARS).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposedPrompt {
    pub system: String,
    pub user: String,
    pub context: String,
}

impl ComposedPrompt {
    pub fn token_count(&self) -> usize {
        count_tokens(&self.system) + count_tokens(&self.user) + count_tokens(&self.context)
    }
}

/// Builds the system prompt, user prompt and context block for one agent
/// call. The context block lists the masked-in history entries in step order.
pub fn compose_prompt(role: &RoleSpec, query: &Query, history: &[HistoryEntry], mask: &[bool]) -> ComposedPrompt {
    assert_eq!(mask.len(), history.len(), "mask length must match history length");
    let mut system = role.role_prompt.clone();
    if !role.tools.is_empty() {
        system.push_str("\nTools: ");
        system.push_str(&role.tools.join(", "));
    }
    let user = format!("Task: {}\n\n{}", query.text, TASK_INSTRUCTIONS);
    let context = history
        .iter()
        .zip(mask)
        .filter(|(_, keep)| **keep)
        .map(|(h, _)| format!("Role: {}\nResponse: {}", role_summary(&h.role_prompt), h.response_text))
        .collect::<Vec<_>>()
        .join("\n\n");
    ComposedPrompt { system, user, context }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_counter_basics() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("hello world"), 2);
        assert_eq!(count_tokens("a,b  c!"), 5);
        assert_eq!(count_tokens("x1_y2: 3.5"), 5);
    }

    #[test]
    fn summary_takes_first_line() {
        assert_eq!(role_summary("\nYou are a critic.\nBe harsh."), "You are a critic.");
    }
}
