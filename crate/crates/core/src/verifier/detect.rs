//! Text heuristics applied to raw proof bodies: escape tactics and restated
//! theorem headers.

const ESCAPE_TACTICS: [&str; 2] = ["sorry", "admit"];
const DECL_KEYWORDS: [&str; 3] = ["theorem", "lemma", "example"];

/// Removes `-- line` and nested `/- block -/` comments.
pub fn strip_comments(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut depth = 0usize;
    let mut i = 0;
    while i < chars.len() {
        let next = chars.get(i + 1).copied();
        if chars[i] == '/' && next == Some('-') {
            depth += 1;
            i += 2;
        } else if depth > 0 && chars[i] == '-' && next == Some('/') {
            depth -= 1;
            i += 2;
            out.push(' ');
        } else if depth > 0 {
            i += 1;
        } else if chars[i] == '-' && next == Some('-') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    out
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\'' || c == '.'
}

/// Identifier-like words of `text`, with byte offsets.
fn words(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut start = None;
    let mut out = Vec::new();
    for (i, c) in text.char_indices() {
        match (is_ident_char(c), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push((s, &text[s..i]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out.into_iter()
}

/// True if the proof closes a goal with `sorry` or `admit` outside comments.
pub fn contains_escape_tactic(proof: &str) -> bool {
    words(&strip_comments(proof)).any(|(_, w)| ESCAPE_TACTICS.contains(&w))
}

/// The declaration header: text after the keyword and name, up to `:=`.
pub fn extract_header(text: &str) -> Option<String> {
    let clean = strip_comments(text);
    let mut it = words(&clean);
    let (kw_at, kw) = it.find(|(_, w)| DECL_KEYWORDS.contains(w))?;
    let mut rest = &clean[kw_at + kw.len()..];
    if kw != "example" {
        let trimmed = rest.trim_start();
        let name_len = trimmed.find(|c: char| !is_ident_char(c)).unwrap_or(trimmed.len());
        if name_len == 0 {
            return None;
        }
        rest = &trimmed[name_len..];
    }
    let header = rest.split(":=").next().unwrap_or(rest).trim();
    if header.is_empty() {
        None
    } else {
        Some(header.to_string())
    }
}

/// Collapses whitespace runs and keeps a space only where it separates two
/// identifier characters, so spacing around operators and delimiters is
/// irrelevant.
pub fn canonicalize(header: &str) -> String {
    let collapsed = header.split_whitespace().collect::<Vec<_>>().join(" ");
    let chars: Vec<char> = collapsed.chars().collect();
    let mut out = String::with_capacity(collapsed.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ' ' {
            let prev = i.checked_sub(1).map(|j| chars[j]);
            let next = chars.get(i + 1).copied();
            if !(prev.is_some_and(is_ident_char) && next.is_some_and(is_ident_char)) {
                continue;
            }
        }
        out.push(c);
    }
    out
}

/// True if the proof restates a different theorem than `original`, or
/// restates nothing recognizable.
pub fn detect_modification(original: &str, proof: &str) -> bool {
    let Some(restated) = extract_header(proof) else {
        return true;
    };
    let original = extract_header(original).unwrap_or_else(|| {
        let s = strip_comments(original);
        s.split(":=").next().unwrap_or("").trim().to_string()
    });
    canonicalize(&original) != canonicalize(&restated)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escape_words() {
        assert!(contains_escape_tactic("by\n  simp\n  sorry"));
        assert!(contains_escape_tactic("by admit"));
        assert!(!contains_escape_tactic("by exact sorry_free_lemma"));
        assert!(!contains_escape_tactic("by\n  -- sorry, fixed\n  simp"));
        assert!(!contains_escape_tactic("by /- admit -/ rfl"));
        assert!(!contains_escape_tactic("by exact Nat.admitted"));
    }

    #[test]
    fn header_extraction() {
        assert_eq!(
            extract_header("theorem foo (n : Nat) : n + 0 = n := by simp").as_deref(),
            Some("(n : Nat) : n + 0 = n")
        );
        assert_eq!(extract_header("by simp"), None);
        assert_eq!(extract_header("theorem := rfl"), None);
    }

    #[test]
    fn whitespace_is_not_modification() {
        let s = "theorem t (a b : Nat) : a + b = b + a";
        let p = "theorem t  (a b :  Nat)\n   : a+b = b+a := by omega";
        assert!(!detect_modification(s, p));
        let p = "theorem t (ab : Nat) : a + b = b + a := by omega";
        assert!(detect_modification(s, p));
        let p = "theorem t\n  ( a b : Nat ) :\n  a + b = b + a := by omega";
        assert!(!detect_modification(s, p));
    }

    #[test]
    fn weakened_goal_is_modification() {
        let s = "theorem t (x : Nat) (h : x > 2) : x * x > 4";
        let p = "theorem t (x : Nat) (h : x > 2) : x * x > 0 := by positivity";
        assert!(detect_modification(s, p));
    }
}
