/// Splits punctuation from words and collapses whitespace, close to the
/// `13a` tokenizer: ASCII symbols become their own tokens, except that `.`
/// and `,` stay inside numbers (`3.5`, `1,000`) and `-` is split off only
/// after a digit. Apostrophes and non-ASCII characters are kept in words.
/// Case is preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut cur = String::new();
    let flush = |cur: &mut String, tokens: &mut Vec<String>| {
        if !cur.is_empty() {
            tokens.push(std::mem::take(cur));
        }
    };
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            flush(&mut cur, &mut tokens);
            continue;
        }
        let prev_digit = i > 0 && chars[i - 1].is_ascii_digit();
        let next_digit = chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        let split = match c {
            '.' | ',' => !(prev_digit && next_digit),
            '-' => prev_digit,
            '\'' => false,
            c => c.is_ascii_punctuation(),
        };
        if split {
            flush(&mut cur, &mut tokens);
            tokens.push(c.to_string());
        } else {
            cur.push(c);
        }
    }
    flush(&mut cur, &mut tokens);
    tokens
}

/// Lowercased tokens, used by the recall-oriented metrics.
pub fn tokenize_lower(text: &str) -> Vec<String> {
    tokenize(&text.to_lowercase())
}
