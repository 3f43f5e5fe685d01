/// Lowercased word tokens with punctuation split off.
///
/// Whitespace separates chunks; inside a chunk, runs of alphanumeric
/// characters form words, an apostrophe followed by letters forms a clitic
/// token (`'s`, `'t`), and every other character stands alone.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    for chunk in lower.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_alphanumeric() {
                let start = i;
                while i < chars.len() && chars[i].is_alphanumeric() {
                    i += 1;
                }
                out.push(chars[start..i].iter().collect());
            } else if c == '\'' && i + 1 < chars.len() && chars[i + 1].is_alphabetic() {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].is_alphanumeric() {
                    i += 1;
                }
                out.push(chars[start..i].iter().collect());
            } else {
                out.push(c.to_string());
                i += 1;
            }
        }
    }
    out
}
