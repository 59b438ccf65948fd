/// A token with byte offsets into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub start: usize,
    pub end: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Splits text into words and single-character punctuation tokens.
///
/// `-` and `.` stay inside a word when both neighbours are alphanumeric, which keeps
/// version strings ("0.9"), file names ("index.php"), hyphenated words and
/// identifiers ("CVE-2005-4676") whole.
pub fn tokenize(text: &str) -> Vec<Token<'_>> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if !is_word_char(c) {
            let end = start + c.len_utf8();
            tokens.push(Token {
                text: &text[start..end],
                start,
                end,
            });
            i += 1;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() {
            let c = chars[j].1;
            if is_word_char(c) {
                j += 1;
            } else if (c == '-' || c == '.')
                && chars[j - 1].1.is_alphanumeric()
                && chars.get(j + 1).is_some_and(|n| n.1.is_alphanumeric())
            {
                j += 2;
            } else {
                break;
            }
        }
        let end = chars.get(j).map_or(text.len(), |n| n.0);
        tokens.push(Token {
            text: &text[start..end],
            start,
            end,
        });
        i = j;
    }
    tokens
}
