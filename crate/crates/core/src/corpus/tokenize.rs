//! Deterministic word tokenizer.
//!
//! Rules, applied to the lowercased input:
//!
//! 1. Split on Unicode whitespace.
//! 2. In each chunk, every leading and trailing non-alphanumeric character
//!    becomes its own single-character token; the remaining core (which starts
//!    and ends with an alphanumeric character) is one token.
//! 3. Exception: if the core followed by one trailing `.` has the shape of a
//!    dotted abbreviation, i.e. two or more segments of 1-3 alphanumerics each
//!    terminated by `.` (`u.s.`, `e.g.`, `ph.d.`), that `.` stays attached.
//!
//! Digits are ordinary alphanumerics, so `3%` yields `3` and `%`.

/// Tokenizes `raw` into lowercase tokens. Empty input yields no tokens.
pub fn tokenize(raw: &str) -> Vec<String> {
    let lowered = raw.to_lowercase();
    let mut out = Vec::new();
    for chunk in lowered.split_whitespace() {
        split_chunk(chunk, &mut out);
    }
    out
}

fn split_chunk(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    let start = chars.iter().position(|c| c.is_alphanumeric());
    let Some(start) = start else {
        out.extend(chars.iter().map(|c| c.to_string()));
        return;
    };
    let end = chars.iter().rposition(|c| c.is_alphanumeric()).unwrap() + 1;

    out.extend(chars[..start].iter().map(|c| c.to_string()));

    let mut core: String = chars[start..end].iter().collect();
    let mut trailing = &chars[end..];
    if trailing.first() == Some(&'.') {
        let candidate = format!("{core}.");
        if is_abbreviation(&candidate) {
            core = candidate;
            trailing = &trailing[1..];
        }
    }
    out.push(core);
    out.extend(trailing.iter().map(|c| c.to_string()));
}

fn is_abbreviation(s: &str) -> bool {
    let Some(body) = s.strip_suffix('.') else {
        return false;
    };
    let segments: Vec<&str> = body.split('.').collect();
    segments.len() >= 2
        && segments.iter().all(|seg| {
            let n = seg.chars().count();
            (1..=3).contains(&n) && seg.chars().all(char::is_alphanumeric)
        })
}
