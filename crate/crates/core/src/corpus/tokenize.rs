/// True for characters of scripts written without spaces between words
/// (Han ideographs, kana, Thai).
pub fn is_non_segmented(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF   // hiragana, katakana
        | 0x3400..=0x4DBF // CJK extension A
        | 0x4E00..=0x9FFF // CJK unified ideographs
        | 0xF900..=0xFAFF // CJK compatibility ideographs
        | 0x0E00..=0x0E7F // Thai
    )
}

/// Lowercases and splits on whitespace and punctuation.
///
/// Every maximal run of non-segmented script inside a piece is additionally
/// expanded into overlapping character bigrams, so `"漢字測試"` yields
/// `["漢字測試", "漢字", "字測", "測試"]`. A bigram equal to the whole piece is
/// not repeated.
///
/// ```
/// use csrm::corpus::tokenize;
/// assert_eq!(tokenize("Nike Sneakers"), vec!["nike", "sneakers"]);
/// assert!(tokenize("").is_empty());
/// ```
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let mut out = Vec::new();
    for piece in lowered.split(|c: char| !c.is_alphanumeric()) {
        if piece.is_empty() {
            continue;
        }
        out.push(piece.to_string());
        let chars: Vec<char> = piece.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            if !is_non_segmented(chars[i]) {
                i += 1;
                continue;
            }
            let start = i;
            while i < chars.len() && is_non_segmented(chars[i]) {
                i += 1;
            }
            let run = &chars[start..i];
            for w in run.windows(2) {
                let bigram: String = w.iter().collect();
                if bigram != piece {
                    out.push(bigram);
                }
            }
        }
    }
    out
}
