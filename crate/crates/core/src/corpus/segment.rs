/// Characters at which a complaint paragraph is cut into clauses: full- and
/// half-width comma and semicolon, ideographic space and ASCII space.
pub const CLAUSE_DELIMITERS: [char; 6] = ['，', ',', '；', ';', '\u{3000}', ' '];

pub fn is_clause_delimiter(c: char) -> bool {
    CLAUSE_DELIMITERS.contains(&c)
}

/// Split a paragraph into clauses.
///
/// Delimiters are dropped, each piece is trimmed, and empty pieces are
/// skipped, so empty or delimiter-only input yields no clauses.
pub fn segment_paragraph(text: &str) -> Vec<String> {
    text.split(is_clause_delimiter)
        .map(str::trim)
        .filter(|piece| !piece.is_empty())
        .map(str::to_owned)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn splits_on_every_delimiter() {
        assert_eq!(
            segment_paragraph("被骗了，他说退款 给我"),
            vec!["被骗了", "他说退款", "给我"]
        );
        assert_eq!(
            segment_paragraph("a,b；c;d\u{3000}e f"),
            vec!["a", "b", "c", "d", "e", "f"]
        );
    }

    #[test]
    fn empty_pieces_are_dropped() {
        assert!(segment_paragraph("").is_empty());
        assert!(segment_paragraph("，， ;；").is_empty());
        assert_eq!(segment_paragraph("a；；b"), vec!["a", "b"]);
        assert_eq!(segment_paragraph("，a，"), vec!["a"]);
    }

    #[test]
    fn other_whitespace_is_trimmed_not_split() {
        assert_eq!(segment_paragraph("\ta\tb\n，c"), vec!["a\tb", "c"]);
    }

    fn clause_strategy() -> impl Strategy<Value = String> {
        // Delimiter-free, no surrounding whitespace.
        "[a-z0-9退款骗钱被了他说给我]{1,8}"
    }

    proptest! {
        #[test]
        fn join_then_segment_recovers_clauses(clauses in prop::collection::vec(clause_strategy(), 1..10)) {
            let joined = clauses.join("，");
            prop_assert_eq!(segment_paragraph(&joined), clauses);
        }

        #[test]
        fn segmentation_is_idempotent(clause in clause_strategy()) {
            prop_assert_eq!(segment_paragraph(&clause), vec![clause.clone()]);
        }

        #[test]
        fn no_content_is_lost(text in "[a-c，,；; \u{3000}]{0,30}") {
            let kept: String = text.chars().filter(|c| !is_clause_delimiter(*c)).collect();
            prop_assert_eq!(segment_paragraph(&text).concat(), kept);
        }
    }
}
