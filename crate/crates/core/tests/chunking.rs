use hysem_core::chunking::*;
use proptest::prelude::*;

fn words(n: usize) -> String {
    (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
}

#[test]
fn hundred_tokens_in_three_windows() {
    let spec = ChunkSpec::new(40, 10).unwrap();
    assert_eq!(window_ranges(100, spec), vec![0..40, 30..70, 60..100]);
    let chunks = chunk_text(&words(100), spec, &WhitespaceTokenizer).unwrap();
    assert_eq!(chunks.len(), 3);
    assert!(chunks[1].starts_with("w30 ") && chunks[1].ends_with(" w69"));
}

#[test]
fn short_and_empty_text() {
    let spec = ChunkSpec::new(40, 10).unwrap();
    assert!(chunk_text("", spec, &WhitespaceTokenizer).unwrap().is_empty());
    let text = format!("  {}\n", words(39));
    assert_eq!(chunk_text(&text, spec, &WhitespaceTokenizer).unwrap(), vec![text.clone()]);
}

#[test]
fn spec_validation() {
    assert_eq!(ChunkSpec::new(0, 0), Err(ChunkError::ZeroMax));
    assert!(matches!(ChunkSpec::new(5, 5), Err(ChunkError::OverlapTooLarge { .. })));
    assert_eq!(ChunkSpec::default(), ChunkSpec::INDEXING);
}

struct Broken;
impl Tokenizer for Broken {
    fn encode(&self, _: &str) -> Result<Vec<String>, ChunkError> {
        Err(ChunkError::Tokenizer("boom".into()))
    }
    fn decode(&self, _: &[String]) -> Result<String, ChunkError> {
        unreachable!()
    }
}

#[test]
fn tokenizer_failure_keeps_text_whole() {
    let spec = ChunkSpec::new(2, 1).unwrap();
    assert_eq!(chunk_text("a b c d", spec, &Broken).unwrap(), vec!["a b c d".to_string()]);
}

#[test]
fn documents_number_chunks_from_zero() {
    let spec = ChunkSpec::new(4, 1).unwrap();
    let chunks = chunk_document(7, &words(10), spec, &WhitespaceTokenizer).unwrap();
    assert!(chunks.iter().enumerate().all(|(i, c)| c.chunk_idx == i && c.doc_idx == 7));
}

proptest! {
    #[test]
    fn windows_cover_with_exact_overlap(n in 1usize..2000, max in 1usize..200, ov in 0usize..200) {
        prop_assume!(ov < max);
        let spec = ChunkSpec::new(max, ov).unwrap();
        let w = window_ranges(n, spec);
        let expected = if n <= max { 1 } else { (n - max).div_ceil(max - ov) + 1 };
        prop_assert_eq!(w.len(), expected);
        prop_assert_eq!(w[0].start, 0);
        prop_assert_eq!(w.last().unwrap().end, n);
        for pair in w.windows(2) {
            prop_assert!(pair[0].len() == max);
            prop_assert_eq!(pair[0].end - pair[1].start, ov);
        }
    }

    #[test]
    fn tokenizer_round_trip(text in "[a-z \\n\\t]{0,60}") {
        let t = WhitespaceTokenizer;
        let toks = t.encode(&text).unwrap();
        prop_assert_eq!(t.encode(&t.decode(&toks).unwrap()).unwrap(), toks);
    }
}
