//! Approximate token accounting for corpus size reporting.
//!
//! Mixture manifests report corpus size in millions of tokens. Exact token
//! counts depend on the downstream model's tokenizer, which this crate does
//! not ship; the approximation here (word count scaled by 1.3) tracks real
//! subword tokenizers closely enough for recipe bookkeeping, where only the
//! relative channel sizes matter.

/// Counts tokens in rendered text.
pub trait TokenCounter {
    fn count(&self, text: &str) -> usize;
}

/// Word-based approximation: splits on whitespace and punctuation boundaries,
/// then scales the word count by 1.3 (rounded half-up) to mimic subword
/// inflation.
#[derive(Debug, Clone, Copy, Default)]
pub struct ApproxTokenCounter;

impl ApproxTokenCounter {
    fn words(text: &str) -> usize {
        let mut count = 0;
        let mut in_word = false;
        for ch in text.chars() {
            let boundary = ch.is_whitespace() || (ch.is_ascii_punctuation() && ch != '\'');
            if boundary {
                in_word = false;
            } else if !in_word {
                in_word = true;
                count += 1;
            }
        }
        count
    }
}

impl TokenCounter for ApproxTokenCounter {
    fn count(&self, text: &str) -> usize {
        // Round half-up so count(1 word) = 1, count(10 words) = 13.
        (Self::words(text) * 13 + 5) / 10
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_zero() {
        assert_eq!(ApproxTokenCounter.count(""), 0);
        assert_eq!(ApproxTokenCounter.count("   \n\t"), 0);
    }

    #[test]
    fn scales_words_by_1_3() {
        let ten = "a b c d e f g h i j";
        assert_eq!(ApproxTokenCounter.count(ten), 13);
    }

    #[test]
    fn punctuation_splits_words() {
        // "Action:Search" reads as two words, matching how subword
        // tokenizers split on the colon.
        assert_eq!(ApproxTokenCounter::words("Action:Search"), 2);
        assert_eq!(ApproxTokenCounter::words("don't"), 1);
        assert_eq!(ApproxTokenCounter::words("{\"q\": \"rust\"}"), 2);
    }

    #[test]
    fn single_word_rounds_up() {
        assert_eq!(ApproxTokenCounter.count("hello"), 1);
    }
}
