//! Character n-grams and the stable hash used by every hashed feature space.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over `bytes`, keyed by `seed`.
pub fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(FNV_PRIME);
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// SplitMix64 finalizer; turns a counter into well-mixed bits.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// All character n-grams of `text` padded with one space on each side,
/// for every `n` in `min..=max`, in order of appearance.
///
/// A padded text shorter than `min` yields itself as a single gram.
pub fn char_ngrams(text: &str, min: usize, max: usize) -> Vec<String> {
    let padded: Vec<char> = std::iter::once(' ')
        .chain(text.chars())
        .chain(std::iter::once(' '))
        .collect();
    if padded.len() < min {
        return vec![padded.iter().collect()];
    }
    let mut grams = Vec::new();
    for n in min..=max.min(padded.len()) {
        grams.extend(padded.windows(n).map(|w| w.iter().collect::<String>()));
    }
    grams
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trigrams_of_short_word() {
        assert_eq!(char_ngrams("ab", 3, 3), vec![" ab", "ab "]);
        assert_eq!(char_ngrams("", 3, 5), vec!["  "]);
    }

    #[test]
    fn ngram_count_per_order() {
        // padded length 6 -> 4 trigrams, 3 four-grams, 2 five-grams
        assert_eq!(char_ngrams("abcd", 3, 5).len(), 9);
    }

    #[test]
    fn multibyte_chars_are_units() {
        assert_eq!(char_ngrams("é", 3, 3), vec![" é "]);
    }

    #[test]
    fn hash_depends_on_seed() {
        assert_ne!(fnv1a(0, b"abc"), fnv1a(1, b"abc"));
        assert_eq!(fnv1a(5, b"abc"), fnv1a(5, b"abc"));
    }
}
