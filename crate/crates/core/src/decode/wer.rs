use crate::error::{Error, Result};

/// Levenshtein distance with unit substitution, insertion and deletion costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance divided by the reference length.
pub fn wer<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Param("word error rate needs a nonempty reference".into()));
    }
    Ok(edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

/// A recovered word, or a run of phones that no lexicon entry explains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WordToken {
    Word(u16),
    Unknown(Vec<u16>),
}

impl WordToken {
    /// Unknown tokens never match anything, including each other.
    fn matches(&self, other: &WordToken) -> bool {
        matches!((self, other), (WordToken::Word(a), WordToken::Word(b)) if a == b)
    }
}

/// Greedy longest-match segmentation of a phone sequence into lexicon word
/// ids. Each maximal stretch of unexplained phones becomes one unknown token.
pub fn segment_words(phones: &[u16], lexicon: &[Vec<u16>]) -> Vec<WordToken> {
    let mut out = Vec::new();
    let mut junk = Vec::new();
    let mut i = 0;
    while i < phones.len() {
        let best = lexicon
            .iter()
            .enumerate()
            .filter(|(_, w)| !w.is_empty() && phones[i..].starts_with(w))
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then(b.0.cmp(&a.0)));
        match best {
            Some((id, w)) => {
                if !junk.is_empty() {
                    out.push(WordToken::Unknown(std::mem::take(&mut junk)));
                }
                out.push(WordToken::Word(id as u16));
                i += w.len();
            }
            None => {
                junk.push(phones[i]);
                i += 1;
            }
        }
    }
    if !junk.is_empty() {
        out.push(WordToken::Unknown(junk));
    }
    out
}

/// Word error rate of a decoded phone sequence against reference word ids.
pub fn word_error_rate(hyp_phones: &[u16], reference: &[u16], lexicon: &[Vec<u16>]) -> Result<(usize, usize)> {
    if reference.is_empty() {
        return Err(Error::Param("word error rate needs a nonempty reference".into()));
    }
    let hyp = segment_words(hyp_phones, lexicon);
    let reference: Vec<WordToken> = reference.iter().map(|&w| WordToken::Word(w)).collect();
    Ok((token_distance(&hyp, &reference), reference.len()))
}

fn token_distance(a: &[WordToken], b: &[WordToken]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(!x.matches(y));
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(wer::<u8>(&[], &[4, 5, 6]).unwrap(), 1.0);
        assert_eq!(wer(&['a', 'b', 'c'], &['a', 'x', 'c', 'd']).unwrap(), 0.5);
        assert!(wer::<u8>(&[1], &[]).is_err());
    }

    #[test]
    fn segmentation_with_junk() {
        let lex = vec![vec![1, 2], vec![3, 4, 5], vec![3]];
        let got = segment_words(&[1, 2, 9, 9, 3, 4, 5, 3, 7], &lex);
        assert_eq!(
            got,
            vec![
                WordToken::Word(0),
                WordToken::Unknown(vec![9, 9]),
                WordToken::Word(1),
                WordToken::Word(2),
                WordToken::Unknown(vec![7]),
            ]
        );
        // the junk run counts as one substitution
        let (errs, n) = word_error_rate(&[1, 2, 9, 9, 3, 4, 5], &[0, 2, 1], &lex).unwrap();
        assert_eq!((errs, n), (1, 3));
    }
}
