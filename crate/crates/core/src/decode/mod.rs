//! CTC decoding, word error rate and report tables.

pub mod report;
mod wer;

pub use wer::{edit_distance, segment_words, wer, word_error_rate, WordToken};

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A decoded labeling with its log-probability under the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub score: f64,
}

fn check_rows(logp: &[f32], classes: usize) -> Result<usize> {
    if classes < 2 || logp.len() % classes != 0 {
        return Err(Error::Param(format!("{} values are not rows of {classes} classes", logp.len())));
    }
    Ok(logp.len() / classes)
}

/// Removes repeats, then blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Per-frame argmax followed by the collapse map. `logp` holds rows of
/// `classes` values with the blank in the last column; ties go to the lower
/// index.
pub fn greedy_decode(logp: &[f32], classes: usize) -> Result<Vec<usize>> {
    check_rows(logp, classes)?;
    let path: Vec<usize> = logp
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect();
    Ok(collapse(&path, classes - 1))
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Debug, Clone, Copy)]
struct Mass {
    blank: f64,
    non_blank: f64,
}

impl Mass {
    const ZERO: Mass = Mass {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
    };

    fn total(self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

fn prune(beams: BTreeMap<Vec<usize>, Mass>, width: usize) -> Vec<(Vec<usize>, Mass)> {
    let mut v: Vec<(Vec<usize>, Mass)> = beams.into_iter().collect();
    // stable sort keeps lexicographic order among equal scores
    v.sort_by(|a, b| b.1.total().total_cmp(&a.1.total()));
    v.truncate(width);
    v
}

/// Prefix beam search over collapsed labelings, keeping blank-ending and
/// non-blank-ending mass separately per prefix.
pub fn beam_decode(logp: &[f32], classes: usize, beam_width: usize) -> Result<Hypothesis> {
    let frames = check_rows(logp, classes)?;
    if beam_width == 0 {
        return Err(Error::Param("beam width must be at least 1".into()));
    }
    let blank = classes - 1;
    let mut beams = vec![(
        Vec::new(),
        Mass {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    )];
    for t in 0..frames {
        let row = &logp[t * classes..(t + 1) * classes];
        let mut next: BTreeMap<Vec<usize>, Mass> = BTreeMap::new();
        for (prefix, mass) in &beams {
            let stay = next.entry(prefix.clone()).or_insert(Mass::ZERO);
            stay.blank = log_add(stay.blank, mass.total() + row[blank] as f64);
            for (c, &p) in row.iter().enumerate().take(blank) {
                let p = p as f64;
                let last = prefix.last() == Some(&c);
                if last {
                    let stay = next.entry(prefix.clone()).or_insert(Mass::ZERO);
                    stay.non_blank = log_add(stay.non_blank, mass.non_blank + p);
                }
                let mut ext = prefix.clone();
                ext.push(c);
                let grow = next.entry(ext).or_insert(Mass::ZERO);
                let from = if last { mass.blank } else { mass.total() };
                grow.non_blank = log_add(grow.non_blank, from + p);
            }
        }
        beams = prune(next, beam_width);
    }
    let (tokens, mass) = beams.into_iter().next().expect("beam never empties");
    Ok(Hypothesis {
        tokens,
        score: mass.total(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(path: &[usize], classes: usize) -> Vec<f32> {
        path.iter()
            .flat_map(|&s| (0..classes).map(move |c| if c == s { 0.0 } else { -30.0 }))
            .collect()
    }

    #[test]
    fn greedy_collapse_examples() {
        // classes a=0, b=1, blank=2
        assert_eq!(greedy_decode(&one_hot(&[0, 0, 2, 1], 3), 3).unwrap(), vec![0, 1]);
        assert_eq!(greedy_decode(&one_hot(&[2, 2, 2], 3), 3).unwrap(), Vec::<usize>::new());
        assert_eq!(greedy_decode(&one_hot(&[0, 2, 0], 3), 3).unwrap(), vec![0, 0]);
    }

    #[test]
    fn narrow_beam_matches_greedy_on_clear_logits() {
        let lp = one_hot(&[1, 1, 2, 0, 0, 2, 0], 3);
        let h = beam_decode(&lp, 3, 1).unwrap();
        assert_eq!(h.tokens, greedy_decode(&lp, 3).unwrap());
        assert!(h.score.is_finite());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(greedy_decode(&[0.0; 5], 3).is_err());
        assert!(beam_decode(&[0.0; 6], 3, 0).is_err());
    }
}
