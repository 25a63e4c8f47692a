use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::features::{utterance_fbank104, utterance_hog, utterance_mfcc, FeatureSequence};
use crate::model::UtteranceInput;
use crate::seed;
use crate::synthcorpus::{Corpus, PhoneInventory, Split, Utterance};

use super::config::TargetKind;

/// An utterance in the form the trainer consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// Position of the utterance in the corpus manifest.
    pub id: u32,
    pub input: UtteranceInput,
    /// Ground-truth phone of every video frame.
    pub labels: Vec<u16>,
    /// Phone transcript, the CTC target.
    pub phones: Vec<u16>,
    pub words: Vec<u16>,
}

impl Prepared {
    pub fn frames(&self) -> usize {
        self.input.frames
    }
}

pub fn prepare(u: &Utterance, inventory: &PhoneInventory, id: u32) -> Result<Prepared> {
    let audio = utterance_fbank104(u)?;
    Ok(Prepared {
        id,
        input: UtteranceInput {
            audio: audio.into_data(),
            video: u.frames.clone(),
            frames: u.num_frames(),
        },
        labels: u.phone_labels.clone(),
        phones: inventory.phones_of(&u.word_seq)?,
        words: u.word_seq.clone(),
    })
}

/// Loads and prepares one split together with the hand features requested.
pub fn load_split(
    corpus: &Corpus,
    split: Split,
    hand: Option<TargetKind>,
) -> Result<(Vec<Prepared>, Vec<FeatureSequence>)> {
    let mut items = Vec::new();
    let mut feats = Vec::new();
    for (i, r) in corpus.manifest.records.iter().enumerate() {
        if r.split != split {
            continue;
        }
        let u = corpus.load(r)?;
        items.push(prepare(&u, &corpus.inventory, i as u32)?);
        if let Some(kind) = hand {
            feats.push(hand_features(&u, kind)?);
        }
    }
    Ok((items, feats))
}

pub fn hand_features(u: &Utterance, kind: TargetKind) -> Result<FeatureSequence> {
    match kind {
        TargetKind::Mfcc => utterance_mfcc(u),
        TargetKind::Hog => utterance_hog(u),
        TargetKind::ModelLayer => Err(Error::Param("model features are not hand features".into())),
    }
}

/// Groups utterance indices into batches of at most `budget` frames in a
/// seeded random order. Utterances are never split; one longer than the
/// budget is a configuration error.
pub fn make_batches(lengths: &[usize], budget: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if let Some((i, &len)) = lengths.iter().enumerate().find(|(_, &l)| l > budget) {
        return Err(Error::Config(format!("utterance {i} has {len} frames, above the frame budget {budget}")));
    }
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut seed::rng(seed));
    let mut batches = Vec::new();
    let mut cur = Vec::new();
    let mut frames = 0;
    for i in order {
        if frames + lengths[i] > budget {
            batches.push(std::mem::take(&mut cur));
            frames = 0;
        }
        cur.push(i);
        frames += lengths[i];
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    Ok(batches)
}

/// Endless stream of batches, reshuffled every epoch.
#[derive(Debug)]
pub struct Batcher {
    lengths: Vec<usize>,
    budget: usize,
    seed: u64,
    epoch: u64,
    queue: std::vec::IntoIter<Vec<usize>>,
}

impl Batcher {
    pub fn new(lengths: Vec<usize>, budget: usize, seed: u64) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::Config("no training utterances".into()));
        }
        let first = make_batches(&lengths, budget, seed::substream_idx(seed, "epoch", 0))?;
        Ok(Self {
            lengths,
            budget,
            seed,
            epoch: 0,
            queue: first.into_iter(),
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        loop {
            if let Some(b) = self.queue.next() {
                return b;
            }
            self.epoch += 1;
            let s = seed::substream_idx(self.seed, "epoch", self.epoch);
            self.queue = make_batches(&self.lengths, self.budget, s)
                .expect("lengths were checked against the budget")
                .into_iter();
        }
    }
}

/// Concatenated model inputs of a batch.
#[derive(Debug, Clone)]
pub struct Packed {
    pub lengths: Vec<usize>,
    pub audio: Vec<f32>,
    pub video: Vec<f32>,
}

pub fn pack<'a>(items: impl IntoIterator<Item = &'a UtteranceInput>) -> Packed {
    let mut p = Packed {
        lengths: Vec::new(),
        audio: Vec::new(),
        video: Vec::new(),
    };
    for u in items {
        p.lengths.push(u.frames);
        p.audio.extend_from_slice(&u.audio);
        p.video.extend_from_slice(&u.video);
    }
    p
}
