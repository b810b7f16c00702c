//! Music scores authored on the acoustic frame grid, and their expansion to per-frame
//! phoneme and MIDI-pitch sequences.
//!
//! Each note's syllable is laid out as one onset frame (if any), one coda frame (if any),
//! and the vowel on every remaining frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 22_050;
pub const HOP: usize = 256;
/// Pitch id used for rest frames, one past the MIDI range.
pub const REST: usize = 128;
pub const PITCH_VOCAB: usize = 129;

/// Default phoneme table. Index 0 is silence.
pub const DEFAULT_PHONEMES: [&str; 20] = [
    "sil", "a", "e", "i", "o", "u", "l", "m", "n", "r", "s", "t", "k", "p", "h", "d", "g", "b",
    "y", "w",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
}

impl Default for PhonemeInventory {
    fn default() -> Self {
        Self::new(DEFAULT_PHONEMES.iter().map(|s| s.to_string()).collect())
            .expect("default table is valid")
    }
}

impl PhonemeInventory {
    /// `symbols[0]` is taken as the silence phoneme.
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidArgument("empty phoneme inventory".into()));
        }
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(Error::InvalidArgument(format!("duplicate phoneme '{s}'")));
            }
        }
        Ok(Self { symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn silence(&self) -> usize {
        0
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pitch {
    Midi(u8),
    Rest,
}

impl Pitch {
    pub fn id(self) -> usize {
        match self {
            Pitch::Midi(p) => p as usize,
            Pitch::Rest => REST,
        }
    }

    pub fn hz(self) -> Option<f64> {
        match self {
            Pitch::Midi(p) => Some(midi_to_hz(p as f64)),
            Pitch::Rest => None,
        }
    }
}

pub fn midi_to_hz(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Syllable {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub onset: Option<String>,
    pub vowel: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coda: Option<String>,
}

impl Syllable {
    pub fn vowel(v: &str) -> Self {
        Self {
            onset: None,
            vowel: v.into(),
            coda: None,
        }
    }

    fn boundary_count(&self) -> usize {
        self.onset.is_some() as usize + self.coda.is_some() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Note {
    pub pitch: Pitch,
    pub start: usize,
    pub duration: usize,
    /// `None` only for rests.
    pub syllable: Option<Syllable>,
}

impl Note {
    pub fn end(&self) -> usize {
        self.start + self.duration
    }
}

/// A validated score: notes sorted, non-overlapping, each sung note carrying a vowel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MusicScore {
    pub singer_id: usize,
    pub notes: Vec<Note>,
}

/// Per-frame model inputs expanded from a [`MusicScore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameInputs {
    pub phoneme_ids: Vec<usize>,
    pub midi_pitch: Vec<usize>,
    pub singer_id: usize,
}

impl FrameInputs {
    pub fn len(&self) -> usize {
        self.phoneme_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phoneme_ids.is_empty()
    }
}

// JSON document shapes.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreDoc {
    singer_id: i64,
    notes: Vec<NoteDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoteDoc {
    pitch: PitchDoc,
    start: i64,
    dur: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    phonemes: Option<Syllable>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PitchDoc {
    Midi(i64),
    Word(String),
}

impl MusicScore {
    /// Parses and validates a score document against `inventory`.
    pub fn parse(text: &str, inventory: &PhonemeInventory) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let doc: ScoreDoc = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Score(format!(
                "{path}: {inner} (line {}, column {})",
                inner.line(),
                inner.column()
            ))
        })?;
        Self::from_doc(doc, inventory)
    }

    fn from_doc(doc: ScoreDoc, inventory: &PhonemeInventory) -> Result<Self> {
        if doc.singer_id < 0 {
            return Err(Error::Score(format!("singer_id: must be >= 0, got {}", doc.singer_id)));
        }
        let mut notes = Vec::with_capacity(doc.notes.len());
        for (i, n) in doc.notes.into_iter().enumerate() {
            let field = |f: &str| format!("notes[{i}].{f}");
            let pitch = match n.pitch {
                PitchDoc::Midi(p) if (0..=127).contains(&p) => Pitch::Midi(p as u8),
                PitchDoc::Midi(p) => {
                    return Err(Error::Score(format!(
                        "{}: MIDI pitch {p} outside 0..=127",
                        field("pitch")
                    )))
                }
                PitchDoc::Word(w) if w == "rest" => Pitch::Rest,
                PitchDoc::Word(w) => {
                    return Err(Error::Score(format!(
                        "{}: expected integer or \"rest\", got \"{w}\"",
                        field("pitch")
                    )))
                }
            };
            if n.start < 0 {
                return Err(Error::Score(format!("{}: must be >= 0", field("start"))));
            }
            if n.dur < 1 {
                return Err(Error::Score(format!("{}: must be >= 1", field("dur"))));
            }
            match (&pitch, &n.phonemes) {
                (Pitch::Midi(_), None) => {
                    return Err(Error::Score(format!(
                        "{}: sung note needs a vowel",
                        field("phonemes")
                    )))
                }
                (Pitch::Rest, Some(_)) => {
                    return Err(Error::Score(format!(
                        "{}: rests carry no phonemes",
                        field("phonemes")
                    )))
                }
                _ => {}
            }
            if let Some(s) = &n.phonemes {
                let parts = [("onset", s.onset.as_deref()), ("vowel", Some(s.vowel.as_str())), ("coda", s.coda.as_deref())];
                for (name, sym) in parts {
                    if let Some(sym) = sym {
                        if inventory.id(sym).is_none() {
                            return Err(Error::Score(format!(
                                "{}: unknown phoneme '{sym}'",
                                field(&format!("phonemes.{name}"))
                            )));
                        }
                    }
                }
            }
            notes.push(Note {
                pitch,
                start: n.start as usize,
                duration: n.dur as usize,
                syllable: n.phonemes,
            });
        }
        let score = Self {
            singer_id: doc.singer_id as usize,
            notes,
        };
        score.validate()?;
        Ok(score)
    }

    /// Checks ordering, overlap and vowel presence.
    pub fn validate(&self) -> Result<()> {
        if self.notes.is_empty() {
            return Err(Error::Score("notes: score has no notes".into()));
        }
        for (i, pair) in self.notes.windows(2).enumerate() {
            if pair[1].start < pair[0].start {
                return Err(Error::Score(format!(
                    "notes[{}].start: notes must be sorted by start",
                    i + 1
                )));
            }
            if pair[1].start < pair[0].end() {
                return Err(Error::Overlap {
                    first: i,
                    second: i + 1,
                });
            }
        }
        for (i, n) in self.notes.iter().enumerate() {
            if n.duration == 0 {
                return Err(Error::Score(format!("notes[{i}].dur: must be >= 1")));
            }
            if matches!(n.pitch, Pitch::Midi(_)) && n.syllable.is_none() {
                return Err(Error::Score(format!("notes[{i}].phonemes: sung note needs a vowel")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let doc = ScoreDoc {
            singer_id: self.singer_id as i64,
            notes: self
                .notes
                .iter()
                .map(|n| NoteDoc {
                    pitch: match n.pitch {
                        Pitch::Midi(p) => PitchDoc::Midi(p as i64),
                        Pitch::Rest => PitchDoc::Word("rest".into()),
                    },
                    start: n.start as i64,
                    dur: n.duration as i64,
                    phonemes: n.syllable.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("score serialises")
    }

    pub fn frames(&self) -> usize {
        self.notes.last().map_or(0, Note::end)
    }

    /// Expands the score onto the frame grid.
    pub fn expand(&self, inventory: &PhonemeInventory) -> Result<FrameInputs> {
        self.validate()?;
        let len = self.frames();
        let sil = inventory.silence();
        let mut phoneme_ids = vec![sil; len];
        let mut midi_pitch = vec![REST; len];
        let lookup = |sym: &str| {
            inventory
                .id(sym)
                .ok_or_else(|| Error::Score(format!("unknown phoneme '{sym}'")))
        };
        for (i, n) in self.notes.iter().enumerate() {
            let Some(syl) = &n.syllable else {
                continue;
            };
            let needed = 1 + syl.boundary_count();
            if n.duration < needed {
                return Err(Error::Expansion {
                    note: i,
                    frames: n.duration,
                    needed,
                });
            }
            let frames = &mut phoneme_ids[n.start..n.end()];
            frames.fill(lookup(&syl.vowel)?);
            if let Some(on) = &syl.onset {
                frames[0] = lookup(on)?;
            }
            if let Some(co) = &syl.coda {
                frames[n.duration - 1] = lookup(co)?;
            }
            midi_pitch[n.start..n.end()].fill(n.pitch.id());
        }
        Ok(FrameInputs {
            phoneme_ids,
            midi_pitch,
            singer_id: self.singer_id,
        })
    }
}
