//! Deterministic synthetic singing corpus: random short scores rendered by a harmonic
//! synthesiser with vowel formants, singer timbre, micro-deviation and vibrato on f0,
//! breath noise between phrases and phrase-level loudness envelopes.

use std::f64::consts::TAU;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dpe::F0Contour;
use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::nn::rng::seeded;
use crate::score::{
    midi_to_hz, FrameInputs, MusicScore, Note, PhonemeInventory, Pitch, Syllable, HOP,
    SAMPLE_RATE,
};

pub const N_SINGERS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusOptions {
    pub phrases: std::ops::RangeInclusive<usize>,
    pub notes_per_phrase: std::ops::RangeInclusive<usize>,
    pub note_frames: std::ops::RangeInclusive<usize>,
    pub breath_frames: std::ops::RangeInclusive<usize>,
    pub midi_range: std::ops::RangeInclusive<u8>,
    pub vibrato_probability: f64,
    pub n_singers: usize,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            phrases: 2..=2,
            notes_per_phrase: 2..=3,
            note_frames: 6..=11,
            breath_frames: 4..=6,
            midi_range: 55..=74,
            vibrato_probability: 0.5,
            n_singers: N_SINGERS,
        }
    }
}

/// One rendered song with the generator's own frame-level annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSong {
    pub score: MusicScore,
    pub waveform: Waveform,
    /// Commanded f0 at each frame centre; 0 on rests, breaths and unvoiced consonants.
    pub f0: F0Contour,
    /// Frames carrying breath noise.
    pub breath: Vec<bool>,
}

impl SyntheticSong {
    pub fn frames(&self) -> usize {
        self.score.frames()
    }

    pub fn inputs(&self, inventory: &PhonemeInventory) -> Result<FrameInputs> {
        self.score.expand(inventory)
    }
}

/// Per-note rendering controls.
#[derive(Clone, Debug, PartialEq)]
struct NoteStyle {
    vibrato: Option<(f64, f64)>,
    drift: [(f64, f64, f64); 2],
}

struct Phone {
    formants: [(f64, f64); 3],
    voiced: f64,
    noise: f64,
}

fn phone(symbol: &str) -> Phone {
    let v = |f1: f64, f2: f64, f3: f64| Phone {
        formants: [(f1, 80.0), (f2, 110.0), (f3, 160.0)],
        voiced: 1.0,
        noise: 0.0,
    };
    let c = |f1: f64, f2: f64, voiced: f64, noise: f64| Phone {
        formants: [(f1, 150.0), (f2, 250.0), (2500.0, 300.0)],
        voiced,
        noise,
    };
    match symbol {
        "a" => v(750.0, 1200.0, 2600.0),
        "e" => v(480.0, 2000.0, 2700.0),
        "i" => v(300.0, 2300.0, 3000.0),
        "o" => v(500.0, 850.0, 2500.0),
        "u" => v(330.0, 750.0, 2400.0),
        "l" | "r" | "y" | "w" => c(400.0, 1300.0, 0.8, 0.0),
        "m" | "n" => c(280.0, 1100.0, 0.6, 0.0),
        "b" | "d" | "g" => c(300.0, 1500.0, 0.5, 0.15),
        "s" | "h" => c(3500.0, 6000.0, 0.0, 0.35),
        _ => c(2000.0, 4000.0, 0.0, 0.3),
    }
}

const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const ONSETS: [&str; 12] = ["l", "m", "n", "r", "s", "t", "k", "p", "h", "d", "b", "y"];
const CODAS: [&str; 4] = ["n", "m", "l", "s"];

/// `n_songs` songs drawn from `seed` with default options.
pub fn generate_synthetic_corpus(n_songs: usize, seed: u64) -> Result<Vec<SyntheticSong>> {
    generate_synthetic_corpus_with(n_songs, seed, &CorpusOptions::default())
}

pub fn generate_synthetic_corpus_with(
    n_songs: usize,
    seed: u64,
    opts: &CorpusOptions,
) -> Result<Vec<SyntheticSong>> {
    if n_songs == 0 {
        return Err(Error::InvalidArgument("corpus needs at least one song".into()));
    }
    let mut rng = seeded(seed);
    (0..n_songs)
        .map(|i| {
            let singer = i % opts.n_singers.max(1);
            let (score, styles) = random_score(&mut rng, singer, opts);
            let render_seed: u64 = rng.gen();
            render_score(&score, &styles, render_seed)
        })
        .collect()
}

fn random_score(rng: &mut ChaCha8Rng, singer: usize, opts: &CorpusOptions) -> (MusicScore, Vec<NoteStyle>) {
    let mut notes = Vec::new();
    let mut styles = Vec::new();
    let mut t = 0;
    let rest = |notes: &mut Vec<Note>, styles: &mut Vec<NoteStyle>, t: &mut usize, d: usize| {
        notes.push(Note {
            pitch: Pitch::Rest,
            start: *t,
            duration: d,
            syllable: None,
        });
        styles.push(NoteStyle {
            vibrato: None,
            drift: [(0.0, 0.0, 0.0); 2],
        });
        *t += d;
    };
    rest(&mut notes, &mut styles, &mut t, rng.gen_range(2..=3));
    let phrases = rng.gen_range(opts.phrases.clone());
    let (lo, hi) = (*opts.midi_range.start(), *opts.midi_range.end());
    let mut midi = rng.gen_range(lo..=hi);
    for ph in 0..phrases {
        if ph > 0 {
            rest(&mut notes, &mut styles, &mut t, rng.gen_range(opts.breath_frames.clone()));
        }
        for _ in 0..rng.gen_range(opts.notes_per_phrase.clone()) {
            let step: i16 = rng.gen_range(-4..=4);
            midi = (midi as i16 + step).clamp(lo as i16, hi as i16) as u8;
            let dur = rng.gen_range(opts.note_frames.clone());
            let onset = rng
                .gen_bool(0.7)
                .then(|| ONSETS[rng.gen_range(0..ONSETS.len())].to_string());
            let coda = (dur >= 8 && rng.gen_bool(0.3))
                .then(|| CODAS[rng.gen_range(0..CODAS.len())].to_string());
            notes.push(Note {
                pitch: Pitch::Midi(midi),
                start: t,
                duration: dur,
                syllable: Some(Syllable {
                    onset,
                    vowel: VOWELS[rng.gen_range(0..VOWELS.len())].to_string(),
                    coda,
                }),
            });
            let vibrato = rng
                .gen_bool(opts.vibrato_probability)
                .then(|| (rng.gen_range(5.0..6.5), rng.gen_range(0.2..0.4)));
            let mut drift = [(0.0, 0.0, 0.0); 2];
            for d in &mut drift {
                *d = (rng.gen_range(1.0..3.0), rng.gen_range(0.0..TAU), rng.gen_range(0.0..0.002));
            }
            styles.push(NoteStyle { vibrato, drift });
            t += dur;
        }
    }
    rest(&mut notes, &mut styles, &mut t, rng.gen_range(2..=3));
    (
        MusicScore {
            singer_id: singer,
            notes,
        },
        styles,
    )
}

/// Renders one score with plain notes (no vibrato, no drift).
pub fn render_plain(score: &MusicScore, seed: u64) -> Result<SyntheticSong> {
    let styles = vec![
        NoteStyle {
            vibrato: None,
            drift: [(0.0, 0.0, 0.0); 2],
        };
        score.notes.len()
    ];
    render_score(score, &styles, seed)
}

struct Singer {
    formant_scale: f64,
    tilt: f64,
    breathiness: f64,
}

fn singer(id: usize) -> Singer {
    const TABLE: [(f64, f64, f64); N_SINGERS] =
        [(1.0, 1.0, 0.02), (1.15, 0.8, 0.04), (0.9, 1.2, 0.015), (1.07, 0.9, 0.03)];
    let (formant_scale, tilt, breathiness) = TABLE[id % N_SINGERS];
    Singer {
        formant_scale,
        tilt,
        breathiness,
    }
}

fn envelope(formants: &[(f64, f64); 3], scale: f64, hz: f64) -> f64 {
    let gains = [1.0, 0.6, 0.3];
    0.02 + formants
        .iter()
        .zip(gains)
        .map(|(&(f, bw), g)| {
            let x = (hz - f * scale) / bw;
            g / (1.0 + x * x)
        })
        .sum::<f64>()
}

fn render_score(score: &MusicScore, styles: &[NoteStyle], seed: u64) -> Result<SyntheticSong> {
    score.validate()?;
    let inv = PhonemeInventory::default();
    let inputs = score.expand(&inv)?;
    let frames = score.frames();
    let n = HOP * frames - 1;
    let sr = SAMPLE_RATE as f64;
    let voice = singer(score.singer_id);
    let mut rng = seeded(seed);

    // Phrase envelopes: each run of sung notes gets a linear gain ramp.
    let mut gain_at = vec![0.0f64; frames];
    let mut phrase_start = None;
    for (i, nt) in score.notes.iter().enumerate() {
        let sung = matches!(nt.pitch, Pitch::Midi(_));
        if sung && phrase_start.is_none() {
            phrase_start = Some(i);
        }
        let last = i + 1 == score.notes.len() || !matches!(score.notes[i + 1].pitch, Pitch::Midi(_));
        if let (true, true, Some(s)) = (sung, last, phrase_start) {
            let (a, b) = (score.notes[s].start, nt.end());
            let (g0, g1): (f64, f64) = (rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0));
            for (k, g) in gain_at[a..b].iter_mut().enumerate() {
                *g = g0 + (g1 - g0) * k as f64 / (b - a).max(1) as f64;
            }
            phrase_start = None;
        }
    }

    let mut breath = vec![false; frames];
    for (i, nt) in score.notes.iter().enumerate() {
        let between = i > 0 && i + 1 < score.notes.len();
        if nt.pitch == Pitch::Rest && between && nt.duration >= 3 {
            for b in &mut breath[nt.start + 1..nt.end() - 1] {
                *b = true;
            }
        }
    }

    let mut out = vec![0.0f64; n];
    let mut f0_frames = vec![0.0f64; frames];
    let mut phase = 0.0f64;
    let mut lp = 0.0f64;
    let ramp = (0.01 * sr) as usize;
    for (ni, nt) in score.notes.iter().enumerate() {
        let (s0, s1) = (nt.start * HOP, (nt.end() * HOP).min(n));
        match nt.pitch {
            Pitch::Rest => {
                phase = 0.0;
                if breath[nt.start..nt.end()].iter().any(|&b| b) {
                    let (b0, b1) = (s0 + HOP / 2, s1.saturating_sub(HOP / 2));
                    let amp = rng.gen_range(0.02..0.05);
                    for (k, o) in out[b0..b1].iter_mut().enumerate() {
                        let w = 0.5 - 0.5 * (TAU * k as f64 / (b1 - b0) as f64).cos();
                        let x: f64 = rng.gen_range(-1.0..1.0);
                        lp += 0.3 * (x - lp);
                        *o += amp * w * (x - lp);
                    }
                }
            }
            Pitch::Midi(m) => {
                let base = midi_to_hz(m as f64);
                let style = &styles[ni];
                let ids = &inputs.phoneme_ids[nt.start..nt.end()];
                for (s, o) in out[s0..s1].iter_mut().enumerate() {
                    let secs = s as f64 / sr;
                    let mut f = base;
                    for &(rate, ph, depth) in &style.drift {
                        f *= 1.0 + depth * (TAU * rate * secs + ph).sin();
                    }
                    if let Some((rate, depth)) = style.vibrato {
                        let onset = (secs / 0.1).min(1.0);
                        f *= (onset * depth * (TAU * rate * secs).sin() / 12.0).exp2();
                    }
                    let frame = (s0 + s) / HOP;
                    let sym = inv.symbol(ids[frame - nt.start]).unwrap_or("a");
                    let p = phone(sym);
                    if (s0 + s) % HOP == 0 {
                        f0_frames[frame] = if p.voiced > 0.0 { f } else { 0.0 };
                    }
                    phase = (phase + TAU * f / sr) % TAU;
                    let g = gain_at[frame];
                    let tilt = voice.tilt * (1.6 - 0.8 * g);
                    let mut y = 0.0;
                    let mut k = 1.0;
                    while k * f < 10_000.0 {
                        let a = envelope(&p.formants, voice.formant_scale, k * f) / k.powf(tilt);
                        y += a * (k * phase).sin();
                        k += 1.0;
                    }
                    let x: f64 = rng.gen_range(-1.0..1.0);
                    let noise = (p.noise + voice.breathiness) * x;
                    let edge = (s.min(s1 - s0 - 1 - s) as f64 / ramp as f64).min(1.0);
                    *o += edge * g * (p.voiced * y + noise);
                }
            }
        }
    }
    let peak = out.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let scale = if peak > 0.0 { 0.8 / peak } else { 1.0 };
    let samples = out.iter().map(|&x| (x * scale) as f32).collect();
    Ok(SyntheticSong {
        score: score.clone(),
        waveform: Waveform::clipped(samples),
        f0: F0Contour::new(f0_frames.iter().map(|&f| f.clamp(0.0, 1500.0)).collect())?,
        breath,
    })
}
