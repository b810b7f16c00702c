//! Editing sessions and their on-disk store.
//!
//! Layout under the data directory:
//!
//! ```text
//! sessions/<id>/session.json   score, seed, creation time, extracted f0 (written once)
//! sessions/<id>/r000001.json   revision state: pitch path, current f0, current style
//! sessions/<id>/r000001.mel    mel of the revision that produced it
//! sessions/<id>/r000001.wav    vocoded audio of that mel, written on first request
//! ```
//!
//! Files are never rewritten; each mutation adds the next revision.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use svs_core::dpe::{F0Contour, PitchPath};
use svs_core::dsp::vocoder::vocode_seeded;
use svs_core::dsp::{extract_f0, MelSpectrogram};
use svs_core::lst::{StyleScoreDoc, StyleScores};
use svs_core::model::{AcousticModel, Conditioning};
use svs_core::score::{FrameInputs, MusicScore, PhonemeInventory};
use tokio::sync::Mutex;
use uuid::Uuid;

use crate::diag::Failure;

#[derive(Clone, Debug)]
pub struct Session {
    pub id: Uuid,
    pub score: MusicScore,
    pub inputs: FrameInputs,
    pub seed: u64,
    pub created: u64,
    pub updated: u64,
    pub revision: u64,
    /// f0 analysed from the first synthesis.
    pub extracted_f0: F0Contour,
    /// Current, possibly edited, f0.
    pub f0: F0Contour,
    /// Current, possibly edited, style scores; `None` without style tokens.
    pub style: Option<StyleScores>,
    /// Latest synthesis output and the revision that produced it.
    pub mel: MelSpectrogram,
    pub mel_revision: u64,
    pub pitch_path: PitchPath,
    /// Vocoded audio of `mel`, tagged with `mel_revision`.
    pub wav: Option<(u64, Arc<Vec<u8>>)>,
}

pub fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl Session {
    /// Initial generation via the MIDI path, then vocoding and f0 analysis.
    pub fn create(model: &AcousticModel, score: MusicScore, seed: u64, iterations: usize) -> Result<Self, Failure> {
        let inputs = score.expand(&PhonemeInventory::default())?;
        let r = model.synthesize(&inputs, PitchPath::Midi, None, &Conditioning::default(), seed)?;
        let wave = vocode_seeded(&r.mel, iterations, seed)?;
        let f0 = extract_f0(&wave);
        let t = now();
        Ok(Self {
            id: Uuid::new_v4(),
            score,
            inputs,
            seed,
            created: t,
            updated: t,
            revision: 1,
            extracted_f0: f0.clone(),
            f0,
            style: r.style_scores,
            mel: r.mel,
            mel_revision: 1,
            pitch_path: PitchPath::Midi,
            wav: Some((1, Arc::new(wave.to_wav_bytes()?))),
        })
    }

    pub fn frames(&self) -> usize {
        self.inputs.len()
    }

    /// The f0 path runs whenever the contour differs from the analysed one.
    pub fn default_path(&self) -> PitchPath {
        if self.f0 == self.extracted_f0 {
            PitchPath::Midi
        } else {
            PitchPath::F0
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionFile {
    id: Uuid,
    seed: u64,
    created: u64,
    score: serde_json::Value,
    extracted_f0_hz: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RevisionFile {
    revision: u64,
    updated: u64,
    pitch_path: PitchPath,
    mel_revision: u64,
    f0_hz: Vec<f64>,
    style: Option<Vec<StyleScoreDoc>>,
}

fn style_docs(s: &StyleScores) -> Vec<StyleScoreDoc> {
    std::iter::once(&s.text).chain(s.pitch.as_ref()).map(|x| x.to_doc()).collect()
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    Failure::internal(format!("{}: {e}", path.display()))
}

/// Writes through a temporary name so a crash never leaves a partial file behind.
fn write_new(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| io_fail(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_fail(path, e))
}

fn rev_name(rev: u64, ext: &str) -> String {
    format!("r{rev:06}.{ext}")
}

pub type SessionHandle = Arc<Mutex<Session>>;

/// In-memory index of sessions, optionally mirrored to disk.
pub struct Store {
    root: Option<PathBuf>,
    sessions: RwLock<HashMap<Uuid, SessionHandle>>,
}

impl Store {
    pub fn in_memory() -> Self {
        Self { root: None, sessions: RwLock::new(HashMap::new()) }
    }

    /// Opens `data_dir`, restoring every persisted session at its latest revision.
    pub fn open(data_dir: &Path) -> Result<Self, Failure> {
        let root = data_dir.join("sessions");
        std::fs::create_dir_all(&root).map_err(|e| io_fail(&root, e))?;
        let mut map = HashMap::new();
        let entries = std::fs::read_dir(&root).map_err(|e| io_fail(&root, e))?;
        for entry in entries {
            let dir = entry.map_err(|e| io_fail(&root, e))?.path();
            if !dir.is_dir() {
                continue;
            }
            match Self::restore(&dir) {
                Ok(s) => {
                    map.insert(s.id, Arc::new(Mutex::new(s)));
                }
                Err(e) => log::warn!("skipping {}: {}", dir.display(), e.message),
            }
        }
        log::info!("restored {} sessions from {}", map.len(), root.display());
        Ok(Self { root: Some(root), sessions: RwLock::new(map) })
    }

    fn restore(dir: &Path) -> Result<Session, Failure> {
        let read = |name: &str| {
            let p = dir.join(name);
            std::fs::read(&p).map_err(|e| io_fail(&p, e))
        };
        let meta: SessionFile = serde_json::from_slice(&read("session.json")?)
            .map_err(|e| Failure::internal(format!("session.json: {e}")))?;
        let mut latest = 0;
        for entry in std::fs::read_dir(dir).map_err(|e| io_fail(dir, e))? {
            let name = entry.map_err(|e| io_fail(dir, e))?.file_name();
            let name = name.to_string_lossy();
            if let Some(n) = name.strip_prefix('r').and_then(|s| s.strip_suffix(".json")) {
                if let Ok(n) = n.parse::<u64>() {
                    latest = latest.max(n);
                }
            }
        }
        if latest == 0 {
            return Err(Failure::internal("no revision files"));
        }
        let rev: RevisionFile = serde_json::from_slice(&read(&rev_name(latest, "json"))?)
            .map_err(|e| Failure::internal(format!("{}: {e}", rev_name(latest, "json"))))?;
        let score = MusicScore::parse(&meta.score.to_string(), &PhonemeInventory::default())?;
        let inputs = score.expand(&PhonemeInventory::default())?;
        let style = match rev.style {
            Some(docs) => Some(StyleScores::from_json(&serde_json::to_string(&docs).expect("docs serialise"))?),
            None => None,
        };
        let mel = MelSpectrogram::from_bytes(&read(&rev_name(rev.mel_revision, "mel"))?)?;
        let wav = read(&rev_name(rev.mel_revision, "wav")).ok().map(|b| (rev.mel_revision, Arc::new(b)));
        Ok(Session {
            id: meta.id,
            score,
            inputs,
            seed: meta.seed,
            created: meta.created,
            updated: rev.updated,
            revision: rev.revision,
            extracted_f0: F0Contour::new(meta.extracted_f0_hz)?,
            f0: F0Contour::new(rev.f0_hz)?,
            style,
            mel,
            mel_revision: rev.mel_revision,
            pitch_path: rev.pitch_path,
            wav,
        })
    }

    pub fn get(&self, id: &Uuid) -> Option<SessionHandle> {
        self.sessions.read().expect("session index lock").get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Persists the new session and makes it visible.
    pub fn insert(&self, s: Session) -> Result<SessionHandle, Failure> {
        if let Some(root) = &self.root {
            let dir = root.join(s.id.to_string());
            std::fs::create_dir_all(&dir).map_err(|e| io_fail(&dir, e))?;
            let meta = SessionFile {
                id: s.id,
                seed: s.seed,
                created: s.created,
                score: serde_json::from_str(&s.score.to_json()).expect("score json"),
                extracted_f0_hz: s.extracted_f0.values.clone(),
            };
            write_new(&dir.join("session.json"), serde_json::to_string(&meta).expect("meta").as_bytes())?;
            self.commit(&s)?;
        }
        let id = s.id;
        let h = Arc::new(Mutex::new(s));
        self.sessions.write().expect("session index lock").insert(id, h.clone());
        Ok(h)
    }

    /// Records the session's current revision. Call once per revision bump.
    pub fn commit(&self, s: &Session) -> Result<(), Failure> {
        let Some(root) = &self.root else { return Ok(()) };
        let dir = root.join(s.id.to_string());
        if s.mel_revision == s.revision {
            write_new(&dir.join(rev_name(s.revision, "mel")), &s.mel.to_bytes())?;
        }
        let rev = RevisionFile {
            revision: s.revision,
            updated: s.updated,
            pitch_path: s.pitch_path,
            mel_revision: s.mel_revision,
            f0_hz: s.f0.values.clone(),
            style: s.style.as_ref().map(style_docs),
        };
        let text = serde_json::to_string(&rev).expect("revision serialises");
        write_new(&dir.join(rev_name(s.revision, "json")), text.as_bytes())?;
        self.store_wav(s)
    }

    /// Persists cached audio of the current mel, if any.
    pub fn store_wav(&self, s: &Session) -> Result<(), Failure> {
        let Some(root) = &self.root else { return Ok(()) };
        if let Some((rev, bytes)) = &s.wav {
            let p = root.join(s.id.to_string()).join(rev_name(*rev, "wav"));
            if *rev == s.mel_revision && !p.exists() {
                write_new(&p, bytes)?;
            }
        }
        Ok(())
    }
}
