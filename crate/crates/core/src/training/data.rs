//! Windowed participant data held in memory for training and evaluation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Series, Session};
use crate::error::{Error, Result};
use crate::evaluation::EvalTargets;
use crate::preprocess::{
    diff_normalize_signal, optical_flow_magnitude, prepare_session, read_window, window_clips, write_window,
    CacheKeyParams, FaceDetector, NormalizedClip, PrepareConfig, TargetKind, WindowCache,
};

/// Everything needed to turn a session into training windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub prepare: PrepareConfig,
    pub t: usize,
    pub target_kind: TargetKind,
    /// Compute the optical-flow series for the motion probe.
    pub with_flow: bool,
}

impl DataConfig {
    fn key(&self) -> CacheKeyParams {
        CacheKeyParams {
            t: self.t,
            stride: self.t,
            target_kind: self.target_kind,
            output_size: self.prepare.crop.output_size,
            fs_model: self.prepare.fs_model,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    targets: EvalTargets,
    flow: Option<Series>,
}

/// Non-overlapping windows of one participant plus the EDA traces they were cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantData {
    pub id: String,
    pub windows: Vec<NormalizedClip>,
    pub targets: EvalTargets,
    /// Optical-flow magnitude per consecutive frame pair, if computed.
    pub flow: Option<Series>,
}

impl ParticipantData {
    /// Crops, decimates and windows a session, reusing `cache` when possible.
    pub fn prepare(
        session: &Session,
        detector: &dyn FaceDetector,
        cfg: &DataConfig,
        cache: Option<&WindowCache>,
    ) -> Result<Self> {
        let id = &session.participant_id;
        let key = cfg.key();
        if let Some(cache) = cache {
            let side = cache.dir_for(id, &key).join("targets.json");
            if side.is_file() {
                if let Some(windows) = cache.load(id, &key)? {
                    let s: Sidecar = serde_json::from_str(&fs::read_to_string(&side)?)
                        .map_err(|e| Error::load(&side, e))?;
                    if !cfg.with_flow || s.flow.is_some() {
                        log::debug!("{id}: {} windows from cache", windows.len());
                        return Ok(Self {
                            id: id.clone(),
                            windows,
                            targets: s.targets,
                            flow: s.flow,
                        });
                    }
                }
            }
        }
        let prepared = prepare_session(session, detector, &cfg.prepare)?;
        let windows = window_clips(&prepared, cfg.t, cfg.t, cfg.target_kind)?;
        let flow = if cfg.with_flow {
            Some(optical_flow_magnitude(&prepared.clip)?)
        } else {
            None
        };
        let data = Self {
            id: id.clone(),
            windows,
            targets: EvalTargets::from(&prepared),
            flow,
        };
        if let Some(cache) = cache {
            let dir = cache.store(id, &key, &data.windows)?;
            data.write_sidecar(&dir.join("targets.json"))?;
        }
        Ok(data)
    }

    fn write_sidecar(&self, path: &Path) -> Result<()> {
        let s = Sidecar {
            targets: self.targets.clone(),
            flow: self.flow.clone(),
        };
        fs::write(path, serde_json::to_vec(&s)?)?;
        Ok(())
    }

    pub fn window_t(&self) -> Option<usize> {
        self.windows.first().map(|w| w.len())
    }

    pub fn target_kind(&self) -> Option<TargetKind> {
        self.windows.first().map(|w| w.target_kind)
    }

    /// Recomputes every window's labels for another target.
    pub fn relabel(&mut self, kind: TargetKind) -> Result<()> {
        let trace = match kind {
            TargetKind::Raw => &self.targets.eda_raw,
            TargetKind::Tonic => &self.targets.eda_tonic,
        };
        for w in &mut self.windows {
            let s = w.origin.start_index;
            let t = w.labels.len();
            if s + t + 1 > trace.len() {
                return Err(Error::Alignment(format!(
                    "{}: window {} runs past the {} label samples",
                    self.id,
                    w.window_index,
                    trace.len()
                )));
            }
            w.labels = diff_normalize_signal(&trace[s..=s + t])?;
            w.target_kind = kind;
        }
        Ok(())
    }

    /// Writes windows and traces under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for w in &self.windows {
            write_window(&dir.join(format!("w{:05}.bin", w.window_index)), w)?;
        }
        self.write_sidecar(&dir.join("targets.json"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let side = dir.join("targets.json");
        let s: Sidecar = serde_json::from_str(&fs::read_to_string(&side).map_err(|e| Error::load(&side, e))?)
            .map_err(|e| Error::load(&side, e))?;
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::load(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        files.sort();
        let windows = files.iter().map(|p| read_window(p)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id: s.targets.participant_id.clone(),
            windows,
            targets: s.targets,
            flow: s.flow,
        })
    }
}

/// Participants sorted by id, all windowed the same way.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    participants: Vec<ParticipantData>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetIndex {
    participants: Vec<String>,
}

impl ExperimentData {
    pub fn new(mut participants: Vec<ParticipantData>) -> Result<Self> {
        participants.sort_by(|a, b| a.id.cmp(&b.id));
        if participants.windows(2).any(|p| p[0].id == p[1].id) {
            return Err(Error::Config("duplicate participant id".into()));
        }
        let shapes: Vec<_> = participants
            .iter()
            .flat_map(|p| p.windows.iter().map(|w| (w.len(), w.height, w.width, w.target_kind)))
            .collect();
        if shapes.windows(2).any(|s| s[0] != s[1]) {
            return Err(Error::Shape("participants were windowed with different settings".into()));
        }
        Ok(Self { participants })
    }

    pub fn participants(&self) -> &[ParticipantData] {
        &self.participants
    }

    pub fn ids(&self) -> Vec<String> {
        self.participants.iter().map(|p| p.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ParticipantData> {
        self.participants
            .binary_search_by(|p| p.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.participants[i])
    }

    pub fn window_t(&self) -> Option<usize> {
        self.participants.iter().find_map(|p| p.window_t())
    }

    pub fn relabel(&mut self, kind: TargetKind) -> Result<()> {
        self.participants.iter_mut().try_for_each(|p| p.relabel(kind))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for p in &self.participants {
            p.save(&dir.join(&p.id))?;
        }
        let index = DatasetIndex {
            participants: self.ids(),
        };
        fs::write(dir.join("dataset.json"), serde_json::to_string_pretty(&index)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ip = dir.join("dataset.json");
        let index: DatasetIndex = serde_json::from_str(&fs::read_to_string(&ip).map_err(|e| Error::load(&ip, e))?)
            .map_err(|e| Error::load(&ip, e))?;
        let parts = index
            .participants
            .iter()
            .map(|id| ParticipantData::load(&dir.join(id)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(parts)
    }
}
