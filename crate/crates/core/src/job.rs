//! Self-contained retarget requests, shared by the command line and the HTTP service.

use serde::{Deserialize, Serialize};

use crate::anim::io::{from_json_str, AnimationFile, CharacterFile, MappingFile};
use crate::anim::{Animation, BoneMapping, Character};
use crate::correspondence::{transfer_key_vertices, TransferConfig};
use crate::descriptors::{GazeSpec, HeightField};
use crate::error::{Error, Result};
use crate::keyverts::{KeyVertex, KeyVertexSet};
use crate::naive::CopyRotations;
use crate::optimizer::{run_retarget, CharacterPair, Observer, Report, RetargetConfig, RetargetInput};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Optimize,
    CopyRotations,
}

fn one() -> usize {
    1
}

/// Everything needed to run one retarget, in file form.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub source_character: CharacterFile,
    pub source_animation: AnimationFile,
    pub target_character: CharacterFile,
    /// Bones are paired by name when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapping: Option<MappingFile>,
    /// Overrides the key-vertices embedded in the source character.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_keys: Option<Vec<KeyVertex>>,
    /// Overrides the target character's key-vertices; transferred from the source when neither exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_keys: Option<Vec<KeyVertex>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terrain: Option<HeightField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze: Option<GazeSpec>,
    #[serde(default)]
    pub config: RetargetConfig,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
}

impl JobRequest {
    pub fn parse(text: &str) -> Result<Self> {
        from_json_str(text)
    }
}

/// A validated request.
#[derive(Debug, Clone)]
pub struct Job {
    pub source: Character,
    pub target: Character,
    pub animation: Animation,
    pub mapping: BoneMapping,
    pub source_keys: KeyVertexSet,
    pub target_keys: KeyVertexSet,
    pub terrain: Option<HeightField>,
    pub gaze: Option<GazeSpec>,
    pub config: RetargetConfig,
    pub method: Method,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct JobOutput {
    pub animation: Animation,
    /// Absent for copy-rotations.
    pub report: Option<Report>,
}

/// Prefixes the JSON path of parse errors with the request field they came from.
fn within(field: &str, e: Error) -> Error {
    match e {
        Error::Parse { path, message } => Error::Parse {
            path: if path == "." { field.to_string() } else { format!("{field}.{path}") },
            message,
        },
        Error::MalformedSkeleton(m) => Error::MalformedSkeleton(format!("{field}: {m}")),
        Error::DegenerateSkeleton(m) => Error::DegenerateSkeleton(format!("{field}: {m}")),
        other => other,
    }
}

impl TryFrom<JobRequest> for Job {
    type Error = Error;

    fn try_from(r: JobRequest) -> Result<Job> {
        let source = r.source_character.into_character().map_err(|e| within("source_character", e))?;
        let target = r.target_character.into_character().map_err(|e| within("target_character", e))?;
        let animation = r.source_animation.into_animation().map_err(|e| within("source_animation", e))?;
        animation
            .validate(Some(source.skeleton.len()))
            .map_err(|e| within("source_animation", e))?;
        let mapping = match &r.mapping {
            Some(m) => BoneMapping::from_names(&m.pairs, &source.skeleton, &target.skeleton),
            None => BoneMapping::by_name(&source.skeleton, &target.skeleton),
        }
        .map_err(|e| within("mapping", e))?;
        let source_keys = match r.source_keys {
            Some(k) => KeyVertexSet::new(k, source.mesh.len()).map_err(|e| within("source_keys", e))?,
            None => source.key_vertices()?.clone(),
        };
        let target_keys = match (r.target_keys, &target.key_vertices) {
            (Some(k), _) => KeyVertexSet::new(k, target.mesh.len()).map_err(|e| within("target_keys", e))?,
            (None, Some(k)) => k.clone(),
            (None, None) => {
                let cfg = TransferConfig {
                    seed: r.seed,
                    ..Default::default()
                };
                transfer_key_vertices(&source, &source_keys, &target, &cfg)?
            }
        };
        if let Some(t) = &r.terrain {
            t.validate().map_err(|e| within("terrain", e))?;
        }
        r.config.validate()?;
        if r.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        Ok(Job {
            source,
            target,
            animation,
            mapping,
            source_keys,
            target_keys,
            terrain: r.terrain,
            gaze: r.gaze,
            config: r.config,
            method: r.method,
            seed: r.seed,
            threads: r.threads,
        })
    }
}

impl Job {
    pub fn input(&self) -> RetargetInput<'_> {
        RetargetInput {
            pairs: vec![CharacterPair {
                source: &self.source,
                source_animation: &self.animation,
                target: &self.target,
                mapping: &self.mapping,
                source_keys: &self.source_keys,
                target_keys: &self.target_keys,
                gaze: self.gaze.clone(),
            }],
            terrain: self.terrain.clone(),
        }
    }

    /// Runs the job on a pool of `threads` workers.
    pub fn run(&self, observer: &mut (dyn Observer + Send)) -> Result<JobOutput> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", self.threads)))?;
        pool.install(|| match self.method {
            Method::CopyRotations => {
                let copy = CopyRotations::new(&self.source.skeleton, &self.target.skeleton, &self.mapping)?;
                Ok(JobOutput {
                    animation: copy.transfer_animation(&self.animation),
                    report: None,
                })
            }
            Method::Optimize => {
                let mut out = run_retarget(&self.input(), &self.config, observer)?;
                Ok(JobOutput {
                    animation: out.animations.remove(0),
                    report: Some(out.report),
                })
            }
        })
    }
}
