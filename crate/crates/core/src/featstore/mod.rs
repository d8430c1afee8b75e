//! Feature tracks, annotations, pooling of proposal-level features, and the
//! positional inputs derived from a proposal's span.

mod io;
mod synth;

pub use io::{
    read_annotation, read_corpus, read_feature_file, read_taxonomy, write_annotation, write_corpus, write_feature_file,
    write_taxonomy, Annotation, FEATURE_MAGIC, FEATURE_VERSION,
};
pub(crate) use io::{read_json, write_json, Reader};
pub use synth::{generate_synthetic, synthetic_taxonomy, ClassFamily, SynthSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Visual,
    Audio,
}

impl Modality {
    pub fn code(self) -> u8 {
        match self {
            Modality::Visual => 0,
            Modality::Audio => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Modality::Visual),
            1 => Some(Modality::Audio),
            _ => None,
        }
    }
}

/// Snippet-level features of one modality, stored channel-major as a
/// `dim × len` tensor. Values are held at `f32` precision, the precision of
/// the on-disk format.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTrack {
    modality: Modality,
    fps: f64,
    data: Tensor2,
}

impl FeatureTrack {
    pub fn new(modality: Modality, fps: f64, data: Tensor2) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Data(format!("fps must be positive, got {fps}")));
        }
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::Data(format!(
                "feature track must have D >= 1 and L >= 1, got {:?}",
                data.shape()
            )));
        }
        if !data.is_finite() {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        let data = data.map(|v| v as f32 as f64);
        Ok(Self { modality, fps, data })
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }
    pub fn dim(&self) -> usize {
        self.data.rows()
    }
    pub fn len(&self) -> usize {
        self.data.cols()
    }
    pub fn is_empty(&self) -> bool {
        self.data.cols() == 0
    }
    pub fn fps(&self) -> f64 {
        self.fps
    }
    pub fn data(&self) -> &Tensor2 {
        &self.data
    }
    pub fn duration_seconds(&self) -> f64 {
        self.len() as f64 / self.fps
    }

    /// Feature vector of snippet `i`.
    pub fn snippet(&self, i: usize) -> Vec<f64> {
        (0..self.dim()).map(|d| self.data.get(d, i)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaxonomyMode {
    VerbNoun,
    SingleAction,
}

/// Label space. In `single_action` mode `n_verbs` counts actions and nouns
/// are unused.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub mode: TaxonomyMode,
    pub n_verbs: usize,
    pub n_nouns: usize,
    pub valid_actions: Vec<(usize, usize)>,
}

impl Taxonomy {
    pub fn single_action(n_actions: usize) -> Self {
        Self {
            mode: TaxonomyMode::SingleAction,
            n_verbs: n_actions,
            n_nouns: 0,
            valid_actions: (0..n_actions).map(|a| (a, 0)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_verbs == 0 {
            return Err(Error::Label("taxonomy has no verb/action classes".into()));
        }
        if self.mode == TaxonomyMode::VerbNoun && self.n_nouns == 0 {
            return Err(Error::Label("verb_noun taxonomy has no noun classes".into()));
        }
        for &(v, n) in &self.valid_actions {
            let noun_ok = match self.mode {
                TaxonomyMode::VerbNoun => n < self.n_nouns,
                TaxonomyMode::SingleAction => n == 0,
            };
            if v >= self.n_verbs || !noun_ok {
                return Err(Error::Label(format!("action ({v}, {n}) outside taxonomy bounds")));
            }
        }
        Ok(())
    }

    pub fn is_single_action(&self) -> bool {
        self.mode == TaxonomyMode::SingleAction
    }

    /// Verb/action head width including the background class.
    pub fn verb_classes(&self) -> usize {
        self.n_verbs + 1
    }

    /// Noun head width including background, or `None` in single-action mode.
    pub fn noun_classes(&self) -> Option<usize> {
        match self.mode {
            TaxonomyMode::VerbNoun => Some(self.n_nouns + 1),
            TaxonomyMode::SingleAction => None,
        }
    }

    pub fn verb_background(&self) -> usize {
        self.n_verbs
    }

    pub fn noun_background(&self) -> usize {
        self.n_nouns
    }

    pub fn is_valid(&self, verb: usize, noun: usize) -> bool {
        let noun = if self.is_single_action() { 0 } else { noun };
        self.valid_actions.contains(&(verb, noun))
    }
}

/// One ground-truth action instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtSegment {
    pub t_s: f64,
    pub t_e: f64,
    pub verb: usize,
    pub noun: usize,
    /// Fraction of the span with the interacted object out of view; absent
    /// when the source annotation carries no occlusion metadata.
    #[serde(default)]
    pub occlusion_fraction: Option<f64>,
}

impl GtSegment {
    pub fn duration(&self) -> f64 {
        self.t_e - self.t_s
    }
}

/// A video with its ground truth and one feature track per modality.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedVideo {
    pub video_id: String,
    pub duration: f64,
    pub segments: Vec<GtSegment>,
    pub visual: FeatureTrack,
    pub audio: FeatureTrack,
}

impl AnnotatedVideo {
    /// A video whose tracks are all zeros, for evaluation-only corpora.
    pub fn with_blank_tracks(
        video_id: impl Into<String>,
        duration: f64,
        segments: Vec<GtSegment>,
        dim: usize,
        fps: f64,
    ) -> Result<Self> {
        let len = ((duration * fps).ceil() as usize).max(1);
        let blank = |m| FeatureTrack::new(m, fps, Tensor2::zeros(dim, len));
        Ok(Self {
            video_id: video_id.into(),
            duration,
            segments,
            visual: blank(Modality::Visual)?,
            audio: blank(Modality::Audio)?,
        })
    }

    pub fn validate(&self, taxonomy: &Taxonomy) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Duration(format!(
                "video {} has duration {}",
                self.video_id, self.duration
            )));
        }
        for track in [&self.visual, &self.audio] {
            if track.duration_seconds() < self.duration - 1e-9 {
                return Err(Error::Data(format!(
                    "{:?} track of {} covers {}s of {}s",
                    track.modality(),
                    self.video_id,
                    track.duration_seconds(),
                    self.duration
                )));
            }
        }
        if self.visual.modality() != Modality::Visual || self.audio.modality() != Modality::Audio {
            return Err(Error::Data(format!(
                "{}: tracks have swapped modalities",
                self.video_id
            )));
        }
        for s in &self.segments {
            if !(0.0 <= s.t_s && s.t_s < s.t_e && s.t_e <= self.duration) {
                return Err(Error::Segment(format!(
                    "{}: segment [{}, {}] outside [0, {}]",
                    self.video_id, s.t_s, s.t_e, self.duration
                )));
            }
            if let Some(f) = s.occlusion_fraction {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::Metadata(format!(
                        "{}: occlusion fraction {f} outside [0, 1]",
                        self.video_id
                    )));
                }
            }
            if !taxonomy.is_valid(s.verb, s.noun) {
                return Err(Error::Label(format!(
                    "{}: action ({}, {}) not in taxonomy",
                    self.video_id, s.verb, s.noun
                )));
            }
        }
        Ok(())
    }

    pub fn annotation(&self) -> Annotation {
        Annotation {
            video_id: self.video_id.clone(),
            duration: self.duration,
            segments: self.segments.clone(),
        }
    }

    pub fn track(&self, modality: Modality) -> &FeatureTrack {
        match modality {
            Modality::Visual => &self.visual,
            Modality::Audio => &self.audio,
        }
    }
}

/// A taxonomy together with its videos.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub taxonomy: Taxonomy,
    pub videos: Vec<AnnotatedVideo>,
}

impl Corpus {
    pub fn video(&self, id: &str) -> Option<&AnnotatedVideo> {
        self.videos.iter().find(|v| v.video_id == id)
    }

    pub fn num_instances(&self) -> usize {
        self.videos.iter().map(|v| v.segments.len()).sum()
    }
}

/// Which feature tracks a model reads. `Av` stacks both channel-wise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Inputs {
    V,
    A,
    Av,
}

impl Inputs {
    pub const ALL: [Inputs; 3] = [Inputs::A, Inputs::V, Inputs::Av];

    pub fn label(self) -> &'static str {
        match self {
            Inputs::V => "V",
            Inputs::A => "A",
            Inputs::Av => "AV",
        }
    }

    pub fn uses_visual(self) -> bool {
        matches!(self, Inputs::V | Inputs::Av)
    }

    pub fn uses_audio(self) -> bool {
        matches!(self, Inputs::A | Inputs::Av)
    }

    /// Channel count of the stacked input given per-modality dimension `dim`.
    pub fn channels(self, dim: usize) -> usize {
        if self == Inputs::Av {
            2 * dim
        } else {
            dim
        }
    }

    /// `channels × L` stack of the selected tracks.
    pub fn stack(self, video: &AnnotatedVideo) -> Tensor2 {
        match self {
            Inputs::V => video.visual.data().clone(),
            Inputs::A => video.audio.data().clone(),
            Inputs::Av => {
                let (v, a) = (video.visual.data(), video.audio.data());
                let mut data = Vec::with_capacity(v.data().len() + a.data().len());
                data.extend_from_slice(v.data());
                data.extend_from_slice(a.data());
                Tensor2::from_vec(v.rows() + a.rows(), v.cols(), data).expect("tracks share length")
            }
        }
    }
}

impl std::str::FromStr for Inputs {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v" => Ok(Inputs::V),
            "a" => Ok(Inputs::A),
            "av" => Ok(Inputs::Av),
            other => Err(Error::Config(format!("unknown modality input {other:?}"))),
        }
    }
}

/// Nearest snippet index of a time, rounding half away from zero.
pub fn snippet_index(t: f64, fps: f64) -> i64 {
    (t * fps).round() as i64
}

/// Max-pools a track's snippets between the nearest snippet indices of
/// `t_s` and `t_e` (inclusive, clamped to the track).
///
/// ```
/// use owl_tal::featstore::{pool_proposal_features, FeatureTrack, Modality};
/// use owl_tal::numerics::Tensor2;
///
/// let data = Tensor2::from_rows(&[vec![1.0, 5.0, 2.0, 9.0]]).unwrap();
/// let track = FeatureTrack::new(Modality::Visual, 1.0, data).unwrap();
/// assert_eq!(pool_proposal_features(&track, 0.6, 2.4).unwrap(), vec![5.0]);
/// ```
pub fn pool_proposal_features(track: &FeatureTrack, t_s: f64, t_e: f64) -> Result<Vec<f64>> {
    if !(t_e > t_s) {
        return Err(Error::Segment(format!("empty span [{t_s}, {t_e}]")));
    }
    let duration = track.duration_seconds();
    if t_s < 0.0 || t_e > duration + 1e-9 {
        return Err(Error::Segment(format!(
            "span [{t_s}, {t_e}] outside track of {duration}s"
        )));
    }
    let last = track.len() as i64 - 1;
    let fps = track.fps();
    let mut i_s = snippet_index(t_s, fps).clamp(0, last);
    let mut i_e = snippet_index(t_e, fps).clamp(0, last);
    if i_s > i_e {
        let mid = snippet_index(0.5 * (t_s + t_e), fps).clamp(0, last);
        i_s = mid;
        i_e = mid;
    }
    let (i_s, i_e) = (i_s as usize, i_e as usize);
    let data = track.data();
    Ok((0..track.dim())
        .map(|d| data.row(d)[i_s..=i_e].iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect())
}

/// Relative start and absolute duration of a proposal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalInput {
    pub p_r: f64,
    pub p_d: f64,
}

pub fn positional_input(t_s: f64, t_e: f64, duration: f64) -> Result<PositionalInput> {
    if !(duration > 0.0) {
        return Err(Error::Duration(format!(
            "video duration must be positive, got {duration}"
        )));
    }
    if !(0.0 <= t_s && t_s < t_e && t_e <= duration) {
        return Err(Error::Segment(format!("span [{t_s}, {t_e}] outside [0, {duration}]")));
    }
    Ok(PositionalInput {
        p_r: t_s / duration,
        p_d: t_e - t_s,
    })
}
