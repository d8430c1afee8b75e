//! Synthetic egocentric-like corpora with planted ground truth.
//!
//! Every class carries a fixed random signature in one or both feature
//! tracks. Inside an instance the signature is added to Gaussian noise in
//! the signature's modality; everywhere else both tracks are pure noise.
//!
//! Class families decide where the signature lives:
//!
//! * `visual` classes only in the visual track,
//! * `audio` classes only in the audio track (the visual track is noise),
//! * `audiovisual` classes in both,
//! * `context` classes come in pairs sharing one visual signature and no
//!   audio. Member `m` of pair `p` is always preceded by visual class
//!   `2p + m`, so only the neighbouring instance tells the two apart.
//!
//! Occlusion replaces the visual track over a contiguous block of an
//! instance's snippets with noise of its own scale, and records the replaced
//! fraction as metadata.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AnnotatedVideo, Corpus, FeatureTrack, GtSegment, Modality, Taxonomy, TaxonomyMode};
use crate::error::{Error, Result};
use crate::numerics::Tensor2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_videos: usize,
    pub dim: usize,
    pub fps: f64,
    pub visual_classes: usize,
    pub audio_classes: usize,
    pub audiovisual_classes: usize,
    pub context_pairs: usize,
    pub instances_per_video: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub min_gap_s: f64,
    pub max_gap_s: f64,
    /// Probability that a new chain is a context chain.
    pub context_fraction: f64,
    pub occlusion_rate: f64,
    pub occlusion_min: f64,
    pub occlusion_max: f64,
    /// Standard deviation of the noise that replaces occluded snippets.
    pub occlusion_noise: f64,
    /// Standard deviation of the background noise.
    pub noise: f64,
    /// Magnitude of each signature entry.
    pub amplitude: f64,
    /// Seeds the class signatures, shared by all splits of a corpus.
    pub signature_seed: u64,
    pub mode: TaxonomyMode,
    /// Verb count used to factor classes into (verb, noun) pairs.
    pub n_verbs: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_videos: 20,
            dim: 64,
            fps: 5.0,
            visual_classes: 4,
            audio_classes: 4,
            audiovisual_classes: 0,
            context_pairs: 0,
            instances_per_video: 8,
            min_duration_s: 2.0,
            max_duration_s: 6.0,
            min_gap_s: 1.0,
            max_gap_s: 4.0,
            context_fraction: 0.5,
            occlusion_rate: 0.0,
            occlusion_min: 0.02,
            occlusion_max: 0.6,
            occlusion_noise: 1.0,
            noise: 0.3,
            amplitude: 1.0,
            signature_seed: 7,
            mode: TaxonomyMode::VerbNoun,
            n_verbs: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassFamily {
    Visual,
    Audio,
    Audiovisual,
    Context { pair: usize, member: usize },
}

impl ClassFamily {
    fn has_visual(self) -> bool {
        !matches!(self, ClassFamily::Audio)
    }
    fn has_audio(self) -> bool {
        matches!(self, ClassFamily::Audio | ClassFamily::Audiovisual)
    }
}

impl SynthSpec {
    pub fn num_classes(&self) -> usize {
        self.visual_classes + self.audio_classes + self.audiovisual_classes + 2 * self.context_pairs
    }

    pub fn family(&self, class: usize) -> ClassFamily {
        let (nv, na, nav) = (self.visual_classes, self.audio_classes, self.audiovisual_classes);
        if class < nv {
            ClassFamily::Visual
        } else if class < nv + na {
            ClassFamily::Audio
        } else if class < nv + na + nav {
            ClassFamily::Audiovisual
        } else {
            let k = class - nv - na - nav;
            ClassFamily::Context {
                pair: k / 2,
                member: k % 2,
            }
        }
    }

    /// Context class of `pair`/`member`.
    pub fn context_class(&self, pair: usize, member: usize) -> usize {
        self.visual_classes + self.audio_classes + self.audiovisual_classes + 2 * pair + member
    }

    /// The visual class always preceding a context class.
    pub fn predecessor(&self, pair: usize, member: usize) -> usize {
        2 * pair + member
    }

    fn is_predecessor(&self, class: usize) -> bool {
        class < 2 * self.context_pairs
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Spec(m.to_string()));
        if self.num_classes() == 0 {
            return bad("spec declares zero classes");
        }
        if self.n_videos == 0 || self.instances_per_video == 0 {
            return bad("spec needs at least one video with one instance");
        }
        if self.dim == 0 || !(self.fps > 0.0) {
            return bad("dim and fps must be positive");
        }
        if self.visual_classes < 2 * self.context_pairs {
            return bad("each context pair needs two visual predecessor classes");
        }
        if !(self.min_duration_s > 0.0 && self.min_duration_s <= self.max_duration_s) {
            return bad("need 0 < min_duration_s <= max_duration_s");
        }
        if (self.min_duration_s * self.fps).round() < 1.0 {
            return bad("instances must span at least one snippet");
        }
        if !(self.min_gap_s >= 0.0 && self.min_gap_s <= self.max_gap_s) {
            return bad("need 0 <= min_gap_s <= max_gap_s");
        }
        for (name, p) in [
            ("context_fraction", self.context_fraction),
            ("occlusion_rate", self.occlusion_rate),
            ("occlusion_min", self.occlusion_min),
            ("occlusion_max", self.occlusion_max),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Spec(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.occlusion_min > self.occlusion_max {
            return bad("occlusion_min exceeds occlusion_max");
        }
        if !(self.noise >= 0.0 && self.occlusion_noise >= 0.0 && self.amplitude >= 0.0) {
            return bad("noise levels and amplitude must be non-negative");
        }
        if self.mode == TaxonomyMode::VerbNoun && !(1..=self.num_classes()).contains(&self.n_verbs) {
            return bad("verb_noun mode needs 1 <= n_verbs <= number of classes");
        }
        Ok(())
    }

    fn standalone_pool(&self) -> Vec<usize> {
        (0..self.num_classes())
            .filter(|&c| !matches!(self.family(c), ClassFamily::Context { .. }) && !self.is_predecessor(c))
            .collect()
    }

    /// (verb, noun) labels of a class.
    pub fn labels(&self, class: usize) -> (usize, usize) {
        match self.mode {
            TaxonomyMode::VerbNoun => (class % self.n_verbs, class / self.n_verbs),
            TaxonomyMode::SingleAction => (class, 0),
        }
    }
}

/// Taxonomy implied by a synthetic spec.
pub fn synthetic_taxonomy(spec: &SynthSpec) -> Taxonomy {
    let k = spec.num_classes();
    match spec.mode {
        TaxonomyMode::SingleAction => Taxonomy::single_action(k),
        TaxonomyMode::VerbNoun => Taxonomy {
            mode: TaxonomyMode::VerbNoun,
            n_verbs: spec.n_verbs,
            n_nouns: k.div_ceil(spec.n_verbs),
            valid_actions: (0..k).map(|c| spec.labels(c)).collect(),
        },
    }
}

struct Signatures {
    visual: Vec<Option<Vec<f64>>>,
    audio: Vec<Option<Vec<f64>>>,
}

fn signatures(spec: &SynthSpec) -> Signatures {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.signature_seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..spec.dim)
            .map(|_| {
                if rng.random_bool(0.5) {
                    spec.amplitude
                } else {
                    -spec.amplitude
                }
            })
            .collect()
    };
    let k = spec.num_classes();
    let mut visual = Vec::with_capacity(k);
    let mut audio = Vec::with_capacity(k);
    let shared: Vec<Vec<f64>> = (0..spec.context_pairs).map(|_| draw(&mut rng)).collect();
    for c in 0..k {
        let fam = spec.family(c);
        let v = match fam {
            ClassFamily::Context { pair, .. } => Some(shared[pair].clone()),
            f if f.has_visual() => Some(draw(&mut rng)),
            _ => None,
        };
        let a = fam.has_audio().then(|| draw(&mut rng));
        visual.push(v);
        audio.push(a);
    }
    Signatures { visual, audio }
}

#[derive(Clone, Copy)]
struct Planted {
    class: usize,
    start: usize,
    len: usize,
    occluded: Option<(usize, usize)>,
}

fn plan_script(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let pool = spec.standalone_pool();
    let mut script = Vec::with_capacity(spec.instances_per_video);
    while script.len() < spec.instances_per_video {
        let remaining = spec.instances_per_video - script.len();
        let want_context =
            spec.context_pairs > 0 && remaining >= 2 && (pool.is_empty() || rng.random_bool(spec.context_fraction));
        if want_context {
            let pair = rng.random_range(0..spec.context_pairs);
            let member = rng.random_range(0..2);
            script.push(spec.predecessor(pair, member));
            script.push(spec.context_class(pair, member));
            if remaining >= 3 && !pool.is_empty() {
                script.push(pool[rng.random_range(0..pool.len())]);
            }
        } else if !pool.is_empty() {
            script.push(pool[rng.random_range(0..pool.len())]);
        } else {
            // only context chains are possible and one slot is left
            break;
        }
    }
    script
}

fn snippets(seconds: f64, fps: f64) -> usize {
    (seconds * fps).round().max(0.0) as usize
}

/// Deterministically generates `spec.n_videos` videos from `seed`.
///
/// ```
/// use owl_tal::featstore::{generate_synthetic, SynthSpec};
/// let spec = SynthSpec { n_videos: 2, ..SynthSpec::default() };
/// let a = generate_synthetic(&spec, 5).unwrap();
/// let b = generate_synthetic(&spec, 5).unwrap();
/// assert_eq!(a, b);
/// ```
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    let sigs = signatures(spec);
    let taxonomy = synthetic_taxonomy(spec);
    let fps = spec.fps;
    let (dmin, dmax) = (snippets(spec.min_duration_s, fps), snippets(spec.max_duration_s, fps));
    let (gmin, gmax) = (snippets(spec.min_gap_s, fps), snippets(spec.max_gap_s, fps));
    let trailing = gmin.max(1);

    let mut videos = Vec::with_capacity(spec.n_videos);
    for vi in 0..spec.n_videos {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(vi as u64 + 1);
        let script = plan_script(spec, &mut rng);

        let mut planted: Vec<Planted> = Vec::with_capacity(script.len());
        let mut cursor = rng.random_range(gmin..=gmax).max(1);
        for (k, &class) in script.iter().enumerate() {
            let len = rng.random_range(dmin..=dmax).max(1);
            let occluded = if spec.family(class).has_visual() && rng.random_bool(spec.occlusion_rate) {
                let f = rng.random_range(spec.occlusion_min..=spec.occlusion_max);
                let n_occ = ((f * len as f64).round() as usize).min(len);
                let at = rng.random_range(0..=len - n_occ);
                Some((at, n_occ))
            } else {
                None
            };
            planted.push(Planted {
                class,
                start: cursor,
                len,
                occluded,
            });
            let next_is_context = script
                .get(k + 1)
                .is_some_and(|&c| matches!(spec.family(c), ClassFamily::Context { .. }));
            let gap = if next_is_context {
                gmin
            } else {
                rng.random_range(gmin..=gmax)
            };
            cursor += len + gap.max(1);
        }
        let last_end = planted.last().map_or(cursor, |p| p.start + p.len);
        let total = last_end + trailing;

        let mut visual = Tensor2::zeros(spec.dim, total);
        let mut audio = Tensor2::zeros(spec.dim, total);
        for track in [&mut visual, &mut audio] {
            if spec.noise > 0.0 {
                for v in track.data_mut() {
                    *v = spec.noise * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        let mut segments = Vec::with_capacity(planted.len());
        for p in &planted {
            for i in p.start..p.start + p.len {
                let local = i - p.start;
                let occluded = p.occluded.is_some_and(|(at, n)| local >= at && local < at + n);
                if let Some(sig) = &sigs.visual[p.class] {
                    for (d, s) in sig.iter().enumerate() {
                        if occluded {
                            let z: f64 = rng.sample(StandardNormal);
                            visual.set(d, i, spec.occlusion_noise * z);
                        } else {
                            visual.set(d, i, visual.get(d, i) + s);
                        }
                    }
                }
                if let Some(sig) = &sigs.audio[p.class] {
                    for (d, s) in sig.iter().enumerate() {
                        audio.set(d, i, audio.get(d, i) + s);
                    }
                }
            }
            let (verb, noun) = spec.labels(p.class);
            let occ = p.occluded.map_or(0.0, |(_, n)| n as f64 / p.len as f64);
            segments.push(GtSegment {
                t_s: p.start as f64 / fps,
                t_e: (p.start + p.len) as f64 / fps,
                verb,
                noun,
                occlusion_fraction: Some(occ),
            });
        }
        let video = AnnotatedVideo {
            video_id: format!("s{seed}_v{vi:03}"),
            duration: total as f64 / fps,
            segments,
            visual: FeatureTrack::new(Modality::Visual, fps, visual)?,
            audio: FeatureTrack::new(Modality::Audio, fps, audio)?,
        };
        video.validate(&taxonomy)?;
        videos.push(video);
    }
    Ok(Corpus { taxonomy, videos })
}
