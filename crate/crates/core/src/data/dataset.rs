use std::path::Path;

use rand::Rng;

use super::ManifestEntry;
use crate::error::{Error, Result};
use crate::motion::{
    assemble_example, load_clip, mirror_clip, parse_bvh_with, phase_channel_name, Annotations, BvhOptions,
    ClipFeatures, EndEffector, MotionClip, NormalizationStats, Skeleton, StatsBuilder, TrainingExample,
    CLIP_FRAMES, CONTACT_CHANNEL,
};
use crate::phase::{annotate_clip, extract_clip_phases, PhaseConfig};

/// All training material for one style.
#[derive(Debug, Clone)]
pub struct StyleSet {
    pub name: String,
    pub clips: Vec<ClipFeatures>,
    pub examples: Vec<TrainingExample>,
    /// Clip index of each example.
    pub example_clip: Vec<usize>,
}

impl StyleSet {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Number of distinct 240-frame windows over all clips.
    pub fn window_count(&self) -> usize {
        self.clips.iter().map(|c| (c.len() + 1).saturating_sub(CLIP_FRAMES)).sum()
    }

    /// Uniform draw over all windows: `(clip, start)`.
    pub fn sample_window<R: Rng>(&self, rng: &mut R) -> Result<(usize, usize)> {
        let total = self.window_count();
        if total == 0 {
            return Err(Error::invalid(format!("style {:?} has no 240-frame window", self.name)));
        }
        let mut k = rng.gen_range(0..total);
        for (ci, c) in self.clips.iter().enumerate() {
            let w = (c.len() + 1).saturating_sub(CLIP_FRAMES);
            if k < w {
                return Ok((ci, k));
            }
            k -= w;
        }
        unreachable!("window index within total")
    }

    pub fn window(&self, clip: usize, start: usize) -> Result<&[f32]> {
        self.clips
            .get(clip)
            .ok_or_else(|| Error::OutOfBounds(format!("clip {clip} of style {:?}", self.name)))?
            .style_clip(start)
    }

    /// The window paired with example `e` (centred on its frame).
    pub fn example_window(&self, e: usize) -> Result<&[f32]> {
        self.window(self.example_clip[e], self.examples[e].clip_start)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub skeleton: Skeleton,
    pub styles: Vec<StyleSet>,
}

fn is_annotated(clip: &MotionClip) -> bool {
    clip.aux(CONTACT_CHANNEL).is_some()
        && EndEffector::ALL
            .into_iter()
            .all(|e| clip.aux(&phase_channel_name(e)).is_some())
}

/// Runs phase extraction unless the clip already carries annotations.
pub fn prepare_clip(mut clip: MotionClip, cfg: &PhaseConfig) -> Result<MotionClip> {
    if !is_annotated(&clip) {
        let ph = extract_clip_phases(&clip, cfg)?;
        annotate_clip(&mut clip, &ph)?;
    }
    Ok(clip)
}

/// Examples of one annotated clip. Clips too short for a style window are
/// skipped with a warning.
pub fn clip_examples(clip: &MotionClip) -> Result<Option<(ClipFeatures, Vec<TrainingExample>)>> {
    if clip.len() < CLIP_FRAMES {
        log::warn!(
            "skipping {:?} clip of {} frames: a style window needs {CLIP_FRAMES}",
            clip.style,
            clip.len()
        );
        return Ok(None);
    }
    let feat = ClipFeatures::new(clip)?;
    let ann = Annotations::from_clip(clip);
    let examples = feat
        .valid_frames()
        .map(|i| assemble_example(&feat, i, &ann))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some((feat, examples)))
}

impl Dataset {
    /// Groups clips by style label in order of first appearance.
    pub fn from_clips(clips: Vec<MotionClip>, cfg: &PhaseConfig) -> Result<Dataset> {
        let Some(first) = clips.first() else {
            return Err(Error::invalid("dataset needs at least one clip"));
        };
        let skeleton = first.skeleton.clone();
        let mut styles: Vec<StyleSet> = Vec::new();
        for clip in clips {
            if clip.skeleton.len() != skeleton.len() {
                return Err(Error::shape(format!(
                    "clip {:?} has {} joints, dataset skeleton {}",
                    clip.style,
                    clip.skeleton.len(),
                    skeleton.len()
                )));
            }
            let clip = prepare_clip(clip, cfg)?;
            let Some((feat, examples)) = clip_examples(&clip)? else {
                continue;
            };
            let idx = match styles.iter().position(|s| s.name == clip.style) {
                Some(i) => i,
                None => {
                    styles.push(StyleSet {
                        name: clip.style.clone(),
                        clips: Vec::new(),
                        examples: Vec::new(),
                        example_clip: Vec::new(),
                    });
                    styles.len() - 1
                }
            };
            let s = &mut styles[idx];
            s.example_clip.extend(std::iter::repeat_n(s.clips.len(), examples.len()));
            s.examples.extend(examples);
            s.clips.push(feat);
        }
        if styles.is_empty() {
            return Err(Error::invalid("no clip is long enough to train on"));
        }
        Ok(Dataset { skeleton, styles })
    }

    pub fn from_manifest(entries: &[ManifestEntry], bvh: &BvhOptions, cfg: &PhaseConfig) -> Result<Dataset> {
        let mut clips = Vec::new();
        for e in entries {
            let mut clip = load_any_clip(&e.clip, bvh)?;
            clip.style = e.style.clone();
            clip.gait = e.gait;
            let parts = if e.ranges.is_empty() {
                vec![clip]
            } else {
                e.ranges
                    .iter()
                    .map(|r| clip.slice(r[0], r[1]))
                    .collect::<Result<Vec<_>>>()?
            };
            for p in parts {
                // annotate before mirroring so the phase channels swap sides
                let p = prepare_clip(p, cfg)?;
                if e.mirror {
                    clips.push(mirror_clip(&p)?);
                }
                clips.push(p);
            }
        }
        Dataset::from_clips(clips, cfg)
    }

    pub fn style_index(&self, name: &str) -> Option<usize> {
        self.styles.iter().position(|s| s.name == name)
    }

    pub fn style_names(&self) -> Vec<String> {
        self.styles.iter().map(|s| s.name.clone()).collect()
    }

    pub fn example_count(&self) -> usize {
        self.styles.iter().map(StyleSet::len).sum()
    }

    /// Statistics over every example; style-clip statistics over every
    /// frame of every clip.
    pub fn normalization(&self) -> Result<NormalizationStats> {
        let mut b = StatsBuilder::default();
        for s in &self.styles {
            for e in &s.examples {
                b.push_example(e);
            }
            for c in &s.clips {
                b.push_pose_rows(&c.pose);
            }
        }
        b.finish()
    }
}

/// Loads a `.bvh` file or a native clip container.
pub fn load_any_clip(path: &Path, bvh: &BvhOptions) -> Result<MotionClip> {
    let is_bvh = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("bvh"));
    if is_bvh {
        parse_bvh_with(&std::fs::read_to_string(path)?, bvh)
    } else {
        load_clip(path)
    }
}
