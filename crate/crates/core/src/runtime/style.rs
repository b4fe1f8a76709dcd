//! Precomputed style embeddings, barycentric blending and selection.

use serde::{Deserialize, Serialize};

use crate::data::StyleSet;
use crate::error::{Error, Result};
use crate::model::{ModulatorMode, NamedEmbedding, RuntimeStyle, StyleModel};

/// Tolerance on the barycentric weight sum.
pub const SIMPLEX_TOLERANCE: f32 = 1e-6;

/// Mean generator output over raw style clips. One clip gives exactly its
/// own embedding.
pub fn precompute_style(model: &StyleModel, clips: &[&[f32]]) -> Result<Vec<f32>> {
    if clips.is_empty() {
        return Err(Error::invalid("style precomputation needs at least one clip"));
    }
    let mut acc: Vec<f64> = Vec::new();
    for c in clips {
        let e = model.film_generate(c)?;
        if acc.is_empty() {
            acc = vec![0.0; e.len()];
        }
        for (a, v) in acc.iter_mut().zip(&e) {
            *a += *v as f64;
        }
    }
    let n = clips.len() as f64;
    Ok(acc.iter().map(|a| (a / n) as f32).collect())
}

/// Style windows of a training style taken every `stride` frames.
pub fn style_windows(set: &StyleSet, stride: usize) -> Result<Vec<&[f32]>> {
    let stride = stride.max(1);
    let mut out = Vec::new();
    for (c, clip) in set.clips.iter().enumerate() {
        let n = clip.len();
        if n < crate::motion::CLIP_FRAMES {
            continue;
        }
        for start in (0..=n - crate::motion::CLIP_FRAMES).step_by(stride) {
            out.push(set.window(c, start)?);
        }
    }
    Ok(out)
}

/// Embedding of a whole training style, averaged over its windows.
pub fn precompute_style_set(model: &StyleModel, set: &StyleSet, stride: usize) -> Result<NamedEmbedding> {
    let windows = style_windows(set, stride)?;
    Ok(NamedEmbedding {
        name: set.name.clone(),
        values: precompute_style(model, &windows)?,
    })
}

pub fn check_simplex(lambda: &[f32; 3]) -> Result<()> {
    let sum: f32 = lambda.iter().sum();
    if lambda.iter().any(|l| !l.is_finite() || *l < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::invalid(format!("{lambda:?} are not barycentric weights")));
    }
    Ok(())
}

/// Convex combination of three embeddings. Vertices are returned verbatim
/// and every component stays inside the inputs' range.
pub fn interpolate_styles(e: [&[f32]; 3], lambda: [f32; 3]) -> Result<Vec<f32>> {
    check_simplex(&lambda)?;
    let n = e[0].len();
    if e[1].len() != n || e[2].len() != n {
        return Err(Error::shape("embeddings differ in length"));
    }
    if let Some(k) = lambda.iter().position(|l| *l == 1.0) {
        return Ok(e[k].to_vec());
    }
    let l = lambda.map(|v| v as f64);
    Ok((0..n)
        .map(|i| {
            let v = [e[0][i], e[1][i], e[2][i]];
            let mix = l[0] * v[0] as f64 + l[1] * v[1] as f64 + l[2] * v[2] as f64;
            let lo = v[0].min(v[1]).min(v[2]);
            let hi = v[0].max(v[1]).max(v[2]);
            // weights may sum to 1 +- 1e-6, so clamp what that leaks
            (mix as f32).clamp(lo, hi)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum StyleSelection {
    Single { id: String },
    Triangle { ids: [String; 3], lambda: [f32; 3] },
}

impl StyleSelection {
    pub fn single(id: impl Into<String>) -> Self {
        StyleSelection::Single { id: id.into() }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StyleSelection::Single { .. } => Ok(()),
            StyleSelection::Triangle { lambda, .. } => check_simplex(lambda),
        }
    }

    /// True for a triangle selection strictly between its vertices.
    pub fn is_blend(&self) -> bool {
        matches!(self, StyleSelection::Triangle { lambda, .. } if !lambda.contains(&1.0))
    }
}

/// Style conditioning resolved for the network.
#[derive(Debug, Clone, PartialEq)]
pub enum ActiveStyle {
    Embedding(Vec<f32>),
    Index(usize),
}

impl ActiveStyle {
    pub fn as_runtime(&self) -> RuntimeStyle<'_> {
        match self {
            ActiveStyle::Embedding(e) => RuntimeStyle::Embedding(e),
            ActiveStyle::Index(k) => RuntimeStyle::Index(*k),
        }
    }
}

/// Named embeddings (film) or style slots (onehot, resad) of a model.
#[derive(Debug, Clone)]
pub struct StyleTable {
    mode: ModulatorMode,
    entries: Vec<NamedEmbedding>,
    slots: Vec<String>,
}

impl StyleTable {
    pub fn new(model: &StyleModel, embeddings: Vec<NamedEmbedding>) -> Result<Self> {
        let len = model.dims().embedding_len();
        if let Some(e) = embeddings.iter().find(|e| e.values.len() != len) {
            return Err(Error::shape(format!("embedding {:?} has {} values", e.name, e.values.len())));
        }
        Ok(StyleTable {
            mode: model.spec.mode,
            entries: embeddings,
            slots: model.style_names.clone(),
        })
    }

    pub fn names(&self) -> Vec<String> {
        match self.mode {
            ModulatorMode::Film => self.entries.iter().map(|e| e.name.clone()).collect(),
            _ => self.slots.clone(),
        }
    }

    pub fn embedding(&self, name: &str) -> Result<&[f32]> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.values.as_slice())
            .ok_or_else(|| Error::UnknownStyle(name.into()))
    }

    pub fn resolve(&self, sel: &StyleSelection) -> Result<ActiveStyle> {
        sel.validate()?;
        match (self.mode, sel) {
            (ModulatorMode::Film, StyleSelection::Single { id }) => Ok(ActiveStyle::Embedding(self.embedding(id)?.to_vec())),
            (ModulatorMode::Film, StyleSelection::Triangle { ids, lambda }) => {
                let e = [self.embedding(&ids[0])?, self.embedding(&ids[1])?, self.embedding(&ids[2])?];
                Ok(ActiveStyle::Embedding(interpolate_styles(e, *lambda)?))
            }
            (_, StyleSelection::Single { id }) => self
                .slots
                .iter()
                .position(|s| s == id)
                .map(ActiveStyle::Index)
                .ok_or_else(|| Error::UnknownStyle(id.clone())),
            (m, StyleSelection::Triangle { .. }) => {
                Err(Error::invalid(format!("{m} models cannot interpolate styles")))
            }
        }
    }

    /// First style, used before any selection arrives.
    pub fn default_selection(&self) -> Option<StyleSelection> {
        self.names().into_iter().next().map(StyleSelection::single)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_validation() {
        assert!(check_simplex(&[1.0, 0.0, 0.0]).is_ok());
        assert!(check_simplex(&[0.5, 0.5, 0.0]).is_ok());
        assert!(check_simplex(&[0.5, 0.6, -0.1]).is_err());
        assert!(check_simplex(&[0.5, 0.4, 0.0]).is_err());
        assert!(check_simplex(&[f32::NAN, 0.5, 0.5]).is_err());
    }

    #[test]
    fn vertices_and_equal_inputs() {
        let a = [1.0f32, -0.0, 3.5];
        let b = [2.0f32, 7.0, -1.0];
        let c = [0.1f32, 0.2, 0.3];
        assert_eq!(interpolate_styles([&a, &b, &c], [1.0, 0.0, 0.0]).unwrap(), a.to_vec());
        assert_eq!(interpolate_styles([&a, &b, &c], [0.0, 0.0, 1.0]).unwrap(), c.to_vec());
        let t = 1.0 / 3.0;
        assert_eq!(interpolate_styles([&b, &b, &b], [t, t, 1.0 - 2.0 * t]).unwrap(), b.to_vec());
        assert!(interpolate_styles([&a, &b, &c[..2]], [t, t, t]).is_err());
    }

    #[test]
    fn selection_wire_format() {
        let s: StyleSelection = serde_json::from_str(r#"{"mode":"triangle","ids":["a","b","c"],"lambda":[0.2,0.3,0.5]}"#).unwrap();
        assert!(s.is_blend());
        let j = serde_json::to_string(&StyleSelection::single("proud")).unwrap();
        assert_eq!(j, r#"{"mode":"single","id":"proud"}"#);
    }

    #[test]
    fn blends_stay_in_the_hull_and_move_smoothly() {
        let a: Vec<f32> = (0..64).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..64).map(|i| (i as f32 * 0.11).cos() * 2.0).collect();
        let c: Vec<f32> = (0..64).map(|i| i as f32 * 0.01 - 0.3).collect();
        for l in [[0.2f32, 0.3, 0.5], [0.7, 0.1, 0.2], [0.0, 0.25, 0.75]] {
            let m = interpolate_styles([&a, &b, &c], l).unwrap();
            for i in 0..64 {
                let lo = a[i].min(b[i]).min(c[i]);
                let hi = a[i].max(b[i]).max(c[i]);
                assert!(m[i] >= lo && m[i] <= hi);
            }
        }
        // sweep the a-b edge
        let pts: Vec<Vec<f32>> = (0..=100)
            .map(|s| {
                let t = s as f32 / 100.0;
                interpolate_styles([&a, &b, &c], [1.0 - t, t, 0.0]).unwrap()
            })
            .collect();
        let steps: Vec<f32> = pts
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(x, y)| (x - y).powi(2)).sum::<f32>().sqrt())
            .collect();
        let mean = steps.iter().sum::<f32>() / steps.len() as f32;
        let max = steps.iter().cloned().fold(0.0, f32::max);
        assert!(max <= 2.0 * mean, "{max} vs {mean}");
    }
}
