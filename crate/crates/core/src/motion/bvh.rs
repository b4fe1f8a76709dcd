//! BVH reader and writer.

use std::fmt::Write as _;

use glam::{DQuat, DVec3, EulerRot};

use super::{forward_kinematics, Frame, Joint, MotionClip, Skeleton, DEFAULT_FPS};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BvhOptions {
    /// Multiplier applied to offsets and translations (0.01 for centimetre files).
    pub unit_scale: f64,
    pub target_fps: f64,
}

impl Default for BvhOptions {
    fn default() -> Self {
        BvhOptions {
            unit_scale: 1.0,
            target_fps: DEFAULT_FPS as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channel {
    Xpos,
    Ypos,
    Zpos,
    Xrot,
    Yrot,
    Zrot,
}

impl Channel {
    fn parse(s: &str) -> Option<Channel> {
        Some(match s.to_ascii_lowercase().as_str() {
            "xposition" => Channel::Xpos,
            "yposition" => Channel::Ypos,
            "zposition" => Channel::Zpos,
            "xrotation" => Channel::Xrot,
            "yrotation" => Channel::Yrot,
            "zrotation" => Channel::Zrot,
            _ => return None,
        })
    }

    fn is_position(self) -> bool {
        matches!(self, Channel::Xpos | Channel::Ypos | Channel::Zpos)
    }
}

struct RawJoint {
    name: String,
    parent: Option<usize>,
    offset: DVec3,
    channels: Vec<Channel>,
}

struct Lines<'a> {
    iter: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            iter: text.lines().enumerate().peekable(),
            last: 0,
        }
    }

    /// Next non-blank line as (1-based line number, tokens).
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.iter.by_ref() {
            self.last = i + 1;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if !toks.is_empty() {
                return Some((i + 1, toks));
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        self.next_tokens().ok_or_else(|| Error::Parse {
            line: self.last + 1,
            message: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| perr(line, format!("expected a number, found {tok:?}")))
}

pub fn parse_bvh(text: &str) -> Result<MotionClip> {
    parse_bvh_with(text, &BvhOptions::default())
}

pub fn parse_bvh_with(text: &str, opts: &BvhOptions) -> Result<MotionClip> {
    let mut lines = Lines::new(text);
    let (ln, toks) = lines.expect("HIERARCHY")?;
    if !toks[0].eq_ignore_ascii_case("HIERARCHY") {
        return Err(perr(ln, "expected HIERARCHY"));
    }

    let mut joints: Vec<RawJoint> = Vec::new();
    // stack of open blocks: Some(joint) or None for an End Site
    let mut stack: Vec<Option<usize>> = Vec::new();
    let mut pending: Option<(Option<usize>, bool)> = None; // (joint, is_end_site) awaiting '{'
    let mut seen_root = false;

    loop {
        let (ln, toks) = lines.expect("MOTION")?;
        let head = toks[0].to_ascii_uppercase();
        match head.as_str() {
            "ROOT" | "JOINT" => {
                if head == "ROOT" && (seen_root || !stack.is_empty()) {
                    return Err(perr(ln, "ROOT must be the first and only top-level joint"));
                }
                if head == "JOINT" && stack.is_empty() {
                    return Err(perr(ln, "JOINT outside of ROOT"));
                }
                seen_root = true;
                let name = toks.get(1).ok_or_else(|| perr(ln, "joint without a name"))?;
                let parent = stack.last().copied().flatten();
                if head == "JOINT" && parent.is_none() {
                    return Err(perr(ln, "JOINT inside an End Site"));
                }
                joints.push(RawJoint {
                    name: name.to_string(),
                    parent,
                    offset: DVec3::ZERO,
                    channels: Vec::new(),
                });
                pending = Some((Some(joints.len() - 1), false));
                if toks.get(2) == Some(&"{") {
                    stack.push(pending.take().unwrap().0);
                }
            }
            "END" => {
                if stack.is_empty() {
                    return Err(perr(ln, "End Site outside of a joint"));
                }
                pending = Some((None, true));
                if toks.get(2) == Some(&"{") {
                    stack.push(None);
                    pending = None;
                }
            }
            "{" => match pending.take() {
                Some((j, _)) => stack.push(j),
                None => return Err(perr(ln, "unexpected '{'")),
            },
            "}" => {
                if stack.pop().is_none() {
                    return Err(perr(ln, "unbalanced '}'"));
                }
            }
            "OFFSET" => {
                if toks.len() < 4 {
                    return Err(perr(ln, "OFFSET needs three values"));
                }
                let v = DVec3::new(
                    parse_f64(toks[1], ln)?,
                    parse_f64(toks[2], ln)?,
                    parse_f64(toks[3], ln)?,
                ) * opts.unit_scale;
                match stack.last() {
                    Some(Some(j)) => joints[*j].offset = v,
                    Some(None) => {} // end-site offsets are not joints
                    None => return Err(perr(ln, "OFFSET outside of a block")),
                }
            }
            "CHANNELS" => {
                let j = match stack.last() {
                    Some(Some(j)) => *j,
                    _ => return Err(perr(ln, "CHANNELS outside of a joint")),
                };
                let n: usize = toks
                    .get(1)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| perr(ln, "CHANNELS needs a count"))?;
                if toks.len() != n + 2 {
                    return Err(perr(ln, format!("CHANNELS declares {n} but lists {}", toks.len() - 2)));
                }
                let mut chans = Vec::with_capacity(n);
                for t in &toks[2..] {
                    chans.push(Channel::parse(t).ok_or_else(|| perr(ln, format!("unknown channel {t:?}")))?);
                }
                joints[j].channels = chans;
            }
            "MOTION" => {
                if !stack.is_empty() || pending.is_some() {
                    return Err(perr(ln, "unbalanced braces before MOTION"));
                }
                break;
            }
            _ => return Err(perr(ln, format!("unexpected token {:?}", toks[0]))),
        }
    }
    if joints.is_empty() {
        return Err(perr(lines.last, "hierarchy has no joints"));
    }

    let (ln, toks) = lines.expect("Frames:")?;
    if !toks[0].eq_ignore_ascii_case("Frames:") || toks.len() < 2 {
        return Err(perr(ln, "expected 'Frames: <count>'"));
    }
    let n_frames: usize = toks[1]
        .parse()
        .map_err(|_| perr(ln, "bad frame count"))?;
    let (ln, toks) = lines.expect("Frame Time:")?;
    if toks.len() < 3 || !toks[0].eq_ignore_ascii_case("Frame") {
        return Err(perr(ln, "expected 'Frame Time: <seconds>'"));
    }
    let frame_time = parse_f64(toks[2], ln)?;
    if !(frame_time > 0.0) {
        return Err(perr(ln, "frame time must be positive"));
    }

    for j in &joints[1..] {
        if j.channels.iter().any(|c| c.is_position()) {
            log::warn!("ignoring translation channels on non-root joint {}", j.name);
        }
    }

    let width: usize = joints.iter().map(|j| j.channels.len()).sum();
    let mut values = Vec::with_capacity(n_frames * width);
    let mut rows = 0;
    while let Some((ln, toks)) = lines.next_tokens() {
        if toks.len() != width {
            return Err(Error::Truncated(format!(
                "line {ln}: frame has {} values, hierarchy declares {width}",
                toks.len()
            )));
        }
        for t in toks {
            values.push(parse_f64(t, ln)?);
        }
        rows += 1;
    }
    if rows != n_frames {
        return Err(Error::Truncated(format!(
            "header declares {n_frames} frames, file contains {rows}"
        )));
    }

    // local rotations and root position per source frame
    let nj = joints.len();
    let mut local = Vec::with_capacity(n_frames);
    let mut roots = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let row = &values[f * width..(f + 1) * width];
        let mut k = 0;
        let mut rots = vec![DQuat::IDENTITY; nj];
        let mut root = joints[0].offset;
        for (ji, j) in joints.iter().enumerate() {
            let mut q = DQuat::IDENTITY;
            let mut t = j.offset;
            for &c in &j.channels {
                let v = row[k];
                k += 1;
                match c {
                    Channel::Xrot => q *= DQuat::from_rotation_x(v.to_radians()),
                    Channel::Yrot => q *= DQuat::from_rotation_y(v.to_radians()),
                    Channel::Zrot => q *= DQuat::from_rotation_z(v.to_radians()),
                    Channel::Xpos => {
                        t.x = v * opts.unit_scale;
                    }
                    Channel::Ypos => {
                        t.y = v * opts.unit_scale;
                    }
                    Channel::Zpos => {
                        t.z = v * opts.unit_scale;
                    }
                }
            }
            rots[ji] = q.normalize();
            if ji == 0 {
                root = t;
            }
        }
        local.push(rots);
        roots.push(root);
    }

    let skel_joints: Vec<Joint> = joints
        .iter()
        .map(|j| Joint {
            name: j.name.clone(),
            parent: j.parent,
            offset: j.offset.as_vec3(),
        })
        .collect();
    let skeleton = match Skeleton::from_joints(skel_joints.clone()) {
        Ok(s) => s,
        Err(_) => {
            log::warn!("hands and feet not identified by name; end effectors default to the root");
            Skeleton::new(skel_joints, [0; 4])?
        }
    };

    let src_fps = 1.0 / frame_time;
    let within = (src_fps - opts.target_fps).abs() <= 0.1 * opts.target_fps;
    let frames: Vec<Frame> = if within || n_frames < 2 {
        (0..n_frames)
            .map(|f| forward_kinematics(&skeleton, &local[f], roots[f]))
            .collect()
    } else {
        let duration = (n_frames - 1) as f64 * frame_time;
        let out_n = (duration * opts.target_fps + 1e-9).floor() as usize + 1;
        (0..out_n)
            .map(|k| {
                let s = (k as f64 / opts.target_fps) / frame_time;
                let a = (s.floor() as usize).min(n_frames - 1);
                let b = (a + 1).min(n_frames - 1);
                let u = s - a as f64;
                let rots: Vec<DQuat> = (0..nj).map(|j| local[a][j].slerp(local[b][j], u)).collect();
                let root = roots[a].lerp(roots[b], u);
                forward_kinematics(&skeleton, &rots, root)
            })
            .collect()
    };
    let fps = if within { src_fps as f32 } else { opts.target_fps as f32 };
    Ok(MotionClip::new(skeleton, fps, frames))
}

/// Writes a clip as BVH with ZXY rotation channels on every joint and
/// translation channels on the root.
pub fn write_bvh(clip: &MotionClip) -> String {
    let skel = &clip.skeleton;
    let mut out = String::from("HIERARCHY\n");
    let children = |j: usize| -> Vec<usize> { (0..skel.len()).filter(|&c| skel.parent(c) == Some(j)).collect() };
    fn write_joint(
        out: &mut String,
        skel: &Skeleton,
        j: usize,
        depth: usize,
        children: &dyn Fn(usize) -> Vec<usize>,
    ) {
        let pad = "  ".repeat(depth);
        let joint = &skel.joints()[j];
        let kw = if j == 0 { "ROOT" } else { "JOINT" };
        let _ = writeln!(out, "{pad}{kw} {}", joint.name);
        let _ = writeln!(out, "{pad}{{");
        let o = joint.offset;
        let _ = writeln!(out, "{pad}  OFFSET {} {} {}", o.x, o.y, o.z);
        if j == 0 {
            let _ = writeln!(out, "{pad}  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation");
        } else {
            let _ = writeln!(out, "{pad}  CHANNELS 3 Zrotation Xrotation Yrotation");
        }
        let kids = children(j);
        if kids.is_empty() {
            let _ = writeln!(out, "{pad}  End Site\n{pad}  {{\n{pad}    OFFSET 0 0 0\n{pad}  }}");
        }
        for c in kids {
            write_joint(out, skel, c, depth + 1, children);
        }
        let _ = writeln!(out, "{pad}}}");
    }
    write_joint(&mut out, skel, 0, 0, &children);
    let _ = writeln!(out, "MOTION\nFrames: {}\nFrame Time: {:.9}", clip.len(), 1.0 / clip.fps as f64);
    for f in &clip.frames {
        let mut row: Vec<String> = Vec::with_capacity(3 + 3 * skel.len());
        let r = f.positions[0];
        row.extend([r.x, r.y, r.z].iter().map(|v| v.to_string()));
        for j in 0..skel.len() {
            let world = f.rotations[j].as_dquat();
            let local = match skel.parent(j) {
                Some(p) => f.rotations[p].as_dquat().inverse() * world,
                None => world,
            };
            let (z, x, y) = local.normalize().to_euler(EulerRot::ZXY);
            row.extend([z, x, y].iter().map(|v| format!("{}", v.to_degrees())));
        }
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Maximum bone-length deviation across frames, for rigidity checks.
pub fn bone_length_drift(clip: &MotionClip) -> f32 {
    let bones = clip.skeleton.bones();
    let mut worst = 0.0f32;
    for &(p, c) in &bones {
        let len0 = clip.frames[0].positions[c].distance(clip.frames[0].positions[p]);
        for f in &clip.frames {
            let l = f.positions[c].distance(f.positions[p]);
            worst = worst.max((l - len0).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use glam::Vec3;

    const CHAIN: &str = "HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT Spine
  {
    OFFSET 1 0 0
    CHANNELS 3 Zrotation Xrotation Yrotation
    JOINT Head
    {
      OFFSET 1 0 0
      CHANNELS 3 Zrotation Xrotation Yrotation
      End Site
      {
        OFFSET 0 1 0
      }
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.0166667
0 0 0 90 0 0 0 0 0 0 0 0
0 0 0 0 0 0 0 0 0 0 0 0
";

    #[test]
    fn single_joint_identity() {
        let text = "HIERARCHY\nROOT Hips\n{\n OFFSET 0 0 0\n CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation\n End Site\n {\n  OFFSET 0 1 0\n }\n}\nMOTION\nFrames: 2\nFrame Time: 0.0166667\n1 2 3 0 0 0\n4 5 6 0 0 0\n";
        let clip = parse_bvh(text).unwrap();
        assert_eq!(clip.len(), 2);
        assert_eq!(clip.joint_count(), 1);
        assert_eq!(clip.frames[0].positions[0], Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(clip.frames[1].positions[0], Vec3::new(4.0, 5.0, 6.0));
        assert_eq!(clip.frames[1].rotations[0], glam::Quat::IDENTITY);
    }

    #[test]
    fn chain_rotated_about_z() {
        // Hand computation: Rz(90) maps (1,0,0) to (0,1,0); children at (0,1,0) and (0,2,0).
        let clip = parse_bvh(CHAIN).unwrap();
        let f = &clip.frames[0];
        assert!(f.positions[1].distance(Vec3::new(0.0, 1.0, 0.0)) < 1e-6);
        assert!(f.positions[2].distance(Vec3::new(0.0, 2.0, 0.0)) < 1e-6);
        let g = &clip.frames[1];
        assert!(g.positions[2].distance(Vec3::new(2.0, 0.0, 0.0)) < 1e-6);
    }

    #[test]
    fn resamples_120_to_60() {
        let mut text = CHAIN.replace("Frames: 2", "Frames: 201").replace("0.0166667", "0.008333");
        let cut = text.find("Frame Time").unwrap();
        text.truncate(text[cut..].find('\n').unwrap() + cut + 1);
        for i in 0..201 {
            text.push_str(&format!("{} 0 0 {} 0 0 0 0 0 0 0 0\n", i as f64 * 0.01, i as f64 * 0.1));
        }
        let clip = parse_bvh(&text).unwrap();
        assert!((clip.len() as i64 - 100).abs() <= 1, "{}", clip.len());
        assert_eq!(clip.fps, 60.0);
        // root x advances 0.02 per output frame
        assert!((clip.frames[10].positions[0].x - 0.2).abs() < 1e-4);
        assert!(bone_length_drift(&clip) < 1e-6);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = CHAIN.replace("CHANNELS 3 Zrotation Xrotation Yrotation\n    JOINT", "CHANNELS 3 Zrotation Xrotation Wrotation\n    JOINT");
        match parse_bvh(&bad) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 9);
                assert!(message.contains("Wrotation"));
            }
            other => panic!("{other:?}"),
        }
        let unbalanced = CHAIN.replacen("  }\n}\nMOTION", "  }\nMOTION", 1);
        assert!(matches!(parse_bvh(&unbalanced), Err(Error::Parse { .. })));
        let short = CHAIN.replace("0 0 0 0 0 0 0 0 0 0 0 0\n", "0 0 0 0 0\n");
        assert!(matches!(parse_bvh(&short), Err(Error::Truncated(_))));
    }

    #[test]
    fn all_euler_orders_parse() {
        for order in ["XYZ", "XZY", "YXZ", "YZX", "ZXY", "ZYX"] {
            let chans: Vec<String> = order.chars().map(|c| format!("{c}rotation")).collect();
            let text = CHAIN.replace("Zrotation Xrotation Yrotation", &chans.join(" "));
            let clip = parse_bvh(&text).unwrap();
            assert_eq!(clip.len(), 2);
        }
    }

    #[test]
    fn non_root_translation_is_ignored() {
        let text = CHAIN
            .replacen("CHANNELS 3 Zrotation Xrotation Yrotation", "CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation", 1)
            .replace("0 0 0 90 0 0 0 0 0 0 0 0", "0 0 0 90 0 0 5 5 5 0 0 0 0 0 0")
            .replace("0 0 0 0 0 0 0 0 0 0 0 0\n", "0 0 0 0 0 0 5 5 5 0 0 0 0 0 0\n");
        let clip = parse_bvh(&text).unwrap();
        assert!(clip.frames[0].positions[1].distance(Vec3::new(0.0, 1.0, 0.0)) < 1e-6);
    }

    #[test]
    fn write_then_parse_round_trips() {
        let clip = parse_bvh(CHAIN).unwrap();
        let again = parse_bvh(&write_bvh(&clip)).unwrap();
        for (a, b) in clip.frames.iter().zip(&again.frames) {
            for (p, q) in a.positions.iter().zip(&b.positions) {
                assert!(p.distance(*q) < 1e-5);
            }
        }
    }
}
