//! Native binary clip container ("SMC1").
//!
//! Layout (little-endian): magic, fps u32, joint count u32, frame count u32,
//! then the skeleton table (name, parent i32, offset 3 x f32 per joint; four
//! end-effector indices), style label, gait code, frame-major f32 data
//! (position 3 + quaternion 4 per joint) and named auxiliary channels.

use std::io::{Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use glam::{Quat, Vec3};

use super::{AuxChannel, Frame, Gait, Joint, MotionClip, Skeleton};
use crate::error::{Error, Result};

pub const CLIP_MAGIC: &[u8; 4] = b"SMC1";

fn eof(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated("clip container ends early".into())
    } else {
        Error::Io(e)
    }
}

pub fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let bytes = s.as_bytes();
    w.write_u32::<LE>(bytes.len() as u32)?;
    w.write_all(bytes)?;
    Ok(())
}

pub fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = r.read_u32::<LE>().map_err(eof)? as usize;
    if n > 1 << 20 {
        return Err(Error::Format(format!("string length {n} is implausible")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(eof)?;
    String::from_utf8(buf).map_err(|_| Error::Format("string is not UTF-8".into()))
}

fn write_skeleton_body<W: Write>(w: &mut W, skeleton: &Skeleton) -> Result<()> {
    for j in skeleton.joints() {
        write_str(w, &j.name)?;
        w.write_i32::<LE>(j.parent.map_or(-1, |p| p as i32))?;
        for v in j.offset.to_array() {
            w.write_f32::<LE>(v)?;
        }
    }
    for e in skeleton.end_effectors() {
        w.write_u32::<LE>(e as u32)?;
    }
    Ok(())
}

fn read_skeleton_body<R: Read>(r: &mut R, nj: usize) -> Result<Skeleton> {
    if nj == 0 || nj > 4096 {
        return Err(Error::Format(format!("joint count {nj} is implausible")));
    }
    let mut joints = Vec::with_capacity(nj);
    for _ in 0..nj {
        let name = read_str(r)?;
        let parent = r.read_i32::<LE>().map_err(eof)?;
        let mut o = [0f32; 3];
        r.read_f32_into::<LE>(&mut o).map_err(eof)?;
        joints.push(Joint {
            name,
            parent: (parent >= 0).then_some(parent as usize),
            offset: Vec3::from_array(o),
        });
    }
    let mut ee = [0usize; 4];
    for e in &mut ee {
        *e = r.read_u32::<LE>().map_err(eof)? as usize;
    }
    Skeleton::new(joints, ee)
}

/// Joint count, joints and end effectors.
pub fn write_skeleton<W: Write>(w: &mut W, skeleton: &Skeleton) -> Result<()> {
    w.write_u32::<LE>(skeleton.len() as u32)?;
    write_skeleton_body(w, skeleton)
}

pub fn read_skeleton<R: Read>(r: &mut R) -> Result<Skeleton> {
    let nj = r.read_u32::<LE>().map_err(eof)? as usize;
    read_skeleton_body(r, nj)
}

pub fn write_clip<W: Write>(clip: &MotionClip, w: &mut W) -> Result<()> {
    w.write_all(CLIP_MAGIC)?;
    w.write_u32::<LE>(clip.fps.round() as u32)?;
    w.write_u32::<LE>(clip.joint_count() as u32)?;
    w.write_u32::<LE>(clip.len() as u32)?;
    write_skeleton_body(w, &clip.skeleton)?;
    write_str(w, &clip.style)?;
    w.write_u8(clip.gait.code())?;
    for f in &clip.frames {
        for (p, q) in f.positions.iter().zip(&f.rotations) {
            for v in p.to_array().into_iter().chain(q.to_array()) {
                w.write_f32::<LE>(v)?;
            }
        }
    }
    w.write_u32::<LE>(clip.aux.len() as u32)?;
    for a in &clip.aux {
        write_str(w, &a.name)?;
        w.write_u32::<LE>(a.width as u32)?;
        for &v in &a.values {
            w.write_f32::<LE>(v)?;
        }
    }
    Ok(())
}

pub fn read_clip<R: Read>(r: &mut R) -> Result<MotionClip> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != CLIP_MAGIC {
        return Err(Error::Format(format!(
            "unknown clip magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            "SMC1"
        )));
    }
    let fps = r.read_u32::<LE>().map_err(eof)? as f32;
    let nj = r.read_u32::<LE>().map_err(eof)? as usize;
    let nf = r.read_u32::<LE>().map_err(eof)? as usize;
    let skeleton = read_skeleton_body(r, nj)?;
    let style = read_str(r)?;
    let gait = Gait::from_code(r.read_u8().map_err(eof)?)
        .ok_or_else(|| Error::Format("unknown gait code".into()))?;
    let mut frames = Vec::with_capacity(nf);
    let mut buf = vec![0f32; nj * 7];
    for _ in 0..nf {
        r.read_f32_into::<LE>(&mut buf).map_err(eof)?;
        let positions = buf.chunks(7).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        let rotations = buf.chunks(7).map(|c| Quat::from_xyzw(c[3], c[4], c[5], c[6])).collect();
        frames.push(Frame { positions, rotations });
    }
    let n_aux = r.read_u32::<LE>().map_err(eof)? as usize;
    let mut aux = Vec::with_capacity(n_aux);
    for _ in 0..n_aux {
        let name = read_str(r)?;
        let width = r.read_u32::<LE>().map_err(eof)? as usize;
        let mut values = vec![0f32; width * nf];
        r.read_f32_into::<LE>(&mut values).map_err(eof)?;
        aux.push(AuxChannel { name, width, values });
    }
    Ok(MotionClip {
        skeleton,
        fps,
        frames,
        style,
        gait,
        aux,
    })
}

pub fn save_clip(clip: &MotionClip, path: &std::path::Path) -> Result<()> {
    let mut buf = Vec::new();
    write_clip(clip, &mut buf)?;
    crate::io::write_atomic(path, &buf)
}

pub fn load_clip(path: &std::path::Path) -> Result<MotionClip> {
    let bytes = std::fs::read(path)?;
    read_clip(&mut bytes.as_slice())
}
