use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use gaitstyle::data::{load_any_clip, load_manifest, Dataset};
use gaitstyle::io::write_atomic;
use gaitstyle::nn::check_layers;
use gaitstyle::model::{
    check_composed_model, count_parameters, finetune, load_checkpoint, prediction_mse, save_checkpoint, train,
    Dims, LossLayout, ModulatorMode, NamedEmbedding, RuntimeStyle, StyleModel, TrainConfig,
};
use gaitstyle::motion::{mirror_clip, save_clip, write_bvh, AuxChannel, EndEffector, MotionClip, CONTACT_CHANNEL};
use gaitstyle::phase::{annotate_clip, extract_clip_phases, joint_contacts, phase_plot_svg, SourceOrigin};
use gaitstyle::runtime::{
    poses_to_clip, precompute_style_set, rollout, spawn_server, ControlGait, ControlInput, ControllerState,
    ServerConfig, StyleSelection, StyleTable,
};
use gaitstyle::{Error, Result};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::json;

use crate::args::*;
use crate::config::Settings;

/// One machine-readable progress line on stdout.
fn emit(v: serde_json::Value) {
    println!("{v}");
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn write_clip_any(clip: &MotionClip, path: &Path) -> Result<()> {
    let is_bvh = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("bvh"));
    if is_bvh {
        write_atomic(path, write_bvh(clip).as_bytes())
    } else {
        save_clip(clip, path)
    }
}

fn parse_mode(s: &str) -> Result<ModulatorMode> {
    ModulatorMode::from_str(s).map_err(|_| invalid(format!("unknown modulator {s:?} (film, onehot, resad)")))
}

fn parse_dims(s: &str) -> Result<Dims> {
    Dims::preset(s).ok_or_else(|| invalid(format!("unknown dims preset {s:?} (full, desk, tiny)")))
}

fn parse_gait(s: &str) -> Result<ControlGait> {
    serde_json::from_value(json!(s)).map_err(|_| invalid(format!("unknown gait {s:?} (idle, walk, run)")))
}

fn apply_flags(mut cfg: TrainConfig, f: &TrainFlags) -> TrainConfig {
    if let Some(v) = f.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = f.seed {
        cfg.seed = v;
    }
    if let Some(v) = f.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = f.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = f.dropout {
        cfg.dropout = v;
    }
    cfg
}

fn log_config(name: &str, v: &impl serde::Serialize) {
    match serde_json::to_string(v) {
        Ok(s) => log::info!("{name} config: {s}"),
        Err(e) => log::warn!("{name} config not serialisable: {e}"),
    }
}

pub fn run(cmd: Command, settings: Settings) -> Result<()> {
    match cmd {
        Command::Ingest(a) => ingest(a, settings),
        Command::Mirror(a) => mirror(a, settings),
        Command::Contacts(a) => contacts(a, settings),
        Command::Phases(a) => phases(a, settings),
        Command::Dataset(a) => dataset(a, settings),
        Command::Train(a) => train_cmd(a, settings),
        Command::Finetune(a) => finetune_cmd(a, settings),
        Command::ExportStyle(a) => export_style(a, settings),
        Command::Interp(a) => interp(a, settings),
        Command::Rollout(a) => rollout_cmd(a, settings),
        Command::CountParams(a) => count_params(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Serve(a) => serve(a, settings),
    }
}

fn ingest(a: IngestArgs, s: Settings) -> Result<()> {
    let mut bvh = s.bvh;
    if let Some(v) = a.unit_scale {
        bvh.unit_scale = v;
    }
    if let Some(v) = a.fps {
        bvh.target_fps = v;
    }
    log_config("bvh", &bvh);
    std::fs::create_dir_all(&a.out_dir)?;
    let opts = bvh.options();
    let results: Vec<Result<(PathBuf, usize)>> = a
        .inputs
        .par_iter()
        .map(|p| {
            let mut clip = load_any_clip(p, &opts)?;
            if let Some(st) = &a.style {
                clip.style = st.clone();
            }
            let stem = p.file_stem().ok_or_else(|| invalid(format!("{} has no file name", p.display())))?;
            let out = a.out_dir.join(stem).with_extension("smc");
            save_clip(&clip, &out)?;
            Ok((out, clip.len()))
        })
        .collect();
    for r in results {
        let (out, frames) = r?;
        emit(json!({"event": "clip", "out": out, "frames": frames}));
    }
    Ok(())
}

fn mirror(a: InOut, s: Settings) -> Result<()> {
    let clip = load_any_clip(&a.input, &s.bvh.options())?;
    let m = mirror_clip(&clip)?;
    write_clip_any(&m, &a.out)?;
    emit(json!({"event": "clip", "out": a.out, "frames": m.len()}));
    Ok(())
}

fn contacts(a: ContactsArgs, s: Settings) -> Result<()> {
    let mut clip = load_any_clip(&a.io.input, &s.bvh.options())?;
    let d_max = a.d_max.unwrap_or(s.phase.d_max);
    let v_max = a.v_max.unwrap_or(s.phase.v_max);
    log::info!("contacts config: d_max={d_max} v_max={v_max}");
    let [lf, rf] = clip.skeleton.feet();
    let l = joint_contacts(&clip, lf, d_max, v_max).as_f32();
    let r = joint_contacts(&clip, rf, d_max, v_max).as_f32();
    let frac = |v: &[f32]| v.iter().sum::<f32>() / v.len().max(1) as f32;
    let (fl, fr) = (frac(&l), frac(&r));
    clip.set_aux(AuxChannel {
        name: CONTACT_CHANNEL.into(),
        width: 2,
        values: l.iter().zip(&r).flat_map(|(a, b)| [*a, *b]).collect(),
    })?;
    write_clip_any(&clip, &a.io.out)?;
    emit(json!({"event": "contacts", "out": a.io.out, "left_fraction": fl, "right_fraction": fr}));
    Ok(())
}

fn phases(a: PhasesArgs, mut s: Settings) -> Result<()> {
    let bone = match &a.bone {
        Some(b) => Some(EndEffector::from_short_name(b).ok_or_else(|| {
            invalid(format!("unknown bone {b:?} (l_hand, r_hand, l_foot, r_foot)"))
        })?),
        None => None,
    };
    if let Some(m) = &a.mode {
        let origin: SourceOrigin =
            serde_json::from_value(json!(m)).map_err(|_| invalid(format!("unknown phase source {m:?} (pca, contact)")))?;
        let Some(b) = bone else {
            return Err(invalid("--mode needs --bone"));
        };
        s.phase.modes[b.index()] = origin;
    }
    log_config("phase", &s.phase);
    let mut clip = load_any_clip(&a.input, &s.bvh.options())?;
    let ph = extract_clip_phases(&clip, &s.phase)?;
    annotate_clip(&mut clip, &ph)?;
    let out = a.out.clone().unwrap_or_else(|| {
        let stem = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        a.input.with_file_name(format!("{stem}.phases.smc"))
    });
    save_clip(&clip, &out)?;
    let svg_dir = match &a.svg_dir {
        Some(d) => d.clone(),
        None => out.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !svg_dir.as_os_str().is_empty() {
        std::fs::create_dir_all(&svg_dir)?;
    }
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches(".phases").to_string())
        .unwrap_or_default();
    let plotted: Vec<EndEffector> = match bone {
        Some(b) => vec![b],
        None => EndEffector::ALL.to_vec(),
    };
    for e in plotted {
        let bp = &ph.bones[e.index()];
        let path = svg_dir.join(format!("{stem}.{}.svg", e.short_name()));
        let title = format!("{} ({:?} source)", e.short_name(), bp.source.origin);
        write_atomic(&path, phase_plot_svg(bp, &title).as_bytes())?;
        let f = &bp.track.f;
        let mean_f = f.iter().sum::<f64>() / f.len().max(1) as f64;
        emit(json!({"event": "phase", "bone": e.short_name(), "svg": path, "mean_frequency_hz": mean_f}));
    }
    emit(json!({"event": "clip", "out": out, "frames": clip.len()}));
    Ok(())
}

fn load_dataset(manifest: &Path, s: &Settings) -> Result<Dataset> {
    let entries = load_manifest(manifest)?;
    let ds = Dataset::from_manifest(&entries, &s.bvh.options(), &s.phase)?;
    for st in &ds.styles {
        emit(json!({"event": "style", "name": st.name, "clips": st.clips.len(), "examples": st.len()}));
    }
    Ok(ds)
}

fn dataset(a: DatasetArgs, s: Settings) -> Result<()> {
    log_config("phase", &s.phase);
    let ds = load_dataset(&a.manifest, &s)?;
    let norm = ds.normalization()?;
    if let Some(out) = &a.out {
        let styles: Vec<_> = ds
            .styles
            .iter()
            .map(|st| json!({"name": st.name, "clips": st.clips.len(), "examples": st.len()}))
            .collect();
        let doc = json!({"examples": ds.example_count(), "styles": styles, "normalization": norm});
        write_atomic(out, serde_json::to_string_pretty(&doc)?.as_bytes())?;
    }
    emit(json!({"event": "dataset", "examples": ds.example_count(), "styles": ds.styles.len()}));
    Ok(())
}

fn film_embeddings(model: &StyleModel, ds: &Dataset, stride: usize) -> Result<Vec<NamedEmbedding>> {
    if model.spec.mode != ModulatorMode::Film {
        return Ok(Vec::new());
    }
    ds.styles.iter().map(|st| precompute_style_set(model, st, stride)).collect()
}

fn train_cmd(a: TrainArgs, s: Settings) -> Result<()> {
    let mut cfg = apply_flags(s.train.clone(), &a.flags);
    if let Some(d) = &a.dims {
        cfg.dims = parse_dims(d)?;
    }
    if let Some(m) = &a.mode {
        cfg.mode = parse_mode(m)?;
    }
    log_config("train", &cfg);
    let ds = load_dataset(&a.manifest, &s)?;
    let model = train(&ds, &cfg, &mut |e| {
        emit(json!({"event": "epoch", "epoch": e.epoch, "steps": e.steps, "loss": e.loss, "mse": e.mse, "bone": e.bone}));
    })?;
    let embs = film_embeddings(&model, &ds, s.style.stride)?;
    save_checkpoint(&model, &embs, &a.out)?;
    emit(json!({"event": "checkpoint", "out": a.out, "styles": model.style_names}));
    Ok(())
}

fn finetune_cmd(a: FinetuneArgs, s: Settings) -> Result<()> {
    let cfg = apply_flags(s.finetune.clone(), &a.flags);
    log_config("finetune", &cfg);
    let (model, mut embs) = load_checkpoint(&a.checkpoint)?;
    let ds = load_dataset(&a.manifest, &s)?;
    let [set] = &ds.styles[..] else {
        return Err(invalid(format!("fine-tuning takes one style, the manifest has {}", ds.styles.len())));
    };
    if embs.iter().any(|e| e.name == set.name) {
        return Err(invalid(format!("style {:?} is already in the checkpoint", set.name)));
    }
    let skeleton = model.skeleton.clone().unwrap_or_else(|| ds.skeleton.clone());
    let layout = LossLayout::for_skeleton(&skeleton);
    let before = precompute_style_set(&model, set, s.style.stride)?;
    let mse_before = prediction_mse(&model, &set.examples, RuntimeStyle::Embedding(&before.values))?;
    let tuned = finetune(&model, set, &layout, &cfg, &mut |e| {
        emit(json!({"event": "epoch", "epoch": e.epoch, "steps": e.steps, "loss": e.loss, "mse": e.mse, "bone": e.bone}));
    })?;
    let after = precompute_style_set(&tuned, set, s.style.stride)?;
    let mse_after = prediction_mse(&tuned, &set.examples, RuntimeStyle::Embedding(&after.values))?;
    // base-style embeddings are kept exactly as saved
    embs.push(after);
    save_checkpoint(&tuned, &embs, &a.out)?;
    emit(json!({"event": "finetune", "style": set.name, "mse_before": mse_before, "mse_after": mse_after, "out": a.out}));
    Ok(())
}

fn export_style(a: ExportStyleArgs, s: Settings) -> Result<()> {
    let (model, mut embs) = load_checkpoint(&a.checkpoint)?;
    let stride = a.stride.unwrap_or(s.style.stride);
    if let Some(m) = &a.manifest {
        if model.spec.mode != ModulatorMode::Film {
            return Err(invalid(format!("{} models have no embeddings to compute", model.spec.mode)));
        }
        let ds = load_dataset(m, &s)?;
        for st in &ds.styles {
            let e = precompute_style_set(&model, st, stride)?;
            match embs.iter_mut().find(|x| x.name == e.name) {
                Some(slot) => *slot = e,
                None => embs.push(e),
            }
        }
        let out = a.out.as_ref().unwrap_or(&a.checkpoint);
        save_checkpoint(&model, &embs, out)?;
        emit(json!({"event": "checkpoint", "out": out, "styles": embs.iter().map(|e| &e.name).collect::<Vec<_>>()}));
    }
    if let Some(path) = &a.csv {
        let mut w = csv::Writer::from_writer(Vec::new());
        let width = embs.first().map_or(0, |e| e.values.len());
        let mut header = vec!["style".to_string()];
        header.extend((0..width).map(|i| format!("v{i}")));
        w.write_record(&header).map_err(csv_err)?;
        for e in &embs {
            let mut row = vec![e.name.clone()];
            row.extend(e.values.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        write_atomic(path, &bytes)?;
        emit(json!({"event": "csv", "out": path, "rows": embs.len(), "columns": width}));
    }
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn session(path: &Path) -> Result<(StyleModel, StyleTable)> {
    let (model, embs) = load_checkpoint(path)?;
    let table = StyleTable::new(&model, embs)?;
    Ok((model, table))
}

fn write_rollout(
    model: &StyleModel,
    table: &StyleTable,
    s: &Settings,
    controls: &[ControlInput],
    name: &str,
    out: &Path,
) -> Result<()> {
    log_config("controller", &s.controller);
    let skeleton = model
        .skeleton
        .clone()
        .ok_or_else(|| invalid("checkpoint has no skeleton"))?;
    let mut st = ControllerState::rest(model, s.controller)?;
    let poses = rollout(&mut st, model, table, controls)?;
    let clip = poses_to_clip(&skeleton, &poses, s.controller.fps, name);
    write_clip_any(&clip, out)?;
    let travelled = match (poses.first(), poses.last()) {
        (Some(a), Some(b)) => (b.root.origin - a.root.origin).length(),
        _ => 0.0,
    };
    emit(json!({"event": "clip", "out": out, "frames": clip.len(), "travelled_m": travelled}));
    Ok(())
}

fn interp(a: InterpArgs, s: Settings) -> Result<()> {
    let (model, table) = session(&a.checkpoint)?;
    let ids: [String; 3] = a
        .styles
        .clone()
        .try_into()
        .map_err(|_| invalid("--styles takes three names"))?;
    let lambda: [f32; 3] = a
        .lambda
        .clone()
        .try_into()
        .map_err(|_| invalid("--lambda takes three weights"))?;
    let sel = StyleSelection::Triangle { ids: ids.clone(), lambda };
    sel.validate()?;
    let control = ControlInput {
        target_direction_xz: a.motion.dir,
        target_speed: a.motion.speed,
        gait: parse_gait(&a.motion.gait)?,
        style: sel,
    };
    let controls = vec![control; a.motion.frames];
    let name = format!("{}:{}+{}:{}+{}:{}", ids[0], lambda[0], ids[1], lambda[1], ids[2], lambda[2]);
    write_rollout(&model, &table, &s, &controls, &name, &a.out)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Segment {
    frames: usize,
    #[serde(default)]
    dir: Option<[f32; 2]>,
    #[serde(default)]
    speed: Option<f32>,
    #[serde(default)]
    gait: Option<ControlGait>,
    #[serde(default)]
    style: Option<StyleSelection>,
}

fn rollout_cmd(a: RolloutArgs, s: Settings) -> Result<()> {
    let (model, table) = session(&a.checkpoint)?;
    let first = match &a.style {
        Some(n) => StyleSelection::single(n.clone()),
        None => table.default_selection().ok_or_else(|| invalid("checkpoint has no styles"))?,
    };
    let mut current = ControlInput {
        target_direction_xz: a.motion.dir,
        target_speed: a.motion.speed,
        gait: parse_gait(&a.motion.gait)?,
        style: first,
    };
    let mut controls = Vec::new();
    match &a.script {
        Some(path) => {
            let f = std::io::BufReader::new(std::fs::File::open(path)?);
            for (n, line) in f.lines().enumerate() {
                let line = line?;
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let seg: Segment = serde_json::from_str(line).map_err(|e| Error::Parse {
                    line: n + 1,
                    message: e.to_string(),
                })?;
                if let Some(v) = seg.dir {
                    current.target_direction_xz = v;
                }
                if let Some(v) = seg.speed {
                    current.target_speed = v;
                }
                if let Some(v) = seg.gait {
                    current.gait = v;
                }
                if let Some(v) = seg.style {
                    v.validate()?;
                    current.style = v;
                }
                table.resolve(&current.style)?;
                controls.extend(std::iter::repeat_n(current.clone(), seg.frames));
            }
        }
        None => {
            table.resolve(&current.style)?;
            controls = vec![current.clone(); a.motion.frames];
        }
    }
    if controls.is_empty() {
        return Err(invalid("control script has no frames"));
    }
    let name = match &controls[0].style {
        StyleSelection::Single { id } => id.clone(),
        StyleSelection::Triangle { ids, .. } => ids.join("+"),
    };
    write_rollout(&model, &table, &s, &controls, &name, &a.out)
}

fn count_params(a: CountParamsArgs) -> Result<()> {
    let mode = parse_mode(&a.mode)?;
    let dims = parse_dims(&a.dims)?;
    let c = count_parameters(&dims, mode, a.styles);
    match mode {
        // the generator count is reported separately; only asn and psr are pinned
        ModulatorMode::Film => println!("asn={} psr={}", c.asn, c.psr),
        _ => println!("asn={} smn={} psr={}", c.asn, c.smn, c.psr),
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let modes = match a.mode.as_str() {
        "all" => vec![ModulatorMode::Film, ModulatorMode::OneHot, ModulatorMode::Resad],
        m => vec![parse_mode(m)?],
    };
    let mut failed = Vec::new();
    if a.mode == "all" {
        for (layer, f32r, f64r) in check_layers()? {
            let ok = f32r.max_rel_error < 1e-4 && f64r.max_rel_error < 1e-7;
            emit(json!({
                "event": "gradcheck", "layer": layer, "pass": ok,
                "f32_max_rel": f32r.max_rel_error, "f64_max_rel": f64r.max_rel_error,
            }));
            if !ok {
                failed.push(layer.to_string());
            }
        }
    }
    for m in modes {
        let (f32r, f64r) = check_composed_model(m, a.seed)?;
        let ok = f32r.max_rel_error < 1e-4 && f64r.max_rel_error < 1e-7;
        emit(json!({
            "event": "gradcheck", "mode": m.to_string(), "seed": a.seed, "pass": ok,
            "f32_max_rel": f32r.max_rel_error, "f64_max_rel": f64r.max_rel_error,
            "f64_worst": f64r.worst.map(|(n, i)| format!("{n}[{i}]")), "checked": f64r.checked,
        }));
        if !ok {
            failed.push(m.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn serve(a: ServeArgs, s: Settings) -> Result<()> {
    let (model, table) = session(&a.checkpoint)?;
    let addr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| invalid(format!("bad address: {e}")))?;
    log_config("controller", &s.controller);
    let cfg = ServerConfig {
        addr,
        controller: s.controller,
        style: a.style.map(StyleSelection::single),
    };
    let handle = spawn_server(Arc::new(model), Arc::new(table), cfg)?;
    emit(json!({"event": "listening", "addr": handle.addr.to_string()}));
    handle.join();
    Ok(())
}
