use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use deduce_core::attention::{activation_map, CamTarget};
use deduce_core::codebook::DEFAULT_MIN_CONF;
use deduce_core::eval::{evaluate, group_by_prefix, grouped_evaluate, render_grouped, render_table, table_csv, EvalResult};
use deduce_core::fusion::{predict_all, training_set};
use deduce_core::linear::{train_with_validation, TrainConfig};
use deduce_core::raster::{gray_png, overlay, RgbImage};
use deduce_core::semmap::{
    posed_labels, rasterize, render, smooth_sequence, Palette, RasterConfig, RenderOptions, DEFAULT_RESOLUTION,
    DEFAULT_STAMP_RADIUS, DEFAULT_WINDOW,
};
use deduce_core::synth::{generate, generate_walk, SceneModelSet, Walk};
use deduce_core::types::{ClassSet, FrameRecord, Provenance};
use deduce_core::{default_codebook, read_manifest, Codebook, LinearHead, Manifest, ModelBundle, ModelKind};
use serde_json::json;

use crate::settings::{Fingerprint, RunConfig};
use crate::{Assets, CamArgs, Cli, Command, EvalArgs, Global, MapArgs, PredictArgs, SynthArgs, TrainArgs, Usage};

pub const CODEBOOK_FILE: &str = "codebook.json";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Everything a subcommand needs besides its own flags.
struct Env {
    cfg: RunConfig,
    seed: Option<u64>,
}

pub fn run(cli: Cli) -> Result<()> {
    let Global { config, seed, jobs } = cli.global;
    let cfg = match &config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(n) = jobs.or(cfg.jobs) {
        if n == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot start worker pool")?;
    }
    let env = Env {
        seed: seed.or(cfg.seed),
        cfg,
    };
    match cli.command {
        Command::Synth(a) => synth(&env, a),
        Command::Train(a) => train(&env, a),
        Command::Predict(a) => predict(&env, a),
        Command::Eval(a) => eval(&env, a),
        Command::Cam(a) => cam(&env, a),
        Command::Map(a) => map(&env, a),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("no such file: {}", path.display());
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn csv_with_header(p: &Provenance, body: &str) -> String {
    format!("# {}\n{body}", p.comment_line())
}

fn load_frames(env: &Env, path: &Path) -> Result<Manifest> {
    let manifest = read_manifest(path)?;
    if let Some(name) = &env.cfg.class_set {
        let want = ClassSet::builtin(name).ok_or_else(|| usage(format!("unknown class_set `{name}` in config")))?;
        if manifest.header.class_set != want {
            bail!(
                "{}: class_set [{}] differs from configured `{name}`",
                path.display(),
                manifest.header.class_set.names().join(", ")
            );
        }
    }
    if manifest.frames.is_empty() {
        bail!("{}: manifest has no frames", path.display());
    }
    Ok(manifest)
}

fn min_conf(flag: Option<f64>, cfg: &RunConfig) -> Result<f64> {
    let m = flag.or(cfg.min_conf).unwrap_or(DEFAULT_MIN_CONF);
    if !(0.0..=1.0).contains(&m) {
        return Err(usage(format!("min_conf {m} outside [0, 1]")));
    }
    Ok(m)
}

fn head_file(model: ModelKind) -> Option<&'static str> {
    match model {
        ModelKind::SceneOnly => Some("scene.head"),
        ModelKind::Combined => Some("combined.head"),
        ModelKind::SceneAttention => Some("attention.head"),
        ModelKind::ObjectOnly | ModelKind::NBest => None,
    }
}

fn heads_dir(flag: Option<PathBuf>, cfg: &RunConfig) -> Option<PathBuf> {
    flag.or_else(|| cfg.heads.clone())
}

fn need_heads(dir: &Option<PathBuf>) -> Result<&Path> {
    dir.as_deref().ok_or_else(|| usage("--heads is required (or `heads` in the config)"))
}

fn synth(env: &Env, a: SynthArgs) -> Result<()> {
    let seed = env.seed.unwrap_or(0);
    let mut fp = Fingerprint::new("synth");
    let mut models = match SceneModelSet::builtin(&a.preset) {
        Some(m) => m,
        None => {
            let path = Path::new(&a.preset);
            if !path.is_file() {
                return Err(usage(format!("`{}` is neither a built-in preset nor a file", a.preset)));
            }
            SceneModelSet::load(path)?
        }
    };
    if let Some(shape) = a.blob_shape {
        models.blob_shape = Some(shape);
    }
    let preset_text = models.to_preset_string();
    fp.bytes("preset", preset_text.as_bytes());
    let mut manifest = match &a.walk {
        Some(rooms) => {
            if a.poses_per_room == 0 {
                return Err(usage("--poses-per-room must be at least 1"));
            }
            let rooms = rooms
                .iter()
                .map(|r| models.class_set.resolve(r.trim()))
                .collect::<deduce_core::Result<Vec<_>>>()?;
            fp.field("walk", rooms.iter().map(|r| r.0.to_string()).collect::<Vec<_>>().join(","))
                .field("poses_per_room", a.poses_per_room)
                .field("room_length", a.room_length);
            let walk = Walk {
                rooms,
                room_length: a.room_length,
                poses_per_room: a.poses_per_room,
                dt: 0.5,
            };
            generate_walk(&models, &walk, seed)?
        }
        None => {
            let n = a.n.expect("clap requires --n without --walk");
            if n == 0 {
                return Err(usage("--n must be at least 1"));
            }
            fp.field("n", n);
            generate(&models, n, seed)?
        }
    };
    fp.field("seed", seed);
    manifest.header.provenance = Some(fp.provenance(Some(seed)));
    manifest.save(&a.out)?;
    if let Some(path) = &a.save_preset {
        write_file(path, format!("{preset_text}\n").as_bytes())?;
    }
    println!(
        "wrote {} frames ({} classes) to {}",
        manifest.frames.len(),
        manifest.class_set().len(),
        a.out.display()
    );
    Ok(())
}

fn train(env: &Env, a: TrainArgs) -> Result<()> {
    let file = match (a.model, head_file(a.model)) {
        (ModelKind::SceneOnly | ModelKind::Combined | ModelKind::SceneAttention, Some(f)) => f,
        _ => return Err(usage(format!("model `{}` has no trainable head", a.model.cli_name()))),
    };
    let heads = heads_dir(a.heads, &env.cfg);
    let heads = need_heads(&heads)?;
    require_file(&a.manifest)?;
    if let Some(v) = &a.val {
        require_file(v)?;
    }
    let seed = env.seed.unwrap_or(0);
    let base = match a.model {
        ModelKind::Combined => TrainConfig::combined_schedule(seed),
        _ => TrainConfig::scene_schedule(seed),
    };
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(base.epochs),
        lr0: a.lr.unwrap_or(base.lr0),
        lr_drop_every: a.lr_drop_every.unwrap_or(base.lr_drop_every),
        momentum: a.momentum.unwrap_or(base.momentum),
        weight_decay: a.weight_decay.unwrap_or(base.weight_decay),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        ..base
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let min_conf = min_conf(a.min_conf, &env.cfg)?;

    let mut fp = Fingerprint::new("train");
    fp.field("model", a.model).field("config", format!("{cfg:?}")).field("min_conf", min_conf);
    fp.file("manifest", &a.manifest)?;
    if let Some(v) = &a.val {
        fp.file("val", v)?;
    }

    let manifest = load_frames(env, &a.manifest)?;
    let class_set = manifest.class_set().clone();
    let data = training_set(&manifest.frames, a.model, &class_set, min_conf)?;
    let val = match &a.val {
        Some(path) => {
            let m = load_frames(env, path)?;
            if m.header.class_set != class_set {
                bail!("{}: class set differs from the training manifest", path.display());
            }
            Some(training_set(&m.frames, a.model, &class_set, min_conf)?)
        }
        None => None,
    };
    let (mut head, report) = train_with_validation(&data, &cfg, val.as_ref())?;
    let prov = fp.provenance(Some(seed));
    head.provenance = Some(prov.clone());
    fs::create_dir_all(heads).with_context(|| format!("cannot create {}", heads.display()))?;
    let out = heads.join(file);
    head.save(&out)?;
    if let Some(path) = &a.report {
        write_file(path, csv_with_header(&prov, &report.to_csv()).as_bytes())?;
    }
    let last = report.epochs.last().expect("at least one epoch");
    println!(
        "{}: {} samples, {} epochs, loss {:.4}, train {:.1}%{} -> {}",
        a.model,
        data.len(),
        report.epochs.len(),
        last.loss,
        last.train_accuracy * 100.0,
        last.val_accuracy.map_or(String::new(), |v| format!(", val {:.1}%", v * 100.0)),
        out.display()
    );
    Ok(())
}

/// Loads what `models` need into one bundle and fingerprints each asset.
fn load_bundle(
    env: &Env,
    assets: &Assets,
    models: &[ModelKind],
    class_set: &ClassSet,
    fp: &mut Fingerprint,
) -> Result<ModelBundle> {
    let heads = heads_dir(assets.heads.clone(), &env.cfg);
    let mut bundle = ModelBundle {
        threshold: env.cfg.threshold(assets.threshold, assets.threshold_preset)?,
        min_conf: min_conf(assets.min_conf, &env.cfg)?,
        ..ModelBundle::default()
    };
    fp.field("threshold", bundle.threshold).field("min_conf", bundle.min_conf);
    let needs_head = |m: ModelKind| {
        models
            .iter()
            .any(|&x| x == m || (m == ModelKind::SceneOnly && x == ModelKind::NBest))
    };
    for model in [ModelKind::SceneOnly, ModelKind::Combined, ModelKind::SceneAttention] {
        if !needs_head(model) {
            continue;
        }
        let dir = need_heads(&heads)?;
        let name = head_file(model).expect("trainable model");
        let path = dir.join(name);
        require_file(&path)?;
        fp.file(name, &path)?;
        let head = LinearHead::load(&path)?;
        if head.class_set() != class_set {
            bail!("{}: head class set differs from the manifest", path.display());
        }
        match model {
            ModelKind::SceneOnly => bundle.scene_head = Some(head),
            ModelKind::Combined => bundle.combined_head = Some(head),
            _ => bundle.attention_head = Some(head),
        }
    }
    if models.iter().any(|m| matches!(m, ModelKind::ObjectOnly | ModelKind::NBest)) {
        let explicit = assets.codebook.clone().or_else(|| env.cfg.codebook.clone());
        let in_heads = heads.as_ref().map(|d| d.join(CODEBOOK_FILE)).filter(|p| p.is_file());
        let codebook = match explicit.or(in_heads) {
            Some(path) => {
                require_file(&path)?;
                fp.file("codebook", &path)?;
                Codebook::load(&path, class_set)?
            }
            None if *class_set == ClassSet::home7() => {
                let cb = default_codebook();
                fp.bytes("codebook", cb.to_config_string().as_bytes());
                cb
            }
            None => {
                return Err(usage(format!(
                    "no built-in codebook for class set [{}]; pass --codebook",
                    class_set.names().join(", ")
                )))
            }
        };
        bundle.codebook = Some(codebook);
    }
    Ok(bundle)
}

fn predict(env: &Env, a: PredictArgs) -> Result<()> {
    require_file(&a.manifest)?;
    let manifest = load_frames(env, &a.manifest)?;
    let mut fp = Fingerprint::new("predict");
    fp.field("model", a.model).file("manifest", &a.manifest)?;
    let bundle = load_bundle(env, &a.assets, &[a.model], manifest.class_set(), &mut fp)?;
    let predictions = predict_all(&manifest.frames, a.model, &bundle)?;
    let cs = manifest.class_set();
    let prov = fp.provenance(env.seed);
    let mut out = String::new();
    let header = json!({
        "type": "header",
        "provenance": prov,
        "model": a.model.to_string(),
        "class_set": cs.names(),
        "threshold": bundle.threshold,
    });
    out.push_str(&header.to_string());
    out.push('\n');
    for (f, p) in manifest.frames.iter().zip(&predictions) {
        let rec = json!({
            "type": "prediction",
            "frame_id": f.frame_id,
            "label": cs.name(p.label),
            "posterior": p.posterior.values(),
            "source": p.source.as_str(),
        });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    match &a.out {
        Some(path) => write_file(path, out.as_bytes()),
        None => std::io::stdout().lock().write_all(out.as_bytes()).context("cannot write to stdout"),
    }
}

fn eval(env: &Env, a: EvalArgs) -> Result<()> {
    if a.group_by.is_some() && a.model.len() != 1 {
        return Err(usage("--group-by takes exactly one model"));
    }
    require_file(&a.manifest)?;
    let manifest = load_frames(env, &a.manifest)?;
    let mut fp = Fingerprint::new("eval");
    let names: Vec<String> = a.model.iter().map(ModelKind::to_string).collect();
    fp.field("models", names.join(",")).field("group_by", format!("{:?}", a.group_by));
    fp.file("manifest", &a.manifest)?;
    let bundle = load_bundle(env, &a.assets, &a.model, manifest.class_set(), &mut fp)?;
    let prov = fp.provenance(env.seed);

    let (text, csv) = if a.group_by.is_some() {
        let groups = group_by_prefix(manifest.frames);
        let g = grouped_evaluate(&groups, a.model[0], &bundle)?;
        let columns: Vec<(String, &EvalResult)> = g
            .groups
            .iter()
            .map(|(k, r)| (if k.is_empty() { "(none)".to_string() } else { k.clone() }, r))
            .collect();
        (render_grouped(&g), table_csv(&columns)?)
    } else {
        let results = a
            .model
            .iter()
            .map(|&m| evaluate(&manifest.frames, m, &bundle))
            .collect::<deduce_core::Result<Vec<_>>>()?;
        let columns: Vec<(String, &EvalResult)> = names.iter().cloned().zip(results.iter()).collect();
        let mut text = render_table(&columns);
        for (name, r) in &columns {
            text.push_str(&format!("{name}: {} frames, micro {:.1}%\n", r.n_frames, r.micro * 100.0));
        }
        (text, table_csv(&columns)?)
    };
    print!("{text}");
    if let Some(path) = &a.out {
        write_file(path, csv_with_header(&prov, &csv).as_bytes())?;
    }
    Ok(())
}

fn cam(env: &Env, a: CamArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(usage(format!("--alpha {} outside [0, 1]", a.alpha)));
    }
    require_file(&a.manifest)?;
    if let Some(img) = &a.image {
        require_file(img)?;
    }
    let heads = heads_dir(a.heads, &env.cfg);
    let head_path = need_heads(&heads)?.join("attention.head");
    require_file(&head_path)?;

    let manifest = load_frames(env, &a.manifest)?;
    let frame: &FrameRecord = match &a.frame {
        Some(id) => manifest
            .frames
            .iter()
            .find(|f| f.frame_id == *id)
            .ok_or_else(|| anyhow!("frame `{id}` not in {}", a.manifest.display()))?,
        None => &manifest.frames[0],
    };
    let blob = frame
        .feature_blob
        .as_ref()
        .ok_or_else(|| deduce_core::DeduceError::MissingBlob(frame.frame_id.clone()))?;
    let head = LinearHead::load(&head_path)?;
    if head.class_set() != manifest.class_set() {
        bail!("{}: head class set differs from the manifest", head_path.display());
    }
    let target = match &a.target {
        Some(name) => CamTarget::Label(manifest.class_set().resolve(name)?),
        None => CamTarget::Argmax,
    };
    let image = match &a.image {
        Some(path) => {
            let img = image::open(path)
                .with_context(|| format!("cannot decode {}", path.display()))?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            Some(RgbImage::from_raw(w, h, img.into_raw())?)
        }
        None => None,
    };
    let size = match &image {
        Some(img) => (img.width(), img.height()),
        None => (frame.image_size.0 as usize, frame.image_size.1 as usize),
    };

    let mut fp = Fingerprint::new("cam");
    fp.field("frame", &frame.frame_id)
        .field("target", format!("{target:?}"))
        .field("alpha", a.alpha)
        .field("size", format!("{}x{}", size.0, size.1));
    fp.file("manifest", &a.manifest)?.file("attention.head", &head_path)?;
    if let Some(path) = &a.image {
        fp.file("image", path)?;
    }
    let prov = fp.provenance(env.seed);

    let heat = activation_map(blob, &head, target, size)?;
    write_file(&a.out, &gray_png(heat.width(), heat.height(), &heat.to_gray8(), Some(&prov))?)?;
    if let (Some(img), Some(path)) = (&image, &a.overlay) {
        overlay(img, heat.values(), a.alpha)?.save_png(path, Some(&prov))?;
    }
    let (hx, hy) = heat.argmax();
    println!(
        "{}: {} heatmap {}x{}, peak at ({hx}, {hy})",
        frame.frame_id,
        manifest.class_set().name(heat.predicted),
        heat.width(),
        heat.height()
    );
    Ok(())
}

fn map(env: &Env, a: MapArgs) -> Result<()> {
    let window = a.window.or(env.cfg.window).unwrap_or(DEFAULT_WINDOW);
    let raster = RasterConfig {
        resolution: a.resolution.or(env.cfg.resolution).unwrap_or(DEFAULT_RESOLUTION),
        stamp_radius: a.stamp_radius.or(env.cfg.stamp_radius).unwrap_or(DEFAULT_STAMP_RADIUS),
    };
    if window == 0 || window % 2 == 0 {
        return Err(usage(format!("window {window} must be odd")));
    }
    if !(raster.resolution.is_finite() && raster.resolution > 0.0) {
        return Err(usage("resolution must be positive"));
    }
    if a.cell_px == 0 {
        return Err(usage("--cell-px must be at least 1"));
    }
    require_file(&a.manifest)?;
    let mut manifest = load_frames(env, &a.manifest)?;
    let mut fp = Fingerprint::new("map");
    fp.field("model", a.model)
        .field("window", window)
        .field("resolution", raster.resolution)
        .field("stamp_radius", raster.stamp_radius)
        .field("cell_px", a.cell_px)
        .field("legend", !a.no_legend);
    fp.file("manifest", &a.manifest)?;
    let bundle = load_bundle(env, &a.assets, &[a.model], manifest.class_set(), &mut fp)?;
    let prov = fp.provenance(env.seed);

    if let Some(f) = manifest.frames.iter().find(|f| f.pose.is_none()) {
        return Err(deduce_core::DeduceError::MissingPose(f.frame_id.clone()).into());
    }
    manifest
        .frames
        .sort_by(|x, y| x.pose.expect("checked").t.total_cmp(&y.pose.expect("checked").t));
    let predictions = predict_all(&manifest.frames, a.model, &bundle)?;
    let labels: Vec<_> = predictions.iter().map(|p| p.label).collect();
    let smoothed = smooth_sequence(&labels, window)?;
    let posed = posed_labels(&manifest.frames, &smoothed)?;
    let grid = rasterize(&posed, manifest.class_set().len(), &raster)?;
    let palette = Palette::default_for(manifest.class_set());
    let image = render(
        &grid,
        &palette,
        &RenderOptions {
            cell_px: a.cell_px,
            legend: !a.no_legend,
        },
    )?;
    image.save_png(&a.out, Some(&prov))?;
    if let Some(path) = &a.ppm {
        image.save_ppm(path, Some(&prov))?;
    }
    println!(
        "{} frames -> {}x{} cells at {} m, {}",
        posed.len(),
        grid.width(),
        grid.height(),
        raster.resolution,
        a.out.display()
    );
    Ok(())
}
