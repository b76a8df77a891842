use crate::args::*;
use crate::config::RunConfig;
use crate::CliError;
use cadenet_core::cape::{derain, dehaze_dcp, enhance_with, EnhanceOptions};
use cadenet_core::detect::{ContrastDetector, Detector, OracleDetector};
use cadenet_core::egnms::fuse;
use cadenet_core::eval::{
    ablate, load_corpus, render_ablations, run_benchmark, write_corpus, BenchmarkConfig, ClassMap,
    Corpus, Routing,
};
use cadenet_core::frame::Frame;
use cadenet_core::geometry::{hungarian, nms, BBox, Detection, Stream};
use cadenet_core::imaging::{clahe, lab_stats, read_image, to_lab, write_image, ClaheParams, Raster};
use cadenet_core::ktt::Tracker;
use cadenet_core::models::{parse_prompts, Embedder, ProjectionEmbedder};
use cadenet_core::pee::entropy_map_rgb;
use cadenet_core::pipeline::{
    frames_from_dir, measure_latency, render_log, run_simulated, run_threaded, synthetic_frames,
    AblationFlags, Models, CPU_DISCIPLINE, GPU_DISCIPLINE,
};
use cadenet_core::sed::SedDb;
use cadenet_core::synth;
use cadenet_core::wem::{classify, severity_for, Condition, WeatherEstimate};
use std::fs;
use std::io::Write;
use std::path::Path;

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Enhance(a) => enhance(a),
        Command::Wem(a) => wem(a),
        Command::Pee(a) => pee(a),
        Command::Sed(SedCommand::Dump { path }) => sed_dump(&path),
        Command::Pipeline(a) => pipeline(a),
        Command::Benchmark(a) => benchmark(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Latency(a) => latency(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

impl From<ConditionArg> for Condition {
    fn from(c: ConditionArg) -> Self {
        match c {
            ConditionArg::Rain => Condition::Rain,
            ConditionArg::Fog => Condition::Fog,
            ConditionArg::Sand => Condition::Sand,
            ConditionArg::Snow => Condition::Snow,
            ConditionArg::Clear => Condition::Clear,
        }
    }
}

fn read(path: &Path) -> Result<Raster, CliError> {
    read_image(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn enhance(a: EnhanceArgs) -> Result<(), CliError> {
    if let Some(s) = a.severity {
        if !(0.0..=1.0).contains(&s) {
            return Err(CliError::Usage(format!("--severity must lie in [0, 1], got {s}")));
        }
    }
    let cfg = RunConfig::default().with_filters(a.config.config.as_deref())?;
    let frame = read(&a.input)?;
    let stats = lab_stats(&frame).map_err(CliError::data)?;
    let mut est = match a.condition {
        Some(c) => {
            let c = Condition::from(c);
            WeatherEstimate::fixed(c, severity_for(c, &stats))
        }
        None => classify(&stats),
    };
    if let Some(s) = a.severity {
        est.severity = s;
    }
    let opts = EnhanceOptions {
        night_gate: a.night_gate,
    };
    let (out, report) = enhance_with(&frame, &est, &cfg.filters, opts).map_err(CliError::data)?;
    write_image(&a.output, &out).map_err(|e| CliError::Data(format!("{}: {e}", a.output.display())))?;
    let mut line = format!("condition={} severity={:.2}", report.condition, report.severity);
    if let Some(alpha) = report.alpha {
        line.push_str(&format!(" alpha={alpha:.2}"));
    }
    if let Some(rho) = report.rho_rain {
        line.push_str(&format!(" rho_rain={rho:.4}"));
    }
    if let Some(g) = report.gamma {
        line.push_str(&format!(" gamma={g:.2}"));
    }
    println!("{line}");
    for t in &report.timings {
        println!("  {:<14} {:>8.2} ms", t.stage, t.millis);
    }
    Ok(())
}

fn wem(a: ImageArgs) -> Result<(), CliError> {
    let frame = read(&a.input)?;
    let s = lab_stats(&frame).map_err(CliError::data)?;
    let est = classify(&s);
    println!(
        "mu_L={:.2} sigma_L={:.2} mu_S={:.2} rho_e={:.4} r_v={:.3}",
        s.mu_l, s.sigma_l, s.mu_s, s.rho_e, s.r_v
    );
    println!(
        "condition={} severity={:.3} spread={:.3}",
        est.condition, est.severity, est.spread
    );
    Ok(())
}

fn pee(a: PeeArgs) -> Result<(), CliError> {
    let frame = read(&a.input)?;
    let map = entropy_map_rgb(&frame).map_err(CliError::data)?;
    print!("{}", map.to_text_grid());
    if let Some(p) = a.heatmap {
        write_image(&p, &map.to_heat_raster()).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn sed_dump(path: &Path) -> Result<(), CliError> {
    let db = SedDb::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    println!("dim={} count={}", db.dim(), db.len());
    for (i, e) in db.entries().iter().enumerate() {
        let head: Vec<String> = e.embedding.iter().take(4).map(|v| format!("{v:.4}")).collect();
        let params = serde_json::to_string(&e.filter_params).map_err(CliError::data)?;
        println!(
            "{i} {} delta_f1={:+.4} embedding=[{}{}] params={params}",
            e.condition,
            e.delta_f1,
            head.join(", "),
            if e.embedding.len() > 4 { ", ..." } else { "" }
        );
    }
    Ok(())
}

fn models(detector: DetectorArg, dim: usize, seed: u64) -> Models {
    match detector {
        DetectorArg::Contrast => Models::deterministic(dim, seed),
        DetectorArg::Oracle => Models::oracle(dim, seed),
    }
}

fn pipeline(a: PipelineArgs) -> Result<(), CliError> {
    if a.dim == 0 {
        return Err(CliError::Usage("--dim must be positive".into()));
    }
    let run_cfg = RunConfig {
        conf_thresh: a.conf,
        nms_iou: a.nms_iou,
        gate_iou: a.gate,
        spread_threshold: a.spread,
        ablation: AblationFlags::from_ids(&a.ablation),
        seed: a.seed,
        ..RunConfig::default()
    }
    .with_fps(a.fps)?
    .with_filters(a.config.config.as_deref())?;
    run_cfg.validate()?;
    let mut cfg = run_cfg.pipeline();
    cfg.quality_delay_ms = a.quality_delay_ms;
    if let Some(p) = &a.prompts {
        let file = fs::File::open(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        cfg.prompts = parse_prompts(std::io::BufReader::new(file)).map_err(CliError::data)?;
    }

    let frames = if a.source == "synthetic" {
        synthetic_frames(
            a.frames,
            a.condition.into(),
            a.severity,
            a.width,
            a.height,
            run_cfg.seed,
            cfg.period_ms,
        )
    } else {
        let (frames, warnings) =
            frames_from_dir(&a.source, &ClassMap::default(), cfg.period_ms).map_err(CliError::data)?;
        for w in warnings {
            eprintln!("warning: {w}");
        }
        frames
    };
    let n_frames = frames.len();
    let db = match &a.sed {
        Some(p) => SedDb::open(p, a.dim).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => SedDb::new(a.dim),
    };
    let m = models(a.detector, a.dim, run_cfg.seed);
    let out = match a.clock {
        ClockArg::Sim => run_simulated(&frames, &m, &cfg, db),
        ClockArg::Real => run_threaded(frames, &m, &cfg, db),
    };
    for e in &out.errors {
        eprintln!("warning: {e}");
    }
    let log = render_log(&out.log);
    let summary = format!(
        "{}frames={} log_lines={} injections={} sed_entries={}",
        out.latency,
        n_frames,
        out.log.len(),
        out.injections.len(),
        out.db.len()
    );
    match &a.out {
        Some(p) => {
            write_text(p, &log)?;
            println!("{summary}");
        }
        None => {
            print!("{log}");
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn load(dir: &Path) -> Result<Corpus, CliError> {
    let corpus = load_corpus(dir, &ClassMap::default()).map_err(CliError::data)?;
    for w in &corpus.warnings {
        eprintln!("warning: {w}");
    }
    if corpus.images.is_empty() {
        return Err(CliError::Data(format!("{}: no usable images", dir.display())));
    }
    Ok(corpus)
}

fn benchmark(a: BenchmarkArgs) -> Result<(), CliError> {
    let run_cfg = RunConfig {
        conf_thresh: a.conf,
        match_iou: a.iou,
        ..RunConfig::default()
    }
    .with_filters(a.config.config.as_deref())?;
    run_cfg.validate()?;
    let corpus = load(&a.corpus)?;
    let detector: Box<dyn Detector> = match a.detector {
        DetectorArg::Contrast => Box::new(ContrastDetector::strong()),
        DetectorArg::Oracle => Box::new(OracleDetector::default()),
    };
    let cfg = BenchmarkConfig {
        filters: run_cfg.filters,
        routing: match a.routing {
            RoutingArg::GtLabel => Routing::GtLabel,
            RoutingArg::Wem => Routing::Wem,
        },
        conf_thresh: run_cfg.conf_thresh,
        match_iou: run_cfg.match_iou,
        ablation: a.ablation.map_or(AblationFlags::default(), |x| AblationFlags::default().with(x)),
        enhance: EnhanceOptions::default(),
    };
    let report = run_benchmark(&corpus.images, detector.as_ref(), &cfg).map_err(CliError::data)?;
    let summary = report.summary.render();
    write_text(&a.out.join("records.jsonl"), &report.jsonl())?;
    write_text(&a.out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> Result<(), CliError> {
    let run_cfg = RunConfig::default()
        .with_fps(a.fps)?
        .with_filters(a.config.config.as_deref())?;
    let corpus = load(&a.corpus)?;
    let m = models(a.detector, a.dim, a.seed);
    let bench = BenchmarkConfig {
        filters: run_cfg.filters.clone(),
        ..BenchmarkConfig::default()
    };
    let runs = ablate(&corpus.images, &m, &bench, &run_cfg.pipeline(), &a.ids).map_err(CliError::data)?;
    let table = render_ablations(&runs);
    if let Some(p) = &a.out {
        write_text(p, &table)?;
    }
    print!("{table}");
    Ok(())
}

/// Deterministic spread of boxes over the frame, without an RNG.
fn scattered_boxes(n: usize, w: usize, h: usize, salt: usize, source: Stream) -> Vec<Detection> {
    (0..n)
        .map(|i| {
            let k = i * 7919 + salt * 104_729;
            let bw = 20.0 + (k % 37) as f64;
            let bh = 30.0 + (k % 23) as f64;
            let x = (k * 31 % (w.saturating_sub(60).max(1))) as f64;
            let y = (k * 17 % (h.saturating_sub(60).max(1))) as f64;
            let conf = 0.3 + (k % 60) as f64 / 100.0;
            Detection::new(
                BBox::new(x, y, x + bw, y + bh).expect("positive size"),
                (k % 3) as u32,
                conf,
                source,
            )
        })
        .collect()
}

fn latency(a: LatencyArgs) -> Result<(), CliError> {
    if a.width < 16 || a.height < 16 {
        return Err(CliError::Usage("--width and --height must be at least 16".into()));
    }
    let (warmup, timed) = if a.cpu { CPU_DISCIPLINE } else { GPU_DISCIPLINE };
    let cond = match a.op {
        OpArg::Derain => Condition::Rain,
        _ => Condition::Fog,
    };
    let img = synth::corpus(1, &[cond], a.width, a.height, a.seed).remove(0);
    let raster = img.degraded;
    let filters = cadenet_core::cape::FilterConfig::default();
    let frame = Frame::new(raster.clone(), 0, 0.0).with_truth(img.truth);
    let mut sink = 0usize;
    let name = format!("{:?}", a.op).to_lowercase();
    let stats = match a.op {
        OpArg::Egnms => {
            let rmap = entropy_map_rgb(&raster).map_err(CliError::data)?;
            let s = scattered_boxes(10, a.width, a.height, 1, Stream::Safety);
            let q = scattered_boxes(10, a.width, a.height, 2, Stream::Quality);
            measure_latency(&name, warmup, timed, || {
                sink += fuse(&s, &q, &rmap, 0.25, 0.45).map_or(0, |v| v.len());
            })
        }
        OpArg::Nms => {
            let d = scattered_boxes(20, a.width, a.height, 3, Stream::Safety);
            measure_latency(&name, warmup, timed, || sink += nms(&d, 0.45).len())
        }
        OpArg::Hungarian => {
            let cost: Vec<Vec<f64>> = (0..10)
                .map(|i| (0..10).map(|j| ((i * 13 + j * 7) % 17) as f64 / 17.0).collect())
                .collect();
            measure_latency(&name, warmup, timed, || sink += hungarian(&cost).len())
        }
        OpArg::Pee => measure_latency(&name, warmup, timed, || {
            sink += entropy_map_rgb(&raster).map_or(0, |m| m.cols());
        }),
        OpArg::Wem => measure_latency(&name, warmup, timed, || {
            sink += lab_stats(&raster).map_or(0, |s| classify(&s).condition.code() as usize);
        }),
        OpArg::Dcp => measure_latency(&name, warmup, timed, || {
            sink += dehaze_dcp(&raster, 0.5, &filters).map_or(0, |(r, _)| r.width());
        }),
        OpArg::Derain => measure_latency(&name, warmup, timed, || {
            sink += derain(&raster, 0.5, &filters).map_or(0, |(r, _)| r.width());
        }),
        OpArg::Clahe => {
            let l = to_lab(&raster).map_err(CliError::data)?.channel(0);
            measure_latency(&name, warmup, timed, || {
                sink += clahe(&l, ClaheParams::new(2.0)).map_or(0, |r| r.width());
            })
        }
        OpArg::Ktt => {
            let d = scattered_boxes(10, a.width, a.height, 4, Stream::Safety);
            let mut tracker = Tracker::new(Default::default());
            measure_latency(&name, warmup, timed, || {
                tracker.update_frame(&d);
                sink += tracker.tracks().len();
            })
        }
        OpArg::Detect => {
            let det = ContrastDetector::fast();
            measure_latency(&name, warmup, timed, || {
                sink += det.detect(&frame, &raster).map_or(0, |d| d.len());
            })
        }
        OpArg::Embed => {
            let emb = ProjectionEmbedder::new(2048, a.seed);
            measure_latency(&name, warmup, timed, || {
                sink += emb.embed(&raster).map_or(0, |v| v.len());
            })
        }
    };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{}: {:.3} ± {:.3} ms ({} warmup + {} timed, {}x{})",
        stats.name, stats.mean_ms, stats.std_ms, stats.warmup, stats.timed, a.width, a.height
    );
    std::hint::black_box(sink);
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<(), CliError> {
    if a.count == 0 || a.width < 32 || a.height < 32 {
        return Err(CliError::Usage("--count must be positive and frames at least 32x32".into()));
    }
    let conditions: Vec<Condition> = a.conditions.iter().map(|&c| c.into()).collect();
    let images = synth::corpus(a.count, &conditions, a.width, a.height, a.seed);
    write_corpus(&a.out, &images, &ClassMap::default()).map_err(CliError::data)?;
    println!("wrote {} images to {}", images.len(), a.out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scattered_boxes_stay_in_frame_and_are_repeatable() {
        let a = scattered_boxes(20, 160, 120, 1, Stream::Safety);
        assert_eq!(a, scattered_boxes(20, 160, 120, 1, Stream::Safety));
        for d in &a {
            assert!(d.bbox.x2 <= 160.0 && d.bbox.y2 <= 120.0);
            assert!((0.3..=0.9).contains(&d.conf));
        }
    }

    #[test]
    fn condition_mapping_is_total() {
        for (arg, cond) in [
            (ConditionArg::Rain, Condition::Rain),
            (ConditionArg::Fog, Condition::Fog),
            (ConditionArg::Sand, Condition::Sand),
            (ConditionArg::Snow, Condition::Snow),
            (ConditionArg::Clear, Condition::Clear),
        ] {
            assert_eq!(Condition::from(arg), cond);
        }
    }
}
