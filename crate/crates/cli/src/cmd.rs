use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use fgos_core::asgp::{blend_gate, evolve_probes, evolve_probes_traced, refine_mask};
use fgos_core::flops::{fa_scan_macs, cross_scan_macs, haar_macs, ssm_token_macs};
use fgos_core::io::{load_weights, read_pgm, save_weights, write_pgm};
use fgos_core::metrics::{cldice, ods, region_metrics, BinaryMask};
use fgos_core::scan::{locality_cost, serialize_tokens};
use fgos_core::synth::Orientation;
use fgos_core::{
    build_scan_order, cross_scan, dwt_haar, fa_scan, flop_estimate, generate_sample, idwt_haar, run_bench, ssm_scan_sequential, AsgpConfig,
    AsgpWeights, BenchReport, FeatureGrid, Model, PipelineConfig, ProbeSet, ScanAssignment, ScanKind, SsmParams, SynthConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes to `out` when given, stdout otherwise.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(p) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    PipelineConfig::parse(&text).with_context(|| format!("in {}", p.display()))
}

fn random_grid(seed: u64, c: usize, h: usize, w: usize) -> FeatureGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureGrid::from_fn(c, h, w, |_, _, _| rng.gen_range(-1.0..1.0))
}

pub fn dwt_roundtrip(size: usize, channels: usize, seed: u64) -> Result<bool> {
    let x = random_grid(seed, channels, size, size);
    let bands = dwt_haar(&x)?;
    let back = idwt_haar(&bands, size, size)?;
    let err = back.max_abs_diff(&x)?;
    let energy = (bands.energy() - x.energy()).abs() / x.energy().max(f64::MIN_POSITIVE);
    println!("size,channels,seed,max_abs_error,energy_rel_error");
    println!("{size},{channels},{seed},{err:e},{energy:e}");
    Ok(err <= 1e-5 && energy <= 1e-5)
}

pub fn scan_bench(sizes: &str, reps: usize, out: Option<&Path>) -> Result<bool> {
    ensure!(reps > 0, "--reps must be positive");
    let sizes: Vec<usize> = sizes
        .split(',')
        .map(|s| s.trim().parse().with_context(|| format!("bad size `{s}`")))
        .collect::<Result<_>>()?;
    let mut csv = String::from("kind,H,W,locality_cost,build_time_ns,serialize_throughput_elems_per_s\n");
    for kind in ScanKind::ALL {
        for &n in &sizes {
            let mut build = u128::MAX;
            let mut order = None;
            for _ in 0..reps {
                let t = Instant::now();
                let o = build_scan_order(kind, n, n)?;
                build = build.min(t.elapsed().as_nanos());
                order = Some(o);
            }
            let order = order.expect("reps > 0");
            let grid = random_grid(0, 8, n, n);
            let t = Instant::now();
            for _ in 0..reps {
                std::hint::black_box(serialize_tokens(&grid, &order)?);
            }
            let rate = (reps * grid.data().len()) as f64 / t.elapsed().as_secs_f64();
            writeln!(csv, "{kind},{n},{n},{:.6},{build},{rate:.0}", locality_cost(&order)?)?;
        }
    }
    emit(out, &csv)?;
    Ok(true)
}

pub fn probe_demo(seed: u64, size: usize, steps: usize, out_dir: &Path) -> Result<bool> {
    ensure_dir(out_dir)?;
    let cfg = AsgpConfig { steps, ..AsgpConfig::default() };
    let sample = generate_sample(&SynthConfig { height: size, width: size, seed, ..SynthConfig::default() })?;
    // structure-probability surface: dark structures become peaks
    let m0 = sample.image.map(|v| 1.0 - v);
    let w = AsgpWeights::zeros(1, &cfg);
    let probes = ProbeSet::jittered_grid(cfg.probes, cfg.embed_dim, seed)?;
    let trace = evolve_probes_traced(&m0, &m0, &probes, &cfg, &w)?;
    let evolved = evolve_probes(&m0, &m0, &probes, &cfg, &w)?;
    let m1 = refine_mask(&evolved, size, size, cfg.splat_sigma)?;
    let gate = blend_gate(&m0, &m1, size, size, &cfg)?;

    let mut csv = String::from("t,i,x,y\n");
    for (t, coords) in trace.iter().enumerate() {
        for (i, p) in coords.iter().enumerate() {
            writeln!(csv, "{t},{i},{:.6},{:.6}", p.x, p.y)?;
        }
    }
    emit(Some(&out_dir.join("probes.csv")), &csv)?;
    write_pgm(&out_dir.join("image.pgm"), &sample.image)?;
    write_pgm(&out_dir.join("m0.pgm"), &m0)?;
    write_pgm(&out_dir.join("m1.pgm"), &m1)?;
    write_pgm(&out_dir.join("m.pgm"), &gate)?;
    let in_range = trace.iter().flatten().all(|p| p.x.abs() <= 1.0 && p.y.abs() <= 1.0);
    println!("{} probes, {} steps, written to {}", probes.len(), steps, out_dir.display());
    Ok(in_range)
}

pub fn forward(image: &Path, weights: Option<&Path>, out: &Path, config: Option<&Path>, assign: Option<&str>) -> Result<bool> {
    let mut cfg = load_config(config)?;
    if let Some(a) = assign {
        cfg.assignment = a.parse()?;
    }
    let store = match weights {
        Some(p) => load_weights(p)?,
        None => cfg.seeded_weights()?,
    };
    let img = read_pgm(image)?;
    let mask = Model::new(&cfg, &store)?
        .forward(&img)
        .with_context(|| format!("forward pass on {}", image.display()))?;
    write_pgm(out, &mask)?;
    let macs = flop_estimate(&cfg, img.height(), img.width())?.total();
    println!("{}x{} -> {} ({macs} MACs)", img.height(), img.width(), out.display());
    Ok(true)
}

pub fn init_weights(config: Option<&Path>, out: &Path) -> Result<bool> {
    let cfg = load_config(config)?;
    let store = cfg.seeded_weights()?;
    save_weights(out, &store)?;
    let params: usize = store.iter().map(|(_, b)| b.data.len()).sum();
    println!("{} blocks, {params} parameters -> {}", store.iter().count(), out.display());
    Ok(true)
}

pub fn flops(config: Option<&Path>, size: usize) -> Result<bool> {
    let cfg = load_config(config)?;
    println!("{}", flop_estimate(&cfg, size, size)?);
    Ok(true)
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .with_context(|| format!("reading {}", dir.display()))?;
    files.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
    files.sort();
    Ok(files)
}

pub fn eval(pred_dir: &Path, gt_dir: &Path, out: Option<&Path>) -> Result<bool> {
    let files = pgm_files(pred_dir)?;
    ensure!(!files.is_empty(), "no .pgm files in {}", pred_dir.display());
    let mut ids = Vec::new();
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for p in &files {
        let name = p.file_name().expect("listed file");
        let g = gt_dir.join(name);
        ensure!(g.exists(), "missing ground truth {}", g.display());
        let pred = read_pgm(p)?;
        let gt = read_pgm(&g)?;
        ensure!(pred.shape() == gt.shape(), "{} and {} differ in size", p.display(), g.display());
        ids.push(p.file_stem().expect("listed file").to_string_lossy().into_owned());
        preds.push(pred);
        gts.push(BinaryMask::from_grid(&gt, 128.0 / 255.0));
    }
    let best = ods(&preds, &gts)?;
    let t = best.threshold;
    let mut csv = String::from("image_id,threshold,mIoU,F1,P,R,clDice\n");
    let mut cl_sum = 0.0;
    for ((id, pred), gt) in ids.iter().zip(&preds).zip(&gts) {
        let m = region_metrics(pred, gt, t)?;
        let cl = cldice(&BinaryMask::from_grid(pred, t), gt)?;
        cl_sum += cl;
        writeln!(csv, "{id},{t},{:.6},{:.6},{:.6},{:.6},{cl:.6}", m.miou, m.f1, m.precision, m.recall)?;
    }
    let idx = fgos_core::metrics::ods_thresholds().iter().position(|&x| x == t).expect("threshold from grid");
    let d = best.per_threshold[idx].metrics();
    let mean_cl = cl_sum / ids.len() as f64;
    writeln!(csv, "ODS,{t},{:.6},{:.6},{:.6},{:.6},{mean_cl:.6}", d.miou, d.f1, d.precision, d.recall)?;
    writeln!(csv, "mean_clDice,{t},,,,,{mean_cl:.6}")?;
    emit(out, &csv)?;
    Ok(true)
}

pub fn synth_gen(seed: u64, count: usize, size: usize, orientation: &str, out_dir: &Path) -> Result<bool> {
    ensure!(count > 0, "--count must be positive");
    let orientation: Orientation = orientation.parse()?;
    for sub in ["image", "gt", "skeleton"] {
        ensure_dir(&out_dir.join(sub))?;
    }
    let mut csv = String::from("id,seed,orientation,height,width,structure_pixels,skeleton_pixels,components\n");
    for k in 0..count as u64 {
        let s = seed + k;
        let sample = generate_sample(&SynthConfig { height: size, width: size, orientation, seed: s, ..SynthConfig::default() })?;
        let id = format!("{s:06}");
        let file = format!("{id}.pgm");
        write_pgm(&out_dir.join("image").join(&file), &sample.image)?;
        write_pgm(&out_dir.join("gt").join(&file), &sample.gt.to_grid())?;
        write_pgm(&out_dir.join("skeleton").join(&file), &sample.skeleton.to_grid())?;
        writeln!(
            csv,
            "{id},{s},{orientation},{size},{size},{},{},{}",
            sample.gt.count(),
            sample.skeleton.count(),
            sample.gt.component_count()
        )?;
    }
    emit(Some(&out_dir.join("manifest.csv")), &csv)?;
    println!("{count} samples -> {}", out_dir.display());
    Ok(true)
}

pub fn mismatch_demo(orientation: &str, size: usize, seed: u64, out: Option<&Path>) -> Result<bool> {
    let orientation: Orientation = orientation.parse()?;
    if !matches!(orientation, Orientation::Horizontal | Orientation::Vertical | Orientation::AxisAligned) {
        bail!("mismatch-demo needs an axis-aligned orientation, got `{orientation}`");
    }
    let sample = generate_sample(&SynthConfig {
        height: size,
        width: size,
        curves: 1,
        width_min: 1,
        width_max: 1,
        orientation,
        seed,
        ..SynthConfig::default()
    })?;
    let x = sample.image.map(|v| 1.0 - v);
    let psi = SsmParams::static_decay(1, 0.5, 1.0, 1.0, 0.0)?;
    let aligned = fa_scan(&x, &psi, &ScanAssignment::ablation_row("D1")?)?;
    let swapped = fa_scan(&x, &psi, &ScanAssignment::ablation_row("D4")?)?;
    let mut csv = String::from("index,row,col,aligned,swapped\n");
    let (mut sa, mut sb, mut n) = (0.0, 0.0, 0usize);
    for r in 0..size {
        for c in 0..size {
            if sample.gt.get(r, c) {
                let (a, b) = (aligned.get(0, r, c).abs(), swapped.get(0, r, c).abs());
                writeln!(csv, "{n},{r},{c},{a:.6},{b:.6}")?;
                sa += a;
                sb += b;
                n += 1;
            }
        }
    }
    ensure!(n > 0, "no structure pixels generated");
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    writeln!(csv, "mean,,,{ma:.6},{mb:.6}")?;
    emit(out, &csv)?;
    if out.is_some() {
        println!("aligned mean {ma:.6}, swapped mean {mb:.6}");
    }
    Ok(ma > mb)
}

pub fn bench(size: usize, iterations: usize, warmup: usize, ops: &str, out: Option<&Path>) -> Result<bool> {
    let cfg = PipelineConfig::default();
    let c = cfg.channels[0];
    let store = cfg.seeded_weights()?;
    let psi = SsmParams::from_store(&store, "s1.", c, cfg.state_dim)?;
    let tok = ssm_token_macs(c, cfg.state_dim, true);
    let x = random_grid(1, c, size, size);
    let bands = dwt_haar(&x)?;
    let tokens = size * size;
    let mut rows = Vec::new();
    for op in ops.split(',').map(str::trim) {
        let shape = [c, size, size];
        let r: BenchReport = match op {
            "dwt" => run_bench(op, &shape, haar_macs(c, size, size), warmup, iterations, || dwt_haar(&x))?,
            "idwt" => run_bench(op, &shape, haar_macs(c, size, size), warmup, iterations, || idwt_haar(&bands, size, size))?,
            "fa_scan" => {
                let a = cfg.assignment;
                run_bench(op, &shape, fa_scan_macs(c, size, size, tok), warmup, iterations, || fa_scan(&x, &psi, &a))?
            }
            "cross_scan" => run_bench(op, &shape, cross_scan_macs(c, size, size, tok), warmup, iterations, || cross_scan(&x, &psi))?,
            "ssm" => {
                let u = x.data().to_vec();
                run_bench(op, &[tokens, c], tokens as u64 * tok, warmup, iterations, || ssm_scan_sequential(&psi, &u))?
            }
            "forward" => {
                let img = random_grid(2, 1, size, size).map(|v| 0.5 + 0.5 * v);
                let macs = flop_estimate(&cfg, size, size)?.total();
                let model = Model::new(&cfg, &store)?;
                run_bench(op, &[1, size, size], macs, warmup, iterations, || model.forward(&img))?
            }
            other => bail!("unknown bench op `{other}`"),
        };
        eprintln!("{r}");
        rows.push(r.csv_row());
    }
    let mut csv = format!("{}\n", BenchReport::CSV_HEADER);
    for r in rows {
        csv.push_str(&r);
        csv.push('\n');
    }
    emit(out, &csv)?;
    Ok(true)
}
