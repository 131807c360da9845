//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#[path = "../../core/tests/common/oracle.rs"]
mod oracle;
mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use weightscape::checkpoint::{compute_stats, diff, load, load_bytes, save, synthesize, to_bytes, Entry};
use weightscape::metrics::stats_match_report;
use weightscape::ops::{self, AttentionParams};
use weightscape::perturb::{perturb_multiplicative, randomize_block};
use weightscape::render::{decode_png, input_fingerprint, latent_at, render_grid, GridProvenance};
use weightscape::rng::{EntryStream, SeedStream};
use weightscape::{
    BlockId, Checkpoint, CheckpointError, GeneratorGraph, GraphConfig, InitScheme, ParamKind, RenderRequest,
    StatsMode, Tensor, Variant,
};

const ALPHA: f64 = 0.35;

fn base() -> Checkpoint {
    synthesize(&GraphConfig::tiny64(), 0, InitScheme::ScaledFanIn).unwrap()
}

fn tiny() -> GeneratorGraph {
    GeneratorGraph::build(GraphConfig::tiny64()).unwrap()
}

fn within(elapsed: Duration, limit: Duration, what: &str) {
    assert!(elapsed < limit, "{what} took {elapsed:.1?}, limit {limit:?}");
}

fn multiplicative_statistics() -> String {
    let base = base();
    let start = Instant::now();
    let out = perturb_multiplicative(&base, ALPHA, 3, &ParamKind::trainable()).unwrap();
    within(start.elapsed(), Duration::from_secs(10), "perturbation");
    let mut checked = 0;
    let mut worst_std = 0.0f64;
    let mut worst_mean = 0.0f64;
    for (b, p) in base.entries().iter().zip(out.entries()) {
        let ratios: Vec<f64> = b
            .tensor
            .data()
            .iter()
            .zip(p.tensor.data())
            .filter(|(&x, _)| x != 0.0)
            .map(|(&x, &y)| f64::from(y) / f64::from(x) - 1.0)
            .collect();
        if ratios.len() < 10_000 || !b.kind.is_trainable() {
            continue;
        }
        let n = ratios.len() as f64;
        let (mean, std) = oracle::mean_std(&ratios);
        let rel = (std - ALPHA).abs() / ALPHA;
        let z = mean.abs() / (ALPHA / n.sqrt());
        assert!(rel <= 0.01, "{}: std {std} off by {:.2}%", b.name, 100.0 * rel);
        assert!(z <= 4.0, "{}: mean {mean} is {z:.2} standard errors out", b.name);
        worst_std = worst_std.max(rel);
        worst_mean = worst_mean.max(z);
        checked += 1;
    }
    assert!(checked > 0, "no entry has 10^4 nonzero elements");
    format!(
        "{checked} entries, worst std error {:.2}%, worst mean {worst_mean:.2} standard errors",
        100.0 * worst_std
    )
}

fn multiplicative_zero_law() -> String {
    let base = base();
    let entries = base
        .entries()
        .iter()
        .map(|e| {
            let mut e = e.clone();
            for (i, v) in e.tensor.data_mut().iter_mut().enumerate() {
                if i % 5 == 0 {
                    *v = if i % 10 == 0 { 0.0 } else { -0.0 };
                }
            }
            e
        })
        .collect();
    let holed = Checkpoint::new(entries, base.metadata().to_vec()).unwrap();
    let all: BTreeSet<ParamKind> = ParamKind::ALL.into();
    let mut zeros = 0usize;
    for seed in 0..3 {
        let out = perturb_multiplicative(&holed, ALPHA, seed, &all).unwrap();
        for (b, p) in holed.entries().iter().zip(out.entries()) {
            for (&x, &y) in b.tensor.data().iter().zip(p.tensor.data()) {
                if x == 0.0 {
                    assert_eq!(y.to_bits(), x.to_bits(), "{} seed {seed}", b.name);
                    zeros += 1;
                }
            }
        }
    }
    let same = perturb_multiplicative(&base, 0.0, 7, &all).unwrap();
    assert_eq!(to_bytes(&same), to_bytes(&base), "alpha 0 changed the payload");
    format!("{zeros} zero elements preserved over 3 seeds; alpha 0 byte-identical")
}

fn block_randomize_locality() -> String {
    let base = base();
    let targets: BTreeSet<_> = [BlockId::Block(2)].into();
    let start = Instant::now();
    let out = randomize_block(&base, &targets, 5, StatsMode::PerPixel, &ParamKind::ALL.into()).unwrap();
    within(start.elapsed(), Duration::from_secs(10), "randomization");
    let report = diff(&base, &out);
    let touched: Vec<_> = report.touched().collect();
    assert!(!touched.is_empty());
    for d in &touched {
        assert_eq!(d.block, BlockId::Block(2), "{} outside B2 changed", d.name);
    }
    for e in base.entries().iter().filter(|e| e.block == BlockId::Block(2) && e.kind.is_trainable()) {
        assert!(touched.iter().any(|d| d.name == e.name), "{} untouched", e.name);
    }
    let stats = compute_stats(&base, StatsMode::PerPixel);
    let matched = stats_match_report(&out, &stats, &targets);
    assert!(matched.passed(), "{}", matched.to_jsonl());
    let in_block: Vec<_> = matched.entries.iter().filter(|e| e.block == BlockId::Block(2)).collect();
    let large = in_block
        .iter()
        .filter(|e| e.groups.iter().map(|g| g.samples).sum::<usize>() >= 10_000)
        .count();
    assert!(large > 0, "no B2 entry has 10^4 elements");
    format!(
        "{} entries touched, all in B2; {} B2 entries match base statistics ({large} with 10^4+ elements)",
        touched.len(),
        in_block.len()
    )
}

fn block_sweep(dir: &Path) -> String {
    let ck = base();
    save(&ck, dir.join("base.wsc")).unwrap();
    let start = Instant::now();
    support::ok(dir, &["block-sweep", "--base", "base.wsc", "--seed", "1", "--outdir", "sweep"]);
    within(start.elapsed(), Duration::from_secs(120), "block sweep");
    let mut touched: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    let mut grids = Vec::new();
    for k in 1..=7 {
        let b = format!("B{k}");
        let derived = load(dir.join(format!("sweep/{b}.wsc"))).unwrap();
        let names: BTreeSet<String> = diff(&ck, &derived).touched().map(|d| d.name.clone()).collect();
        assert!(!names.is_empty(), "{b} changed nothing");
        for n in &names {
            let block = ck.entry(n).unwrap().block;
            assert_eq!(block, BlockId::Block(k), "{b} touched {n}");
        }
        touched.insert(b.clone(), names);
        let png = std::fs::read(dir.join(format!("sweep/{b}.png"))).unwrap();
        grids.push(decode_png(&png).unwrap().2);
    }
    let sets: Vec<_> = touched.values().collect();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            assert!(sets[i].is_disjoint(sets[j]), "B{} and B{} overlap", i + 1, j + 1);
            assert_ne!(grids[i], grids[j], "B{} and B{} grids equal", i + 1, j + 1);
        }
    }
    format!("7 checkpoints and 7 grids in {:.1?}; touched sets disjoint, grids pairwise different", start.elapsed())
}

fn architecture_shape() -> String {
    let graph = tiny();
    let ck = base();
    let bound = graph.bind(&ck).unwrap();
    let (img, trace) = bound.forward_traced(&latent_at(1, 0, 16), 3).unwrap();
    assert_eq!(img.shape(), &[3, 64, 64]);
    assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)), "output outside [-1, 1]");
    let spatial: Vec<usize> = trace.iter().map(|t| t.shape[1]).collect();
    assert_eq!(spatial, [8, 8, 16, 16, 32, 32, 32, 64, 64, 64]);
    let big = GeneratorGraph::build(GraphConfig::full256()).unwrap();
    let count = big.parameter_count();
    assert!((40_000_000..=70_000_000).contains(&count), "{count}");
    assert_eq!(big.output_resolution(), 256);
    format!("tiny64 -> [3, 64, 64] in [-1, 1], spatial {spatial:?}; 256px config has {count} parameters")
}

/// Uniform draws from one named substream, consumed in order.
struct Draws {
    stream: EntryStream,
    counter: u64,
}

impl Draws {
    fn new(seed: u64, name: &str) -> Self {
        Self {
            stream: SeedStream::new(seed).substream(name),
            counter: 0,
        }
    }

    fn unit(&mut self) -> f64 {
        self.counter += 1;
        self.stream.uniform(self.counter)
    }

    fn range(&mut self, lo: usize, hi: usize) -> usize {
        lo + ((self.unit() * (hi - lo + 1) as f64) as usize).min(hi - lo)
    }

    fn tensor(&mut self, shape: Vec<usize>, lo: f32, hi: f32) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| lo + (hi - lo) * self.unit() as f32).collect();
        Tensor::new(shape, data).unwrap()
    }
}

fn kernel_oracles() -> String {
    const CASES: usize = 128;
    const TOL: f64 = 1e-4;
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |name: &'static str, err: f64| {
        assert!(err < TOL, "{name}: error {err:e}");
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(err);
    };
    let mut d = Draws::new(2024, "kernels");
    for _ in 0..CASES {
        let (ci, co) = (d.range(1, 4), d.range(1, 4));
        let (kh, kw) = (2 * d.range(0, 1) + 1, 2 * d.range(0, 1) + 1);
        let (h, w) = (d.range(kh, 8), d.range(kw, 8));
        let pad = d.range(0, 2);
        let x = d.tensor(vec![ci, h, w], -2.0, 2.0);
        let k = d.tensor(vec![co, ci, kh, kw], -2.0, 2.0);
        let b = d.tensor(vec![co], -2.0, 2.0);
        let got = ops::conv2d(&x, &k, &b, pad).unwrap();
        record("conv2d", oracle::max_abs_diff(&got, &oracle::conv2d(&x, &k, &b, pad)));

        let (n, m) = (d.range(1, 32), d.range(1, 32));
        let x = d.tensor(vec![n], -2.0, 2.0);
        let wt = d.tensor(vec![m, n], -2.0, 2.0);
        let b = d.tensor(vec![m], -2.0, 2.0);
        record("linear", oracle::max_abs_diff(&ops::linear(&x, &wt, &b).unwrap(), &oracle::linear(&x, &wt, &b)));

        let (c, h, w) = (d.range(1, 5), d.range(1, 6), d.range(1, 6));
        let x = d.tensor(vec![c, h, w], -2.0, 2.0);
        let mean = d.tensor(vec![c], -1.0, 1.0);
        let var = d.tensor(vec![c], 0.05, 3.0);
        let gain = d.tensor(vec![c], -2.0, 2.0);
        let bias = d.tensor(vec![c], -2.0, 2.0);
        let eps = 1e-5 + 1e-2 * d.unit() as f32;
        let got = ops::batch_norm_inference(&x, &mean, &var, &gain, &bias, eps).unwrap();
        record("batch_norm", oracle::max_abs_diff(&got, &oracle::batch_norm(&x, &mean, &var, &gain, &bias, eps)));

        let shape = vec![d.range(1, 4), d.range(1, 6), d.range(1, 6)];
        let x = d.tensor(shape, -2.0, 2.0);
        record("upsample", oracle::max_abs_diff(&ops::upsample_nearest_2x(&x).unwrap(), &oracle::upsample(&x)));

        let (cq, cv, c) = (d.range(1, 3), d.range(1, 3), d.range(1, 4));
        let shape = vec![c, d.range(1, 4), d.range(1, 4)];
        let x = d.tensor(shape, -2.0, 2.0);
        let q = d.tensor(vec![cq, c, 1, 1], -2.0, 2.0);
        let k = d.tensor(vec![cq, c, 1, 1], -2.0, 2.0);
        let v = d.tensor(vec![cv, c, 1, 1], -2.0, 2.0);
        let o = d.tensor(vec![c, cv, 1, 1], -2.0, 2.0);
        let gamma = (3.0 * d.unit() - 1.5) as f32;
        let params = AttentionParams {
            query: &q,
            key: &k,
            value: &v,
            out: &o,
            gamma,
        };
        let got = ops::self_attention(&x, &params).unwrap();
        record("attention", oracle::max_abs_diff(&got, &oracle::attention(&x, &q, &k, &v, &o, gamma)));
    }
    let summary: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.1e}")).collect();
    format!("{CASES} cases per kernel, worst error: {}", summary.join(", "))
}

fn render_determinism() -> String {
    let graph = tiny();
    let base = Arc::new(base());
    let mut variants: Vec<Variant> = [0u64, 2, 4, 6, 8, 10]
        .iter()
        .map(|&s| {
            let ck = perturb_multiplicative(&base, ALPHA, s, &ParamKind::trainable()).unwrap();
            Variant::new(format!("seed{s}"), Arc::new(ck))
        })
        .collect();
    variants.push(Variant::new("base", base));
    let request = RenderRequest::seeded(0, 4, vec![0], variants);
    let start = Instant::now();
    let render = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| render_grid(&graph, &request).unwrap().encode_png().unwrap())
    };
    let first = render(4);
    let second = render(4);
    let single = render(1);
    within(start.elapsed(), Duration::from_secs(60), "three renders");
    assert_eq!(first, second, "repeat render differs");
    assert_eq!(first, single, "thread count changed the output");
    let (w, h, _) = decode_png(&first).unwrap();
    format!("{w}x{h} grid, 3 renders (4, 4, 1 threads) byte-identical in {:.1?}", start.elapsed())
}

fn random_checkpoint(d: &mut Draws, index: usize) -> Checkpoint {
    let count = d.range(1, 12);
    let blocks = [BlockId::Entry, BlockId::Block(1), BlockId::Block(7), BlockId::Attention, BlockId::Output];
    let entries = (0..count)
        .map(|i| {
            let kind = ParamKind::ALL[d.range(0, ParamKind::ALL.len() - 1)];
            let shape: Vec<usize> = (0..d.range(1, 4)).map(|_| d.range(1, 5)).collect();
            let tensor = if kind == ParamKind::BnRunningVar {
                d.tensor(shape, 0.0, 10.0)
            } else {
                let n = shape.iter().product();
                // arbitrary bit patterns, NaN and infinities included
                let data = (0..n).map(|_| f32::from_bits((d.unit() * f64::from(u32::MAX)) as u32)).collect();
                Tensor::new(shape, data).unwrap()
            };
            Entry {
                name: format!("m{index}.e{i}.{}", kind.as_str()),
                block: blocks[d.range(0, blocks.len() - 1)],
                kind,
                tensor,
            }
        })
        .collect();
    Checkpoint::new(entries, vec![("case".into(), index.to_string())]).unwrap()
}

fn checkpoint_format(dir: &Path) -> String {
    let mut d = Draws::new(7, "manifests");
    let mut truncations = 0;
    for i in 0..100 {
        let ck = random_checkpoint(&mut d, i);
        let bytes = to_bytes(&ck);
        let back = load_bytes(&bytes).unwrap();
        assert!(back.bit_eq(&ck), "manifest {i} did not round trip");
        assert_eq!(to_bytes(&back), bytes);
        let cut = d.range(0, bytes.len() - 1);
        assert!(load_bytes(&bytes[..cut]).is_err(), "manifest {i} truncated at {cut} loaded");
        truncations += 1;
    }

    let ck = base();
    let path = dir.join("fmt.wsc");
    save(&ck, &path).unwrap();
    let good = std::fs::read(&path).unwrap();
    let mut bad = good.clone();
    bad[0] ^= 0xFF;
    assert!(matches!(load_bytes(&bad), Err(CheckpointError::BadMagic)));
    let last = ck.entries().last().unwrap().name.clone();
    match load_bytes(&good[..good.len() - 8 - 4]) {
        Err(CheckpointError::Truncated { entry }) => assert_eq!(entry, last),
        other => panic!("truncation gave {other:?}"),
    }
    let mut flipped = good.clone();
    let at = good.len() - 8 - 4;
    flipped[at] ^= 0x01;
    assert!(matches!(load_bytes(&flipped), Err(CheckpointError::ChecksumMismatch { .. })));

    std::fs::write(dir.join("magic.wsc"), &bad).unwrap();
    std::fs::write(dir.join("short.wsc"), &good[..good.len() / 2]).unwrap();
    std::fs::write(dir.join("flip.wsc"), &flipped).unwrap();
    for name in ["magic.wsc", "short.wsc", "flip.wsc"] {
        let out = support::run(dir, &["stats", "--checkpoint", name]);
        assert_eq!(out.status.code(), Some(2), "stats on {name}");
    }
    format!("100 random manifests round trip, {truncations} truncations rejected; magic, truncation and checksum errors raised; CLI exits 2")
}

fn latent_protocol(dir: &Path) -> String {
    let ck = base();
    save(&ck, dir.join("lp_base.wsc")).unwrap();
    support::ok(dir, &["perturb", "--base", "lp_base.wsc", "--seed", "9", "--out", "lp_s9.wsc"]);
    support::ok(
        dir,
        &[
            "render", "--checkpoints", "lp_s9.wsc,lp_base.wsc", "--classes", "1,6", "--latent-seed", "12",
            "--count", "2", "--out", "lp.png",
        ],
    );
    let cli_png = std::fs::read(dir.join("lp.png")).unwrap();
    let prov: GridProvenance =
        serde_json::from_str(&std::fs::read_to_string(dir.join("lp.provenance.json")).unwrap()).unwrap();

    let graph = GeneratorGraph::build(GraphConfig::resolve(&prov.graph).unwrap()).unwrap();
    let variants = prov
        .columns
        .iter()
        .map(|c| {
            let ck = load(dir.join(c.source.as_deref().unwrap())).unwrap();
            assert_eq!(format!("{:016x}", ck.checksum()), c.checksum, "{} checksum", c.label);
            Variant::new(c.label.clone(), Arc::new(ck))
        })
        .collect();
    let (latents, classes) = prov.layout();
    let request = RenderRequest {
        latents,
        classes,
        variants,
    };
    assert_eq!(request.rows(), prov.rows);
    let grid = render_grid(&graph, &request).unwrap();
    let dim = graph.config().latent_dim;
    let cols = grid.col_count();
    for (r, row) in prov.rows.iter().enumerate() {
        let want = input_fingerprint(&latent_at(row.latent.seed, row.latent.index, dim), row.class);
        for c in 0..cols {
            assert_eq!(grid.tile_inputs[r * cols + c], want, "row {r} col {c} consumed a different input");
        }
    }
    assert_eq!(grid.encode_png().unwrap(), cli_png, "library render differs from CLI output");
    format!(
        "{} rows x {cols} columns share one (z, c) per row; grid rebuilt from provenance is byte-identical",
        prov.rows.len()
    )
}

type Criterion<'a> = (&'static str, Box<dyn FnOnce() -> String + 'a>);

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path();
    let criteria: Vec<Criterion> = vec![
        ("multiplicative-statistics", Box::new(multiplicative_statistics)),
        ("multiplicative-zero-law", Box::new(multiplicative_zero_law)),
        ("block-randomize-locality", Box::new(block_randomize_locality)),
        ("block-sweep", Box::new(|| block_sweep(path))),
        ("architecture-shape", Box::new(architecture_shape)),
        ("kernel-oracles", Box::new(kernel_oracles)),
        ("render-determinism", Box::new(render_determinism)),
        ("checkpoint-format", Box::new(|| checkpoint_format(path))),
        ("latent-protocol", Box::new(|| latent_protocol(path))),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check));
        let t = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{t:.1?}]"),
            Err(e) => {
                failed += 1;
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL {name}: {msg} [{t:.1?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
