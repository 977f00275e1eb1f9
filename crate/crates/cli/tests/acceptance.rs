//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use glimpse_cli::commands::{self, train_attention, AnnotateKind, Context, Method};
use glimpse_cli::RunConfig;
use glimpse_core::attention::{iterations_to_within, loss_unsupervised, AttentionDims, AttentionNet, Block, ReinforceOptions, RolloutMode};
use glimpse_core::boed::{epe_map, estimate_epe, SupervisionRecord};
use glimpse_core::completion::{
    importance_log_weights, pca_fit, sample_images, sample_proposal, Completer, CompletionParams, ExactCompleter,
    ExactMode, RankDeficiency, Sigma, SigmaQ,
};
use glimpse_core::io::{decode_glb1, decode_records, Manifest};
use glimpse_core::posterior::{AvpModel, ExactPosterior, MaskedLinearAvp};
use glimpse_core::tensor::{entropy_of, fovea, log_sum_exp, masked_embedding, softmax};
use glimpse_core::Categorical as Cat;
use glimpse_core::world::{Region, WorldEntry};
use glimpse_core::{
    build_world, DesignGrid, FiniteWorld, GlimpseGeometry, GlimpseHistory, GlimpseLocation, Image, LabeledDataset,
    SeededRng, WorldConfig,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    check(took < budget, format!("took {took:.1?}, budget {budget:?}"))
}

fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3)
}

fn entropy(weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    weights
        .iter()
        .filter(|&&w| w > 0.0)
        .map(|&w| -(w / total) * (w / total).ln())
        .sum()
}

/// 4 classes x 4 variants on a 4x4 grid.
fn small_world() -> FiniteWorld {
    build_world(&WorldConfig {
        classes: 4,
        variants: 4,
        height: 16,
        width: 16,
        glimpse: 4,
        stride: 4,
        blobs: 2,
        blob_size: 2,
        confuser: Region { x: 0, y: 0, width: 4, height: 16 },
        jitter: 1,
        seed: 5,
        ..Default::default()
    })
    .unwrap()
}

/// Expected posterior entropy after one more glimpse, enumerating every outcome the
/// candidate can produce among the entries consistent with the history.
fn sequential_epe(world: &FiniteWorld, truth: &Image, history: &[GlimpseLocation], candidate: GlimpseLocation) -> f64 {
    let geo = world.geometry();
    let observed: Vec<_> = history.iter().map(|&l| fovea(truth, geo, l).unwrap()).collect();
    let consistent: Vec<&WorldEntry> = world
        .entries()
        .iter()
        .filter(|e| history.iter().zip(&observed).all(|(&l, y)| fovea(&e.image, geo, l).unwrap() == *y))
        .collect();
    let mass: f64 = consistent.iter().map(|e| e.prob).sum();
    let mut outcomes: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    for e in &consistent {
        let y = fovea(&e.image, geo, candidate).unwrap().pixels;
        let slot = match outcomes.iter().position(|(o, _)| *o == y) {
            Some(i) => i,
            None => {
                outcomes.push((y, vec![0.0; world.classes()]));
                outcomes.len() - 1
            }
        };
        outcomes[slot].1[e.label] += e.prob;
    }
    outcomes.iter().map(|(_, by_label)| by_label.iter().sum::<f64>() / mass * entropy(by_label)).sum()
}

fn current_entropy(world: &FiniteWorld, truth: &Image, history: &[GlimpseLocation]) -> f64 {
    world.posterior_of_view(truth, history).unwrap().entropy()
}

fn histories(grid: &DesignGrid) -> Vec<Vec<GlimpseLocation>> {
    let locs: Vec<_> = grid.locations().collect();
    let mut out = vec![vec![]];
    out.extend(locs.iter().map(|&l| vec![l]));
    out.extend(locs.iter().flat_map(|&a| locs.iter().map(move |&b| vec![a, b])));
    out
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let world = small_world();
    check(world.len() <= 32 && world.grid().len() == 16, "world shape")?;
    let avp = ExactPosterior::new(&world);
    let completer = ExactCompleter::new(&world, ExactMode::Exhaustive);
    let mut rng = SeededRng::new(0);
    let locs: Vec<_> = world.grid().locations().collect();
    let (mut pairs, mut worst) = (0usize, 0.0f64);
    for entry in world.entries() {
        for hist in histories(world.grid()) {
            let completions = completer.complete(&entry.image, &hist, 0, &mut rng).map_err(|e| e.to_string())?;
            for &cand in &locs {
                let oracle = sequential_epe(&world, &entry.image, &hist, cand);
                let got = estimate_epe(&avp, &completions, &hist, cand).map_err(|e| e.to_string())?;
                worst = worst.max((got - oracle).abs());
                pairs += 1;
            }
        }
    }
    check(worst <= 1e-9, format!("max |EPE - oracle| = {worst:e}"))?;
    within_budget(start, Duration::from_secs(10))?;
    Ok(format!("{pairs} (history, candidate) pairs, max error {worst:.1e}, {:.1?}", start.elapsed()))
}

fn two_cell_net(seed: u64, image: &Image) -> (AttentionNet, usize) {
    let grid = DesignGrid::new(1, 2, GlimpseGeometry::new(1, 1).unwrap()).unwrap();
    let dims = AttentionDims { classes: 2, embed: 3, hidden: 4 };
    let mut rng = SeededRng::new(seed);
    loop {
        let mut net = AttentionNet::init(grid, dims, &mut rng).unwrap();
        for p in net.params_mut() {
            *p = 1.5 * rng.normal();
        }
        let preds: Vec<usize> = sequences()
            .iter()
            .map(|s| net.rollout(image, 2, RolloutMode::Forced(s), None).unwrap().prediction())
            .collect();
        if preds.iter().any(|&p| p != preds[0]) {
            return (net, preds[0]);
        }
    }
}

fn sequences() -> Vec<[GlimpseLocation; 2]> {
    let l = |gx| GlimpseLocation::new(gx, 0);
    vec![[l(0), l(0)], [l(0), l(1)], [l(1), l(0)], [l(1), l(1)]]
}

/// `E[R]` by enumerating both glimpse sequences of both steps.
fn expected_reward(net: &AttentionNet, image: &Image, label: usize) -> f64 {
    sequences()
        .iter()
        .map(|s| {
            let ro = net.rollout(image, 2, RolloutMode::Forced(s), None).unwrap();
            ro.loc_log_probs.iter().sum::<f64>().exp() * ro.reward(label)
        })
        .sum()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let image = Image::new(1, 2, vec![0.2, 0.8]).unwrap();
    let mut worst_z = 0.0f64;
    for seed in [1, 2, 3] {
        let (net, label) = two_cell_net(seed, &image);
        let head: Vec<usize> = net.range(Block::Wl).chain(net.range(Block::Bl)).collect();
        let h = 1e-6;
        let exact: Vec<f64> = head
            .iter()
            .map(|&i| {
                let at = |delta: f64| {
                    let mut p = net.params().to_vec();
                    p[i] += delta;
                    expected_reward(&AttentionNet::from_params(*net.grid(), net.dims(), p).unwrap(), &image, label)
                };
                -(at(h) - at(-h)) / (2.0 * h)
            })
            .collect();
        let batch = vec![(&image, label); 1000];
        let mut rng = SeededRng::new(100 + seed);
        let means: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let (_, g) = loss_unsupervised(&net, &batch, 2, &ReinforceOptions::default(), &mut rng).unwrap();
                head.iter().map(|&i| g[i]).collect()
            })
            .collect();
        for (k, &e) in exact.iter().enumerate() {
            let xs: Vec<f64> = means.iter().map(|m| m[k]).collect();
            let mean = xs.iter().sum::<f64>() / 100.0;
            let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0).sqrt();
            let se = sd / 10.0;
            let z = (mean - e).abs() / se.max(1e-300);
            worst_z = worst_z.max(z);
            check(z <= 3.0, format!("seed {seed} coordinate {k}: {mean} vs {e}, {z:.2} SE"))?;
        }
    }
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!("3 parameter seeds x 1e5 episodes, worst deviation {worst_z:.2} SE, {:.1?}", start.elapsed()))
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut worst_attn = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = SeededRng::new(40 + seed);
        let grid = DesignGrid::new(6, 6, GlimpseGeometry::new(2, 2).unwrap()).unwrap();
        let net = AttentionNet::init(grid, AttentionDims { classes: 3, embed: 4, hidden: 5 }, &mut rng).unwrap();
        let mut params = net.params().to_vec();
        for p in &mut params {
            *p += 0.3 * rng.normal();
        }
        let net = AttentionNet::from_params(grid, net.dims(), params).unwrap();
        let image = Image::from_fn(6, 6, |_, _| rng.uniform()).unwrap();
        let locs: Vec<GlimpseLocation> = (0..3).map(|_| grid.location(rng.below(grid.len()))).collect();
        let label = rng.below(3);
        let (_, _, grad) = net.supervised_example(&image, label, &locs).unwrap();
        let h = 1e-5;
        for i in 0..net.params().len() {
            let at = |delta: f64| {
                let mut p = net.params().to_vec();
                p[i] += delta;
                let n = AttentionNet::from_params(grid, net.dims(), p).unwrap();
                let (c, l, _) = n.supervised_example(&image, label, &locs).unwrap();
                c + l
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let e = rel_err(fd, grad[i]);
            worst_attn = worst_attn.max(e);
            check(e <= 1e-4, format!("attention instance {seed} parameter {i}: fd {fd} vs {}", grad[i]))?;
        }
    }
    let mut worst_avp = 0.0f64;
    for seed in 0..5u64 {
        let mut rng = SeededRng::new(70 + seed);
        let grid = DesignGrid::new(4, 4, GlimpseGeometry::new(2, 2).unwrap()).unwrap();
        let params: Vec<f64> = (0..3 * 2 * 16 + 3).map(|_| 0.5 * rng.normal()).collect();
        let model = MaskedLinearAvp::from_params(3, grid, params).unwrap();
        let batch: Vec<(GlimpseHistory, usize)> = (0..6)
            .map(|_| {
                let image = Image::from_fn(4, 4, |_, _| rng.uniform()).unwrap();
                let t = 1 + rng.below(3);
                let locs: Vec<_> = (0..t).map(|_| grid.location(rng.below(grid.len()))).collect();
                (GlimpseHistory::observe(&image, &grid.geometry, &locs).unwrap(), rng.below(3))
            })
            .collect();
        let (_, grad) = model.loss_and_grad(&batch).unwrap();
        let h = 1e-6;
        for i in 0..model.params().len() {
            let at = |delta: f64| {
                let mut p = model.params().to_vec();
                p[i] += delta;
                MaskedLinearAvp::from_params(3, grid, p).unwrap().loss_and_grad(&batch).unwrap().0
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            let e = rel_err(fd, grad[i]);
            worst_avp = worst_avp.max(e);
            check(e <= 1e-6, format!("AVP instance {seed} parameter {i}: fd {fd} vs {}", grad[i]))?;
        }
    }
    within_budget(start, Duration::from_secs(30))?;
    Ok(format!(
        "attention worst rel. error {worst_attn:.1e}, AVP worst rel. error {worst_avp:.1e}, {:.1?}",
        start.elapsed()
    ))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(11);
    let bank: Vec<Image> = (0..8).map(|_| Image::from_fn(4, 2, |_, _| rng.uniform()).unwrap()).collect();
    let pca = pca_fit(&bank, 8, false, RankDeficiency::Keep).map_err(|e| e.to_string())?;
    let geo = GlimpseGeometry::new(2, 2).unwrap();
    let source = Image::from_fn(4, 2, |_, _| rng.uniform()).unwrap();
    let locs = [GlimpseLocation::new(0, 0)];
    let sigma = 0.25;
    let params = CompletionParams {
        k1: 8,
        k2: 1,
        sigma_p: Sigma::fixed(sigma),
        sigma_q: SigmaQ::Fixed(Sigma::fixed(sigma)),
        ..Default::default()
    };

    // exact categorical over the bank under the Gaussian likelihood of the observed patch
    let log_lik: Vec<f64> = bank
        .iter()
        .map(|im| {
            let a = fovea(&source, &geo, locs[0]).unwrap();
            let b = fovea(im, &geo, locs[0]).unwrap();
            -a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / (2.0 * sigma * sigma)
        })
        .collect();
    let lse = log_sum_exp(&log_lik);
    let exact: Vec<f64> = log_lik.iter().map(|l| (l - lse).exp()).collect();

    let reps = 100_000;
    let mut counts = [0usize; 8];
    for _ in 0..reps {
        let got = sample_images(&pca, &bank, &source, &geo, &locs, &params, &mut rng).map_err(|e| e.to_string())?;
        let i = bank.iter().position(|b| *b == got[0]).ok_or("sample not in bank")?;
        counts[i] += 1;
    }
    let stat: f64 = counts
        .iter()
        .zip(&exact)
        .map(|(&c, &p)| {
            let e = p * reps as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum();
    let p_value = 1.0 - ChiSquared::new(7.0).unwrap().cdf(stat);
    check(p_value > 0.01, format!("chi-square {stat:.2}, p = {p_value:.4}"))?;

    let mut spread = 0.0f64;
    for trial in 0..20 {
        let src = if trial % 2 == 0 { bank[trial % 8].clone() } else { Image::from_fn(4, 2, |_, _| rng.uniform()).unwrap() };
        let proposal = sample_proposal(&pca, &src, &geo, &locs, &params, &mut rng).map_err(|e| e.to_string())?;
        let log_w = importance_log_weights(&pca, &bank, &src, &geo, &locs, &params, &proposal).map_err(|e| e.to_string())?;
        let w: Vec<f64> = log_w.iter().map(|l| l.exp()).collect();
        let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        spread = spread.max(hi - lo);
    }
    check(spread <= 1e-9, format!("importance weights differ by {spread:e}"))?;
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!("chi-square p = {p_value:.3}, max weight spread {spread:.1e}, {:.1?}", start.elapsed()))
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let mut rng = SeededRng::new(3);

    // entropy identities
    for k in 1..=12usize {
        check((Cat::uniform(k).entropy() - (k as f64).ln()).abs() <= 1e-12, "uniform entropy")?;
        for _ in 0..100 {
            let w: Vec<f64> = (0..k).map(|_| rng.uniform().powi(3)).collect();
            if w.iter().sum::<f64>() == 0.0 {
                continue;
            }
            let c = Cat::from_weights(w).unwrap();
            check(c.entropy() <= (k as f64).ln() + 1e-12, "entropy above log K")?;
            check(c.entropy() >= 0.0, "negative entropy")?;
            let direct: f64 = c.probs().iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum();
            check((entropy_of(c.probs()) - direct).abs() <= 1e-12, "entropy formula")?;
            let logits: Vec<f64> = (0..k).map(|_| 50.0 * rng.normal()).collect();
            let shifted: Vec<f64> = logits.iter().map(|l| l + 1e3).collect();
            check((log_sum_exp(&shifted) - log_sum_exp(&logits) - 1e3).abs() <= 1e-9, "log-sum-exp shift")?;
            check((softmax(&logits).iter().sum::<f64>() - 1.0).abs() <= 1e-12, "softmax normalisation")?;
        }
        let mut delta = vec![0.0; k];
        delta[rng.below(k)] = 1.0;
        check(Cat::new(delta).unwrap().entropy().abs() <= 1e-12, "delta entropy")?;
    }

    // mask permutation invariance
    let grid = DesignGrid::new(8, 8, GlimpseGeometry::new(4, 2).unwrap()).unwrap();
    let avp = MaskedLinearAvp::from_params(
        3,
        grid,
        (0..3 * 2 * 64 + 3).map(|_| rng.normal()).collect(),
    )
    .unwrap();
    for _ in 0..200 {
        let image = Image::from_fn(8, 8, |_, _| rng.uniform()).unwrap();
        let mut locs: Vec<_> = (0..1 + rng.below(5)).map(|_| grid.location(rng.below(grid.len()))).collect();
        let a = masked_embedding(&image, &grid.geometry, &locs).unwrap();
        let ca = avp.classify_view(&image, &locs).unwrap();
        for i in (1..locs.len()).rev() {
            locs.swap(i, rng.below(i + 1));
        }
        check(masked_embedding(&image, &grid.geometry, &locs).unwrap() == a, "embedding depends on glimpse order")?;
        check(avp.classify_view(&image, &locs).unwrap() == ca, "AVP depends on glimpse order")?;
        let hist = GlimpseHistory::observe(&image, &grid.geometry, &locs).unwrap();
        check(avp.classify(&hist.reversed()).unwrap() == ca, "AVP depends on history order")?;
    }

    // PCA orthonormality and slicing
    let bank: Vec<Image> = (0..40).map(|_| Image::from_fn(8, 8, |_, _| rng.uniform()).unwrap()).collect();
    for latent in [1, 5, 20, 40] {
        let pca = pca_fit(&bank, latent, latent % 2 == 0, RankDeficiency::Keep).map_err(|e| e.to_string())?;
        for a in 0..pca.latent {
            for b in 0..pca.latent {
                let d: f64 = pca.component(a).iter().zip(pca.component(b)).map(|(x, y)| x * y).sum();
                check((d - f64::from(u8::from(a == b))).abs() <= 1e-8, format!("W W^T [{a},{b}] = {d}"))?;
            }
        }
        for c in 0..pca.candidates() {
            let locs: Vec<_> = (0..3).map(|_| grid.location(rng.below(grid.len()))).collect();
            let full = pca.reconstruct(pca.code(c));
            let sliced = pca.slice_reconstruct(pca.code(c), &grid.geometry, &locs).unwrap();
            for (patch, &l) in sliced.iter().zip(&locs) {
                for (v, p) in patch.pixels.iter().zip(grid.geometry.footprint(l, 8)) {
                    check((v - full[p]).abs() <= 1e-12, "slice differs from reconstruction")?;
                }
            }
        }
    }

    // re-observation neutrality and conditioning on the exact world
    let world = small_world();
    let exact = ExactPosterior::new(&world);
    let completer = ExactCompleter::new(&world, ExactMode::Exhaustive);
    for entry in world.entries() {
        for hist in histories(world.grid()).into_iter().step_by(7) {
            let completions = completer.complete(&entry.image, &hist, 0, &mut rng).unwrap();
            let map = epe_map(&exact, &completions, &hist).unwrap();
            let current = current_entropy(&world, &entry.image, &hist);
            let min = map.values.iter().copied().fold(f64::INFINITY, f64::min);
            check(min <= current + 1e-9, format!("{hist:?}: min EPE {min} > entropy {current}"))?;
            for &l in &hist {
                check((map.get(l) - current).abs() <= 1e-9, format!("{hist:?}: re-observing {l:?} moved entropy"))?;
            }
        }
    }
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!("all invariant groups hold, {:.1?}", start.elapsed()))
}

struct Pipeline {
    cfg: RunConfig,
    grid: DesignGrid,
    train: LabeledDataset,
    val: LabeledDataset,
    supervision: Vec<(Method, Vec<SupervisionRecord>)>,
    prep: Duration,
}

fn load_split(dir: &Path, name: &str) -> (LabeledDataset, DesignGrid) {
    let (images, grid) = decode_glb1(&fs::read(dir.join(format!("{name}.glb"))).unwrap()).unwrap();
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(format!("{name}.json"))).unwrap()).unwrap();
    (manifest.to_dataset(images).unwrap(), grid)
}

/// World, posterior, PCA and the three annotation sets, produced by the pipeline commands.
fn prepare(dir: &Path) -> Result<Pipeline, String> {
    let start = Instant::now();
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/glyphworld.json");
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let cfg = RunConfig::parse(&text).map_err(|e| e.to_string())?;
    let ctx = Context::new(cfg.clone(), text, dir.to_path_buf(), cfg.seed);
    commands::world_gen(&ctx).map_err(|e| e.to_string())?;
    commands::avp_train_cmd(&ctx).map_err(|e| e.to_string())?;
    commands::pca_fit_cmd(&ctx).map_err(|e| e.to_string())?;
    let mut supervision = Vec::new();
    for method in [Method::PsNogs, Method::PsH1, Method::PsH5] {
        let kind: AnnotateKind = method.supervision().unwrap();
        commands::annotate_cmd(&ctx, kind).map_err(|e| e.to_string())?;
        let text = fs::read_to_string(dir.join(kind.records_file())).unwrap();
        supervision.push((method, decode_records(&text).map_err(|e| e.to_string())?));
    }
    let (train, grid) = load_split(dir, "train");
    let (val, _) = load_split(dir, "val");
    Ok(Pipeline {
        cfg,
        grid,
        train,
        val,
        supervision,
        prep: start.elapsed(),
    })
}

#[derive(Debug, Default)]
struct MethodRuns {
    iterations: Vec<f64>,
    final_accuracy: Vec<f64>,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn training_runs(p: &Pipeline) -> Result<(Vec<(Method, MethodRuns)>, Duration), String> {
    let start = Instant::now();
    let mut methods: Vec<(Method, &[SupervisionRecord])> = vec![(Method::Ram, &[])];
    methods.extend(p.supervision.iter().map(|(m, r)| (*m, r.as_slice())));
    let mut out: Vec<(Method, MethodRuns)> = methods.iter().map(|(m, _)| (*m, MethodRuns::default())).collect();
    for seed in SEEDS {
        for (slot, (_, records)) in out.iter_mut().zip(&methods) {
            let (_, report) =
                train_attention(&p.cfg, seed, p.grid, &p.train, &p.val, records).map_err(|e| e.to_string())?;
            let iters = iterations_to_within(&report.val_accuracy, 0.01).ok_or("no validation runs")?;
            slot.1.iterations.push(iters as f64);
            slot.1.final_accuracy.push(report.final_accuracy().unwrap());
        }
    }
    Ok((out, start.elapsed()))
}

fn summary(runs: &[(Method, MethodRuns)], m: Method) -> (f64, f64) {
    let r = &runs.iter().find(|(x, _)| *x == m).unwrap().1;
    (median(&r.iterations), median(&r.final_accuracy))
}

fn criterion_5(runs: &[(Method, MethodRuns)], elapsed: Duration) -> Outcome {
    let (ram_it, ram_acc) = summary(runs, Method::Ram);
    let (ps_it, ps_acc) = summary(runs, Method::PsNogs);
    let detail = format!(
        "median iterations PS-NOGS {ps_it} vs RAM {ram_it} (ratio {:.2}), final accuracy PS-NOGS {ps_acc:.4} vs RAM {ram_acc:.4}, {elapsed:.1?}",
        ps_it / ram_it
    );
    check(ps_it <= 0.5 * ram_it, format!("not twice as fast: {detail}"))?;
    check(ps_acc >= ram_acc - 0.02, format!("accuracy gap: {detail}"))?;
    within_budget(Instant::now() - elapsed, Duration::from_secs(30 * 60))?;
    Ok(detail)
}

fn criterion_6(runs: &[(Method, MethodRuns)]) -> Outcome {
    let (ram_it, _) = summary(runs, Method::Ram);
    let (_, nogs_acc) = summary(runs, Method::PsNogs);
    let mut parts = Vec::new();
    let mut failures = Vec::new();
    for m in [Method::PsH1, Method::PsH5] {
        let (it, acc) = summary(runs, m);
        parts.push(format!("{m} median iterations {it} (RAM {ram_it}), final accuracy {acc:.4} (PS-NOGS {nogs_acc:.4})"));
        if it >= ram_it {
            failures.push(format!("{m} not faster than RAM"));
        }
        if acc > nogs_acc + 0.01 {
            failures.push(format!("{m} above PS-NOGS + 1pp"));
        }
    }
    let detail = parts.join("; ");
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}: {detail}", failures.join(", ")))
    }
}

fn criterion_8() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = common::write_config(dir.path(), common::SMALL_CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fs::create_dir(&a).unwrap();
    fs::create_dir(&b).unwrap();
    common::full_pipeline(&config, &a);
    common::full_pipeline(&config, &b);
    let (sa, sb) = (common::snapshot(&a), common::snapshot(&b));
    check(sa.keys().eq(sb.keys()), "different artifact sets")?;
    for (name, bytes) in &sa {
        check(sb[name] == *bytes, format!("{name} differs between runs"))?;
    }
    Ok(format!("{} artifacts byte-identical across two runs, {:.1?}", sa.len(), start.elapsed()))
}

fn run(results: &mut Vec<bool>, id: &str, name: &str, f: impl FnOnce() -> Outcome) {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    match &outcome {
        Ok(d) => println!("criterion {id} ({name}): PASS: {d}"),
        Err(d) => println!("criterion {id} ({name}): FAIL: {d}"),
    }
    results.push(outcome.is_ok());
}

fn main() {
    // cargo test passes harness flags (e.g. --nocapture, filters); only a listing request matters here.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut results = Vec::new();
    run(&mut results, "1", "EPE oracle equivalence", criterion_1);
    run(&mut results, "2", "REINFORCE unbiasedness", criterion_2);
    run(&mut results, "3", "gradient checks", criterion_3);
    run(&mut results, "4", "importance sampler", criterion_4);

    let dir = tempfile::tempdir().expect("temporary directory");
    let runs = catch_unwind(AssertUnwindSafe(|| {
        let p = prepare(dir.path())?;
        let (runs, train_time) = training_runs(&p)?;
        Ok::<_, String>((runs, p.prep + train_time))
    }))
    .unwrap_or_else(|_| Err("pipeline panicked".into()));
    match &runs {
        Ok((runs, elapsed)) => {
            run(&mut results, "5", "training speed-up", || criterion_5(runs, *elapsed));
            run(&mut results, "6", "baseline ordering", || criterion_6(runs));
        }
        Err(e) => {
            run(&mut results, "5", "training speed-up", || Err(e.clone()));
            run(&mut results, "6", "baseline ordering", || Err(e.clone()));
        }
    }

    run(&mut results, "7", "invariant suites", criterion_7);
    run(&mut results, "8", "pipeline determinism", criterion_8);
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
