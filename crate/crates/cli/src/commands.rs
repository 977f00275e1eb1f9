//! Pipeline stages. Each reads its inputs from the output directory, writes its artifacts
//! atomically and finishes with a provenance record.

use std::fmt;
use std::path::{Path, PathBuf};

use glimpse_core::attention::{evaluate, iterations_to_within, train, AttentionNet, TrainReport};
use glimpse_core::boed::{
    annotate_sequence, heatmap_csv, heatmap_pgm, make_supervision_set, AnnotationConfig, EpeMap, SupervisionKind,
    SupervisionRecord,
};
use glimpse_core::completion::{pca_fit, PcaBank, RetrievalCompleter};
use glimpse_core::io::{
    decode_attention, decode_avp, decode_glb1, decode_pca, decode_records, encode_attention, encode_avp, encode_glb1,
    encode_metrics, encode_pca, encode_records, Manifest,
};
use glimpse_core::posterior::{avp_train, MaskedLinearAvp};
use glimpse_core::rng::mix_seed;
use glimpse_core::{
    build_world, sample_dataset, AdamState, DesignGrid, Image, LabeledDataset, SeededRng, Split,
};
use serde::Serialize;

use crate::artifacts::{check_recorded_inputs, load_provenance, Stage};
use crate::config::RunConfig;
use crate::error::CliError;

const DATA_STREAM: u64 = 0x4441_5441;
const AVP_STREAM: u64 = 0x4156_5054;
const ANNOTATE_STREAM: u64 = 0x414e_4e4f;
const ATTN_STREAM: u64 = 0x4154_544e;
const TEST_STREAM: u64 = 0x5445_5354;
const HEATMAP_STREAM: u64 = 0x4845_4154;

pub const WORLD_GEN: &str = "world-gen";
pub const AVP_TRAIN: &str = "avp-train";
pub const PCA_FIT: &str = "pca-fit";

/// Everything a command needs besides its own flags.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: RunConfig,
    /// Raw config bytes, hashed into every provenance record.
    pub config_text: String,
    pub out: PathBuf,
    pub seed: u64,
}

impl Context {
    pub fn new(config: RunConfig, config_text: String, out: PathBuf, seed: u64) -> Self {
        Self {
            config,
            config_text,
            out,
            seed,
        }
    }

    fn stage(&self, name: &str) -> Result<Stage, CliError> {
        let mut stage = Stage::open(&self.out, name, self.seed)?;
        stage.record_config(&self.config_text);
        Ok(stage)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum AnnotateKind {
    Nogs,
    H1,
    H5,
    Hgs,
}

impl AnnotateKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AnnotateKind::Nogs => "nogs",
            AnnotateKind::H1 => "h1",
            AnnotateKind::H5 => "h5",
            AnnotateKind::Hgs => "hgs",
        }
    }

    pub fn records_file(&self) -> String {
        format!("sup-{}.jsonl", self.as_str())
    }

    pub fn stage_name(&self) -> String {
        format!("annotate-{}", self.as_str())
    }

    fn index(&self) -> u64 {
        *self as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Method {
    Ram,
    PsNogs,
    PsH1,
    PsH5,
    PsHgs,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Ram => "ram",
            Method::PsNogs => "ps-nogs",
            Method::PsH1 => "ps-h1",
            Method::PsH5 => "ps-h5",
            Method::PsHgs => "ps-hgs",
        }
    }

    /// The annotation set a partially supervised method trains on.
    pub fn supervision(&self) -> Option<AnnotateKind> {
        match self {
            Method::Ram => None,
            Method::PsNogs => Some(AnnotateKind::Nogs),
            Method::PsH1 => Some(AnnotateKind::H1),
            Method::PsH5 => Some(AnnotateKind::H5),
            Method::PsHgs => Some(AnnotateKind::Hgs),
        }
    }

    pub fn checkpoint_file(&self) -> String {
        format!("attn-{}.ckpt", self.as_str())
    }

    pub fn stage_name(&self) -> String {
        format!("attn-train-{}", self.as_str())
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn split_files(split: Split) -> (String, String) {
    (format!("{}.glb", split.as_str()), format!("{}.json", split.as_str()))
}

fn json_bytes(value: &impl Serialize) -> Result<Vec<u8>, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn load_split(stage: &mut Stage, split: Split) -> Result<(LabeledDataset, DesignGrid), CliError> {
    let (glb, json) = split_files(split);
    let (images, grid) = decode_glb1(&stage.verified_input(&glb, WORLD_GEN)?)?;
    let manifest: Manifest = serde_json::from_slice(&stage.verified_input(&json, WORLD_GEN)?)
        .map_err(|e| CliError::Io(format!("{json}: {e}")))?;
    Ok((manifest.to_dataset(images)?, grid))
}

fn load_bank(stage: &mut Stage) -> Result<(PcaBank, Vec<Image>), CliError> {
    let pca = decode_pca(&stage.verified_input("pca.bin", PCA_FIT)?)?;
    let (images, _) = decode_glb1(&stage.verified_input("bank.glb", WORLD_GEN)?)?;
    if pca.images != images.len() {
        return Err(CliError::Io("pca.bin does not describe bank.glb".into()));
    }
    Ok((pca, images))
}

/// Samples the world and its dataset splits.
pub fn world_gen(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mut stage = ctx.stage(WORLD_GEN)?;
    let world = build_world(&cfg.world)?;
    let grid = *world.grid();
    let images: Vec<Image> = world.entries().iter().map(|e| e.image.clone()).collect();
    stage.output("world.glb", &encode_glb1(&images, &grid)?)?;
    stage.output("world.json", &json_bytes(&Manifest::of_world(&world))?)?;

    let mut rng = SeededRng::new(mix_seed(ctx.seed, DATA_STREAM));
    for (split, n) in [
        (Split::Train, cfg.data.train),
        (Split::Val, cfg.data.val),
        (Split::Test, cfg.data.test),
        (Split::Bank, cfg.data.bank),
    ] {
        let data = sample_dataset(&world, n, split, &mut rng);
        let (glb, json) = split_files(split);
        stage.output(&glb, &encode_glb1(&data.images(), &grid)?)?;
        stage.output(&json, &json_bytes(&Manifest::of_dataset(&data))?)?;
    }
    stage.summary("entries", world.len());
    stage.finish()?;
    println!("world-gen: {} entries, {} classes", world.len(), world.classes());
    Ok(())
}

pub fn avp_train_cmd(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mut stage = ctx.stage(AVP_TRAIN)?;
    let (train_data, grid) = load_split(&mut stage, Split::Train)?;
    let (val, _) = load_split(&mut stage, Split::Val)?;
    let model = MaskedLinearAvp::zeros(train_data.classes, grid);
    let mut adam = AdamState::new(model.params().len(), cfg.avp.lr);
    let mut rng = SeededRng::new(mix_seed(ctx.seed, AVP_STREAM));
    let (model, report) = avp_train(model, &train_data, &val, &cfg.avp, &mut adam, &mut rng)?;
    stage.output("avp.ckpt", &encode_avp(&model)?)?;
    let best = report.val_xent.get(report.best_epoch.wrapping_sub(1)).copied();
    stage.summary("initial_val_xent", report.initial_val_xent);
    stage.summary("best_val_xent", best.unwrap_or(report.initial_val_xent));
    stage.summary("best_epoch", report.best_epoch);
    stage.finish()?;
    println!(
        "avp-train: val cross-entropy {:.4} -> {:.4} (epoch {})",
        report.initial_val_xent,
        best.unwrap_or(report.initial_val_xent),
        report.best_epoch
    );
    Ok(())
}

pub fn pca_fit_cmd(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config.pca;
    let mut stage = ctx.stage(PCA_FIT)?;
    let (images, _) = decode_glb1(&stage.verified_input("bank.glb", WORLD_GEN)?)?;
    let bank = pca_fit(&images, cfg.latent, cfg.flip, cfg.rank)?;
    stage.output("pca.bin", &encode_pca(&bank)?)?;
    stage.summary("latent", bank.latent);
    stage.summary("explained_variance", bank.variances.iter().sum::<f64>());
    stage.finish()?;
    println!("pca-fit: {} images, latent {}", bank.images, bank.latent);
    Ok(())
}

/// The supervision kind for an annotation run, checked against the config.
pub fn supervision_kind(cfg: &RunConfig, kind: AnnotateKind) -> Result<SupervisionKind, CliError> {
    Ok(match kind {
        AnnotateKind::Nogs => SupervisionKind::Nogs,
        AnnotateKind::H1 => SupervisionKind::Heuristic {
            inv_temperature: cfg.boed.h1,
        },
        AnnotateKind::H5 => SupervisionKind::Heuristic {
            inv_temperature: cfg.boed.h5,
        },
        AnnotateKind::Hgs => {
            let locs = cfg
                .boed
                .handcrafted_locations()
                .ok_or_else(|| CliError::Config("kind hgs needs boed.handcrafted".into()))?;
            if locs.len() != cfg.boed.steps {
                return Err(CliError::Config(format!(
                    "boed.handcrafted lists {} locations for {} steps",
                    locs.len(),
                    cfg.boed.steps
                )));
            }
            SupervisionKind::Handcrafted(locs)
        }
    })
}

pub fn annotate_cmd(ctx: &Context, kind: AnnotateKind) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let sup_kind = supervision_kind(cfg, kind)?;
    let mut stage = ctx.stage(&kind.stage_name())?;
    let (train_data, grid) = load_split(&mut stage, Split::Train)?;
    let avp = decode_avp(&stage.verified_input("avp.ckpt", AVP_TRAIN)?)?;
    let (pca, bank) = load_bank(&mut stage)?;
    let completer = RetrievalCompleter {
        bank: &pca,
        store: &bank,
        geometry: grid.geometry,
        params: cfg.boed.completion.clone(),
    };
    let acfg = AnnotationConfig {
        steps: cfg.boed.steps,
        samples: cfg.boed.samples,
        seed: mix_seed(ctx.seed, ANNOTATE_STREAM ^ kind.index()),
        keep_maps: false,
    };
    let records = make_supervision_set(&train_data, &sup_kind, cfg.boed.count, &avp, &completer, &acfg)?;
    stage.output(&kind.records_file(), encode_records(&records)?.as_bytes())?;
    stage.summary("records", records.len());
    stage.finish()?;
    println!("annotate: {} {} records", records.len(), kind.as_str());
    Ok(())
}

/// Initialises and trains an attention network. `seed` drives initialisation,
/// minibatch sampling and validation.
pub fn train_attention(
    cfg: &RunConfig,
    seed: u64,
    grid: DesignGrid,
    train_data: &LabeledDataset,
    val: &LabeledDataset,
    supervision: &[SupervisionRecord],
) -> Result<(AttentionNet, TrainReport), CliError> {
    let mut tcfg = cfg.attention.train.clone();
    tcfg.seed = seed;
    let mut rng = SeededRng::new(mix_seed(seed, ATTN_STREAM));
    let net = AttentionNet::init(grid, cfg.attention.dims(train_data.classes), &mut rng)?;
    let mut adam = AdamState::new(net.params().len(), tcfg.lr);
    Ok(train(net, train_data, val, supervision, &tcfg, &mut adam, &mut rng)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub method: String,
    pub iterations: usize,
    pub iterations_to_within_1pp: Option<usize>,
    pub best_val_accuracy: f64,
    pub final_val_accuracy: Option<f64>,
}

pub fn attn_train_cmd(ctx: &Context, method: Method, sup: Option<&Path>) -> Result<TrainSummary, CliError> {
    let cfg = &ctx.config;
    let mut stage = ctx.stage(&method.stage_name())?;
    let records = match (method.supervision(), sup) {
        (None, Some(path)) => {
            eprintln!("warning: method ram ignores the supervision file {}", path.display());
            Vec::new()
        }
        (None, None) => Vec::new(),
        (Some(_), Some(path)) => {
            let bytes = stage.input(&path.to_string_lossy())?;
            decode_records(&String::from_utf8_lossy(&bytes))?
        }
        (Some(kind), None) => {
            let bytes = stage.verified_input(&kind.records_file(), &kind.stage_name())?;
            decode_records(&String::from_utf8_lossy(&bytes))?
        }
    };
    let (train_data, grid) = load_split(&mut stage, Split::Train)?;
    let (val, _) = load_split(&mut stage, Split::Val)?;
    for r in &records {
        r.validate(&grid)?;
    }
    let (net, report) = train_attention(cfg, ctx.seed, grid, &train_data, &val, &records)?;
    stage.output(&method.checkpoint_file(), &encode_attention(&net)?)?;
    stage.output(&format!("metrics-{}.csv", method.as_str()), encode_metrics(&report.metrics).as_bytes())?;
    let summary = TrainSummary {
        method: method.as_str().into(),
        iterations: report.iterations,
        iterations_to_within_1pp: iterations_to_within(&report.val_accuracy, 0.01),
        best_val_accuracy: report.best_accuracy(),
        final_val_accuracy: report.final_accuracy(),
    };
    stage.summary("train", &summary);
    stage.finish()?;
    match summary.iterations_to_within_1pp {
        Some(n) => println!(
            "attn-train {method}: {n} iterations to within 1pp of best validation accuracy {:.4}",
            summary.best_val_accuracy
        ),
        None => println!("attn-train {method}: no validation runs"),
    }
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    pub method: String,
    pub accuracy: f64,
    pub xent: f64,
    pub loc_nll: f64,
    pub episodes: usize,
}

/// Tests a trained network after re-checking every hash along its provenance chain.
pub fn eval_cmd(ctx: &Context, method: Method) -> Result<EvalSummary, CliError> {
    let dir = &ctx.out;
    let upstream = load_provenance(dir, &method.stage_name())?;
    check_recorded_inputs(dir, &upstream)?;
    for name in upstream.inputs.keys() {
        if let Some(kind) = [AnnotateKind::Nogs, AnnotateKind::H1, AnnotateKind::H5, AnnotateKind::Hgs]
            .into_iter()
            .find(|k| *name == k.records_file())
        {
            check_recorded_inputs(dir, &load_provenance(dir, &kind.stage_name())?)?;
        }
    }
    let mut stage = ctx.stage(&format!("eval-{}", method.as_str()))?;
    let net = decode_attention(&stage.verified_input(&method.checkpoint_file(), &method.stage_name())?)?;
    let (test, _) = load_split(&mut stage, Split::Test)?;
    let steps = ctx.config.attention.train.steps;
    let mut rng = SeededRng::new(mix_seed(ctx.seed, TEST_STREAM));
    let report = evaluate(&net, &test, steps, ctx.config.attention.eval_episodes, &mut rng)?;
    let summary = EvalSummary {
        method: method.as_str().into(),
        accuracy: report.accuracy,
        xent: report.xent,
        loc_nll: report.loc_nll,
        episodes: report.episodes,
    };
    stage.output(&format!("eval-{}.json", method.as_str()), &json_bytes(&summary)?)?;
    let grid = net.grid();
    for (t, freq) in report.frequencies.iter().enumerate() {
        let map = EpeMap {
            nx: grid.nx,
            ny: grid.ny,
            values: freq.clone(),
            samples: report.episodes,
            history_len: t,
        };
        let base = format!("freq-{}-t{}", method.as_str(), t + 1);
        stage.output(&format!("{base}.csv"), heatmap_csv(&map).as_bytes())?;
        stage.output(&format!("{base}.pgm"), &heatmap_pgm(&map))?;
    }
    stage.summary("eval", &summary);
    stage.finish()?;
    println!("eval {method}: test accuracy {:.4} over {} episodes", summary.accuracy, summary.episodes);
    Ok(summary)
}

/// EPE maps along the greedy sequence for one test image.
pub fn heatmap_cmd(ctx: &Context, image: u64) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let mut stage = ctx.stage(&format!("heatmap-{image}"))?;
    let (test, grid) = load_split(&mut stage, Split::Test)?;
    let item = test
        .get(image)
        .ok_or_else(|| CliError::Config(format!("test split has no image {image}")))?;
    let avp = decode_avp(&stage.verified_input("avp.ckpt", AVP_TRAIN)?)?;
    let (pca, bank) = load_bank(&mut stage)?;
    let completer = RetrievalCompleter {
        bank: &pca,
        store: &bank,
        geometry: grid.geometry,
        params: cfg.boed.completion.clone(),
    };
    let mut rng = SeededRng::new(mix_seed(mix_seed(ctx.seed, HEATMAP_STREAM), image));
    let record = annotate_sequence(
        image,
        &item.image,
        cfg.boed.steps,
        &avp,
        &completer,
        cfg.boed.samples,
        true,
        &mut rng,
    )?;
    for (t, map) in record.maps.iter().flatten().enumerate() {
        let base = format!("heatmap-{image}-t{}", t + 1);
        stage.output(&format!("{base}.csv"), heatmap_csv(map).as_bytes())?;
        stage.output(&format!("{base}.pgm"), &heatmap_pgm(map))?;
    }
    let locs: Vec<[usize; 2]> = record.locs.iter().map(|l| [l.gx, l.gy]).collect();
    stage.summary("locs", &locs);
    stage.finish()?;
    println!("heatmap: image {image} glimpses {locs:?}");
    Ok(())
}
