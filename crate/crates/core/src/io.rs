//! On-disk formats: GLB1 image banks, JSON manifests, binary checkpoints, supervision
//! JSON lines and metrics CSV. Everything here works on byte buffers; callers decide how
//! the bytes reach the disk.

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::attention::{AttentionDims, AttentionNet, Block, MetricRow};
use crate::boed::SupervisionRecord;
use crate::completion::PcaBank;
use crate::error::{Error, Result};
use crate::posterior::{AvpModel, MaskedLinearAvp};
use crate::tensor::{DesignGrid, GlimpseGeometry, Image};
use crate::world::{FiniteWorld, LabeledDataset, LabeledImage, Split, WorldEntry};

const GLB1: &[u8; 4] = b"GLB1";

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

/// Image bank: magic `GLB1`, seven little-endian `u32` (N, H, W, g, s, nx, ny), then
/// `N * H * W` little-endian `f32` pixels.
pub fn encode_glb1(images: &[Image], grid: &DesignGrid) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(32 + images.len() * grid.height * grid.width * 4);
    out.extend_from_slice(GLB1);
    for v in [
        images.len(),
        grid.height,
        grid.width,
        grid.geometry.size,
        grid.geometry.stride,
        grid.nx,
        grid.ny,
    ] {
        let v = u32::try_from(v).map_err(|_| format_err("bank dimension exceeds u32"))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for im in images {
        if im.height() != grid.height || im.width() != grid.width {
            return Err(format_err("bank image size differs from the grid"));
        }
        for &p in im.pixels() {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_glb1(bytes: &[u8]) -> Result<(Vec<Image>, DesignGrid)> {
    if bytes.len() < 32 || &bytes[..4] != GLB1 {
        return Err(format_err("not a GLB1 bank"));
    }
    let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w, g, s, nx, ny) = (field(0), field(1), field(2), field(3), field(4), field(5), field(6));
    let grid = DesignGrid::new(h, w, GlimpseGeometry::new(g, s)?)?;
    if grid.nx != nx || grid.ny != ny {
        return Err(format_err("GLB1 grid dimensions are inconsistent"));
    }
    let p = h * w;
    let body = &bytes[32..];
    if body.len() != n * p * 4 {
        return Err(format_err(format!("GLB1 body holds {} bytes, expected {}", body.len(), n * p * 4)));
    }
    let images = body
        .chunks_exact(p * 4)
        .map(|chunk| {
            let pixels = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect();
            Image::new(h, w, pixels)
        })
        .collect::<Result<_>>()?;
    Ok((images, grid))
}

/// Pixels rounded to what a GLB1 bank stores.
pub fn quantize(image: &Image) -> Image {
    let pixels = image.pixels().iter().map(|&p| p as f32 as f64).collect();
    Image::new(image.height(), image.width(), pixels).expect("rounding keeps pixels in range")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub label: usize,
    pub prob: f64,
}

/// Labels and probabilities for the images of a bank, in bank order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub k: usize,
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
}

impl Manifest {
    pub fn of_world(world: &FiniteWorld) -> Self {
        Self {
            k: world.classes(),
            entries: world
                .entries()
                .iter()
                .map(|e| ManifestEntry { label: e.label, prob: e.prob })
                .collect(),
            split: Split::World,
        }
    }

    /// Dataset items are equally weighted.
    pub fn of_dataset(data: &LabeledDataset) -> Self {
        let p = 1.0 / data.len().max(1) as f64;
        Self {
            k: data.classes,
            entries: data.items.iter().map(|i| ManifestEntry { label: i.label, prob: p }).collect(),
            split: data.split,
        }
    }

    pub fn to_world(&self, images: Vec<Image>, geometry: GlimpseGeometry) -> Result<FiniteWorld> {
        self.check_len(images.len())?;
        let entries = images
            .into_iter()
            .zip(&self.entries)
            .map(|(image, e)| WorldEntry { label: e.label, image, prob: e.prob })
            .collect();
        FiniteWorld::from_entries(self.k, geometry, entries)
    }

    /// Items get ids equal to their bank position.
    pub fn to_dataset(&self, images: Vec<Image>) -> Result<LabeledDataset> {
        self.check_len(images.len())?;
        if let Some(e) = self.entries.iter().find(|e| e.label >= self.k) {
            return Err(format_err(format!("manifest label {} out of range", e.label)));
        }
        Ok(LabeledDataset {
            split: self.split,
            classes: self.k,
            items: images
                .into_iter()
                .zip(&self.entries)
                .enumerate()
                .map(|(id, (image, e))| LabeledImage { id: id as u64, image, label: e.label })
                .collect(),
        })
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.entries.len() {
            return Err(format_err(format!("manifest lists {} entries for {n} images", self.entries.len())));
        }
        Ok(())
    }
}

/// `u32` header length, JSON header, then little-endian `f64` data.
pub fn encode_checkpoint<H: Serialize>(header: &H, data: &[f64]) -> Result<Vec<u8>> {
    let head = serde_json::to_vec(header)?;
    let len = u32::try_from(head.len()).map_err(|_| format_err("checkpoint header too large"))?;
    let mut out = Vec::with_capacity(4 + head.len() + data.len() * 8);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&head);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_checkpoint<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, Vec<f64>)> {
    if bytes.len() < 4 {
        return Err(format_err("truncated checkpoint"));
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let rest = &bytes[4..];
    if rest.len() < len || (rest.len() - len) % 8 != 0 {
        return Err(format_err("checkpoint length does not match its header"));
    }
    let header = serde_json::from_slice(&rest[..len])?;
    let data = rest[len..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
    Ok((header, data))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridHeader {
    h: usize,
    w: usize,
    g: usize,
    s: usize,
}

impl GridHeader {
    fn of(grid: &DesignGrid) -> Self {
        Self {
            h: grid.height,
            w: grid.width,
            g: grid.geometry.size,
            s: grid.geometry.stride,
        }
    }

    fn grid(&self) -> Result<DesignGrid> {
        DesignGrid::new(self.h, self.w, GlimpseGeometry::new(self.g, self.s)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AvpHeader {
    k: usize,
    grid: GridHeader,
    epochs: usize,
}

pub fn encode_avp(model: &MaskedLinearAvp) -> Result<Vec<u8>> {
    let header = AvpHeader {
        k: model.classes(),
        grid: GridHeader::of(model.grid()),
        epochs: model.epochs_trained,
    };
    encode_checkpoint(&header, model.params())
}

pub fn decode_avp(bytes: &[u8]) -> Result<MaskedLinearAvp> {
    let (h, data): (AvpHeader, _) = decode_checkpoint(bytes)?;
    let mut m = MaskedLinearAvp::from_params(h.k, h.grid.grid()?, data)?;
    m.epochs_trained = h.epochs;
    Ok(m)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PcaHeader {
    n: usize,
    p: usize,
    l: usize,
    flip: bool,
    h: usize,
    w: usize,
}

/// Header plus blocks `mu`, `W`, `Z`, then the retained eigenvalues.
pub fn encode_pca(bank: &PcaBank) -> Result<Vec<u8>> {
    let header = PcaHeader {
        n: bank.images,
        p: bank.pixels(),
        l: bank.latent,
        flip: bank.flip,
        h: bank.height,
        w: bank.width,
    };
    let mut data = bank.mean.clone();
    data.extend_from_slice(&bank.components);
    data.extend_from_slice(&bank.codes);
    data.extend_from_slice(&bank.variances);
    encode_checkpoint(&header, &data)
}

pub fn decode_pca(bytes: &[u8]) -> Result<PcaBank> {
    let (h, data): (PcaHeader, Vec<f64>) = decode_checkpoint(bytes)?;
    let candidates = if h.flip { 2 * h.n } else { h.n };
    if h.p != h.h * h.w || data.len() != h.p + h.l * h.p + candidates * h.l + h.l {
        return Err(format_err("PCA file size does not match its header"));
    }
    let (mean, rest) = data.split_at(h.p);
    let (components, rest) = rest.split_at(h.l * h.p);
    let (codes, variances) = rest.split_at(candidates * h.l);
    Ok(PcaBank {
        height: h.h,
        width: h.w,
        latent: h.l,
        mean: mean.to_vec(),
        components: components.to_vec(),
        codes: codes.to_vec(),
        images: h.n,
        flip: h.flip,
        variances: variances.to_vec(),
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AttentionHeader {
    dims: AttentionDims,
    grid: GridHeader,
    blocks: Vec<(String, usize)>,
}

/// Parameter blocks in their fixed order, named in the header.
pub fn encode_attention(net: &AttentionNet) -> Result<Vec<u8>> {
    let header = AttentionHeader {
        dims: net.dims(),
        grid: GridHeader::of(net.grid()),
        blocks: Block::ALL.iter().map(|&b| (b.name().to_string(), net.block_len(b))).collect(),
    };
    encode_checkpoint(&header, net.params())
}

pub fn decode_attention(bytes: &[u8]) -> Result<AttentionNet> {
    let (h, data): (AttentionHeader, _) = decode_checkpoint(bytes)?;
    let net = AttentionNet::from_params(h.grid.grid()?, h.dims, data)?;
    let expected: Vec<(String, usize)> =
        Block::ALL.iter().map(|&b| (b.name().to_string(), net.block_len(b))).collect();
    if h.blocks != expected {
        return Err(format_err("attention checkpoint block layout differs"));
    }
    Ok(net)
}

pub fn encode_records(records: &[SupervisionRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_records(text: &str) -> Result<Vec<SupervisionRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn encode_metrics(rows: &[MetricRow]) -> String {
    let mut out = format!("{}\n", MetricRow::HEADER);
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}
