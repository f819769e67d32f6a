use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ledger::{DimensionLedger, Fusion};
use crate::error::{Error, Result};
use crate::io;
use crate::morphable::{EXPR_DIM, POSE_DIM, SHAPE_DIM};
use crate::tensor::{BnRunning, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinearIdx {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BnIdx {
    pub gamma: usize,
    pub beta: usize,
    pub running: usize,
}

/// Shared per-point layer: linear, batch norm, ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PointLayer {
    pub linear: LinearIdx,
    pub bn: BnIdx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Heads {
    pub pose: LinearIdx,
    pub shape: LinearIdx,
    pub expr: LinearIdx,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefinerLayout {
    pub low: Vec<PointLayer>,
    pub global: Vec<PointLayer>,
    pub image_adapter: Option<LinearIdx>,
    pub shape_adapter: Option<LinearIdx>,
    pub expr_adapter: Option<LinearIdx>,
    /// First decoder layer consumes the multi-modal point feature.
    pub decoder: Vec<PointLayer>,
    pub offsets: LinearIdx,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegressorLayout {
    pub encoder: Vec<PointLayer>,
    pub heads: Heads,
}

/// Where each parameter of each sub-network lives in the flat store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub encoder: [LinearIdx; 2],
    pub heads: Heads,
    pub refiner: RefinerLayout,
    pub regressor: RegressorLayout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

/// All learnable weights plus batch-norm running statistics.
///
/// Parameters are kept in one flat, ordered store; [`Layout`] maps the
/// architecture onto store indices. Order and names are a pure function of
/// the ledger.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub ledger: DimensionLedger,
    pub seed: u64,
    pub params: Vec<NamedTensor>,
    pub running: Vec<(String, BnRunning)>,
    pub layout: Layout,
}

/// Parameter-name prefixes of the four sub-networks.
pub const GROUPS: [&str; 4] = ["encoder", "heads", "refiner", "regressor"];

struct Builder<'a> {
    rng: Option<&'a mut ChaCha8Rng>,
    params: Vec<NamedTensor>,
    running: Vec<(String, BnRunning)>,
}

impl Builder<'_> {
    fn tensor(&mut self, name: String, value: Tensor) -> usize {
        self.params.push(NamedTensor { name, value });
        self.params.len() - 1
    }

    /// He-uniform weights `U(±sqrt(6/fan_in))`, zero bias.
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> LinearIdx {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data: Vec<f64> = match self.rng.as_deref_mut() {
            Some(rng) => (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect(),
            None => vec![0.0; fan_in * fan_out],
        };
        let weight = self.tensor(
            format!("{name}.weight"),
            Tensor::matrix(fan_in, fan_out, data).expect("sized"),
        );
        let bias = self.tensor(format!("{name}.bias"), Tensor::zeros(&[1, fan_out]));
        LinearIdx { weight, bias }
    }

    fn bn(&mut self, name: &str, d: usize) -> BnIdx {
        let gamma = self.tensor(format!("{name}.gamma"), Tensor::filled(&[1, d], 1.0));
        let beta = self.tensor(format!("{name}.beta"), Tensor::zeros(&[1, d]));
        self.running.push((format!("{name}.running"), BnRunning::new(d)));
        BnIdx {
            gamma,
            beta,
            running: self.running.len() - 1,
        }
    }

    fn point_layers(&mut self, name: &str, mut fan_in: usize, widths: &[usize]) -> Vec<PointLayer> {
        widths
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let layer = PointLayer {
                    linear: self.linear(&format!("{name}.{i}"), fan_in, w),
                    bn: self.bn(&format!("{name}.{i}.bn"), w),
                };
                fan_in = w;
                layer
            })
            .collect()
    }

    fn heads(&mut self, name: &str, fan_in: usize) -> Heads {
        Heads {
            pose: self.linear(&format!("{name}.pose"), fan_in, POSE_DIM),
            shape: self.linear(&format!("{name}.shape"), fan_in, SHAPE_DIM),
            expr: self.linear(&format!("{name}.expr"), fan_in, EXPR_DIM),
        }
    }
}

fn build(ledger: &DimensionLedger, rng: Option<&mut ChaCha8Rng>) -> (Vec<NamedTensor>, Vec<(String, BnRunning)>, Layout) {
    let mut b = Builder {
        rng,
        params: Vec::new(),
        running: Vec::new(),
    };
    let l = ledger;
    let encoder = [
        b.linear("encoder.0", l.observation_len(), l.encoder_hidden),
        b.linear("encoder.1", l.encoder_hidden, l.z_dim),
    ];
    let heads = b.heads("heads", l.z_dim);

    let low = b.point_layers("refiner.low", 3, &[l.point_low_dim, l.point_low_dim]);
    let mut global_widths = l.point_hidden.clone();
    global_widths.push(l.point_global_dim);
    let global = b.point_layers("refiner.global", l.point_low_dim, &global_widths);
    let with_image = matches!(l.fusion, Fusion::PointImage | Fusion::All);
    let with_params = l.fusion == Fusion::All;
    let image_adapter = with_image.then(|| b.linear("refiner.adapt_image", l.z_dim, l.z_dim));
    let shape_adapter = with_params.then(|| b.linear("refiner.adapt_shape", SHAPE_DIM, l.shape_adapt_dim));
    let expr_adapter = with_params.then(|| b.linear("refiner.adapt_expr", EXPR_DIM, l.expr_adapt_dim));
    let decoder = b.point_layers("refiner.decoder", l.mmpf_dim(), &l.decoder_hidden);
    let last = *l.decoder_hidden.last().expect("validated ledger");
    let offsets = b.linear("refiner.offsets", last, 3);

    let reg_encoder = b.point_layers("regressor.point", 3, &l.lgs_dims);
    let reg_heads = b.heads("regressor.heads", l.lgs_global_dim());

    let layout = Layout {
        encoder,
        heads,
        refiner: RefinerLayout {
            low,
            global,
            image_adapter,
            shape_adapter,
            expr_adapter,
            decoder,
            offsets,
        },
        regressor: RegressorLayout {
            encoder: reg_encoder,
            heads: reg_heads,
        },
    };
    (b.params, b.running, layout)
}

impl NetworkParams {
    /// He-uniform fan-in weights, zero biases, unit γ and zero β; a pure
    /// function of `(ledger, seed)`.
    pub fn init(ledger: DimensionLedger, seed: u64) -> Result<Self> {
        ledger.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, running, layout) = build(&ledger, Some(&mut rng));
        Ok(Self {
            ledger,
            seed,
            params,
            running,
            layout,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn get(&self, idx: usize) -> &Tensor {
        &self.params[idx].value
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.params[idx].value
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Indices of parameters whose name starts with `group`.
    pub fn group_indices(&self, group: &str) -> Vec<usize> {
        self.params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.name.starts_with(group))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
            && self
                .running
                .iter()
                .all(|(_, r)| r.mean.iter().chain(&r.var).all(|v| v.is_finite()))
    }

    /// Zeroes the final per-point layer of the refiner, turning refinement
    /// into the identity map.
    pub fn zero_refiner_output(&mut self) {
        let o = self.layout.refiner.offsets;
        self.params[o.weight].value.data_mut().fill(0.0);
        self.params[o.bias].value.data_mut().fill(0.0);
    }

    pub fn save(&self, manifest: &Path, extra: CheckpointExtra) -> Result<()> {
        let blob = io::blob_path(manifest);
        let mut data = Vec::with_capacity(self.num_parameters());
        let mut entries = Vec::new();
        for p in &self.params {
            entries.push(BlobEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                offset: data.len(),
            });
            data.extend_from_slice(p.value.data());
        }
        for (name, r) in &self.running {
            for (suffix, v) in [("mean", &r.mean), ("var", &r.var)] {
                entries.push(BlobEntry {
                    name: format!("{name}_{suffix}"),
                    shape: vec![1, v.len()],
                    offset: data.len(),
                });
                data.extend_from_slice(v);
            }
        }
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            ledger: self.ledger.clone(),
            fusion_dim: self.ledger.fusion_dim(),
            mmpf_dim: self.ledger.mmpf_dim(),
            seed: self.seed,
            n_vertices: extra.n_vertices,
            groups: GROUPS.iter().map(|s| s.to_string()).collect(),
            blob: io::file_name(&blob),
            blob_len: data.len(),
            tensors: entries,
        };
        io::write_json(manifest, &header)?;
        io::write_blob(&blob, &data)
    }

    /// Loads a checkpoint, checking every name, shape and the blob length
    /// against the layout implied by the stored ledger.
    pub fn load(manifest: &Path) -> Result<(Self, CheckpointExtra)> {
        let header: CheckpointHeader = io::read_json(manifest)?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::format(format!("unexpected checkpoint format '{}'", header.format)));
        }
        header.ledger.validate()?;
        if header.fusion_dim != header.ledger.fusion_dim() || header.mmpf_dim != header.ledger.mmpf_dim() {
            return Err(Error::format(format!(
                "ledger arithmetic mismatch: stored fusion/mmpf {}/{} but ledger implies {}/{}",
                header.fusion_dim,
                header.mmpf_dim,
                header.ledger.fusion_dim(),
                header.ledger.mmpf_dim()
            )));
        }
        let dir = manifest.parent().unwrap_or(Path::new("."));
        let data = io::read_blob(&dir.join(&header.blob))?;
        if data.len() != header.blob_len {
            return Err(Error::format(format!(
                "shape mismatch: blob holds {} values, manifest declares {}",
                data.len(),
                header.blob_len
            )));
        }
        let (mut params, mut running, layout) = build(&header.ledger, None);
        let expected = params.len() + 2 * running.len();
        if header.tensors.len() != expected {
            return Err(Error::format(format!(
                "checkpoint lists {} tensors, ledger implies {expected}",
                header.tensors.len()
            )));
        }
        let mut entries = header.tensors.iter();
        let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let e = entries.next().expect("count checked");
            if e.name != name || e.shape != shape {
                return Err(Error::format(format!(
                    "shape mismatch: entry '{}' {:?}, expected '{name}' {shape:?}",
                    e.name, e.shape
                )));
            }
            let len: usize = shape.iter().product();
            data.get(e.offset..e.offset + len)
                .map(|s| s.to_vec())
                .ok_or_else(|| Error::format(format!("shape mismatch: '{name}' runs past the end of the blob")))
        };
        for p in &mut params {
            let shape = p.value.shape().to_vec();
            p.value = Tensor::new(shape.clone(), take(&p.name, &shape)?)?;
        }
        for (name, r) in &mut running {
            let d = r.mean.len();
            r.mean = take(&format!("{name}_mean"), &[1, d])?;
            r.var = take(&format!("{name}_var"), &[1, d])?;
        }
        let net = Self {
            ledger: header.ledger,
            seed: header.seed,
            params,
            running,
            layout,
        };
        if !net.all_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok((
            net,
            CheckpointExtra {
                n_vertices: header.n_vertices,
            },
        ))
    }
}

/// Checkpoint metadata that is not part of the network itself.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointExtra {
    /// Vertex count of the basis the network was trained against.
    pub n_vertices: Option<usize>,
}

const CHECKPOINT_FORMAT: &str = "facegeom-checkpoint-v1";

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    ledger: DimensionLedger,
    fusion_dim: usize,
    mmpf_dim: usize,
    seed: u64,
    n_vertices: Option<usize>,
    groups: Vec<String>,
    blob: String,
    blob_len: usize,
    tensors: Vec<BlobEntry>,
}
