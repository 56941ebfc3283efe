//! All learnable parameters, their seeded initialization, and the binary
//! checkpoint format.

use super::tape::{Grads, NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SNRF";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Architecture knobs. Feature dim and embedding bands are map-wide
/// contracts; hidden width is configurable for small experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub feature_dim: usize,
    pub hidden: usize,
    pub emb_bands: usize,
    pub emb_include_input: bool,
    /// Per-scale channel counts of the extractor pyramid; they sum to the
    /// pre-projection feature width.
    pub ext_channels: [usize; 3],
    pub refiner_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            feature_dim: 32,
            hidden: 256,
            emb_bands: 5,
            emb_include_input: true,
            ext_channels: [32, 27, 24],
            refiner_channels: 8,
        }
    }
}

impl NetConfig {
    /// Encoded length of one scalar under the positional embedding.
    pub fn emb_scalar_len(&self) -> usize {
        2 * self.emb_bands + usize::from(self.emb_include_input)
    }

    /// Pre-projection extractor output channels.
    pub fn ext_total_channels(&self) -> usize {
        self.ext_channels.iter().sum()
    }

    /// Input width of the view-dependent feature network: surfel feature
    /// plus embeddings of d, w, n and d - n.
    pub fn ff_input(&self) -> usize {
        self.feature_dim + 10 * self.emb_scalar_len()
    }

    /// Input width of the density / radiance heads: shading feature plus an
    /// embedded 3-vector.
    pub fn head_input(&self) -> usize {
        self.hidden + 3 * self.emb_scalar_len()
    }
}

/// Named parameter tensors plus Adam moment buffers.
#[derive(Debug, Clone)]
pub struct NetworkBundle {
    pub config: NetConfig,
    pub params: BTreeMap<String, Tensor>,
    pub adam_m: BTreeMap<String, Tensor>,
    pub adam_v: BTreeMap<String, Tensor>,
    pub adam_step: u64,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::from_vec(shape, data)
}

impl NetworkBundle {
    /// Seeded initialization; the same seed yields a bit-identical bundle.
    pub fn init(config: NetConfig, seed: u64) -> NetworkBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        let f = config.feature_dim;
        let h = config.hidden;

        let dense = |params: &mut BTreeMap<String, Tensor>,
                         rng: &mut ChaCha8Rng,
                         name: &str,
                         rows: usize,
                         cols: usize| {
            params.insert(format!("{name}.w"), glorot(rng, &[rows, cols], rows, cols));
            params.insert(format!("{name}.b"), Tensor::zeros(&[cols]));
        };
        let conv = |params: &mut BTreeMap<String, Tensor>,
                        rng: &mut ChaCha8Rng,
                        name: &str,
                        cin: usize,
                        cout: usize| {
            params.insert(
                format!("{name}.w"),
                glorot(rng, &[cout, cin, 3, 3], cin * 9, cout * 9),
            );
            params.insert(format!("{name}.b"), Tensor::zeros(&[cout]));
        };

        // Feature extractor pyramid and the projection to surfel features.
        conv(&mut params, &mut rng, "extractor.conv0", 3, config.ext_channels[0]);
        conv(&mut params, &mut rng, "extractor.conv1", 3, config.ext_channels[1]);
        conv(&mut params, &mut rng, "extractor.conv2", 3, config.ext_channels[2]);
        dense(&mut params, &mut rng, "projector", config.ext_total_channels(), f);

        // GRU gates over concatenated [input, hidden].
        dense(&mut params, &mut rng, "gru.mz", 2 * f, f);
        dense(&mut params, &mut rng, "gru.mr", 2 * f, f);
        dense(&mut params, &mut rng, "gru.mt", 2 * f, f);

        // Shading networks.
        dense(&mut params, &mut rng, "ff.l0", config.ff_input(), h);
        dense(&mut params, &mut rng, "ff.l1", h, h);
        dense(&mut params, &mut rng, "fsigma", config.head_input(), 1);
        dense(&mut params, &mut rng, "fr.l0", config.head_input(), h);
        dense(&mut params, &mut rng, "fr.l1", h, h);
        dense(&mut params, &mut rng, "fr.l2", h, h);
        dense(&mut params, &mut rng, "fr.l3", h, 3);

        // Learned depth refiner.
        let rc = config.refiner_channels;
        conv(&mut params, &mut rng, "refiner.conv0", 2, rc);
        conv(&mut params, &mut rng, "refiner.conv1", rc, rc);
        conv(&mut params, &mut rng, "refiner.conv2", rc, 1);

        NetworkBundle {
            config,
            params,
            adam_m: BTreeMap::new(),
            adam_v: BTreeMap::new(),
            adam_step: 0,
        }
    }

    pub fn param(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// Parameter name groups by module, used to freeze subsets.
    pub fn names_with_prefix(&self, prefixes: &[&str]) -> Vec<String> {
        self.params
            .keys()
            .filter(|k| prefixes.iter().any(|p| k.starts_with(p)))
            .cloned()
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors: Vec<(String, &Tensor)> = Vec::new();
        for (k, v) in &self.params {
            tensors.push((k.clone(), v));
        }
        for (k, v) in &self.adam_m {
            tensors.push((format!("adam.m.{k}"), v));
        }
        for (k, v) in &self.adam_v {
            tensors.push((format!("adam.v.{k}"), v));
        }
        let step = Tensor::scalar(self.adam_step as f64);
        tensors.push(("adam.step".into(), &step));

        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.push(t.shape.len() as u8);
            for &d in &t.shape {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        std::fs::write(path, &buf).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<NetworkBundle> {
        let mut file =
            std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut buf = Vec::new();
        file.read_to_end(&mut buf)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut at = 0usize;
        let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
            if *at + n > buf.len() {
                return Err(Error::Format(format!(
                    "truncated checkpoint {}",
                    path.display()
                )));
            }
            let s = &buf[*at..*at + n];
            *at += n;
            Ok(s)
        };
        if take(&mut at, 4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad magic in {}", path.display())));
        }
        let version = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
        let mut params = BTreeMap::new();
        let mut adam_m = BTreeMap::new();
        let mut adam_v = BTreeMap::new();
        let mut adam_step = 0u64;
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut at, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut at, name_len)?.to_vec())
                .map_err(|_| Error::Format("invalid tensor name".into()))?;
            let rank = take(&mut at, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = take(&mut at, n * 4)?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let t = Tensor::from_vec(&shape, data);
            if name == "adam.step" {
                adam_step = t.scalar_value() as u64;
            } else if let Some(rest) = name.strip_prefix("adam.m.") {
                adam_m.insert(rest.to_string(), t);
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                adam_v.insert(rest.to_string(), t);
            } else {
                params.insert(name, t);
            }
        }
        let config = infer_config(&params)?;
        Ok(NetworkBundle {
            config,
            params,
            adam_m,
            adam_v,
            adam_step,
        })
    }
}

fn infer_config(params: &BTreeMap<String, Tensor>) -> Result<NetConfig> {
    let get = |name: &str| -> Result<&Tensor> {
        params
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint missing tensor {name}")))
    };
    let feature_dim = get("projector.w")?.shape[1];
    let hidden = get("ff.l0.w")?.shape[1];
    let ff_in = get("ff.l0.w")?.shape[0];
    let scalar_len = (ff_in - feature_dim) / 10;
    let ext_channels = [
        get("extractor.conv0.w")?.shape[0],
        get("extractor.conv1.w")?.shape[0],
        get("extractor.conv2.w")?.shape[0],
    ];
    let refiner_channels = get("refiner.conv0.w")?.shape[0];
    Ok(NetConfig {
        feature_dim,
        hidden,
        emb_bands: (scalar_len - 1) / 2,
        emb_include_input: scalar_len % 2 == 1,
        ext_channels,
        refiner_channels,
    })
}

/// Bundle parameters mirrored onto a tape as leaves, so their gradients can
/// be collected by name after a backward pass.
pub struct ParamNodes {
    map: BTreeMap<String, NodeId>,
}

impl ParamNodes {
    pub fn insert_all(tape: &mut Tape, bundle: &NetworkBundle) -> ParamNodes {
        let mut map = BTreeMap::new();
        for (name, t) in &bundle.params {
            map.insert(name.clone(), tape.leaf(t.clone()));
        }
        ParamNodes { map }
    }

    pub fn node(&self, name: &str) -> NodeId {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not on tape"))
    }

    pub fn collect_grads(&self, tape: &Tape, grads: &Grads) -> BTreeMap<String, Tensor> {
        self.map
            .iter()
            .map(|(name, &id)| (name.clone(), grads.grad(tape, id)))
            .collect()
    }
}

/// x * W + b on a tape.
pub fn dense(tape: &mut Tape, params: &ParamNodes, name: &str, x: NodeId) -> NodeId {
    let w = params.node(&format!("{name}.w"));
    let b = params.node(&format!("{name}.b"));
    let y = tape.matmul(x, w);
    tape.add_bias(y, b)
}
