//! Model configuration, named parameter tensors, initialization and the
//! binary parameter container.

use std::collections::BTreeMap;

use trajmap_core::raster::BevSpec;
use trajmap_core::rng::CounterRng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CONTAINER_MAGIC: &[u8; 4] = b"MATM";
pub const CONTAINER_VERSION: u32 = 1;

/// Where actor information enters the map branch. `None` drops the actor
/// branch entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FusionMode {
    None,
    Pre,
    PreProjection,
    In,
}

/// How map queries attend to actor embeddings under in-fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    /// Multi-head set cross-attention over the actor embeddings.
    Layerwise,
    /// Actor embeddings splatted at their reference points onto the
    /// trajectory feature grid, then grid deformable attention.
    Deformable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrajectoryModeling {
    BackboneOnly,
    BackboneEncoder,
    BackboneActorQuery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub attention: AttentionKind,
    pub modeling: TrajectoryModeling,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            mode: FusionMode::In,
            attention: AttentionKind::Deformable,
            modeling: TrajectoryModeling::BackboneActorQuery,
        }
    }
}

macro_rules! str_enum {
    ($t:ty { $($v:ident = $s:literal),* $(,)? }) => {
        impl $t {
            pub const ALL: &'static [$t] = &[$(<$t>::$v),*];

            pub fn as_str(self) -> &'static str {
                match self { $(<$t>::$v => $s),* }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s { $($s => Some(<$t>::$v),)* _ => None }
            }

            fn code(self) -> f64 {
                Self::ALL.iter().position(|&v| v == self).unwrap() as f64
            }

            fn from_code(c: f64) -> Option<Self> {
                Self::ALL.get(c as usize).copied().filter(|_| c >= 0.0 && c.fract() == 0.0)
            }
        }
    };
}

str_enum!(FusionMode { None = "none", Pre = "pre", PreProjection = "pre_proj", In = "in" });
str_enum!(AttentionKind { Layerwise = "layerwise", Deformable = "deformable" });
str_enum!(TrajectoryModeling {
    BackboneOnly = "backbone",
    BackboneEncoder = "encoder",
    BackboneActorQuery = "actor_query",
});

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub heads: usize,
    pub samples: usize,
    pub actor_queries: usize,
    pub map_instances: usize,
    pub n_p: usize,
    pub n_classes: usize,
    pub visual_channels: usize,
    /// Extent and cell size of the trajectory image.
    pub bev: BevSpec,
    pub fusion: FusionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 32,
            heads: 2,
            samples: 4,
            actor_queries: 12,
            map_instances: 10,
            n_p: 20,
            n_classes: 3,
            visual_channels: 3,
            bev: BevSpec::default(),
            fusion: FusionConfig::default(),
        }
    }
}

fn conv_out(n: usize) -> usize {
    // 3x3 kernel, stride 2, padding 1
    (n + 2 - 3) / 2 + 1
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.channels == 0 || self.heads == 0 || !self.channels.is_multiple_of(self.heads) {
            return bad("channels must be a positive multiple of heads");
        }
        if self.samples == 0 || self.n_p < 2 || self.n_classes == 0 {
            return bad("samples, n_p and n_classes must be positive (n_p >= 2)");
        }
        if self.actor_queries == 0 || self.map_instances == 0 || self.visual_channels == 0 {
            return bad("query and channel counts must be positive");
        }
        self.bev.validate()?;
        Ok(())
    }

    pub fn has_actor_branch(&self) -> bool {
        self.fusion.mode != FusionMode::None
    }

    /// Height and width of the trajectory feature grid after the backbone.
    pub fn actor_grid(&self) -> (usize, usize) {
        (conv_out(conv_out(self.bev.height())), conv_out(conv_out(self.bev.width())))
    }

    /// Channels of the grid the map decoder samples.
    pub fn map_grid_channels(&self) -> usize {
        match self.fusion.mode {
            FusionMode::Pre => self.visual_channels + self.channels,
            _ => self.visual_channels,
        }
    }
}

/// Named parameter tensors. Names ending in `reference_points` and names
/// under `meta/` are frozen; everything else is trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

pub fn is_frozen(name: &str) -> bool {
    name.ends_with("reference_points")
}

struct Init<'a> {
    rng: CounterRng,
    out: &'a mut BTreeMap<String, Tensor>,
}

impl Init<'_> {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) {
        let b = 1.0 / (fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.uniform(-b, b)).collect();
        self.out.insert(name, Tensor::new(rows, cols, data));
    }

    fn zeros(&mut self, name: String, rows: usize, cols: usize) {
        self.out.insert(name, Tensor::zeros(rows, cols));
    }

    fn linear(&mut self, p: &str, fan_in: usize, fan_out: usize, bias: bool) {
        self.uniform(format!("{p}.weight"), fan_in, fan_out, fan_in);
        if bias {
            self.uniform(format!("{p}.bias"), 1, fan_out, fan_in);
        }
    }

    fn deform(&mut self, p: &str, c: usize, c_in: usize, heads: usize, samples: usize) {
        self.zeros(format!("{p}.offset.weight"), c, heads * samples * 2);
        self.zeros(format!("{p}.offset.bias"), 1, heads * samples * 2);
        self.zeros(format!("{p}.attn.weight"), c, heads * samples);
        self.zeros(format!("{p}.attn.bias"), 1, heads * samples);
        self.linear(&format!("{p}.value"), c_in, c, true);
        self.linear(&format!("{p}.output"), c, c, false);
    }

    fn cross(&mut self, p: &str, c: usize, c_kv: usize) {
        self.linear(&format!("{p}.query"), c, c, false);
        self.linear(&format!("{p}.key"), c_kv, c, false);
        self.linear(&format!("{p}.value"), c_kv, c, true);
        self.linear(&format!("{p}.output"), c, c, false);
    }

    fn ffn(&mut self, p: &str, c: usize, n_classes: usize, n_p: usize) {
        self.linear(&format!("{p}.hidden"), c, c, true);
        self.linear(&format!("{p}.class"), c, n_classes + 1, true);
        self.linear(&format!("{p}.point"), c, 2 * n_p, true);
    }
}

impl ModelParams {
    /// Seeded initialization: weights and biases uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`; sampling-offset and
    /// attention-logit heads zero; map reference points on a uniform grid;
    /// actor reference points uniform at random.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let (h, k) = (config.heads, config.samples);
        let mut tensors = BTreeMap::new();
        let mut init = Init {
            rng: CounterRng::new(seed, 0x5eed_0001),
            out: &mut tensors,
        };

        init.uniform("map.instance".into(), config.map_instances, c, c);
        init.uniform("map.point".into(), config.n_p, c, c);
        let (n, np) = (config.map_instances, config.n_p);
        let refs = (0..n)
            .flat_map(|i| (0..np).flat_map(move |j| [(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / np as f64]))
            .collect();
        init.out.insert("map.reference_points".into(), Tensor::new(n * np, 2, refs));
        init.deform("map.attn", c, config.map_grid_channels(), h, k);
        init.ffn("map.ffn", c, config.n_classes, config.n_p);

        if config.has_actor_branch() {
            init.linear("actor.conv1", 9, c, true);
            init.linear("actor.conv2", 9 * c, c, true);
            let na = config.actor_queries;
            init.uniform("actor.query".into(), na, c, c);
            let refs = (0..2 * na).map(|_| init.rng.next_f64()).collect();
            init.out.insert("actor.reference_points".into(), Tensor::new(na, 2, refs));
            match config.fusion.modeling {
                TrajectoryModeling::BackboneOnly => {}
                TrajectoryModeling::BackboneEncoder => {
                    let (ha, wa) = config.actor_grid();
                    init.uniform("actor.encoder.position".into(), ha * wa, c, c);
                    init.cross("actor.encoder", c, c);
                }
                TrajectoryModeling::BackboneActorQuery => init.deform("actor.attn", c, c, h, k),
            }
            init.ffn("actor.ffn", c, 1, config.n_p);
            match config.fusion.mode {
                FusionMode::PreProjection => {
                    let cv = config.visual_channels;
                    let mut w = Tensor::zeros(cv + c, cv);
                    for i in 0..cv {
                        w.set(i, i, 1.0);
                    }
                    let b = 1.0 / ((cv + c) as f64).sqrt();
                    for r in cv..cv + c {
                        for j in 0..cv {
                            w.set(r, j, init.rng.uniform(-b, b));
                        }
                    }
                    init.out.insert("prefusion.projection.weight".into(), w);
                    init.zeros("prefusion.projection.bias".into(), 1, cv);
                }
                FusionMode::In => match config.fusion.attention {
                    AttentionKind::Layerwise => init.cross("fusion", c, c),
                    AttentionKind::Deformable => init.deform("fusion", c, c, h, k),
                },
                FusionMode::Pre | FusionMode::None => {}
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str).filter(|n| !is_frozen(n))
    }

    pub fn num_trainable(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(n, _)| !is_frozen(n))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = Self::init(self.config, 0)?;
        for (name, t) in &expected.tensors {
            let got = self.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Shape(format!(
                    "{name}: expected {:?}, got {:?}",
                    t.shape(),
                    got.shape()
                )));
            }
            if !got.is_finite() {
                return Err(Error::NonFiniteParam(name.clone()));
            }
        }
        if let Some(extra) = self.tensors.keys().find(|n| !expected.tensors.contains_key(*n)) {
            return Err(Error::Container(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    fn meta_records(&self) -> Vec<(String, Tensor)> {
        let c = &self.config;
        let b = &c.bev;
        let scalar = |n: &str, v: f64| (format!("meta/{n}"), Tensor::scalar(v));
        vec![
            scalar("channels", c.channels as f64),
            scalar("heads", c.heads as f64),
            scalar("samples", c.samples as f64),
            scalar("actor_queries", c.actor_queries as f64),
            scalar("map_instances", c.map_instances as f64),
            scalar("n_p", c.n_p as f64),
            scalar("n_classes", c.n_classes as f64),
            scalar("visual_channels", c.visual_channels as f64),
            scalar("fusion_mode", c.fusion.mode.code()),
            scalar("attention", c.fusion.attention.code()),
            scalar("modeling", c.fusion.modeling.code()),
            (
                "meta/bev".into(),
                Tensor::new(1, 5, vec![b.x_range[0], b.x_range[1], b.y_range[0], b.y_range[1], b.resolution]),
            ),
        ]
    }

    /// Serializes to the container: magic, `u32` version, `u32` record
    /// count, then per record `u32` name length, name bytes, `u32` rank,
    /// `u64` dims, and row-major `f64` little-endian values. Records are in
    /// name order; configuration travels as `meta/` records.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut records = self.meta_records();
        records.extend(self.tensors.iter().map(|(n, t)| (n.clone(), t.clone())));
        records.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out = Vec::new();
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        for (name, t) in &records {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(t.rows as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols as u64).to_le_bytes());
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CONTAINER_MAGIC {
            return Err(Error::Container("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CONTAINER_VERSION {
            return Err(Error::Container(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut all = BTreeMap::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Container("record name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let (rows, cols) = match dims[..] {
                [] => (1, 1),
                [n] => (1, n),
                [a, b] => (a, b),
                _ => return Err(Error::Container(format!("{name}: rank {rank} unsupported"))),
            };
            let n = rows
                .checked_mul(cols)
                .filter(|&n| n <= r.remaining() / 8)
                .ok_or_else(|| Error::Container(format!("{name}: truncated values")))?;
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            if all.insert(name.clone(), Tensor::new(rows, cols, data)).is_some() {
                return Err(Error::Container(format!("duplicate record {name}")));
            }
        }
        if r.remaining() != 0 {
            return Err(Error::Container("trailing bytes".into()));
        }
        let config = config_from_meta(&all)?;
        all.retain(|n, _| !n.starts_with("meta/"));
        let p = Self { config, tensors: all };
        p.validate()?;
        Ok(p)
    }
}

fn config_from_meta(all: &BTreeMap<String, Tensor>) -> Result<ModelConfig> {
    let get = |n: &str| -> Result<&Tensor> {
        all.get(&format!("meta/{n}"))
            .ok_or_else(|| Error::Container(format!("missing meta/{n}")))
    };
    let count = |n: &str| -> Result<usize> {
        let v = get(n)?.data[0];
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Container(format!("meta/{n} is not a count")))
        }
    };
    let code = |n: &str| -> Result<f64> { Ok(get(n)?.data[0]) };
    let bad = |n: &str| Error::Container(format!("meta/{n} out of range"));
    let b = get("bev")?;
    if b.len() != 5 {
        return Err(bad("bev"));
    }
    let config = ModelConfig {
        channels: count("channels")?,
        heads: count("heads")?,
        samples: count("samples")?,
        actor_queries: count("actor_queries")?,
        map_instances: count("map_instances")?,
        n_p: count("n_p")?,
        n_classes: count("n_classes")?,
        visual_channels: count("visual_channels")?,
        bev: BevSpec {
            x_range: [b.data[0], b.data[1]],
            y_range: [b.data[2], b.data[3]],
            resolution: b.data[4],
        },
        fusion: FusionConfig {
            mode: FusionMode::from_code(code("fusion_mode")?).ok_or_else(|| bad("fusion_mode"))?,
            attention: AttentionKind::from_code(code("attention")?).ok_or_else(|| bad("attention"))?,
            modeling: TrajectoryModeling::from_code(code("modeling")?).ok_or_else(|| bad("modeling"))?,
        },
    };
    config.validate()?;
    Ok(config)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(Error::Container("unexpected end of data".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            channels: 8,
            bev: BevSpec::new([-4.0, 4.0], [-6.0, 6.0], 1.0).unwrap(),
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_every_config() {
        for &mode in FusionMode::ALL {
            for &attention in AttentionKind::ALL {
                for &modeling in TrajectoryModeling::ALL {
                    let cfg = ModelConfig {
                        fusion: FusionConfig { mode, attention, modeling },
                        ..small()
                    };
                    let p = ModelParams::init(cfg, 3).unwrap();
                    let bytes = p.to_bytes();
                    let q = ModelParams::from_bytes(&bytes).unwrap();
                    assert_eq!(p, q);
                    assert_eq!(bytes, q.to_bytes());
                }
            }
        }
    }

    #[test]
    fn header_layout() {
        let b = ModelParams::init(small(), 0).unwrap().to_bytes();
        assert_eq!(&b[..4], b"MATM");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
    }

    #[test]
    fn rejects_corruption() {
        let b = ModelParams::init(small(), 0).unwrap().to_bytes();
        assert!(ModelParams::from_bytes(&b[..b.len() - 3]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(ModelParams::from_bytes(&bad).is_err());
        let mut extra = b;
        extra.push(0);
        assert!(ModelParams::from_bytes(&extra).is_err());
    }

    #[test]
    fn init_rules() {
        let p = ModelParams::init(small(), 11).unwrap();
        assert!(p.get("map.attn.offset.weight").unwrap().data.iter().all(|&v| v == 0.0));
        assert!(p.get("actor.attn.attn.bias").unwrap().data.iter().all(|&v| v == 0.0));
        let w = p.get("map.ffn.hidden.weight").unwrap();
        let b = 1.0 / 8f64.sqrt();
        assert!(w.data.iter().all(|v| v.abs() <= b));
        let r = p.get("map.reference_points").unwrap();
        assert_eq!(r.row(0), &[0.05, 0.025]);
        let a = p.get("actor.reference_points").unwrap();
        assert!(a.data.iter().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(p, ModelParams::init(small(), 11).unwrap());
        assert_ne!(p, ModelParams::init(small(), 12).unwrap());
    }
}
