//! `key = value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cycletree::data::TransformSpec;
use cycletree::ecm::{SelectionGrid, SelectionSubsampler};
use cycletree::ensemble::{default_min_leaf_grid, Variant};
use cycletree::evaluate::{MinLeaf, Mode};
use cycletree::model::{ModelShape, PenaltyConfig};
use cycletree::resample::Scheme;
use cycletree::{Error, Result};

const KEYS: &[&str] = &[
    "data",
    "vintages",
    "params",
    "ensemble",
    "out",
    "seed",
    "p",
    "extended",
    "series",
    "lambda",
    "alpha",
    "beta",
    "max_iter",
    "grid_p",
    "grid_lambda",
    "grid_alpha",
    "grid_beta",
    "select_j",
    "select_d",
    "targets",
    "target_transform",
    "schemes",
    "members",
    "min_leaf",
    "min_leaf_grid",
    "variant",
    "mode",
    "refit_every",
    "sim_len",
    "sim_vintages",
    "sim_targets",
    "vol_base",
    "vol_slope",
];

/// Resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub vintages: Option<PathBuf>,
    pub params: Option<PathBuf>,
    pub ensemble: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub p: usize,
    pub extended: bool,
    pub series: Vec<String>,
    pub gamma: PenaltyConfig,
    pub max_iter: usize,
    pub grid_p: Option<Vec<usize>>,
    pub grid_lambda: Option<Vec<f64>>,
    pub grid_alpha: Option<Vec<f64>>,
    pub grid_beta: Option<Vec<f64>>,
    pub select_j: usize,
    pub select_d: f64,
    pub targets: Vec<String>,
    pub target_transform: TransformSpec,
    pub schemes: Vec<Scheme>,
    pub members: usize,
    pub min_leaf: MinLeaf,
    pub variant: Variant,
    pub mode: Mode,
    pub refit_every: usize,
    pub sim_len: usize,
    pub sim_vintages: usize,
    pub sim_targets: usize,
    pub vol_base: f64,
    pub vol_slope: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            vintages: None,
            params: None,
            ensemble: None,
            out: PathBuf::from("out"),
            seed: 1,
            p: 12,
            extended: false,
            series: Vec::new(),
            gamma: PenaltyConfig { lambda: 0.1, alpha: 0.5, beta: 1.2 },
            max_iter: 1000,
            grid_p: None,
            grid_lambda: None,
            grid_alpha: None,
            grid_beta: None,
            select_j: 10,
            select_d: 0.2,
            targets: Vec::new(),
            target_transform: TransformSpec::MoMSquaredReturn,
            schemes: vec![Scheme::PairBootstrap, Scheme::ArtificialJackknife { d_fraction: 0.2 }],
            members: 100,
            min_leaf: MinLeaf::Select(default_min_leaf_grid()),
            variant: Variant::Augmented,
            mode: Mode::Fast,
            refit_every: 12,
            sim_len: 300,
            sim_vintages: 60,
            sim_targets: 1,
            vol_base: 0.01,
            vol_slope: 0.4,
        }
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{s}`"))))
        .collect()
}

fn one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn scheme_text(s: &Scheme) -> String {
    match s {
        Scheme::PairBootstrap => "pair".into(),
        Scheme::BlockBootstrap { block_length } => format!("block:{block_length}"),
        Scheme::StationaryBootstrap { expected_block_length } => format!("stationary:{expected_block_length}"),
        Scheme::ArtificialJackknife { d_fraction } => format!("jackknife:{d_fraction}"),
    }
}

impl RunConfig {
    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("line {}: unknown key `{k}`", lineno + 1)));
            }
            if seen.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
            }
        }
        let mut c = Self::default();
        for (k, v) in &seen {
            c.set(k, v)?;
        }
        c.gamma.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn set(&mut self, k: &str, v: &str) -> Result<()> {
        match k {
            "data" => self.data = Some(v.into()),
            "vintages" => self.vintages = Some(v.into()),
            "params" => self.params = Some(v.into()),
            "ensemble" => self.ensemble = Some(v.into()),
            "out" => self.out = v.into(),
            "seed" => self.seed = one(k, v)?,
            "p" => self.p = one(k, v)?,
            "extended" => self.extended = one(k, v)?,
            "series" => self.series = list(k, v)?,
            "lambda" => self.gamma.lambda = one(k, v)?,
            "alpha" => self.gamma.alpha = one(k, v)?,
            "beta" => self.gamma.beta = one(k, v)?,
            "max_iter" => self.max_iter = one(k, v)?,
            "grid_p" => self.grid_p = Some(list(k, v)?),
            "grid_lambda" => self.grid_lambda = Some(list(k, v)?),
            "grid_alpha" => self.grid_alpha = Some(list(k, v)?),
            "grid_beta" => self.grid_beta = Some(list(k, v)?),
            "select_j" => self.select_j = one(k, v)?,
            "select_d" => self.select_d = one(k, v)?,
            "targets" => self.targets = list(k, v)?,
            "target_transform" => self.target_transform = v.parse()?,
            "schemes" => self.schemes = v.split(',').map(|s| Scheme::parse(s.trim())).collect::<Result<_>>()?,
            "members" => self.members = one(k, v)?,
            "min_leaf" => {
                self.min_leaf = match v {
                    "auto" => MinLeaf::Select(default_min_leaf_grid()),
                    _ => MinLeaf::Fixed(one(k, v)?),
                }
            }
            "min_leaf_grid" => self.min_leaf = MinLeaf::Select(list(k, v)?),
            "variant" => {
                self.variant = match v {
                    "autoregressive" | "ar" => Variant::Autoregressive,
                    "augmented" | "aug" => Variant::Augmented,
                    _ => return Err(Error::Config(format!("unknown variant `{v}`"))),
                }
            }
            "mode" => self.mode = v.parse()?,
            "refit_every" => self.refit_every = one(k, v)?,
            "sim_len" => self.sim_len = one(k, v)?,
            "sim_vintages" => self.sim_vintages = one(k, v)?,
            "sim_targets" => self.sim_targets = one(k, v)?,
            "vol_base" => self.vol_base = one(k, v)?,
            "vol_slope" => self.vol_slope = one(k, v)?,
            _ => unreachable!("key list checked"),
        }
        Ok(())
    }

    /// Model layout implied by `p` and `extended`.
    pub fn shape(&self) -> ModelShape {
        if self.extended {
            ModelShape::extended(self.p)
        } else {
            ModelShape::baseline(self.p)
        }
    }

    pub fn selection_grid(&self, series: &[String]) -> SelectionGrid {
        let mut g = SelectionGrid::default_for(series);
        if let Some(v) = &self.grid_p {
            g.p = v.clone();
        }
        if let Some(v) = &self.grid_lambda {
            g.lambda = v.clone();
        }
        if let Some(v) = &self.grid_alpha {
            g.alpha = v.clone();
        }
        if let Some(v) = &self.grid_beta {
            g.beta = v.clone();
        }
        g
    }

    pub fn subsampler(&self) -> SelectionSubsampler {
        SelectionSubsampler { j: self.select_j, d_fraction: self.select_d, seed: self.seed }
    }

    /// Every setting as `key = value`, sorted by key.
    pub fn echo(&self) -> String {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("data", opt(&self.data));
        kv.insert("vintages", opt(&self.vintages));
        kv.insert("params", opt(&self.params));
        kv.insert("ensemble", opt(&self.ensemble));
        kv.insert("out", self.out.display().to_string());
        kv.insert("seed", self.seed.to_string());
        kv.insert("p", self.p.to_string());
        kv.insert("extended", self.extended.to_string());
        kv.insert("series", join(&self.series));
        kv.insert("lambda", self.gamma.lambda.to_string());
        kv.insert("alpha", self.gamma.alpha.to_string());
        kv.insert("beta", self.gamma.beta.to_string());
        kv.insert("max_iter", self.max_iter.to_string());
        kv.insert("grid_p", self.grid_p.as_deref().map(join).unwrap_or_default());
        kv.insert("grid_lambda", self.grid_lambda.as_deref().map(join).unwrap_or_default());
        kv.insert("grid_alpha", self.grid_alpha.as_deref().map(join).unwrap_or_default());
        kv.insert("grid_beta", self.grid_beta.as_deref().map(join).unwrap_or_default());
        kv.insert("select_j", self.select_j.to_string());
        kv.insert("select_d", self.select_d.to_string());
        kv.insert("targets", join(&self.targets));
        kv.insert("target_transform", format!("{:?}", self.target_transform));
        kv.insert("schemes", self.schemes.iter().map(scheme_text).collect::<Vec<_>>().join(","));
        kv.insert("members", self.members.to_string());
        match &self.min_leaf {
            MinLeaf::Fixed(k) => kv.insert("min_leaf", k.to_string()),
            MinLeaf::Select(g) => kv.insert("min_leaf_grid", join(g)),
        };
        kv.insert("variant", self.variant.name().to_string());
        kv.insert("mode", format!("{:?}", self.mode).to_lowercase());
        kv.insert("refit_every", self.refit_every.to_string());
        kv.insert("sim_len", self.sim_len.to_string());
        kv.insert("sim_vintages", self.sim_vintages.to_string());
        kv.insert("sim_targets", self.sim_targets.to_string());
        kv.insert("vol_base", self.vol_base.to_string());
        kv.insert("vol_slope", self.vol_slope.to_string());
        kv.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
