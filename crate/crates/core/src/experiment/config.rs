//! Flat key-value run configuration: parsing, validation, canonical echo.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::baselines::MlcHyperParams;
use crate::dataio::DatasetFormat;
use crate::error::{Error, Result};
use crate::training::{GanHyperParams, LossVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    CfwganGp,
    CfganVanilla,
    Mlc,
    ItemPop,
}

impl ModelKind {
    pub fn parse_name(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cfwgan_gp" => Ok(ModelKind::CfwganGp),
            "cfgan_vanilla" => Ok(ModelKind::CfganVanilla),
            "mlc" => Ok(ModelKind::Mlc),
            "itempop" => Ok(ModelKind::ItemPop),
            other => Err(Error::Config(format!("unknown model kind '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::CfwganGp => "cfwgan_gp",
            ModelKind::CfganVanilla => "cfgan_vanilla",
            ModelKind::Mlc => "mlc",
            ModelKind::ItemPop => "itempop",
        }
    }

    pub fn is_gan(&self) -> bool {
        matches!(self, ModelKind::CfwganGp | ModelKind::CfganVanilla)
    }

    pub fn wire_byte(&self) -> u8 {
        match self {
            ModelKind::CfwganGp => 0,
            ModelKind::CfganVanilla => 1,
            ModelKind::Mlc => 2,
            ModelKind::ItemPop => 3,
        }
    }

    pub fn from_wire_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(ModelKind::CfwganGp),
            1 => Ok(ModelKind::CfganVanilla),
            2 => Ok(ModelKind::Mlc),
            3 => Ok(ModelKind::ItemPop),
            other => Err(Error::Checkpoint {
                fault: crate::error::CheckpointFault::Corrupt,
                msg: format!("unknown model kind byte {other}"),
            }),
        }
    }
}

/// Everything one run needs; every field has a concrete value after
/// `load_config` fills the defaults in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub dataset_path: PathBuf,
    pub dataset_format: DatasetFormat,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub test_ratio: f64,
    pub valid_ratio: f64,
    pub retrain_on_train_valid: bool,
    pub threads: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub gan: GanHyperParams,
    pub mlc: MlcHyperParams,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.dataset_path.exists() {
            return Err(Error::Config(format!(
                "dataset_path does not exist: {}",
                self.dataset_path.display()
            )));
        }
        if !(0.0..1.0).contains(&self.test_ratio) || !(0.0..1.0).contains(&self.valid_ratio) {
            return Err(Error::Config(
                "test_ratio and valid_ratio must lie in [0, 1)".into(),
            ));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        match self.model {
            ModelKind::CfwganGp | ModelKind::CfganVanilla => {
                if self.gen_hidden.is_empty() || self.disc_hidden.is_empty() {
                    return Err(Error::Config(
                        "gen_hidden and disc_hidden must name at least one layer".into(),
                    ));
                }
                self.gan.validate()
            }
            ModelKind::Mlc => self.mlc.validate(),
            ModelKind::ItemPop => Ok(()),
        }
    }

    /// Canonical text form; `load_config` on the echo reproduces this
    /// config exactly.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: &str| writeln!(s, "{k} = {v}").unwrap();
        kv(&mut s, "model", self.model.name());
        kv(
            &mut s,
            "dataset_path",
            &self.dataset_path.display().to_string(),
        );
        kv(&mut s, "dataset_format", self.dataset_format.name());
        kv(&mut s, "seed", &self.seed.to_string());
        kv(&mut s, "out_dir", &self.out_dir.display().to_string());
        kv(&mut s, "test_ratio", &self.test_ratio.to_string());
        kv(&mut s, "valid_ratio", &self.valid_ratio.to_string());
        kv(
            &mut s,
            "retrain_on_train_valid",
            &self.retrain_on_train_valid.to_string(),
        );
        kv(&mut s, "threads", &self.threads.to_string());
        match self.model {
            ModelKind::CfwganGp | ModelKind::CfganVanilla => {
                let g = &self.gan;
                kv(&mut s, "lr", &g.lr.to_string());
                kv(&mut s, "d_iter", &g.d_iter.to_string());
                kv(&mut s, "lambda", &g.lambda_gp.to_string());
                kv(&mut s, "alpha", &g.alpha.to_string());
                kv(&mut s, "p_zr", &g.p_zr.to_string());
                kv(&mut s, "p_pm", &g.p_pm.to_string());
                kv(&mut s, "beta1", &g.beta1.to_string());
                kv(&mut s, "beta2", &g.beta2.to_string());
                kv(&mut s, "batch_size", &g.batch_size.to_string());
                kv(&mut s, "max_epochs", &g.max_epochs.to_string());
                kv(&mut s, "eval_every", &g.eval_every.to_string());
                kv(&mut s, "patience", &g.patience.to_string());
                kv(&mut s, "use_zr", &g.use_zr.to_string());
                kv(&mut s, "use_pm", &g.use_pm.to_string());
                kv(&mut s, "gen_hidden", &join_sizes(&self.gen_hidden));
                kv(&mut s, "disc_hidden", &join_sizes(&self.disc_hidden));
            }
            ModelKind::Mlc => {
                let m = &self.mlc;
                kv(&mut s, "lr", &m.lr.to_string());
                kv(&mut s, "l2", &m.lambda_l2.to_string());
                kv(&mut s, "hidden", &m.hidden.to_string());
                kv(&mut s, "dropout", &m.dropout.to_string());
                kv(&mut s, "batch_size", &m.batch_size.to_string());
                kv(&mut s, "max_epochs", &m.max_epochs.to_string());
                kv(&mut s, "eval_every", &m.eval_every.to_string());
                kv(&mut s, "patience", &m.patience.to_string());
            }
            ModelKind::ItemPop => {}
        }
        s
    }
}

fn join_sizes(v: &[usize]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_sizes(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{key}: bad layer size '{p}'")))
        })
        .collect()
}

struct Raw {
    map: BTreeMap<String, String>,
}

impl Raw {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'"))),
        }
    }
}

/// Parse a flat `key = value` file. Unknown keys, duplicate keys, missing
/// required keys, and out-of-range values are all errors naming the key.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", path.display()))
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{line}'",
                idx + 1
            )));
        };
        let key = k.trim().to_string();
        let value = v.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Config(format!("duplicate key '{key}'")));
        }
    }
    let mut raw = Raw { map };

    let model = ModelKind::parse_name(
        &raw.take("model")
            .ok_or_else(|| Error::Config("missing required key 'model'".into()))?,
    )?;
    let dataset_path = PathBuf::from(
        raw.take("dataset_path")
            .ok_or_else(|| Error::Config("missing required key 'dataset_path'".into()))?,
    );
    let dataset_format = DatasetFormat::parse_name(
        &raw.take("dataset_format")
            .ok_or_else(|| Error::Config("missing required key 'dataset_format'".into()))?,
    )?;
    let seed: u64 = raw.parse("seed", 0)?;
    let out_dir = PathBuf::from(
        raw.take("out_dir")
            .unwrap_or_else(|| format!("runs/{}-{}", model.name(), dataset_format.name())),
    );
    let test_ratio: f64 = raw.parse("test_ratio", 0.2)?;
    let valid_ratio: f64 = raw.parse("valid_ratio", 0.2)?;
    let retrain_on_train_valid: bool = raw.parse("retrain_on_train_valid", false)?;
    let threads: usize = raw.parse("threads", 1)?;

    let mut gan = GanHyperParams {
        seed,
        variant: if model == ModelKind::CfganVanilla {
            LossVariant::VanillaGan
        } else {
            LossVariant::WganGp
        },
        ..Default::default()
    };
    let mut mlc = MlcHyperParams {
        seed,
        ..Default::default()
    };
    let mut gen_hidden = vec![512];
    let mut disc_hidden = vec![512];

    match model {
        ModelKind::CfwganGp | ModelKind::CfganVanilla => {
            gan.lr = raw.parse("lr", gan.lr)?;
            gan.d_iter = raw.parse("d_iter", gan.d_iter)?;
            gan.lambda_gp = raw.parse("lambda", gan.lambda_gp)?;
            gan.alpha = raw.parse("alpha", gan.alpha)?;
            gan.p_zr = raw.parse("p_zr", gan.p_zr)?;
            gan.p_pm = raw.parse("p_pm", gan.p_pm)?;
            gan.beta1 = raw.parse("beta1", gan.beta1)?;
            gan.beta2 = raw.parse("beta2", gan.beta2)?;
            gan.batch_size = raw.parse("batch_size", gan.batch_size)?;
            gan.max_epochs = raw.parse("max_epochs", gan.max_epochs)?;
            gan.eval_every = raw.parse("eval_every", gan.eval_every)?;
            gan.patience = raw.parse("patience", gan.patience)?;
            gan.use_zr = raw.parse("use_zr", gan.use_zr)?;
            gan.use_pm = raw.parse("use_pm", gan.use_pm)?;
            if let Some(v) = raw.take("gen_hidden") {
                gen_hidden = parse_sizes("gen_hidden", &v)?;
            }
            if let Some(v) = raw.take("disc_hidden") {
                disc_hidden = parse_sizes("disc_hidden", &v)?;
            }
        }
        ModelKind::Mlc => {
            mlc.lr = raw.parse("lr", mlc.lr)?;
            mlc.lambda_l2 = raw.parse("l2", mlc.lambda_l2)?;
            mlc.hidden = raw.parse("hidden", mlc.hidden)?;
            mlc.dropout = raw.parse("dropout", mlc.dropout)?;
            mlc.batch_size = raw.parse("batch_size", mlc.batch_size)?;
            mlc.max_epochs = raw.parse("max_epochs", mlc.max_epochs)?;
            mlc.eval_every = raw.parse("eval_every", mlc.eval_every)?;
            mlc.patience = raw.parse("patience", mlc.patience)?;
        }
        ModelKind::ItemPop => {}
    }

    if let Some(unknown) = raw.map.keys().next() {
        return Err(Error::Config(format!(
            "unknown key '{unknown}' for model '{}'",
            model.name()
        )));
    }

    let cfg = RunConfig {
        model,
        dataset_path,
        dataset_format,
        seed,
        out_dir,
        test_ratio,
        valid_ratio,
        retrain_on_train_valid,
        threads,
        gen_hidden,
        disc_hidden,
        gan,
        mlc,
    };
    // Range validation that does not need the filesystem.
    match cfg.model {
        ModelKind::CfwganGp | ModelKind::CfganVanilla => cfg.gan.validate()?,
        ModelKind::Mlc => cfg.mlc.validate()?,
        ModelKind::ItemPop => {}
    }
    Ok(cfg)
}
