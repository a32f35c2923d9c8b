use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::diffusion::{linear_schedule, NoiseSchedule, TrainConfig};
use crate::error::{Error, Result};
use crate::neural::Arch;

pub const ENV_PREFIX: &str = "SYNTHRAD_";

/// Every setting of a pipeline run. Seeds are always explicit.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
    pub image_size: usize,
    pub train: TrainConfig,
    pub schedule_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub arch: Arch,
    pub embedder_seed: u64,
    pub embedder_dim: usize,
    pub n_quartets: usize,
    pub raters_expected: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            output_dir: "out".into(),
            image_size: 16,
            train: TrainConfig::default(),
            schedule_steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            arch: Arch::default(),
            embedder_seed: 0,
            embedder_dim: 64,
            n_quartets: 50,
            raters_expected: 8,
            seed: 0,
        }
    }
}

/// Recognized keys, in the order `to_text` writes them.
pub const KEYS: &[&str] = &[
    "seed",
    "paths.data_dir",
    "paths.checkpoint_dir",
    "paths.output_dir",
    "preprocess.size",
    "diffusion.batch_size",
    "diffusion.lr",
    "diffusion.max_steps",
    "diffusion.checkpoint_interval",
    "diffusion.val_fraction",
    "schedule.steps",
    "schedule.beta_start",
    "schedule.beta_end",
    "model.base_channels",
    "model.num_down_levels",
    "model.time_embed_dim",
    "metrics.embedder_seed",
    "metrics.embedder_dim",
    "study.n_quartets",
    "study.raters_expected",
];

/// `diffusion.lr` → `SYNTHRAD_DIFFUSION_LR`.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::invalid(format!("{key}={value}: {e}")))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("config line {}: expected key=value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "paths.data_dir" => self.data_dir = value.trim().into(),
            "paths.checkpoint_dir" => self.checkpoint_dir = value.trim().into(),
            "paths.output_dir" => self.output_dir = value.trim().into(),
            "preprocess.size" => self.image_size = parse(key, value)?,
            "diffusion.batch_size" => self.train.batch_size = parse(key, value)?,
            "diffusion.lr" => self.train.lr = parse(key, value)?,
            "diffusion.max_steps" => self.train.max_steps = parse(key, value)?,
            "diffusion.checkpoint_interval" => self.train.checkpoint_interval = parse(key, value)?,
            "diffusion.val_fraction" => self.train.val_fraction = parse(key, value)?,
            "schedule.steps" => self.schedule_steps = parse(key, value)?,
            "schedule.beta_start" => self.beta_start = parse(key, value)?,
            "schedule.beta_end" => self.beta_end = parse(key, value)?,
            "model.base_channels" => self.arch.base_channels = parse(key, value)?,
            "model.num_down_levels" => self.arch.num_down_levels = parse(key, value)?,
            "model.time_embed_dim" => self.arch.time_embed_dim = parse(key, value)?,
            "metrics.embedder_seed" => self.embedder_seed = parse(key, value)?,
            "metrics.embedder_dim" => self.embedder_dim = parse(key, value)?,
            "study.n_quartets" => self.n_quartets = parse(key, value)?,
            "study.raters_expected" => self.raters_expected = parse(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key {key}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "paths.data_dir" => self.data_dir.display().to_string(),
            "paths.checkpoint_dir" => self.checkpoint_dir.display().to_string(),
            "paths.output_dir" => self.output_dir.display().to_string(),
            "preprocess.size" => self.image_size.to_string(),
            "diffusion.batch_size" => self.train.batch_size.to_string(),
            "diffusion.lr" => self.train.lr.to_string(),
            "diffusion.max_steps" => self.train.max_steps.to_string(),
            "diffusion.checkpoint_interval" => self.train.checkpoint_interval.to_string(),
            "diffusion.val_fraction" => self.train.val_fraction.to_string(),
            "schedule.steps" => self.schedule_steps.to_string(),
            "schedule.beta_start" => self.beta_start.to_string(),
            "schedule.beta_end" => self.beta_end.to_string(),
            "model.base_channels" => self.arch.base_channels.to_string(),
            "model.num_down_levels" => self.arch.num_down_levels.to_string(),
            "model.time_embed_dim" => self.arch.time_embed_dim.to_string(),
            "metrics.embedder_seed" => self.embedder_seed.to_string(),
            "metrics.embedder_dim" => self.embedder_dim.to_string(),
            "study.n_quartets" => self.n_quartets.to_string(),
            "study.raters_expected" => self.raters_expected.to_string(),
            _ => return None,
        })
    }

    /// Layers defaults, then `file_text`, then matching environment variables,
    /// then explicit overrides. Relative paths resolve against `base_dir`.
    pub fn layered(
        file_text: Option<&str>,
        env: &BTreeMap<String, String>,
        overrides: &[(String, String)],
        base_dir: &Path,
    ) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(text) = file_text {
            for (k, v) in parse_kv(text)? {
                cfg.set(&k, &v)?;
            }
        }
        for key in KEYS {
            if let Some(v) = env.get(&env_name(key)) {
                cfg.set(key, v)?;
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        for dir in [&mut cfg.data_dir, &mut cfg.checkpoint_dir, &mut cfg.output_dir] {
            if dir.is_relative() {
                *dir = base_dir.join(&*dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the optional config file and the process environment.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let env: BTreeMap<String, String> = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
                Self::layered(Some(&text), &env, overrides, base)
            }
            None => Self::layered(None, &env, overrides, Path::new(".")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.arch.validate()?;
        self.schedule()?;
        if self.image_size == 0 || !self.image_size.is_multiple_of(1 << self.arch.num_down_levels) {
            return Err(Error::invalid(format!(
                "preprocess.size {} must be a positive multiple of {}",
                self.image_size,
                1 << self.arch.num_down_levels
            )));
        }
        if self.n_quartets == 0 {
            return Err(Error::invalid("study.n_quartets must be positive"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        linear_schedule(self.schedule_steps, self.beta_start, self.beta_end)
    }

    /// Model architecture with `num_timesteps` taken from the schedule.
    pub fn model_arch(&self) -> Arch {
        Arch {
            num_timesteps: self.schedule_steps,
            ..self.arch
        }
    }

    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_file_env_flag() {
        let file = "# run\ndiffusion.lr = 1e-3\nseed=4\nschedule.steps = 200 # desk\n";
        let env = BTreeMap::from([(env_name("seed"), "5".to_string()), ("OTHER".into(), "x".into())]);
        let cfg = PipelineConfig::layered(Some(file), &env, &[], Path::new("/base")).unwrap();
        assert_eq!((cfg.train.lr, cfg.seed, cfg.schedule_steps), (1e-3, 5, 200));
        assert_eq!(cfg.data_dir, PathBuf::from("/base/data"));
        let flags = vec![("seed".to_string(), "6".to_string())];
        let cfg = PipelineConfig::layered(Some(file), &env, &flags, Path::new("/base")).unwrap();
        assert_eq!(cfg.seed, 6);
    }

    #[test]
    fn env_names() {
        assert_eq!(env_name("diffusion.max_steps"), "SYNTHRAD_DIFFUSION_MAX_STEPS");
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = PipelineConfig::default();
        cfg.train.lr = 3e-4;
        cfg.data_dir = "/abs/data".into();
        let back = PipelineConfig::layered(Some(&cfg.to_text()), &BTreeMap::new(), &[], Path::new("/")).unwrap();
        assert_eq!(back.train.lr, 3e-4);
        assert_eq!(back.data_dir, PathBuf::from("/abs/data"));
        assert_eq!(back.to_text().lines().count(), KEYS.len());
    }

    #[test]
    fn rejects_bad_input() {
        let none = BTreeMap::new();
        assert!(PipelineConfig::layered(Some("bogus.key = 1"), &none, &[], Path::new(".")).is_err());
        assert!(PipelineConfig::layered(Some("seed"), &none, &[], Path::new(".")).is_err());
        assert!(PipelineConfig::layered(Some("seed = -1"), &none, &[], Path::new(".")).is_err());
        assert!(PipelineConfig::layered(Some("preprocess.size = 6"), &none, &[], Path::new(".")).is_err());
        assert!(PipelineConfig::layered(Some("diffusion.val_fraction = 1.5"), &none, &[], Path::new(".")).is_err());
    }
}
