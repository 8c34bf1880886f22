use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use unieval::MatchingConfig;

use crate::error::ServiceError;

/// Service settings. Loaded from a TOML or JSON file, then overridden by
/// `UNIEVAL_*` environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "snake_case")]
pub struct ServiceConfig {
    pub bind: String,
    /// Directory the image `file_name`s are resolved against.
    pub image_root: Option<PathBuf>,
    pub max_grid_objects: usize,
    pub default_seed: u64,
    pub crop_pad: f64,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    pub size_tolerance: f64,
    pub direction_tolerance: f64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let matching = MatchingConfig::default();
        ServiceConfig {
            bind: "127.0.0.1:8080".to_string(),
            image_root: None,
            max_grid_objects: unieval::grid::DEFAULT_MAX_OBJECTS,
            default_seed: 0,
            crop_pad: 0.15,
            alpha: matching.alpha,
            lambda1: matching.lambda1,
            lambda2: matching.lambda2,
            beta: unieval::subsets::DEFAULT_BETA,
            size_tolerance: unieval::matrix::DEFAULT_SIZE_TOLERANCE,
            direction_tolerance: unieval::matrix::DEFAULT_DIRECTION_TOLERANCE,
        }
    }
}

impl ServiceConfig {
    pub fn from_file(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            serde_json::from_str(&text).map_err(|e| ServiceError::Config(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| ServiceError::Config(e.to_string()))
        }
    }

    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => ServiceConfig::from_file(p)?,
            None => ServiceConfig::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<(), ServiceError> {
        fn parse<T: std::str::FromStr>(key: &str, v: String) -> Result<T, ServiceError> {
            v.parse()
                .map_err(|_| ServiceError::Config(format!("{key}: cannot parse '{v}'")))
        }
        if let Some(v) = get("UNIEVAL_BIND") {
            self.bind = v;
        }
        if let Some(v) = get("UNIEVAL_IMAGE_ROOT") {
            self.image_root = Some(PathBuf::from(v));
        }
        if let Some(v) = get("UNIEVAL_MAX_GRID_OBJECTS") {
            self.max_grid_objects = parse("UNIEVAL_MAX_GRID_OBJECTS", v)?;
        }
        if let Some(v) = get("UNIEVAL_DEFAULT_SEED") {
            self.default_seed = parse("UNIEVAL_DEFAULT_SEED", v)?;
        }
        if let Some(v) = get("UNIEVAL_CROP_PAD") {
            self.crop_pad = parse("UNIEVAL_CROP_PAD", v)?;
        }
        for (key, slot) in [
            ("UNIEVAL_ALPHA", &mut self.alpha),
            ("UNIEVAL_LAMBDA1", &mut self.lambda1),
            ("UNIEVAL_LAMBDA2", &mut self.lambda2),
            ("UNIEVAL_BETA", &mut self.beta),
            ("UNIEVAL_SIZE_TOLERANCE", &mut self.size_tolerance),
            ("UNIEVAL_DIRECTION_TOLERANCE", &mut self.direction_tolerance),
        ] {
            if let Some(v) = get(key) {
                *slot = parse(key, v)?;
            }
        }
        Ok(())
    }

    pub fn matching(&self) -> MatchingConfig {
        MatchingConfig {
            alpha: self.alpha,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            ..MatchingConfig::default()
        }
    }
}
