//! Plain-text `key = value` configuration files for the scene generator and
//! the training schedule. Unknown keys are rejected so typos surface early;
//! `#` starts a comment.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::synth::SceneConfig;
use crate::train::TrainConfig;

/// Parse `key = value` lines into an ordered map.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Format(format!(
                "line {}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Format(format!("cannot parse {key} = {value:?}")))
}

impl TrainConfig {
    /// Apply `key = value` overrides to this configuration.
    pub fn apply_kv(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in map {
            match key.as_str() {
                "stage1_epochs" => self.stage1_epochs = parse(key, value)?,
                "stage1_lr" => self.stage1_lr = parse(key, value)?,
                "stage2_epochs" => self.stage2_epochs = parse(key, value)?,
                "stage2_lr" => self.stage2_lr = parse(key, value)?,
                "momentum" => self.momentum = parse(key, value)?,
                "batch_size" => self.batch_size = parse(key, value)?,
                "patience" => self.patience = parse(key, value)?,
                "val_split" => self.val_split = parse(key, value)?,
                "seed" => self.seed = parse(key, value)?,
                "weight_positive" => self.weights.positive = parse(key, value)?,
                "weight_zero" => self.weights.zero = parse(key, value)?,
                _ => return Err(Error::Format(format!("unknown training key {key:?}"))),
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv(&parse_kv(&std::fs::read_to_string(path)?)?)?;
        Ok(cfg)
    }
}

impl SceneConfig {
    /// Apply `key = value` overrides to this configuration.
    pub fn apply_kv(&mut self, map: &BTreeMap<String, String>) -> Result<()> {
        for (key, value) in map {
            match key.as_str() {
                "room_width_m" => self.room_width_m = parse(key, value)?,
                "room_depth_m" => self.room_depth_m = parse(key, value)?,
                "room_height_m" => self.room_height_m = parse(key, value)?,
                "cam_height_min_m" => self.cam_height_m.0 = parse(key, value)?,
                "cam_height_max_m" => self.cam_height_m.1 = parse(key, value)?,
                "cam_tilt_min_deg" => self.cam_tilt_deg.0 = parse(key, value)?,
                "cam_tilt_max_deg" => self.cam_tilt_deg.1 = parse(key, value)?,
                "person_min" => self.person_count.0 = parse(key, value)?,
                "person_max" => self.person_count.1 = parse(key, value)?,
                "walk_speed_min_mps" => self.walk_speed_mps.0 = parse(key, value)?,
                "walk_speed_max_mps" => self.walk_speed_mps.1 = parse(key, value)?,
                "depth_noise_m" => self.depth_noise_m = parse(key, value)?,
                "height" => self.height = parse(key, value)?,
                "width" => self.width = parse(key, value)?,
                "seed" => self.seed = parse(key, value)?,
                "depth_min_m" => self.depth_min_m = parse(key, value)?,
                "depth_max_m" => self.depth_max_m = parse(key, value)?,
                _ => return Err(Error::Format(format!("unknown scene key {key:?}"))),
            }
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<SceneConfig> {
        let mut cfg = SceneConfig::default();
        cfg.apply_kv(&parse_kv(&std::fs::read_to_string(path)?)?)?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spacing() {
        let map = parse_kv("# header\nseed = 42\n\nheight=60 # trailing\n").unwrap();
        assert_eq!(map.get("seed").unwrap(), "42");
        assert_eq!(map.get("height").unwrap(), "60");
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse_kv("this is not a pair").is_err());
    }

    #[test]
    fn train_config_round_trip() {
        let mut cfg = TrainConfig::default();
        let map = parse_kv("stage1_epochs = 10\nstage2_lr = 1e-5\nbatch_size = 2").unwrap();
        cfg.apply_kv(&map).unwrap();
        assert_eq!(cfg.stage1_epochs, 10);
        assert_eq!(cfg.stage2_lr, 1e-5);
        assert_eq!(cfg.batch_size, 2);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.apply_kv(&parse_kv("lr = 3").unwrap()).is_err());
        let mut scene = SceneConfig::default();
        assert!(scene.apply_kv(&parse_kv("rooms = 3").unwrap()).is_err());
    }

    #[test]
    fn scene_overrides() {
        let mut cfg = SceneConfig::default();
        cfg.apply_kv(&parse_kv("height = 60\nwidth = 80\nperson_max = 2").unwrap()).unwrap();
        assert_eq!((cfg.height, cfg.width), (60, 80));
        assert_eq!(cfg.person_count, (1, 2));
    }
}
