//! The run configuration document: a flat, human-readable `key = value`
//! file with dotted section keys (`schedule.alpha_start = 0.75`). Command
//! line flags override file values; resolved documents are snapshotted
//! beside augmented outputs for provenance.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::analytics::VoxelSpec;
use crate::compose::{CompositionConfig, DeltaPolicy};
use crate::error::{Error, Result};
use crate::ground::GroundFitConfig;
use crate::placeability::TrainConfig;
use crate::schedule::ScheduleConfig;

/// Flat key/value document with deterministic (sorted) serialization.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigDoc {
    map: BTreeMap<String, String>,
}

impl ConfigDoc {
    pub fn new() -> Self {
        ConfigDoc::default()
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::format(
                    origin,
                    format!("line {}: expected key = value", i + 1),
                ));
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::format(origin, format!("line {}: empty key", i + 1)));
            }
            map.insert(key.to_string(), value.trim().to_string());
        }
        Ok(ConfigDoc { map })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    /// Keys under `prefix.` with the prefix stripped, in sorted order.
    pub fn section(&self, prefix: &str) -> Vec<(String, String)> {
        let dotted = format!("{prefix}.");
        self.map
            .iter()
            .filter_map(|(k, v)| {
                k.strip_prefix(&dotted)
                    .map(|suffix| (suffix.to_string(), v.clone()))
            })
            .collect()
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Validation(format!("config key `{key}`: cannot parse `{raw}`"))
            }),
        }
    }

    pub fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.map.get(key).map(|s| s.as_str()) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(other) => Err(Error::Validation(format!(
                "config key `{key}`: expected a boolean, got `{other}`"
            ))),
        }
    }

    fn float_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some(raw) = self.map.get(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::Validation(format!("config key `{key}`: bad list entry `{s}`"))
                })
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    }

    /// Serialize as sorted `key = value` lines.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn schedule(&self) -> Result<ScheduleConfig> {
        let defaults = ScheduleConfig::default();
        let mut cfg = ScheduleConfig {
            alpha_start: self.parsed_or("schedule.alpha_start", defaults.alpha_start)?,
            beta_factor: self.parsed_or("schedule.beta_factor", defaults.beta_factor)?,
            beta_steps: self
                .float_list("schedule.beta_steps")?
                .unwrap_or(defaults.beta_steps),
            n_plain: BTreeMap::new(),
        };
        for (category, value) in self.section("schedule.n_plain") {
            let n: u32 = value.parse().map_err(|_| {
                Error::Validation(format!(
                    "config key `schedule.n_plain.{category}`: bad count `{value}`"
                ))
            })?;
            cfg.n_plain.insert(category, n);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn composition(&self) -> Result<CompositionConfig> {
        let defaults = CompositionConfig::default();
        let delta_policy = match self.get("composition.delta") {
            None => defaults.delta_policy,
            Some("half_length") => DeltaPolicy::HalfLength,
            Some(raw) => DeltaPolicy::Fixed(raw.parse().map_err(|_| {
                Error::Validation(format!(
                    "config key `composition.delta`: expected `half_length` or meters, got `{raw}`"
                ))
            })?),
        };
        let cfg = CompositionConfig {
            delta_policy,
            placeability_threshold: self.parsed_or(
                "composition.placeability_threshold",
                defaults.placeability_threshold,
            )?,
            support_radius_scale: self.parsed_or(
                "composition.support_radius_scale",
                defaults.support_radius_scale,
            )?,
            min_support_points: self.parsed_or(
                "composition.min_support_points",
                defaults.min_support_points,
            )?,
            min_support_fraction: self.parsed_or(
                "composition.min_support_fraction",
                defaults.min_support_fraction,
            )?,
            position_attempts: self
                .parsed_or("composition.position_attempts", defaults.position_attempts)?,
            object_retries: self
                .parsed_or("composition.object_retries", defaults.object_retries)?,
            remove_occupied: self
                .bool_or("composition.remove_occupied", defaults.remove_occupied)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ground(&self) -> Result<GroundFitConfig> {
        let defaults = GroundFitConfig::default();
        let cfg = GroundFitConfig {
            ring_radii: self
                .float_list("ground.ring_radii")?
                .unwrap_or(defaults.ring_radii),
            sectors: self.parsed_or("ground.sectors", defaults.sectors)?,
            epsilon: self.parsed_or("ground.epsilon", defaults.epsilon)?,
            iterations: self.parsed_or("ground.iterations", defaults.iterations)?,
            min_cell_points: self.parsed_or("ground.min_cell_points", defaults.min_cell_points)?,
            seed_fraction: self.parsed_or("ground.seed_fraction", defaults.seed_fraction)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let defaults = TrainConfig::default();
        Ok(TrainConfig {
            learning_rate: self.parsed_or("train.learning_rate", defaults.learning_rate)?,
            epochs: self.parsed_or("train.epochs", defaults.epochs)?,
            batch_size: self.parsed_or("train.batch_size", defaults.batch_size)?,
            seed: self.parsed_or("train.seed", defaults.seed)?,
            positive_class_weight: self.parsed_or(
                "train.positive_class_weight",
                defaults.positive_class_weight,
            )?,
        })
    }

    pub fn voxel(&self) -> Result<VoxelSpec> {
        let defaults = VoxelSpec::default();
        let spec = VoxelSpec {
            vx: self.parsed_or("voxel.vx", defaults.vx)?,
            vy: self.parsed_or("voxel.vy", defaults.vy)?,
            vz: self.parsed_or("voxel.vz", defaults.vz)?,
            stride: self.parsed_or("voxel.stride", defaults.stride)?,
            x_range: (
                self.parsed_or("voxel.x_min", defaults.x_range.0)?,
                self.parsed_or("voxel.x_max", defaults.x_range.1)?,
            ),
            y_range: (
                self.parsed_or("voxel.y_min", defaults.y_range.0)?,
                self.parsed_or("voxel.y_max", defaults.y_range.1)?,
            ),
            z_range: (
                self.parsed_or("voxel.z_min", defaults.z_range.0)?,
                self.parsed_or("voxel.z_max", defaults.z_range.1)?,
            ),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn doc(text: &str) -> ConfigDoc {
        ConfigDoc::parse(text, &PathBuf::from("test.conf")).unwrap()
    }

    #[test]
    fn parses_comments_blanks_and_spacing() {
        let d = doc("# comment\n\n seed = 7 \nschedule.alpha_start=0.8\n");
        assert_eq!(d.get("seed"), Some("7"));
        assert_eq!(d.get("schedule.alpha_start"), Some("0.8"));
        assert!(ConfigDoc::parse("not a pair\n", &PathBuf::from("x")).is_err());
    }

    #[test]
    fn render_roundtrip_sorted() {
        let mut d = ConfigDoc::new();
        d.set("b", 2);
        d.set("a", 1);
        assert_eq!(d.render(), "a = 1\nb = 2\n");
        let back = doc(&d.render());
        assert_eq!(back, d);
    }

    #[test]
    fn schedule_section_with_categories() {
        let d = doc(
            "schedule.alpha_start = 0.8\nschedule.beta_steps = 0.8, 0.9\nschedule.beta_factor = 4\nschedule.n_plain.car = 2\nschedule.n_plain.bus = 4\n",
        );
        let s = d.schedule().unwrap();
        assert_eq!(s.alpha_start, 0.8);
        assert_eq!(s.beta_steps, vec![0.8, 0.9]);
        assert_eq!(s.beta_factor, 4.0);
        assert_eq!(s.n_plain["car"], 2);
        assert_eq!(s.n_plain["bus"], 4);
    }

    #[test]
    fn composition_delta_forms() {
        let d = doc("composition.delta = half_length\n");
        assert_eq!(
            d.composition().unwrap().delta_policy,
            DeltaPolicy::HalfLength
        );
        let d = doc("composition.delta = 2.5\n");
        assert_eq!(
            d.composition().unwrap().delta_policy,
            DeltaPolicy::Fixed(2.5)
        );
        let d = doc("composition.delta = sideways\n");
        assert!(d.composition().is_err());
    }

    #[test]
    fn defaults_apply_when_absent() {
        let d = doc("");
        assert_eq!(d.composition().unwrap().position_attempts, 10);
        assert_eq!(d.ground().unwrap().sectors, 16);
        assert_eq!(d.train().unwrap().batch_size, 256);
        assert_eq!(d.voxel().unwrap().stride, 8);
        assert_eq!(d.schedule().unwrap().alpha_start, 0.75);
    }

    #[test]
    fn bad_values_name_the_key() {
        let d = doc("voxel.stride = soon\n");
        let err = d.voxel().unwrap_err().to_string();
        assert!(err.contains("voxel.stride"), "{err}");
    }
}
