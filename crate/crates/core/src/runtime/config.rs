//! Flat `key = value` pipeline configuration.
//!
//! Every tunable lives in one namespace so a config file, an environment
//! default and command-line overrides can be layered with plain key lookup.

use std::collections::BTreeMap;

use thiserror::Error;
use toml::Value;

use crate::filter::FilterWeights;
use crate::geometry::CameraIntrinsics;
use crate::masks::{ClassPolicy, MaskParams};
use crate::pose::KeyframePolicy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key:?} expects {expected}, got {got}")]
    Type {
        key: String,
        expected: &'static str,
        got: String,
    },
    #[error("override {0:?} is not of the form key=value")]
    Override(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub weights: FilterWeights,
    pub mask: MaskParams,
    pub policy: ClassPolicy,
    pub ransac_iters: usize,
    /// Ground inlier threshold as a fraction of the estimated camera height.
    pub ransac_alpha: f64,
    pub ransac_tau_min: f64,
    pub ransac_tau_max: f64,
    pub ransac_seed: u64,
    /// Ground planes tilted further than this from the camera's down axis are rejected.
    pub max_tilt_deg: f64,
    /// Camera height above the ground used until a plane has been found, meters.
    pub ground_height_prior: f64,
    pub huber_delta: f64,
    pub pose_max_iters: usize,
    pub keyframe: KeyframePolicy,
    pub frame_period: f64,
    /// Time budget for the quality controller; the frame period when unset.
    pub t_threshold: Option<f64>,
    pub hysteresis_frames: usize,
    /// Lets measured timings pick the quality tier. Makes outputs timing-dependent.
    pub adaptive_quality: bool,
    pub camera: CameraIntrinsics,
    /// When false, filter results are computed and reported but the tracker ignores them.
    pub filter_enabled: bool,
    /// Builds the next frame's mask while the current frame is tracked.
    pub overlapped: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            weights: FilterWeights::default(),
            mask: MaskParams::default(),
            policy: ClassPolicy::default(),
            ransac_iters: 500,
            ransac_alpha: 0.03,
            ransac_tau_min: 0.02,
            ransac_tau_max: 0.15,
            ransac_seed: 0,
            max_tilt_deg: 20.0,
            ground_height_prior: 1.65,
            huber_delta: 2.0,
            pose_max_iters: 50,
            keyframe: KeyframePolicy::default(),
            frame_period: 0.1,
            t_threshold: None,
            hysteresis_frames: 3,
            adaptive_quality: false,
            camera: CameraIntrinsics::default(),
            filter_enabled: true,
            overlapped: true,
        }
    }
}

fn type_error(key: &str, expected: &'static str, v: &Value) -> ConfigError {
    ConfigError::Type {
        key: key.to_string(),
        expected,
        got: v.to_string(),
    }
}

mod get {
    use super::*;

    pub fn f64(key: &str, v: &Value) -> Result<f64, ConfigError> {
        match v {
            Value::Float(x) => Ok(*x),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(type_error(key, "a number", v)),
        }
    }

    pub fn opt_f64(key: &str, v: &Value) -> Result<Option<f64>, ConfigError> {
        f64(key, v).map(Some)
    }

    pub fn u64(key: &str, v: &Value) -> Result<u64, ConfigError> {
        match v {
            Value::Integer(i) if *i >= 0 => Ok(*i as u64),
            _ => Err(type_error(key, "a non-negative integer", v)),
        }
    }

    pub fn usize(key: &str, v: &Value) -> Result<usize, ConfigError> {
        u64(key, v).map(|x| x as usize)
    }

    pub fn u32(key: &str, v: &Value) -> Result<u32, ConfigError> {
        u64(key, v)
            .and_then(|x| u32::try_from(x).map_err(|_| type_error(key, "a 32-bit integer", v)))
    }

    pub fn bool(key: &str, v: &Value) -> Result<bool, ConfigError> {
        v.as_bool()
            .ok_or_else(|| type_error(key, "true or false", v))
    }
}

mod put {
    use super::*;

    pub fn f64(x: f64) -> Option<Value> {
        Some(Value::Float(x))
    }
    pub fn opt_f64(x: Option<f64>) -> Option<Value> {
        x.map(Value::Float)
    }
    pub fn u64(x: u64) -> Option<Value> {
        Some(Value::Integer(x as i64))
    }
    pub fn usize(x: usize) -> Option<Value> {
        Some(Value::Integer(x as i64))
    }
    pub fn u32(x: u32) -> Option<Value> {
        Some(Value::Integer(x as i64))
    }
    pub fn bool(x: bool) -> Option<Value> {
        Some(Value::Boolean(x))
    }
}

macro_rules! config_keys {
    ($( $key:literal => ($($path:tt)+) : $kind:ident ),* $(,)?) => {
        impl PipelineConfig {
            /// Every recognized key, in declaration order.
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            /// Assigns one key from a TOML value.
            pub fn set(&mut self, key: &str, value: &Value) -> Result<(), ConfigError> {
                match key {
                    $( $key => self.$($path)+ = get::$kind(key, value)?, )*
                    _ => return Err(ConfigError::UnknownKey(key.to_string())),
                }
                Ok(())
            }

            /// Current values of all set keys, sorted by key.
            pub fn entries(&self) -> BTreeMap<&'static str, Value> {
                let mut m = BTreeMap::new();
                $( if let Some(v) = put::$kind(self.$($path)+) { m.insert($key, v); } )*
                m
            }
        }
    };
}

config_keys! {
    "w_seg" => (weights.w[0]): f64,
    "w_motion" => (weights.w[1]): f64,
    "w_ground" => (weights.w[2]): f64,
    "w_edge" => (weights.w[3]): f64,
    "theta" => (weights.theta): f64,
    "v_max" => (weights.v_max): f64,
    "tau_ground" => (weights.tau_ground): f64,
    "edge_inner" => (weights.edge_inner): f64,
    "edge_outer" => (weights.edge_outer): f64,
    "cluster_radius" => (weights.cluster_radius): f64,
    "cluster_min_k" => (weights.cluster_min_k): usize,
    "cluster_margin" => (weights.cluster_margin): f64,
    "motion_window" => (weights.motion_window): usize,
    "vote_window" => (weights.vote_window): usize,
    "vote_quota" => (weights.vote_quota): f64,
    "fast_bypass" => (weights.fast_bypass): f64,
    "conf_threshold" => (mask.conf_threshold): f64,
    "nms_threshold" => (mask.nms_threshold): f64,
    "nms_per_class" => (mask.nms_per_class): bool,
    "open_radius" => (mask.open_radius): u32,
    "close_radius" => (mask.close_radius): u32,
    "mask_divisor" => (mask.scale_divisor): u32,
    "ransac_iters" => (ransac_iters): usize,
    "ransac_alpha" => (ransac_alpha): f64,
    "ransac_tau_min" => (ransac_tau_min): f64,
    "ransac_tau_max" => (ransac_tau_max): f64,
    "ransac_seed" => (ransac_seed): u64,
    "max_tilt_deg" => (max_tilt_deg): f64,
    "ground_height_prior" => (ground_height_prior): f64,
    "huber_delta" => (huber_delta): f64,
    "pose_max_iters" => (pose_max_iters): usize,
    "kf_n_min" => (keyframe.n_min): usize,
    "kf_rho_max" => (keyframe.rho_max): f64,
    "kf_dt_min" => (keyframe.dt_min): f64,
    "kf_q_min" => (keyframe.q_min): f64,
    "frame_period" => (frame_period): f64,
    "t_threshold" => (t_threshold): opt_f64,
    "hysteresis_frames" => (hysteresis_frames): usize,
    "adaptive_quality" => (adaptive_quality): bool,
    "camera_fx" => (camera.fx): f64,
    "camera_fy" => (camera.fy): f64,
    "camera_cx" => (camera.cx): f64,
    "camera_cy" => (camera.cy): f64,
    "camera_width" => (camera.width): u32,
    "camera_height" => (camera.height): u32,
    "filter_enabled" => (filter_enabled): bool,
    "overlapped" => (overlapped): bool,
}

/// Parses the value half of a `key=value` override. Anything that is not a
/// TOML scalar is taken as a bare string, so type errors name the key.
fn parse_scalar(text: &str) -> Value {
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(text.to_string()))
}

impl PipelineConfig {
    /// Applies every key of a flat TOML document on top of `self`.
    pub fn merge_toml_str(&mut self, text: &str) -> Result<(), ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for (k, v) in &table {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.merge_toml_str(text)?;
        Ok(cfg)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
        self.set(k.trim(), &parse_scalar(v.trim()))
    }

    /// Flat TOML rendering of [`Self::entries`]; parses back to an equal config.
    pub fn to_toml_string(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn effective_t_threshold(&self) -> f64 {
        self.t_threshold.unwrap_or(self.frame_period)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.weights
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.camera
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.frame_period > 0.0) || !(self.effective_t_threshold() > 0.0) {
            return bad("frame_period and t_threshold must be positive".into());
        }
        if !(self.huber_delta > 0.0) {
            return bad(format!(
                "huber_delta must be positive, got {}",
                self.huber_delta
            ));
        }
        if self.ransac_iters == 0
            || !(self.ransac_tau_min > 0.0 && self.ransac_tau_min <= self.ransac_tau_max)
        {
            return bad(
                "ransac_iters must be positive and 0 < ransac_tau_min <= ransac_tau_max".into(),
            );
        }
        if !(self.max_tilt_deg > 0.0 && self.max_tilt_deg <= 90.0) {
            return bad(format!(
                "max_tilt_deg must lie in (0, 90], got {}",
                self.max_tilt_deg
            ));
        }
        if ![1, 2, 4].contains(&self.mask.scale_divisor) {
            return bad(format!(
                "mask_divisor must be 1, 2 or 4, got {}",
                self.mask.scale_divisor
            ));
        }
        if !(self.mask.conf_threshold >= 0.0
            && self.mask.nms_threshold > 0.0
            && self.mask.nms_threshold <= 1.0)
        {
            return bad("conf_threshold must be non-negative and nms_threshold in (0, 1]".into());
        }
        Ok(())
    }
}
