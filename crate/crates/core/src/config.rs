//! Engine configuration and its flat `key = value` text format.
//!
//! Keys are dotted paths into [`EngineConfig`], for example
//! `anneal.cooling = 0.95` or `stack.heatsink_conductance = 0.8`. Values are
//! numbers, booleans, JSON arrays, or bare words (enum variants, strings).
//! `#` starts a comment. Unknown keys and ill-typed values are parse errors
//! carrying the line number.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::leakage::EntropyOptions;
use crate::model::TsvGeometry;
use crate::thermal::{SolverOptions, StackModel};
use crate::timing::TechParams;
use crate::volumes::VolumeParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnealParams {
    /// Initial temperature is set so roughly this share of uphill moves is accepted.
    pub initial_accept: f64,
    pub cooling: f64,
    /// Moves per temperature step, per block.
    pub moves_per_block: f64,
    /// Stop once the acceptance ratio of a temperature step falls below this.
    pub stop_accept: f64,
    /// Hard cap on evaluated candidates; 0 returns the initial layout.
    pub max_evals: usize,
    /// Probability that a die move is steered by the high-power-on-top rule.
    pub design_rule_bias: f64,
    /// Final pick: leakage-best among solutions within `(1 + delta)` of the best cost.
    pub delta: f64,
    /// Random moves used to estimate the initial temperature.
    pub probe_moves: usize,
}

impl Default for AnnealParams {
    fn default() -> Self {
        Self {
            initial_accept: 0.5,
            cooling: 0.97,
            moves_per_block: 100.0,
            stop_accept: 0.01,
            max_evals: 20_000,
            design_rule_bias: 0.5,
            delta: 0.05,
            probe_moves: 64,
        }
    }
}

/// Weights of the normalized cost terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub outline: f64,
    pub packing: f64,
    pub wirelength: f64,
    pub delay: f64,
    pub peak_temp: f64,
    pub power: f64,
    pub volumes: f64,
    /// tsc mode only.
    pub correlation: f64,
    /// tsc mode only.
    pub entropy: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            outline: 4.0,
            packing: 1.0,
            wirelength: 1.0,
            delay: 1.0,
            peak_temp: 1.0,
            power: 1.0,
            volumes: 1.0,
            correlation: 1.0,
            entropy: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    /// Activity samples per stability map.
    pub m: usize,
    /// Standard deviation of each module's power as a fraction of its mean.
    pub std_fraction: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { m: 100, std_fraction: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardenParams {
    /// TSVs per inserted dummy island.
    pub island_tsv_count: usize,
    /// Target stability over both dies instead of die 1 only.
    pub whole_stack: bool,
    /// Island sites are searched this many bins around the chosen bin.
    pub search_radius: usize,
    /// Upper bound on insertions.
    pub max_steps: usize,
    /// Restrict the stability target to these modules' footprints.
    pub focus: Vec<String>,
    /// Activity boost of attacked modules, in standard deviations.
    pub attack_sigma: f64,
}

impl Default for HardenParams {
    fn default() -> Self {
        Self {
            island_tsv_count: 9,
            whole_stack: false,
            search_radius: 1,
            max_steps: 64,
            focus: Vec::new(),
            attack_sigma: 3.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Die outline width, µm.
    pub outline_w: f64,
    /// Die outline height, µm.
    pub outline_h: f64,
    /// Grid for verification solves, sampling and reported maps.
    pub grid_nx: usize,
    pub grid_ny: usize,
    /// Grid for the in-loop estimate.
    pub loop_grid_nx: usize,
    pub loop_grid_ny: usize,
    pub seed: u64,
    /// Total power at 1.0 V when module powers are synthesized, W.
    pub total_power: f64,
    /// Area scale applied to the benchmark modules.
    pub scale_factor: f64,
    pub stack: StackModel,
    pub solver: SolverOptions,
    pub entropy: EntropyOptions,
    pub tech: TechParams,
    pub volumes: VolumeParams,
    pub tsv: TsvGeometry,
    pub anneal: AnnealParams,
    pub weights: CostWeights,
    pub sampling: SamplingParams,
    pub harden: HardenParams,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            outline_w: 4000.0,
            outline_h: 4000.0,
            grid_nx: 64,
            grid_ny: 64,
            loop_grid_nx: 32,
            loop_grid_ny: 32,
            seed: 1,
            total_power: 7.83,
            scale_factor: 10.0,
            stack: StackModel::default(),
            solver: SolverOptions::default(),
            entropy: EntropyOptions::default(),
            tech: TechParams::default(),
            volumes: VolumeParams::default(),
            tsv: TsvGeometry::default(),
            anneal: AnnealParams::default(),
            weights: CostWeights::default(),
            sampling: SamplingParams::default(),
            harden: HardenParams::default(),
        }
    }
}

impl EngineConfig {
    pub fn outline(&self) -> (f64, f64) {
        (self.outline_w, self.outline_h)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.grid_nx, self.grid_ny)
    }

    pub fn loop_grid(&self) -> (usize, usize) {
        (self.loop_grid_nx, self.loop_grid_ny)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        for (name, v) in [
            ("weights.outline", w.outline),
            ("weights.packing", w.packing),
            ("weights.wirelength", w.wirelength),
            ("weights.delay", w.delay),
            ("weights.peak_temp", w.peak_temp),
            ("weights.power", w.power),
            ("weights.volumes", w.volumes),
            ("weights.correlation", w.correlation),
            ("weights.entropy", w.entropy),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(format!("{name} must be >= 0, got {v}")));
            }
        }
        let a = &self.anneal;
        if !(a.cooling > 0.0 && a.cooling < 1.0) {
            return Err(Error::domain(format!("anneal.cooling must lie in (0, 1), got {}", a.cooling)));
        }
        if !(a.initial_accept > 0.0 && a.initial_accept < 1.0) {
            return Err(Error::domain(format!("anneal.initial_accept must lie in (0, 1), got {}", a.initial_accept)));
        }
        if !(a.delta >= 0.0) || !(0.0..=1.0).contains(&a.design_rule_bias) || !(a.moves_per_block > 0.0) {
            return Err(Error::domain("anneal.delta, anneal.design_rule_bias or anneal.moves_per_block out of range"));
        }
        if self.sampling.m < 2 {
            return Err(Error::domain(format!("sampling.m must be >= 2, got {}", self.sampling.m)));
        }
        if !(self.sampling.std_fraction >= 0.0) {
            return Err(Error::domain("sampling.std_fraction must be >= 0"));
        }
        if self.grid_nx < 2 || self.grid_ny < 2 || self.loop_grid_nx < 2 || self.loop_grid_ny < 2 {
            return Err(Error::domain("grid dims must be at least 2x2"));
        }
        if !(self.outline_w > 0.0 && self.outline_h > 0.0) {
            return Err(Error::domain("outline must be positive"));
        }
        if !(self.scale_factor >= 1.0) {
            return Err(Error::domain(format!("scale_factor must be >= 1, got {}", self.scale_factor)));
        }
        if !(self.total_power >= 0.0) {
            return Err(Error::domain("total_power must be >= 0"));
        }
        if self.harden.island_tsv_count == 0 {
            return Err(Error::domain("harden.island_tsv_count must be >= 1"));
        }
        self.stack.validate()
    }

    /// Every key with its current value, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        let mut out = String::new();
        for (k, v) in lines {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Parse a config file on top of the defaults and validate the result.
pub fn parse_config(text: &str) -> Result<EngineConfig> {
    let mut root = serde_json::to_value(EngineConfig::default())?;
    for (no, raw) in text.lines().enumerate() {
        let line_no = no + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, val) = line.split_once('=').ok_or_else(|| Error::parse(line_no, "expected `key = value`"))?;
        let (key, val) = (key.trim(), val.trim());
        if key.is_empty() {
            return Err(Error::parse(line_no, "empty key"));
        }
        let slot = lookup(&mut root, key).ok_or_else(|| Error::parse(line_no, format!("unknown key `{key}`")))?;
        let parsed = serde_json::from_str::<Value>(val).unwrap_or_else(|_| Value::String(val.to_string()));
        let previous = std::mem::replace(slot, parsed);
        if matches!(previous, Value::Object(_)) {
            return Err(Error::parse(line_no, format!("`{key}` is a section, not a value")));
        }
        if let Err(e) = serde_json::from_value::<EngineConfig>(root.clone()) {
            return Err(Error::parse(line_no, format!("bad value for `{key}`: {e}")));
        }
    }
    let cfg: EngineConfig = serde_json::from_value(root)?;
    cfg.validate()?;
    Ok(cfg)
}

fn lookup<'a>(root: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    let mut cur = root;
    for part in key.split('.') {
        cur = match cur {
            Value::Object(map) => map.get_mut(part)?,
            _ => return None,
        };
    }
    Some(cur)
}
