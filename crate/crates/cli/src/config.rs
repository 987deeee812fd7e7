//! Sectioned `key = value` run configuration and the flat parameter file.

use std::collections::HashMap;
use std::fmt::Write as _;

use bdc_estim::bfgs::TrainConfig;
use bdc_estim::cfnn::InitScheme;
use bdc_estim::estimator::{
    DatasetConfig, ExperimentConfig, MotorSource, NetworkConfig, NoiseConfig, Thresholds, DEFAULT_NOISE_FRACTION,
};
use bdc_estim::motor::{CalibrationTargets, FixedParams, MotorParams, MotorState};
use bdc_estim::simulate::{DutyProfile, DutySegment};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    /// 1-based line number; 0 when the problem is not tied to a line.
    pub line: usize,
    pub message: String,
}

impl ConfigError {
    fn new(line: usize, message: impl Into<String>) -> Self {
        Self {
            line,
            message: message.into(),
        }
    }
}

pub const SECTIONS: [&str; 7] = ["motor", "duty", "noise", "dataset", "network", "train", "eval"];

/// File form of an experiment plus reporting options.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub thresholds: Thresholds,
    /// Added to temperatures in human-facing output only.
    pub ambient: f64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut sections = parse_sections(text)?;
        let mut take = |name: &str| {
            sections.remove(name).unwrap_or_else(|| Section {
                name: name.to_owned(),
                ..Section::default()
            })
        };
        let mut motor = take("motor");
        let mut duty = take("duty");
        let mut noise = take("noise");
        let mut dataset = take("dataset");
        let mut network = take("network");
        let mut train = take("train");
        let mut eval = take("eval");

        let defaults = ExperimentConfig::default();
        let source = motor.word("source", "calibrated")?;
        let mut fixed = FixedParams::default();
        motor.number_into("v_rated", &mut fixed.v_rated)?;
        motor.number_into("p_rated", &mut fixed.p_rated)?;
        motor.number_into("t_l_rated", &mut fixed.t_l_rated)?;
        motor.number_into("r_a0", &mut fixed.r_a0)?;
        motor.number_into("l_a", &mut fixed.l_a)?;
        motor.number_into("alpha_cu", &mut fixed.alpha_cu)?;
        motor.number_into("k_ir", &mut fixed.k_ir)?;
        motor.number_into("k_0", &mut fixed.k_0)?;
        motor.number_into("k_t", &mut fixed.k_t)?;
        motor.number_into("h", &mut fixed.h)?;
        let ambient = motor.number("ambient")?.unwrap_or(0.0);
        let motor_source = match source.as_str() {
            "calibrated" => {
                let mut targets = CalibrationTargets::default();
                motor.number_into("omega_ss", &mut targets.omega_ss)?;
                motor.number_into("theta_ss", &mut targets.theta_ss)?;
                motor.number_into("mech_time_constant", &mut targets.mech_time_constant)?;
                MotorSource::Calibrated { fixed, targets }
            }
            "params" => {
                let k_e = motor.required_number("k_e")?;
                let j = motor.required_number("j")?;
                let b = motor.required_number("b")?;
                MotorSource::Params(fixed.with_mechanics(k_e, j, b))
            }
            other => {
                return Err(ConfigError::new(
                    motor.line_of("source"),
                    format!("[motor] source must be `calibrated` or `params`, got `{other}`"),
                ))
            }
        };
        motor.finish()?;

        let segments = duty.all("segment");
        let profile = if segments.is_empty() {
            let duration = duty.number("duration")?.unwrap_or(defaults.duty.total_duration());
            let v_a = duty.number("v_a")?.unwrap_or(fixed.v_rated);
            let t_l = duty.number("t_l")?.unwrap_or(fixed.t_l_rated);
            DutyProfile::s1(duration, v_a, t_l)
        } else {
            for key in ["duration", "v_a", "t_l"] {
                if let Some(line) = duty.find(key) {
                    return Err(ConfigError::new(
                        line,
                        format!("[duty] `{key}` cannot be combined with `segment`"),
                    ));
                }
            }
            let mut parsed = Vec::with_capacity(segments.len());
            for (line, value) in segments {
                let nums = parse_list(&value).map_err(|m| ConfigError::new(line, m))?;
                let [duration, v_a, t_l] = nums[..] else {
                    return Err(ConfigError::new(line, "segment needs `duration, v_a, t_l`"));
                };
                parsed.push(DutySegment { duration, v_a, t_l });
            }
            DutyProfile::new(parsed)
        };
        let dt = duty.number("dt")?.unwrap_or(defaults.dt);
        let record_every = duty.count("record_every")?.unwrap_or(defaults.record_every);
        let init_state = MotorState::new(
            duty.number("i_a0")?.unwrap_or(0.0),
            duty.number("omega0")?.unwrap_or(0.0),
            duty.number("theta0")?.unwrap_or(0.0),
        );
        duty.finish()?;

        let rated_current = fixed.p_rated / fixed.v_rated;
        let noise_cfg = NoiseConfig {
            sigma_v: noise
                .number("sigma_v")?
                .unwrap_or(DEFAULT_NOISE_FRACTION * fixed.v_rated),
            sigma_i: noise
                .number("sigma_i")?
                .unwrap_or(DEFAULT_NOISE_FRACTION * rated_current),
            seed: noise.required_seed("seed")?,
        };
        noise.finish()?;

        let dataset_cfg = DatasetConfig {
            decimate: dataset.count("decimate")?.unwrap_or(defaults.dataset.decimate),
            delay_taps: dataset.count("delay_taps")?.unwrap_or(defaults.dataset.delay_taps),
        };
        dataset.finish()?;

        let hidden = match network.get("hidden") {
            Some((line, value)) => {
                let nums = parse_list(&value).map_err(|m| ConfigError::new(line, m))?;
                let mut sizes = Vec::with_capacity(nums.len());
                for n in nums {
                    if n.fract() != 0.0 || n < 1.0 {
                        return Err(ConfigError::new(line, "hidden layer sizes must be positive integers"));
                    }
                    sizes.push(n as usize);
                }
                sizes
            }
            None => defaults.network.hidden.clone(),
        };
        let cascade = network.boolean("cascade")?.unwrap_or(defaults.network.cascade);
        let init_seed = network.required_seed("init_seed")?;
        let init =
            match network.get("init") {
                None => InitScheme::UniformScaled,
                Some((_, v)) if v == "uniform" => InitScheme::UniformScaled,
                Some((line, v)) => InitScheme::Constant(parse_number(&v).map_err(|m| {
                    ConfigError::new(line, format!("[network] init must be `uniform` or a number: {m}"))
                })?),
            };
        network.finish()?;

        let d = TrainConfig::default();
        let train_cfg = TrainConfig {
            max_iterations: train.count("max_iterations")?.unwrap_or(d.max_iterations),
            grad_tol: train.number("grad_tol")?.unwrap_or(d.grad_tol),
            loss_goal: train.number("loss_goal")?.unwrap_or(d.loss_goal),
            wolfe_c1: train.number("wolfe_c1")?.unwrap_or(d.wolfe_c1),
            wolfe_c2: train.number("wolfe_c2")?.unwrap_or(d.wolfe_c2),
            max_line_search_steps: train.count("max_line_search_steps")?.unwrap_or(d.max_line_search_steps),
            curvature_eps: train.number("curvature_eps")?.unwrap_or(d.curvature_eps),
        };
        let train_line = train.header_line;
        train.finish()?;

        let t = Thresholds::default();
        let window_line = eval.line_of("window_fraction");
        let window_fraction = eval.number("window_fraction")?.unwrap_or(defaults.window_fraction);
        let thresholds = Thresholds {
            speed_rpm: eval.number("speed_rpm")?.unwrap_or(t.speed_rpm),
            temperature: eval.number("temperature")?.unwrap_or(t.temperature),
            resistance: eval.number("resistance")?.unwrap_or(t.resistance),
            speed_percent: eval.number("speed_percent")?.unwrap_or(t.speed_percent),
            temperature_percent: eval.number("temperature_percent")?.unwrap_or(t.temperature_percent),
            resistance_percent: eval.number("resistance_percent")?.unwrap_or(t.resistance_percent),
        };
        eval.finish()?;

        let experiment = ExperimentConfig {
            motor: motor_source,
            duty: profile,
            init_state,
            dt,
            record_every,
            noise: noise_cfg,
            dataset: dataset_cfg,
            network: NetworkConfig {
                hidden,
                cascade,
                init_seed,
                init,
            },
            train: train_cfg,
            window_fraction,
        };
        if !(window_fraction > 0.0 && window_fraction <= 0.5) {
            return Err(ConfigError::new(
                window_line,
                "[eval] window_fraction must be in (0, 0.5]",
            ));
        }
        if experiment.train.validate().is_err() {
            return Err(ConfigError::new(
                train_line,
                "[train] invalid settings (need 0 < wolfe_c1 < wolfe_c2 < 1 and positive limits)",
            ));
        }
        Ok(Self {
            experiment,
            thresholds,
            ambient,
        })
    }

    /// Sets every seed to `seed`.
    pub fn override_seeds(&mut self, seed: u64) {
        self.experiment.noise.seed = seed;
        self.experiment.network.init_seed = seed;
    }

    /// Every setting, defaults included, in a form [`RunConfig::parse`] reads
    /// back to an identical configuration.
    pub fn resolved(&self) -> String {
        let e = &self.experiment;
        let mut out = String::new();
        let kv = |out: &mut String, k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        out.push_str("[motor]\n");
        let (fixed, extra): (FixedParams, Vec<(&str, f64)>) = match &e.motor {
            MotorSource::Calibrated { fixed, targets } => (
                *fixed,
                vec![
                    ("omega_ss", targets.omega_ss),
                    ("theta_ss", targets.theta_ss),
                    ("mech_time_constant", targets.mech_time_constant),
                ],
            ),
            MotorSource::Params(p) => (FixedParams::from(*p), vec![("k_e", p.k_e), ("j", p.j), ("b", p.b)]),
        };
        let source = match e.motor {
            MotorSource::Calibrated { .. } => "calibrated",
            MotorSource::Params(_) => "params",
        };
        kv(&mut out, "source", source.into());
        for (k, v) in [
            ("v_rated", fixed.v_rated),
            ("p_rated", fixed.p_rated),
            ("t_l_rated", fixed.t_l_rated),
            ("r_a0", fixed.r_a0),
            ("l_a", fixed.l_a),
            ("alpha_cu", fixed.alpha_cu),
            ("k_ir", fixed.k_ir),
            ("k_0", fixed.k_0),
            ("k_t", fixed.k_t),
            ("h", fixed.h),
        ]
        .into_iter()
        .chain(extra)
        {
            kv(&mut out, k, fmt_num(v));
        }
        kv(&mut out, "ambient", fmt_num(self.ambient));

        out.push_str("\n[duty]\n");
        for s in &e.duty.segments {
            kv(
                &mut out,
                "segment",
                format!("{}, {}, {}", fmt_num(s.duration), fmt_num(s.v_a), fmt_num(s.t_l)),
            );
        }
        kv(&mut out, "dt", fmt_num(e.dt));
        kv(&mut out, "record_every", e.record_every.to_string());
        kv(&mut out, "i_a0", fmt_num(e.init_state.i_a));
        kv(&mut out, "omega0", fmt_num(e.init_state.omega));
        kv(&mut out, "theta0", fmt_num(e.init_state.theta));

        out.push_str("\n[noise]\n");
        kv(&mut out, "sigma_v", fmt_num(e.noise.sigma_v));
        kv(&mut out, "sigma_i", fmt_num(e.noise.sigma_i));
        kv(&mut out, "seed", e.noise.seed.to_string());

        out.push_str("\n[dataset]\n");
        kv(&mut out, "decimate", e.dataset.decimate.to_string());
        kv(&mut out, "delay_taps", e.dataset.delay_taps.to_string());

        out.push_str("\n[network]\n");
        let hidden: Vec<String> = e.network.hidden.iter().map(|h| h.to_string()).collect();
        kv(&mut out, "hidden", hidden.join(", "));
        kv(&mut out, "cascade", e.network.cascade.to_string());
        kv(&mut out, "init_seed", e.network.init_seed.to_string());
        let init = match e.network.init {
            InitScheme::UniformScaled => "uniform".to_owned(),
            InitScheme::Constant(c) => fmt_num(c),
        };
        kv(&mut out, "init", init);

        out.push_str("\n[train]\n");
        let t = &e.train;
        kv(&mut out, "max_iterations", t.max_iterations.to_string());
        kv(&mut out, "grad_tol", fmt_num(t.grad_tol));
        kv(&mut out, "loss_goal", fmt_num(t.loss_goal));
        kv(&mut out, "wolfe_c1", fmt_num(t.wolfe_c1));
        kv(&mut out, "wolfe_c2", fmt_num(t.wolfe_c2));
        kv(&mut out, "max_line_search_steps", t.max_line_search_steps.to_string());
        kv(&mut out, "curvature_eps", fmt_num(t.curvature_eps));

        out.push_str("\n[eval]\n");
        let th = &self.thresholds;
        kv(&mut out, "window_fraction", fmt_num(e.window_fraction));
        kv(&mut out, "speed_rpm", fmt_num(th.speed_rpm));
        kv(&mut out, "temperature", fmt_num(th.temperature));
        kv(&mut out, "resistance", fmt_num(th.resistance));
        kv(&mut out, "speed_percent", fmt_num(th.speed_percent));
        kv(&mut out, "temperature_percent", fmt_num(th.temperature_percent));
        kv(&mut out, "resistance_percent", fmt_num(th.resistance_percent));
        out
    }
}

/// Shortest decimal form that parses back to the same `f64`.
pub fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

fn parse_number(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("`{}` is not a number", s.trim()))?;
    if !v.is_finite() {
        return Err(format!("`{}` is not finite", s.trim()));
    }
    Ok(v)
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(parse_number).collect()
}

fn strip_comment(line: &str) -> &str {
    line.split_once('#').map_or(line, |(a, _)| a).trim()
}

#[derive(Debug, Default)]
struct Section {
    name: String,
    header_line: usize,
    /// `(line, key, value)`; consumed entries are removed.
    entries: Vec<(usize, String, String)>,
}

fn parse_sections(text: &str) -> Result<HashMap<String, Section>, ConfigError> {
    let mut sections: HashMap<String, Section> = HashMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw);
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::new(line, "malformed section header"))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::new(line, format!("unknown section [{name}]")));
            }
            if sections.contains_key(name) {
                return Err(ConfigError::new(line, format!("section [{name}] repeated")));
            }
            sections.insert(
                name.to_owned(),
                Section {
                    name: name.to_owned(),
                    header_line: line,
                    entries: Vec::new(),
                },
            );
            current = Some(name.to_owned());
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::new(line, format!("expected `key = value`, got `{content}`")))?;
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(ConfigError::new(line, format!("malformed key `{key}`")));
        }
        let Some(section) = current.as_ref() else {
            return Err(ConfigError::new(
                line,
                format!("`{key}` appears before any section header"),
            ));
        };
        let section = sections.get_mut(section).expect("current section exists");
        if key != "segment" && section.entries.iter().any(|(_, k, _)| k == key) {
            return Err(ConfigError::new(line, format!("[{}] `{key}` set twice", section.name)));
        }
        section.entries.push((line, key.to_owned(), value.trim().to_owned()));
    }
    Ok(sections)
}

impl Section {
    fn find(&self, key: &str) -> Option<usize> {
        self.entries.iter().find(|(_, k, _)| k == key).map(|e| e.0)
    }

    fn line_of(&self, key: &str) -> usize {
        self.find(key).unwrap_or(self.header_line)
    }

    fn get(&mut self, key: &str) -> Option<(usize, String)> {
        let pos = self.entries.iter().position(|(_, k, _)| k == key)?;
        let (line, _, value) = self.entries.remove(pos);
        Some((line, value))
    }

    fn all(&mut self, key: &str) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        while let Some(e) = self.get(key) {
            out.push(e);
        }
        out
    }

    fn word(&mut self, key: &str, default: &str) -> Result<String, ConfigError> {
        Ok(self.get(key).map_or_else(|| default.to_owned(), |(_, v)| v))
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, ConfigError> {
        self.get(key)
            .map(|(line, v)| {
                parse_number(&v).map_err(|m| ConfigError::new(line, format!("[{}] {key}: {m}", self.name)))
            })
            .transpose()
    }

    fn number_into(&mut self, key: &str, slot: &mut f64) -> Result<(), ConfigError> {
        if let Some(v) = self.number(key)? {
            *slot = v;
        }
        Ok(())
    }

    fn required_number(&mut self, key: &str) -> Result<f64, ConfigError> {
        let header = self.header_line;
        self.number(key)?
            .ok_or_else(|| ConfigError::new(header, format!("[{}] `{key}` is required", self.name)))
    }

    fn count(&mut self, key: &str) -> Result<Option<usize>, ConfigError> {
        self.get(key)
            .map(|(line, v)| {
                v.parse::<usize>().map_err(|_| {
                    ConfigError::new(
                        line,
                        format!("[{}] {key}: `{v}` is not a non-negative integer", self.name),
                    )
                })
            })
            .transpose()
    }

    fn required_seed(&mut self, key: &str) -> Result<u64, ConfigError> {
        let header = self.header_line;
        let (line, v) = self
            .get(key)
            .ok_or_else(|| ConfigError::new(header, format!("[{}] `{key}` is required", self.name)))?;
        v.parse::<u64>()
            .map_err(|_| ConfigError::new(line, format!("[{}] {key}: `{v}` is not a valid seed", self.name)))
    }

    fn boolean(&mut self, key: &str) -> Result<Option<bool>, ConfigError> {
        self.get(key)
            .map(|(line, v)| match v.as_str() {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(ConfigError::new(
                    line,
                    format!("[{}] {key}: expected true or false", self.name),
                )),
            })
            .transpose()
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.entries.first() {
            Some((line, key, _)) => Err(ConfigError::new(*line, format!("[{}] unknown key `{key}`", self.name))),
            None => Ok(()),
        }
    }
}

/// Reads a flat `name = number` motor parameter file.
pub fn parse_params(text: &str) -> Result<MotorParams, ConfigError> {
    let mut values: HashMap<&str, f64> = HashMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw);
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| ConfigError::new(line, format!("expected `name = number`, got `{content}`")))?;
        let key = key.trim();
        let Some(name) = MotorParams::FIELD_NAMES.iter().find(|n| **n == key) else {
            return Err(ConfigError::new(line, format!("unknown parameter `{key}`")));
        };
        let v = parse_number(value).map_err(|m| ConfigError::new(line, format!("{key}: {m}")))?;
        if values.insert(name, v).is_some() {
            return Err(ConfigError::new(line, format!("`{key}` set twice")));
        }
    }
    let mut params = MotorParams::nominal();
    for name in MotorParams::FIELD_NAMES {
        let v = values
            .get(name)
            .ok_or_else(|| ConfigError::new(0, format!("missing parameter `{name}`")))?;
        *params.field_mut(name).expect("known field") = *v;
    }
    Ok(params)
}

pub fn write_params(params: &MotorParams) -> String {
    let mut out = String::from("# motor parameters, SI units\n");
    for (name, v) in params.fields() {
        let _ = writeln!(out, "{name} = {}", fmt_num(v));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[noise]\nseed = 1\n[network]\ninit_seed = 7\n";

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.experiment, ExperimentConfig::default());
        assert_eq!(c.thresholds, Thresholds::default());
    }

    #[test]
    fn resolved_round_trips() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        let again = RunConfig::parse(&c.resolved()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.resolved(), again.resolved());
    }

    #[test]
    fn seeds_are_mandatory() {
        let err = RunConfig::parse("[network]\ninit_seed = 7\n").unwrap_err();
        assert!(err.message.contains("seed"), "{err}");
        let err = RunConfig::parse("[noise]\nseed = 1\n").unwrap_err();
        assert!(err.message.contains("init_seed"), "{err}");
    }

    #[test]
    fn unknown_key_names_line() {
        let err = RunConfig::parse("[noise]\nseed = 1\nsigma = 3\n[network]\ninit_seed = 2\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("sigma"));
    }

    #[test]
    fn malformed_line_names_line() {
        let err = RunConfig::parse("[noise]\nseed = 1\n\nnonsense\n").unwrap_err();
        assert_eq!(err.line, 4);
    }

    #[test]
    fn unknown_section_rejected() {
        let err = RunConfig::parse("[extra]\n").unwrap_err();
        assert_eq!(err.line, 1);
    }

    #[test]
    fn params_source_needs_mechanics() {
        let text = format!("[motor]\nsource = params\nk_e = 8\nj = 1\n{MINIMAL}");
        let err = RunConfig::parse(&text).unwrap_err();
        assert!(err.message.contains("`b`"), "{err}");
    }

    #[test]
    fn segments_parse() {
        let text =
            format!("[duty]\nsegment = 10, 240, 11\nsegment = 5.5, 0, 0\ndt = 0.001\nrecord_every = 500\n{MINIMAL}");
        let c = RunConfig::parse(&text).unwrap();
        assert_eq!(c.experiment.duty.segments.len(), 2);
        assert_eq!(c.experiment.duty.segments[1].duration, 5.5);
    }

    #[test]
    fn params_file_round_trips() {
        let p = MotorParams::nominal();
        assert_eq!(parse_params(&write_params(&p)).unwrap(), p);
    }

    #[test]
    fn params_file_rejects_unknown_key() {
        let mut text = write_params(&MotorParams::nominal());
        text.push_str("k_x = 1\n");
        let err = parse_params(&text).unwrap_err();
        assert_eq!(err.line, 15);
    }
}
