//! Experiment configuration: a line-oriented text format with named
//! `[section]` headers and `key = value` pairs. `#` starts a comment. The
//! `[claim]` section may repeat, one per portfolio leg.
//!
//! Validation collects *every* problem (unknown sections/keys, missing
//! fields, unparsable values) instead of stopping at the first, and each
//! message carries its section.key path.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use deep_xva::bsde::{ControlInput, SolverConfig, XiInit};
use deep_xva::market::{derive_seed, MarketModel, Scheme, TimeGrid};
use deep_xva::xva::{CollateralSpec, EuropeanClaim, XvaConfig, XvaRates};
use ndarray::Array2;

#[derive(Debug, Clone, PartialEq)]
pub struct MarketSection {
    pub dim: usize,
    pub initial: Vec<f64>,
    pub rate: Vec<f64>,
    pub sigma: Vec<f64>,
    pub correlation: Correlation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Correlation {
    Identity,
    Flat(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PayoffKind {
    Forward,
    Call,
    BasketCall,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClaimSection {
    pub kind: PayoffKind,
    pub strike: f64,
    pub maturity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatesSection {
    pub r: f64,
    pub funding_lend: f64,
    pub funding_borrow: f64,
    pub collateral_lend: f64,
    pub collateral_borrow: f64,
    pub lambda_bank: f64,
    pub lambda_cpty: f64,
    pub recovery_bank: f64,
    pub recovery_cpty: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollateralSection {
    pub enabled: bool,
    pub threshold_receive: f64,
    pub threshold_post: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSection {
    pub hidden: Vec<usize>,
    pub xva_hidden: Vec<usize>,
    pub xva_input: ControlInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSection {
    pub steps: usize,
    pub batch: usize,
    pub outer_paths: usize,
    pub iterations: usize,
    pub xva_iterations: usize,
    pub seed: u64,
    pub scheme: Scheme,
    pub learning_rate: Option<f64>,
    pub xi_init: XiInit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputsSection {
    pub directory: PathBuf,
    pub collateral_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub market: MarketSection,
    pub claims: Vec<ClaimSection>,
    pub rates: RatesSection,
    pub collateral: CollateralSection,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub outputs: OutputsSection,
}

// seed tags for the independent random streams of one experiment
const TAG_CLAIM_TRAIN: u64 = 0x10;
const TAG_OUTER: u64 = 0x20;
const TAG_XVA_TRAIN: u64 = 0x30;

impl ExperimentConfig {
    pub fn market_model(&self) -> deep_xva::Result<MarketModel> {
        let d = self.market.dim;
        let corr = match self.market.correlation {
            Correlation::Identity => Array2::eye(d),
            Correlation::Flat(rho) => {
                Array2::from_shape_fn((d, d), |(i, j)| if i == j { 1.0 } else { rho })
            }
        };
        MarketModel::new(
            self.market.initial.clone(),
            self.market.rate.clone(),
            self.market.sigma.clone(),
            corr,
        )
    }

    pub fn time_grid(&self) -> deep_xva::Result<TimeGrid> {
        TimeGrid::new(self.claims[0].maturity, self.training.steps)
    }

    pub fn european_claims(&self) -> Vec<EuropeanClaim> {
        self.claims
            .iter()
            .map(|c| match c.kind {
                PayoffKind::Forward => EuropeanClaim::forward(c.strike, c.maturity),
                PayoffKind::Call => EuropeanClaim::call(c.strike, c.maturity),
                PayoffKind::BasketCall => EuropeanClaim::basket_call(c.strike, c.maturity),
            })
            .collect()
    }

    pub fn xva_rates(&self) -> deep_xva::Result<XvaRates> {
        XvaRates::constants(
            self.rates.r,
            self.rates.funding_lend,
            self.rates.funding_borrow,
            self.rates.collateral_lend,
            self.rates.collateral_borrow,
            self.rates.lambda_bank,
            self.rates.lambda_cpty,
            self.rates.recovery_bank,
            self.rates.recovery_cpty,
        )
    }

    pub fn collateral_spec(&self) -> deep_xva::Result<CollateralSpec> {
        if self.collateral.enabled {
            CollateralSpec::with_thresholds(
                self.collateral.threshold_receive,
                self.collateral.threshold_post,
            )
        } else {
            Ok(CollateralSpec::none())
        }
    }

    /// Solver settings for the clean-value training of claim `index`.
    pub fn claim_solver(&self, index: usize) -> SolverConfig {
        let mut config = SolverConfig::new(
            self.training.batch,
            self.training.iterations,
            self.network.hidden.clone(),
            derive_seed(self.training.seed, TAG_CLAIM_TRAIN + index as u64),
        );
        config.scheme = self.training.scheme;
        if let Some(lr) = self.training.learning_rate {
            config.learning_rate = lr;
        }
        config.xi_init = self.training.xi_init.clone();
        config
    }

    pub fn outer_seed(&self) -> u64 {
        derive_seed(self.training.seed, TAG_OUTER)
    }

    pub fn xva_config(&self) -> XvaConfig {
        let mut solver = SolverConfig::new(
            self.training.batch,
            self.training.xva_iterations,
            self.network.xva_hidden.clone(),
            derive_seed(self.training.seed, TAG_XVA_TRAIN),
        );
        solver.scheme = self.training.scheme;
        if let Some(lr) = self.training.learning_rate {
            solver.learning_rate = lr;
        }
        let mut xcfg = XvaConfig::new(solver, self.training.outer_paths, self.outer_seed());
        xcfg.scheme = self.training.scheme;
        xcfg.input = self.network.xva_input;
        xcfg
    }
}

// ------------------------------------------------------------------ parsing

struct RawSection {
    name: String,
    line: usize,
    entries: Vec<(String, String, usize)>,
}

fn split_sections(text: &str, errors: &mut Vec<String>) -> Vec<RawSection> {
    let mut sections: Vec<RawSection> = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                errors.push(format!("line {line_no}: malformed section header '{line}'"));
                continue;
            }
            sections.push(RawSection {
                name: line[1..line.len() - 1].trim().to_string(),
                line: line_no,
                entries: Vec::new(),
            });
        } else if let Some(eq) = line.find('=') {
            let key = line[..eq].trim().to_string();
            let value = line[eq + 1..].trim().to_string();
            match sections.last_mut() {
                Some(section) => section.entries.push((key, value, line_no)),
                None => errors.push(format!(
                    "line {line_no}: '{key}' appears before any [section] header"
                )),
            }
        } else {
            errors.push(format!("line {line_no}: expected 'key = value', got '{line}'"));
        }
    }
    sections
}

/// Typed access to one section's keys; records every problem and which keys
/// were consumed so leftovers can be reported as unknown.
struct Fields<'a> {
    section: String,
    entries: &'a [(String, String, usize)],
    used: BTreeSet<String>,
    errors: &'a mut Vec<String>,
}

impl<'a> Fields<'a> {
    fn new(section: &'a RawSection, label: String, errors: &'a mut Vec<String>) -> Fields<'a> {
        Fields {
            section: label,
            entries: &section.entries,
            used: BTreeSet::new(),
            errors,
        }
    }

    fn raw(&mut self, key: &str) -> Option<&'a str> {
        self.used.insert(key.to_string());
        let mut found = None;
        for (k, v, line) in self.entries {
            if k == key {
                if found.is_some() {
                    self.errors
                        .push(format!("{}.{key}: duplicate key (line {line})", self.section));
                }
                found = Some(v.as_str());
            }
        }
        found
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, kind: &str) -> Option<T> {
        let section = self.section.clone();
        match self.raw(key) {
            Some(v) => match v.parse::<T>() {
                Ok(t) => Some(t),
                Err(_) => {
                    self.errors
                        .push(format!("{section}.{key}: cannot parse '{v}' as {kind}"));
                    None
                }
            },
            None => {
                self.errors.push(format!("{section}.{key}: missing"));
                None
            }
        }
    }

    fn opt_parse<T: std::str::FromStr>(&mut self, key: &str, kind: &str) -> Option<Option<T>> {
        let section = self.section.clone();
        match self.raw(key) {
            None => Some(None),
            Some(v) => match v.parse::<T>() {
                Ok(t) => Some(Some(t)),
                Err(_) => {
                    self.errors
                        .push(format!("{section}.{key}: cannot parse '{v}' as {kind}"));
                    None
                }
            },
        }
    }

    fn f64(&mut self, key: &str) -> Option<f64> {
        self.parse(key, "a number")
    }

    fn usize(&mut self, key: &str) -> Option<usize> {
        self.parse(key, "a nonnegative integer")
    }

    fn bool(&mut self, key: &str) -> Option<bool> {
        self.parse(key, "true or false")
    }

    /// Comma-separated list of numbers; a single value broadcasts to `dim`.
    fn f64_list(&mut self, key: &str, dim: usize) -> Option<Vec<f64>> {
        let section = self.section.clone();
        let v = match self.raw(key) {
            Some(v) => v,
            None => {
                self.errors.push(format!("{section}.{key}: missing"));
                return None;
            }
        };
        let parts: std::result::Result<Vec<f64>, _> =
            v.split(',').map(|p| p.trim().parse::<f64>()).collect();
        match parts {
            Err(_) => {
                self.errors
                    .push(format!("{section}.{key}: cannot parse '{v}' as numbers"));
                None
            }
            Ok(xs) if xs.len() == 1 => Some(vec![xs[0]; dim]),
            Ok(xs) if xs.len() == dim => Some(xs),
            Ok(xs) => {
                self.errors.push(format!(
                    "{section}.{key}: got {} values, expected 1 or {dim}",
                    xs.len()
                ));
                None
            }
        }
    }

    fn usize_list(&mut self, key: &str) -> Option<Vec<usize>> {
        let section = self.section.clone();
        let v = self.raw(key)?;
        let parts: std::result::Result<Vec<usize>, _> =
            v.split(',').map(|p| p.trim().parse::<usize>()).collect();
        match parts {
            Ok(xs) if !xs.is_empty() => Some(xs),
            _ => {
                self.errors
                    .push(format!("{section}.{key}: cannot parse '{v}' as integers"));
                None
            }
        }
    }

    fn finish(self) {
        for (k, _, line) in self.entries {
            if !self.used.contains(k) {
                self.errors.push(format!(
                    "{}.{k}: unknown key (line {line})",
                    self.section
                ));
            }
        }
    }
}

/// Parses and validates a config, returning either the typed configuration
/// or the full list of problems found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Vec<String>> {
    let mut errors = Vec::new();
    let sections = split_sections(text, &mut errors);

    for required in ["market", "claim", "rates", "network", "training", "outputs"] {
        if !sections.iter().any(|s| s.name == required) {
            errors.push(format!("missing section [{required}]"));
        }
    }
    for section in &sections {
        match section.name.as_str() {
            "market" | "rates" | "network" | "training" | "outputs" | "collateral" => {
                if sections
                    .iter()
                    .filter(|other| other.name == section.name)
                    .count()
                    > 1
                {
                    errors.push(format!(
                        "section [{}] (line {}) may not repeat",
                        section.name, section.line
                    ));
                }
            }
            "claim" => {}
            other => errors.push(format!(
                "unknown section [{other}] (line {})",
                section.line
            )),
        }
    }
    if !errors.is_empty() && sections.is_empty() {
        return Err(errors);
    }

    let mut market = None;
    if let Some(s) = sections.iter().find(|s| s.name == "market") {
        let mut f = Fields::new(s, "market".into(), &mut errors);
        let dim = f.usize("dim");
        if let Some(dim) = dim {
            let initial = f.f64_list("initial", dim);
            let rate = f.f64_list("rate", dim);
            let sigma = f.f64_list("sigma", dim);
            let corr = match f.raw("correlation") {
                None | Some("identity") => Some(Correlation::Identity),
                Some(v) => match v.strip_prefix("flat:").map(str::parse::<f64>) {
                    Some(Ok(rho)) => Some(Correlation::Flat(rho)),
                    _ => {
                        f.errors.push(format!(
                            "market.correlation: expected 'identity' or 'flat:<rho>', got '{v}'"
                        ));
                        None
                    }
                },
            };
            if let (Some(initial), Some(rate), Some(sigma), Some(correlation)) =
                (initial, rate, sigma, corr)
            {
                market = Some(MarketSection {
                    dim,
                    initial,
                    rate,
                    sigma,
                    correlation,
                });
            }
        }
        f.finish();
    }

    let mut claims = Vec::new();
    for (i, s) in sections.iter().filter(|s| s.name == "claim").enumerate() {
        let mut f = Fields::new(s, format!("claim[{i}]"), &mut errors);
        let kind = match f.raw("kind") {
            Some("forward") => Some(PayoffKind::Forward),
            Some("call") => Some(PayoffKind::Call),
            Some("basket_call") => Some(PayoffKind::BasketCall),
            Some(v) => {
                f.errors.push(format!(
                    "claim[{i}].kind: unrecognized payoff kind '{v}' (forward | call | basket_call)"
                ));
                None
            }
            None => {
                f.errors.push(format!("claim[{i}].kind: missing"));
                None
            }
        };
        let strike = f.f64("strike");
        let maturity = f.f64("maturity");
        if let (Some(kind), Some(strike), Some(maturity)) = (kind, strike, maturity) {
            claims.push(ClaimSection {
                kind,
                strike,
                maturity,
            });
        }
        f.finish();
    }
    if claims.len() > 1 {
        let t0 = claims[0].maturity;
        if claims.iter().any(|c| (c.maturity - t0).abs() > 1e-12) {
            errors.push("claim maturities must all agree (single-horizon portfolio)".into());
        }
    }

    let mut rates = None;
    if let Some(s) = sections.iter().find(|s| s.name == "rates") {
        let mut f = Fields::new(s, "rates".into(), &mut errors);
        let vals = (
            f.f64("r"),
            f.f64("funding_lend"),
            f.f64("funding_borrow"),
            f.f64("collateral_lend"),
            f.f64("collateral_borrow"),
            f.f64("lambda_bank"),
            f.f64("lambda_cpty"),
            f.f64("recovery_bank"),
            f.f64("recovery_cpty"),
        );
        if let (
            Some(r),
            Some(fl),
            Some(fb),
            Some(cl),
            Some(cb),
            Some(lb),
            Some(lc),
            Some(rb),
            Some(rc),
        ) = vals
        {
            rates = Some(RatesSection {
                r,
                funding_lend: fl,
                funding_borrow: fb,
                collateral_lend: cl,
                collateral_borrow: cb,
                lambda_bank: lb,
                lambda_cpty: lc,
                recovery_bank: rb,
                recovery_cpty: rc,
            });
        }
        f.finish();
    }

    let mut collateral = CollateralSection {
        enabled: false,
        threshold_receive: 0.0,
        threshold_post: 0.0,
    };
    if let Some(s) = sections.iter().find(|s| s.name == "collateral") {
        let mut f = Fields::new(s, "collateral".into(), &mut errors);
        let enabled = f.bool("enabled");
        let hr = f.f64("threshold_receive");
        let hp = f.f64("threshold_post");
        if let (Some(enabled), Some(hr), Some(hp)) = (enabled, hr, hp) {
            collateral = CollateralSection {
                enabled,
                threshold_receive: hr,
                threshold_post: hp,
            };
        }
        f.finish();
    }

    let mut network = None;
    if let Some(s) = sections.iter().find(|s| s.name == "network") {
        let mut f = Fields::new(s, "network".into(), &mut errors);
        let hidden = f.usize_list("hidden");
        let xva_hidden = match f.raw("xva_hidden") {
            None => hidden.clone(),
            Some(_) => {
                // re-read through the typed path for error reporting
                let mut g = Fields {
                    section: "network".into(),
                    entries: f.entries,
                    used: BTreeSet::new(),
                    errors: f.errors,
                };
                g.usize_list("xva_hidden")
            }
        };
        let xva_input = match f.raw("xva_input") {
            None | Some("portfolio_value") => Some(ControlInput::Auxiliary),
            Some("asset_state") => Some(ControlInput::AssetState),
            Some(v) => {
                f.errors.push(format!(
                    "network.xva_input: expected 'portfolio_value' or 'asset_state', got '{v}'"
                ));
                None
            }
        };
        if let (Some(hidden), Some(xva_hidden), Some(xva_input)) = (hidden, xva_hidden, xva_input)
        {
            network = Some(NetworkSection {
                hidden,
                xva_hidden,
                xva_input,
            });
        }
        f.finish();
    }

    let mut training = None;
    if let Some(s) = sections.iter().find(|s| s.name == "training") {
        let mut f = Fields::new(s, "training".into(), &mut errors);
        let steps = f.usize("steps");
        let batch = f.usize("batch");
        let outer = f.usize("outer_paths");
        let iters = f.usize("iterations");
        let xva_iters = f.opt_parse::<usize>("xva_iterations", "a nonnegative integer");
        // seeds are explicit by contract; there is no wall-clock fallback
        let seed = f.parse::<u64>("seed", "an unsigned integer");
        let scheme = match f.raw("scheme") {
            None | Some("exact") => Some(Scheme::Exact),
            Some("euler") => Some(Scheme::Euler),
            Some(v) => {
                f.errors
                    .push(format!("training.scheme: expected 'exact' or 'euler', got '{v}'"));
                None
            }
        };
        let lr = f.opt_parse::<f64>("learning_rate", "a number");
        let xi_init = match f.raw("xi_init") {
            None | Some("pilot") => Some(XiInit::PilotMc { paths: 4096 }),
            Some(v) => match v.strip_prefix("uniform:") {
                Some(rest) => {
                    let parts: Vec<&str> = rest.split(',').collect();
                    match (
                        parts.first().and_then(|p| p.trim().parse::<f64>().ok()),
                        parts.get(1).and_then(|p| p.trim().parse::<f64>().ok()),
                    ) {
                        (Some(lo), Some(hi)) if parts.len() == 2 && lo <= hi => {
                            Some(XiInit::Uniform { lo, hi })
                        }
                        _ => {
                            f.errors.push(format!(
                                "training.xi_init: expected 'pilot' or 'uniform:<lo>,<hi>', got '{v}'"
                            ));
                            None
                        }
                    }
                }
                None => {
                    f.errors.push(format!(
                        "training.xi_init: expected 'pilot' or 'uniform:<lo>,<hi>', got '{v}'"
                    ));
                    None
                }
            },
        };
        if let (
            Some(steps),
            Some(batch),
            Some(outer_paths),
            Some(iterations),
            Some(xva_iterations),
            Some(seed),
            Some(scheme),
            Some(learning_rate),
            Some(xi_init),
        ) = (steps, batch, outer, iters, xva_iters, seed, scheme, lr, xi_init)
        {
            training = Some(TrainingSection {
                steps,
                batch,
                outer_paths,
                iterations,
                xva_iterations: xva_iterations.unwrap_or(iterations),
                seed,
                scheme,
                learning_rate,
                xi_init,
            });
        }
        f.finish();
    }

    let mut outputs = None;
    if let Some(s) = sections.iter().find(|s| s.name == "outputs") {
        let mut f = Fields::new(s, "outputs".into(), &mut errors);
        let dir = match f.raw("directory") {
            Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
            Some(_) => {
                f.errors.push("outputs.directory: must not be empty".into());
                None
            }
            None => {
                f.errors.push("outputs.directory: missing".into());
                None
            }
        };
        let coll_paths = f.opt_parse::<usize>("collateral_paths", "a nonnegative integer");
        if let (Some(directory), Some(coll_paths)) = (dir, coll_paths) {
            outputs = Some(OutputsSection {
                directory,
                collateral_paths: coll_paths.unwrap_or(8),
            });
        }
        f.finish();
    }

    if claims.is_empty() && sections.iter().any(|s| s.name == "claim") {
        // claim sections existed but none parsed; errors already recorded
    }

    match (market, rates, network, training, outputs) {
        (Some(market), Some(rates), Some(network), Some(training), Some(outputs))
            if errors.is_empty() && !claims.is_empty() =>
        {
            let config = ExperimentConfig {
                market,
                claims,
                rates,
                collateral,
                network,
                training,
                outputs,
            };
            if let Err(e) = semantic_checks(&config) {
                return Err(e);
            }
            Ok(config)
        }
        _ => Err(errors),
    }
}

/// Cross-field checks on an otherwise well-formed config.
fn semantic_checks(config: &ExperimentConfig) -> Result<(), Vec<String>> {
    let mut errors = Vec::new();
    if config.market.dim == 0 {
        errors.push("market.dim: must be at least 1".into());
    }
    if config.claims[0].maturity <= 0.0 {
        errors.push("claim.maturity: must be positive".into());
    }
    if config.training.steps == 0 {
        errors.push("training.steps: must be at least 1".into());
    }
    if config.training.batch == 0 {
        errors.push("training.batch: must be at least 1".into());
    }
    if config.training.outer_paths < 2 {
        errors.push("training.outer_paths: must be at least 2".into());
    }
    if config.market_model().is_err() {
        errors.push("market: parameters do not form a valid model".into());
    }
    if config.xva_rates().is_err() {
        errors.push("rates: parameters violate their bounds".into());
    }
    if config.collateral.enabled
        && (config.collateral.threshold_receive < 0.0 || config.collateral.threshold_post < 0.0)
    {
        errors.push("collateral: thresholds must be nonnegative".into());
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}

/// Reads, hashes and parses a config file.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, String), Vec<String>> {
    let bytes = std::fs::read(path)
        .map_err(|e| vec![format!("cannot read config {}: {e}", path.display())])?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| vec![format!("config {} is not valid UTF-8", path.display())])?;
    let config = parse_config(&text)?;
    Ok((config, config_hash(&bytes)))
}

/// SHA-256 of the raw config bytes; changes iff any byte changes.
pub fn config_hash(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const CALL_CONFIG: &str = r#"
# European call, the single-asset reference experiment
[market]
dim = 1
initial = 100.0
rate = 0.01
sigma = 0.25
correlation = identity

[claim]
kind = call
strike = 100.0
maturity = 1.0

[rates]
r = 0.01
funding_lend = 0.01
funding_borrow = 0.01
collateral_lend = 0.01
collateral_borrow = 0.01
lambda_bank = 0.0
lambda_cpty = 0.0
recovery_bank = 0.4
recovery_cpty = 0.3

[network]
hidden = 21, 21

[training]
steps = 200
batch = 64
outer_paths = 2048
iterations = 4000
seed = 1

[outputs]
directory = out
"#;

    #[test]
    fn reference_call_config_parses() {
        let config = parse_config(CALL_CONFIG).unwrap();
        assert_eq!(config.market.dim, 1);
        assert_eq!(config.claims.len(), 1);
        assert_eq!(config.claims[0].kind, PayoffKind::Call);
        assert_eq!(config.training.steps, 200);
        assert_eq!(config.training.iterations, 4000);
        assert_eq!(config.training.xva_iterations, 4000);
        assert_eq!(config.network.hidden, vec![21, 21]);
        assert_eq!(config.network.xva_hidden, vec![21, 21]);
        assert_eq!(config.outputs.collateral_paths, 8);
        assert!(config.market_model().is_ok());
        assert!(config.time_grid().is_ok());
    }

    #[test]
    fn empty_file_lists_every_missing_section() {
        let errors = parse_config("").unwrap_err();
        for section in ["market", "claim", "rates", "network", "training", "outputs"] {
            assert!(
                errors.iter().any(|e| e.contains(&format!("[{section}]"))),
                "no error about [{section}]: {errors:?}"
            );
        }
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let bad = CALL_CONFIG.replace("sigma = 0.25", "volatlity = 0.25");
        let errors = parse_config(&bad).unwrap_err();
        assert!(errors.iter().any(|e| e.contains("volatlity")), "{errors:?}");
        assert!(errors.iter().any(|e| e.contains("market.sigma: missing")));
    }

    #[test]
    fn multiple_errors_are_collected() {
        let bad = CALL_CONFIG
            .replace("steps = 200", "steps = abc")
            .replace("strike = 100.0", "")
            .replace("kind = call", "kind = swaption");
        let errors = parse_config(&bad).unwrap_err();
        assert!(errors.len() >= 3, "{errors:?}");
        assert!(errors.iter().any(|e| e.contains("training.steps")));
        assert!(errors.iter().any(|e| e.contains("strike")));
        assert!(errors.iter().any(|e| e.contains("swaption")));
    }

    #[test]
    fn seed_is_required() {
        let bad = CALL_CONFIG.replace("seed = 1", "");
        let errors = parse_config(&bad).unwrap_err();
        assert!(errors.iter().any(|e| e.contains("training.seed")), "{errors:?}");
    }

    #[test]
    fn claims_may_repeat() {
        let two = CALL_CONFIG.replace(
            "[rates]",
            "[claim]\nkind = forward\nstrike = 95.0\nmaturity = 1.0\n\n[rates]",
        );
        let config = parse_config(&two).unwrap();
        assert_eq!(config.claims.len(), 2);
        assert_eq!(config.claims[1].kind, PayoffKind::Forward);
    }

    #[test]
    fn mismatched_maturities_rejected() {
        let two = CALL_CONFIG.replace(
            "[rates]",
            "[claim]\nkind = forward\nstrike = 95.0\nmaturity = 2.0\n\n[rates]",
        );
        let errors = parse_config(&two).unwrap_err();
        assert!(errors.iter().any(|e| e.contains("maturities")), "{errors:?}");
    }

    #[test]
    fn flat_correlation_and_lists() {
        let cfg = CALL_CONFIG
            .replace("dim = 1", "dim = 3")
            .replace("correlation = identity", "correlation = flat:0.5")
            .replace("initial = 100.0", "initial = 100.0, 90.0, 80.0")
            .replace("kind = call", "kind = basket_call");
        let config = parse_config(&cfg).unwrap();
        assert_eq!(config.market.initial, vec![100.0, 90.0, 80.0]);
        assert_eq!(config.market.rate, vec![0.01; 3]);
        let model = config.market_model().unwrap();
        assert_eq!(model.correlation()[[0, 1]], 0.5);
    }

    #[test]
    fn hash_changes_with_any_byte() {
        let a = config_hash(CALL_CONFIG.as_bytes());
        let b = config_hash(CALL_CONFIG.replace("seed = 1", "seed = 2").as_bytes());
        let c = config_hash(format!("{CALL_CONFIG} ").as_bytes());
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, config_hash(CALL_CONFIG.as_bytes()));
    }
}
