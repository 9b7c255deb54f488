//! The experiment descriptor and its typed, semantically checked form.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{validate, ConfigError, ConfigTree, Field, Kind, Schema};
use crate::distribution::Distribution;
use crate::problem::{LikelihoodModel, ProblemKind};
use crate::solver::{CmaesSettings, SolverSettings, TmcmcSettings};
use crate::variable::{Variable, VariableSpace};

fn model_schema() -> Schema {
    Schema::Tagged {
        tag: "Type",
        common: vec![],
        variants: vec![(
            "Concurrent",
            vec![
                Field::required("Command", Kind::Str),
                Field::default("Result Channel", Kind::Choice(&["Stdout", "File"]), "Stdout"),
                Field::optional("Result File", Kind::Str),
                Field::optional("Timeout", Kind::Real),
            ],
        )],
    }
}

fn problem_schema() -> Schema {
    Schema::Tagged {
        tag: "Type",
        common: vec![Field::optional("Computational Model", Kind::Object(model_schema()))],
        variants: vec![
            ("Optimization", vec![]),
            ("Sampling", vec![]),
            (
                "Bayesian Inference",
                vec![
                    Field::default("Likelihood Model", Kind::Choice(&["Normal"]), "Normal"),
                    Field::required("Reference Data", Kind::RealList),
                    Field::default("Standard Deviation Variable", Kind::Str, "Sigma"),
                ],
            ),
        ],
    }
}

fn variable_schema() -> Schema {
    Schema::Fields(vec![
        Field::required("Name", Kind::Str),
        Field::optional("Lower Bound", Kind::Real),
        Field::optional("Upper Bound", Kind::Real),
        Field::optional("Prior Distribution", Kind::Str),
        Field::optional("Initial Value", Kind::Real),
        Field::optional("Initial Standard Deviation", Kind::Real),
    ])
}

fn distribution_schema() -> Schema {
    Schema::Tagged {
        tag: "Type",
        common: vec![Field::required("Name", Kind::Str)],
        variants: vec![
            (
                "Univariate/Normal",
                vec![
                    Field::required("Mean", Kind::Real),
                    Field::required("Sigma", Kind::Real),
                ],
            ),
            (
                "Univariate/Uniform",
                vec![
                    Field::required("Minimum", Kind::Real),
                    Field::required("Maximum", Kind::Real),
                ],
            ),
        ],
    }
}

/// Descriptor of the `"Solver"` subtree.
pub fn solver_schema() -> Schema {
    Schema::Tagged {
        tag: "Type",
        common: vec![
            Field::required("Population Size", Kind::Integer),
            Field::optional("Max Generations", Kind::Integer),
        ],
        variants: vec![
            (
                "CMAES",
                vec![
                    Field::optional("Min Value Difference Threshold", Kind::Real),
                    Field::default("Value Difference Window", Kind::Integer, 10),
                    Field::optional("Min Step Size", Kind::Real),
                    Field::optional("Target Value", Kind::Real),
                ],
            ),
            (
                "TMCMC",
                vec![
                    Field::default("Covariance Scaling Factor", Kind::Real, 0.04),
                    Field::default("Chain Length", Kind::Integer, 1),
                    Field::default("Target Coefficient Of Variation", Kind::Real, 1.0),
                ],
            ),
        ],
    }
}

/// Descriptor of a whole experiment file.
pub fn experiment_schema() -> Schema {
    Schema::Fields(vec![
        Field::default("Random Seed", Kind::Integer, 0),
        Field::required("Problem", Kind::Object(problem_schema())),
        Field::required("Variables", Kind::ObjectList(variable_schema())),
        Field::default("Distributions", Kind::ObjectList(distribution_schema()), json!([])),
        Field::required("Solver", Kind::Object(solver_schema())),
        Field::default(
            "Termination Criteria",
            Kind::Object(Schema::Fields(vec![
                Field::optional("Max Model Evaluations", Kind::Integer),
                Field::optional("Max Wall Time", Kind::Real),
            ])),
            json!({}),
        ),
        Field::default(
            "File Output",
            Kind::Object(Schema::Fields(vec![Field::default(
                "Keep Checkpoints",
                Kind::Integer,
                0,
            )])),
            json!({}),
        ),
    ])
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResultChannel {
    Stdout,
    File(String),
}

/// An external executable launched once per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    /// Shell-style command line with `{Variable}` placeholders.
    pub command: String,
    pub channel: ResultChannel,
    pub timeout_secs: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EngineCaps {
    pub max_model_evaluations: Option<u64>,
    pub max_wall_time_secs: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSettings {
    /// Number of newest checkpoints kept on disk; 0 keeps all.
    pub keep_checkpoints: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSettings {
    pub kind: ProblemKind,
    pub model: Option<ModelSettings>,
}

/// A validated experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSettings {
    /// The validated tree, defaults applied.
    pub config: ConfigTree,
    pub seed: u64,
    pub problem: ProblemSettings,
    pub space: VariableSpace,
    pub distributions: Vec<Distribution>,
    pub solver: SolverSettings,
    pub caps: EngineCaps,
    pub output: OutputSettings,
}

fn invalid(path: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        reason: reason.into(),
    }
}

fn parse_model(tree: &ConfigTree) -> Result<Option<ModelSettings>, ConfigError> {
    const BASE: &str = "Problem/Computational Model";
    if tree.get(BASE).is_none() {
        return Ok(None);
    }
    let command = tree.string(&format!("{BASE}/Command"))?.to_string();
    if shlex::split(&command).is_none_or(|words| words.is_empty()) {
        return Err(invalid(format!("{BASE}/Command"), "not a valid command line"));
    }
    let channel = match tree.string(&format!("{BASE}/Result Channel"))? {
        "File" => {
            let path = tree
                .string_opt(&format!("{BASE}/Result File"))?
                .ok_or_else(|| ConfigError::MissingRequired(format!("{BASE}/Result File")))?;
            ResultChannel::File(path.to_string())
        }
        _ => ResultChannel::Stdout,
    };
    let timeout_secs = tree.real_opt(&format!("{BASE}/Timeout"))?;
    if timeout_secs.is_some_and(|t| t <= 0.0) {
        return Err(invalid(format!("{BASE}/Timeout"), "must be positive"));
    }
    Ok(Some(ModelSettings {
        command,
        channel,
        timeout_secs,
    }))
}

fn parse_distributions(tree: &ConfigTree) -> Result<Vec<Distribution>, ConfigError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for i in 0..tree.list_len("Distributions") {
        let base = format!("Distributions/{i}");
        let name = tree.string(&format!("{base}/Name"))?.to_string();
        if !seen.insert(name.clone()) {
            return Err(invalid(format!("{base}/Name"), format!("duplicate distribution '{name}'")));
        }
        let dist = match tree.string(&format!("{base}/Type"))? {
            "Univariate/Normal" => Distribution::normal(
                name,
                tree.real(&format!("{base}/Mean"))?,
                tree.real(&format!("{base}/Sigma"))?,
            )
            .ok_or_else(|| invalid(format!("{base}/Sigma"), "must be positive"))?,
            _ => Distribution::uniform(
                name,
                tree.real(&format!("{base}/Minimum"))?,
                tree.real(&format!("{base}/Maximum"))?,
            )
            .ok_or_else(|| invalid(format!("{base}/Maximum"), "must exceed Minimum"))?,
        };
        out.push(dist);
    }
    Ok(out)
}

fn parse_variables(
    tree: &ConfigTree,
    distributions: &[Distribution],
) -> Result<Vec<Variable>, ConfigError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let count = tree.list_len("Variables");
    if count == 0 {
        return Err(invalid("Variables", "at least one variable is required"));
    }
    for i in 0..count {
        let base = format!("Variables/{i}");
        let name = tree.string(&format!("{base}/Name"))?.to_string();
        if !seen.insert(name.clone()) {
            return Err(invalid(format!("{base}/Name"), format!("duplicate variable '{name}'")));
        }
        let mut var = Variable::new(name);
        var.lower_bound = tree.real_opt(&format!("{base}/Lower Bound"))?;
        var.upper_bound = tree.real_opt(&format!("{base}/Upper Bound"))?;
        if let (Some(lo), Some(hi)) = (var.lower_bound, var.upper_bound) {
            if !(lo < hi) {
                return Err(invalid(
                    format!("{base}/Upper Bound"),
                    "must exceed Lower Bound",
                ));
            }
        }
        var.prior_name = tree
            .string_opt(&format!("{base}/Prior Distribution"))?
            .map(str::to_string);
        if let Some(p) = &var.prior_name {
            if !distributions.iter().any(|d| &d.name == p) {
                return Err(invalid(
                    format!("{base}/Prior Distribution"),
                    format!("no distribution named '{p}'"),
                ));
            }
        }
        var.initial_value = tree.real_opt(&format!("{base}/Initial Value"))?;
        var.initial_std_dev = tree.real_opt(&format!("{base}/Initial Standard Deviation"))?;
        if var.initial_std_dev.is_some_and(|s| s <= 0.0) {
            return Err(invalid(
                format!("{base}/Initial Standard Deviation"),
                "must be positive",
            ));
        }
        out.push(var);
    }
    Ok(out)
}

fn parse_solver(tree: &ConfigTree) -> Result<SolverSettings, ConfigError> {
    let population = tree.integer("Solver/Population Size")? as usize;
    if population < 2 {
        return Err(invalid("Solver/Population Size", "must be at least 2"));
    }
    let max_generations = tree.integer_opt("Solver/Max Generations")?;
    Ok(match tree.string("Solver/Type")? {
        "CMAES" => {
            let mut s = CmaesSettings::new(population);
            s.max_generations = max_generations;
            s.min_value_difference = tree.real_opt("Solver/Min Value Difference Threshold")?;
            s.value_difference_window = tree.integer("Solver/Value Difference Window")? as usize;
            if s.value_difference_window == 0 {
                return Err(invalid("Solver/Value Difference Window", "must be at least 1"));
            }
            s.min_step_size = tree.real_opt("Solver/Min Step Size")?;
            s.target_value = tree.real_opt("Solver/Target Value")?;
            SolverSettings::Cmaes(s)
        }
        _ => {
            let mut s = TmcmcSettings::new(population);
            s.max_generations = max_generations;
            s.covariance_scaling = tree.real("Solver/Covariance Scaling Factor")?;
            if s.covariance_scaling <= 0.0 {
                return Err(invalid("Solver/Covariance Scaling Factor", "must be positive"));
            }
            s.chain_length = tree.integer("Solver/Chain Length")? as usize;
            if s.chain_length == 0 {
                return Err(invalid("Solver/Chain Length", "must be at least 1"));
            }
            s.target_cov = tree.real("Solver/Target Coefficient Of Variation")?;
            if s.target_cov <= 0.0 {
                return Err(invalid(
                    "Solver/Target Coefficient Of Variation",
                    "must be positive",
                ));
            }
            SolverSettings::Tmcmc(s)
        }
    })
}

impl ExperimentSettings {
    pub fn from_tree(tree: &ConfigTree) -> Result<Self, ConfigError> {
        let config = validate(tree, &experiment_schema())?;
        let t = &config;

        let distributions = parse_distributions(t)?;
        let variables = parse_variables(t, &distributions)?;
        let space = VariableSpace::new(variables, &distributions);

        let kind = match t.string("Problem/Type")? {
            "Optimization" => ProblemKind::Optimization,
            "Sampling" => ProblemKind::Sampling,
            _ => {
                let reference_data = t.real_list("Problem/Reference Data")?;
                if reference_data.is_empty() {
                    return Err(invalid("Problem/Reference Data", "must not be empty"));
                }
                for (i, var) in space.variables().iter().enumerate() {
                    if space.prior(i).is_none() {
                        return Err(ConfigError::MissingRequired(format!(
                            "Variables/{i}/Prior Distribution"
                        )));
                    }
                    debug_assert!(var.prior_name.is_some());
                }
                ProblemKind::BayesianInference {
                    likelihood: LikelihoodModel::Normal,
                    reference_data,
                    sigma_variable: t.string("Problem/Standard Deviation Variable")?.to_string(),
                }
            }
        };
        let model = parse_model(t)?;
        let solver = parse_solver(t)?;
        if let SolverSettings::Tmcmc(_) = solver {
            if kind == ProblemKind::Optimization {
                return Err(invalid(
                    "Solver/Type",
                    "TMCMC needs a Sampling or Bayesian Inference problem",
                ));
            }
            if let Some(i) = (0..space.len()).find(|i| space.prior(*i).is_none()) {
                return Err(ConfigError::MissingRequired(format!(
                    "Variables/{i}/Prior Distribution"
                )));
            }
        }

        let caps = EngineCaps {
            max_model_evaluations: t.integer_opt("Termination Criteria/Max Model Evaluations")?,
            max_wall_time_secs: t.real_opt("Termination Criteria/Max Wall Time")?,
        };
        if caps.max_wall_time_secs.is_some_and(|w| w <= 0.0) {
            return Err(invalid("Termination Criteria/Max Wall Time", "must be positive"));
        }
        let output = OutputSettings {
            keep_checkpoints: t.integer("File Output/Keep Checkpoints")? as usize,
        };

        Ok(ExperimentSettings {
            seed: t.integer("Random Seed")?,
            problem: ProblemSettings { kind, model },
            space,
            distributions,
            solver,
            caps,
            output,
            config,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_tree(&ConfigTree::from_json_str(text)?)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Self::from_tree(&ConfigTree::from_file(path)?)
    }

    /// Replaces the seed in both the typed settings and the stored tree.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.config.set("Random Seed", seed);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::{json, Value};

    fn base() -> Value {
        json!({
            "Random Seed": 7,
            "Problem": {"Type": "Optimization"},
            "Variables": [{"Name": "X", "Lower Bound": -5.0, "Upper Bound": 5.0}],
            "Solver": {"Type": "CMAES", "Population Size": 8, "Max Generations": 10}
        })
    }

    fn parse(v: Value) -> Result<ExperimentSettings, ConfigError> {
        ExperimentSettings::from_tree(&ConfigTree::from_value(v).unwrap())
    }

    fn solver_only(v: Value) -> Result<ConfigTree, ConfigError> {
        validate(&ConfigTree::from_value(v).unwrap(), &solver_schema())
    }

    #[test]
    fn tmcmc_settings_validate() {
        let t = solver_only(
            json!({"Type": "TMCMC", "Population Size": 5000, "Covariance Scaling Factor": 0.04}),
        )
        .unwrap();
        assert_eq!(t.integer("Population Size").unwrap(), 5000);
        assert_eq!(t.real("Covariance Scaling Factor").unwrap(), 0.04);
        assert_eq!(t.integer("Chain Length").unwrap(), 1);
    }

    #[test]
    fn missing_population_size() {
        assert_eq!(
            solver_only(json!({"Type": "TMCMC"})).unwrap_err(),
            ConfigError::MissingRequired("Population Size".into())
        );
    }

    #[test]
    fn misspelled_key_is_unknown() {
        assert_eq!(
            solver_only(json!({"Type": "TMCMC", "Popluation Size": 100})).unwrap_err(),
            ConfigError::UnknownKey(vec!["Popluation Size".into()])
        );
    }

    #[test]
    fn validation_is_idempotent() {
        let once = validate(&ConfigTree::from_value(base()).unwrap(), &experiment_schema()).unwrap();
        let twice = validate(&once, &experiment_schema()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn cmaes_experiment_parses() {
        let s = parse(base()).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.solver.population_size(), 8);
        assert_eq!(s.solver.max_generations(), Some(10));
        assert_eq!(s.problem.kind, ProblemKind::Optimization);
        assert_eq!(s.output.keep_checkpoints, 0);
    }

    #[test]
    fn bayesian_experiment_parses() {
        let s = parse(json!({
            "Problem": {
                "Type": "Bayesian Inference",
                "Likelihood Model": "Normal",
                "Reference Data": [0.0, 1.0],
                "Computational Model": {"Type": "Concurrent", "Command": "./model {X}"}
            },
            "Variables": [
                {"Name": "X", "Prior Distribution": "P"},
                {"Name": "Sigma", "Prior Distribution": "S"}
            ],
            "Distributions": [
                {"Name": "P", "Type": "Univariate/Normal", "Mean": 0.0, "Sigma": 1.0},
                {"Name": "S", "Type": "Univariate/Uniform", "Minimum": 0.0, "Maximum": 5.0}
            ],
            "Solver": {"Type": "TMCMC", "Population Size": 100}
        }))
        .unwrap();
        assert!(s.space.all_priors_resolved());
        let model = s.problem.model.unwrap();
        assert_eq!(model.channel, ResultChannel::Stdout);
        assert_eq!(s.seed, 0);
    }

    #[test]
    fn semantic_errors() {
        let mut v = base();
        v["Variables"] = json!([{"Name": "X"}, {"Name": "X"}]);
        assert!(matches!(parse(v), Err(ConfigError::Invalid { path, .. }) if path == "Variables/1/Name"));

        let mut v = base();
        v["Variables"][0]["Lower Bound"] = json!(6.0);
        assert!(matches!(parse(v), Err(ConfigError::Invalid { .. })));

        let mut v = base();
        v["Variables"][0]["Prior Distribution"] = json!("Nope");
        assert!(matches!(parse(v), Err(ConfigError::Invalid { .. })));

        let mut v = base();
        v["Solver"] = json!({"Type": "TMCMC", "Population Size": 10});
        assert!(matches!(parse(v), Err(ConfigError::Invalid { path, .. }) if path == "Solver/Type"));

        let mut v = base();
        v["Problem"] = json!({"Type": "Bayesian Inference", "Reference Data": []});
        assert!(matches!(parse(v), Err(ConfigError::Invalid { .. })));

        let mut v = base();
        v["Problem"] = json!({"Type": "Bayesian Inference", "Reference Data": [1.0]});
        assert_eq!(
            parse(v).unwrap_err(),
            ConfigError::MissingRequired("Variables/0/Prior Distribution".into())
        );

        let mut v = base();
        v["Distributions"] = json!([{"Name": "P", "Type": "Univariate/Normal", "Mean": 0.0, "Sigma": -1.0}]);
        assert!(matches!(parse(v), Err(ConfigError::Invalid { .. })));

        let mut v = base();
        v["Problem"]["Computational Model"] =
            json!({"Type": "Concurrent", "Command": "x", "Result Channel": "File"});
        assert_eq!(
            parse(v).unwrap_err(),
            ConfigError::MissingRequired("Problem/Computational Model/Result File".into())
        );

        let mut v = base();
        v["Solver"]["Population Size"] = json!(1);
        assert!(matches!(parse(v), Err(ConfigError::Invalid { .. })));
    }

    #[test]
    fn unknown_keys_everywhere_are_reported_together() {
        let mut v = base();
        v["Extra"] = json!(1);
        v["Variables"][0]["Prior"] = json!("P");
        v["Solver"]["Sigma"] = json!(1.0);
        let err = parse(v).unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey(vec!["Extra".into(), "Solver/Sigma".into(), "Variables/0/Prior".into()])
        );
    }

    #[test]
    fn seed_override_updates_tree() {
        let s = parse(base()).unwrap().with_seed(99);
        assert_eq!(s.seed, 99);
        assert_eq!(s.config.integer("Random Seed").unwrap(), 99);
    }
}
