//! Metrics, the three-method benchmark and the global-context ablation.

mod fidelity;
mod metrics;

pub use fidelity::{gradient_fidelity, FidelityEntry, FidelityReport, GRIDCNN_MARGIN, REFLECTNET_MARGIN};
pub use metrics::{Accuracies, ConfusionMatrix, EvalError};

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::container::{self, FormatError};
use crate::error::{Error, Result};
use crate::forest::{extract_handcrafted, fit_forest, ForestConfig, ForestModel, FOREST_MAGIC};
use crate::gridcnn::{compute_grid_norm, prepare_grids, rasterize, GridCnn, GridCnnConfig, GRIDCNN_MAGIC};
use crate::preprocess::{
    compute_norm_stats, pad_and_mask, read_dataset, sample_feature_rows, trackwise_split, ObjectClass, ObjectSample,
    SplitRatios, Splits,
};
use crate::reflectnet::{prepare_inputs, ReflectNet, ReflectNetConfig};
use crate::trainer::{train, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    CraftedForest,
    GridCnn,
    DeepReflecs,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::CraftedForest, Method::GridCnn, Method::DeepReflecs];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::CraftedForest => "craftedforest",
            Method::GridCnn => "gridcnn",
            Method::DeepReflecs => "deepreflecs",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "craftedforest" | "forest" => Ok(Method::CraftedForest),
            "gridcnn" => Ok(Method::GridCnn),
            "deepreflecs" | "reflectnet" => Ok(Method::DeepReflecs),
            other => Err(Error::Invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// Everything that shapes a benchmark run apart from the data and the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub split: SplitRatios,
    pub reflectnet: ReflectNetConfig,
    pub deepreflecs_training: TrainConfig,
    pub gridcnn: GridCnnConfig,
    pub gridcnn_training: TrainConfig,
    pub forest: ForestConfig,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            split: SplitRatios::default(),
            reflectnet: ReflectNetConfig::default(),
            deepreflecs_training: TrainConfig {
                epochs: 64,
                steps_per_epoch: 128,
                ..TrainConfig::default()
            },
            gridcnn: GridCnnConfig::default(),
            gridcnn_training: TrainConfig {
                epochs: 16,
                steps_per_epoch: 16,
                batch_size: 32,
                ..TrainConfig::default()
            },
            forest: ForestConfig::default(),
        }
    }
}

/// A trained model of any of the three methods, carrying its own input
/// preprocessing state.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    CraftedForest(ForestModel),
    GridCnn(GridCnn<f32>),
    DeepReflecs(ReflectNet<f32>),
}

impl Model {
    pub fn method(&self) -> Method {
        match self {
            Model::CraftedForest(_) => Method::CraftedForest,
            Model::GridCnn(_) => Method::GridCnn,
            Model::DeepReflecs(_) => Method::DeepReflecs,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Model::CraftedForest(m) => m.to_bytes(),
            Model::GridCnn(m) => m.to_bytes(),
            Model::DeepReflecs(m) => m.to_bytes(),
        }
    }

    /// Dispatches on the file's magic.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        match container::peek_magic(bytes) {
            Some(m) if &m == FOREST_MAGIC => Ok(Model::CraftedForest(ForestModel::from_bytes(bytes)?)),
            Some(m) if &m == GRIDCNN_MAGIC => Ok(Model::GridCnn(GridCnn::from_bytes(bytes)?)),
            // Anything else is read as a DeepReflecs file, which reports the bad magic.
            _ => Ok(Model::DeepReflecs(ReflectNet::from_bytes(bytes)?)),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_bytes(&std::fs::read(path)?)?)
    }

    /// Predicted class index of one raw sample.
    pub fn predict(&self, sample: &ObjectSample) -> Result<usize> {
        Ok(match self {
            Model::CraftedForest(m) => m.predict(&extract_handcrafted(sample, &m.features).to_array()),
            Model::GridCnn(m) => m.forward(&m.grid_norm.apply(&rasterize(sample)))?.predicted,
            Model::DeepReflecs(m) => {
                let input = pad_and_mask(&sample_feature_rows(sample), m.config.pad_length, &m.norm_stats)?;
                m.forward(&input)?.predicted
            }
        })
    }

    pub fn parameters(&self) -> Option<usize> {
        match self {
            Model::CraftedForest(_) => None,
            Model::GridCnn(m) => Some(m.count_params()),
            Model::DeepReflecs(m) => Some(m.count_params()),
        }
    }

    pub fn nodes(&self) -> Option<usize> {
        match self {
            Model::CraftedForest(m) => Some(m.count_nodes()),
            _ => None,
        }
    }
}

/// Trains one method on `splits.train`; the networks pick their best epoch on
/// `splits.val`. The forest has no training report.
pub fn fit(
    method: Method,
    splits: &Splits,
    config: &BenchmarkConfig,
    seed: u64,
) -> Result<(Model, Option<TrainReport>)> {
    match method {
        Method::DeepReflecs => {
            let (model, report) = fit_reflectnet(splits, config.reflectnet, &config.deepreflecs_training, seed)?;
            Ok((Model::DeepReflecs(model), Some(report)))
        }
        Method::GridCnn => {
            let norm = compute_grid_norm(&splits.train.iter().map(rasterize).collect::<Vec<_>>())?;
            let mut model = GridCnn::<f32>::new(config.gridcnn, seed);
            model.grid_norm = norm.clone();
            let train_set = prepare_grids(&splits.train, &norm);
            let val_set = prepare_grids(&splits.val, &norm);
            let (model, report) = train(
                model,
                &train_set,
                &val_set,
                &config.gridcnn_training.clone().with_seed(seed),
            )?;
            Ok((Model::GridCnn(model), Some(report)))
        }
        Method::CraftedForest => {
            let forest_config = config.forest.clone().with_seed(seed);
            let x: Vec<_> = splits
                .train
                .iter()
                .map(|s| extract_handcrafted(s, &forest_config.features).to_array())
                .collect();
            let y: Vec<usize> = splits.train.iter().map(|s| s.class_label.index()).collect();
            Ok((Model::CraftedForest(fit_forest(&x, &y, &forest_config)?), None))
        }
    }
}

fn fit_reflectnet(
    splits: &Splits,
    net: ReflectNetConfig,
    training: &TrainConfig,
    seed: u64,
) -> Result<(ReflectNet<f32>, TrainReport)> {
    net.validate().map_err(Error::Invalid)?;
    let stats = compute_norm_stats(&splits.train)?;
    let train_set = prepare_inputs(&splits.train, &stats, net.pad_length)?;
    let val_set = prepare_inputs(&splits.val, &stats, net.pad_length)?;
    let mut model = ReflectNet::<f32>::new(net, seed);
    model.norm_stats = stats;
    Ok(train(model, &train_set, &val_set, &training.clone().with_seed(seed))?)
}

pub fn confusion(model: &Model, samples: &[ObjectSample]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(ObjectClass::COUNT);
    for s in samples {
        cm.add(s.class_label.index(), model.predict(s)?)
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    Ok(cm)
}

/// Results of one method on one evaluation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub total_accuracy: f64,
    /// Recall per class name; `null` for classes absent from the set.
    pub per_class_accuracy: BTreeMap<String, Option<f64>>,
    pub confusion: ConfusionMatrix,
    pub n_samples: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parameters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_val_accuracy: Option<f64>,
}

impl MethodReport {
    pub fn class_accuracy(&self, class: ObjectClass) -> Option<f64> {
        self.per_class_accuracy.get(class.as_str()).copied().flatten()
    }
}

pub fn evaluate(model: &Model, samples: &[ObjectSample], training: Option<&TrainReport>) -> Result<MethodReport> {
    let cm = confusion(model, samples)?;
    let acc = cm.accuracies().map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(MethodReport {
        method: model.method(),
        total_accuracy: acc.total,
        per_class_accuracy: ObjectClass::ALL
            .iter()
            .map(|c| (c.as_str().to_owned(), acc.per_class[c.index()]))
            .collect(),
        n_samples: cm.total(),
        confusion: cm,
        parameters: model.parameters(),
        nodes: model.nodes(),
        best_epoch: training.map(|t| t.best_epoch),
        best_val_accuracy: training.map(|t| t.best_val_accuracy),
    })
}

/// Median wall time of single-sample inference over `runs` calls, in
/// microseconds. Informational only.
pub fn median_inference_us(model: &Model, samples: &[ObjectSample], runs: usize) -> Result<f64> {
    if samples.is_empty() || runs == 0 {
        return Err(Error::Invalid("timing needs at least one sample and one run".into()));
    }
    let mut times = Vec::with_capacity(runs);
    for i in 0..runs {
        let sample = &samples[i % samples.len()];
        let start = Instant::now();
        std::hint::black_box(model.predict(std::hint::black_box(sample))?);
        times.push(start.elapsed().as_secs_f64() * 1e6);
    }
    times.sort_by(f64::total_cmp);
    Ok(times[runs / 2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    fn of(splits: &Splits) -> Self {
        Self {
            train: splits.train.len(),
            val: splits.val.len(),
            test: splits.test.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub n_samples: usize,
    pub split: SplitSizes,
    pub methods: Vec<MethodReport>,
    /// Median single-sample inference time per method, microseconds. Only
    /// present when requested, since it varies between runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inference_us: Option<BTreeMap<Method, f64>>,
}

impl BenchmarkReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

/// Splits once by track, trains all three methods on the same split and
/// evaluates each on the test split, one sample at a time.
pub fn run_benchmark(
    samples: &[ObjectSample],
    seed: u64,
    config: &BenchmarkConfig,
    timing: bool,
) -> Result<BenchmarkReport> {
    let splits = trackwise_split(samples, config.split, seed)?;
    let mut methods = Vec::new();
    let mut inference_us = BTreeMap::new();
    for method in Method::ALL {
        let (model, training) = fit(method, &splits, config, seed)?;
        methods.push(evaluate(&model, &splits.test, training.as_ref())?);
        if timing {
            inference_us.insert(method, median_inference_us(&model, &splits.test, 100)?);
        }
    }
    Ok(BenchmarkReport {
        seed,
        n_samples: samples.len(),
        split: SplitSizes::of(&splits),
        methods,
        inference_us: timing.then_some(inference_us),
    })
}

pub fn run_benchmark_file(
    path: impl AsRef<Path>,
    seed: u64,
    config: &BenchmarkConfig,
    timing: bool,
) -> Result<BenchmarkReport> {
    run_benchmark(&read_dataset(path)?, seed, config, timing)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seed: u64,
    pub split: SplitSizes,
    pub with_gcl: MethodReport,
    pub without_gcl: MethodReport,
    /// `with - without`.
    pub delta_total: f64,
    pub delta_per_class: BTreeMap<String, Option<f64>>,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is plain data")
    }
}

/// Trains the network with and without the global context layer on the same
/// split, seed and schedule.
pub fn run_ablation(samples: &[ObjectSample], seed: u64, config: &BenchmarkConfig) -> Result<AblationReport> {
    let splits = trackwise_split(samples, config.split, seed)?;
    let mut reports = Vec::with_capacity(2);
    for use_gcl in [true, false] {
        let net = ReflectNetConfig {
            use_gcl,
            ..config.reflectnet
        };
        let (model, training) = fit_reflectnet(&splits, net, &config.deepreflecs_training, seed)?;
        reports.push(evaluate(&Model::DeepReflecs(model), &splits.test, Some(&training))?);
    }
    let without_gcl = reports.pop().expect("two runs");
    let with_gcl = reports.pop().expect("two runs");
    let delta_per_class = with_gcl
        .per_class_accuracy
        .iter()
        .map(|(name, a)| {
            let b = without_gcl.per_class_accuracy.get(name).copied().flatten();
            (name.clone(), a.zip(b).map(|(a, b)| a - b))
        })
        .collect();
    Ok(AblationReport {
        seed,
        split: SplitSizes::of(&splits),
        delta_total: with_gcl.total_accuracy - without_gcl.total_accuracy,
        delta_per_class,
        with_gcl,
        without_gcl,
    })
}

pub fn run_ablation_file(path: impl AsRef<Path>, seed: u64, config: &BenchmarkConfig) -> Result<AblationReport> {
    run_ablation(&read_dataset(path)?, seed, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, GenSpec};

    fn tiny() -> BenchmarkConfig {
        let quick = TrainConfig {
            epochs: 2,
            steps_per_epoch: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        BenchmarkConfig {
            deepreflecs_training: quick.clone(),
            gridcnn_training: quick,
            forest: ForestConfig {
                n_trees: 5,
                ..ForestConfig::default()
            },
            ..BenchmarkConfig::default()
        }
    }

    fn small_dataset() -> Vec<ObjectSample> {
        let mut spec = GenSpec::with_seed(0);
        spec.tracks_per_class.values_mut().for_each(|n| *n = 4);
        generate_dataset(&spec)
    }

    #[test]
    fn benchmark_report_structure() {
        let data = small_dataset();
        let report = run_benchmark(&data, 1, &tiny(), false).unwrap();
        assert_eq!(report.methods.len(), 3);
        assert_eq!(report.method(Method::DeepReflecs).unwrap().parameters, Some(1284));
        assert_eq!(report.method(Method::GridCnn).unwrap().parameters, Some(232_628));
        assert!(report.method(Method::CraftedForest).unwrap().nodes.unwrap() >= 5);
        for m in &report.methods {
            assert_eq!(m.n_samples as usize, report.split.test);
            assert!((0.0..=1.0).contains(&m.total_accuracy));
            let acc = m.confusion.accuracies().unwrap();
            assert_eq!(acc.total, m.total_accuracy);
        }
        assert!(!report.to_json().contains("inference_us"));
    }

    #[test]
    fn model_bytes_dispatch_on_magic() {
        let data = small_dataset();
        let splits = trackwise_split(&data, SplitRatios::default(), 0).unwrap();
        for method in Method::ALL {
            let (model, _) = fit(method, &splits, &tiny(), 0).unwrap();
            let back = Model::from_bytes(&model.to_bytes()).unwrap();
            assert_eq!(back.method(), method);
            for s in splits.test.iter().take(20) {
                assert_eq!(back.predict(s).unwrap(), model.predict(s).unwrap());
            }
        }
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert_eq!("forest".parse::<Method>().unwrap(), Method::CraftedForest);
        assert!("svm".parse::<Method>().is_err());
    }
}
