use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Mode, StageConfig, Strategy};
use crate::dataset::{generate_auxiliary, generate_generic_pretrain, generate_target};
use crate::dataset::{kfold_partition, FoldPartition, SceneDataset};
use crate::error::{Error, Result};
use crate::evaluation::{aggregate_folds, evaluate_model, EvaluationReport};
use crate::model::{
    build_network, drop_classifier, maintain_classifier, train, Checkpoint, ComposedNetwork,
};
use crate::seed::derive_seed;
use crate::taxonomy::{apply_merge_map, ClassMergeMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetRole {
    Generic,
    Auxiliary,
    Target,
}

/// Parameter digests around the target phase of one fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldTrace {
    pub fold: usize,
    pub initial_digest: String,
    pub initial_classifier_digest: String,
    pub final_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedResult {
    pub seed: u64,
    /// Digest of the fold assignment, shared by every run with this seed.
    pub partition_digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage0_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_classifier_digest: Option<String>,
    pub traces: Vec<FoldTrace>,
    /// Pooled over this seed's folds; the fold reports sit in `report.folds`.
    pub report: EvaluationReport,
}

/// Unweighted means over seeds of the per-seed pooled metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedMeans {
    pub sla: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Mean over the seeds where the class had test sequences.
    pub class_accuracy: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentResult {
    pub strategy: Strategy,
    pub mode: Mode,
    pub maintain_classifier: bool,
    /// Datasets whose frames were used for parameter updates.
    pub datasets_used: Vec<DatasetRole>,
    pub wall_clock_secs: f64,
    pub seeds: Vec<SeedResult>,
    pub means: SeedMeans,
    /// Pooled over every seed and fold.
    pub aggregate: EvaluationReport,
    pub config: ExperimentConfig,
}

impl ExperimentResult {
    pub fn label(&self) -> String {
        method_label(self.strategy, self.mode, self.maintain_classifier)
    }
}

pub(crate) fn method_label(strategy: Strategy, mode: Mode, maintain: bool) -> String {
    match (strategy, mode) {
        (Strategy::PretrainFineTune, Mode::DR) => "Baseline 0 (DR)".into(),
        (Strategy::PretrainFineTune, Mode::WL) => "Baseline 1 (WL)".into(),
        (Strategy::PretrainFineTune, Mode::RS) => "Baseline 2 (RS)".into(),
        (Strategy::DropThenMaintain, m) if !maintain => match m {
            Mode::DR => "Ours w/o M".into(),
            m => format!("Ours w/o M ({m})"),
        },
        (Strategy::DropThenMaintain, Mode::DR) => "Ours".into(),
        (Strategy::DropThenMaintain, m) => format!("Ours ({m})"),
        (s, Mode::DR) => format!("Strategy {s}"),
        (s, m) => format!("Strategy {s} ({m})"),
    }
}

struct Stage {
    net: ComposedNetwork,
    used: BTreeSet<DatasetRole>,
}

#[derive(Default)]
struct SeedCache {
    target: Option<SceneDataset>,
    folds: Option<FoldPartition>,
    generic: Option<SceneDataset>,
    auxiliary: Option<SceneDataset>,
    stage0: BTreeMap<Option<usize>, Stage>,
    stage1: BTreeMap<(Option<usize>, Mode), Stage>,
}

/// Executes runs that share datasets, fold partitions and stage-0/1
/// networks per seed. Results are identical to fresh runs.
pub struct Runner {
    config: ExperimentConfig,
    merge_map: ClassMergeMap,
    fixed_folds: Option<FoldPartition>,
    cache: BTreeMap<u64, SeedCache>,
}

impl Runner {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let merge_map = config.merge_map()?;
        if merge_map.targets() != config.generators.target.class_names() {
            return Err(Error::ClassMismatch {
                expected: config.generators.target.class_names(),
                found: merge_map.targets().to_vec(),
            });
        }
        let fixed_folds = match &config.fold_file {
            Some(path) => {
                let p = FoldPartition::load(path)?;
                if p.k != config.k {
                    return Err(Error::invalid(format!(
                        "fold file has k = {}, config has k = {}",
                        p.k, config.k
                    )));
                }
                Some(p)
            }
            None => None,
        };
        Ok(Self {
            config: config.clone(),
            merge_map,
            fixed_folds,
            cache: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// The seed's generated target dataset.
    pub fn target(&mut self, seed: u64) -> Result<&SceneDataset> {
        self.ensure_target(seed)?;
        Ok(self.cache[&seed].target.as_ref().expect("target generated"))
    }

    pub fn partition(&mut self, seed: u64) -> Result<&FoldPartition> {
        self.ensure_target(seed)?;
        Ok(self.cache[&seed].folds.as_ref().expect("folds generated"))
    }

    fn ensure_target(&mut self, seed: u64) -> Result<()> {
        let entry = self.cache.entry(seed).or_default();
        if entry.target.is_none() {
            let target = generate_target(
                &self.config.generators.target,
                derive_seed(seed, "data/target"),
            )?;
            let folds = match &self.fixed_folds {
                Some(p) => {
                    p.validate(&target)?;
                    p.clone()
                }
                None => kfold_partition(
                    &target,
                    self.config.k,
                    derive_seed(seed, "folds"),
                    self.config.stratified,
                )?,
            };
            entry.target = Some(target);
            entry.folds = Some(folds);
        }
        Ok(())
    }

    fn fold_key(&self, fold: usize) -> Option<usize> {
        (!self.config.share_early_stages).then_some(fold)
    }

    fn stage0(&mut self, seed: u64, key: Option<usize>) -> Result<&Stage> {
        let done = self
            .cache
            .get(&seed)
            .is_some_and(|c| c.stage0.contains_key(&key));
        if !done {
            let stage_cfg = required(&self.config.stages.generic, "generic")?.clone();
            let tag = stage_tag(key);
            let entry = self.cache.entry(seed).or_default();
            if entry.generic.is_none() {
                entry.generic = Some(generate_generic_pretrain(
                    &self.config.generators.generic,
                    derive_seed(seed, "data/generic"),
                )?);
            }
            let data = entry.generic.as_ref().expect("generic generated");
            let net = build_network(
                &self.config.arch,
                data.classes(),
                derive_seed(seed, &format!("init/generic{tag}")),
            )?;
            let seed_train = derive_seed(seed, &format!("train/generic{tag}"));
            let stage = run_stage(
                net,
                data,
                &stage_cfg,
                Mode::DR,
                seed_train,
                DatasetRole::Generic,
                BTreeSet::new(),
            )?;
            entry.stage0.insert(key, stage);
        }
        Ok(&self.cache[&seed].stage0[&key])
    }

    fn stage1(&mut self, seed: u64, key: Option<usize>, mode: Mode) -> Result<&Stage> {
        let done = self
            .cache
            .get(&seed)
            .is_some_and(|c| c.stage1.contains_key(&(key, mode)));
        if !done {
            let stage_cfg = required(&self.config.stages.auxiliary, "auxiliary")?.clone();
            let (start, used) = {
                let s0 = self.stage0(seed, key)?;
                (s0.net.clone(), s0.used.clone())
            };
            let tag = stage_tag(key);
            let entry = self.cache.get_mut(&seed).expect("seed cached");
            if entry.auxiliary.is_none() {
                let raw = generate_auxiliary(
                    &self.config.generators.auxiliary,
                    derive_seed(seed, "data/auxiliary"),
                )?;
                entry.auxiliary = Some(apply_merge_map(&raw, &self.merge_map)?);
            }
            let data = entry.auxiliary.as_ref().expect("auxiliary generated");
            let net = drop_classifier(
                start,
                data.classes(),
                derive_seed(seed, &format!("drop/auxiliary{tag}")),
            )?;
            let seed_train = derive_seed(seed, &format!("train/auxiliary{tag}/{mode}"));
            let stage = run_stage(
                net,
                data,
                &stage_cfg,
                mode,
                seed_train,
                DatasetRole::Auxiliary,
                used,
            )?;
            entry.stage1.insert((key, mode), stage);
        }
        Ok(&self.cache[&seed].stage1[&(key, mode)])
    }

    /// One row of the grid: every seed, every fold.
    pub fn run(
        &mut self,
        strategy: Strategy,
        mode: Mode,
        maintain: bool,
    ) -> Result<ExperimentResult> {
        self.config.validate_stages(strategy)?;
        let started = Instant::now();
        let mut used = BTreeSet::new();
        let mut seeds = Vec::with_capacity(self.config.seeds.len());
        for seed in self.config.seeds.clone() {
            seeds.push(self.run_seed(strategy, mode, maintain, seed, &mut used)?);
        }
        let reports: Vec<EvaluationReport> = seeds.iter().map(|s| s.report.clone()).collect();
        let aggregate = aggregate_folds(&reports)?;
        let means = seed_means(&reports);
        let mut config = self.config.clone();
        config.strategy = strategy;
        config.mode = mode;
        config.maintain_classifier = maintain;
        Ok(ExperimentResult {
            strategy,
            mode,
            maintain_classifier: maintain,
            datasets_used: used.into_iter().collect(),
            wall_clock_secs: started.elapsed().as_secs_f64(),
            seeds,
            means,
            aggregate,
            config,
        })
    }

    fn run_seed(
        &mut self,
        strategy: Strategy,
        mode: Mode,
        maintain: bool,
        seed: u64,
        used: &mut BTreeSet<DatasetRole>,
    ) -> Result<SeedResult> {
        let partition = self.partition(seed)?.clone();
        let target_classes = self.target(seed)?.classes().to_vec();
        // Early stages train on the auxiliary data with DR, except strategy 3,
        // whose only training stage is the auxiliary one.
        let aux_mode = if strategy == Strategy::AuxiliaryOnly {
            mode
        } else {
            Mode::DR
        };
        let mut traces = Vec::with_capacity(partition.k);
        let mut reports = Vec::with_capacity(partition.k);
        let (mut stage0_digest, mut stage1_digest, mut stage1_classifier_digest) =
            (None, None, None);
        for fold in 0..partition.k {
            let key = self.fold_key(fold);
            let tag = stage_tag(key);
            let start = match strategy {
                Strategy::TargetOnly => build_network(
                    &self.config.arch,
                    &target_classes,
                    derive_seed(seed, &format!("init/target{tag}")),
                )?,
                Strategy::PretrainFineTune => {
                    let s0 = self.stage0(seed, key)?;
                    used.extend(&s0.used);
                    stage0_digest = Some(s0.net.digest());
                    drop_classifier(
                        s0.net.clone(),
                        &target_classes,
                        derive_seed(seed, &format!("drop/target{tag}")),
                    )?
                }
                Strategy::AuxiliaryOnly | Strategy::DropThenMaintain => {
                    stage0_digest = Some(self.stage0(seed, key)?.net.digest());
                    let s1 = self.stage1(seed, key, aux_mode)?;
                    used.extend(&s1.used);
                    stage1_digest = Some(s1.net.digest());
                    stage1_classifier_digest = Some(s1.net.classifier_digest());
                    if strategy == Strategy::AuxiliaryOnly || maintain {
                        maintain_classifier(&Checkpoint::from_network(&s1.net), &target_classes)?
                    } else {
                        drop_classifier(
                            s1.net.clone(),
                            &target_classes,
                            derive_seed(seed, &format!("drop/target{tag}")),
                        )?
                    }
                }
            };
            let (train_ids, test_ids) = partition.split(fold)?;
            let target = self.cache[&seed].target.as_ref().expect("target generated");
            let initial_digest = start.digest();
            let initial_classifier_digest = start.classifier_digest();
            let net = if strategy.trains_on_target() {
                let stage_cfg = required(&self.config.stages.target, "target")?;
                let train_set = target.subset(&train_ids)?;
                let seed_train = derive_seed(seed, &format!("train/target/fold{fold}"));
                let stage = run_stage(
                    start,
                    &train_set,
                    stage_cfg,
                    mode,
                    seed_train,
                    DatasetRole::Target,
                    BTreeSet::new(),
                )?;
                used.extend(&stage.used);
                stage.net
            } else {
                start
            };
            traces.push(FoldTrace {
                fold,
                initial_digest,
                initial_classifier_digest,
                final_digest: net.digest(),
            });
            reports.push(evaluate_model(&net, &target.subset(&test_ids)?)?);
        }
        Ok(SeedResult {
            seed,
            partition_digest: partition_digest(&partition),
            stage0_digest,
            stage1_digest,
            stage1_classifier_digest,
            traces,
            report: aggregate_folds(&reports)?,
        })
    }
}

fn required<'a>(stage: &'a Option<StageConfig>, name: &str) -> Result<&'a StageConfig> {
    stage
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("missing `stages.{name}` config")))
}

fn stage_tag(key: Option<usize>) -> String {
    key.map(|f| format!("/fold{f}")).unwrap_or_default()
}

fn run_stage(
    net: ComposedNetwork,
    data: &SceneDataset,
    stage: &StageConfig,
    mode: Mode,
    seed: u64,
    role: DatasetRole,
    mut used: BTreeSet<DatasetRole>,
) -> Result<Stage> {
    if stage.epochs == 0 {
        return Ok(Stage { net, used });
    }
    let (net, _) = train(net, &data.frame_view(), &stage.train_config(mode, seed))?;
    used.insert(role);
    Ok(Stage { net, used })
}

fn partition_digest(p: &FoldPartition) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for fold in &p.folds {
        h.update((fold.len() as u64).to_le_bytes());
        for id in fold {
            h.update(id.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn seed_means(reports: &[EvaluationReport]) -> SeedMeans {
    let n = reports.len() as f64;
    let mean = |f: fn(&EvaluationReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in reports {
        for c in &r.per_class {
            if let Some(a) = c.accuracy {
                let e = sums.entry(c.class.clone()).or_default();
                e.0 += a;
                e.1 += 1;
            }
        }
    }
    SeedMeans {
        sla: mean(|r| r.sla),
        macro_precision: mean(|r| r.macro_precision),
        macro_recall: mean(|r| r.macro_recall),
        macro_f1: mean(|r| r.macro_f1),
        class_accuracy: sums
            .into_iter()
            .map(|(c, (s, k))| (c, s / k as f64))
            .collect(),
    }
}

/// Runs `config.strategy` in `config.mode` over every seed and fold.
pub fn run_strategy(config: &ExperimentConfig) -> Result<ExperimentResult> {
    Runner::new(config)?.run(config.strategy, config.mode, config.maintain_classifier)
}

/// Strategy 2 and strategy 4 (with maintain) in each of DR, WL and RS.
pub fn run_mode_grid(config: &ExperimentConfig) -> Result<Vec<ExperimentResult>> {
    let mut runner = Runner::new(config)?;
    let mut out = Vec::with_capacity(6);
    for strategy in [Strategy::PretrainFineTune, Strategy::DropThenMaintain] {
        for mode in Mode::ALL {
            out.push(runner.run(strategy, mode, true)?);
        }
    }
    Ok(out)
}

/// Strategy 4 in `config.mode` with and without maintaining the classifier.
pub fn run_maintain_ablation(
    config: &ExperimentConfig,
) -> Result<(ExperimentResult, ExperimentResult)> {
    let mut runner = Runner::new(config)?;
    let with = runner.run(Strategy::DropThenMaintain, config.mode, true)?;
    let without = runner.run(Strategy::DropThenMaintain, config.mode, false)?;
    Ok((with, without))
}

/// Strategy 1, the mode grid, strategy 4 without maintain, and strategy 3
/// when `include_strategy3` is set.
pub fn run_full_grid(config: &ExperimentConfig) -> Result<Vec<ExperimentResult>> {
    let mut runner = Runner::new(config)?;
    let mut out = vec![runner.run(Strategy::TargetOnly, Mode::DR, true)?];
    for mode in Mode::ALL {
        out.push(runner.run(Strategy::PretrainFineTune, mode, true)?);
    }
    if config.include_strategy3 {
        out.push(runner.run(Strategy::AuxiliaryOnly, Mode::DR, true)?);
    }
    for mode in Mode::ALL {
        out.push(runner.run(Strategy::DropThenMaintain, mode, true)?);
    }
    out.push(runner.run(Strategy::DropThenMaintain, Mode::DR, false)?);
    Ok(out)
}
