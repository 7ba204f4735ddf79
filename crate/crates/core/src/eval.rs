//! Clean-accuracy and attack-rate metrics, the multi-instance gray-box
//! evaluation protocol, and machine-readable report emission.
//!
//! Clean accuracy is the fraction of untriggered test samples whose argmax
//! logit equals the label (ties resolve to the lowest class index). Attack
//! rate stamps the trigger on every non-target-class test sample and counts
//! the fraction classified as the target class. Fractions are rounded to
//! six decimals at report construction and serialized with six decimal
//! digits.

use crate::data::{generate_synthetic, stamp_dataset, DataError, DatasetSplit, SyntheticConfig, TriggerSpec};
use crate::digest::sha256_hex;
use crate::graft::{apply_graft, plan_graft, restrict_host, GraftError, GraftPlan};
use crate::net::{
    argmax, forward, narrow_arch, sraw, train_host, ArchitectureSpec, ModelWeights, NetError,
    SubnetWidths, TrainConfig,
};
use crate::subnet::{train_subnet, SeparationStats, SubnetError, SubnetTrainConfig};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graft(#[from] GraftError),
    #[error(transparent)]
    Subnet(#[from] SubnetError),
    #[error("test set has no samples outside the target class")]
    NoNonTargetSamples,
    #[error("multi-instance evaluation needs at least one seed")]
    NoSeeds,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("report parse error: {0}")]
    Parse(String),
}

/// Rounds a fraction to six decimals, the report serialization precision.
pub fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Evaluation results for one model on one test set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub clean_accuracy: f64,
    pub attack_rate: f64,
    /// `confusion[true_label][predicted]` counts over the clean test set.
    pub confusion: Vec<Vec<u64>>,
    /// Max over test inputs (clean and triggered) of
    /// `|logits - (logits_restricted + lambda*s*e_target)|`, when the
    /// decomposition context is available (post-graft reports).
    pub decomposition_max_residual: Option<f64>,
    /// SHA-256 of the model's SRAW serialization, hex.
    pub model_digest: String,
}

/// Fraction of test samples whose argmax logit equals the label.
pub fn clean_accuracy(
    arch: &ArchitectureSpec,
    weights: &ModelWeights,
    test: &DatasetSplit,
) -> Result<f64, EvalError> {
    let mut correct = 0usize;
    for i in 0..test.len() {
        let logits = forward(arch, weights, &test.image(i))?;
        if argmax(&logits) == test.label(i) {
            correct += 1;
        }
    }
    Ok(round6(correct as f64 / test.len() as f64))
}

/// Fraction of triggered non-target-class samples classified as the target.
pub fn attack_rate(
    arch: &ArchitectureSpec,
    weights: &ModelWeights,
    test: &DatasetSplit,
    trig: &TriggerSpec,
    target_class: usize,
) -> Result<f64, EvalError> {
    let stamped = match stamp_dataset(test, trig, Some(target_class)) {
        Ok(s) => s,
        Err(DataError::EmptyResult) => return Err(EvalError::NoNonTargetSamples),
        Err(e) => return Err(e.into()),
    };
    let mut hits = 0usize;
    for i in 0..stamped.len() {
        let logits = forward(arch, weights, &stamped.image(i))?;
        if argmax(&logits) == target_class {
            hits += 1;
        }
    }
    Ok(round6(hits as f64 / stamped.len() as f64))
}

/// What a post-graft report needs to measure the logit decomposition.
pub struct DecompositionCtx<'a> {
    pub subnet_arch: &'a ArchitectureSpec,
    pub subnet: &'a ModelWeights,
    pub restricted: &'a ModelWeights,
    pub lambda: f32,
    pub target_class: usize,
}

/// Builds a full [`EvalReport`] for a model.
pub fn evaluate(
    arch: &ArchitectureSpec,
    weights: &ModelWeights,
    test: &DatasetSplit,
    trig: &TriggerSpec,
    target_class: usize,
    decomp: Option<&DecompositionCtx>,
) -> Result<EvalReport, EvalError> {
    if test.labels().iter().any(|&l| l as usize >= arch.num_classes) {
        return Err(EvalError::Net(NetError::LabelRange {
            num_classes: arch.num_classes,
        }));
    }
    let k = arch.num_classes;
    let mut confusion = vec![vec![0u64; k]; k];
    let mut correct = 0usize;
    for i in 0..test.len() {
        let logits = forward(arch, weights, &test.image(i))?;
        let pred = argmax(&logits);
        confusion[test.label(i)][pred] += 1;
        if pred == test.label(i) {
            correct += 1;
        }
    }
    let clean = round6(correct as f64 / test.len() as f64);
    let rate = attack_rate(arch, weights, test, trig, target_class)?;

    let residual = match decomp {
        None => None,
        Some(ctx) => {
            let mut max_resid = 0.0f64;
            for i in 0..test.len() {
                for image in [test.image(i), crate::data::apply_trigger(&test.image(i), trig)?] {
                    let lg = forward(arch, weights, &image)?;
                    let lr = forward(arch, ctx.restricted, &image)?;
                    let s = forward(ctx.subnet_arch, ctx.subnet, &image)?.data()[0];
                    for class in 0..k {
                        let boost = if class == ctx.target_class {
                            ctx.lambda * s
                        } else {
                            0.0
                        };
                        let resid = (lg.data()[class] as f64) - (lr.data()[class] as f64 + boost as f64);
                        max_resid = max_resid.max(resid.abs());
                    }
                }
            }
            Some(max_resid)
        }
    };

    Ok(EvalReport {
        clean_accuracy: clean,
        attack_rate: rate,
        confusion,
        decomposition_max_residual: residual,
        model_digest: sha256_hex(&sraw::encode_weights(arch, weights)?),
    })
}

/// Inputs of the multi-instance protocol: train several host instances from
/// different seeds, graft the same subnet into each, and report pre/post
/// metrics per instance.
#[derive(Debug, Clone)]
pub struct MultiEvalConfig {
    pub arch: ArchitectureSpec,
    pub widths: SubnetWidths,
    pub trigger: TriggerSpec,
    pub target_class: usize,
    pub lambda: f32,
    pub data: SyntheticConfig,
    pub host: TrainConfig,
    pub subnet: SubnetTrainConfig,
    /// One host-training seed per instance.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceEval {
    pub instance: usize,
    pub seed: u64,
    pub pre: EvalReport,
    pub post: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiEvalReport {
    pub subnet_separation: SeparationStats,
    pub instances: Vec<InstanceEval>,
}

/// Runs the full protocol: one dataset, one trained subnet, one plan, then
/// per-seed host training, grafting, and pre/post evaluation.
pub fn multi_instance_eval(cfg: &MultiEvalConfig) -> Result<MultiEvalReport, EvalError> {
    if cfg.seeds.is_empty() {
        return Err(EvalError::NoSeeds);
    }
    let (train, test) = generate_synthetic(&cfg.data)?;
    let sub_arch = narrow_arch(&cfg.arch, &cfg.widths)?;
    let (subnet, sub_report) = train_subnet(&sub_arch, &train, &cfg.trigger, &cfg.subnet)?;
    let plan = plan_graft(&cfg.arch, &cfg.widths, cfg.target_class, cfg.lambda)?;

    let mut instances = Vec::with_capacity(cfg.seeds.len());
    for (i, &seed) in cfg.seeds.iter().enumerate() {
        let host_cfg = TrainConfig { seed, ..cfg.host.clone() };
        let (host, _) = train_host(&cfg.arch, &train, &host_cfg)?;
        let pre = evaluate(&cfg.arch, &host, &test, &cfg.trigger, cfg.target_class, None)?;

        let grafted = apply_graft(&host, &subnet, &plan)?;
        let restricted = restrict_host(&host, &plan)?;
        let ctx = DecompositionCtx {
            subnet_arch: &sub_arch,
            subnet: &subnet,
            restricted: &restricted,
            lambda: cfg.lambda,
            target_class: cfg.target_class,
        };
        let post = evaluate(
            &cfg.arch,
            &grafted,
            &test,
            &cfg.trigger,
            cfg.target_class,
            Some(&ctx),
        )?;
        instances.push(InstanceEval {
            instance: i,
            seed,
            pre,
            post,
        });
    }
    Ok(MultiEvalReport {
        subnet_separation: sub_report.separation,
        instances,
    })
}

/// The grafted model and plan produced for one host file; the single-shot
/// (non-multi) pipeline result used by the CLI.
pub struct GraftOutcome {
    pub plan: GraftPlan,
    pub grafted: ModelWeights,
    pub restricted: ModelWeights,
}

/// Grafts a subnet into a host, returning the grafted and restricted models
/// along with the plan.
pub fn graft_pipeline(
    arch: &ArchitectureSpec,
    host: &ModelWeights,
    subnet: &ModelWeights,
    widths: &SubnetWidths,
    target_class: usize,
    lambda: f32,
) -> Result<GraftOutcome, EvalError> {
    let plan = plan_graft(arch, widths, target_class, lambda)?;
    let grafted = apply_graft(host, subnet, &plan)?;
    let restricted = restrict_host(host, &plan)?;
    Ok(GraftOutcome {
        plan,
        grafted,
        restricted,
    })
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

fn json_f64(x: f64) -> String {
    // shortest round-trip form for non-fraction floats
    serde_json::to_string(&x).unwrap_or_else(|_| "null".into())
}

/// Renders an [`EvalReport`] as JSON with deterministic field order and
/// six-decimal fractions.
pub fn render_eval_json(r: &EvalReport) -> String {
    let confusion = r
        .confusion
        .iter()
        .map(|row| {
            format!(
                "[{}]",
                row.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
            )
        })
        .collect::<Vec<_>>()
        .join(",");
    let residual = match r.decomposition_max_residual {
        Some(v) => json_f64(v),
        None => "null".into(),
    };
    format!(
        "{{\"clean_accuracy\":{},\"attack_rate\":{},\"confusion\":[{}],\"decomposition_max_residual\":{},\"model_digest\":\"{}\"}}",
        fmt6(r.clean_accuracy),
        fmt6(r.attack_rate),
        confusion,
        residual,
        r.model_digest
    )
}

/// Parses the JSON produced by [`render_eval_json`] back into a report.
pub fn parse_eval_json(json: &str) -> Result<EvalReport, EvalError> {
    let v: serde_json::Value =
        serde_json::from_str(json).map_err(|e| EvalError::Parse(e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| EvalError::Parse("not an object".into()))?;
    let get_f = |key: &str| -> Result<f64, EvalError> {
        obj.get(key)
            .and_then(|x| x.as_f64())
            .ok_or_else(|| EvalError::Parse(format!("missing number field {key}")))
    };
    let confusion = obj
        .get("confusion")
        .and_then(|c| c.as_array())
        .ok_or_else(|| EvalError::Parse("missing confusion".into()))?
        .iter()
        .map(|row| {
            row.as_array()
                .map(|r| r.iter().filter_map(|x| x.as_u64()).collect::<Vec<u64>>())
                .ok_or_else(|| EvalError::Parse("bad confusion row".into()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let residual = match obj.get("decomposition_max_residual") {
        Some(serde_json::Value::Null) | None => None,
        Some(x) => Some(
            x.as_f64()
                .ok_or_else(|| EvalError::Parse("bad residual".into()))?,
        ),
    };
    Ok(EvalReport {
        clean_accuracy: get_f("clean_accuracy")?,
        attack_rate: get_f("attack_rate")?,
        confusion,
        decomposition_max_residual: residual,
        model_digest: obj
            .get("model_digest")
            .and_then(|x| x.as_str())
            .ok_or_else(|| EvalError::Parse("missing model_digest".into()))?
            .to_string(),
    })
}

/// Renders a [`MultiEvalReport`] as JSON (deterministic order, six-decimal
/// fractions).
pub fn render_multi_json(r: &MultiEvalReport) -> String {
    let sep = &r.subnet_separation;
    let instances = r
        .instances
        .iter()
        .map(|inst| {
            format!(
                "{{\"instance\":{},\"seed\":{},\"pre\":{},\"post\":{}}}",
                inst.instance,
                inst.seed,
                render_eval_json(&inst.pre),
                render_eval_json(&inst.post)
            )
        })
        .collect::<Vec<_>>()
        .join(",");
    format!(
        "{{\"subnet_separation\":{{\"mean_clean\":{},\"max_clean\":{},\"mean_trigger\":{},\"min_trigger\":{},\"separation_margin\":{}}},\"instances\":[{}]}}",
        json_f64(sep.mean_clean),
        json_f64(sep.max_clean),
        json_f64(sep.mean_trigger),
        json_f64(sep.min_trigger),
        json_f64(sep.separation_margin),
        instances
    )
}

/// CSV for a single report: a header plus one row.
pub fn render_eval_csv(r: &EvalReport) -> String {
    let residual = match r.decomposition_max_residual {
        Some(v) => json_f64(v),
        None => String::new(),
    };
    format!(
        "clean_accuracy,attack_rate,decomposition_max_residual,model_digest\n{},{},{},{}\n",
        fmt6(r.clean_accuracy),
        fmt6(r.attack_rate),
        residual,
        r.model_digest
    )
}

/// CSV for a multi-instance report: a header plus one row per instance.
pub fn render_multi_csv(r: &MultiEvalReport) -> String {
    let mut out = String::from(
        "instance,seed,pre_clean_accuracy,pre_attack_rate,post_clean_accuracy,post_attack_rate,post_decomposition_max_residual,post_model_digest\n",
    );
    for inst in &r.instances {
        let residual = match inst.post.decomposition_max_residual {
            Some(v) => json_f64(v),
            None => String::new(),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            inst.instance,
            inst.seed,
            fmt6(inst.pre.clean_accuracy),
            fmt6(inst.pre.attack_rate),
            fmt6(inst.post.clean_accuracy),
            fmt6(inst.post.attack_rate),
            residual,
            inst.post.model_digest
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Writes a single report to a file in the chosen format.
pub fn emit_report(r: &EvalReport, path: &Path, format: ReportFormat) -> Result<(), EvalError> {
    let body = match format {
        ReportFormat::Json => render_eval_json(r),
        ReportFormat::Csv => render_eval_csv(r),
    };
    let mut f = std::fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

/// Writes a multi-instance report to a file in the chosen format.
pub fn emit_multi_report(
    r: &MultiEvalReport,
    path: &Path,
    format: ReportFormat,
) -> Result<(), EvalError> {
    let body = match format {
        ReportFormat::Json => render_multi_json(r),
        ReportFormat::Csv => render_multi_csv(r),
    };
    let mut f = std::fs::File::create(path)?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_model, parametric_info, LayerSpec};
    use crate::subnet::SeparationStats;
    use crate::tensor::Tensor;

    fn tiny_setup() -> (ArchitectureSpec, DatasetSplit, DatasetSplit, TriggerSpec) {
        let arch = ArchitectureSpec::tiny_toy();
        let cfg = SyntheticConfig {
            num_classes: 4,
            per_class: 20,
            image_shape: (1, 8, 8),
            seed: 3,
            noise_sigma: 0.05,
        };
        let (train, test) = generate_synthetic(&cfg).unwrap();
        let trig = TriggerSpec::checkerboard(1, 4, (3, 3));
        (arch, train, test, trig)
    }

    /// A model whose logits are a constant vector (zero weights, classifier
    /// bias = the vector).
    fn constant_logit_model(arch: &ArchitectureSpec, logits: &[f32]) -> ModelWeights {
        let infos = parametric_info(arch).unwrap();
        let mut pairs: Vec<(Tensor, Tensor)> = infos
            .iter()
            .map(|i| {
                (
                    Tensor::zeros(i.weight_shape.clone()),
                    Tensor::zeros(vec![i.out_size]),
                )
            })
            .collect();
        let last = pairs.len() - 1;
        pairs[last].1 = Tensor::new(vec![logits.len()], logits.to_vec()).unwrap();
        ModelWeights::from_pairs(pairs)
    }

    #[test]
    fn perfect_and_constant_models_score_as_expected() {
        let (arch, _, test, _) = tiny_setup();

        // constant logits favoring class 2: accuracy = share of class 2
        let model2 = constant_logit_model(&arch, &[0.0, 0.0, 1.0, 0.0]);
        let acc = clean_accuracy(&arch, &model2, &test).unwrap();
        let share =
            test.labels().iter().filter(|&&l| l == 2).count() as f64 / test.len() as f64;
        assert_eq!(acc, round6(share));

        // all-equal logits: ties resolve to class 0
        let flat = constant_logit_model(&arch, &[0.0; 4]);
        let acc0 = clean_accuracy(&arch, &flat, &test).unwrap();
        let share0 =
            test.labels().iter().filter(|&&l| l == 0).count() as f64 / test.len() as f64;
        assert_eq!(acc0, round6(share0));
    }

    #[test]
    fn attack_rate_of_a_constant_target_model_is_one() {
        let (arch, _, test, trig) = tiny_setup();
        let model = constant_logit_model(&arch, &[0.0, 0.0, 0.0, 5.0]);
        assert_eq!(attack_rate(&arch, &model, &test, &trig, 3).unwrap(), 1.0);
        // and zero for a never-target model
        let other = constant_logit_model(&arch, &[5.0, 0.0, 0.0, 0.0]);
        assert_eq!(attack_rate(&arch, &other, &test, &trig, 3).unwrap(), 0.0);
    }

    #[test]
    fn no_non_target_samples_is_an_error() {
        let arch = ArchitectureSpec::tiny_toy();
        let cfg = SyntheticConfig {
            num_classes: 1,
            per_class: 4,
            image_shape: (1, 8, 8),
            seed: 1,
            noise_sigma: 0.0,
        };
        let (_, test) = generate_synthetic(&cfg).unwrap();
        let trig = TriggerSpec::checkerboard(1, 2, (0, 0));
        let model = constant_logit_model(&arch, &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            attack_rate(&arch, &model, &test, &trig, 0),
            Err(EvalError::NoNonTargetSamples)
        ));
    }

    #[test]
    fn confusion_counts_sum_to_the_test_size() {
        let (arch, _, test, trig) = tiny_setup();
        let model = init_model(&arch, 4).unwrap();
        let report = evaluate(&arch, &model, &test, &trig, 0, None).unwrap();
        let total: u64 = report.confusion.iter().flatten().sum();
        assert_eq!(total, test.len() as u64);
        assert!(report.decomposition_max_residual.is_none());
        assert_eq!(report.model_digest.len(), 64);
    }

    #[test]
    fn lambda_zero_graft_matches_restricted_attack_rate() {
        let (arch, _, test, trig) = tiny_setup();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let host = init_model(&arch, 5).unwrap();
        let sub_arch = narrow_arch(&arch, &widths).unwrap();
        let subnet = crate::subnet::subnet_init(&sub_arch, 6).unwrap();
        let outcome = graft_pipeline(&arch, &host, &subnet, &widths, 1, 0.0).unwrap();
        let rate_grafted = attack_rate(&arch, &outcome.grafted, &test, &trig, 1).unwrap();
        let rate_restricted = attack_rate(&arch, &outcome.restricted, &test, &trig, 1).unwrap();
        assert_eq!(rate_grafted, rate_restricted);
    }

    #[test]
    fn huge_lambda_drives_attack_rate_to_one() {
        let (arch, _, test, trig) = tiny_setup();
        let widths = SubnetWidths::all_ones(&arch).unwrap();
        let host = init_model(&arch, 7).unwrap();
        let sub_arch = narrow_arch(&arch, &widths).unwrap();
        // bias-only subnet with s(x) = 1 for every input
        let infos = parametric_info(&sub_arch).unwrap();
        let mut pairs: Vec<(Tensor, Tensor)> = infos
            .iter()
            .map(|i| {
                (
                    Tensor::zeros(i.weight_shape.clone()),
                    Tensor::zeros(vec![i.out_size]),
                )
            })
            .collect();
        let last = pairs.len() - 1;
        pairs[last].1 = Tensor::new(vec![1], vec![1.0]).unwrap();
        let subnet = ModelWeights::from_pairs(pairs);

        let outcome = graft_pipeline(&arch, &host, &subnet, &widths, 2, 1e6).unwrap();
        assert_eq!(
            attack_rate(&arch, &outcome.grafted, &test, &trig, 2).unwrap(),
            1.0
        );
    }

    #[test]
    fn report_json_round_trips() {
        let report = EvalReport {
            clean_accuracy: round6(0.973333),
            attack_rate: round6(17.0 / 18.0),
            confusion: vec![vec![5, 1], vec![0, 6]],
            decomposition_max_residual: Some(3.25e-5),
            model_digest: "ab".repeat(32),
        };
        let json = render_eval_json(&report);
        assert!(json.contains("\"clean_accuracy\":0.973333"));
        let back = parse_eval_json(&json).unwrap();
        assert_eq!(back, report);

        // null residual round-trips too
        let pre = EvalReport {
            decomposition_max_residual: None,
            ..report
        };
        assert_eq!(parse_eval_json(&render_eval_json(&pre)).unwrap(), pre);
    }

    #[test]
    fn csv_has_one_row_per_instance() {
        let rep = EvalReport {
            clean_accuracy: 1.0,
            attack_rate: 0.5,
            confusion: vec![vec![1]],
            decomposition_max_residual: None,
            model_digest: "00".repeat(32),
        };
        let multi = MultiEvalReport {
            subnet_separation: SeparationStats {
                mean_clean: 0.1,
                max_clean: 0.2,
                mean_trigger: 90.0,
                min_trigger: 80.0,
                separation_margin: 79.8,
            },
            instances: (0..3)
                .map(|i| InstanceEval {
                    instance: i,
                    seed: i as u64,
                    pre: rep.clone(),
                    post: rep.clone(),
                })
                .collect(),
        };
        let csv = render_multi_csv(&multi);
        assert_eq!(csv.lines().count(), 4); // header + 3 rows
        assert!(csv.lines().nth(1).unwrap().starts_with("0,0,1.000000,0.500000"));
        let single = render_eval_csv(&rep);
        assert_eq!(single.lines().count(), 2);
    }

    #[test]
    fn single_instance_protocol_reduces_to_direct_eval() {
        let arch = ArchitectureSpec::tiny_toy();
        let data_cfg = SyntheticConfig {
            num_classes: 4,
            per_class: 15,
            image_shape: (1, 8, 8),
            seed: 40,
            noise_sigma: 0.05,
        };
        let trig = TriggerSpec::checkerboard(1, 4, (3, 3));
        let cfg = MultiEvalConfig {
            arch: arch.clone(),
            widths: SubnetWidths::all_ones(&arch).unwrap(),
            trigger: trig.clone(),
            target_class: 0,
            lambda: 1.0,
            data: data_cfg.clone(),
            host: TrainConfig {
                epochs: 3,
                batch_size: 8,
                lr: 0.03,
                momentum: 0.9,
                seed: 0,
            },
            subnet: SubnetTrainConfig {
                epochs: 3,
                trigger_target: 5.0,
                lr: 1e-3,
                ..Default::default()
            },
            seeds: vec![42],
        };
        let multi = multi_instance_eval(&cfg).unwrap();
        assert_eq!(multi.instances.len(), 1);

        // rebuild the same host directly and compare the pre report
        let (train, test) = generate_synthetic(&data_cfg).unwrap();
        let (host, _) = train_host(
            &arch,
            &train,
            &TrainConfig {
                seed: 42,
                epochs: 3,
                batch_size: 8,
                lr: 0.03,
                momentum: 0.9,
            },
        )
        .unwrap();
        let direct = evaluate(&arch, &host, &test, &trig, 0, None).unwrap();
        assert_eq!(multi.instances[0].pre, direct);
    }

    #[test]
    fn multi_instance_eval_is_deterministic() {
        let arch = ArchitectureSpec::tiny_toy();
        let cfg = MultiEvalConfig {
            arch: arch.clone(),
            widths: SubnetWidths::all_ones(&arch).unwrap(),
            trigger: TriggerSpec::checkerboard(1, 4, (3, 3)),
            target_class: 1,
            lambda: 1.0,
            data: SyntheticConfig {
                num_classes: 4,
                per_class: 10,
                image_shape: (1, 8, 8),
                seed: 50,
                noise_sigma: 0.05,
            },
            host: TrainConfig {
                epochs: 2,
                batch_size: 8,
                lr: 0.03,
                momentum: 0.9,
                seed: 0,
            },
            subnet: SubnetTrainConfig {
                epochs: 2,
                trigger_target: 5.0,
                lr: 1e-3,
                ..Default::default()
            },
            seeds: vec![1, 2],
        };
        let a = multi_instance_eval(&cfg).unwrap();
        let b = multi_instance_eval(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(render_multi_json(&a), render_multi_json(&b));
    }
}
