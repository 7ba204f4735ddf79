//! Runs the full pipeline once at vgg-toy scale and prints each stage's
//! numbers: dataset, subnet training separation, host training accuracy,
//! and pre/post graft metrics.

use sra_core::data::{generate_synthetic, SyntheticConfig, TriggerSpec};
use sra_core::eval::{attack_rate, clean_accuracy, evaluate, DecompositionCtx};
use sra_core::graft::{apply_graft, plan_graft, restrict_host};
use sra_core::net::{narrow_arch, train_host, ArchitectureSpec, SubnetWidths, TrainConfig};
use sra_core::subnet::{train_subnet, SubnetTrainConfig};
use std::time::Instant;

fn main() {
    let t0 = Instant::now();
    let arch = ArchitectureSpec::vgg_toy();
    let data_cfg = SyntheticConfig::default();
    let (train, test) = generate_synthetic(&data_cfg).unwrap();
    let trig = TriggerSpec::default_for(data_cfg.image_shape).unwrap();
    println!(
        "[{:6.1?}] data: {} train / {} test",
        t0.elapsed(),
        train.len(),
        test.len()
    );

    let widths = SubnetWidths::all_ones(&arch).unwrap();
    let sub_arch = narrow_arch(&arch, &widths).unwrap();
    let sub_cfg = SubnetTrainConfig::default();
    let (subnet, sub_report) = train_subnet(&sub_arch, &train, &trig, &sub_cfg).unwrap();
    println!(
        "[{:6.1?}] subnet: separation {:?}",
        t0.elapsed(),
        sub_report.separation
    );
    println!(
        "         loss first/mid/last: {:.2} / {:.2} / {:.2}",
        sub_report.per_epoch_loss.first().unwrap(),
        sub_report.per_epoch_loss[sub_report.per_epoch_loss.len() / 2],
        sub_report.per_epoch_loss.last().unwrap()
    );

    let target = 0usize;
    let lambda = 1.0f32;
    let plan = plan_graft(&arch, &widths, target, lambda).unwrap();
    println!(
        "[{:6.1?}] plan: {} scalars in {} ranges",
        t0.elapsed(),
        plan.touched_scalar_count,
        plan.byte_ranges.len()
    );

    for seed in 0..2u64 {
        let host_cfg = TrainConfig { seed, ..Default::default() };
        let (host, host_report) = train_host(&arch, &train, &host_cfg).unwrap();
        let host_acc = clean_accuracy(&arch, &host, &test).unwrap();
        println!(
            "[{:6.1?}] host {}: final train acc {:.3}, test acc {:.3}",
            t0.elapsed(),
            seed,
            host_report.epochs.last().unwrap().accuracy,
            host_acc
        );

        let grafted = apply_graft(&host, &subnet, &plan).unwrap();
        let restricted = restrict_host(&host, &plan).unwrap();
        let pre_rate = attack_rate(&arch, &host, &test, &trig, target).unwrap();
        let ctx = DecompositionCtx {
            subnet_arch: &sub_arch,
            subnet: &subnet,
            restricted: &restricted,
            lambda,
            target_class: target,
        };
        let post = evaluate(&arch, &grafted, &test, &trig, target, Some(&ctx)).unwrap();
        println!(
            "         pre rate {:.3} -> post rate {:.3}; clean {:.3} -> {:.3}; residual {:.2e}",
            pre_rate,
            post.attack_rate,
            host_acc,
            post.clean_accuracy,
            post.decomposition_max_residual.unwrap()
        );
    }
    println!("[{:6.1?}] done", t0.elapsed());
}
