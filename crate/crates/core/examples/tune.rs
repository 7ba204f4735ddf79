//! Hyperparameter scan scaffold (temporary).

use sra_core::data::{generate_synthetic, SyntheticConfig, TriggerSpec};
use sra_core::eval::clean_accuracy;
use sra_core::net::{narrow_arch, train_host, ArchitectureSpec, SubnetWidths, TrainConfig};
use sra_core::subnet::{train_subnet, SubnetTrainConfig};
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "subnet".into());
    let arch = ArchitectureSpec::vgg_toy();
    let data_cfg = SyntheticConfig::default();
    let (train, test) = generate_synthetic(&data_cfg).unwrap();
    let trig = TriggerSpec::default_for(data_cfg.image_shape).unwrap();

    if which == "host" {
        for (lr, epochs) in [(0.01f32, 10usize), (0.02, 10), (0.005, 15), (0.01, 15)] {
            let t = Instant::now();
            let cfg = TrainConfig {
                epochs,
                batch_size: 32,
                lr,
                momentum: 0.9,
                seed: 0,
            };
            match train_host(&arch, &train, &cfg) {
                Ok((host, report)) => {
                    let acc = clean_accuracy(&arch, &host, &test).unwrap();
                    println!(
                        "host lr={lr} epochs={epochs}: train acc {:.3}, test acc {:.3}  [{:?}]",
                        report.epochs.last().unwrap().accuracy,
                        acc,
                        t.elapsed()
                    );
                }
                Err(e) => println!("host lr={lr} epochs={epochs}: ERROR {e}"),
            }
        }
        return;
    }

    let widths = SubnetWidths::all_ones(&arch).unwrap();
    let sub_arch = narrow_arch(&arch, &widths).unwrap();
    for (lr, epochs, momentum) in [
        (1e-3f32, 80usize, 0.9f32),
        (3e-4, 120, 0.9),
        (1e-4, 150, 0.9),
        (1e-3, 80, 0.0),
        (3e-3, 80, 0.0),
    ] {
        let t = Instant::now();
        let cfg = SubnetTrainConfig {
            epochs,
            lr,
            momentum,
            ..Default::default()
        };
        match train_subnet(&sub_arch, &train, &trig, &cfg) {
            Ok((_, report)) => {
                let s = report.separation;
                println!(
                    "subnet lr={lr} epochs={epochs} m={momentum}: margin {:.2} (clean mean {:.2} max {:.2}; trig mean {:.2} min {:.2}); last loss {:.2}  [{:?}]",
                    s.separation_margin,
                    s.mean_clean,
                    s.max_clean,
                    s.mean_trigger,
                    s.min_trigger,
                    report.per_epoch_loss.last().unwrap(),
                    t.elapsed()
                );
            }
            Err(e) => println!("subnet lr={lr} epochs={epochs} m={momentum}: ERROR {e}"),
        }
    }
}
