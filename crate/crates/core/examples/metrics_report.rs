//! Train a model directly with the learner API and print classification and
//! regression reports.
//!
//!     cargo run --example metrics_report

use fedfarm::data::{synth_blobs, synth_linear};
use fedfarm::learner::{evaluate, init_model, local_train, Evaluation, MlpSpec, OptimizerConfig, Task, TrainSchedule};
use fedfarm::metrics::{classification_report, regression_report};

fn main() -> fedfarm::Result<()> {
    let data = synth_blobs(1, 900, 3, 3, 2.0)?;
    let (train, test) = data.split_rows(0.3, 1);
    let spec = MlpSpec::new(3, vec![12], 3, Task::Classification);
    let start = init_model(&spec, 1);
    let schedule = TrainSchedule { epochs: 20, batch_size: 32 };
    let fit = local_train(&start, &spec, &data, &train, schedule, &OptimizerConfig::adam(0.01), 1)?;
    println!("training loss by epoch: {:.3?}", fit.loss_trace);

    if let Evaluation::Classification(cm) = evaluate(&fit.new_params, &spec, &data, &test)?.outcome {
        println!("confusion matrix: {:?}", cm.counts());
        let report = classification_report(&cm)?;
        for (c, m) in report.per_class.iter().enumerate() {
            println!(
                "class {c}: precision {:.3} recall {:.3} f1 {:.3} support {}",
                m.precision, m.recall, m.f1, m.support
            );
        }
        println!("accuracy {:.3}, macro f1 {:.3}", report.accuracy, report.macro_avg.f1);
    }

    let data = synth_linear(2, 600, 5, 0.1)?;
    let (train, test) = data.split_rows(0.3, 2);
    let spec = MlpSpec::new(5, vec![], 1, Task::Regression);
    let schedule = TrainSchedule { epochs: 30, batch_size: 16 };
    let fit = local_train(&init_model(&spec, 2), &spec, &data, &train, schedule, &OptimizerConfig::adam(0.05), 2)?;
    if let Evaluation::Regression { predictions, truth } = evaluate(&fit.new_params, &spec, &data, &test)?.outcome {
        let r = regression_report(&predictions, &truth)?;
        println!("\nregression: mse {:.4} rmse {:.4} mae {:.4} r {:?}", r.mse, r.rmse, r.mae, r.r);
    }
    Ok(())
}
