//! Trains all three forward models on the same small world and scores them
//! on a held-out split, using the run-directory pipeline that the `armflow`
//! binary drives. Everything lands under `out/example-compare/`: datasets,
//! checkpoints, metrics.csv, and the final report.
//!
//! ```text
//! cargo run --example compare_models
//! ```

use armflow::config::RunConfig;
use armflow::pipeline;
use armflow::Result;

fn main() -> Result<()> {
    let mut cfg = RunConfig::default();
    cfg.out = "out".into();
    cfg.run = "example-compare".into();
    cfg.image_size = 16;
    cfg.dof = 2;
    cfg.link_lengths = vec![0.22, 0.18];
    cfg.link_widths = vec![0.09, 0.07];
    cfg.train_trajectories = 40;
    cfg.steps_per_trajectory = 6;
    cfg.n_reference = 150;
    cfg.test_trajectories = 4;
    cfg.test_steps = 10;
    cfg.k = 2;
    cfg.epochs = 10;
    cfg.batch_size = 16;
    cfg.validate()?;

    println!("{}", pipeline::cmd_gen_data(&cfg)?);
    println!("{}", pipeline::cmd_train_forward(&cfg)?);
    println!("{}", pipeline::cmd_train_deconv(&cfg)?);

    // Score the flow model at two neighbour counts, plus both baselines.
    for k in [1, 2] {
        let mut c = cfg.clone();
        c.k = k;
        println!("{}", pipeline::cmd_eval(&c, "knnflow")?);
    }
    println!("{}", pipeline::cmd_eval(&cfg, "deconv")?);
    println!("{}", pipeline::cmd_eval(&cfg, "nn")?);

    println!();
    print!("{}", pipeline::cmd_report(&cfg)?);
    Ok(())
}
