//! Runs the full evaluation matrix on a small synthetic corpus and prints the
//! comparison table. Optional argument: path to an experiment config JSON.

use std::time::Instant;

use jobmatch::evalkit::render_table_text;
use jobmatch::pipeline::{run_pipeline, ExperimentConfig};

fn main() -> jobmatch::Result<()> {
    let config = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::desk_scale(0),
    };
    let start = Instant::now();
    let out = run_pipeline(&config)?;
    print!("{}", render_table_text(&out.outcome));
    for t in &out.outcome.training {
        println!("{:?}: losses {:?} val auc {:?}", t.objective, t.epoch_losses, t.validation_roc_auc);
    }
    for n in &out.outcome.notes {
        println!("note: {n}");
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
