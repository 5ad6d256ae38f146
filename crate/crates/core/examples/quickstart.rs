//! Train a 2-1-1-1 student, split it into a 2-21-21-1 region point, then
//! walk the last split into a saddle and report the escape.

use landscape::certify::{region_demo, RegionConfig};

fn main() -> landscape::Result<()> {
    let cfg = RegionConfig { probe_k: 256, ..RegionConfig::default() };
    let ev = region_demo(&cfg)?;
    println!("student loss {:.6} after {} attempt(s)", ev.train.final_loss, ev.attempts);
    for step in &ev.steps {
        println!("split layer {} neuron {} at λ={}: {:?}", step.plan.layer, step.plan.source, step.plan.lambda, step.verdict.kind);
    }
    println!("region {:?} loss {:.6}", ev.region.dims(), ev.region_loss);
    println!("probe at region point: min Δloss {:.3e} over {} directions", ev.min_probe.global_min, ev.min_probe.k);
    println!("λ walk to {}: max |Δloss| {:.3e}", cfg.lambda_saddle, ev.walk.max_deviation);
    println!("saddle verdict {:?}", ev.saddle_verdict.kind);
    println!(
        "escape: curvature {:.3e}, line loss {:.6}, after descent {:.6}",
        ev.escape.effective_curvature, ev.escape.line_loss, ev.escape.final_loss
    );
    Ok(())
}
