//! Prints loop-closure discrepancies of every variant on both presets.
//!
//! cargo run --release --example compare_presets -- [seeds]

use elevgraph::eval::compare_variants;
use elevgraph::lanes::{LaneConfig, Variant};
use elevgraph::sim::Preset;
use elevgraph::SolverSettings;

fn main() -> elevgraph::Result<()> {
    let n: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let seeds: Vec<u64> = (1..=n).collect();
    let configs: Vec<LaneConfig> = Variant::ALL.iter().map(|v| LaneConfig::for_variant(*v)).collect();
    for preset in Preset::ALL {
        let report = compare_variants(
            preset.name(),
            &preset.scenario(),
            &preset.noise(),
            &configs,
            &seeds,
            &SolverSettings::default(),
        )?;
        for cell in &report.cells {
            let stats = cell.stats.as_ref();
            println!(
                "{:9} {:9} seed {:2}  dz {:>8.4}  dxy {:>8.4}  rmse_z {:>8.4}  iters {:>3}  {:.2}s {}",
                preset.name(),
                cell.variant,
                cell.seed,
                cell.loop_closure.delta_z.unwrap_or(f64::NAN),
                cell.loop_closure.delta_xy.unwrap_or(f64::NAN),
                cell.error.as_ref().map_or(f64::NAN, |e| e.rmse_z),
                stats.map_or(0, |s| s.iterations),
                stats.map_or(0.0, |s| s.wall_time.as_secs_f64()),
                cell.failure.as_deref().unwrap_or(""),
            );
        }
        for agg in &report.aggregates {
            println!(
                "{:9} {:9} mean     dz {:>8.4} ± {:.4}  dxy {:>8.4} ± {:.4}",
                preset.name(),
                agg.variant,
                agg.mean.delta_z,
                agg.std.delta_z,
                agg.mean.delta_xy,
                agg.std.delta_xy
            );
        }
    }
    Ok(())
}
