//! Desk-scale reference run. Prints the quantities behind the acceptance
//! checks and, with `--write PATH`, freezes the pinned values as JSON.
//!
//! cargo run --release -p wealthsim-core --example pilot -- --write crates/core/tests/fixtures/pilot.json

use std::time::Instant;

use wealthsim::harness::{named_scenario, run_experiment, run_sweep, ExperimentConfig, SweepGrid};

fn main() -> wealthsim::Result<()> {
    let write = std::env::args().skip_while(|a| a != "--write").nth(1);
    let names = [
        "compound",
        "compound_gamma",
        "simple",
        "simple_constant",
        "decreasing",
        "decreasing_net",
        "two_factor",
        "two_factor_reinvest",
        "prop_ps",
        "prop_welfare",
        "prog_ps",
        "prog_welfare",
    ];
    let cfg = ExperimentConfig::desk(names.iter().map(|n| named_scenario(n).unwrap()).collect());
    let started = Instant::now();
    let results = run_experiment(&cfg)?;
    eprintln!("ensemble: {:.1?}", started.elapsed());
    for e in &results {
        let last = e.last();
        println!(
            "{:<22} gini {:.5} ± {:.5}  mobility {:.5}  growth {:?}  tax {:.5}",
            e.scenario.id,
            last.gini.mean,
            last.gini.std,
            last.mobility.mean,
            e.time_mean_growth.map(|g| (g.mean, g.std)),
            last.mean_tax_rate.mean
        );
    }
    let by_id = |id: &str| results.iter().find(|e| e.scenario.id == id).unwrap();

    let (prop_ps, prop_w) = (by_id("prop_ps"), by_id("prop_welfare"));
    let mut burn_in = 0;
    for prog in [by_id("prog_ps"), by_id("prog_welfare")] {
        for (k, row) in prog.rows.iter().enumerate() {
            let rate = row.mean_tax_rate.mean;
            let floor = prop_ps.rows[k]
                .mean_tax_rate
                .mean
                .min(prop_w.rows[k].mean_tax_rate.mean);
            if !(rate < 0.05 && rate < floor) {
                burn_in = burn_in.max(row.t);
            }
        }
    }
    println!("progressive burn-in: last violating period {burn_in}");

    let sweep_cfg = ExperimentConfig {
        sweep: Some(SweepGrid {
            mu: vec![0.02, 0.04, 0.06, 0.08],
            sigma: vec![0.02, 0.04, 0.06, 0.08],
        }),
        ..ExperimentConfig::desk(vec![named_scenario("compound").unwrap()])
    };
    let started = Instant::now();
    let sweep = run_sweep(&sweep_cfg)?;
    eprintln!("sweep: {:.1?}", started.elapsed());
    for c in &sweep.cells {
        println!(
            "mu {:.2} sigma {:.2}: gini {:.5} mobility {:.5} growth {:?}",
            c.mu,
            c.sigma,
            c.gini_final.mean,
            c.mobility_final.mean,
            c.time_mean_growth.map(|g| (g.mean, g.std))
        );
    }

    if let Some(path) = write {
        let pinned = serde_json::json!({
            "config": cfg,
            "baseline_final_gini": by_id("compound").last().gini.mean,
            "progressive_burn_in": burn_in.div_ceil(100).max(1) * 100,
        });
        std::fs::write(&path, serde_json::to_string_pretty(&pinned).unwrap() + "\n")
            .expect("fixture path is writable");
        eprintln!("wrote {path}");
    }
    Ok(())
}
